//! Finite-difference covariant calculus on product grids.
//!
//! Differences are second-order centered, periodic in the base and one-sided
//! second order on the faces of the fiber box. With these stencils the
//! codifferentials are exact discrete adjoints of the covariant derivative
//! for fields supported away from the box faces.

use crate::grid::{form_components, pair_slot, two_form_get, Field, GaugeField, Metric, ProductGrid, ScalarField, TwoFormField};
use crate::lie::LieValue;
use crate::{Error, Result};
use rayon::prelude::*;

/// Derivative along axis `mu` at `p` of the grid function `get`.
#[inline]
pub fn diff_axis(grid: &ProductGrid, p: usize, mu: usize, get: impl Fn(usize) -> LieValue) -> LieValue {
    let h = grid.spacing(mu);
    match (grid.shift(p, mu, -1), grid.shift(p, mu, 1)) {
        (Some(m), Some(q)) => (get(q) - get(m)) * (0.5 / h),
        (None, Some(q)) => {
            let q2 = grid.shift(p, mu, 2).expect("fiber axis too short");
            (get(p) * -3.0 + get(q) * 4.0 - get(q2)) * (0.5 / h)
        }
        (Some(m), None) => {
            let m2 = grid.shift(p, mu, -2).expect("fiber axis too short");
            (get(p) * 3.0 - get(m) * 4.0 + get(m2)) * (0.5 / h)
        }
        (None, None) => LieValue::ZERO,
    }
}

fn check1(grid: &ProductGrid, f: &GaugeField) -> Result<()> {
    f.check_grid(grid)
}

/// `(D f)_μ = ∂_μ f + [A_μ, f]`.
pub fn cov_gradient(grid: &ProductGrid, conn: &GaugeField, f: &ScalarField) -> Result<GaugeField> {
    check1(grid, conn)?;
    f.check_grid(grid)?;
    let d = grid.dim();
    Ok(GaugeField::from_fn(grid, |p, out| {
        let fp = f.get(p, 0);
        for mu in 0..d {
            out[mu] = diff_axis(grid, p, mu, |q| f.get(q, 0)) + conn.get(p, mu).bracket(fp);
        }
    }))
}

/// `(D a)_{μν} = ∂_μ a_ν − ∂_ν a_μ + [A_μ, a_ν] − [A_ν, a_μ]`.
pub fn cov_derivative(grid: &ProductGrid, conn: &GaugeField, a: &GaugeField) -> Result<TwoFormField> {
    check1(grid, conn)?;
    check1(grid, a)?;
    let d = grid.dim();
    Ok(TwoFormField::from_fn(grid, |p, out| {
        let ap = a.at(p);
        let cp = conn.at(p);
        for mu in 0..d {
            for nu in mu + 1..d {
                let v = diff_axis(grid, p, mu, |q| a.get(q, nu)) - diff_axis(grid, p, nu, |q| a.get(q, mu))
                    + cp[mu].bracket(ap[nu])
                    - cp[nu].bracket(ap[mu]);
                out[pair_slot(d, mu, nu)] = v;
            }
        }
    }))
}

/// `D*a = −(1/√g)(∂_μ(√g a^μ) + √g [A_μ, a^μ])`.
pub fn gauge_codifferential(grid: &ProductGrid, conn: &GaugeField, metric: &Metric, a: &GaugeField) -> Result<ScalarField> {
    check1(grid, conn)?;
    check1(grid, a)?;
    let d = grid.dim();
    let dens = GaugeField::from_fn(grid, |p, out| {
        let up = metric.raise1(p, a.at(p), d);
        let s = metric.sqrt_det(p);
        for mu in 0..d {
            out[mu] = up[mu] * s;
        }
    });
    Ok(ScalarField::from_fn(grid, |p, out| {
        let mut acc = LieValue::ZERO;
        for mu in 0..d {
            acc += diff_axis(grid, p, mu, |q| dens.get(q, mu)) + conn.get(p, mu).bracket(dens.get(p, mu));
        }
        out[0] = acc * (-1.0 / metric.sqrt_det(p));
    }))
}

/// `(D*ω)_λ = −g_{λν}(1/√g)(∂_μ(√g ω^{μν}) + √g [A_μ, ω^{μν}])`.
pub fn cov_codifferential(grid: &ProductGrid, conn: &GaugeField, metric: &Metric, w: &TwoFormField) -> Result<GaugeField> {
    check1(grid, conn)?;
    w.check_grid(grid)?;
    let d = grid.dim();
    let dens = TwoFormField::from_fn(grid, |p, out| {
        let up = metric.raise2(p, w.at(p), d);
        let s = metric.sqrt_det(p);
        for (o, u) in out.iter_mut().zip(up) {
            *o = u * s;
        }
    });
    Ok(GaugeField::from_fn(grid, |p, out| {
        let mut up = vec![LieValue::ZERO; d];
        for nu in 0..d {
            let mut acc = LieValue::ZERO;
            for mu in 0..d {
                if mu == nu {
                    continue;
                }
                let (lo, hi, sg) = if mu < nu { (mu, nu, 1.0) } else { (nu, mu, -1.0) };
                let slot = pair_slot(d, lo, hi);
                acc += (diff_axis(grid, p, mu, |q| dens.get(q, slot)) + conn.get(p, mu).bracket(dens.get(p, slot))) * sg;
            }
            up[nu] = acc * (-1.0 / metric.sqrt_det(p));
        }
        let down = metric.lower1(p, &up, d);
        out.copy_from_slice(&down);
    }))
}

/// Curvature `F_{μν} = ∂_μ A_ν − ∂_ν A_μ + [A_μ, A_ν]` of a discrete connection.
pub fn curvature(grid: &ProductGrid, conn: &GaugeField) -> Result<TwoFormField> {
    check1(grid, conn)?;
    let d = grid.dim();
    Ok(TwoFormField::from_fn(grid, |p, out| {
        let cp = conn.at(p);
        for mu in 0..d {
            for nu in mu + 1..d {
                out[pair_slot(d, mu, nu)] = diff_axis(grid, p, mu, |q| conn.get(q, nu))
                    - diff_axis(grid, p, nu, |q| conn.get(q, mu))
                    + cp[mu].bracket(cp[nu]);
            }
        }
    }))
}

/// `[a ∧ a]_{μν} = [a_μ, a_ν]`.
pub fn self_bracket(a: &GaugeField) -> TwoFormField {
    let d = a.dim;
    let nc = form_components(d, 2);
    let mut out = TwoFormField { dim: d, npts: a.npts, data: vec![LieValue::ZERO; a.npts * nc] };
    out.data.par_chunks_mut(nc).enumerate().for_each(|(p, o)| {
        let ap = a.at(p);
        for mu in 0..d {
            for nu in mu + 1..d {
                o[pair_slot(d, mu, nu)] = ap[mu].bracket(ap[nu]);
            }
        }
    });
    out
}

/// `c(a, ω)_λ = −g_{λν} [a_μ, ω^{μν}]`, the variation of the codifferential
/// in the connection.
pub fn contract_bracket(metric: &Metric, a: &GaugeField, w: &TwoFormField) -> Result<GaugeField> {
    if a.dim != w.dim || a.npts != w.npts {
        return Err(Error::Shape("1-form and 2-form differ in shape".into()));
    }
    let d = a.dim;
    let mut out = GaugeField { dim: d, npts: a.npts, data: vec![LieValue::ZERO; a.npts * d] };
    out.data.par_chunks_mut(d).enumerate().for_each(|(p, o)| {
        let up = metric.raise2(p, w.at(p), d);
        let ap = a.at(p);
        let mut v = vec![LieValue::ZERO; d];
        for nu in 0..d {
            let mut acc = LieValue::ZERO;
            for mu in 0..d {
                if mu != nu {
                    acc += ap[mu].bracket(two_form_get(&up, d, mu, nu));
                }
            }
            v[nu] = -acc;
        }
        o.copy_from_slice(&metric.lower1(p, &v, d));
    });
    Ok(out)
}

/// `[a, f]_μ = [a_μ, f]`.
pub fn bracket_with_scalar(a: &GaugeField, f: &ScalarField) -> GaugeField {
    let d = a.dim;
    let mut out = a.clone();
    out.data.par_chunks_mut(d).enumerate().for_each(|(p, o)| {
        let fp = f.data[p];
        for v in o.iter_mut() {
            *v = v.bracket(fp);
        }
    });
    out
}

/// Assembly route for the linearized operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assembly {
    /// `D*D a + D D* a + c(a, F)`.
    Direct,
    /// `−Σ_μ D_μ D_μ a + 2 Σ_μ [F_{μν}, a_μ]`; flat metric only.
    Weitzenbock,
}

/// Linearized Yang-Mills operator in Coulomb gauge, `𝕃_A a`.
pub fn linearized_op(
    grid: &ProductGrid,
    conn: &GaugeField,
    curv: &TwoFormField,
    metric: &Metric,
    a: &GaugeField,
    mode: Assembly,
) -> Result<GaugeField> {
    check1(grid, a)?;
    curv.check_grid(grid)?;
    match mode {
        Assembly::Direct => {
            let da = cov_derivative(grid, conn, a)?;
            let dsd = cov_codifferential(grid, conn, metric, &da)?;
            let ds = gauge_codifferential(grid, conn, metric, a)?;
            let dds = cov_gradient(grid, conn, &ds)?;
            let c = contract_bracket(metric, a, curv)?;
            Ok(dsd.add(&dds).add(&c))
        }
        Assembly::Weitzenbock => {
            if !metric.is_flat() {
                return Err(Error::InvalidParameter("Weitzenbock assembly requires the flat metric".into()));
            }
            let d = grid.dim();
            // first covariant derivatives, one field per direction
            let firsts: Vec<GaugeField> = (0..d)
                .map(|mu| {
                    GaugeField::from_fn(grid, |p, out| {
                        let c = conn.get(p, mu);
                        for nu in 0..d {
                            out[nu] = diff_axis(grid, p, mu, |q| a.get(q, nu)) + c.bracket(a.get(p, nu));
                        }
                    })
                })
                .collect();
            Ok(GaugeField::from_fn(grid, |p, out| {
                let ap = a.at(p);
                let fp = curv.at(p);
                for nu in 0..d {
                    let mut acc = LieValue::ZERO;
                    for (mu, fm) in firsts.iter().enumerate() {
                        let c = conn.get(p, mu);
                        acc -= diff_axis(grid, p, mu, |q| fm.get(q, nu)) + c.bracket(fm.get(p, nu));
                        if mu != nu {
                            acc += two_form_get(fp, d, mu, nu).bracket(ap[mu]) * 2.0;
                        }
                    }
                    out[nu] = acc;
                }
            }))
        }
    }
}

/// Inner product `Σ_p √g g^{μν} ⟨a_μ, b_ν⟩` (no cell volume).
pub fn inner1(metric: &Metric, a: &GaugeField, b: &GaugeField) -> f64 {
    let d = a.dim;
    crate::grid::ordered_sum(a.npts, |p| {
        let up = metric.raise1(p, a.at(p), d);
        let bp = b.at(p);
        metric.sqrt_det(p) * (0..d).map(|k| up[k].inner(bp[k])).sum::<f64>()
    })
}

/// Inner product `Σ_p √g Σ_{μ<ν} ⟨ω_{μν}, η^{μν}⟩` (no cell volume).
pub fn inner2(metric: &Metric, w: &TwoFormField, e: &TwoFormField) -> f64 {
    let d = w.dim;
    crate::grid::ordered_sum(w.npts, |p| {
        let up = metric.raise2(p, e.at(p), d);
        let wp = w.at(p);
        metric.sqrt_det(p) * wp.iter().zip(&up).map(|(x, y)| x.inner(*y)).sum::<f64>()
    })
}

/// Inner product of Lie-valued scalars weighted by `√g`.
pub fn inner0(metric: &Metric, f: &ScalarField, g: &ScalarField) -> f64 {
    crate::grid::ordered_sum(f.npts, |p| metric.sqrt_det(p) * f.data[p].inner(g.data[p]))
}

/// Multiplies a field by a smooth bump that vanishes on the outer 10% shell
/// of the fiber box (in the sup norm of the offset from the center).
pub fn taper_fiber<const DEG: usize>(grid: &ProductGrid, f: &Field<DEG>) -> Field<DEG> {
    let r = grid.fiber_radius();
    let inner = 0.8 * r;
    let outer = 0.9 * r;
    let nc = f.ncomp();
    let mut out = f.clone();
    out.data.par_chunks_mut(nc).enumerate().for_each(|(p, o)| {
        let w = grid.fiber_coord(p % grid.fiber_points());
        let t = (0..4).map(|a| (w[a] - grid.fiber_center[a]).abs()).fold(0.0, f64::max);
        let s = smooth_step((outer - t) / (outer - inner));
        for v in o.iter_mut() {
            *v = *v * s;
        }
    });
    out
}

/// `C^∞` transition: 0 for `t ≤ 0`, 1 for `t ≥ 1`.
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / t).exp();
        let b = (-1.0 / (1.0 - t)).exp();
        a / (a + b)
    }
}

/// Weight exponents for the Hölder norms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightSpec {
    pub nu: f64,
    pub gamma: f64,
    pub eps: f64,
}

impl WeightSpec {
    pub fn new(nu: f64, gamma: f64, eps: f64) -> Result<Self> {
        if !(nu > 0.0 && nu < 1.0 && gamma > 0.0 && gamma < 1.0) || !(eps > 0.0) {
            return Err(Error::InvalidParameter(format!("invalid weights nu={nu} gamma={gamma} eps={eps}")));
        }
        Ok(Self { nu, gamma, eps })
    }

    /// Default exponents `ν = 1/2`, `γ = 1/4`.
    pub fn default_for(eps: f64) -> Self {
        Self { nu: 0.5, gamma: 0.25, eps }
    }

    /// Same Hölder exponent with weight exponent replaced.
    pub fn with_nu(self, nu: f64) -> Self {
        Self { nu, ..self }
    }

    /// Weight `k + ν`, as in the spaces carrying `k` extra powers.
    pub fn shifted(self, k: f64) -> Self {
        Self { nu: self.nu + k, ..self }
    }
}

/// Largest step (in cells) of the sampled Hölder pairs.
pub const HOLDER_REACH: usize = 6;

/// Physical placement of grid points used by the weights.
pub trait Placement: Sync {
    /// Base coordinates and physical fiber offset from the submanifold.
    fn place(&self, p: usize) -> ([f64; 3], [f64; 4]);
}

/// Grid coordinates taken as physical.
pub struct GridPlacement<'a>(pub &'a ProductGrid);

impl Placement for GridPlacement<'_> {
    fn place(&self, p: usize) -> ([f64; 3], [f64; 4]) {
        let (b, f) = self.0.split(p);
        (self.0.base_coord(b), self.0.fiber_coord(f))
    }
}

/// Sup term and Hölder term of the weighted norm, reported separately.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedNorm {
    pub sup: f64,
    pub holder: f64,
}

impl WeightedNorm {
    pub fn total(&self) -> f64 {
        self.sup + self.holder
    }
}

/// Weighted norm `sup (ε+|y|)^ν |u| + sup (ε+|y₁|+|y₂|)^{ν+γ} |u₁−u₂| / d^γ`
/// over axis-aligned pairs within [`HOLDER_REACH`] cells satisfying
/// `4d ≤ ε + |y₁| + |y₂|`. `values` holds `ncomp` reals per point.
pub fn weighted_norm_values(
    grid: &ProductGrid,
    values: &[f64],
    ncomp: usize,
    place: &dyn Placement,
    spec: WeightSpec,
) -> WeightedNorm {
    let npts = grid.npts();
    assert_eq!(values.len(), npts * ncomp);
    let d = grid.dim();
    let m = grid.base_dim();
    let lengths = grid.base_lengths.clone();
    let pos: Vec<([f64; 3], [f64; 4], f64)> = (0..npts)
        .into_par_iter()
        .map(|p| {
            let (x, y) = place.place(p);
            let r = (y.iter().map(|v| v * v).sum::<f64>()).sqrt();
            (x, y, r)
        })
        .collect();
    let mag = |p: usize| -> f64 { values[p * ncomp..(p + 1) * ncomp].iter().map(|v| v * v).sum::<f64>().sqrt() };
    let sup = (0..npts)
        .into_par_iter()
        .map(|p| (spec.eps + pos[p].2).powf(spec.nu) * mag(p))
        .reduce(|| 0.0, f64::max);
    let holder = (0..npts)
        .into_par_iter()
        .map(|p| {
            let (x1, y1, r1) = pos[p];
            let u1 = &values[p * ncomp..(p + 1) * ncomp];
            let mut best: f64 = 0.0;
            for mu in 0..d {
                let mut q = p;
                for _ in 0..HOLDER_REACH {
                    q = match grid.shift(q, mu, 1) {
                        Some(q) => q,
                        None => break,
                    };
                    if q == p {
                        break;
                    }
                    let (x2, y2, r2) = pos[q];
                    let mut dist = 0.0;
                    for i in 0..m {
                        let mut dx = (x1[i] - x2[i]).abs();
                        dx = dx.min(lengths[i] - dx);
                        dist += dx * dx;
                    }
                    let dx = dist.sqrt();
                    let dy = (0..4).map(|a| (y1[a] - y2[a]).powi(2)).sum::<f64>().sqrt();
                    let dist = dx + dy;
                    let wsum = spec.eps + r1 + r2;
                    if 4.0 * dist > wsum || dist == 0.0 {
                        break;
                    }
                    let u2 = &values[q * ncomp..(q + 1) * ncomp];
                    let diff = u1.iter().zip(u2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                    best = best.max(wsum.powf(spec.nu + spec.gamma) * diff / dist.powf(spec.gamma));
                }
            }
            best
        })
        .reduce(|| 0.0, f64::max);
    WeightedNorm { sup, holder }
}

/// Weighted norm of a Lie-valued field using grid coordinates as physical.
pub fn weighted_norm<const DEG: usize>(grid: &ProductGrid, f: &Field<DEG>, spec: WeightSpec) -> WeightedNorm {
    weighted_norm_with(grid, f, &GridPlacement(grid), spec)
}

/// Weighted norm of a Lie-valued field with an explicit placement.
pub fn weighted_norm_with<const DEG: usize>(grid: &ProductGrid, f: &Field<DEG>, place: &dyn Placement, spec: WeightSpec) -> WeightedNorm {
    let vals = lie_to_reals(f);
    weighted_norm_values(grid, &vals, 3 * f.ncomp(), place, spec)
}

/// Flattens Lie coefficients to reals scaled so that Euclidean length equals
/// the Lie norm.
pub fn lie_to_reals<const DEG: usize>(f: &Field<DEG>) -> Vec<f64> {
    let s = std::f64::consts::SQRT_2;
    f.data.iter().flat_map(|v| [v.ci * s, v.cj * s, v.ck * s]).collect()
}
