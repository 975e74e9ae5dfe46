//! Approximate solutions from gluing data on a tubular neighborhood of a
//! flat torus.
//!
//! Points are addressed in comoving coordinates `(x, w)` with physical normal
//! offset `y = λ(x) w + ε v(x)` measured in a frame parallel for the
//! connection `∇' = ∇ + θ`. In these coordinates the glued connection is the
//! basic instanton of scale `ε` in `w` with no `dx` part, and the horizontal
//! components of the defining relation appear through the change of frame.
//! The ambient metric is the quadratic expansion
//! `g = G_{ij} e^i e^j + H_{ρσ} e^ρ e^σ` with coframe `e^i = dx_i`,
//! `e^ρ = dy_ρ + θ_{i,ρσ} y_σ dx_i`.

use crate::fields::instanton_connection;
use crate::fourier::FourierSeries;
use crate::grid::{pair_slot, GaugeField, Metric, ProductGrid, SampledMetric};
use crate::instanton::{curvature_closed, potential, InstantonParams, PATTERN};
use crate::lie::{LieValue, SkewPlus, PAIRS4};
use crate::ops::{self, diff_axis, Placement, WeightSpec, WeightedNorm};
use crate::{Error, Result};
use num_dual::{DualNum, DualSVec64};
use rayon::prelude::*;

/// Samples per axis used to check pointwise bounds of base functions.
const CHECK_SAMPLES: usize = 48;

/// Tolerance on the discrete curvature of the `Λ₊²` connection.
pub const THETA_FLATNESS_TOL: f64 = 1e-2;

/// Tolerance on the mean curvature `Σ_i h_{ii,ρ}`.
pub const MINIMALITY_TOL: f64 = 1e-12;

/// Scale, center offset, conformal factor and `Λ₊²` connection form.
#[derive(Debug, Clone, PartialEq)]
pub struct GluingData {
    pub eps: f64,
    pub lengths: Vec<f64>,
    pub v: [FourierSeries; 4],
    pub lambda: FourierSeries,
    /// `θ_i` for each base direction, as `SkewPlus` coefficients.
    pub theta: Vec<[FourierSeries; 3]>,
    /// Bound `K` on the `C²` norms of `v`, `λ`, `θ`.
    pub k_bound: f64,
}

impl GluingData {
    /// `v = 0`, `λ = 1`, `θ = 0`.
    pub fn flat(eps: f64, lengths: &[f64]) -> Self {
        let z = FourierSeries::zero(lengths);
        Self {
            eps,
            lengths: lengths.to_vec(),
            v: [z.clone(), z.clone(), z.clone(), z.clone()],
            lambda: FourierSeries::constant(lengths, 1.0),
            theta: vec![[z.clone(), z.clone(), z]; lengths.len()],
            k_bound: 100.0,
        }
    }

    pub fn with_v(mut self, rho: usize, f: FourierSeries) -> Self {
        self.v[rho] = f;
        self
    }

    pub fn with_lambda(mut self, f: FourierSeries) -> Self {
        self.lambda = f;
        self
    }

    pub fn with_theta(mut self, i: usize, k: usize, f: FourierSeries) -> Self {
        self.theta[i][k] = f;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn base_dim(&self) -> usize {
        self.lengths.len()
    }

    /// Instanton parameters at a base point.
    pub fn params_at(&self, x: &[f64]) -> InstantonParams {
        InstantonParams { eps: self.eps, lambda: self.lambda.eval_f64(x), v: self.v.each_ref().map(|f| f.eval_f64(x)) }
    }

    pub fn theta_at(&self, i: usize, x: &[f64]) -> SkewPlus {
        SkewPlus::new(self.theta[i][0].eval_f64(x), self.theta[i][1].eval_f64(x), self.theta[i][2].eval_f64(x))
    }

    /// Checks the admissibility hypotheses: scale range, `inf λ ≥ 1`, the
    /// `C²` bounds and flatness of the induced `Λ₊²` connection.
    pub fn validate(&self) -> Result<()> {
        let m = self.base_dim();
        if m == 0 || m > crate::fourier::MAX_BASE_DIM {
            return Err(Error::InvalidParameter(format!("base dimension {m} unsupported")));
        }
        if !(self.eps > 0.0 && self.eps <= 0.5) {
            return Err(Error::InvalidParameter(format!("eps must lie in (0, 0.5], got {}", self.eps)));
        }
        let all = self.v.iter().chain(std::iter::once(&self.lambda)).chain(self.theta.iter().flatten());
        for f in all.clone() {
            if f.lengths != self.lengths {
                return Err(Error::Shape("gluing field defined on a different torus".into()));
            }
        }
        if self.theta.len() != m {
            return Err(Error::Shape("theta needs one entry per base direction".into()));
        }
        for f in all {
            let b = f.cn_bound(2);
            if b > self.k_bound {
                return Err(Error::InvalidParameter(format!("C2 bound {b:.3} exceeds K = {}", self.k_bound)));
            }
        }
        let mut lmin = f64::INFINITY;
        let mut worst_flat: f64 = 0.0;
        let dth: Vec<Vec<[FourierSeries; 3]>> =
            (0..m).map(|j| self.theta.iter().map(|t| t.each_ref().map(|f| f.derivative(j))).collect()).collect();
        for_samples(&self.lengths, |x| {
            lmin = lmin.min(self.lambda.eval_f64(x));
            for i in 0..m {
                for j in i + 1..m {
                    let di = SkewPlus::from_array(dth[i][j].each_ref().map(|f| f.eval_f64(x)));
                    let dj = SkewPlus::from_array(dth[j][i].each_ref().map(|f| f.eval_f64(x)));
                    let c = di - dj + self.theta_at(i, x).commutator(self.theta_at(j, x));
                    worst_flat = worst_flat.max(c.norm_sq().sqrt());
                }
            }
        });
        if lmin < 1.0 - 1e-12 {
            return Err(Error::InvalidParameter(format!("inf lambda = {lmin:.4} is below 1")));
        }
        if worst_flat > THETA_FLATNESS_TOL {
            return Err(Error::InvalidParameter(format!(
                "theta does not induce a flat connection on the self-dual forms (curvature {worst_flat:.3e})"
            )));
        }
        Ok(())
    }
}

fn for_samples(lengths: &[f64], mut f: impl FnMut(&[f64])) {
    let m = lengths.len();
    let total = CHECK_SAMPLES.pow(m as u32);
    let mut x = vec![0.0; m];
    for k in 0..total {
        let mut r = k;
        for i in 0..m {
            x[i] = lengths[i] * (r % CHECK_SAMPLES) as f64 / CHECK_SAMPLES as f64;
            r /= CHECK_SAMPLES;
        }
        f(&x);
    }
}

/// Sparse real tensor whose entries are functions on the base torus.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor {
    pub shape: Vec<usize>,
    pub entries: Vec<(Vec<usize>, FourierSeries)>,
}

impl SparseTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), entries: Vec::new() }
    }

    fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.shape).fold(0, |acc, (i, n)| acc * n + i)
    }

    /// Sets (replacing) the entry at `idx`.
    pub fn set(&mut self, idx: &[usize], f: FourierSeries) {
        assert_eq!(idx.len(), self.shape.len());
        self.entries.retain(|(i, _)| i.as_slice() != idx);
        self.entries.push((idx.to_vec(), f));
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn eval<T: DualNum<Primitive = f64> + Copy>(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::from(0.0); self.len()];
        for (idx, f) in &self.entries {
            let k = self.flat(idx);
            out[k] += f.eval(x);
        }
        out
    }

    pub fn eval_f64(&self, x: &[f64]) -> Vec<f64> {
        self.eval::<f64>(x)
    }
}

/// Second fundamental form, ambient curvature components and the curvature
/// of `∇'` on the base.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryData {
    pub lengths: Vec<f64>,
    /// `h_{ij,ρ}`, shape `[m, m, 4]`.
    pub h: SparseTensor,
    /// `R_{iρσj}`, shape `[m, 4, 4, m]`.
    pub r_mixed: SparseTensor,
    /// `R_{αρσβ}`, shape `[4, 4, 4, 4]`.
    pub r_normal: SparseTensor,
    /// `C_{ij}` as anti-self-dual coefficients, shape `[m, m, 3]`.
    pub c: SparseTensor,
}

impl GeometryData {
    /// Totally geodesic flat torus in flat space.
    pub fn flat(lengths: &[f64]) -> Self {
        let m = lengths.len();
        Self {
            lengths: lengths.to_vec(),
            h: SparseTensor::zeros(&[m, m, 4]),
            r_mixed: SparseTensor::zeros(&[m, 4, 4, m]),
            r_normal: SparseTensor::zeros(&[4, 4, 4, 4]),
            c: SparseTensor::zeros(&[m, m, 3]),
        }
    }

    pub fn base_dim(&self) -> usize {
        self.lengths.len()
    }

    /// Sets `h_{ij,ρ} = h_{ji,ρ} = f`.
    pub fn with_h(mut self, i: usize, j: usize, rho: usize, f: FourierSeries) -> Self {
        self.h.set(&[i, j, rho], f.clone());
        self.h.set(&[j, i, rho], f);
        self
    }

    /// Sets `R_{iρσj} = R_{jσρi} = f`.
    pub fn with_r_mixed(mut self, i: usize, rho: usize, sigma: usize, j: usize, f: FourierSeries) -> Self {
        self.r_mixed.set(&[i, rho, sigma, j], f.clone());
        self.r_mixed.set(&[j, sigma, rho, i], f);
        self
    }

    /// Sets `R_{αρσβ} = f` together with the entries forced by the
    /// antisymmetries and the pair symmetry.
    pub fn with_r_normal(mut self, a: usize, r: usize, s: usize, b: usize, f: FourierSeries) -> Self {
        let neg = f.scale(-1.0);
        for (idx, g) in [
            ([a, r, s, b], &f),
            ([r, a, s, b], &neg),
            ([a, r, b, s], &neg),
            ([r, a, b, s], &f),
            ([s, b, a, r], &f),
            ([b, s, a, r], &neg),
            ([s, b, r, a], &neg),
            ([b, s, r, a], &f),
        ] {
            self.r_normal.set(&idx, g.clone());
        }
        self
    }

    /// Mean curvature `Σ_i h_{ii,ρ}` at `x`.
    pub fn mean_curvature(&self, x: &[f64]) -> [f64; 4] {
        let m = self.base_dim();
        let h = self.h.eval_f64(x);
        let mut out = [0.0; 4];
        for i in 0..m {
            for (rho, o) in out.iter_mut().enumerate() {
                *o += h[(i * m + i) * 4 + rho];
            }
        }
        out
    }

    /// Symmetries of the entered data, minimality, and `C = 0`.
    pub fn validate(&self) -> Result<()> {
        let m = self.base_dim();
        if self.h.shape != [m, m, 4] || self.r_mixed.shape != [m, 4, 4, m] || self.r_normal.shape != [4, 4, 4, 4] {
            return Err(Error::Shape("geometry tensors do not match the base dimension".into()));
        }
        let mut err: Option<Error> = None;
        for_samples(&self.lengths, |x| {
            if err.is_some() {
                return;
            }
            let h = self.h.eval_f64(x);
            let hm = self.mean_curvature(x);
            if hm.iter().any(|v| v.abs() > MINIMALITY_TOL) {
                err = Some(Error::InvalidParameter(format!(
                    "mean curvature {hm:?} is nonzero: the submanifold must be minimal"
                )));
                return;
            }
            for i in 0..m {
                for j in 0..m {
                    for r in 0..4 {
                        if (h[(i * m + j) * 4 + r] - h[(j * m + i) * 4 + r]).abs() > 1e-12 {
                            err = Some(Error::InvalidParameter("h must be symmetric in i, j".into()));
                            return;
                        }
                    }
                }
            }
            let rm = self.r_mixed.eval_f64(x);
            let at = |i: usize, r: usize, s: usize, j: usize| rm[((i * 4 + r) * 4 + s) * m + j];
            for i in 0..m {
                for j in 0..m {
                    for r in 0..4 {
                        for s in 0..4 {
                            if (at(i, r, s, j) - at(j, s, r, i)).abs() > 1e-12 {
                                err = Some(Error::InvalidParameter("R_{i r s j} must equal R_{j s r i}".into()));
                                return;
                            }
                        }
                    }
                }
            }
            let rn = self.r_normal.eval_f64(x);
            let at = |a: usize, r: usize, s: usize, b: usize| rn[((a * 4 + r) * 4 + s) * 4 + b];
            for a in 0..4 {
                for r in 0..4 {
                    for s in 0..4 {
                        for b in 0..4 {
                            let v = at(a, r, s, b);
                            if (v + at(r, a, s, b)).abs() > 1e-12
                                || (v + at(a, r, b, s)).abs() > 1e-12
                                || (v - at(s, b, a, r)).abs() > 1e-12
                            {
                                err = Some(Error::InvalidParameter("normal curvature symmetries violated".into()));
                                return;
                            }
                        }
                    }
                }
            }
            if self.c.eval_f64(x).iter().any(|v| *v != 0.0) {
                err = Some(Error::InvalidParameter(
                    "the curvature of the parallel frame connection must vanish for the comoving construction".into(),
                ));
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

/// Which ambient metric to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricChoice {
    /// Product metric `g₀` (`G = H = δ`).
    Product,
    /// Quadratic expansion from the geometry data.
    Expanded,
}

/// Derivative series of the gluing data, prepared once.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub eps: f64,
    pub m: usize,
    lam: FourierSeries,
    dlam: Vec<FourierSeries>,
    v: [FourierSeries; 4],
    dv: Vec<[FourierSeries; 4]>,
    theta: Vec<[FourierSeries; 3]>,
    geo: GeometryData,
}

/// Base data evaluated at one point.
pub(crate) struct Local<T> {
    pub lam: T,
    pub dlam: Vec<T>,
    pub v: [T; 4],
    pub dv: Vec<[T; 4]>,
    /// `θ_{i,ρσ}` as 4×4 matrices.
    pub theta: Vec<[[T; 4]; 4]>,
}

fn skew<T: DualNum<Primitive = f64> + Copy>(a: T, b: T, c: T) -> [[T; 4]; 4] {
    let z = T::from(0.0);
    [[z, a, b, c], [-a, z, c, -b], [-b, -c, z, a], [-c, b, -a, z]]
}

impl Prepared {
    pub fn new(gd: &GluingData, geo: &GeometryData) -> Self {
        let m = gd.base_dim();
        Self {
            eps: gd.eps,
            m,
            lam: gd.lambda.clone(),
            dlam: (0..m).map(|i| gd.lambda.derivative(i)).collect(),
            v: gd.v.clone(),
            dv: (0..m).map(|i| gd.v.each_ref().map(|f| f.derivative(i))).collect(),
            theta: gd.theta.clone(),
            geo: geo.clone(),
        }
    }

    pub fn local<T: DualNum<Primitive = f64> + Copy>(&self, x: &[T]) -> Local<T> {
        Local {
            lam: self.lam.eval(x),
            dlam: self.dlam.iter().map(|f| f.eval(x)).collect(),
            v: self.v.each_ref().map(|f| f.eval(x)),
            dv: self.dv.iter().map(|d| d.each_ref().map(|f| f.eval(x))).collect(),
            theta: self.theta.iter().map(|t| skew(t[0].eval(x), t[1].eval(x), t[2].eval(x))).collect(),
        }
    }

    /// Physical offset `y = λw + εv`.
    pub fn physical<T: DualNum<Primitive = f64> + Copy>(&self, loc: &Local<T>, w: &[T; 4]) -> [T; 4] {
        std::array::from_fn(|r| loc.lam * w[r] + loc.v[r] * self.eps)
    }

    /// Horizontal frame coefficients `c_{iρ}` with `e_i = ∂_{x_i} − (c_{iρ}/λ) ∂_{w_ρ}`;
    /// `levi` selects the Levi-Civita horizontal frame, otherwise the
    /// `∇'`-horizontal one.
    pub fn frame_coeffs<T: DualNum<Primitive = f64> + Copy>(&self, loc: &Local<T>, w: &[T; 4], levi: bool) -> Vec<[T; 4]> {
        let y = self.physical(loc, w);
        (0..self.m)
            .map(|i| {
                std::array::from_fn(|r| {
                    let mut c = w[r] * loc.dlam[i] + loc.dv[i][r] * self.eps;
                    if levi {
                        for s in 0..4 {
                            c += loc.theta[i][r][s] * y[s];
                        }
                    }
                    c
                })
            })
            .collect()
    }

    /// Frame metric blocks `(G, H)` at physical offset `y`.
    pub fn frame_metric<T: DualNum<Primitive = f64> + Copy>(&self, x: &[T], y: &[T; 4], choice: MetricChoice) -> (Vec<T>, Vec<T>) {
        let m = self.m;
        let mut gh = vec![T::from(0.0); m * m];
        let mut hv = vec![T::from(0.0); 16];
        for i in 0..m {
            gh[i * m + i] = T::from(1.0);
        }
        for a in 0..4 {
            hv[a * 4 + a] = T::from(1.0);
        }
        if choice == MetricChoice::Product {
            return (gh, hv);
        }
        let geo = &self.geo;
        if !geo.h.is_empty() {
            let h = geo.h.eval(x);
            let hy: Vec<T> = (0..m * m)
                .map(|ij| (0..4).fold(T::from(0.0), |acc, r| acc + h[ij * 4 + r] * y[r]))
                .collect();
            for i in 0..m {
                for j in 0..m {
                    let mut g = hy[i * m + j] * 2.0;
                    for k in 0..m {
                        g += hy[i * m + k] * hy[j * m + k];
                    }
                    gh[i * m + j] += g;
                }
            }
        }
        if !geo.r_mixed.is_empty() {
            let rm = geo.r_mixed.eval(x);
            for i in 0..m {
                for j in 0..m {
                    let mut acc = T::from(0.0);
                    for r in 0..4 {
                        for s in 0..4 {
                            acc += rm[((i * 4 + r) * 4 + s) * m + j] * y[r] * y[s];
                        }
                    }
                    gh[i * m + j] -= acc;
                }
            }
        }
        if !geo.r_normal.is_empty() {
            let rn = geo.r_normal.eval(x);
            for a in 0..4 {
                for b in 0..4 {
                    let mut acc = T::from(0.0);
                    for r in 0..4 {
                        for s in 0..4 {
                            acc += rn[((a * 4 + r) * 4 + s) * 4 + b] * y[r] * y[s];
                        }
                    }
                    hv[a * 4 + b] -= acc * (1.0 / 3.0);
                }
            }
        }
        (gh, hv)
    }

    /// Metric components in comoving coordinates, row-major `d × d`.
    pub fn comoving_metric<T: DualNum<Primitive = f64> + Copy>(&self, x: &[T], w: &[T; 4], choice: MetricChoice) -> Vec<T> {
        let m = self.m;
        let d = m + 4;
        let loc = self.local(x);
        let y = self.physical(&loc, w);
        let c = self.frame_coeffs(&loc, w, true);
        let (gh, hv) = self.frame_metric(x, &y, choice);
        // coframe rows: e^i = dx_i, e^ρ = c_{iρ} dx_i + λ dw_ρ
        let mut e = vec![T::from(0.0); d * d];
        for i in 0..m {
            e[i * d + i] = T::from(1.0);
        }
        for r in 0..4 {
            for i in 0..m {
                e[(m + r) * d + i] = c[i][r];
            }
            e[(m + r) * d + m + r] = loc.lam;
        }
        let mut g = vec![T::from(0.0); d * d];
        for mu in 0..d {
            for nu in mu..d {
                let mut acc = T::from(0.0);
                for i in 0..m {
                    for j in 0..m {
                        acc += e[i * d + mu] * gh[i * m + j] * e[j * d + nu];
                    }
                }
                for a in 0..4 {
                    for b in 0..4 {
                        acc += e[(m + a) * d + mu] * hv[a * 4 + b] * e[(m + b) * d + nu];
                    }
                }
                g[mu * d + nu] = acc;
                g[nu * d + mu] = acc;
            }
        }
        g
    }
}

/// Inverse and determinant by Gauss-Jordan elimination with partial pivoting
/// on the real parts.
pub(crate) fn inverse_det<T: DualNum<Primitive = f64> + Copy>(a: &[T], n: usize) -> (Vec<T>, T) {
    let mut m = a.to_vec();
    let mut inv = vec![T::from(0.0); n * n];
    for i in 0..n {
        inv[i * n + i] = T::from(1.0);
    }
    let mut det = T::from(1.0);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i * n + col].re().abs().total_cmp(&m[j * n + col].re().abs())).unwrap();
        if piv != col {
            for k in 0..n {
                m.swap(piv * n + k, col * n + k);
                inv.swap(piv * n + k, col * n + k);
            }
            det = -det;
        }
        let p = m[col * n + col];
        det *= p;
        let ip = p.recip();
        for k in 0..n {
            m[col * n + k] *= ip;
            inv[col * n + k] *= ip;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            // no zero shortcut: an entry with zero value may still carry
            // derivative parts
            let f = m[r * n + col];
            for k in 0..n {
                let a = m[col * n + k];
                let b = inv[col * n + k];
                m[r * n + k] -= f * a;
                inv[r * n + k] -= f * b;
            }
        }
    }
    (inv, det)
}

/// Components of the quadratic metric expansion at `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricExpansion {
    /// `g(e_i, e_j)`.
    pub horizontal: Vec<f64>,
    /// `g(e_α, e_β)`.
    pub vertical: [[f64; 4]; 4],
    /// `(det g / det g₀)^{1/2}`.
    pub volume_factor: f64,
}

/// Metric in the orthonormal-at-`S` frame; mixed components are truncated
/// to zero.
pub fn metric_expansion(geo: &GeometryData, x: &[f64], y: [f64; 4]) -> MetricExpansion {
    let m = geo.base_dim();
    let gd = GluingData::flat(0.1, &geo.lengths);
    let prep = Prepared::new(&gd, geo);
    let (gh, hv) = prep.frame_metric(x, &y, MetricChoice::Expanded);
    let (_, dg) = inverse_det(&gh, m);
    let (_, dh) = inverse_det(&hv, 4);
    MetricExpansion {
        horizontal: gh,
        vertical: std::array::from_fn(|a| std::array::from_fn(|b| hv[a * 4 + b])),
        volume_factor: (dg * dh).sqrt(),
    }
}

/// The glued connection on a comoving grid.
#[derive(Debug, Clone)]
pub struct ApproxConnection {
    pub grid: ProductGrid,
    /// Coordinate components; only the `dw` part is nonzero.
    pub field: GaugeField,
    pub gd: GluingData,
    pub geo: GeometryData,
    pub(crate) prep: Prepared,
}

/// Builds the glued connection after checking admissibility.
pub fn build_connection(gd: &GluingData, geo: &GeometryData, grid: &ProductGrid) -> Result<ApproxConnection> {
    gd.validate()?;
    geo.validate()?;
    if geo.lengths != gd.lengths {
        return Err(Error::Shape("geometry and gluing data live on different tori".into()));
    }
    if grid.base_lengths != gd.lengths {
        return Err(Error::Shape("grid torus differs from the gluing torus".into()));
    }
    if (grid.eps - gd.eps).abs() > 1e-15 * gd.eps {
        return Err(Error::InvalidParameter("grid eps differs from gluing eps".into()));
    }
    let field = instanton_connection(grid, &InstantonParams::basic(gd.eps));
    Ok(ApproxConnection { grid: grid.clone(), field, gd: gd.clone(), geo: geo.clone(), prep: Prepared::new(gd, geo) })
}

/// Frame in which curvature components are reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    /// `∇'`-horizontal vectors `e_i'`.
    Parallel,
    /// Levi-Civita horizontal vectors `e_i = e_i' − θ_{i,ρσ} y_σ e_ρ`.
    LeviCivita,
}

impl ApproxConnection {
    pub fn base_x(&self, p: usize) -> Vec<f64> {
        let (b, _) = self.grid.split(p);
        self.grid.base_coord(b)[..self.grid.base_dim()].to_vec()
    }

    pub fn comoving_w(&self, p: usize) -> [f64; 4] {
        let (_, f) = self.grid.split(p);
        self.grid.fiber_coord(f)
    }

    /// Physical normal offset of grid point `p`.
    pub fn physical_y(&self, p: usize) -> [f64; 4] {
        let x = self.base_x(p);
        let loc = self.prep.local(&x);
        self.prep.physical(&loc, &self.comoving_w(p))
    }

    /// Frame components `(A(e_i'), A(e_α))` from the defining relation.
    pub fn frame_components(&self, p: usize) -> (Vec<LieValue>, [LieValue; 4]) {
        let x = self.base_x(p);
        let y = self.physical_y(p);
        let par = self.gd.params_at(&x);
        let vert = potential(&par, y);
        let z = par.offset(y);
        let loc = self.prep.local(&x);
        let hor = (0..self.grid.base_dim())
            .map(|i| {
                let mut acc = LieValue::ZERO;
                for r in 0..4 {
                    acc -= vert[r] * (self.gd.eps * loc.dv[i][r] + loc.dlam[i] / loc.lam * z[r]);
                }
                acc
            })
            .collect();
        (hor, vert)
    }

    /// Frame components read off the stored coordinate field.
    pub fn frame_components_from_field(&self, p: usize) -> (Vec<LieValue>, [LieValue; 4]) {
        let m = self.grid.base_dim();
        let x = self.base_x(p);
        let w = self.comoving_w(p);
        let loc = self.prep.local(&x);
        let c = self.prep.frame_coeffs(&loc, &w, false);
        let a = self.field.at(p);
        let hor = (0..m)
            .map(|i| {
                let mut acc = a[i];
                for r in 0..4 {
                    acc -= a[m + r] * (c[i][r] / loc.lam);
                }
                acc
            })
            .collect();
        (hor, std::array::from_fn(|r| a[m + r] * (1.0 / loc.lam)))
    }

    /// Frame vectors as coordinate vectors: `m` horizontal then 4 vertical.
    fn frame_vectors(&self, p: usize, frame: Frame) -> Vec<Vec<f64>> {
        let m = self.grid.base_dim();
        let d = m + 4;
        let x = self.base_x(p);
        let w = self.comoving_w(p);
        let loc = self.prep.local(&x);
        let c = self.prep.frame_coeffs(&loc, &w, frame == Frame::LeviCivita);
        let mut out = Vec::with_capacity(d);
        for i in 0..m {
            let mut v = vec![0.0; d];
            v[i] = 1.0;
            for r in 0..4 {
                v[m + r] = -c[i][r] / loc.lam;
            }
            out.push(v);
        }
        for r in 0..4 {
            let mut v = vec![0.0; d];
            v[m + r] = 1.0 / loc.lam;
            out.push(v);
        }
        out
    }

    /// Converts coordinate 2-form components to frame components.
    pub fn two_form_to_frame(&self, p: usize, coord: &[LieValue], frame: Frame) -> Vec<LieValue> {
        let d = self.grid.dim();
        let fv = self.frame_vectors(p, frame);
        let mut out = vec![LieValue::ZERO; coord.len()];
        for a in 0..d {
            for b in a + 1..d {
                let mut acc = LieValue::ZERO;
                for mu in 0..d {
                    for nu in mu + 1..d {
                        let k = fv[a][mu] * fv[b][nu] - fv[a][nu] * fv[b][mu];
                        if k != 0.0 {
                            acc += coord[pair_slot(d, mu, nu)] * k;
                        }
                    }
                }
                out[pair_slot(d, a, b)] = acc;
            }
        }
        out
    }

    /// Converts coordinate 1-form components to frame components.
    pub fn one_form_to_frame(&self, p: usize, coord: &[LieValue], frame: Frame) -> Vec<LieValue> {
        let d = self.grid.dim();
        let fv = self.frame_vectors(p, frame);
        (0..d).map(|a| (0..d).fold(LieValue::ZERO, |acc, mu| acc + coord[mu] * fv[a][mu])).collect()
    }

    /// Closed-form curvature in the requested frame.
    pub fn curvature_closed_at(&self, p: usize, frame: Frame) -> Vec<LieValue> {
        let m = self.grid.base_dim();
        let d = m + 4;
        let x = self.base_x(p);
        let y = self.physical_y(p);
        let par = self.gd.params_at(&x);
        let z = par.offset(y);
        let fv = curvature_closed(&par, y);
        let loc = self.prep.local(&x);
        let eps = self.gd.eps;
        // ε∇v + λ⁻¹∇λ z (+ θ z in the Levi-Civita frame, with ∇v = ∇'v + θv)
        let coef: Vec<[f64; 4]> = (0..m)
            .map(|i| {
                std::array::from_fn(|r| {
                    let mut c = eps * loc.dv[i][r] + loc.dlam[i] / loc.lam * z[r];
                    if frame == Frame::LeviCivita {
                        for s in 0..4 {
                            c += eps * loc.theta[i][r][s] * loc.v[s] + loc.theta[i][r][s] * z[s];
                        }
                    }
                    c
                })
            })
            .collect();
        let mut out = vec![LieValue::ZERO; d * (d - 1) / 2];
        for (s, &(a, b)) in PAIRS4.iter().enumerate() {
            out[pair_slot(d, m + a, m + b)] = fv.c[s];
        }
        for i in 0..m {
            for al in 0..4 {
                let mut acc = LieValue::ZERO;
                for r in 0..4 {
                    acc -= fv.get(r, al) * coef[i][r];
                }
                out[pair_slot(d, i, m + al)] = acc;
            }
            for j in i + 1..m {
                let mut acc = LieValue::ZERO;
                for r in 0..4 {
                    for s in 0..4 {
                        acc += fv.get(r, s) * (coef[i][r] * coef[j][s]);
                    }
                }
                out[pair_slot(d, i, j)] = acc;
            }
        }
        out
    }

    /// Curvature in the `∇`-frame obtained by transporting the `∇'`-frame
    /// closed form through `e_i = e_i' − θ_{i,ρσ} y_σ e_ρ`.
    pub fn curvature_transported(&self, p: usize) -> Vec<LieValue> {
        let m = self.grid.base_dim();
        let d = m + 4;
        let fp = self.curvature_closed_at(p, Frame::Parallel);
        let x = self.base_x(p);
        let y = self.physical_y(p);
        let loc = self.prep.local(&x);
        // basis change matrix rows: e_a = Σ_b T[a][b] e'_b
        let mut t = vec![vec![0.0; d]; d];
        for a in 0..d {
            t[a][a] = 1.0;
        }
        for i in 0..m {
            for r in 0..4 {
                let mut c = 0.0;
                for s in 0..4 {
                    c += loc.theta[i][r][s] * y[s];
                }
                t[i][m + r] = -c;
            }
        }
        let get = |a: usize, b: usize| -> LieValue {
            if a == b {
                LieValue::ZERO
            } else if a < b {
                fp[pair_slot(d, a, b)]
            } else {
                -fp[pair_slot(d, b, a)]
            }
        };
        let mut out = vec![LieValue::ZERO; fp.len()];
        for a in 0..d {
            for b in a + 1..d {
                let mut acc = LieValue::ZERO;
                for k in 0..d {
                    for l in 0..d {
                        let c = t[a][k] * t[b][l];
                        if c != 0.0 && k != l {
                            acc += get(k, l) * c;
                        }
                    }
                }
                out[pair_slot(d, a, b)] = acc;
            }
        }
        out
    }

    /// Sampled comoving metric.
    pub fn sampled_metric(&self, choice: MetricChoice) -> Result<Metric> {
        let grid = &self.grid;
        Ok(Metric::Sampled(SampledMetric::from_fn(grid, |p| {
            self.prep.comoving_metric(&self.base_x(p), &self.comoving_w(p), choice)
        })?))
    }

    /// Placement of grid points at their physical offsets.
    pub fn placement(&self) -> PhysicalPlacement<'_> {
        PhysicalPlacement { conn: self }
    }

    /// Frame components of a coordinate 1-form as reals, scaled so the
    /// Euclidean length is the pointwise norm.
    pub fn frame_values(&self, f: &GaugeField) -> Vec<f64> {
        let d = self.grid.dim();
        let s = std::f64::consts::SQRT_2;
        let mut out = vec![0.0; f.npts * d * 3];
        out.par_chunks_mut(d * 3).enumerate().for_each(|(p, o)| {
            let fr = self.one_form_to_frame(p, f.at(p), Frame::LeviCivita);
            for (k, v) in fr.iter().enumerate() {
                o[3 * k] = v.ci * s;
                o[3 * k + 1] = v.cj * s;
                o[3 * k + 2] = v.ck * s;
            }
        });
        out
    }

    /// Weighted norm of a coordinate 1-form measured in the frame at the
    /// physical offsets.
    pub fn weighted_norm(&self, f: &GaugeField, spec: WeightSpec) -> WeightedNorm {
        let vals = self.frame_values(f);
        ops::weighted_norm_values(&self.grid, &vals, 3 * self.grid.dim(), &self.placement(), spec)
    }
}

/// Grid points placed at `(x, λw + εv)`.
pub struct PhysicalPlacement<'a> {
    conn: &'a ApproxConnection,
}

impl Placement for PhysicalPlacement<'_> {
    fn place(&self, p: usize) -> ([f64; 3], [f64; 4]) {
        let (b, _) = self.conn.grid.split(p);
        (self.conn.grid.base_coord(b), self.conn.physical_y(p))
    }
}

/// How the Yang-Mills residual is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualMode {
    /// Exact pointwise evaluation through forward-mode derivatives.
    Analytic,
    /// Finite differences of the sampled connection and metric.
    Discrete,
}

type D7 = DualSVec64<7>;

fn grad7(v: &D7) -> [f64; 7] {
    let e = v.eps.unwrap_generic(nalgebra::Const::<7>, nalgebra::U1);
    std::array::from_fn(|k| e[k])
}

/// `D*_g F` at one comoving point, in coordinate components.
pub(crate) fn analytic_residual_at(prep: &Prepared, x: &[f64], w: [f64; 4], choice: MetricChoice) -> Vec<LieValue> {
    let m = prep.m;
    let d = m + 4;
    let seed = |v: f64, k: usize| D7::from_re(v).derivative(k);
    let xd: Vec<D7> = (0..m).map(|i| seed(x[i], i)).collect();
    let wd: [D7; 4] = std::array::from_fn(|r| seed(w[r], m + r));
    let g = prep.comoving_metric(&xd, &wd, choice);
    let (gi, det) = inverse_det(&g, d);
    let sg = det.sqrt();
    // basic instanton profile in w
    let e2 = prep.eps * prep.eps;
    let s = wd.iter().fold(D7::from(e2), |acc, v| acc + *v * *v);
    let f = (s * s).recip() * (2.0 * e2);
    // density W^{μν} = √g (g^{μa} g^{νb} − g^{μb} g^{νa}) f P_{ab}
    let mut dens = vec![LieValue::ZERO; d * d];
    let mut div = vec![LieValue::ZERO; d];
    let a_re = potential(&InstantonParams::basic(prep.eps), w);
    for mu in 0..d {
        for nu in 0..d {
            if mu == nu {
                continue;
            }
            let mut val = LieValue::ZERO;
            let mut dmu = LieValue::ZERO;
            for (sl, &(a, b)) in PAIRS4.iter().enumerate() {
                let (a, b) = (m + a, m + b);
                let k = (gi[mu * d + a] * gi[nu * d + b] - gi[mu * d + b] * gi[nu * d + a]) * sg * f;
                val += PATTERN[sl] * k.re;
                dmu += PATTERN[sl] * grad7(&k)[mu];
            }
            dens[mu * d + nu] = val;
            div[nu] += dmu;
        }
    }
    for nu in 0..d {
        for r in 0..4 {
            div[nu] += a_re[r].bracket(dens[(m + r) * d + nu]);
        }
    }
    let sgr = sg.re;
    (0..d)
        .map(|l| (0..d).fold(LieValue::ZERO, |acc, nu| acc + div[nu] * g[l * d + nu].re) * (-1.0 / sgr))
        .collect()
}

/// Yang-Mills residual `D*_A F_A` and its weighted `C₃` norm.
pub fn ym_residual(
    conn: &ApproxConnection,
    choice: MetricChoice,
    mode: ResidualMode,
    spec: WeightSpec,
) -> Result<(GaugeField, WeightedNorm)> {
    let grid = &conn.grid;
    let field = match mode {
        ResidualMode::Analytic => {
            GaugeField::from_fn(grid, |p, out| {
                let r = analytic_residual_at(&conn.prep, &conn.base_x(p), conn.comoving_w(p), choice);
                out.copy_from_slice(&r);
            })
        }
        ResidualMode::Discrete => {
            let metric = conn.sampled_metric(choice)?;
            let f = ops::curvature(grid, &conn.field)?;
            ops::cov_codifferential(grid, &conn.field, &metric, &f)?
        }
    };
    let norm = conn.weighted_norm(&field, spec.with_nu(3.0));
    Ok((field, norm))
}

/// Analytic residual norm of the approximate connection at each `ε`, with
/// the fiber box scaled to `radius_factor·ε`.
pub fn residual_sweep(
    gd: &GluingData,
    geo: &GeometryData,
    base_counts: &[usize],
    fiber_n: usize,
    radius_factor: f64,
    eps_list: &[f64],
    spec: WeightSpec,
) -> Result<Vec<(f64, WeightedNorm)>> {
    eps_list
        .iter()
        .map(|&eps| {
            let grid = ProductGrid::scaled(base_counts, &gd.lengths, fiber_n, radius_factor, eps)?;
            let conn = build_connection(&gd.clone().with_eps(eps), geo, &grid)?;
            let (_, norm) = ym_residual(&conn, MetricChoice::Expanded, ResidualMode::Analytic, WeightSpec { eps, ..spec })?;
            Ok((eps, norm))
        })
        .collect()
}

/// `Σ_β D_{e_β} F_A(e_i, e_β)` at `p` by finite differences of the closed
/// form, for each horizontal `i` in the Levi-Civita frame.
pub fn vertical_divergence(conn: &ApproxConnection, p: usize) -> Vec<LieValue> {
    let m = conn.grid.base_dim();
    let d = m + 4;
    let x = conn.base_x(p);
    let lam = conn.gd.lambda.eval_f64(&x);
    let a = potential(&InstantonParams::basic(conn.gd.eps), conn.comoving_w(p));
    (0..m)
        .map(|i| {
            let mut acc = LieValue::ZERO;
            for b in 0..4 {
                let get = |q: usize| conn.curvature_closed_at(q, Frame::LeviCivita)[pair_slot(d, i, m + b)];
                let dv = diff_axis(&conn.grid, p, m + b, get) * (1.0 / lam);
                acc += dv + (a[b] * (1.0 / lam)).bracket(get(p));
            }
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const TAU: f64 = 2.0 * PI;

    fn sin_v(eps: f64, amp: f64) -> GluingData {
        GluingData::flat(eps, &[TAU]).with_v(0, FourierSeries::zero(&[TAU]).with_mode(&[1], 0.0, amp))
    }

    #[test]
    fn flat_data_has_no_horizontal_part() {
        let gd = GluingData::flat(0.1, &[TAU]);
        let geo = GeometryData::flat(&[TAU]);
        let grid = ProductGrid::scaled(&[4], &[TAU], 5, 4.0, 0.1).unwrap();
        let a = build_connection(&gd, &geo, &grid).unwrap();
        for p in (0..grid.npts()).step_by(37) {
            let (h, v) = a.frame_components(p);
            assert_eq!(h[0], LieValue::ZERO);
            let b = potential(&InstantonParams::basic(0.1), a.physical_y(p));
            for r in 0..4 {
                assert!((v[r] - b[r]).max_abs() < 1e-15);
            }
        }
        let gd = gd.with_v(2, FourierSeries::constant(&[TAU], 0.4));
        let a = build_connection(&gd, &geo, &grid).unwrap();
        for p in (0..grid.npts()).step_by(37) {
            assert_eq!(a.frame_components(p).0[0], LieValue::ZERO);
        }
    }

    #[test]
    fn sine_offset_substitution() {
        let eps = 0.1;
        let gd = sin_v(eps, 1.0).with_lambda(FourierSeries::constant(&[TAU], 1.0));
        let grid = ProductGrid::scaled(&[6], &[TAU], 5, 4.0, eps).unwrap();
        let a = build_connection(&gd, &GeometryData::flat(&[TAU]), &grid).unwrap();
        for p in (0..grid.npts()).step_by(13) {
            let x = a.base_x(p)[0];
            let (h, v) = a.frame_components(p);
            assert!((h[0] - v[0] * (-eps * x.cos())).max_abs() < 1e-14);
            let (h2, v2) = a.frame_components_from_field(p);
            assert!((h2[0] - h[0]).max_abs() < 1e-13);
            for r in 0..4 {
                assert!((v2[r] - v[r]).max_abs() < 1e-13);
            }
        }
    }

    #[test]
    fn rejects_inadmissible_data() {
        let geo = GeometryData::flat(&[TAU, TAU]);
        let bad = geo.clone().with_h(0, 0, 1, FourierSeries::constant(&[TAU, TAU], 0.3));
        let e = bad.validate().unwrap_err().to_string();
        assert!(e.contains("minimal"), "{e}");
        let gd = GluingData::flat(0.1, &[TAU]).with_lambda(FourierSeries::constant(&[TAU], 0.8));
        assert!(gd.validate().is_err());
        let gd = GluingData::flat(0.1, &[TAU]).with_lambda(FourierSeries::constant(&[TAU], 1.0).with_mode(&[1], 50.0, 0.0));
        assert!(gd.validate().is_err());
        // non-commuting constant θ on a 2-torus is curved
        let gd = GluingData::flat(0.1, &[TAU, TAU])
            .with_theta(0, 0, FourierSeries::constant(&[TAU, TAU], 0.5))
            .with_theta(1, 1, FourierSeries::constant(&[TAU, TAU], 0.5));
        assert!(gd.validate().is_err());
    }

    #[test]
    fn metric_expansion_examples() {
        let l = [TAU];
        let geo = GeometryData::flat(&l);
        let e = metric_expansion(&geo, &[0.3], [0.1, 0.2, 0.0, -0.1]);
        assert_eq!(e.horizontal, vec![1.0]);
        assert_eq!(e.volume_factor, 1.0);
        let c = 0.7;
        let t = 0.2;
        let geo = GeometryData::flat(&l)
            .with_h(0, 0, 0, FourierSeries::constant(&l, c))
            .with_r_mixed(0, 1, 1, 0, FourierSeries::constant(&l, 0.4))
            .with_r_normal(0, 1, 1, 0, FourierSeries::constant(&l, 0.3));
        let e = metric_expansion(&geo, &[0.3], [t, 0.0, 0.0, 0.0]);
        assert!((e.horizontal[0] - (1.0 + 2.0 * c * t + c * c * t * t)).abs() < 1e-15);
        let e0 = metric_expansion(&geo, &[0.3], [0.0; 4]);
        assert_eq!(e0.horizontal, vec![1.0]);
        assert_eq!(e0.vertical, [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]);
    }

    #[test]
    fn volume_factor_has_no_linear_term_when_minimal() {
        let l = [TAU, TAU];
        let c = 0.5;
        let geo = GeometryData::flat(&l)
            .with_h(0, 0, 1, FourierSeries::constant(&l, c))
            .with_h(1, 1, 1, FourierSeries::constant(&l, -c))
            .with_h(0, 1, 2, FourierSeries::constant(&l, 0.3));
        geo.validate().unwrap();
        let dir = [0.3, 0.5, -0.6, 0.2];
        // cubic fit through t = ±δ, ±2δ isolates the linear coefficient
        let f = |t: f64| metric_expansion(&geo, &[0.1, 0.2], dir.map(|v| v * t)).volume_factor - 1.0;
        let dl = 1e-2;
        let lin = (8.0 * (f(dl) - f(-dl)) - (f(2.0 * dl) - f(-2.0 * dl))) / (12.0 * dl);
        assert!(lin.abs() < 1e-9, "{lin}");
        let quad = (f(dl) + f(-dl)) / (2.0 * dl * dl);
        assert!(quad.abs() > 1e-3);
        // a non-minimal h gives a linear term
        let nm = GeometryData::flat(&l).with_h(0, 0, 1, FourierSeries::constant(&l, c));
        let g = |t: f64| metric_expansion(&nm, &[0.1, 0.2], dir.map(|v| v * t)).volume_factor - 1.0;
        let lin = (g(dl) - g(-dl)) / (2.0 * dl);
        assert!((lin - c * dir[1]).abs() < 1e-4);
    }

    #[test]
    fn closed_form_curvature_matches_finite_differences() {
        let eps = 0.2;
        let l = [TAU];
        let gd = sin_v(eps, 0.3).with_lambda(FourierSeries::constant(&l, 1.2).with_mode(&[1], 0.1, 0.0));
        let geo = GeometryData::flat(&l);
        let mut errs = Vec::new();
        for h in [0.04f64, 0.02, 0.01] {
            // base resolution chosen to match the fiber refinement
            let nb = (0.2 / h).round() as usize * 16;
            let grid = ProductGrid::new(&[nb], &l, 5, h, eps).unwrap().with_center([0.05, -0.1, 0.12, 0.03]);
            let a = build_connection(&gd, &geo, &grid).unwrap();
            let f = ops::curvature(&grid, &a.field).unwrap();
            let p = 3 * grid.fiber_points() + grid.fiber_center_index();
            let fr = a.two_form_to_frame(p, f.at(p), Frame::Parallel);
            let cl = a.curvature_closed_at(p, Frame::Parallel);
            errs.push(fr.iter().zip(&cl).map(|(u, v)| (*u - *v).max_abs()).fold(0.0, f64::max));
        }
        for w in errs.windows(2) {
            let o = (w[0] / w[1]).log2();
            assert!((1.7..2.3).contains(&o), "{errs:?}");
        }
    }

    #[test]
    fn frame_change_consistency() {
        let l = [TAU, TAU];
        let th = FourierSeries::constant(&l, 0.2).with_mode(&[0, 1], 0.1, 0.0);
        let gd = GluingData::flat(0.1, &l)
            .with_v(1, FourierSeries::zero(&l).with_mode(&[1, 1], 0.2, 0.1))
            .with_lambda(FourierSeries::constant(&l, 1.3).with_mode(&[1, 0], 0.0, 0.2))
            .with_theta(0, 2, FourierSeries::constant(&l, 0.2))
            .with_theta(1, 2, th);
        let grid = ProductGrid::scaled(&[4, 4], &l, 5, 4.0, 0.1).unwrap();
        let a = build_connection(&gd, &GeometryData::flat(&l), &grid).unwrap();
        for p in (0..grid.npts()).step_by(29) {
            let lc = a.curvature_closed_at(p, Frame::LeviCivita);
            let tr = a.curvature_transported(p);
            let e = lc.iter().zip(&tr).map(|(u, v)| (*u - *v).max_abs()).fold(0.0, f64::max);
            assert!(e < 1e-10, "{e}");
        }
        // w = 0 is the instanton center, where only the ε∇v terms survive
        for b in 0..grid.base_points() {
            let p = b * grid.fiber_points() + grid.fiber_center_index();
            let x = a.base_x(p);
            let loc = a.prep.local(&x);
            let par = gd.params_at(&x);
            let f = curvature_closed(&par, par.center());
            let lc = a.curvature_closed_at(p, Frame::LeviCivita);
            for i in 0..2 {
                for al in 0..4 {
                    let mut expect = LieValue::ZERO;
                    for r in 0..4 {
                        let nv = loc.dv[i][r] + (0..4).map(|s| loc.theta[i][r][s] * loc.v[s]).sum::<f64>();
                        expect -= f.get(r, al) * (0.1 * nv);
                    }
                    assert!((lc[pair_slot(6, i, 2 + al)] - expect).max_abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn analytic_residual_vanishes_for_flat_data() {
        let gd = GluingData::flat(0.1, &[TAU]);
        let prep = Prepared::new(&gd, &GeometryData::flat(&[TAU]));
        for w in [[0.03, -0.02, 0.05, 0.01], [0.2, 0.1, -0.3, 0.4]] {
            let r = analytic_residual_at(&prep, &[0.4], w, MetricChoice::Expanded);
            assert!(r.iter().all(|v| v.max_abs() < 1e-9), "{r:?}");
        }
    }

    #[test]
    fn analytic_and_discrete_residuals_agree() {
        let eps = 0.2;
        let l = [TAU];
        let gd = sin_v(eps, 0.3).with_lambda(FourierSeries::constant(&l, 1.1).with_mode(&[1], 0.1, 0.0));
        let geo = GeometryData::flat(&l).with_r_normal(0, 1, 1, 0, FourierSeries::constant(&l, 0.5));
        let mut errs = Vec::new();
        for h in [0.04f64, 0.02, 0.01] {
            let nb = (0.2 / h).round() as usize * 16;
            let grid = ProductGrid::new(&[nb], &l, 5, h, eps).unwrap().with_center([0.05, -0.1, 0.12, 0.03]);
            let a = build_connection(&gd, &geo, &grid).unwrap();
            let spec = WeightSpec::default_for(eps);
            let (an, _) = ym_residual(&a, MetricChoice::Expanded, ResidualMode::Analytic, spec).unwrap();
            let (di, _) = ym_residual(&a, MetricChoice::Expanded, ResidualMode::Discrete, spec).unwrap();
            let p = 5 * grid.fiber_points() + grid.fiber_center_index();
            let scale = an.at(p).iter().map(|v| v.max_abs()).fold(0.0, f64::max);
            assert!(scale > 1e-3);
            errs.push(an.at(p).iter().zip(di.at(p)).map(|(u, v)| (*u - *v).max_abs()).fold(0.0, f64::max));
        }
        for w in errs.windows(2) {
            let o = (w[0] / w[1]).log2();
            assert!((1.7..2.3).contains(&o), "{errs:?}");
        }
    }

    #[test]
    fn discrete_flat_residual_is_second_order() {
        let gd = GluingData::flat(0.2, &[TAU]);
        let mut errs = Vec::new();
        for h in [0.04f64, 0.02, 0.01] {
            let grid = ProductGrid::new(&[4], &[TAU], 5, h, 0.2).unwrap().with_center([0.05, -0.1, 0.12, 0.03]);
            let a = build_connection(&gd, &GeometryData::flat(&[TAU]), &grid).unwrap();
            let (r, _) = ym_residual(&a, MetricChoice::Product, ResidualMode::Discrete, WeightSpec::default_for(0.2)).unwrap();
            let p = grid.fiber_center_index();
            errs.push(r.at(p).iter().map(|v| v.max_abs()).fold(0.0, f64::max));
        }
        for w in errs.windows(2) {
            let o = (w[0] / w[1]).log2();
            assert!((1.8..2.2).contains(&o), "{errs:?}");
        }
    }

    #[test]
    fn vertical_divergence_vanishes() {
        let eps = 0.2;
        let l = [TAU];
        let gd = sin_v(eps, 0.3)
            .with_lambda(FourierSeries::constant(&l, 1.1).with_mode(&[1], 0.1, 0.0))
            .with_theta(0, 1, FourierSeries::constant(&l, 0.3));
        let mut errs = Vec::new();
        for h in [0.04f64, 0.02, 0.01] {
            let grid = ProductGrid::new(&[8], &l, 5, h, eps).unwrap().with_center([0.05, -0.1, 0.12, 0.03]);
            let a = build_connection(&gd, &GeometryData::flat(&l), &grid).unwrap();
            let p = 2 * grid.fiber_points() + grid.fiber_center_index();
            errs.push(vertical_divergence(&a, p)[0].max_abs());
        }
        for w in errs.windows(2) {
            let o = (w[0] / w[1]).log2();
            assert!((1.8..2.2).contains(&o), "{errs:?}");
        }
    }

    #[test]
    fn inverse_det_matches_nalgebra() {
        let a = [4.0f64, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0];
        let (inv, det) = inverse_det(&a, 3);
        let na = nalgebra::Matrix3::from_row_slice(&a);
        let ni = na.try_inverse().unwrap();
        assert!((det - na.determinant()).abs() < 1e-12);
        for i in 0..3 {
            for j in 0..3 {
                assert!((inv[i * 3 + j] - ni[(i, j)]).abs() < 1e-12);
            }
        }
    }
}

