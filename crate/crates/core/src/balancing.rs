//! Reduction to the base torus: the fiberwise projection of the residual
//! onto the instanton kernel, its closed forms, the linear operator acting
//! on `(w, μ, r)` and the fixed-point balancing solve.

use crate::fourier::FourierSeries;
use crate::gluing::{analytic_residual_at, ApproxConnection, GeometryData, GluingData, MetricChoice, Prepared};
use crate::grid::ProductGrid;
use crate::instanton::{curvature_closed, kernel_element, tail_moment3, tail_moment5, InstantonParams, KernelCoeffs};
use crate::lie::{LieValue, SkewPlus};
use crate::projection::physical_coeffs;
use crate::quadrature::BallQuadrature;
use crate::report::{fmt_f64, Table};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use rayon::prelude::*;
use std::path::Path;

/// Largest accepted condition number of the fiber Gram matrix.
pub const MAX_GRAM_CONDITION: f64 = 1e8;
/// Largest accepted condition number of the operator restricted to the
/// complement of its kernel.
pub const MAX_JACOBI_CONDITION: f64 = 1e10;
/// Values per base point: `v` (4), `λ` (1), `θ` (3).
pub const SLOTS: usize = 8;

/// Uniform sample grid on the base torus, last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseGrid {
    pub lengths: Vec<f64>,
    pub counts: Vec<usize>,
}

impl BaseGrid {
    pub fn new(lengths: &[f64], counts: &[usize]) -> Result<Self> {
        if lengths.len() != counts.len() || lengths.is_empty() || lengths.len() > crate::fourier::MAX_BASE_DIM {
            return Err(Error::Shape("base grid needs one count per torus direction (1 to 3)".into()));
        }
        if counts.iter().any(|&n| n == 0) || lengths.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::InvalidParameter("base grid counts and lengths must be positive".into()));
        }
        Ok(Self { lengths: lengths.to_vec(), counts: counts.to_vec() })
    }

    pub fn of(grid: &ProductGrid) -> Self {
        Self { lengths: grid.base_lengths.clone(), counts: grid.base_counts.clone() }
    }

    pub fn dim(&self) -> usize {
        self.lengths.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, b: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        let mut rem = b;
        for ax in (0..self.dim()).rev() {
            let n = self.counts[ax];
            x[ax] = (rem % n) as f64 * self.lengths[ax] / n as f64;
            rem /= n;
        }
        x
    }
}

/// A section of `N ⊕ R ⊕ Λ₊²` sampled on the base grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceTriple {
    pub base: BaseGrid,
    pub v: Vec<[f64; 4]>,
    pub lambda: Vec<f64>,
    pub theta: Vec<SkewPlus>,
}

impl BalanceTriple {
    pub fn zeros(base: &BaseGrid) -> Self {
        let n = base.len();
        Self { base: base.clone(), v: vec![[0.0; 4]; n], lambda: vec![0.0; n], theta: vec![SkewPlus::ZERO; n] }
    }

    pub fn from_fn(base: &BaseGrid, f: impl Fn(&[f64]) -> ([f64; 4], f64, SkewPlus) + Sync) -> Self {
        let vals: Vec<_> = (0..base.len()).into_par_iter().map(|b| f(&base.point(b))).collect();
        let mut t = Self::zeros(base);
        for (b, (v, l, th)) in vals.into_iter().enumerate() {
            t.v[b] = v;
            t.lambda[b] = l;
            t.theta[b] = th;
        }
        t
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    pub fn get(&self, b: usize) -> [f64; SLOTS] {
        let (v, t) = (self.v[b], self.theta[b]);
        [v[0], v[1], v[2], v[3], self.lambda[b], t.a, t.b, t.c]
    }

    pub fn set(&mut self, b: usize, s: [f64; SLOTS]) {
        self.v[b] = [s[0], s[1], s[2], s[3]];
        self.lambda[b] = s[4];
        self.theta[b] = SkewPlus::new(s[5], s[6], s[7]);
    }

    /// Slot-major layout: entry `k·N + b` holds slot `k` at point `b`.
    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.len();
        let mut out = DVector::zeros(SLOTS * n);
        for b in 0..n {
            for (k, s) in self.get(b).into_iter().enumerate() {
                out[k * n + b] = s;
            }
        }
        out
    }

    pub fn from_vector(base: &BaseGrid, x: &DVector<f64>) -> Self {
        let n = base.len();
        assert_eq!(x.len(), SLOTS * n, "vector length does not match the base grid");
        let mut t = Self::zeros(base);
        for b in 0..n {
            t.set(b, std::array::from_fn(|k| x[k * n + b]));
        }
        t
    }

    fn zip(&self, o: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.base, o.base, "triples live on different base grids");
        let mut t = Self::zeros(&self.base);
        for b in 0..self.len() {
            let (x, y) = (self.get(b), o.get(b));
            t.set(b, std::array::from_fn(|k| f(x[k], y[k])));
        }
        t
    }

    pub fn add(&self, o: &Self) -> Self {
        self.zip(o, |a, b| a + b)
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.zip(o, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.zip(self, |a, _| s * a)
    }

    pub fn max_abs(&self) -> f64 {
        self.slot_max().into_iter().fold(0.0, f64::max)
    }

    /// Largest entry of each slot `(v, λ, θ)`.
    pub fn slot_max(&self) -> [f64; 3] {
        let mut m = [0.0f64; 3];
        for b in 0..self.len() {
            let s = self.get(b);
            for (k, x) in s.iter().enumerate() {
                let slot = match k {
                    0..=3 => 0,
                    4 => 1,
                    _ => 2,
                };
                m[slot] = m[slot].max(x.abs());
            }
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        (0..self.len()).all(|b| self.get(b).iter().all(|x| x.is_finite()))
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["base_index", "v0", "v1", "v2", "v3", "lambda", "theta0", "theta1", "theta2"]);
        for b in 0..self.len() {
            let mut row = vec![b.to_string()];
            row.extend(self.get(b).iter().map(|&x| fmt_f64(x)));
            t.push(row);
        }
        t
    }

    pub fn write_csv(&self, path: &Path, comments: &[String]) -> Result<()> {
        let mut t = self.to_table();
        for c in comments {
            t.comment(c.clone());
        }
        t.write(path)
    }
}

/// Ball quadrature in the fiber, `rmax` in physical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiberQuadrature {
    pub rmax: f64,
    pub n_rad: usize,
    pub n_ang: usize,
}

impl FiberQuadrature {
    pub fn for_eps(eps: f64) -> Self {
        Self { rmax: 16.0 * eps, n_rad: 40, n_ang: 6 }
    }

    pub fn with_rmax(mut self, rmax: f64) -> Self {
        self.rmax = rmax;
        self
    }

    pub fn with_nodes(mut self, n_rad: usize, n_ang: usize) -> Self {
        self.n_rad = n_rad;
        self.n_ang = n_ang;
        self
    }
}

/// Kernel coordinates of a vertical 1-form given by its comoving `dw`
/// components, returned in physical units (translations scaled by `λ`).
pub fn fiber_projection(
    eps: f64,
    lam: f64,
    fq: &FiberQuadrature,
    field: impl Fn([f64; 4]) -> [LieValue; 4],
) -> Result<KernelCoeffs> {
    let quad = BallQuadrature::new(eps, fq.rmax / lam, fq.n_rad, fq.n_ang);
    let basic = InstantonParams::basic(eps);
    let mut gram = SMatrix::<f64, 8, 8>::zeros();
    let mut beta = SVector::<f64, 8>::zeros();
    for (&w, &wt) in quad.nodes.iter().zip(&quad.weights) {
        let k: [[LieValue; 4]; 8] = std::array::from_fn(|j| kernel_element(&basic, &KernelCoeffs::basis(j), w));
        let b = field(w);
        for j in 0..8 {
            beta[j] += wt * (0..4).map(|a| b[a].inner(k[j][a])).sum::<f64>();
            for l in 0..=j {
                gram[(j, l)] += wt * (0..4).map(|a| k[j][a].inner(k[l][a])).sum::<f64>();
            }
        }
    }
    for j in 0..8 {
        for l in j + 1..8 {
            gram[(j, l)] = gram[(l, j)];
        }
    }
    let sv = gram.singular_values();
    let cond = sv.max() / sv.min();
    if !(cond < MAX_GRAM_CONDITION) {
        return Err(Error::InvalidParameter(format!("fiber Gram matrix is ill-conditioned (condition {cond:.3e})")));
    }
    let c = gram.cholesky().ok_or_else(|| Error::InvalidParameter("fiber Gram matrix is not positive".into()))?.solve(&beta);
    let c: [f64; 8] = std::array::from_fn(|j| c[j]);
    Ok(physical_coeffs(&c, lam))
}

fn coeffs_slot(k: &KernelCoeffs) -> ([f64; 4], f64, SkewPlus) {
    (k.w, k.mu, k.r)
}

/// `Π(D*F)` of the glued connection at every base point, with the fiber
/// integrals evaluated by quadrature of the exact pointwise residual.
pub fn project_residual(
    gd: &GluingData,
    geo: &GeometryData,
    base: &BaseGrid,
    fq: &FiberQuadrature,
    choice: MetricChoice,
) -> Result<BalanceTriple> {
    if base.lengths != gd.lengths || geo.lengths != gd.lengths {
        return Err(Error::Shape("gluing data, geometry and base grid live on different tori".into()));
    }
    let prep = Prepared::new(gd, geo);
    let m = gd.base_dim();
    let vals: Vec<Result<KernelCoeffs>> = (0..base.len())
        .into_par_iter()
        .map(|b| {
            let x = base.point(b);
            let lam = gd.lambda.eval_f64(&x);
            fiber_projection(gd.eps, lam, fq, |w| {
                let r = analytic_residual_at(&prep, &x, w, choice);
                std::array::from_fn(|a| r[m + a])
            })
        })
        .collect();
    let mut out = BalanceTriple::zeros(base);
    for (b, k) in vals.into_iter().enumerate() {
        let (v, l, t) = coeffs_slot(&k?);
        out.v[b] = v;
        out.lambda[b] = l;
        out.theta[b] = t;
    }
    Ok(out)
}

/// Projection for the product metric on the connection's base grid.
pub fn project_residual_flat(conn: &ApproxConnection, fq: &FiberQuadrature) -> Result<BalanceTriple> {
    let geo = GeometryData::flat(&conn.gd.lengths);
    project_residual(&conn.gd, &geo, &BaseGrid::of(&conn.grid), fq, MetricChoice::Product)
}

/// Projection for the expanded metric of the connection's geometry.
pub fn project_residual_curved(conn: &ApproxConnection, fq: &FiberQuadrature) -> Result<BalanceTriple> {
    conn.geo.validate()?;
    project_residual(&conn.gd, &conn.geo, &BaseGrid::of(&conn.grid), fq, MetricChoice::Expanded)
}

/// Derivative series needed by the closed forms.
struct ClosedForm {
    m: usize,
    lam: FourierSeries,
    dlam: Vec<FourierSeries>,
    laplam: FourierSeries,
    v: [FourierSeries; 4],
    dv: Vec<[FourierSeries; 4]>,
    lapv: [FourierSeries; 4],
    theta: Vec<[FourierSeries; 3]>,
    // ∂_i θ_i (no sum)
    dtheta: Vec<[FourierSeries; 3]>,
}

impl ClosedForm {
    fn new(gd: &GluingData) -> Self {
        let m = gd.base_dim();
        Self {
            m,
            lam: gd.lambda.clone(),
            dlam: (0..m).map(|i| gd.lambda.derivative(i)).collect(),
            laplam: gd.lambda.laplacian(),
            v: gd.v.clone(),
            dv: (0..m).map(|i| gd.v.each_ref().map(|f| f.derivative(i))).collect(),
            lapv: gd.v.each_ref().map(|f| f.laplacian()),
            theta: gd.theta.clone(),
            dtheta: (0..m).map(|i| gd.theta[i].each_ref().map(|f| f.derivative(i))).collect(),
        }
    }

    /// `(Δv, λ⁻¹Δλ − ¼|θ|², λ⁻²Σ∇_i(λ²θ_i))` with `∇_i v = ∂_i v + θ_i v`.
    fn flat_at(&self, x: &[f64]) -> ([f64; 4], f64, SkewPlus) {
        let ev3 = |f: &[FourierSeries; 3]| SkewPlus::new(f[0].eval_f64(x), f[1].eval_f64(x), f[2].eval_f64(x));
        let lam = self.lam.eval_f64(x);
        let v = self.v.each_ref().map(|f| f.eval_f64(x));
        let mut dv = self.lapv.each_ref().map(|f| f.eval_f64(x));
        let mut slot_l = self.laplam.eval_f64(x) / lam;
        let mut slot_t = SkewPlus::ZERO;
        for i in 0..self.m {
            let th = ev3(&self.theta[i]);
            let dth = ev3(&self.dtheta[i]);
            let dvi = self.dv[i].each_ref().map(|f| f.eval_f64(x));
            let a = dth.apply(v);
            let b = th.apply(dvi);
            let c = th.apply(th.apply(v));
            for r in 0..4 {
                dv[r] += a[r] + 2.0 * b[r] + c[r];
            }
            slot_l -= 0.25 * th.norm_sq();
            let dl = self.dlam[i].eval_f64(x);
            slot_t = slot_t + dth + th * (2.0 * dl / lam);
        }
        (dv, slot_l, slot_t)
    }
}

/// Curvature corrections `(Σ h_{ij,ρ}h_{ij,σ}v_σ + Σ R_{iρσi}v_σ,
/// ¼Σ h_{ij,ρ}² + ¼Σ R_{iρρi})` at `x`.
pub fn curvature_terms(geo: &GeometryData, x: &[f64], v: [f64; 4]) -> ([f64; 4], f64) {
    let (pot, q) = normal_potential(geo, x);
    let mut out = [0.0; 4];
    for r in 0..4 {
        for s in 0..4 {
            out[r] += pot[r][s] * v[s];
        }
    }
    (out, q)
}

/// Potential of the Jacobi block, `P_{ρσ} = Σ h_{ij,ρ}h_{ij,σ} + Σ R_{iρσi}`,
/// and the scalar `¼(Σ h_{ij,ρ}² + Σ R_{iρρi})`.
pub fn normal_potential(geo: &GeometryData, x: &[f64]) -> ([[f64; 4]; 4], f64) {
    let m = geo.base_dim();
    let h = geo.h.eval_f64(x);
    let rm = geo.r_mixed.eval_f64(x);
    let mut p = [[0.0; 4]; 4];
    for r in 0..4 {
        for s in 0..4 {
            for i in 0..m {
                for j in 0..m {
                    p[r][s] += h[(i * m + j) * 4 + r] * h[(i * m + j) * 4 + s];
                }
                p[r][s] += rm[((i * 4 + r) * 4 + s) * m + i];
            }
        }
    }
    let q = 0.25 * (0..4).map(|r| p[r][r]).sum::<f64>();
    (p, q)
}

/// Closed form of the projection for the product metric.
pub fn closed_form_flat(gd: &GluingData, base: &BaseGrid) -> BalanceTriple {
    let cf = ClosedForm::new(gd);
    BalanceTriple::from_fn(base, |x| cf.flat_at(x))
}

/// Closed form including the second fundamental form and ambient curvature.
pub fn closed_form_curved(gd: &GluingData, geo: &GeometryData, base: &BaseGrid) -> BalanceTriple {
    let cf = ClosedForm::new(gd);
    BalanceTriple::from_fn(base, |x| {
        let (mut v, l, t) = cf.flat_at(x);
        let vv = cf.v.each_ref().map(|f| f.eval_f64(x));
        let (dv, q) = curvature_terms(geo, x, vv);
        for r in 0..4 {
            v[r] += dv[r];
        }
        (v, l + q, t)
    })
}

/// Normalized fiber pairing constants: translation (`4π²`), dilation
/// (`8π²`) and rotation (`2π²`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairingConstants {
    pub translation: f64,
    pub dilation: f64,
    pub rotation: f64,
}

impl PairingConstants {
    /// Ratios relative to the rotation constant (ideally 2 : 4 : 1).
    pub fn ratios(&self) -> [f64; 3] {
        [self.translation / self.rotation, self.dilation / self.rotation, 1.0]
    }
}

/// `∫ Σ_{αβ} ⟨F(e_i, e_β), F(e_α, e_β)⟩ X^α` over the ball, where the mixed
/// components are `F(e_i, e_β) = −Σ_ρ F_{ρβ} c_ρ` with `c = coef(z)`.
/// `tail` is the radial moment matching the integrand's decay.
fn pairing_integral(
    eps: f64,
    fq: &FiberQuadrature,
    coef: impl Fn([f64; 4]) -> [f64; 4],
    x_field: impl Fn([f64; 4]) -> [f64; 4],
    tail: fn(f64, f64) -> f64,
) -> f64 {
    let p = InstantonParams::basic(eps);
    let quad = BallQuadrature::new(eps, fq.rmax, fq.n_rad, fq.n_ang);
    let raw = quad.integrate(|z| {
        let f = curvature_closed(&p, z);
        let c = coef(z);
        let xf = x_field(z);
        let mut acc = 0.0;
        for be in 0..4 {
            let mut mixed = LieValue::ZERO;
            for r in 0..4 {
                mixed -= f.get(r, be) * c[r];
            }
            for al in 0..4 {
                acc += mixed.inner(f.get(al, be)) * xf[al];
            }
        }
        acc
    });
    let total = tail(eps, 0.0);
    raw * total / (total - tail(eps, fq.rmax))
}

/// The three fiber pairing constants at `λ = 1`, each normalized by the
/// product of the base derivative and the kernel coefficient it pairs.
pub fn pairing_constants(eps: f64, fq: &FiberQuadrature) -> PairingConstants {
    let e1 = [1.0, 0.0, 0.0, 0.0];
    // ∇v = e₁ against w = e₁
    let it = pairing_integral(eps, fq, |_| e1.map(|c| c * eps), |_| e1.map(|c| c * eps), tail_moment3);
    // λ⁻¹∇λ = 1 against μ = 1
    let id = pairing_integral(eps, fq, |z| z, |z| z, tail_moment5);
    // θ = r = first basis element, ⟨θ, r⟩ = 4
    let r = SkewPlus::basis(0);
    let ir = pairing_integral(eps, fq, |z| r.apply(z), |z| r.apply(z), tail_moment5);
    let e2 = eps * eps;
    PairingConstants { translation: -it / e2, dilation: -id / e2, rotation: -ir / (e2 * r.inner(r)) }
}

/// One-dimensional spectral first and second derivative matrices on `n`
/// periodic samples of a circle of length `len`. The first derivative
/// drops the Nyquist mode; the second keeps it.
pub fn spectral_1d(n: usize, len: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut d1 = DMatrix::zeros(n, n);
    let mut d2 = DMatrix::zeros(n, n);
    let h = len / n as f64;
    let kmax = n / 2;
    for j in 0..n {
        for l in 0..n {
            let dx = (j as f64 - l as f64) * h;
            let (mut a, mut b) = (0.0, 0.0);
            for k in 1..=kmax {
                let kap = 2.0 * std::f64::consts::PI * k as f64 / len;
                let nyq = 2 * k == n;
                let wgt = if nyq { 1.0 } else { 2.0 };
                if !nyq {
                    a -= wgt * kap * (kap * dx).sin();
                }
                b -= wgt * kap * kap * (kap * dx).cos();
            }
            d1[(j, l)] = a / n as f64;
            d2[(j, l)] = b / n as f64;
        }
    }
    (d1, d2)
}

/// Spectral derivative matrices on the full base grid: one first
/// derivative per axis and the Laplacian.
pub fn spectral_base(base: &BaseGrid) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
    let dim = base.dim();
    let n = base.len();
    let mut firsts = Vec::with_capacity(dim);
    let mut lap = DMatrix::zeros(n, n);
    for ax in 0..dim {
        let (d1, d2) = spectral_1d(base.counts[ax], base.lengths[ax]);
        let before: usize = base.counts[..ax].iter().product();
        let after: usize = base.counts[ax + 1..].iter().product();
        let lift = |d: &DMatrix<f64>| DMatrix::<f64>::identity(before, before).kronecker(&d.kronecker(&DMatrix::identity(after, after)));
        firsts.push(lift(&d1));
        lap += lift(&d2);
    }
    (firsts, lap)
}

/// The reduced operator `J` on the base grid together with its kernel `V`.
#[derive(Debug, Clone)]
pub struct JacobiSystem {
    pub base: BaseGrid,
    /// `λ` at the base points.
    pub lambda: Vec<f64>,
    w_block: DMatrix<f64>,
    mu_block: DMatrix<f64>,
    r_block: DMatrix<f64>,
    /// Basis of `V`, orthonormal in the weighted inner product.
    kernel: Vec<DVector<f64>>,
    weight: DVector<f64>,
    reduced: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    /// Condition number of `J` restricted to the complement of `V`.
    pub condition: f64,
}

impl JacobiSystem {
    /// Assembles the three blocks from the geometry and `λ`:
    /// `Δw + Pw`, `λ⁻¹Δ(λμ) + qμ` and `λ⁻²Σ∂_i(λ²∂_i r)`, all built on the
    /// spectral Laplacian.
    pub fn assemble(gd: &GluingData, geo: &GeometryData, base: &BaseGrid) -> Result<Self> {
        if base.lengths != gd.lengths || geo.lengths != gd.lengths {
            return Err(Error::Shape("gluing data, geometry and base grid live on different tori".into()));
        }
        let n = base.len();
        let pts: Vec<Vec<f64>> = (0..n).map(|b| base.point(b)).collect();
        let lambda: Vec<f64> = pts.iter().map(|x| gd.lambda.eval_f64(x)).collect();
        let pots: Vec<([[f64; 4]; 4], f64)> = pts.iter().map(|x| normal_potential(geo, x)).collect();
        let (_, lap) = spectral_base(base);

        let mut w_block = DMatrix::zeros(4 * n, 4 * n);
        for r in 0..4 {
            w_block.view_mut((r * n, r * n), (n, n)).copy_from(&lap);
            for s in 0..4 {
                for b in 0..n {
                    w_block[(r * n + b, s * n + b)] += pots[b].0[r][s];
                }
            }
        }
        let lam = DVector::from_vec(lambda.clone());
        let lam_inv = lam.map(|l| 1.0 / l);
        let mut mu_block = DMatrix::from_diagonal(&lam_inv) * &lap * DMatrix::from_diagonal(&lam);
        for b in 0..n {
            mu_block[(b, b)] += pots[b].1;
        }
        // ∇(λ²∇r) = ½(Δ(λ²r) + λ²Δr − rΔλ²): symmetric, kills constants and
        // avoids the Nyquist null modes of the first-derivative matrices
        let lam2 = lam.component_mul(&lam);
        let l2 = DMatrix::from_diagonal(&lam2);
        let lap_l2 = &lap * &lam2;
        let div = (&lap * &l2 + &l2 * &lap - DMatrix::from_diagonal(&lap_l2)) * 0.5;
        let r_block = DMatrix::from_diagonal(&lam2.map(|l| 1.0 / l)) * div;

        let mut weight = DVector::from_element(SLOTS * n, 1.0);
        for k in 4..SLOTS {
            weight.rows_mut(k * n, n).copy_from(&lam2);
        }
        let mut kernel: Vec<DVector<f64>> = Vec::new();
        for k in 4..SLOTS {
            let mut e = DVector::zeros(SLOTS * n);
            e.rows_mut(k * n, n).fill(1.0);
            let nrm = e.dot(&weight.component_mul(&e)).sqrt();
            kernel.push(e / nrm);
        }

        let mut sys = Self {
            base: base.clone(),
            lambda,
            w_block,
            mu_block,
            r_block,
            kernel,
            weight,
            reduced: None,
            condition: f64::INFINITY,
        };
        let j = sys.matrix();
        let p = sys.projector();
        let q = DMatrix::identity(SLOTS * n, SLOTS * n) - &p;
        let a = &q * j * &q + &p;
        let sv = a.clone().singular_values();
        let (smax, smin) = (sv.max(), sv.min());
        // the identity on V should not set the scale of the condition number
        sys.condition = smax.max(1.0) / smin;
        if sys.is_nondegenerate() {
            sys.reduced = Some(a.lu());
        }
        Ok(sys)
    }

    /// Whether `J` is invertible on the complement of `V`.
    pub fn is_nondegenerate(&self) -> bool {
        self.condition < MAX_JACOBI_CONDITION
    }

    /// Dense matrix of `J` in the slot-major layout.
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.base.len();
        let mut j = DMatrix::zeros(SLOTS * n, SLOTS * n);
        j.view_mut((0, 0), (4 * n, 4 * n)).copy_from(&self.w_block);
        j.view_mut((4 * n, 4 * n), (n, n)).copy_from(&self.mu_block);
        for k in 5..SLOTS {
            j.view_mut((k * n, k * n), (n, n)).copy_from(&self.r_block);
        }
        j
    }

    /// Orthogonal projector onto `V` in the weighted inner product.
    pub fn projector(&self) -> DMatrix<f64> {
        let n = SLOTS * self.base.len();
        let mut p = DMatrix::zeros(n, n);
        for k in &self.kernel {
            p += k * k.component_mul(&self.weight).transpose();
        }
        p
    }

    /// Inner product weighting the `μ` and `r` slots by `λ²`.
    pub fn inner(&self, a: &BalanceTriple, b: &BalanceTriple) -> f64 {
        a.to_vector().dot(&self.weight.component_mul(&b.to_vector()))
    }

    pub fn apply(&self, t: &BalanceTriple) -> BalanceTriple {
        let n = self.base.len();
        let x = t.to_vector();
        let mut y = DVector::zeros(SLOTS * n);
        y.rows_mut(0, 4 * n).copy_from(&(&self.w_block * x.rows(0, 4 * n)));
        y.rows_mut(4 * n, n).copy_from(&(&self.mu_block * x.rows(4 * n, n)));
        for k in 5..SLOTS {
            y.rows_mut(k * n, n).copy_from(&(&self.r_block * x.rows(k * n, n)));
        }
        BalanceTriple::from_vector(&self.base, &y)
    }

    /// The basis of `V` as triples.
    pub fn kernel_basis(&self) -> Vec<BalanceTriple> {
        self.kernel.iter().map(|k| BalanceTriple::from_vector(&self.base, k)).collect()
    }

    /// Component of `t` orthogonal to `V`.
    pub fn project_complement(&self, t: &BalanceTriple) -> BalanceTriple {
        let mut x = t.to_vector();
        for k in &self.kernel {
            let c = k.dot(&self.weight.component_mul(&x));
            x -= k * c;
        }
        BalanceTriple::from_vector(&self.base, &x)
    }

    /// Largest entry of `J` applied to the normalized kernel basis.
    pub fn kernel_defect(&self) -> f64 {
        self.kernel_basis().iter().map(|k| self.apply(k).max_abs()).fold(0.0, f64::max)
    }

    /// The unique `z ⊥ V` with `J z − f ∈ V`.
    pub fn solve_complement(&self, f: &BalanceTriple) -> Result<BalanceTriple> {
        let lu = self.reduced.as_ref().ok_or_else(|| {
            Error::InvalidParameter(format!(
                "the reduced operator is singular beyond its four-dimensional kernel (condition {:.3e})",
                self.condition
            ))
        })?;
        let rhs = self.project_complement(f).to_vector();
        let z = lu.solve(&rhs).ok_or_else(|| Error::InvalidParameter("reduced operator solve failed".into()))?;
        Ok(BalanceTriple::from_vector(&self.base, &z))
    }
}

/// `J t` on the base grid.
pub fn jacobi_apply(sys: &JacobiSystem, t: &BalanceTriple) -> BalanceTriple {
    sys.apply(t)
}

/// Gluing data moved by `(w, μ, r)`: `v + w`, `λ(1 + μ)`, `θ + ∇r`.
pub fn perturbed_data(gd: &GluingData, z: &BalanceTriple) -> Result<GluingData> {
    let base = &z.base;
    if base.lengths != gd.lengths {
        return Err(Error::Shape("perturbation lives on a different torus".into()));
    }
    let n = base.len();
    let interp = |f: &dyn Fn(usize) -> f64| {
        let vals: Vec<f64> = (0..n).map(f).collect();
        FourierSeries::from_grid(&base.lengths, &base.counts, &vals)
    };
    let mut out = gd.clone();
    for r in 0..4 {
        out.v[r] = gd.v[r].add(&interp(&|b| z.v[b][r]));
    }
    let lam: Vec<f64> = (0..n).map(|b| gd.lambda.eval_f64(&base.point(b))).collect();
    out.lambda = gd.lambda.add(&interp(&|b| lam[b] * z.lambda[b]));
    for k in 0..3 {
        let rk = interp(&|b| z.theta[b].to_array()[k]);
        for i in 0..gd.base_dim() {
            out.theta[i][k] = gd.theta[i][k].add(&rk.derivative(i));
        }
    }
    Ok(out)
}

/// Largest deviation of the curved projection from the closed-form triple
/// at each `ε`, with `fq(ε)` as the fiber quadrature.
pub fn curved_deviation_sweep(
    gd: &GluingData,
    geo: &GeometryData,
    base: &BaseGrid,
    eps_list: &[f64],
    fq: impl Fn(f64) -> FiberQuadrature,
) -> Result<Vec<(f64, f64)>> {
    geo.validate()?;
    eps_list
        .iter()
        .map(|&eps| {
            let gd = gd.clone().with_eps(eps);
            let t = project_residual(&gd, geo, base, &fq(eps), MetricChoice::Expanded)?;
            Ok((eps, t.sub(&closed_form_curved(&gd, geo, base)).max_abs()))
        })
        .collect()
}

/// Stopping rule and damping of the balancing iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub fallback_damping: f64,
}

impl Default for BalanceOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 50, damping: 1.0, fallback_damping: 0.5 }
    }
}

/// One step of the balancing iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceIterate {
    pub iter: usize,
    /// Largest entry of the proposed update.
    pub update: f64,
    /// Largest entry of `(I − P_V)(Jz + R(z))` at the current iterate.
    pub complement: f64,
    /// Largest entry of the current iterate.
    pub size: f64,
    pub damping: f64,
}

#[derive(Debug, Clone)]
pub struct BalanceSolution {
    pub z: BalanceTriple,
    pub history: Vec<BalanceIterate>,
    /// Largest ratio of successive update sizes.
    pub contraction: f64,
    /// `(I − P_V)(Jz + R(z))` at the returned `z`.
    pub complement: f64,
}

impl BalanceSolution {
    pub fn history_table(&self) -> Table {
        let mut t = Table::new(&["iter", "update", "complement", "size", "damping"]);
        for h in &self.history {
            t.push(vec![h.iter.to_string(), fmt_f64(h.update), fmt_f64(h.complement), fmt_f64(h.size), fmt_f64(h.damping)]);
        }
        t
    }
}

/// Fixed-point solve of `z = −J⁻¹R(z)` on the complement of `V`, where
/// `R(z) = Ξ(gd(z)) − Jz` and `xi` evaluates the projected residual `Ξ`
/// for perturbed gluing data.
pub fn solve_balance<F>(sys: &JacobiSystem, gd0: &GluingData, opts: &BalanceOptions, mut xi: F) -> Result<BalanceSolution>
where
    F: FnMut(&GluingData) -> Result<BalanceTriple>,
{
    if gd0.theta.iter().flatten().any(|f| !f.is_constant() || f.constant != 0.0) {
        return Err(Error::InvalidParameter("the balancing solve assumes θ = 0 in the initial data".into()));
    }
    if sys.base.lengths != gd0.lengths {
        return Err(Error::Shape("operator and gluing data live on different tori".into()));
    }
    if !sys.is_nondegenerate() {
        sys.solve_complement(&BalanceTriple::zeros(&sys.base))?;
    }
    let mut z = BalanceTriple::zeros(&sys.base);
    let mut history = Vec::new();
    let mut damping = opts.damping;
    let mut prev: Option<f64> = None;
    let mut contraction: f64 = 0.0;
    for iter in 1..=opts.max_iter {
        let gdz = perturbed_data(gd0, &z)?;
        let xz = xi(&gdz)?;
        if !xz.is_finite() {
            return Err(Error::NoConvergence(format!("projected residual is not finite at iterate {iter}")));
        }
        let complement = sys.project_complement(&xz).max_abs();
        let rz = xz.sub(&sys.apply(&z));
        let target = sys.solve_complement(&rz)?.scale(-1.0);
        let delta = target.sub(&z);
        let update = delta.max_abs();
        if let Some(p) = prev {
            if p > 0.0 {
                contraction = contraction.max(update / p);
            }
            if update > p && damping > opts.fallback_damping {
                damping = opts.fallback_damping;
            }
        }
        history.push(BalanceIterate { iter, update, complement, size: z.max_abs(), damping });
        if update < opts.tol {
            return Ok(BalanceSolution { z, history, contraction, complement });
        }
        z = z.add(&delta.scale(damping));
        prev = Some(update);
    }
    let trail: Vec<String> = history.iter().map(|h| format!("{}:{:.3e}", h.iter, h.update)).collect();
    Err(Error::NoConvergence(format!("balancing iteration did not converge; updates {}", trail.join(" "))))
}

/// Positive solution of `Δλ + qλ = 0` on the base grid, obtained as the
/// ground state of `−Δ − q₀` with `q = q₀ + E₀` shifted so that its
/// eigenvalue vanishes; scaled so that `min λ = floor`.
#[derive(Debug, Clone)]
pub struct GroundState {
    pub lambda: FourierSeries,
    pub samples: Vec<f64>,
    /// The potential `q` at the base points.
    pub potential: Vec<f64>,
    pub shift: f64,
}

pub fn ground_state(base: &BaseGrid, q0: &[f64], floor: f64) -> Result<GroundState> {
    let n = base.len();
    if q0.len() != n {
        return Err(Error::Shape("potential does not match the base grid".into()));
    }
    let (_, lap) = spectral_base(base);
    let mut op = -lap;
    for b in 0..n {
        op[(b, b)] -= q0[b];
    }
    let op = (&op + op.transpose()) * 0.5;
    let eig = op.symmetric_eigen();
    let k = eig.eigenvalues.imin();
    let e0 = eig.eigenvalues[k];
    let mut phi: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
    if phi.iter().sum::<f64>() < 0.0 {
        phi.iter_mut().for_each(|p| *p = -*p);
    }
    let pmin = phi.iter().copied().fold(f64::INFINITY, f64::min);
    if !(pmin > 0.0) {
        return Err(Error::InvalidParameter("ground state is not positive".into()));
    }
    let samples: Vec<f64> = phi.iter().map(|p| p * floor / pmin).collect();
    Ok(GroundState {
        lambda: FourierSeries::from_grid(&base.lengths, &base.counts, &samples),
        samples,
        potential: q0.iter().map(|q| q + e0).collect(),
        shift: e0,
    })
}

/// Data whose scale solves `Δλ + qλ = 0` for the geometry's own `q`.
///
/// The second fundamental form is `h_{00,0} = −h_{11,0} = c`, the mixed
/// curvature has `R_{0ρρ0} = s` for `ρ ≠ 1`, and `R_{0110}` is chosen so that
/// `¼Σh² + ¼ΣR_{iρρi}` equals the shifted potential `q₀ + E₀`.
#[derive(Debug, Clone)]
pub struct ScaleEquationData {
    pub gd: GluingData,
    pub geo: GeometryData,
    pub ground: GroundState,
}

pub fn scale_equation_data(eps: f64, base: &BaseGrid, c: f64, s: f64, q0: &FourierSeries, floor: f64) -> Result<ScaleEquationData> {
    if base.dim() < 2 {
        return Err(Error::InvalidParameter("trace-free constant h needs a base of dimension at least 2".into()));
    }
    let samples: Vec<f64> = (0..base.len()).map(|b| q0.eval_f64(&base.point(b))).collect();
    let ground = ground_state(base, &samples, floor)?;
    let l = &base.lengths;
    let q = q0.add(&FourierSeries::constant(l, ground.shift));
    let cc = FourierSeries::constant(l, c);
    let mut geo = GeometryData::flat(l).with_h(0, 0, 0, cc.clone()).with_h(1, 1, 0, cc.scale(-1.0));
    for r in [0, 2, 3] {
        geo = geo.with_r_mixed(0, r, r, 0, FourierSeries::constant(l, s));
    }
    let r11 = q.scale(4.0).add(&FourierSeries::constant(l, -2.0 * c * c - 3.0 * s));
    geo = geo.with_r_mixed(0, 1, 1, 0, r11);
    geo.validate()?;
    let gd = GluingData::flat(eps, l).with_lambda(ground.lambda.clone());
    gd.validate()?;
    Ok(ScaleEquationData { gd, geo, ground })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn circle(n: usize) -> BaseGrid {
        BaseGrid::new(&[2.0 * PI], &[n]).unwrap()
    }

    fn sin1(c: f64) -> FourierSeries {
        FourierSeries::zero(&[2.0 * PI]).with_mode(&[1], 0.0, c)
    }

    #[test]
    fn pairing_constants_recover_fiber_integrals() {
        let eps = 0.05;
        let pc = pairing_constants(eps, &FiberQuadrature::for_eps(eps));
        let pi2 = PI * PI;
        assert!((pc.translation / (4.0 * pi2) - 1.0).abs() < 0.02, "{pc:?}");
        assert!((pc.dilation / (8.0 * pi2) - 1.0).abs() < 0.02, "{pc:?}");
        assert!((pc.rotation / (2.0 * pi2) - 1.0).abs() < 0.02, "{pc:?}");
        let r = pc.ratios();
        assert!((r[0] / 2.0 - 1.0).abs() < 0.01 && (r[1] / 4.0 - 1.0).abs() < 0.01, "{r:?}");
    }

    #[test]
    fn flat_projection_of_trivial_data_vanishes() {
        let gd = GluingData::flat(0.1, &[2.0 * PI]);
        let geo = GeometryData::flat(&[2.0 * PI]);
        let fq = FiberQuadrature::for_eps(0.1).with_nodes(16, 4);
        let t = project_residual(&gd, &geo, &circle(3), &fq, MetricChoice::Product).unwrap();
        assert!(t.max_abs() < 1e-10, "{}", t.max_abs());
    }

    #[test]
    fn flat_projection_matches_laplacian_of_offset() {
        let eps = 0.05;
        let c = 0.3;
        let gd = GluingData::flat(eps, &[2.0 * PI]).with_v(0, sin1(c));
        let geo = GeometryData::flat(&[2.0 * PI]);
        let base = circle(4);
        let fq = FiberQuadrature::for_eps(eps).with_nodes(32, 5);
        let t = project_residual(&gd, &geo, &base, &fq, MetricChoice::Product).unwrap();
        let cf = closed_form_flat(&gd, &base);
        for b in 0..base.len() {
            let x = base.point(b)[0];
            assert!((cf.v[b][0] + c * x.sin()).abs() < 1e-12);
            let scale = c.max(1e-12);
            assert!((t.v[b][0] - cf.v[b][0]).abs() < 0.02 * scale, "b={b} {:?} vs {:?}", t.get(b), cf.get(b));
            assert!(t.v[b][1..].iter().all(|x| x.abs() < 0.02 * scale));
            assert!(t.lambda[b].abs() < 0.02 * scale && t.theta[b].to_array().iter().all(|x| x.abs() < 0.02 * scale));
        }
    }

    #[test]
    fn spectral_matrices_differentiate_trig_polynomials() {
        let base = BaseGrid::new(&[2.0 * PI, 3.0], &[6, 5]).unwrap();
        let (d, lap) = spectral_base(&base);
        let f = |x: &[f64]| (x[0]).sin() * (2.0 * PI * x[1] / 3.0).cos();
        let k = 2.0 * PI / 3.0;
        let vals = DVector::from_iterator(base.len(), (0..base.len()).map(|b| f(&base.point(b))));
        let dx = &d[0] * &vals;
        let dy = &d[1] * &vals;
        let l = &lap * &vals;
        for b in 0..base.len() {
            let x = base.point(b);
            assert!((dx[b] - x[0].cos() * (k * x[1]).cos()).abs() < 1e-12);
            assert!((dy[b] + k * x[0].sin() * (k * x[1]).sin()).abs() < 1e-12);
            assert!((l[b] + (1.0 + k * k) * f(&x)).abs() < 1e-11);
        }
        assert!((&d[0] + d[0].transpose()).amax() < 1e-13);
    }

    fn sample_system() -> (GluingData, GeometryData, BaseGrid) {
        let l = [2.0 * PI, 2.0 * PI];
        let base = BaseGrid::new(&l, &[6, 6]).unwrap();
        let lam = FourierSeries::constant(&l, 1.3).with_mode(&[1, 0], 0.1, 0.05).with_mode(&[0, 1], 0.0, 0.08);
        let gd = GluingData::flat(0.1, &l).with_lambda(lam);
        let c = FourierSeries::constant(&l, 0.2);
        let mut geo = GeometryData::flat(&l).with_h(0, 0, 0, c.clone()).with_h(1, 1, 0, c.scale(-1.0));
        for r in 1..4 {
            geo = geo.with_r_mixed(0, r, r, 0, FourierSeries::constant(&l, -0.3));
        }
        (gd, geo, base)
    }

    #[test]
    fn jacobi_blocks_do_not_mix_slots() {
        let (gd, geo, base) = sample_system();
        let sys = JacobiSystem::assemble(&gd, &geo, &base).unwrap();
        for k in 0..SLOTS {
            let mut t = BalanceTriple::zeros(&base);
            let mut s = [0.0; SLOTS];
            s[k] = 1.0;
            t.set(7, s);
            let y = sys.apply(&t);
            let owner = |j: usize| match j {
                0..=3 => 0,
                4 => 1,
                _ => 2 + j,
            };
            for b in 0..base.len() {
                let yb = y.get(b);
                for j in 0..SLOTS {
                    // r components are decoupled from each other as well
                    let same = owner(j) == owner(k) || (j < 4 && k < 4);
                    if !same {
                        assert_eq!(yb[j], 0.0, "slot {k} leaked into {j}");
                    }
                }
            }
        }
    }

    #[test]
    fn rotation_block_is_weighted_symmetric() {
        let (gd, geo, base) = sample_system();
        let sys = JacobiSystem::assemble(&gd, &geo, &base).unwrap();
        let mk = |seed: f64| {
            BalanceTriple::from_fn(&base, |x| ([0.0; 4], 0.0, SkewPlus::new((x[0] + seed).sin(), (x[1] * 2.0).cos() * seed, 0.3)))
        };
        let (a, b) = (mk(0.4), mk(1.7));
        let lhs = sys.inner(&sys.apply(&a), &b);
        let rhs = sys.inner(&a, &sys.apply(&b));
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0), "{lhs} {rhs}");
        let (ma, mb) = (
            BalanceTriple::from_fn(&base, |x| ([0.0; 4], x[0].sin() + 0.2, SkewPlus::ZERO)),
            BalanceTriple::from_fn(&base, |x| ([0.0; 4], (x[1] + x[0]).cos(), SkewPlus::ZERO)),
        );
        let l2 = sys.inner(&sys.apply(&ma), &mb);
        let r2 = sys.inner(&ma, &sys.apply(&mb));
        assert!((l2 - r2).abs() < 1e-10 * l2.abs().max(1.0));
    }

    #[test]
    fn jacobi_examples() {
        let l = [2.0 * PI];
        let base = circle(8);
        let gd = GluingData::flat(0.1, &l);
        let geo = GeometryData::flat(&l);
        let sys = JacobiSystem::assemble(&gd, &geo, &base).unwrap();
        let t = BalanceTriple::from_fn(&base, |x| ([x[0].sin(), 0.0, 0.0, 0.0], 0.0, SkewPlus::ZERO));
        let y = sys.apply(&t);
        for b in 0..base.len() {
            let x = base.point(b)[0];
            assert!((y.v[b][0] + x.sin()).abs() < 1e-12);
            assert!(y.get(b)[1..].iter().all(|v| v.abs() < 1e-12));
        }
        for k in sys.kernel_basis() {
            assert!(sys.apply(&k).max_abs() < 1e-12);
        }
        // constant w is a kernel direction outside V
        assert!(!sys.is_nondegenerate());
        let gd0 = GluingData::flat(0.1, &l);
        let err = solve_balance(&sys, &gd0, &BalanceOptions::default(), |_| Ok(BalanceTriple::zeros(&base)));
        assert!(matches!(err, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn ground_state_solves_the_scale_equation() {
        let l = [2.0 * PI, 2.0 * PI];
        let base = BaseGrid::new(&l, &[6, 6]).unwrap();
        let q0: Vec<f64> = (0..base.len()).map(|b| {
            let x = base.point(b);
            0.3 + 0.2 * x[0].cos() + 0.1 * x[1].sin()
        }).collect();
        let gs = ground_state(&base, &q0, 1.05).unwrap();
        let lap = gs.lambda.laplacian();
        for b in 0..base.len() {
            let x = base.point(b);
            let resid = lap.eval_f64(&x) + gs.potential[b] * gs.lambda.eval_f64(&x);
            assert!(resid.abs() < 1e-10, "{resid}");
            assert!((gs.lambda.eval_f64(&x) - gs.samples[b]).abs() < 1e-12);
        }
        assert!((gs.samples.iter().copied().fold(f64::INFINITY, f64::min) - 1.05).abs() < 1e-12);
    }

    #[test]
    fn scale_equation_data_realize_the_potential() {
        let l = [2.0 * PI, 2.0 * PI];
        let base = BaseGrid::new(&l, &[4, 4]).unwrap();
        let q0 = FourierSeries::zero(&l).with_mode(&[1, 0], 0.1, 0.0).with_mode(&[0, 1], 0.0, 0.05);
        let d = scale_equation_data(0.05, &base, 0.2, -0.1, &q0, 1.05).unwrap();
        let lap = d.gd.lambda.laplacian();
        for b in 0..base.len() {
            let x = base.point(b);
            let (_, q) = normal_potential(&d.geo, &x);
            assert!((q - d.ground.potential[b]).abs() < 1e-12);
            assert!((lap.eval_f64(&x) + q * d.gd.lambda.eval_f64(&x)).abs() < 1e-10);
        }
    }

    #[test]
    fn balance_of_exact_data_stops_at_zero() {
        let l = [2.0 * PI, 2.0 * PI];
        let base = BaseGrid::new(&l, &[4, 4]).unwrap();
        let (gd, geo, _) = sample_system();
        let gd = gd.with_lambda(FourierSeries::constant(&l, 1.0));
        let sys = JacobiSystem::assemble(&gd, &geo, &base).unwrap();
        let sol = solve_balance(&sys, &gd, &BalanceOptions::default(), |_| Ok(BalanceTriple::zeros(&base))).unwrap();
        assert_eq!(sol.history.len(), 1);
        assert_eq!(sol.z.max_abs(), 0.0);
    }

    #[test]
    fn balance_solves_a_mildly_nonlinear_model() {
        let (gd, geo, _) = sample_system();
        let l = [2.0 * PI, 2.0 * PI];
        let base = BaseGrid::new(&l, &[4, 4]).unwrap();
        let gd = gd.with_lambda(FourierSeries::constant(&l, 1.0));
        let sys = JacobiSystem::assemble(&gd, &geo, &base).unwrap();
        let forcing = BalanceTriple::from_fn(&base, |x| {
            ([0.01 * x[0].sin(), 0.0, 0.005 * x[1].cos(), 0.0], 0.01 * (x[0] + x[1]).cos(), SkewPlus::ZERO)
        });
        // Ξ(gd(z)) = J z + forcing + small quadratic term in the offset; the
        // model reads back only w and μ from the perturbed data
        let sys2 = sys.clone();
        let f2 = forcing.clone();
        let gd0 = gd.clone();
        let sol = solve_balance(&sys, &gd, &BalanceOptions::default(), move |g| {
            let z = BalanceTriple::from_fn(&base, |x| {
                let w = g.v.each_ref().map(|f| f.eval_f64(x));
                let mu = g.lambda.eval_f64(x) / gd0.lambda.eval_f64(x) - 1.0;
                (w, mu, SkewPlus::ZERO)
            });
            let mut out = sys2.apply(&z).add(&f2);
            for b in 0..out.len() {
                out.v[b][0] += 0.3 * z.v[b][0] * z.v[b][0];
            }
            Ok(out)
        })
        .unwrap();
        assert!(sol.complement < 1e-5, "{}", sol.complement);
        assert!(sol.contraction <= 0.5, "{}", sol.contraction);
    }

    #[test]
    fn flat_projection_matches_scale_laplacian() {
        let eps = 0.05;
        let l = [2.0 * PI];
        let gd = GluingData::flat(eps, &l).with_lambda(FourierSeries::constant(&l, 1.0).with_mode(&[1], 0.0, 0.2));
        let geo = GeometryData::flat(&l);
        let base = circle(4);
        let t = project_residual(&gd, &geo, &base, &FiberQuadrature::for_eps(eps), MetricChoice::Product).unwrap();
        let cf = closed_form_flat(&gd, &base);
        let scale = cf.slot_max()[1];
        assert!(scale > 0.1);
        for b in 0..base.len() {
            let x = base.point(b)[0];
            let lam = 1.0 + 0.2 * x.sin();
            assert!((cf.lambda[b] + 0.2 * x.sin() / lam).abs() < 1e-12);
            assert!((t.lambda[b] - cf.lambda[b]).abs() < 0.02 * scale, "{:?} {:?}", t.get(b), cf.get(b));
        }
        assert!(t.slot_max()[0] < 1e-10 && t.slot_max()[2] < 1e-10);
    }

    #[test]
    fn constant_rotation_form_lowers_the_scale_slot() {
        let eps = 0.05;
        let l = [2.0 * PI];
        let th = 0.3;
        let gd = GluingData::flat(eps, &l).with_theta(0, 0, FourierSeries::constant(&l, th));
        let geo = GeometryData::flat(&l);
        let base = circle(1);
        let t = project_residual(&gd, &geo, &base, &FiberQuadrature::for_eps(eps), MetricChoice::Product).unwrap();
        let cf = closed_form_flat(&gd, &base);
        // −¼|θ|² with the full matrix contraction
        assert!((cf.lambda[0] + 0.25 * 4.0 * th * th).abs() < 1e-12);
        assert!((t.lambda[0] / cf.lambda[0] - 1.0).abs() < 0.02, "{:?}", t.get(0));
        assert!(t.slot_max()[0] < 1e-10 && t.slot_max()[2] < 1e-10);
    }

    fn trace_free_geometry(c: f64) -> GeometryData {
        let l = [2.0 * PI, 2.0 * PI];
        let hc = FourierSeries::constant(&l, c);
        GeometryData::flat(&l).with_h(0, 0, 0, hc.clone()).with_h(1, 1, 0, hc.scale(-1.0))
    }

    #[test]
    fn second_fundamental_form_shifts_the_scale_slot() {
        let eps = 0.025;
        let l = [2.0 * PI, 2.0 * PI];
        let c = 0.3;
        let gd = GluingData::flat(eps, &l);
        let geo = trace_free_geometry(c);
        let base = BaseGrid::new(&l, &[1, 1]).unwrap();
        let t = project_residual(&gd, &geo, &base, &FiberQuadrature::for_eps(eps), MetricChoice::Expanded).unwrap();
        let cf = closed_form_curved(&gd, &geo, &base);
        assert!((cf.lambda[0] - c * c / 2.0).abs() < 1e-14);
        assert!((t.lambda[0] - c * c / 2.0).abs() < 0.05 * c * c / 2.0, "{:?}", t.get(0));
        // degenerate geometry reduces to the product metric
        let flat = GeometryData::flat(&l);
        let a = project_residual(&gd, &flat, &base, &FiberQuadrature::for_eps(eps), MetricChoice::Expanded).unwrap();
        assert!(a.max_abs() < 1e-10);
    }

    #[test]
    fn curved_deviation_shrinks_linearly() {
        let l = [2.0 * PI, 2.0 * PI];
        let geo = trace_free_geometry(0.3);
        let base = BaseGrid::new(&l, &[1, 1]).unwrap();
        let lam = FourierSeries::constant(&l, 1.0).with_mode(&[1, 0], 0.1, 0.2);
        let v = FourierSeries::zero(&l).with_mode(&[0, 1], 0.2, 0.3);
        let devs: Vec<f64> = [0.1, 0.05, 0.025]
            .iter()
            .map(|&eps| {
                let gd = GluingData::flat(eps, &l).with_lambda(lam.clone()).with_v(1, v.clone());
                let fq = FiberQuadrature::for_eps(eps).with_nodes(24, 5);
                let t = project_residual(&gd, &geo, &base, &fq, MetricChoice::Expanded).unwrap();
                t.sub(&closed_form_curved(&gd, &geo, &base)).max_abs()
            })
            .collect();
        let slope = (devs[0] / devs[2]).ln() / 4f64.ln();
        assert!(slope >= 0.8, "{devs:?} slope {slope}");
    }

    #[test]
    fn triple_csv_has_one_row_per_point() {
        let base = circle(5);
        let t = BalanceTriple::from_fn(&base, |x| ([x[0], 0.0, 0.0, 0.0], 1.0, SkewPlus::ZERO));
        let table = t.to_table();
        assert_eq!(table.rows.len(), 5);
        assert_eq!(table.header.len(), 9);
    }
}
