//! Closed forms for the charge-one instanton family centered at `εv` with
//! scale `ελ`, its curvature, the eight decaying kernel fields and the
//! identities they satisfy.
//!
//! Throughout, `z = y − εv` and `s = ε²λ² + |z|²`.

use crate::lie::{LieValue, SkewPlus, TwoForm, PAIRS4};
use crate::{Error, Result};
use std::f64::consts::PI;

/// Parameters of one member of the family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstantonParams {
    pub eps: f64,
    pub lambda: f64,
    pub v: [f64; 4],
}

impl InstantonParams {
    pub fn new(eps: f64, lambda: f64, v: [f64; 4]) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self { eps, lambda, v })
    }

    /// The basic instanton of scale `eps` centered at the origin.
    pub fn basic(eps: f64) -> Self {
        Self { eps, lambda: 1.0, v: [0.0; 4] }
    }

    /// Effective core size `ελ`.
    #[inline]
    pub fn scale(&self) -> f64 {
        self.eps * self.lambda
    }

    #[inline]
    pub fn center(&self) -> [f64; 4] {
        self.v.map(|c| self.eps * c)
    }

    #[inline]
    pub fn offset(&self, y: [f64; 4]) -> [f64; 4] {
        let c = self.center();
        [y[0] - c[0], y[1] - c[1], y[2] - c[2], y[3] - c[3]]
    }

    #[inline]
    fn denom(&self, z: &[f64; 4]) -> f64 {
        let a = self.scale();
        a * a + dot4(z, z)
    }
}

#[inline]
pub(crate) fn dot4(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

const O: LieValue = LieValue::ZERO;
const I: LieValue = LieValue::I;
const J: LieValue = LieValue::J;
const K: LieValue = LieValue::K;

/// `B_α = Σ_τ z_τ NUM[α][τ] / s`.
const NUM: [[LieValue; 4]; 4] = [
    [O, LieValue::new(-1.0, 0.0, 0.0), LieValue::new(0.0, -1.0, 0.0), LieValue::new(0.0, 0.0, -1.0)],
    [I, O, K, LieValue::new(0.0, -1.0, 0.0)],
    [J, LieValue::new(0.0, 0.0, -1.0), O, I],
    [K, J, LieValue::new(-1.0, 0.0, 0.0), O],
];

/// Lie-algebra pattern of the curvature: `F = f · PATTERN` slotwise.
pub(crate) const PATTERN: [LieValue; 6] = [
    I,
    J,
    K,
    LieValue::new(0.0, 0.0, -1.0),
    J,
    LieValue::new(-1.0, 0.0, 0.0),
];

/// The four vertical components `B_1..B_4` at `y`.
pub fn potential(p: &InstantonParams, y: [f64; 4]) -> [LieValue; 4] {
    let z = p.offset(y);
    let inv = 1.0 / p.denom(&z);
    let mut out = [LieValue::ZERO; 4];
    for (a, o) in out.iter_mut().enumerate() {
        let mut acc = LieValue::ZERO;
        for t in 0..4 {
            acc += NUM[a][t] * z[t];
        }
        *o = acc * inv;
    }
    out
}

/// Exact partial derivatives `d[σ][α] = ∂_σ B_α`.
pub fn potential_derivative(p: &InstantonParams, y: [f64; 4]) -> [[LieValue; 4]; 4] {
    let z = p.offset(y);
    let s = p.denom(&z);
    let inv = 1.0 / s;
    let mut num = [LieValue::ZERO; 4];
    for (a, n) in num.iter_mut().enumerate() {
        for t in 0..4 {
            *n += NUM[a][t] * z[t];
        }
    }
    let mut d = [[LieValue::ZERO; 4]; 4];
    for sg in 0..4 {
        for a in 0..4 {
            d[sg][a] = NUM[a][sg] * inv - num[a] * (2.0 * z[sg] * inv * inv);
        }
    }
    d
}

/// Scalar profile `f = 2ε²λ²/s²` of the curvature.
#[inline]
pub fn curvature_profile(p: &InstantonParams, y: [f64; 4]) -> f64 {
    let z = p.offset(y);
    let a = p.scale();
    let s = p.denom(&z);
    2.0 * a * a / (s * s)
}

/// Curvature from the closed form; anti-self-dual at every point.
pub fn curvature_closed(p: &InstantonParams, y: [f64; 4]) -> TwoForm<LieValue> {
    let f = curvature_profile(p, y);
    TwoForm::new(PATTERN.map(|c| c * f))
}

/// Exact `∂_σ F` for σ = 0..3.
pub fn curvature_derivative(p: &InstantonParams, y: [f64; 4]) -> [TwoForm<LieValue>; 4] {
    let z = p.offset(y);
    let a = p.scale();
    let s = p.denom(&z);
    let base = -8.0 * a * a / (s * s * s);
    let mut out = [TwoForm::zero(); 4];
    for (sg, o) in out.iter_mut().enumerate() {
        let df = base * z[sg];
        *o = TwoForm::new(PATTERN.map(|c| c * df));
    }
    out
}

/// Exact covariant derivative `D_σ F = ∂_σ F + [B_σ, F]`.
pub fn curvature_cov_derivative(p: &InstantonParams, y: [f64; 4]) -> [TwoForm<LieValue>; 4] {
    let b = potential(p, y);
    let f = curvature_closed(p, y);
    let mut d = curvature_derivative(p, y);
    for (sg, ds) in d.iter_mut().enumerate() {
        for k in 0..6 {
            ds.c[k] += b[sg].bracket(f.c[k]);
        }
    }
    d
}

/// `Σ_β D_β F_{αβ}` from the exact derivatives; zero for a Yang-Mills field.
pub fn ym_divergence(p: &InstantonParams, y: [f64; 4]) -> [LieValue; 4] {
    let df = curvature_cov_derivative(p, y);
    let mut out = [LieValue::ZERO; 4];
    for (a, o) in out.iter_mut().enumerate() {
        for (b, dfb) in df.iter().enumerate() {
            *o += dfb.get(a, b);
        }
    }
    out
}

/// Coordinates `(w, μ, r)` of the eight-dimensional decaying kernel.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KernelCoeffs {
    pub w: [f64; 4],
    pub mu: f64,
    pub r: SkewPlus,
}

impl KernelCoeffs {
    pub const DIM: usize = 8;

    pub fn new(w: [f64; 4], mu: f64, r: SkewPlus) -> Self {
        Self { w, mu, r }
    }

    /// Unit coordinate vector: 0..4 → w, 4 → μ, 5..8 → r.
    pub fn basis(j: usize) -> Self {
        let mut v = [0.0; 8];
        v[j] = 1.0;
        Self::from_array(v)
    }

    pub fn from_array(v: [f64; 8]) -> Self {
        Self { w: [v[0], v[1], v[2], v[3]], mu: v[4], r: SkewPlus::new(v[5], v[6], v[7]) }
    }

    pub fn to_array(&self) -> [f64; 8] {
        [self.w[0], self.w[1], self.w[2], self.w[3], self.mu, self.r.a, self.r.b, self.r.c]
    }

    pub fn max_abs(&self) -> f64 {
        self.to_array().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Vector field `X = ε w + μ z + r z` at offset `z`.
    pub fn vector_field(&self, eps: f64, z: [f64; 4]) -> [f64; 4] {
        let rz = self.r.apply(z);
        let mut x = [0.0; 4];
        for k in 0..4 {
            x[k] = eps * self.w[k] + self.mu * z[k] + rz[k];
        }
        x
    }
}

/// Contraction `F(X, ·)` of a curvature 2-form with a vector.
#[inline]
pub fn contract_first(f: &TwoForm<LieValue>, x: [f64; 4]) -> [LieValue; 4] {
    let mut out = [LieValue::ZERO; 4];
    for (s, &(p, q)) in PAIRS4.iter().enumerate() {
        // F_{pq} contributes x_p F_{pq} to slot q and -x_q F_{pq} to slot p
        out[q] += f.c[s] * x[p];
        out[p] -= f.c[s] * x[q];
    }
    out
}

/// Kernel field `a_α = F(X, e_α)` with `X` built from `k`.
pub fn kernel_element(p: &InstantonParams, k: &KernelCoeffs, y: [f64; 4]) -> [LieValue; 4] {
    let z = p.offset(y);
    let x = k.vector_field(p.eps, z);
    contract_first(&curvature_closed(p, y), x)
}

/// The frame field `u = s^{-1/2}(μ z + r z)` and its covariant derivative
/// from the closed-form right-hand side `D_α u = ε²λ² s^{-3/2}(μ δ_{ρα} + r_{ρα})`.
pub fn parallel_frame_derivative(
    p: &InstantonParams,
    mu: f64,
    r: SkewPlus,
    y: [f64; 4],
) -> ([f64; 4], [[f64; 4]; 4]) {
    let z = p.offset(y);
    let s = p.denom(&z);
    let rz = r.apply(z);
    let is = 1.0 / s.sqrt();
    let u = [0, 1, 2, 3].map(|k| is * (mu * z[k] + rz[k]));
    let a = p.scale();
    let c = a * a * is * is * is;
    let rm = r.matrix();
    let mut du = [[0.0; 4]; 4];
    for (al, d) in du.iter_mut().enumerate() {
        for rho in 0..4 {
            d[rho] = c * (if rho == al { mu } else { 0.0 } + rm[rho][al]);
        }
    }
    (u, du)
}

/// `D_α u = ∂_α u + B_α · u` computed from the potential, as an independent
/// route to the same quantity.
pub fn parallel_frame_derivative_direct(
    p: &InstantonParams,
    mu: f64,
    r: SkewPlus,
    y: [f64; 4],
) -> [[f64; 4]; 4] {
    let z = p.offset(y);
    let s = p.denom(&z);
    let is = 1.0 / s.sqrt();
    let rz = r.apply(z);
    let rm = r.matrix();
    let g = [0, 1, 2, 3].map(|k| mu * z[k] + rz[k]);
    let b = potential(p, y);
    let mut du = [[0.0; 4]; 4];
    for al in 0..4 {
        // ∂_α (s^{-1/2} g) = s^{-1/2} ∂_α g − z_α s^{-3/2} g
        let mut d = [0.0; 4];
        for rho in 0..4 {
            let dg = if rho == al { mu } else { 0.0 } + rm[rho][al];
            d[rho] = is * dg - z[al] * is * is * is * g[rho];
        }
        let u = g.map(|c| c * is);
        let bu = b[al].act(u);
        for rho in 0..4 {
            du[al][rho] = d[rho] + bu[rho];
        }
    }
    du
}

/// Infinitesimal gauge parameter `r_{ρσ} z_σ B_ρ`.
pub fn rotation_gauge(p: &InstantonParams, r: SkewPlus, y: [f64; 4]) -> LieValue {
    let z = p.offset(y);
    let rz = r.apply(z);
    let b = potential(p, y);
    (0..4).map(|k| b[k] * rz[k]).sum()
}

/// Both sides of `D_B(r z B) = −F_B(r z ∂, ·)`, evaluated exactly.
pub fn rotation_gauge_identity(p: &InstantonParams, r: SkewPlus, y: [f64; 4]) -> ([LieValue; 4], [LieValue; 4]) {
    let z = p.offset(y);
    let rz = r.apply(z);
    let rm = r.matrix();
    let b = potential(p, y);
    let db = potential_derivative(p, y);
    let u: LieValue = (0..4).map(|k| b[k] * rz[k]).sum();
    let mut lhs = [LieValue::ZERO; 4];
    for (al, l) in lhs.iter_mut().enumerate() {
        // ∂_α (r_{ρσ} z_σ B_ρ) = r_{ρα} B_ρ + r_{ρσ} z_σ ∂_α B_ρ
        let mut d = LieValue::ZERO;
        for rho in 0..4 {
            d += b[rho] * rm[rho][al] + db[al][rho] * rz[rho];
        }
        *l = d + b[al].bracket(u);
    }
    let f = curvature_closed(p, y);
    let rhs = contract_first(&f, rz).map(|v| -v);
    (lhs, rhs)
}

/// The pointwise form `r_{ρσ} z_σ ∂_ρ B_α + r_{ρα} B_ρ`, which vanishes for
/// self-dual `r`.
pub fn rotation_invariance_defect(p: &InstantonParams, r: SkewPlus, y: [f64; 4]) -> [LieValue; 4] {
    let z = p.offset(y);
    let rz = r.apply(z);
    let rm = r.matrix();
    let b = potential(p, y);
    let db = potential_derivative(p, y);
    let mut out = [LieValue::ZERO; 4];
    for (al, o) in out.iter_mut().enumerate() {
        for rho in 0..4 {
            *o += db[rho][al] * rz[rho] + b[rho] * rm[rho][al];
        }
    }
    out
}

/// Pointwise energy density `Σ_{α<β} |F_{αβ}|² = 48 a⁴/s⁴` with `a = ελ`.
pub fn energy_density(p: &InstantonParams, y: [f64; 4]) -> f64 {
    let f = curvature_closed(p, y);
    f.dot(&f)
}

/// `∫_R^∞ ρ³ (a²+ρ²)^{-4} dρ`.
pub fn tail_moment3(a: f64, r: f64) -> f64 {
    let u = a * a + r * r;
    0.5 * (1.0 / (2.0 * u * u) - a * a / (3.0 * u * u * u))
}

/// `∫_R^∞ ρ⁵ (a²+ρ²)^{-4} dρ`.
pub fn tail_moment5(a: f64, r: f64) -> f64 {
    let u = a * a + r * r;
    0.5 * (1.0 / u - a * a / (u * u) + a.powi(4) / (3.0 * u * u * u))
}

/// Volume of the unit 3-sphere.
pub const S3_AREA: f64 = 2.0 * PI * PI;

/// Result of the truncated-ball energy quadrature.
#[derive(Debug, Clone, Copy)]
pub struct EnergyQuadrature {
    pub ball: f64,
    pub tail: f64,
    pub total: f64,
}

/// Midpoint-lattice quadrature of `∫|F|²` over the ball `|z| ≤ radius`
/// using `n` cells per axis, plus the exact radial tail beyond it.
pub fn energy_quadrature(p: &InstantonParams, radius: f64, n: usize) -> EnergyQuadrature {
    let h = 2.0 * radius / n as f64;
    let c = p.center();
    let coords: Vec<f64> = (0..n).map(|i| -radius + (i as f64 + 0.5) * h).collect();
    let r2 = radius * radius;
    let mut ball = 0.0;
    for &a in &coords {
        for &b in &coords {
            let ab = a * a + b * b;
            if ab > r2 {
                continue;
            }
            for &cc in &coords {
                let abc = ab + cc * cc;
                if abc > r2 {
                    continue;
                }
                for &d in &coords {
                    if abc + d * d <= r2 {
                        ball += energy_density(p, [c[0] + a, c[1] + b, c[2] + cc, c[3] + d]);
                    }
                }
            }
        }
    }
    ball *= h.powi(4);
    let a = p.scale();
    let tail = 48.0 * a.powi(4) * S3_AREA * tail_moment3(a, radius);
    EnergyQuadrature { ball, tail, total: ball + tail }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::selfdual_project;

    fn lie_close(a: LieValue, b: LieValue, tol: f64) -> bool {
        (a - b).max_abs() < tol
    }

    fn pts() -> Vec<[f64; 4]> {
        vec![
            [0.3, -0.2, 0.5, 0.1],
            [1.0, 0.0, 0.0, 0.0],
            [-0.7, 0.4, 0.05, -1.3],
            [0.0, 0.0, 0.0, 0.0],
            [2.5, -1.5, 0.3, 0.9],
        ]
    }

    fn params() -> Vec<InstantonParams> {
        vec![
            InstantonParams::basic(1.0),
            InstantonParams::basic(0.3),
            InstantonParams::new(0.5, 1.7, [0.2, -0.4, 0.1, 0.3]).unwrap(),
            InstantonParams::new(0.1, 2.0, [1.0, 0.0, -2.0, 0.5]).unwrap(),
        ]
    }

    #[test]
    fn potential_examples() {
        let b = potential(&InstantonParams::basic(1.0), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(b[0], LieValue::ZERO);
        assert_eq!(b[1], LieValue::I * 0.5);
        assert_eq!(b[2], LieValue::J * 0.5);
        assert_eq!(b[3], LieValue::K * 0.5);
        // λ=2 at e2: denominator 4+1, B1 = −𝔦/5
        let p = InstantonParams::new(1.0, 2.0, [0.0; 4]).unwrap();
        let b = potential(&p, [0.0, 1.0, 0.0, 0.0]);
        assert_eq!(b[0], LieValue::new(-1.0 / 5.0, 0.0, 0.0));
        for p in params() {
            let b = potential(&p, p.center());
            assert!(b.iter().all(|v| *v == LieValue::ZERO));
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(InstantonParams::new(0.0, 1.0, [0.0; 4]).is_err());
        assert!(InstantonParams::new(0.1, -1.0, [0.0; 4]).is_err());
    }

    #[test]
    fn curvature_at_origin() {
        let f = curvature_closed(&InstantonParams::basic(1.0), [0.0; 4]);
        assert_eq!(f.get(0, 1), LieValue::I * 2.0);
        assert_eq!(f.get(2, 3), LieValue::I * -2.0);
        assert_eq!(f.get(0, 2), LieValue::J * 2.0);
        assert_eq!(f.get(3, 1), LieValue::J * -2.0);
        assert_eq!(f.get(0, 3), LieValue::K * 2.0);
        assert_eq!(f.get(1, 2), LieValue::K * -2.0);
    }

    #[test]
    fn curvature_is_asd_and_matches_potential() {
        for p in params() {
            for y in pts() {
                let f = curvature_closed(&p, y);
                assert!(selfdual_project(&f).max_abs() < 1e-12);
                // F = dB + [B, B] from the exact potential derivative
                let b = potential(&p, y);
                let db = potential_derivative(&p, y);
                for &(a, c) in &PAIRS4 {
                    let g = db[a][c] - db[c][a] + b[a].bracket(b[c]);
                    assert!(lie_close(g, f.get(a, c), 1e-10 * (1.0 + f.max_abs())));
                }
            }
        }
    }

    #[test]
    fn potential_derivative_matches_difference_quotient() {
        let p = InstantonParams::new(0.5, 1.3, [0.1, 0.2, -0.3, 0.0]).unwrap();
        let y = [0.2, -0.1, 0.4, 0.3];
        let h = 1e-5;
        let d = potential_derivative(&p, y);
        for sg in 0..4 {
            let mut yp = y;
            let mut ym = y;
            yp[sg] += h;
            ym[sg] -= h;
            let bp = potential(&p, yp);
            let bm = potential(&p, ym);
            for a in 0..4 {
                let fd = (bp[a] - bm[a]) * (0.5 / h);
                assert!(lie_close(fd, d[sg][a], 1e-8));
            }
        }
    }

    #[test]
    fn yang_mills_divergence_vanishes() {
        for p in params() {
            for y in pts() {
                for v in ym_divergence(&p, y) {
                    assert!(v.max_abs() < 1e-10 / p.scale().powi(3));
                }
            }
        }
    }

    #[test]
    fn curvature_order_two_against_differences() {
        let p = InstantonParams::basic(0.5);
        let y = [0.13, -0.21, 0.37, 0.05];
        let mut errs = Vec::new();
        for h in [0.04, 0.02, 0.01] {
            let mut err: f64 = 0.0;
            let f = curvature_closed(&p, y);
            let b0 = potential(&p, y);
            let mut d = [[LieValue::ZERO; 4]; 4];
            for sg in 0..4 {
                let mut yp = y;
                let mut ym = y;
                yp[sg] += h;
                ym[sg] -= h;
                let bp = potential(&p, yp);
                let bm = potential(&p, ym);
                for a in 0..4 {
                    d[sg][a] = (bp[a] - bm[a]) * (0.5 / h);
                }
            }
            for &(a, c) in &PAIRS4 {
                let g = d[a][c] - d[c][a] + b0[a].bracket(b0[c]);
                err = err.max((g - f.get(a, c)).max_abs());
            }
            errs.push(err);
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((order - 2.0).abs() < 0.2, "order {order}");
        }
    }

    #[test]
    fn kernel_examples() {
        let p = InstantonParams::basic(1.0);
        let a = kernel_element(&p, &KernelCoeffs::basis(0), [0.0; 4]);
        assert_eq!(a[0], LieValue::ZERO);
        assert_eq!(a[1], LieValue::I * 2.0);
        assert_eq!(a[2], LieValue::J * 2.0);
        assert_eq!(a[3], LieValue::K * 2.0);
        let q = InstantonParams::new(0.2, 1.5, [1.0, -1.0, 0.5, 0.0]).unwrap();
        let a = kernel_element(&q, &KernelCoeffs::basis(4), q.center());
        assert!(a.iter().all(|v| *v == LieValue::ZERO));
    }

    #[test]
    fn frame_derivative_examples() {
        let p = InstantonParams::basic(1.0);
        let (u, du) = parallel_frame_derivative(&p, 1.0, SkewPlus::ZERO, [0.0; 4]);
        assert_eq!(u, [0.0; 4]);
        for (al, d) in du.iter().enumerate() {
            for rho in 0..4 {
                assert_eq!(d[rho], if rho == al { 1.0 } else { 0.0 });
            }
        }
        let (u, du) = parallel_frame_derivative(&p, 0.0, SkewPlus::ZERO, [0.3, 0.1, 0.0, 0.2]);
        assert_eq!(u, [0.0; 4]);
        assert!(du.iter().flatten().all(|v| *v == 0.0));
        let (_, du) = parallel_frame_derivative(&p, 1.0, SkewPlus::ZERO, [1.0, 0.0, 0.0, 0.0]);
        assert!((du[0][0] - 2f64.powf(-1.5)).abs() < 1e-15);
    }

    #[test]
    fn frame_derivative_two_routes_agree() {
        for p in params() {
            for y in pts() {
                for (mu, r) in [(1.0, SkewPlus::ZERO), (0.0, SkewPlus::basis(0)), (0.3, SkewPlus::new(0.2, -0.5, 0.7))] {
                    let (_, du) = parallel_frame_derivative(&p, mu, r, y);
                    let dd = parallel_frame_derivative_direct(&p, mu, r, y);
                    for al in 0..4 {
                        for rho in 0..4 {
                            assert!((du[al][rho] - dd[al][rho]).abs() < 1e-10 / p.scale());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn rotation_identity_holds_for_selfdual_only() {
        for p in params() {
            for y in pts() {
                for k in 0..3 {
                    let r = SkewPlus::basis(k);
                    assert!(rotation_invariance_defect(&p, r, y).iter().all(|v| v.max_abs() < 1e-10 / p.scale()));
                    let (l, rr) = rotation_gauge_identity(&p, r, y);
                    for a in 0..4 {
                        assert!(lie_close(l[a], rr[a], 1e-10 / p.scale().powi(2)));
                    }
                }
            }
        }
    }

    #[test]
    fn scale_enters_only_through_product() {
        let y = [0.3, 0.1, -0.2, 0.4];
        let a = curvature_closed(&InstantonParams::new(0.2, 1.5, [0.0; 4]).unwrap(), y);
        let b = curvature_closed(&InstantonParams::basic(0.3), y);
        assert!(a.c.iter().zip(b.c).all(|(x, y)| (*x - y).max_abs() < 1e-12));
    }

    #[test]
    fn tail_moments_match_numeric() {
        let a: f64 = 0.7;
        let r: f64 = 2.0;
        // substitution ρ = r/t maps [r, ∞) onto (0, 1]
        let n = 200_000;
        let (mut m3, mut m5) = (0.0, 0.0);
        for i in 0..n {
            let t = (i as f64 + 0.5) / n as f64;
            let rho = r / t;
            let jac = r / (t * t);
            let d = (a * a + rho * rho).powi(4);
            m3 += rho.powi(3) / d * jac;
            m5 += rho.powi(5) / d * jac;
        }
        m3 /= n as f64;
        m5 /= n as f64;
        assert!((m3 - tail_moment3(a, r)).abs() < 1e-7 * m3);
        assert!((m5 - tail_moment5(a, r)).abs() < 1e-7 * m5);
        // full-line values 1/(12a⁴) and 1/(6a²)
        assert!((tail_moment3(a, 0.0) - 1.0 / (12.0 * a.powi(4))).abs() < 1e-12);
        assert!((tail_moment5(a, 0.0) - 1.0 / (6.0 * a * a)).abs() < 1e-12);
    }
}
