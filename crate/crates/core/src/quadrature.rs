//! Gauss rules and a radial-times-spherical quadrature on balls in R^4.

use nalgebra::{DMatrix, SymmetricEigen};
use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on `[-1, 1]` (Golub-Welsch).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let kf = k as f64;
        let b = kf / (4.0 * kf * kf - 1.0).sqrt();
        jac[(k - 1, k)] = b;
        jac[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], 2.0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Gauss-Legendre rule mapped to `[a, b]`.
pub fn gauss_interval(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let h = 0.5 * (b - a);
    (x.iter().map(|t| a + h * (t + 1.0)).collect(), w.iter().map(|v| v * h).collect())
}

/// Weighted point set for integrals over a ball in R^4 centered at the origin.
#[derive(Debug, Clone)]
pub struct BallQuadrature {
    pub nodes: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
}

impl BallQuadrature {
    /// Ball of radius `rmax` with radial nodes clustered at scale `core`
    /// through `ρ = core·sinh(s)`. Exact on polynomials in the angles up to
    /// degree about `2·n_ang`.
    pub fn new(core: f64, rmax: f64, n_rad: usize, n_ang: usize) -> Self {
        let (s, ws) = gauss_interval(n_rad, 0.0, (rmax / core).asinh());
        // ψ₁ with weight sin²: Chebyshev of the second kind in cos ψ₁
        let psi1: Vec<(f64, f64)> = (1..=n_ang)
            .map(|k| {
                let t = k as f64 * PI / (n_ang + 1) as f64;
                (t, PI / (n_ang + 1) as f64 * t.sin().powi(2))
            })
            .collect();
        let (c2, w2) = gauss_legendre(n_ang);
        let nphi = 2 * n_ang;
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for (si, wsi) in s.iter().zip(&ws) {
            let rho = core * si.sinh();
            let wr = wsi * core * si.cosh() * rho.powi(3);
            for &(p1, w1) in &psi1 {
                let (s1, co1) = p1.sin_cos();
                for (ct2, wt2) in c2.iter().zip(&w2) {
                    let st2 = (1.0 - ct2 * ct2).sqrt();
                    for k in 0..nphi {
                        let phi = 2.0 * PI * k as f64 / nphi as f64;
                        let (sp, cp) = phi.sin_cos();
                        nodes.push([rho * co1, rho * s1 * ct2, rho * s1 * st2 * cp, rho * s1 * st2 * sp]);
                        weights.push(wr * w1 * wt2 * 2.0 * PI / nphi as f64);
                    }
                }
            }
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn([f64; 4]) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(z, w)| w * f(*z)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instanton::{energy_density, tail_moment3, InstantonParams, S3_AREA};

    #[test]
    fn legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(6);
        for k in 0..12 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum();
            let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
            assert!((q - exact).abs() < 1e-13, "k={k}");
        }
    }

    #[test]
    fn ball_volume_and_moments() {
        let q = BallQuadrature::new(0.3, 1.0, 12, 6);
        let vol = q.integrate(|_| 1.0);
        assert!((vol - PI * PI / 2.0).abs() < 1e-10);
        let m = q.integrate(|z| z[2] * z[2] * z[3] * z[3]);
        // ∫ z₃²z₄² over the unit ball = |S³|/(8·24)·... via ⟨z₃²z₄²⟩ on S³ = 1/24
        assert!((m - S3_AREA / 24.0 / 8.0).abs() < 1e-10, "{m}");
    }

    #[test]
    fn instanton_energy() {
        let p = InstantonParams::basic(0.1);
        let r = 2.0;
        let q = BallQuadrature::new(0.1, r, 40, 4);
        let e = q.integrate(|z| energy_density(&p, z)) + 48.0 * 0.1f64.powi(4) * S3_AREA * tail_moment3(0.1, r);
        assert!((e - 8.0 * PI * PI).abs() < 1e-6 * e, "{e}");
    }
}
