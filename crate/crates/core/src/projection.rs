//! Fiberwise projection onto the decaying kernel directions.
//!
//! On a comoving grid the kernel fields do not depend on the base point:
//! `K_j(w)` is the kernel element of the basic instanton of scale `ε` in the
//! `w` variables. Pairings use the `dw` components, so one Gram matrix
//! serves every base point. Kernel fields vanish on the fiber faces, matching
//! the Dirichlet truncation of the solvers.

use crate::grid::{GaugeField, ProductGrid};
use crate::instanton::{kernel_element, InstantonParams, KernelCoeffs};
use crate::lie::LieValue;
use crate::ops::smooth_step;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector, SVD};
use rayon::prelude::*;

/// Largest Gram condition number accepted.
pub const MAX_CONDITION: f64 = 1e8;

/// Fiber cutoff `κ`, radii given as fractions of the fiber box half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cutoff {
    None,
    Smooth { inner: f64, outer: f64 },
}

impl Cutoff {
    /// `κ = 1` up to half the box, zero beyond 95% of it.
    pub fn standard() -> Self {
        Cutoff::Smooth { inner: 0.5, outer: 0.95 }
    }

    /// Value at comoving offset `w` on `grid`.
    pub fn weight(&self, grid: &ProductGrid, w: [f64; 4]) -> f64 {
        match *self {
            Cutoff::None => 1.0,
            Cutoff::Smooth { inner, outer } => {
                let r = grid.fiber_radius();
                let d = (0..4).map(|a| (w[a] - grid.fiber_center[a]).powi(2)).sum::<f64>().sqrt();
                smooth_step((outer * r - d) / ((outer - inner) * r))
            }
        }
    }
}

/// Kernel fields on the fiber grid with their Gram factorizations.
#[derive(Debug, Clone)]
pub struct ProjectionBasis {
    pub grid: ProductGrid,
    pub cutoff: Cutoff,
    /// `K_j`, four values per fiber point.
    pub kernels: Vec<Vec<LieValue>>,
    /// `κ K_j`.
    pub weighted: Vec<Vec<LieValue>>,
    /// `⟨κK_j, κK_k⟩`.
    pub gram: DMatrix<f64>,
    /// `⟨κK_j, K_k⟩`, used by the oblique complement.
    pub cross: DMatrix<f64>,
    pub condition: f64,
    gram_inv: DMatrix<f64>,
    cross_inv: DMatrix<f64>,
}

fn fiber_dot(a: &[LieValue], b: &[LieValue]) -> f64 {
    // fixed chunking keeps the summation order independent of threads
    a.chunks(4096).zip(b.chunks(4096)).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u.inner(*v)).sum::<f64>()).sum()
}

fn condition(m: &DMatrix<f64>) -> f64 {
    let s = SVD::new(m.clone(), false, false).singular_values;
    let mx = s.iter().cloned().fold(0.0, f64::max);
    let mn = s.iter().cloned().fold(f64::INFINITY, f64::min);
    mx / mn
}

fn invert(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone().try_inverse().ok_or_else(|| Error::KernelObstruction("singular kernel Gram matrix".into()))
}

impl ProjectionBasis {
    pub fn new(grid: &ProductGrid, cutoff: Cutoff) -> Result<Self> {
        let nf = grid.fiber_points();
        let par = InstantonParams::basic(grid.eps);
        let mut kernels = vec![vec![LieValue::ZERO; 4 * nf]; KernelCoeffs::DIM];
        let mut weighted = kernels.clone();
        for f in 0..nf {
            let w = grid.fiber_coord(f);
            // Dirichlet faces: kernel fields are taken as zero there
            let k = cutoff.weight(grid, w);
            if grid.on_fiber_boundary(f) {
                continue;
            }
            for j in 0..KernelCoeffs::DIM {
                let v = kernel_element(&par, &KernelCoeffs::basis(j), w);
                for r in 0..4 {
                    kernels[j][4 * f + r] = v[r];
                    weighted[j][4 * f + r] = v[r] * k;
                }
            }
        }
        let n = KernelCoeffs::DIM;
        let gram = DMatrix::from_fn(n, n, |j, k| fiber_dot(&weighted[j], &weighted[k]));
        let cross = DMatrix::from_fn(n, n, |j, k| fiber_dot(&weighted[j], &kernels[k]));
        let cond = condition(&gram);
        if !(cond < MAX_CONDITION) {
            return Err(Error::KernelObstruction(format!("kernel Gram matrix ill-conditioned (condition {cond:.3e})")));
        }
        Ok(Self {
            grid: grid.clone(),
            cutoff,
            gram_inv: invert(&gram)?,
            cross_inv: invert(&cross)?,
            kernels,
            weighted,
            gram,
            cross,
            condition: cond,
        })
    }

    fn vertical<'a>(&self, b: &'a GaugeField, base: usize) -> Vec<LieValue> {
        let m = self.grid.base_dim();
        let nf = self.grid.fiber_points();
        let mut out = Vec::with_capacity(4 * nf);
        for f in 0..nf {
            let p = base * nf + f;
            out.extend_from_slice(&b.at(p)[m..m + 4]);
        }
        out
    }

    fn pairings(&self, v: &[LieValue], against: &[Vec<LieValue>]) -> DVector<f64> {
        DVector::from_iterator(KernelCoeffs::DIM, against.iter().map(|k| fiber_dot(v, k)))
    }

    /// Coefficients of `ℙb` per base point in comoving units.
    pub fn coefficients(&self, b: &GaugeField) -> Result<Vec<[f64; 8]>> {
        b.check_grid(&self.grid)?;
        Ok((0..self.grid.base_points())
            .into_par_iter()
            .map(|base| {
                let v = self.vertical(b, base);
                let c = &self.gram_inv * self.pairings(&v, &self.weighted);
                std::array::from_fn(|j| c[j])
            })
            .collect())
    }

    /// Raw pairings `⟨b, κK_j⟩` per base point.
    pub fn pairings_per_base(&self, b: &GaugeField) -> Vec<[f64; 8]> {
        (0..self.grid.base_points())
            .into_par_iter()
            .map(|base| {
                let c = self.pairings(&self.vertical(b, base), &self.weighted);
                std::array::from_fn(|j| c[j])
            })
            .collect()
    }

    /// `Σ_j c_j κK_j` per base point, in the `dw` components.
    pub fn synthesize(&self, coeffs: &[[f64; 8]]) -> GaugeField {
        let m = self.grid.base_dim();
        let nf = self.grid.fiber_points();
        GaugeField::from_fn(&self.grid, |p, out| {
            let (b, f) = (p / nf, p % nf);
            for r in 0..4 {
                let mut acc = LieValue::ZERO;
                for j in 0..KernelCoeffs::DIM {
                    acc += self.weighted[j][4 * f + r] * coeffs[b][j];
                }
                out[m + r] = acc;
            }
        })
    }

    /// `(Πb, b − ℙb)`: orthogonal projection onto `span{κK_j}`.
    pub fn project(&self, b: &GaugeField) -> Result<(Vec<[f64; 8]>, GaugeField)> {
        let c = self.coefficients(b)?;
        let pb = self.synthesize(&c);
        Ok((c, b.sub(&pb)))
    }

    /// Removes a `span{κK_j}` component so that the result pairs to zero
    /// with every uncut `K_j`. Supports are preserved when `κ` is compact.
    pub fn compact_complement(&self, b: &GaugeField) -> Result<GaugeField> {
        b.check_grid(&self.grid)?;
        let coeffs: Vec<[f64; 8]> = (0..self.grid.base_points())
            .into_par_iter()
            .map(|base| {
                let v = self.vertical(b, base);
                // ⟨b − Σ c_j κK_j, K_k⟩ = 0  ⇔  crossᵀ c = ⟨b, K⟩
                let rhs = self.pairings(&v, &self.kernels);
                let c = self.cross_inv.transpose() * rhs;
                std::array::from_fn(|j| c[j])
            })
            .collect();
        Ok(b.sub(&self.synthesize(&coeffs)))
    }

    /// Largest `|⟨b, K_j⟩| / (‖b‖ ‖K_j‖)` over base points and `j`, with the
    /// uncut kernel. `‖b‖` is the largest fiber norm over base points, so
    /// round-off on a nearly vanishing fiber does not count as a defect.
    pub fn relative_defect(&self, b: &GaugeField) -> f64 {
        let norms: Vec<f64> = self.kernels.iter().map(|k| fiber_dot(k, k).sqrt()).collect();
        let per_base: Vec<(f64, f64)> = (0..self.grid.base_points())
            .into_par_iter()
            .map(|base| {
                let v = self.vertical(b, base);
                let nb = fiber_dot(&v, &v).sqrt();
                let c = self.pairings(&v, &self.kernels);
                let worst = (0..KernelCoeffs::DIM).map(|j| c[j].abs() / norms[j]).fold(0.0, f64::max);
                (nb, worst)
            })
            .collect();
        let scale = per_base.iter().map(|p| p.0).fold(0.0, f64::max);
        if scale == 0.0 {
            return 0.0;
        }
        per_base.iter().map(|p| p.1).fold(0.0, f64::max) / scale
    }
}

/// Converts comoving coefficients to physical kernel coordinates
/// `(λ w, μ, r)`.
pub fn physical_coeffs(c: &[f64; 8], lambda: f64) -> KernelCoeffs {
    let mut k = KernelCoeffs::from_array(*c);
    for v in k.w.iter_mut() {
        *v *= lambda;
    }
    k
}
