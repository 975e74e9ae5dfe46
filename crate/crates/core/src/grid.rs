//! Product grids (periodic base torus times a Cartesian fiber box), discrete
//! differential forms with Lie-algebra coefficients, and sampled metrics.

use crate::fourier::MAX_BASE_DIM;
use crate::lie::LieValue;
use crate::{Error, Result};
use rayon::prelude::*;

/// Chunk length for deterministic parallel reductions.
const CHUNK: usize = 4096;

/// Uniform grid on `T^m × [c − R, c + R]⁴`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductGrid {
    pub base_counts: Vec<usize>,
    pub base_lengths: Vec<f64>,
    /// Points per fiber axis; odd so the box is symmetric about its center.
    pub fiber_n: usize,
    pub fiber_h: f64,
    pub fiber_center: [f64; 4],
    /// Scale attached to the weight functions.
    pub eps: f64,
}

impl ProductGrid {
    pub fn new(base_counts: &[usize], base_lengths: &[f64], fiber_n: usize, fiber_h: f64, eps: f64) -> Result<Self> {
        if base_counts.len() != base_lengths.len() {
            return Err(Error::Shape("base counts and lengths differ in length".into()));
        }
        if base_counts.len() > MAX_BASE_DIM {
            return Err(Error::InvalidParameter(format!("base dimension at most {MAX_BASE_DIM}")));
        }
        if base_counts.iter().any(|&n| n < 2 || n % 2 != 0) {
            return Err(Error::InvalidParameter("base point counts must be even and at least 2".into()));
        }
        if base_lengths.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::InvalidParameter("base lengths must be positive".into()));
        }
        if fiber_n < 5 || fiber_n % 2 == 0 {
            return Err(Error::InvalidParameter("fiber point count must be odd and at least 5".into()));
        }
        if !(fiber_h > 0.0) || !(eps > 0.0) {
            return Err(Error::InvalidParameter("fiber spacing and eps must be positive".into()));
        }
        Ok(Self {
            base_counts: base_counts.to_vec(),
            base_lengths: base_lengths.to_vec(),
            fiber_n,
            fiber_h,
            fiber_center: [0.0; 4],
            eps,
        })
    }

    /// Fiber-only grid (no base directions).
    pub fn fiber_only(fiber_n: usize, fiber_h: f64, eps: f64) -> Result<Self> {
        Self::new(&[], &[], fiber_n, fiber_h, eps)
    }

    /// Grid whose fiber box has half-width `radius_factor·eps` with `fiber_n`
    /// points per axis.
    pub fn scaled(base_counts: &[usize], base_lengths: &[f64], fiber_n: usize, radius_factor: f64, eps: f64) -> Result<Self> {
        let h = 2.0 * radius_factor * eps / (fiber_n - 1) as f64;
        Self::new(base_counts, base_lengths, fiber_n, h, eps)
    }

    pub fn with_center(mut self, c: [f64; 4]) -> Self {
        self.fiber_center = c;
        self
    }

    #[inline]
    pub fn base_dim(&self) -> usize {
        self.base_counts.len()
    }

    /// Total dimension `m + 4`.
    #[inline]
    pub fn dim(&self) -> usize {
        self.base_dim() + 4
    }

    #[inline]
    pub fn fiber_points(&self) -> usize {
        self.fiber_n.pow(4)
    }

    #[inline]
    pub fn base_points(&self) -> usize {
        self.base_counts.iter().product()
    }

    #[inline]
    pub fn npts(&self) -> usize {
        self.base_points() * self.fiber_points()
    }

    /// Half-width of the fiber box.
    pub fn fiber_radius(&self) -> f64 {
        (self.fiber_n - 1) as f64 * 0.5 * self.fiber_h
    }

    pub fn base_spacing(&self, i: usize) -> f64 {
        self.base_lengths[i] / self.base_counts[i] as f64
    }

    /// Spacing along axis `mu` (base axes first).
    pub fn spacing(&self, mu: usize) -> f64 {
        if mu < self.base_dim() {
            self.base_spacing(mu)
        } else {
            self.fiber_h
        }
    }

    #[inline]
    pub fn split(&self, p: usize) -> (usize, usize) {
        let nf = self.fiber_points();
        (p / nf, p % nf)
    }

    pub fn base_multi(&self, b: usize) -> [usize; MAX_BASE_DIM] {
        let mut out = [0; MAX_BASE_DIM];
        let mut rem = b;
        for ax in (0..self.base_dim()).rev() {
            out[ax] = rem % self.base_counts[ax];
            rem /= self.base_counts[ax];
        }
        out
    }

    pub fn fiber_multi(&self, f: usize) -> [usize; 4] {
        let n = self.fiber_n;
        [f / (n * n * n), (f / (n * n)) % n, (f / n) % n, f % n]
    }

    pub fn fiber_index(&self, k: [usize; 4]) -> usize {
        let n = self.fiber_n;
        ((k[0] * n + k[1]) * n + k[2]) * n + k[3]
    }

    pub fn base_coord(&self, b: usize) -> [f64; MAX_BASE_DIM] {
        let k = self.base_multi(b);
        let mut x = [0.0; MAX_BASE_DIM];
        for i in 0..self.base_dim() {
            x[i] = k[i] as f64 * self.base_spacing(i);
        }
        x
    }

    pub fn fiber_coord(&self, f: usize) -> [f64; 4] {
        let k = self.fiber_multi(f);
        let half = (self.fiber_n - 1) as f64 * 0.5;
        let mut w = [0.0; 4];
        for a in 0..4 {
            w[a] = self.fiber_center[a] + (k[a] as f64 - half) * self.fiber_h;
        }
        w
    }

    /// Index of the fiber node nearest the box center.
    pub fn fiber_center_index(&self) -> usize {
        let c = (self.fiber_n - 1) / 2;
        self.fiber_index([c; 4])
    }

    #[inline]
    pub fn stride(&self, mu: usize) -> usize {
        let m = self.base_dim();
        if mu >= m {
            self.fiber_n.pow((3 - (mu - m)) as u32)
        } else {
            let inner: usize = self.base_counts[mu + 1..].iter().product();
            inner * self.fiber_points()
        }
    }

    /// Position along axis `mu` and the axis length in points.
    #[inline]
    pub fn axis_pos(&self, p: usize, mu: usize) -> (usize, usize) {
        let m = self.base_dim();
        if mu >= m {
            let f = p % self.fiber_points();
            let n = self.fiber_n;
            ((f / self.stride(mu)) % n, n)
        } else {
            let b = p / self.fiber_points();
            let n = self.base_counts[mu];
            let inner: usize = self.base_counts[mu + 1..].iter().product();
            ((b / inner) % n, n)
        }
    }

    /// Neighbor `p + delta·e_mu`, wrapping periodically in the base and
    /// returning `None` outside the fiber box.
    #[inline]
    pub fn shift(&self, p: usize, mu: usize, delta: isize) -> Option<usize> {
        let (k, n) = self.axis_pos(p, mu);
        let s = self.stride(mu) as isize;
        let t = k as isize + delta;
        if mu < self.base_dim() {
            let wrapped = t.rem_euclid(n as isize);
            Some((p as isize + (wrapped - k as isize) * s) as usize)
        } else if t < 0 || t >= n as isize {
            None
        } else {
            Some((p as isize + delta * s) as usize)
        }
    }

    /// Whether `p` lies on the boundary of the fiber box.
    pub fn on_fiber_boundary(&self, p: usize) -> bool {
        let k = self.fiber_multi(p % self.fiber_points());
        k.iter().any(|&c| c == 0 || c == self.fiber_n - 1)
    }

    pub fn check_same(&self, o: &Self) -> Result<()> {
        if self != o {
            return Err(Error::Shape("fields live on different grids".into()));
        }
        Ok(())
    }
}

/// Number of components of a `deg`-form in dimension `d` (deg ≤ 2).
pub const fn form_components(d: usize, deg: usize) -> usize {
    match deg {
        0 => 1,
        1 => d,
        _ => d * (d - 1) / 2,
    }
}

/// Slot of the pair `(mu, nu)`, `mu < nu`, in lexicographic order.
#[inline]
pub fn pair_slot(d: usize, mu: usize, nu: usize) -> usize {
    debug_assert!(mu < nu && nu < d);
    mu * (2 * d - mu - 1) / 2 + (nu - mu - 1)
}

/// Lie-algebra valued form of degree `DEG` sampled at every grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct Field<const DEG: usize> {
    pub dim: usize,
    pub npts: usize,
    pub data: Vec<LieValue>,
}

pub type ScalarField = Field<0>;
pub type GaugeField = Field<1>;
pub type TwoFormField = Field<2>;

impl<const DEG: usize> Field<DEG> {
    pub fn zeros(grid: &ProductGrid) -> Self {
        let dim = grid.dim();
        let npts = grid.npts();
        Self { dim, npts, data: vec![LieValue::ZERO; npts * form_components(dim, DEG)] }
    }

    #[inline]
    pub fn ncomp(&self) -> usize {
        form_components(self.dim, DEG)
    }

    /// Builds a field from a per-point closure writing all components.
    pub fn from_fn(grid: &ProductGrid, f: impl Fn(usize, &mut [LieValue]) + Sync) -> Self {
        let mut out = Self::zeros(grid);
        let nc = out.ncomp();
        out.data.par_chunks_mut(nc).enumerate().for_each(|(p, c)| f(p, c));
        out
    }

    #[inline]
    pub fn at(&self, p: usize) -> &[LieValue] {
        let nc = self.ncomp();
        &self.data[p * nc..(p + 1) * nc]
    }

    #[inline]
    pub fn at_mut(&mut self, p: usize) -> &mut [LieValue] {
        let nc = self.ncomp();
        &mut self.data[p * nc..(p + 1) * nc]
    }

    #[inline]
    pub fn get(&self, p: usize, c: usize) -> LieValue {
        self.data[p * self.ncomp() + c]
    }

    pub fn check_shape(&self, o: &Self) -> Result<()> {
        if self.dim != o.dim || self.npts != o.npts {
            return Err(Error::Shape(format!(
                "field shapes differ: ({}, {}) vs ({}, {})",
                self.dim, self.npts, o.dim, o.npts
            )));
        }
        Ok(())
    }

    pub fn check_grid(&self, grid: &ProductGrid) -> Result<()> {
        if self.dim != grid.dim() || self.npts != grid.npts() {
            return Err(Error::Shape("field does not match grid".into()));
        }
        Ok(())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { dim: self.dim, npts: self.npts, data: self.data.par_iter().map(|v| *v * s).collect() }
    }

    pub fn add(&self, o: &Self) -> Self {
        let data = self.data.par_iter().zip(o.data.par_iter()).map(|(a, b)| *a + *b).collect();
        Self { dim: self.dim, npts: self.npts, data }
    }

    pub fn sub(&self, o: &Self) -> Self {
        let data = self.data.par_iter().zip(o.data.par_iter()).map(|(a, b)| *a - *b).collect();
        Self { dim: self.dim, npts: self.npts, data }
    }

    /// `self += s·o`.
    pub fn axpy(&mut self, s: f64, o: &Self) {
        self.data.par_iter_mut().zip(o.data.par_iter()).for_each(|(a, b)| *a += *b * s);
    }

    /// Euclidean inner product of all coefficients (Lie inner product per slot).
    pub fn dot(&self, o: &Self) -> f64 {
        self.data
            .par_chunks(CHUNK)
            .zip(o.data.par_chunks(CHUNK))
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x.inner(*y)).sum::<f64>())
            .collect::<Vec<_>>()
            .into_iter()
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.par_iter().map(|v| v.max_abs()).reduce(|| 0.0, f64::max)
    }

    /// Per-point Euclidean magnitude over all components.
    pub fn pointwise_norm(&self) -> Vec<f64> {
        let nc = self.ncomp();
        self.data.par_chunks(nc).map(|c| c.iter().map(|v| v.norm_sq()).sum::<f64>().sqrt()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.ci.is_finite() && v.cj.is_finite() && v.ck.is_finite())
    }
}

/// Deterministic ordered sum of a per-index quantity.
pub fn ordered_sum(n: usize, f: impl Fn(usize) -> f64 + Sync) -> f64 {
    (0..n)
        .into_par_iter()
        .chunks(CHUNK)
        .map(|idx| idx.into_iter().map(&f).sum::<f64>())
        .collect::<Vec<_>>()
        .into_iter()
        .sum()
}

/// Metric in grid coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    /// Euclidean metric in the grid coordinates.
    Flat,
    Sampled(SampledMetric),
}

/// Per-point metric tensor, inverse and volume density.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledMetric {
    pub dim: usize,
    pub g: Vec<f64>,
    pub inv: Vec<f64>,
    pub sqrt_det: Vec<f64>,
}

impl SampledMetric {
    /// Builds the metric from a closure returning the `d×d` tensor row-major.
    pub fn from_fn(grid: &ProductGrid, f: impl Fn(usize) -> Vec<f64> + Sync) -> Result<Self> {
        let d = grid.dim();
        let rows: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..grid.npts())
            .into_par_iter()
            .map(|p| {
                let g = f(p);
                let m = nalgebra::DMatrix::from_row_slice(d, d, &g);
                let det = m.determinant();
                let inv = m.try_inverse().unwrap_or_else(|| nalgebra::DMatrix::from_element(d, d, f64::NAN));
                let inv_rows: Vec<f64> = (0..d * d).map(|k| inv[(k / d, k % d)]).collect();
                (g, inv_rows, det)
            })
            .collect();
        let mut out = SampledMetric { dim: d, g: Vec::new(), inv: Vec::new(), sqrt_det: Vec::new() };
        for (p, (g, inv, det)) in rows.into_iter().enumerate() {
            if !(det > 0.0) || inv.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!("metric not positive definite at point {p}")));
            }
            out.g.extend(g);
            out.inv.extend(inv);
            out.sqrt_det.push(det.sqrt());
        }
        Ok(out)
    }
}

impl Metric {
    #[inline]
    pub fn g(&self, p: usize, mu: usize, nu: usize, d: usize) -> f64 {
        match self {
            Metric::Flat => (mu == nu) as u8 as f64,
            Metric::Sampled(s) => s.g[p * d * d + mu * d + nu],
        }
    }

    #[inline]
    pub fn inv(&self, p: usize, mu: usize, nu: usize, d: usize) -> f64 {
        match self {
            Metric::Flat => (mu == nu) as u8 as f64,
            Metric::Sampled(s) => s.inv[p * d * d + mu * d + nu],
        }
    }

    #[inline]
    pub fn sqrt_det(&self, p: usize) -> f64 {
        match self {
            Metric::Flat => 1.0,
            Metric::Sampled(s) => s.sqrt_det[p],
        }
    }

    pub fn is_flat(&self) -> bool {
        matches!(self, Metric::Flat)
    }

    /// Raises the index of a 1-form at point `p`.
    #[inline]
    pub fn raise1(&self, p: usize, a: &[LieValue], d: usize) -> Vec<LieValue> {
        match self {
            Metric::Flat => a.to_vec(),
            Metric::Sampled(s) => {
                let gi = &s.inv[p * d * d..(p + 1) * d * d];
                (0..d).map(|mu| (0..d).map(|nu| a[nu] * gi[mu * d + nu]).sum()).collect()
            }
        }
    }

    /// Lowers the index of a vector at point `p`.
    #[inline]
    pub fn lower1(&self, p: usize, a: &[LieValue], d: usize) -> Vec<LieValue> {
        match self {
            Metric::Flat => a.to_vec(),
            Metric::Sampled(s) => {
                let g = &s.g[p * d * d..(p + 1) * d * d];
                (0..d).map(|mu| (0..d).map(|nu| a[nu] * g[mu * d + nu]).sum()).collect()
            }
        }
    }

    /// Raises both indices of a 2-form at point `p` (slot layout preserved).
    pub fn raise2(&self, p: usize, w: &[LieValue], d: usize) -> Vec<LieValue> {
        match self {
            Metric::Flat => w.to_vec(),
            Metric::Sampled(s) => {
                let gi = &s.inv[p * d * d..(p + 1) * d * d];
                let full = |a: usize, b: usize| -> LieValue {
                    if a == b {
                        LieValue::ZERO
                    } else if a < b {
                        w[pair_slot(d, a, b)]
                    } else {
                        -w[pair_slot(d, b, a)]
                    }
                };
                let mut out = vec![LieValue::ZERO; w.len()];
                for mu in 0..d {
                    for nu in mu + 1..d {
                        let mut acc = LieValue::ZERO;
                        for a in 0..d {
                            let ga = gi[mu * d + a];
                            if ga == 0.0 {
                                continue;
                            }
                            for b in 0..d {
                                let gb = gi[nu * d + b];
                                if gb != 0.0 && a != b {
                                    acc += full(a, b) * (ga * gb);
                                }
                            }
                        }
                        out[pair_slot(d, mu, nu)] = acc;
                    }
                }
                out
            }
        }
    }
}

/// Full antisymmetric access to 2-form slots.
#[inline]
pub fn two_form_get(w: &[LieValue], d: usize, a: usize, b: usize) -> LieValue {
    use std::cmp::Ordering::*;
    match a.cmp(&b) {
        Equal => LieValue::ZERO,
        Less => w[pair_slot(d, a, b)],
        Greater => -w[pair_slot(d, b, a)],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_slots_are_lexicographic() {
        let d = 6;
        let mut k = 0;
        for mu in 0..d {
            for nu in mu + 1..d {
                assert_eq!(pair_slot(d, mu, nu), k);
                k += 1;
            }
        }
        assert_eq!(k, form_components(d, 2));
    }

    #[test]
    fn shifts_wrap_in_base_and_stop_at_fiber_edge() {
        let g = ProductGrid::new(&[4, 6], &[1.0, 2.0], 5, 0.1, 0.1).unwrap();
        assert_eq!(g.dim(), 6);
        let p = 0;
        assert_eq!(g.axis_pos(p, 0), (0, 4));
        let q = g.shift(p, 0, -1).unwrap();
        assert_eq!(g.axis_pos(q, 0), (3, 4));
        let q = g.shift(p, 1, 7).unwrap();
        assert_eq!(g.axis_pos(q, 1), (1, 6));
        assert!(g.shift(p, 2, -1).is_none());
        let q = g.shift(p, 5, 4).unwrap();
        assert_eq!(g.fiber_multi(q % g.fiber_points()), [0, 0, 0, 4]);
        assert!(g.shift(q, 5, 1).is_none());
        for mu in 0..6 {
            let c = g.fiber_center_index() + 37 * g.fiber_points();
            let r = g.shift(g.shift(c, mu, 1).unwrap(), mu, -1).unwrap();
            assert_eq!(r, c);
        }
    }

    #[test]
    fn coordinates_are_symmetric() {
        let g = ProductGrid::fiber_only(7, 0.5, 0.1).unwrap();
        assert_eq!(g.fiber_coord(g.fiber_center_index()), [0.0; 4]);
        assert_eq!(g.fiber_coord(0), [-1.5; 4]);
        assert!((g.fiber_radius() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(ProductGrid::new(&[3], &[1.0], 5, 0.1, 0.1).is_err());
        assert!(ProductGrid::new(&[4], &[1.0], 6, 0.1, 0.1).is_err());
        assert!(ProductGrid::new(&[4, 4, 4, 4], &[1.0; 4], 5, 0.1, 0.1).is_err());
    }

    #[test]
    fn sampled_metric_raises_consistently() {
        let g = ProductGrid::new(&[2], &[1.0], 5, 0.1, 0.1).unwrap();
        let d = g.dim();
        let m = SampledMetric::from_fn(&g, |p| {
            let mut t = vec![0.0; d * d];
            for i in 0..d {
                t[i * d + i] = 1.0 + 0.1 * i as f64 + 0.01 * (p % 3) as f64;
            }
            t[1] = 0.05;
            t[d] = 0.05;
            t
        })
        .unwrap();
        let metric = Metric::Sampled(m);
        let a: Vec<LieValue> = (0..d).map(|k| LieValue::new(k as f64, 1.0, -0.5 * k as f64)).collect();
        let up = metric.raise1(3, &a, d);
        let down = metric.lower1(3, &up, d);
        for k in 0..d {
            assert!((down[k] - a[k]).max_abs() < 1e-12);
        }
    }
}
