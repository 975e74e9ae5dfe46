//! Model problem on `T^m × ℝ⁴`: the linearization at the basic instanton,
//! constant along the base. A discrete Fourier transform in the base turns
//! it into independent fiber systems `(L + σ(ξ)) â = b̂`, solved by deflated
//! MINRES.
//!
//! The fiber operator uses the compact link stencil
//! `u = (a_q − a_p)/h + [Ā, (a_q + a_p)/2]` on each edge `p → q`, summed as
//! the gradient of `½ Σ |u|²`, plus `2 Σ_μ [F_{μν}, a_μ]` on the vertical
//! block. It is symmetric and agrees with the Weitzenböck assembly to second
//! order. Base directions enter through the compact second difference with
//! symbol `σ(ξ) = Σ 4 sin²(ξ_i h_i / 2) / h_i²`.

use crate::fields::{instanton_connection, instanton_curvature};
use crate::grid::{GaugeField, ProductGrid};
use crate::instanton::{kernel_element, InstantonParams, KernelCoeffs};
use crate::lie::{LieValue, PAIRS4};
use crate::ops::{weighted_norm, WeightSpec};
use crate::projection::{Cutoff, ProjectionBasis};
use crate::{Error, Result};
use rayon::prelude::*;
use rustdct::{Dst1, DctPlanner};
use rustfft::{num_complex::Complex64, FftPlanner};
use std::f64::consts::PI;
use std::sync::Arc;

/// Relative residual at which the fiber solves stop.
pub const FIBER_TOL: f64 = 1e-8;
/// Iteration cap for one fiber solve.
pub const MAX_ITER: usize = 4000;
/// Relative ℰ defect accepted by `solve_model`.
pub const E_TOL: f64 = 1e-6;

#[inline]
fn dotv(a: &[LieValue], b: &[LieValue]) -> f64 {
    a.chunks(4096).zip(b.chunks(4096)).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u.inner(*v)).sum::<f64>()).sum()
}

#[inline]
fn axpy(y: &mut [LieValue], s: f64, x: &[LieValue]) {
    for (a, b) in y.iter_mut().zip(x) {
        *a += *b * s;
    }
}

/// Flat Dirichlet Laplacian inverse on the interior nodes, by DST-I.
#[derive(Clone)]
struct DstPreconditioner {
    n: usize,
    plan: Arc<dyn Dst1<f64>>,
    eig: Vec<f64>,
}

impl std::fmt::Debug for DstPreconditioner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DstPreconditioner").field("n", &self.n).finish()
    }
}

impl DstPreconditioner {
    fn new(n_interior: usize, h: f64) -> Self {
        let plan = DctPlanner::new().plan_dst1(n_interior);
        let eig = (1..=n_interior)
            .map(|j| 4.0 * (PI * j as f64 / (2.0 * (n_interior + 1) as f64)).sin().powi(2) / (h * h))
            .collect();
        Self { n: n_interior, plan, eig }
    }

    fn transform(&self, data: &mut [f64]) {
        let n = self.n;
        let mut line = vec![0.0; n];
        for ax in 0..4 {
            let stride = n.pow(3 - ax as u32);
            for start in 0..data.len() {
                if (start / stride) % n != 0 {
                    continue;
                }
                for k in 0..n {
                    line[k] = data[start + k * stride];
                }
                self.plan.process_dst1(&mut line);
                for k in 0..n {
                    data[start + k * stride] = line[k];
                }
            }
        }
    }

    /// Solves `(−Δ + shift) x = data` in place.
    fn solve(&self, data: &mut [f64], shift: f64) {
        let n = self.n;
        self.transform(data);
        let norm = (2.0 / (n + 1) as f64).powi(4);
        for (idx, v) in data.iter_mut().enumerate() {
            let k = [idx / (n * n * n), (idx / (n * n)) % n, (idx / n) % n, idx % n];
            let lam: f64 = k.iter().map(|&j| self.eig[j]).sum::<f64>() + shift;
            *v *= norm / lam;
        }
        self.transform(data);
    }
}

/// Fiber part of the model operator for one connection profile.
#[derive(Debug, Clone)]
pub struct FiberOperator {
    pub n: usize,
    pub h: f64,
    /// Number of horizontal components (base dimension).
    pub m: usize,
    pub eps: f64,
    interior: Vec<bool>,
    /// Link averages `Ā` per node and fiber axis, for the edge to `p + e`.
    link: Vec<[LieValue; 4]>,
    /// Vertical curvature per node in `PAIRS4` order.
    curv: Vec<[LieValue; 6]>,
    /// Orthonormal deflation vectors restricted to interior nodes.
    deflation: Vec<Vec<LieValue>>,
    precond: DstPreconditioner,
}

impl FiberOperator {
    /// Linearization at the basic instanton of scale `grid.eps`, or at the
    /// trivial connection when `flat` is set.
    pub fn new(grid: &ProductGrid, flat: bool) -> Result<Self> {
        let fg = ProductGrid::fiber_only(grid.fiber_n, grid.fiber_h, grid.eps)?.with_center(grid.fiber_center);
        let n = grid.fiber_n;
        let nf = fg.fiber_points();
        let par = InstantonParams::basic(grid.eps);
        let (conn, curv2) = if flat {
            (GaugeField::zeros(&fg), None)
        } else {
            (instanton_connection(&fg, &par), Some(instanton_curvature(&fg, &par)))
        };
        let interior: Vec<bool> = (0..nf).map(|f| !fg.on_fiber_boundary(f)).collect();
        let link = (0..nf)
            .map(|f| {
                std::array::from_fn(|a| match fg.shift(f, a, 1) {
                    Some(q) => (conn.get(f, a) + conn.get(q, a)) * 0.5,
                    None => LieValue::ZERO,
                })
            })
            .collect();
        let curv = (0..nf)
            .map(|f| match &curv2 {
                Some(c) => std::array::from_fn(|s| c.get(f, s)),
                None => [LieValue::ZERO; 6],
            })
            .collect();
        let nc = grid.base_dim() + 4;
        let mut deflation: Vec<Vec<LieValue>> = Vec::new();
        if !flat {
            for j in 0..KernelCoeffs::DIM {
                let mut v = vec![LieValue::ZERO; nf * nc];
                for f in 0..nf {
                    if interior[f] {
                        let k = kernel_element(&par, &KernelCoeffs::basis(j), fg.fiber_coord(f));
                        v[f * nc + nc - 4..f * nc + nc].copy_from_slice(&k);
                    }
                }
                // modified Gram-Schmidt, twice for stability
                for _ in 0..2 {
                    for q in &deflation {
                        let c = dotv(q, &v);
                        axpy(&mut v, -c, q);
                    }
                }
                let nv = dotv(&v, &v).sqrt();
                if !(nv > 0.0) {
                    return Err(Error::KernelObstruction("kernel fields are linearly dependent on the fiber grid".into()));
                }
                v.iter_mut().for_each(|x| *x = *x * (1.0 / nv));
                deflation.push(v);
            }
        }
        Ok(Self {
            n,
            h: grid.fiber_h,
            m: grid.base_dim(),
            eps: grid.eps,
            interior,
            link,
            curv,
            deflation,
            precond: DstPreconditioner::new(n - 2, grid.fiber_h),
        })
    }

    /// Components per node.
    #[inline]
    pub fn ncomp(&self) -> usize {
        self.m + 4
    }

    pub fn len(&self) -> usize {
        self.interior.len() * self.ncomp()
    }

    pub fn is_empty(&self) -> bool {
        self.interior.is_empty()
    }

    #[inline]
    fn stride(&self, a: usize) -> usize {
        self.n.pow(3 - a as u32)
    }

    /// `y = (L + shift) x` on one fiber; boundary values of `x` are read
    /// as zero and those of `y` are set to zero.
    pub fn apply(&self, x: &[LieValue], shift: f64, y: &mut [LieValue]) {
        let nc = self.ncomp();
        let nf = self.interior.len();
        let n = self.n;
        let ih = 1.0 / self.h;
        y.iter_mut().for_each(|v| *v = LieValue::ZERO);
        let val = |p: usize, c: usize| if self.interior[p] { x[p * nc + c] } else { LieValue::ZERO };
        for p in 0..nf {
            for a in 0..4 {
                let s = self.stride(a);
                if (p / s) % n == n - 1 {
                    continue;
                }
                let q = p + s;
                if !self.interior[p] && !self.interior[q] {
                    continue;
                }
                let abar = self.link[p][a];
                for c in 0..nc {
                    let (xp, xq) = (val(p, c), val(q, c));
                    let u = (xq - xp) * ih + abar.bracket((xq + xp) * 0.5);
                    let t = abar.bracket(u) * 0.5;
                    y[q * nc + c] += u * ih - t;
                    y[p * nc + c] += u * -ih - t;
                }
            }
        }
        let m = self.m;
        for p in 0..nf {
            if !self.interior[p] {
                y[p * nc..(p + 1) * nc].iter_mut().for_each(|v| *v = LieValue::ZERO);
                continue;
            }
            let xs = &x[p * nc..(p + 1) * nc];
            let f = &self.curv[p];
            let mut add = [LieValue::ZERO; 4];
            for (s, &(al, be)) in PAIRS4.iter().enumerate() {
                // 2[F_{αβ}, a_α] into slot β, 2[F_{βα}, a_β] into slot α
                add[be] += f[s].bracket(xs[m + al]) * 2.0;
                add[al] -= f[s].bracket(xs[m + be]) * 2.0;
            }
            for c in 0..nc {
                let extra = if c >= m { add[c - m] } else { LieValue::ZERO };
                y[p * nc + c] += xs[c] * shift + extra;
            }
        }
    }

    fn deflate(&self, v: &mut [LieValue]) {
        for q in &self.deflation {
            let c = dotv(q, v);
            axpy(v, -c, q);
        }
    }

    fn mask(&self, v: &mut [LieValue]) {
        let nc = self.ncomp();
        for (p, &inside) in self.interior.iter().enumerate() {
            if !inside {
                v[p * nc..(p + 1) * nc].iter_mut().for_each(|x| *x = LieValue::ZERO);
            }
        }
    }

    fn precondition(&self, r: &[LieValue], shift: f64, z: &mut [LieValue]) {
        let nc = self.ncomp();
        let n = self.n;
        let ni = n - 2;
        let mut buf = vec![0.0; ni.pow(4)];
        z.iter_mut().for_each(|v| *v = LieValue::ZERO);
        for c in 0..nc {
            for l in 0..3 {
                for (idx, b) in buf.iter_mut().enumerate() {
                    let k = [idx / (ni * ni * ni) + 1, (idx / (ni * ni)) % ni + 1, (idx / ni) % ni + 1, idx % ni + 1];
                    let p = ((k[0] * n + k[1]) * n + k[2]) * n + k[3];
                    *b = r[p * nc + c].to_array()[l];
                }
                self.precond.solve(&mut buf, shift);
                for (idx, b) in buf.iter().enumerate() {
                    let k = [idx / (ni * ni * ni) + 1, (idx / (ni * ni)) % ni + 1, (idx / ni) % ni + 1, idx % ni + 1];
                    let p = ((k[0] * n + k[1]) * n + k[2]) * n + k[3];
                    let mut arr = z[p * nc + c].to_array();
                    arr[l] = *b;
                    z[p * nc + c] = LieValue::from_array(arr);
                }
            }
        }
    }

    /// Coefficients of `v` along the orthonormal deflation vectors.
    pub fn kernel_content(&self, v: &[LieValue]) -> Vec<f64> {
        self.deflation.iter().map(|q| dotv(q, v)).collect()
    }
}

/// One frequency of the model problem.
#[derive(Debug, Clone, Copy)]
pub struct FrequencySystem<'a> {
    pub op: &'a FiberOperator,
    /// `ξ_i = 2π k_i / L_i`.
    pub xi: [f64; 3],
    /// Discrete `|ξ|²`.
    pub shift: f64,
    /// Solve in the orthogonal complement of the kernel fields.
    pub deflate: bool,
}

/// Outcome of a fiber solve.
#[derive(Debug, Clone)]
pub struct FiberSolution {
    pub field: Vec<LieValue>,
    pub iterations: usize,
    pub residual: f64,
}

/// Preconditioned MINRES for `(L + σ) â = b` on one fiber. The collocated
/// stencil leaves the discrete near-kernel slightly negative, so the
/// deflated operator is symmetric but indefinite.
///
/// With deflation the system is solved on the complement of the kernel
/// fields and `b` is read through the same projection. Without it a
/// zero-frequency right-hand side dominated by kernel fields is reported as
/// a kernel obstruction. Amplification is no test at desk resolution: the
/// discrete translation modes sit well away from zero.
pub fn solve_fiber(sys: &FrequencySystem, b: &[LieValue]) -> Result<FiberSolution> {
    let op = sys.op;
    if b.len() != op.len() {
        return Err(Error::Shape(format!("fiber field has {} values, expected {}", b.len(), op.len())));
    }
    if b.iter().any(|v| !v.max_abs().is_finite()) {
        return Err(Error::InvalidParameter("non-finite right-hand side".into()));
    }
    let mut rhs = b.to_vec();
    op.mask(&mut rhs);
    if sys.deflate {
        op.deflate(&mut rhs);
    }
    let bnorm = dotv(&rhs, &rhs).sqrt();
    let mut x = vec![LieValue::ZERO; b.len()];
    if bnorm == 0.0 {
        return Ok(FiberSolution { field: x, iterations: 0, residual: 0.0 });
    }
    check_kernel_content(sys, &rhs, bnorm)?;
    let apply = |v: &[LieValue], out: &mut [LieValue]| {
        op.apply(v, sys.shift, out);
        if sys.deflate {
            op.deflate(out);
        }
    };
    let prec = |v: &[LieValue], out: &mut [LieValue]| {
        op.precondition(v, sys.shift, out);
        if sys.deflate {
            op.deflate(out);
        }
    };
    let mut total = 0;
    let mut res = 1.0;
    let mut scratch = vec![LieValue::ZERO; b.len()];
    // restarts guard against the gap between the preconditioned estimate
    // and the true residual
    for _ in 0..8 {
        apply(&x, &mut scratch);
        let r0: Vec<LieValue> = rhs.iter().zip(&scratch).map(|(u, v)| *u - *v).collect();
        res = dotv(&r0, &r0).sqrt() / bnorm;
        if res < FIBER_TOL {
            return Ok(FiberSolution { field: x, iterations: total, residual: res });
        }
        let (dx, its) = minres(&apply, &prec, &r0, 0.1 * FIBER_TOL * bnorm / dotv(&r0, &r0).sqrt(), MAX_ITER - total);
        total += its;
        axpy(&mut x, 1.0, &dx);
        if total >= MAX_ITER {
            break;
        }
    }
    Err(Error::NoConvergence(format!("fiber solve stopped after {total} iterations with relative residual {res:.3e}")))
}

/// Preconditioned MINRES for a symmetric, possibly indefinite operator.
/// Stops when the preconditioned residual has dropped by `rtol`.
fn minres(
    apply: &dyn Fn(&[LieValue], &mut [LieValue]),
    prec: &dyn Fn(&[LieValue], &mut [LieValue]),
    b: &[LieValue],
    rtol: f64,
    max_iter: usize,
) -> (Vec<LieValue>, usize) {
    let n = b.len();
    let mut x = vec![LieValue::ZERO; n];
    let mut y = vec![LieValue::ZERO; n];
    prec(b, &mut y);
    let beta1 = dotv(b, &y).max(0.0).sqrt();
    if beta1 == 0.0 {
        return (x, 0);
    }
    let mut r1 = b.to_vec();
    let mut r2 = b.to_vec();
    let mut w = vec![LieValue::ZERO; n];
    let mut w1 = vec![LieValue::ZERO; n];
    let mut w2 = vec![LieValue::ZERO; n];
    let mut v = vec![LieValue::ZERO; n];
    let (mut beta, mut oldb, mut dbar, mut epsln, mut phibar) = (beta1, 0.0, 0.0, 0.0, beta1);
    let (mut cs, mut sn) = (-1.0f64, 0.0f64);
    for it in 1..=max_iter {
        let s = 1.0 / beta;
        for (vi, yi) in v.iter_mut().zip(&y) {
            *vi = *yi * s;
        }
        apply(&v, &mut y);
        if it >= 2 {
            axpy(&mut y, -beta / oldb, &r1);
        }
        let alpha = dotv(&v, &y);
        axpy(&mut y, -alpha / beta, &r2);
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        prec(&r2, &mut y);
        oldb = beta;
        beta = dotv(&r2, &y).max(0.0).sqrt();
        let oldeps = epsln;
        let delta = cs * dbar + sn * alpha;
        let gbar = sn * dbar - cs * alpha;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::MIN_POSITIVE);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;
        std::mem::swap(&mut w1, &mut w2);
        std::mem::swap(&mut w2, &mut w);
        for i in 0..n {
            w[i] = (v[i] - w1[i] * oldeps - w2[i] * delta) * (1.0 / gamma);
        }
        axpy(&mut x, phi, &w);
        if phibar < rtol * beta1 || beta == 0.0 {
            return (x, it);
        }
    }
    (x, max_iter)
}

/// Fraction of an undeflated zero-frequency right-hand side allowed to lie
/// along the kernel fields.
pub const KERNEL_CONTENT_TOL: f64 = 0.9;

fn check_kernel_content(sys: &FrequencySystem, b: &[LieValue], bnorm: f64) -> Result<()> {
    if sys.deflate || sys.op.deflation.is_empty() || sys.shift != 0.0 {
        return Ok(());
    }
    let c = sys.op.kernel_content(b);
    let frac = c.iter().map(|x| x * x).sum::<f64>().sqrt() / bnorm;
    if frac > KERNEL_CONTENT_TOL {
        return Err(Error::KernelObstruction(format!(
            "right-hand side has kernel content {frac:.3e} at zero frequency; solve in the kernel complement"
        )));
    }
    Ok(())
}

/// Base frequencies of `grid` with their conjugate partners.
fn frequency_pairs(grid: &ProductGrid) -> Vec<(usize, usize)> {
    let nb = grid.base_points();
    let counts = &grid.base_counts;
    (0..nb)
        .map(|b| {
            let k = grid.base_multi(b);
            let mut partner = 0;
            for ax in 0..grid.base_dim() {
                partner = partner * counts[ax] + (counts[ax] - k[ax]) % counts[ax];
            }
            (b, partner)
        })
        .collect()
}

fn frequency(grid: &ProductGrid, b: usize) -> ([f64; 3], f64) {
    let k = grid.base_multi(b);
    let mut xi = [0.0; 3];
    let mut shift = 0.0;
    for ax in 0..grid.base_dim() {
        let n = grid.base_counts[ax] as i64;
        let kk = k[ax] as i64;
        let signed = if 2 * kk > n { kk - n } else { kk };
        xi[ax] = 2.0 * PI * signed as f64 / grid.base_lengths[ax];
        let h = grid.base_spacing(ax);
        shift += 4.0 * (PI * kk as f64 / n as f64).sin().powi(2) / (h * h);
    }
    (xi, shift)
}

/// Forward or inverse DFT over the base axes of `cols` interleaved columns.
fn base_fft(grid: &ProductGrid, data: &mut [Complex64], cols: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let nb = grid.base_points();
    let mut stride_b = nb;
    for ax in 0..grid.base_dim() {
        let n = grid.base_counts[ax];
        stride_b /= n;
        let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for b0 in 0..nb {
            if (b0 / stride_b) % n != 0 {
                continue;
            }
            for c in 0..cols {
                for k in 0..n {
                    buf[k] = data[(b0 + k * stride_b) * cols + c];
                }
                fft.process(&mut buf);
                for k in 0..n {
                    data[(b0 + k * stride_b) * cols + c] = buf[k];
                }
            }
        }
    }
}

/// Model operator `𝕃_B` on the whole product grid.
#[derive(Debug, Clone)]
pub struct ModelOperator {
    pub grid: ProductGrid,
    pub fiber: FiberOperator,
}

/// Solver statistics for one `solve_model` call.
#[derive(Debug, Clone, Default)]
pub struct ModelStats {
    pub max_iterations: usize,
    pub max_residual: f64,
}

impl ModelOperator {
    pub fn new(grid: &ProductGrid) -> Result<Self> {
        Ok(Self { grid: grid.clone(), fiber: FiberOperator::new(grid, false)? })
    }

    /// Same discretization around the trivial connection.
    pub fn flat(grid: &ProductGrid) -> Result<Self> {
        Ok(Self { grid: grid.clone(), fiber: FiberOperator::new(grid, true)? })
    }

    /// `𝕃_B a` with Dirichlet zero on the fiber faces.
    pub fn apply(&self, a: &GaugeField) -> Result<GaugeField> {
        a.check_grid(&self.grid)?;
        let g = &self.grid;
        let nf = g.fiber_points();
        let nc = self.fiber.ncomp();
        let blk = nf * nc;
        let mut out = GaugeField::zeros(g);
        out.data.par_chunks_mut(blk).enumerate().for_each(|(b, o)| {
            self.fiber.apply(&a.data[b * blk..(b + 1) * blk], 0.0, o);
            for ax in 0..g.base_dim() {
                let h2 = g.base_spacing(ax).powi(2);
                let p0 = b * nf;
                let bm = g.shift(p0, ax, -1).unwrap() / nf;
                let bp = g.shift(p0, ax, 1).unwrap() / nf;
                for (i, v) in o.iter_mut().enumerate() {
                    if !self.fiber.interior[i / nc] {
                        continue;
                    }
                    let c = a.data[b * blk + i];
                    *v += (c * 2.0 - a.data[bm * blk + i] - a.data[bp * blk + i]) * (1.0 / h2);
                }
            }
        });
        Ok(out)
    }

    /// Solves `𝕃_B a = b` frequency by frequency. With `deflate` every
    /// frequency is solved on the complement of the kernel fields.
    pub fn solve(&self, b: &GaugeField, deflate: bool) -> Result<(GaugeField, ModelStats)> {
        b.check_grid(&self.grid)?;
        let g = &self.grid;
        let nb = g.base_points();
        let cols = self.fiber.len();
        let mut spec: Vec<Complex64> = Vec::with_capacity(nb * cols * 3);
        // columns are (fiber value, Lie coordinate)
        for v in &b.data {
            let a = v.to_array();
            spec.extend(a.iter().map(|&x| Complex64::new(x, 0.0)));
        }
        base_fft(g, &mut spec, cols * 3, false);

        let pairs = frequency_pairs(g);
        let mut jobs: Vec<(usize, bool)> = Vec::new();
        for &(k, partner) in &pairs {
            if k <= partner {
                jobs.push((k, false));
                if k != partner {
                    jobs.push((k, true));
                }
            }
        }
        let solved: Vec<Result<(usize, bool, FiberSolution)>> = jobs
            .par_iter()
            .map(|&(k, imag)| {
                let (xi, shift) = frequency(g, k);
                let sys = FrequencySystem { op: &self.fiber, xi, shift, deflate };
                let rhs: Vec<LieValue> = (0..cols)
                    .map(|c| {
                        let s = &spec[(k * cols + c) * 3..(k * cols + c) * 3 + 3];
                        let pick = |z: Complex64| if imag { z.im } else { z.re };
                        LieValue::new(pick(s[0]), pick(s[1]), pick(s[2]))
                    })
                    .collect();
                solve_fiber(&sys, &rhs).map(|s| (k, imag, s))
            })
            .collect();

        let mut out_spec = vec![Complex64::new(0.0, 0.0); nb * cols * 3];
        let mut stats = ModelStats::default();
        for r in solved {
            let (k, imag, sol) = r?;
            stats.max_iterations = stats.max_iterations.max(sol.iterations);
            stats.max_residual = stats.max_residual.max(sol.residual);
            let partner = pairs[k].1;
            for (c, v) in sol.field.iter().enumerate() {
                for (l, x) in v.to_array().into_iter().enumerate() {
                    let idx = (k * cols + c) * 3 + l;
                    let pidx = (partner * cols + c) * 3 + l;
                    if imag {
                        out_spec[idx].im = x;
                        out_spec[pidx].im = -x;
                    } else {
                        out_spec[idx].re = x;
                        out_spec[pidx].re = x;
                    }
                }
            }
        }
        base_fft(g, &mut out_spec, cols * 3, true);
        let scale = 1.0 / nb as f64;
        let mut out = GaugeField::zeros(g);
        for (i, v) in out.data.iter_mut().enumerate() {
            *v = LieValue::new(out_spec[3 * i].re * scale, out_spec[3 * i + 1].re * scale, out_spec[3 * i + 2].re * scale);
        }
        Ok((out, stats))
    }
}

/// Solves `𝕃_B a = b` for `b ∈ ℰ`; the result lies in ℰ.
pub fn solve_model(op: &ModelOperator, basis: &ProjectionBasis, b: &GaugeField) -> Result<GaugeField> {
    check_in_e(basis, b)?;
    Ok(op.solve(b, true)?.0)
}

/// Rejects fields with a relative ℰ defect above `E_TOL`, naming the
/// largest `(w, μ, r)` component.
pub fn check_in_e(basis: &ProjectionBasis, b: &GaugeField) -> Result<()> {
    let defect = basis.relative_defect(b);
    if defect > E_TOL {
        let coeffs = basis.coefficients(b)?;
        let mut worst = [0.0f64; 8];
        for c in &coeffs {
            for j in 0..8 {
                worst[j] = worst[j].max(c[j].abs());
            }
        }
        let w = worst[..4].iter().cloned().fold(0.0, f64::max);
        return Err(Error::KernelObstruction(format!(
            "field not in the kernel complement (relative defect {defect:.3e}; |w| {w:.3e}, |mu| {:.3e}, |r| {:.3e})",
            worst[4],
            worst[5..].iter().cloned().fold(0.0, f64::max)
        )));
    }
    Ok(())
}

/// Smooth compactly supported test field at the instanton scale with random
/// coefficients, moved into ℰ.
pub fn manufactured_field(grid: &ProductGrid, basis: &ProjectionBasis, rng: &mut impl rand::Rng) -> Result<GaugeField> {
    let d = grid.dim();
    let nf = grid.fiber_points();
    let eps = grid.eps;
    let coef: Vec<[f64; 3]> = (0..d * 3).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
    let shift: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-0.5..0.5) * eps);
    let modes: Vec<(usize, f64)> = (0..grid.base_dim()).map(|ax| (ax, rng.gen_range(0.0..2.0 * PI))).collect();
    let outer = 0.9 * grid.fiber_radius();
    let a = GaugeField::from_fn(grid, |p, out| {
        let (b, f) = (p / nf, p % nf);
        let w = grid.fiber_coord(f);
        let x = grid.base_coord(b);
        let r2: f64 = (0..4).map(|i| (w[i] - shift[i]).powi(2)).sum();
        let r = r2.sqrt();
        if r >= outer {
            return;
        }
        // C^∞ bump of width ~2ε, switched off before the box faces
        let bump = (-r2 / (4.0 * eps * eps)).exp() * crate::ops::smooth_step((outer - r) / (0.3 * outer));
        let mut base = 1.0;
        for &(ax, ph) in &modes {
            base *= 1.0 + 0.5 * (2.0 * PI * x[ax] / grid.base_lengths[ax] + ph).cos();
        }
        for mu in 0..d {
            let c = coef[mu * 3];
            let lin = coef[mu * 3 + 1];
            let t = w[mu % 4] / eps;
            out[mu] = LieValue::new(c[0] + lin[0] * t, c[1] + lin[1] * t, c[2] + lin[2] * t) * (bump * base);
        }
    });
    basis.compact_complement(&a)
}

/// One probe row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRow {
    pub eps: f64,
    pub draw: usize,
    pub ratio: f64,
}

/// Grid used by the probe at scale `eps`.
pub fn probe_grid(eps: f64, fiber_n: usize) -> Result<ProductGrid> {
    ProductGrid::scaled(&[4], &[1.0], fiber_n, 8.0, eps)
}

/// Ratio `‖a‖_{1+ν} / ‖𝕃_B a‖_{3+ν}` for `a ∈ ℰ`.
pub fn estimate_ratio(op: &ModelOperator, basis: &ProjectionBasis, a: &GaugeField) -> Result<f64> {
    check_in_e(basis, a)?;
    let spec = WeightSpec::default_for(op.grid.eps);
    let la = op.apply(a)?;
    let num = weighted_norm(&op.grid, a, spec.shifted(1.0)).total();
    let den = weighted_norm(&op.grid, &la, spec.shifted(3.0)).total();
    Ok(num / den)
}

/// Weighted-norm ratios over `draws` manufactured ℰ-fields for each `ε`.
pub fn uniform_estimate_probe(eps_sweep: &[f64], draws: usize, fiber_n: usize, seed: u64) -> Result<Vec<ProbeRow>> {
    use rand::SeedableRng;
    let mut rows = Vec::new();
    for (i, &eps) in eps_sweep.iter().enumerate() {
        let grid = probe_grid(eps, fiber_n)?;
        let op = ModelOperator::new(&grid)?;
        let basis = ProjectionBasis::new(&grid, Cutoff::None)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        for draw in 0..draws {
            let a = manufactured_field(&grid, &basis, &mut rng)?;
            rows.push(ProbeRow { eps, draw, ratio: estimate_ratio(&op, &basis, &a)? });
        }
    }
    Ok(rows)
}

/// Estimate ratio for `A = 0` computed twice on a Gaussian `e^{−|w|²/4ε²}
/// cos(2πx₁/L)`: with the discrete flat operator and with its exact Laplacian.
pub fn flat_ratio_two_paths(eps: f64, fiber_n: usize) -> Result<(f64, f64)> {
    let grid = probe_grid(eps, fiber_n)?;
    let op = ModelOperator::flat(&grid)?;
    let nf = grid.fiber_points();
    let k = 2.0 * PI / grid.base_lengths[0];
    let eval = |p: usize, lap: bool| {
        let (b, f) = (p / nf, p % nf);
        if grid.on_fiber_boundary(f) {
            return 0.0;
        }
        let w = grid.fiber_coord(f);
        let r2: f64 = w.iter().map(|x| x * x).sum();
        let g = (-r2 / (4.0 * eps * eps)).exp();
        let eta = (k * grid.base_coord(b)[0]).cos();
        if lap {
            // −Δ in four fiber variables plus −∂²_x
            (g * (2.0 / (eps * eps) - r2 / (4.0 * eps.powi(4))) + k * k * g) * eta
        } else {
            g * eta
        }
    };
    let fill = |lap: bool| {
        GaugeField::from_fn(&grid, |p, out| {
            let v = eval(p, lap);
            for (c, o) in out.iter_mut().enumerate() {
                *o = LieValue::new(v, 0.5 * v, if c == 0 { v } else { 0.0 });
            }
        })
    };
    let a = fill(false);
    let spec = WeightSpec::default_for(eps);
    let num = weighted_norm(&grid, &a, spec.shifted(1.0)).total();
    let discrete = num / weighted_norm(&grid, &op.apply(&a)?, spec.shifted(3.0)).total();
    let exact = num / weighted_norm(&grid, &fill(true), spec.shifted(3.0)).total();
    Ok((discrete, exact))
}
