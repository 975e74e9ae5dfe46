//! Real trigonometric series on a flat torus, evaluated generically so that
//! dual numbers carry exact derivatives through the gluing data.

use num_dual::DualNum;
use rustfft::{num_complex::Complex64, FftPlanner};
use std::f64::consts::PI;

/// Largest supported base dimension.
pub const MAX_BASE_DIM: usize = 3;

/// One term `c·cos(k·x) + s·sin(k·x)` with `k_i = 2π n_i / L_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub n: [i32; MAX_BASE_DIM],
    pub cos: f64,
    pub sin: f64,
}

/// Scalar function on the torus with side lengths `lengths`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierSeries {
    pub lengths: Vec<f64>,
    pub constant: f64,
    pub modes: Vec<Mode>,
}

impl FourierSeries {
    pub fn constant(lengths: &[f64], c: f64) -> Self {
        Self { lengths: lengths.to_vec(), constant: c, modes: Vec::new() }
    }

    pub fn zero(lengths: &[f64]) -> Self {
        Self::constant(lengths, 0.0)
    }

    pub fn dim(&self) -> usize {
        self.lengths.len()
    }

    /// Adds `c·cos + s·sin` of the mode with integer wave numbers `n`.
    pub fn with_mode(mut self, n: &[i32], cos: f64, sin: f64) -> Self {
        let mut nn = [0; MAX_BASE_DIM];
        nn[..n.len()].copy_from_slice(n);
        self.modes.push(Mode { n: nn, cos, sin });
        self
    }

    pub fn is_constant(&self) -> bool {
        self.modes.iter().all(|m| m.cos == 0.0 && m.sin == 0.0)
    }

    #[inline]
    fn wave(&self, m: &Mode, i: usize) -> f64 {
        2.0 * PI * m.n[i] as f64 / self.lengths[i]
    }

    pub fn eval<T: DualNum<Primitive = f64> + Copy>(&self, x: &[T]) -> T {
        let mut acc = T::from(self.constant);
        for m in &self.modes {
            let mut ph = T::from(0.0);
            for i in 0..self.dim() {
                ph += x[i] * self.wave(m, i);
            }
            if m.cos != 0.0 {
                acc += ph.cos() * m.cos;
            }
            if m.sin != 0.0 {
                acc += ph.sin() * m.sin;
            }
        }
        acc
    }

    pub fn eval_f64(&self, x: &[f64]) -> f64 {
        self.eval::<f64>(x)
    }

    /// Exact partial derivative along base axis `i`.
    pub fn derivative(&self, i: usize) -> Self {
        let modes = self
            .modes
            .iter()
            .map(|m| {
                let w = self.wave(m, i);
                Mode { n: m.n, cos: m.sin * w, sin: -m.cos * w }
            })
            .filter(|m| m.cos != 0.0 || m.sin != 0.0)
            .collect();
        Self { lengths: self.lengths.clone(), constant: 0.0, modes }
    }

    pub fn laplacian(&self) -> Self {
        let mut out = Self::zero(&self.lengths);
        for i in 0..self.dim() {
            out = out.add(&self.derivative(i).derivative(i));
        }
        out
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut modes = self.modes.clone();
        modes.extend_from_slice(&o.modes);
        Self { lengths: self.lengths.clone(), constant: self.constant + o.constant, modes }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            lengths: self.lengths.clone(),
            constant: self.constant * s,
            modes: self.modes.iter().map(|m| Mode { n: m.n, cos: m.cos * s, sin: m.sin * s }).collect(),
        }
    }

    /// Sum of absolute coefficients weighted by `(1+|k|)^order`, an upper
    /// bound for the `C^order` norm.
    pub fn cn_bound(&self, order: i32) -> f64 {
        let mut acc = self.constant.abs();
        for m in &self.modes {
            let k: f64 = (0..self.dim()).map(|i| self.wave(m, i).powi(2)).sum::<f64>().sqrt();
            acc += (m.cos.abs() + m.sin.abs()) * (1.0 + k).powi(order);
        }
        acc
    }

    /// Trigonometric interpolant of samples on a uniform grid with `counts`
    /// points per axis, in row-major order (last axis fastest).
    pub fn from_grid(lengths: &[f64], counts: &[usize], values: &[f64]) -> Self {
        let total: usize = counts.iter().product();
        assert_eq!(values.len(), total, "sample count does not match grid");
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut planner = FftPlanner::<f64>::new();
        let dim = counts.len();
        for ax in 0..dim {
            let n = counts[ax];
            let fft = planner.plan_fft_forward(n);
            let stride: usize = counts[ax + 1..].iter().product();
            let mut buf = vec![Complex64::new(0.0, 0.0); n];
            for start in 0..total {
                if (start / stride) % n != 0 {
                    continue;
                }
                for k in 0..n {
                    buf[k] = data[start + k * stride];
                }
                fft.process(&mut buf);
                for k in 0..n {
                    data[start + k * stride] = buf[k];
                }
            }
        }
        let mut out = Self::zero(lengths);
        let scale = 1.0 / total as f64;
        for (flat, c) in data.iter().enumerate() {
            let mut idx = [0i32; MAX_BASE_DIM];
            let mut rem = flat;
            for ax in (0..dim).rev() {
                let n = counts[ax];
                let k = (rem % n) as i32;
                rem /= n;
                idx[ax] = if 2 * k > n as i32 { k - n as i32 } else { k };
            }
            let c = c * scale;
            if idx.iter().all(|&k| k == 0) {
                out.constant = c.re;
                continue;
            }
            // keep one representative of each ±k pair
            let mut neg = [0i32; MAX_BASE_DIM];
            let mut self_conj = true;
            for ax in 0..dim {
                let n = counts[ax] as i32;
                let mut nk = -idx[ax];
                if 2 * nk.abs() == n {
                    nk = nk.abs();
                }
                neg[ax] = nk;
                if nk != idx[ax] {
                    self_conj = false;
                }
            }
            if self_conj {
                if c.re != 0.0 {
                    out.modes.push(Mode { n: idx, cos: c.re, sin: 0.0 });
                }
                continue;
            }
            if idx > neg {
                continue;
            }
            // c e^{ikx} + conj(c) e^{-ikx} = 2Re(c) cos - 2Im(c) sin
            out.modes.push(Mode { n: idx, cos: 2.0 * c.re, sin: -2.0 * c.im });
        }
        out
    }
}
