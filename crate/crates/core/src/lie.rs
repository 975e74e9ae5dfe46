//! The Lie algebra su(2) in the quaternionic basis, 2-forms on R^4 and
//! the self-dual/anti-self-dual splitting.
//!
//! The basis elements act on R^4 by the matrices returned from
//! [`basis_matrix`]; the bracket is then `[X, Y] = 2 (x × y)` on
//! coefficient vectors and the inner product is half the Frobenius
//! product of the matrices.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

/// An element `c_i 𝔦 + c_j 𝔧 + c_k 𝔨` of su(2).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LieValue {
    pub ci: f64,
    pub cj: f64,
    pub ck: f64,
}

impl LieValue {
    pub const ZERO: LieValue = LieValue::new(0.0, 0.0, 0.0);
    pub const I: LieValue = LieValue::new(1.0, 0.0, 0.0);
    pub const J: LieValue = LieValue::new(0.0, 1.0, 0.0);
    pub const K: LieValue = LieValue::new(0.0, 0.0, 1.0);

    #[inline]
    pub const fn new(ci: f64, cj: f64, ck: f64) -> Self {
        Self { ci, cj, ck }
    }

    #[inline]
    pub fn from_array(c: [f64; 3]) -> Self {
        Self::new(c[0], c[1], c[2])
    }

    #[inline]
    pub fn to_array(self) -> [f64; 3] {
        [self.ci, self.cj, self.ck]
    }

    /// Lie bracket; `[𝔦, 𝔧] = 2𝔨` and cyclic.
    #[inline]
    pub fn bracket(self, o: LieValue) -> LieValue {
        LieValue::new(
            2.0 * (self.cj * o.ck - self.ck * o.cj),
            2.0 * (self.ck * o.ci - self.ci * o.ck),
            2.0 * (self.ci * o.cj - self.cj * o.ci),
        )
    }

    /// Half-Frobenius inner product, so `⟨𝔦, 𝔦⟩ = 2`.
    #[inline]
    pub fn inner(self, o: LieValue) -> f64 {
        2.0 * (self.ci * o.ci + self.cj * o.cj + self.ck * o.ck)
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.inner(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Largest absolute coefficient.
    #[inline]
    pub fn max_abs(self) -> f64 {
        self.ci.abs().max(self.cj.abs()).max(self.ck.abs())
    }

    /// The 4×4 real matrix of this element acting on R^4.
    pub fn matrix(self) -> [[f64; 4]; 4] {
        let mut m = [[0.0; 4]; 4];
        for (c, b) in self.to_array().iter().zip(0..3) {
            let bm = basis_matrix(b);
            for r in 0..4 {
                for s in 0..4 {
                    m[r][s] += c * bm[r][s];
                }
            }
        }
        m
    }

    /// Matrix action on a vector of R^4.
    #[inline]
    pub fn act(self, v: [f64; 4]) -> [f64; 4] {
        let [a, b, c] = self.to_array();
        // columns of the basis matrices, written out
        [
            a * v[1] + b * v[2] + c * v[3],
            -a * v[0] + b * v[3] - c * v[2],
            -a * v[3] - b * v[0] + c * v[1],
            a * v[2] - b * v[1] - c * v[0],
        ]
    }
}

/// Matrix of a basis element (0 = 𝔦, 1 = 𝔧, 2 = 𝔨), column `c` holding
/// the image of the unit vector `e_{c+1}`.
pub fn basis_matrix(b: usize) -> [[f64; 4]; 4] {
    let mut m = [[0.0; 4]; 4];
    // (row, col, value) for the images of e1..e4
    let entries: [(usize, usize, f64); 4] = match b {
        0 => [(1, 0, -1.0), (0, 1, 1.0), (3, 2, 1.0), (2, 3, -1.0)],
        1 => [(2, 0, -1.0), (3, 1, -1.0), (0, 2, 1.0), (1, 3, 1.0)],
        2 => [(3, 0, -1.0), (2, 1, 1.0), (1, 2, -1.0), (0, 3, 1.0)],
        _ => panic!("su(2) basis index out of range: {b}"),
    };
    for (r, c, v) in entries {
        m[r][c] = v;
    }
    m
}

/// Matrix commutator, used as an independent check of [`LieValue::bracket`].
pub fn matrix_commutator(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            let mut s = 0.0;
            for k in 0..4 {
                s += a[r][k] * b[k][c] - b[r][k] * a[k][c];
            }
            out[r][c] = s;
        }
    }
    out
}

/// Reads coefficients back from a matrix in the span of the basis.
pub fn from_matrix(m: &[[f64; 4]; 4]) -> LieValue {
    // ⟨X, e⟩ = ½ tr(Xᵀ e) and ⟨e, e⟩ = 2
    let mut c = [0.0; 3];
    for (b, cb) in c.iter_mut().enumerate() {
        let bm = basis_matrix(b);
        let mut s = 0.0;
        for r in 0..4 {
            for k in 0..4 {
                s += m[r][k] * bm[r][k];
            }
        }
        *cb = s / 4.0;
    }
    LieValue::from_array(c)
}

impl Add for LieValue {
    type Output = LieValue;
    #[inline]
    fn add(self, o: LieValue) -> LieValue {
        LieValue::new(self.ci + o.ci, self.cj + o.cj, self.ck + o.ck)
    }
}

impl Sub for LieValue {
    type Output = LieValue;
    #[inline]
    fn sub(self, o: LieValue) -> LieValue {
        LieValue::new(self.ci - o.ci, self.cj - o.cj, self.ck - o.ck)
    }
}

impl Neg for LieValue {
    type Output = LieValue;
    #[inline]
    fn neg(self) -> LieValue {
        LieValue::new(-self.ci, -self.cj, -self.ck)
    }
}

impl Mul<f64> for LieValue {
    type Output = LieValue;
    #[inline]
    fn mul(self, s: f64) -> LieValue {
        LieValue::new(self.ci * s, self.cj * s, self.ck * s)
    }
}

impl Mul<LieValue> for f64 {
    type Output = LieValue;
    #[inline]
    fn mul(self, v: LieValue) -> LieValue {
        v * self
    }
}

impl AddAssign for LieValue {
    #[inline]
    fn add_assign(&mut self, o: LieValue) {
        self.ci += o.ci;
        self.cj += o.cj;
        self.ck += o.ck;
    }
}

impl SubAssign for LieValue {
    #[inline]
    fn sub_assign(&mut self, o: LieValue) {
        self.ci -= o.ci;
        self.cj -= o.cj;
        self.ck -= o.ck;
    }
}

impl std::iter::Sum for LieValue {
    fn sum<I: Iterator<Item = LieValue>>(iter: I) -> LieValue {
        iter.fold(LieValue::ZERO, |a, b| a + b)
    }
}

/// Coefficient types a 2-form can carry: reals or su(2) values.
pub trait Coeff:
    Copy + Default + Add<Output = Self> + Sub<Output = Self> + Neg<Output = Self> + Mul<f64, Output = Self>
{
    /// Componentwise inner product used to make Λ₊ ⟂ Λ₋ checks.
    fn dot(self, o: Self) -> f64;
}

impl Coeff for f64 {
    #[inline]
    fn dot(self, o: f64) -> f64 {
        self * o
    }
}

impl Coeff for LieValue {
    #[inline]
    fn dot(self, o: LieValue) -> f64 {
        self.inner(o)
    }
}

/// Slot order of 2-form components on R^4 (0-based index pairs).
pub const PAIRS4: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// Slot of the ordered pair `(a, b)` with `a < b` in [`PAIRS4`].
#[inline]
pub fn pair_slot4(a: usize, b: usize) -> usize {
    debug_assert!(a < b && b < 4);
    match (a, b) {
        (0, 1) => 0,
        (0, 2) => 1,
        (0, 3) => 2,
        (1, 2) => 3,
        (1, 3) => 4,
        _ => 5,
    }
}

/// A 2-form on R^4 with components `ω_{αβ}`, α<β, in the order of [`PAIRS4`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TwoForm<T: Coeff> {
    pub c: [T; 6],
}

impl<T: Coeff> TwoForm<T> {
    pub fn new(c: [T; 6]) -> Self {
        Self { c }
    }

    pub fn zero() -> Self {
        Self { c: [T::default(); 6] }
    }

    /// Component `ω(e_a, e_b)` for any a, b (antisymmetric extension).
    #[inline]
    pub fn get(&self, a: usize, b: usize) -> T {
        use std::cmp::Ordering::*;
        match a.cmp(&b) {
            Less => self.c[pair_slot4(a, b)],
            Greater => -self.c[pair_slot4(b, a)],
            Equal => T::default(),
        }
    }

    /// Hodge star for the orientation e1∧e2∧e3∧e4.
    pub fn hodge(&self) -> Self {
        let c = &self.c;
        // *e12 = e34, *e13 = -e24, *e14 = e23 and the inverse relations
        Self::new([c[5], -c[4], c[3], c[2], -c[1], c[0]])
    }

    pub fn selfdual_part(&self) -> Self {
        let c = &self.c;
        let p = (c[0] + c[5]) * 0.5;
        let q = (c[1] - c[4]) * 0.5;
        let s = (c[2] + c[3]) * 0.5;
        Self::new([p, q, s, s, -q, p])
    }

    pub fn antiselfdual_part(&self) -> Self {
        let sd = self.selfdual_part();
        let mut c = self.c;
        for (x, y) in c.iter_mut().zip(sd.c) {
            *x = *x - y;
        }
        Self::new(c)
    }

    /// Componentwise inner product `Σ_{α<β} ⟨ω_{αβ}, η_{αβ}⟩`.
    pub fn dot(&self, o: &Self) -> f64 {
        self.c.iter().zip(o.c.iter()).map(|(a, b)| a.dot(*b)).sum()
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut c = self.c;
        for (x, y) in c.iter_mut().zip(o.c) {
            *x = *x + y;
        }
        Self::new(c)
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut c = self.c;
        for x in c.iter_mut() {
            *x = *x * s;
        }
        Self::new(c)
    }
}

impl TwoForm<LieValue> {
    pub fn max_abs(&self) -> f64 {
        self.c.iter().map(|v| v.max_abs()).fold(0.0, f64::max)
    }
}

/// Projection `P₊` onto self-dual forms.
pub fn selfdual_project<T: Coeff>(w: &TwoForm<T>) -> TwoForm<T> {
    w.selfdual_part()
}

/// An element of Λ₊² R^4 in the basis (e12+e34, e13−e24, e14+e23), viewed
/// as the skew matrix `r_{ρσ}`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SkewPlus {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl SkewPlus {
    pub const ZERO: SkewPlus = SkewPlus { a: 0.0, b: 0.0, c: 0.0 };

    pub const fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.a, self.b, self.c]
    }

    /// Basis element `k` (0, 1, 2).
    pub fn basis(k: usize) -> Self {
        let mut v = [0.0; 3];
        v[k] = 1.0;
        Self::from_array(v)
    }

    pub fn matrix(self) -> [[f64; 4]; 4] {
        let (a, b, c) = (self.a, self.b, self.c);
        [
            [0.0, a, b, c],
            [-a, 0.0, c, -b],
            [-b, -c, 0.0, a],
            [-c, b, -a, 0.0],
        ]
    }

    /// `(r y)_ρ = r_{ρσ} y_σ`.
    #[inline]
    pub fn apply(self, y: [f64; 4]) -> [f64; 4] {
        let (a, b, c) = (self.a, self.b, self.c);
        [
            a * y[1] + b * y[2] + c * y[3],
            -a * y[0] + c * y[2] - b * y[3],
            -b * y[0] - c * y[1] + a * y[3],
            -c * y[0] + b * y[1] - a * y[2],
        ]
    }

    /// Full matrix contraction `Σ_{ρσ} r_{ρσ} s_{ρσ}` (four times the
    /// coefficient dot product).
    pub fn inner(self, o: SkewPlus) -> f64 {
        4.0 * (self.a * o.a + self.b * o.b + self.c * o.c)
    }

    pub fn norm_sq(self) -> f64 {
        self.inner(self)
    }

    /// The associated 2-form `Σ_{ρ<σ} r_{ρσ} e_ρ∧e_σ`.
    pub fn two_form(self) -> TwoForm<f64> {
        let m = self.matrix();
        let mut c = [0.0; 6];
        for (s, &(p, q)) in PAIRS4.iter().enumerate() {
            c[s] = m[p][q];
        }
        TwoForm::new(c)
    }

    /// Matrix commutator, which stays in Λ₊².
    pub fn commutator(self, o: SkewPlus) -> SkewPlus {
        let c = matrix_commutator(&self.matrix(), &o.matrix());
        SkewPlus::new(c[0][1], c[0][2], c[0][3])
    }
}

impl Add for SkewPlus {
    type Output = SkewPlus;
    fn add(self, o: SkewPlus) -> SkewPlus {
        SkewPlus::new(self.a + o.a, self.b + o.b, self.c + o.c)
    }
}

impl Sub for SkewPlus {
    type Output = SkewPlus;
    fn sub(self, o: SkewPlus) -> SkewPlus {
        SkewPlus::new(self.a - o.a, self.b - o.b, self.c - o.c)
    }
}

impl Mul<f64> for SkewPlus {
    type Output = SkewPlus;
    fn mul(self, s: f64) -> SkewPlus {
        SkewPlus::new(self.a * s, self.b * s, self.c * s)
    }
}

/// Orthonormal-up-to-scale spanning bases of Λ₊² and Λ₋².
pub fn selfdual_basis() -> [TwoForm<f64>; 3] {
    [
        TwoForm::new([1.0, 0.0, 0.0, 0.0, 0.0, 1.0]),
        TwoForm::new([0.0, 1.0, 0.0, 0.0, -1.0, 0.0]),
        TwoForm::new([0.0, 0.0, 1.0, 1.0, 0.0, 0.0]),
    ]
}

pub fn antiselfdual_basis() -> [TwoForm<f64>; 3] {
    [
        TwoForm::new([1.0, 0.0, 0.0, 0.0, 0.0, -1.0]),
        TwoForm::new([0.0, 1.0, 0.0, 0.0, 1.0, 0.0]),
        TwoForm::new([0.0, 0.0, 1.0, -1.0, 0.0, 0.0]),
    ]
}
