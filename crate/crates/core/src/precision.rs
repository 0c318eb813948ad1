//! Scalar abstraction for the dense solves, with an `f64` and a double-double backend.
//!
//! Layer stripping on the parallelogram amplifies rounding in the boundary data by many
//! orders of magnitude, so the reconstruction path can be run in roughly 32-digit arithmetic.

use std::fmt;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Real:
    Copy
    + fmt::Debug
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    /// Unit roundoff of the arithmetic.
    const EPSILON: f64;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn abs(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
    fn from_ratio(num: i64, den: i64) -> Self {
        Self::from_f64(num as f64) / Self::from_f64(den as f64)
    }
}

impl Real for f64 {
    const EPSILON: f64 = f64::EPSILON;

    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
}

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi)/2`.
#[derive(Clone, Copy, Default, PartialEq)]
pub struct DoubleDouble {
    hi: f64,
    lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl DoubleDouble {
    pub const fn new(hi: f64, lo: f64) -> Self {
        DoubleDouble { hi, lo }
    }

    pub fn hi(self) -> f64 {
        self.hi
    }

    pub fn lo(self) -> f64 {
        self.lo
    }

    fn mul_f64(self, b: f64) -> Self {
        let (p, e) = two_prod(self.hi, b);
        let (hi, lo) = quick_two_sum(p, e + self.lo * b);
        DoubleDouble { hi, lo }
    }
}

impl fmt::Debug for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:e}{:+e}", self.hi, self.lo)
    }
}

impl fmt::Display for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.hi)
    }
}

impl PartialOrd for DoubleDouble {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        match self.hi.partial_cmp(&other.hi) {
            Some(std::cmp::Ordering::Equal) => self.lo.partial_cmp(&other.lo),
            ord => ord,
        }
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, b: Self) -> Self {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        DoubleDouble { hi, lo }
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        DoubleDouble { hi: -self.hi, lo: -self.lo }
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, b: Self) -> Self {
        self + (-b)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    fn mul(self, b: Self) -> Self {
        let (p, e) = two_prod(self.hi, b.hi);
        let e = e + (self.hi * b.lo + self.lo * b.hi);
        let (hi, lo) = quick_two_sum(p, e);
        DoubleDouble { hi, lo }
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    // long division with two correction steps; the remainder is formed exactly enough
    // that 1/3 carries a nonzero low word
    fn div(self, b: Self) -> Self {
        let q1 = self.hi / b.hi;
        let r = self - b.mul_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b.mul_f64(q2);
        let q3 = r.hi / b.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        DoubleDouble { hi, lo } + DoubleDouble { hi: q3, lo: 0.0 }
    }
}

macro_rules! assign_ops {
    ($($tr:ident $m:ident $op:tt),*) => {$(
        impl $tr for DoubleDouble {
            fn $m(&mut self, rhs: Self) {
                *self = *self $op rhs;
            }
        }
    )*};
}
assign_ops!(AddAssign add_assign +, SubAssign sub_assign -, MulAssign mul_assign *, DivAssign div_assign /);

impl Real for DoubleDouble {
    const EPSILON: f64 = 4.93e-32;

    fn from_f64(x: f64) -> Self {
        DoubleDouble { hi: x, lo: 0.0 }
    }
    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
    fn abs(self) -> Self {
        if self.hi < 0.0 || (self.hi == 0.0 && self.lo < 0.0) {
            -self
        } else {
            self
        }
    }
}

/// Row-major dense matrix over a [`Real`] scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Dense { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Dense { rows, cols, data }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    let prod = a * other[(k, j)];
                    out[(i, j)] += prod;
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(self.cols, x.len());
        (0..self.rows)
            .map(|i| {
                let mut acc = T::zero();
                for j in 0..self.cols {
                    acc += self[(i, j)] * x[j];
                }
                acc
            })
            .collect()
    }

    pub fn sub_matrix(&self, rows: &[usize], cols: &[usize]) -> Self {
        Self::from_fn(rows.len(), cols.len(), |i, j| self[(rows[i], cols[j])])
    }

    pub fn map_to<U: Real>(&self) -> Dense<U> {
        Dense { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| U::from_f64(x.to_f64())).collect() }
    }

    pub fn to_f64(&self) -> Dense<f64> {
        Dense { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x.to_f64()).collect() }
    }

    pub fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.rows, self.cols, |i, j| self[(i, j)].to_f64())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|x| x.to_f64().abs()).fold(0.0, f64::max)
    }
}

impl Dense<f64> {
    pub fn from_nalgebra(m: &nalgebra::DMatrix<f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

impl<T> std::ops::Index<(usize, usize)> for Dense<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Dense<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// LU factorization with partial pivoting.
#[derive(Clone, Debug)]
pub struct Lu<T> {
    n: usize,
    lu: Vec<T>,
    perm: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SingularPivot {
    pub column: usize,
}

impl<T: Real> Lu<T> {
    pub fn factor(a: &Dense<T>) -> Result<Self, SingularPivot> {
        assert_eq!(a.rows, a.cols, "LU needs a square matrix");
        let n = a.rows;
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut best = lu[k * n + k].abs();
            for i in k + 1..n {
                let v = lu[i * n + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == T::zero() {
                return Err(SingularPivot { column: k });
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            for i in k + 1..n {
                let factor = lu[i * n + k] / pivot;
                lu[i * n + k] = factor;
                if factor == T::zero() {
                    continue;
                }
                for j in k + 1..n {
                    let t = factor * lu[k * n + j];
                    lu[i * n + j] -= t;
                }
            }
        }
        Ok(Lu { n, lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..n {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc / self.lu[i * n + i];
        }
        x
    }

    pub fn solve_matrix(&self, b: &Dense<T>) -> Dense<T> {
        assert_eq!(b.rows, self.n);
        let mut out = Dense::zeros(b.rows, b.cols);
        let mut col = vec![T::zero(); b.rows];
        for j in 0..b.cols {
            for i in 0..b.rows {
                col[i] = b[(i, j)];
            }
            let x = self.solve(&col);
            for i in 0..b.rows {
                out[(i, j)] = x[i];
            }
        }
        out
    }
}

/// Singular values of a real matrix, descending.
pub fn singular_values(a: &Dense<f64>) -> Vec<f64> {
    if a.rows == 0 || a.cols == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = a.to_nalgebra().singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.partial_cmp(x).unwrap());
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dd(x: f64) -> DoubleDouble {
        DoubleDouble::from_f64(x)
    }

    #[test]
    fn third_has_low_word() {
        let third = dd(1.0) / dd(3.0);
        assert!(third.lo() != 0.0);
        let back = third * dd(3.0) - dd(1.0);
        assert!(back.to_f64().abs() < 1e-31, "{back:?}");
    }

    #[test]
    fn seven_thirds_round_trip() {
        let r = dd(7.0) / dd(3.0) * dd(3.0) - dd(7.0);
        assert!(r.to_f64().abs() < 1e-30);
    }

    #[test]
    fn sum_keeps_tiny_terms() {
        let s = dd(1.0) + dd(1e-20) - dd(1.0);
        assert!((s.to_f64() - 1e-20).abs() < 1e-36);
    }

    #[test]
    fn ordering_uses_low_word() {
        assert!(DoubleDouble::new(1.0, 1e-20) > DoubleDouble::new(1.0, 0.0));
        assert!(DoubleDouble::new(-1.0, 0.0).abs() == dd(1.0));
    }

    #[test]
    fn lu_solves_hilbert_better_in_double_double() {
        let n = 9;
        let h64 = Dense::<f64>::from_fn(n, n, |i, j| 1.0 / (i + j + 1) as f64);
        let hdd = Dense::<DoubleDouble>::from_fn(n, n, |i, j| dd(1.0) / dd((i + j + 1) as f64));
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64) - 3.0).collect();
        let b64 = h64.matvec(&x_true);
        let bdd = hdd.matvec(&x_true.iter().map(|&v| dd(v)).collect::<Vec<_>>());
        let x64 = Lu::factor(&h64).unwrap().solve(&b64);
        let xdd = Lu::factor(&hdd).unwrap().solve(&bdd);
        let e64 = x64.iter().zip(&x_true).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let edd = xdd.iter().zip(&x_true).map(|(a, b)| (a.to_f64() - b).abs()).fold(0.0, f64::max);
        assert!(edd < 1e-12, "double-double error {edd}");
        assert!(edd < e64 * 1e-3, "f64 {e64} vs dd {edd}");
    }

    #[test]
    fn singular_matrix_is_reported() {
        let m = Dense::<f64>::from_fn(3, 3, |i, j| (i * 3 + j) as f64);
        let mut m2 = m.clone();
        for j in 0..3 {
            m2[(2, j)] = m[(0, j)];
        }
        assert!(Lu::factor(&m2).is_err());
    }
}
