//! 256-bit binary floating point and the few dense kernels needed when energy
//! windows shrink far below double-precision resolution.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use dashu_float::ops::{Abs, SquareRoot};
use dashu_float::round::mode::HalfEven;
use dashu_float::FBig;

pub const PRECISION: usize = 256;

type Inner = FBig<HalfEven, 2>;

#[derive(Clone, PartialEq, PartialOrd)]
pub struct Real(Inner);

impl fmt::Debug for Real {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:e}", self.to_f64())
    }
}

impl Real {
    fn wrap(x: Inner) -> Self {
        Real(x.with_precision(PRECISION).value())
    }

    pub fn zero() -> Self {
        Real::from_int(0)
    }

    pub fn one() -> Self {
        Real::from_int(1)
    }

    pub fn from_int(n: i64) -> Self {
        Real::wrap(Inner::from(n))
    }

    /// Exact conversion of a finite double.
    pub fn from_f64(x: f64) -> Self {
        Real::wrap(Inner::try_from(x).expect("finite double"))
    }

    pub fn ratio(num: i64, den: i64) -> Self {
        Real::from_int(num) / Real::from_int(den)
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().value()
    }

    pub fn abs(&self) -> Self {
        Real(self.0.clone().abs())
    }

    pub fn sqrt(&self) -> Self {
        Real(self.0.sqrt())
    }

    pub fn floor(&self) -> Self {
        Real::wrap(self.0.floor())
    }

    pub fn is_zero(&self) -> bool {
        self.0 == Inner::ZERO
    }

    pub fn signum(&self) -> i32 {
        match self.0.partial_cmp(&Inner::ZERO) {
            Some(Ordering::Greater) => 1,
            Some(Ordering::Less) => -1,
            _ => 0,
        }
    }

    pub fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    pub fn min(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }

    /// log10 of the magnitude, accurate far below the double range.
    pub fn log10_abs(&self) -> f64 {
        if self.is_zero() {
            return f64::NEG_INFINITY;
        }
        self.0.clone().abs().ln().to_f64().value() / std::f64::consts::LN_10
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $op:tt) => {
        impl $trait<&Real> for &Real {
            type Output = Real;
            fn $method(self, rhs: &Real) -> Real {
                Real(&self.0 $op &rhs.0)
            }
        }
        impl $trait<Real> for Real {
            type Output = Real;
            fn $method(self, rhs: Real) -> Real {
                Real(self.0 $op rhs.0)
            }
        }
        impl $trait<&Real> for Real {
            type Output = Real;
            fn $method(self, rhs: &Real) -> Real {
                Real(self.0 $op &rhs.0)
            }
        }
        impl $trait<Real> for &Real {
            type Output = Real;
            fn $method(self, rhs: Real) -> Real {
                Real(&self.0 $op rhs.0)
            }
        }
    };
}

binop!(Add, add, +);
binop!(Sub, sub, -);
binop!(Mul, mul, *);
binop!(Div, div, /);

impl Neg for Real {
    type Output = Real;
    fn neg(self) -> Real {
        Real(-self.0)
    }
}

impl Neg for &Real {
    type Output = Real;
    fn neg(self) -> Real {
        Real(-self.0.clone())
    }
}

/// Row-major dense matrix of [`Real`].
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<Real>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![Real::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, Real::one());
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Real) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &Real {
        &self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Real) {
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i).clone())
    }

    pub fn mul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows);
        Matrix::from_fn(self.rows, rhs.cols, |i, j| {
            let mut acc = Real::zero();
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a.is_zero() {
                    continue;
                }
                acc = acc + a * rhs.get(k, j);
            }
            acc
        })
    }

    pub fn sub(&self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j) - rhs.get(i, j))
    }

    pub fn add(&self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j) + rhs.get(i, j))
    }

    pub fn scale(&self, s: &Real) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j) * s)
    }

    pub fn shift_diagonal(&self, s: &Real) -> Matrix {
        let mut m = self.clone();
        for i in 0..self.rows.min(self.cols) {
            let v = m.get(i, i) - s;
            m.set(i, i, v);
        }
        m
    }

    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Matrix {
        Matrix::from_fn(rows.len(), cols.len(), |i, j| self.get(rows[i], cols[j]).clone())
    }

    pub fn column(&self, j: usize) -> Vec<Real> {
        (0..self.rows).map(|i| self.get(i, j).clone()).collect()
    }

    pub fn from_columns(cols: &[Vec<Real>]) -> Matrix {
        let rows = cols.first().map_or(0, |c| c.len());
        Matrix::from_fn(rows, cols.len(), |i, j| cols[j][i].clone())
    }

    pub fn symmetrized(&self) -> Matrix {
        let half = Real::ratio(1, 2);
        Matrix::from_fn(self.rows, self.cols, |i, j| (self.get(i, j) + self.get(j, i)) * &half)
    }

    pub fn frobenius(&self) -> Real {
        self.data.iter().fold(Real::zero(), |acc, x| acc + x * x).sqrt()
    }

    pub fn max_abs(&self) -> Real {
        self.data.iter().fold(Real::zero(), |acc, x| acc.max(x.abs()))
    }

    pub fn to_f64(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).to_f64())
    }

    /// Solves `self X = rhs` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, rhs: &Matrix) -> Option<Matrix> {
        assert_eq!(self.rows, self.cols);
        assert_eq!(self.rows, rhs.rows);
        let n = self.rows;
        let mut a = self.clone();
        let mut b = rhs.clone();
        for col in 0..n {
            let mut piv = col;
            let mut best = a.get(col, col).abs();
            for r in col + 1..n {
                let v = a.get(r, col).abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best.is_zero() {
                return None;
            }
            if piv != col {
                a.swap_rows(piv, col);
                b.swap_rows(piv, col);
            }
            let p = a.get(col, col).clone();
            for r in col + 1..n {
                if a.get(r, col).is_zero() {
                    continue;
                }
                let factor = a.get(r, col) / &p;
                for c in col..n {
                    let v = a.get(r, c) - &factor * a.get(col, c);
                    a.set(r, c, v);
                }
                for c in 0..b.cols {
                    let v = b.get(r, c) - &factor * b.get(col, c);
                    b.set(r, c, v);
                }
            }
        }
        for col in (0..n).rev() {
            let p = a.get(col, col).clone();
            for c in 0..b.cols {
                let mut v = b.get(col, c).clone();
                for k in col + 1..n {
                    let a_ck = a.get(col, k);
                    if !a_ck.is_zero() {
                        v = v - a_ck * b.get(k, c);
                    }
                }
                b.set(col, c, v / &p);
            }
        }
        Some(b)
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        for j in 0..self.cols {
            self.data.swap(a * self.cols + j, b * self.cols + j);
        }
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix; eigenvalues ascending.
pub fn sym_eigen(m: &Matrix) -> (Vec<Real>, Matrix) {
    let n = m.rows();
    let mut a = m.symmetrized();
    let mut v = Matrix::identity(n);
    let scale = a.max_abs();
    let tiny = &scale * Real::from_f64(2f64.powi(-(PRECISION as i32) + 8));
    for _sweep in 0..100 {
        let mut off = Real::zero();
        for i in 0..n {
            for j in i + 1..n {
                off = off.max(a.get(i, j).abs());
            }
        }
        if off <= tiny {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q).clone();
                if apq.abs() <= tiny {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (&apq * Real::from_int(2));
                let sign = if theta.signum() < 0 { -1 } else { 1 };
                let t = Real::from_int(sign) / (theta.abs() + (&theta * &theta + Real::one()).sqrt());
                let c = Real::one() / (&t * &t + Real::one()).sqrt();
                let s = &t * &c;
                for k in 0..n {
                    let akp = a.get(k, p).clone();
                    let akq = a.get(k, q).clone();
                    a.set(k, p, &c * &akp - &s * &akq);
                    a.set(k, q, &s * &akp + &c * &akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k).clone();
                    let aqk = a.get(q, k).clone();
                    a.set(p, k, &c * &apk - &s * &aqk);
                    a.set(q, k, &s * &apk + &c * &aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p).clone();
                    let vkq = v.get(k, q).clone();
                    v.set(k, p, &c * &vkp - &s * &vkq);
                    v.set(k, q, &s * &vkp + &c * &vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(i, i).partial_cmp(a.get(j, j)).unwrap_or(Ordering::Equal));
    let values = order.iter().map(|&i| a.get(i, i).clone()).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v.get(r, order[c]).clone());
    (values, vectors)
}

pub fn dot(a: &[Real], b: &[Real]) -> Real {
    a.iter().zip(b).fold(Real::zero(), |acc, (x, y)| acc + x * y)
}

pub fn norm(a: &[Real]) -> Real {
    dot(a, a).sqrt()
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn sym_norm(m: &Matrix) -> Real {
    if m.rows() == 0 {
        return Real::zero();
    }
    let (vals, _) = sym_eigen(m);
    vals.into_iter().fold(Real::zero(), |acc, v| acc.max(v.abs()))
}

/// Nearest multiple of `h`, exact midpoints going to the smaller multiple.
pub fn snap(x: &Real, h: &Real) -> (Real, Real) {
    let q = x / h;
    let fl = q.floor();
    let frac = &q - &fl;
    let m = if frac > Real::ratio(1, 2) { fl + Real::one() } else { fl };
    let value = &m * h;
    (m, value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_beyond_double() {
        let third = Real::ratio(1, 3);
        let back = &third * Real::from_int(3) - Real::one();
        assert!(back.abs().log10_abs() < -70.0);
        let tiny = Real::from_f64(1e-300) * Real::from_f64(1e-300);
        assert!((tiny.log10_abs() + 600.0).abs() < 1e-9);
        assert_eq!(Real::from_f64(0.75).to_f64(), 0.75);
    }

    #[test]
    fn solve_and_eigen_agree_with_double() {
        let m = Matrix::from_fn(3, 3, |i, j| Real::from_f64(if i == j { 2.0 } else { -0.5 }));
        let rhs = Matrix::from_fn(3, 1, |i, _| Real::from_int(i as i64 + 1));
        let x = m.solve(&rhs).unwrap();
        let check = m.mul(&x).sub(&rhs);
        assert!(check.max_abs().log10_abs() < -70.0);
        let (vals, vecs) = sym_eigen(&m);
        let expect = [1.0, 2.5, 2.5];
        for (v, e) in vals.iter().zip(expect) {
            assert!((v.to_f64() - e).abs() < 1e-15);
        }
        let recon = vecs.mul(&Matrix::from_fn(3, 3, |i, j| if i == j { vals[i].clone() } else { Real::zero() }))
            .mul(&vecs.transpose())
            .sub(&m);
        assert!(recon.max_abs().log10_abs() < -70.0);
    }

    #[test]
    fn snap_ties_go_down() {
        let h = Real::ratio(1, 1000);
        let (m, _) = snap(&Real::ratio(15, 10000), &h);
        assert_eq!(m.to_f64(), 1.0);
        let (m, _) = snap(&Real::ratio(5012, 10000), &h);
        assert_eq!(m.to_f64(), 501.0);
    }
}
