//! Dense Gaussian elimination over exact rationals or `f64`.

use crate::rational::{self, Rational};
use num_traits::{Num, Signed, Zero};
use std::fmt::Debug;
use std::ops::Neg;

pub type Matrix<T> = Vec<Vec<T>>;

/// Scalars usable by the elimination routines. For `f64`, entries below
/// `1e-12` in magnitude count as zero.
pub trait Field: Clone + Debug + PartialEq + Send + Sync + Num + Neg<Output = Self> {
    fn negligible(&self) -> bool;
    /// Pivot preference; larger is better.
    fn magnitude(&self) -> f64;
    fn from_rational(r: &Rational) -> Self;
    fn to_f64(&self) -> f64;
}

impl Field for Rational {
    fn negligible(&self) -> bool {
        self.is_zero()
    }
    fn magnitude(&self) -> f64 {
        // Any nonzero pivot is exact; prefer the first one found.
        if self.is_zero() {
            0.0
        } else {
            1.0
        }
    }
    fn from_rational(r: &Rational) -> Self {
        r.clone()
    }
    fn to_f64(&self) -> f64 {
        rational::to_f64(self)
    }
}

impl Field for f64 {
    fn negligible(&self) -> bool {
        self.abs() < 1e-12
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
    fn from_rational(r: &Rational) -> Self {
        rational::to_f64(r)
    }
    fn to_f64(&self) -> f64 {
        *self
    }
}

/// Reduces `m` in place to reduced row echelon form, pivoting only among
/// the first `ncols` columns. Returns the pivot column of each pivot row;
/// pivot rows come first.
pub fn rref<T: Field>(m: &mut Matrix<T>, ncols: usize) -> Vec<usize> {
    let rows = m.len();
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..ncols {
        if r == rows {
            break;
        }
        let mut best = None;
        let mut best_mag = 0.0;
        for (i, row) in m.iter().enumerate().skip(r) {
            if row[c].negligible() {
                continue;
            }
            let mag = row[c].magnitude();
            if best.is_none() || mag > best_mag {
                best = Some(i);
                best_mag = mag;
            }
        }
        let Some(p) = best else { continue };
        m.swap(r, p);
        let inv = T::one() / m[r][c].clone();
        for x in m[r].iter_mut() {
            *x = x.clone() * inv.clone();
        }
        for i in 0..rows {
            if i == r || m[i][c].negligible() {
                if i != r {
                    m[i][c] = T::zero();
                }
                continue;
            }
            let f = m[i][c].clone();
            let (pivot_row, row) = if i < r {
                let (a, b) = m.split_at_mut(r);
                (&b[0], &mut a[i])
            } else {
                let (a, b) = m.split_at_mut(i);
                (&a[r], &mut b[0])
            };
            for (x, p) in row.iter_mut().zip(pivot_row.iter()) {
                if !p.is_zero() {
                    *x = x.clone() - f.clone() * p.clone();
                }
            }
            row[c] = T::zero();
        }
        pivots.push(c);
        r += 1;
    }
    pivots
}

/// Unique solution of the square system `a x = b`, or `None` if singular.
pub fn solve<T: Field>(a: &Matrix<T>, b: &[T]) -> Option<Vec<T>> {
    let n = a.len();
    let cols: Vec<Vec<T>> = vec![b.to_vec()];
    solve_multi(a, &cols).map(|mut xs| {
        debug_assert_eq!(xs.len(), 1);
        let x = xs.pop().expect("one column");
        debug_assert_eq!(x.len(), n);
        x
    })
}

/// Solves `a X = B` for several right-hand sides given as columns.
pub fn solve_multi<T: Field>(a: &Matrix<T>, rhs: &[Vec<T>]) -> Option<Vec<Vec<T>>> {
    let n = a.len();
    let k = rhs.len();
    let mut m: Matrix<T> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            assert_eq!(row.len(), n, "solve expects a square matrix");
            let mut r = row.clone();
            r.extend(rhs.iter().map(|col| col[i].clone()));
            r
        })
        .collect();
    let pivots = rref(&mut m, n);
    if pivots.len() < n {
        return None;
    }
    Some((0..k).map(|j| (0..n).map(|i| m[i][n + j].clone()).collect()).collect())
}

/// Basis of `{x : a x = 0}` for a matrix with `ncols` columns.
pub fn null_space<T: Field>(a: &Matrix<T>, ncols: usize) -> Vec<Vec<T>> {
    let mut m = a.clone();
    let pivots = rref(&mut m, ncols);
    let free: Vec<usize> = (0..ncols).filter(|c| !pivots.contains(c)).collect();
    free.iter()
        .map(|&f| {
            let mut v = vec![T::zero(); ncols];
            v[f] = T::one();
            for (r, &pc) in pivots.iter().enumerate() {
                v[pc] = -m[r][f].clone();
            }
            v
        })
        .collect()
}

pub fn identity<T: Field>(n: usize) -> Matrix<T> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { T::one() } else { T::zero() }).collect())
        .collect()
}

pub fn mat_mul<T: Field>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let n = a.len();
    let k = b.len();
    let m = if k == 0 { 0 } else { b[0].len() };
    let mut c = vec![vec![T::zero(); m]; n];
    for i in 0..n {
        for l in 0..k {
            let x = &a[i][l];
            if x.is_zero() {
                continue;
            }
            for j in 0..m {
                if !b[l][j].is_zero() {
                    c[i][j] = c[i][j].clone() + x.clone() * b[l][j].clone();
                }
            }
        }
    }
    c
}

pub fn to_f64_matrix(a: &Matrix<Rational>) -> Matrix<f64> {
    a.iter().map(|r| r.iter().map(rational::to_f64).collect()).collect()
}

pub fn max_abs_diff(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}

pub fn dot<T: Field>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + x.clone() * y.clone())
}

pub fn is_nonneg(r: &Rational) -> bool {
    !r.is_negative()
}
