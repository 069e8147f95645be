//! Row-major matrices with the three GEMM flavors the backward pass needs.
//! Loops are arranged so the inner dimension is contiguous and the
//! accumulation order is fixed, which keeps results bit-reproducible.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![T::ZERO; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(rows * cols, data.len());
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn fill(&mut self, v: T) {
        for x in self.data.iter_mut() {
            *x = v;
        }
    }

    pub fn add_assign(&mut self, other: &Mat<T>) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
    }
}

/// C += A * B, where A is m*k, B is k*n, C is m*n.
pub fn gemm_nn<T: Real>(c: &mut Mat<T>, a: &Mat<T>, b: &Mat<T>) {
    debug_assert_eq!(a.cols, b.rows);
    debug_assert_eq!(c.rows, a.rows);
    debug_assert_eq!(c.cols, b.cols);
    let n = b.cols;
    for i in 0..a.rows {
        let arow = a.row(i);
        let crow = &mut c.data[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            let brow = &b.data[l * n..(l + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
}

/// C += A * B^T, where A is m*k, B is n*k, C is m*n.
pub fn gemm_nt<T: Real>(c: &mut Mat<T>, a: &Mat<T>, b: &Mat<T>) {
    debug_assert_eq!(a.cols, b.cols);
    debug_assert_eq!(c.rows, a.rows);
    debug_assert_eq!(c.cols, b.rows);
    let k = a.cols;
    for i in 0..a.rows {
        let arow = a.row(i);
        let crow = c.row_mut(i);
        for j in 0..b.rows {
            let brow = &b.data[j * k..(j + 1) * k];
            let mut acc = T::ZERO;
            for l in 0..k {
                acc += arow[l] * brow[l];
            }
            crow[j] += acc;
        }
    }
}

/// C += A^T * B, where A is m*k, B is m*n, C is k*n.
pub fn gemm_tn<T: Real>(c: &mut Mat<T>, a: &Mat<T>, b: &Mat<T>) {
    debug_assert_eq!(a.rows, b.rows);
    debug_assert_eq!(c.rows, a.cols);
    debug_assert_eq!(c.cols, b.cols);
    let n = b.cols;
    for i in 0..a.rows {
        let arow = a.row(i);
        let brow = &b.data[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            let crow = &mut c.data[l * n..(l + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
}

/// y += x * m + bias, for a single row x (1*k), m (k*n), y (1*n).
pub fn vecmat<T: Real>(y: &mut [T], x: &[T], m: &Mat<T>, bias: Option<&[T]>) {
    debug_assert_eq!(m.rows, x.len());
    debug_assert_eq!(m.cols, y.len());
    if let Some(b) = bias {
        for (yv, bv) in y.iter_mut().zip(b.iter()) {
            *yv += *bv;
        }
    }
    let n = m.cols;
    for (l, &xv) in x.iter().enumerate() {
        let mrow = &m.data[l * n..(l + 1) * n];
        for j in 0..n {
            y[j] += xv * mrow[j];
        }
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::ZERO;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}
