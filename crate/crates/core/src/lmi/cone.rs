//! Standard conic form shared by the interior-point and max-det solvers.
//!
//! A problem is `min c^T x` subject to `h_k - G_k x` being positive
//! semidefinite for every block `k`. Block values are stored as `svec`
//! vectors (lower triangle, column-major, off-diagonals scaled by sqrt 2) so
//! that Euclidean inner products equal trace inner products.

use nalgebra::{DMatrix, DVector};

const SQRT2: f64 = std::f64::consts::SQRT_2;

pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

pub fn svec(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    let mut v = DVector::zeros(svec_len(n));
    let mut k = 0;
    for j in 0..n {
        v[k] = m[(j, j)];
        k += 1;
        for i in j + 1..n {
            v[k] = 0.5 * (m[(i, j)] + m[(j, i)]) * SQRT2;
            k += 1;
        }
    }
    v
}

pub fn smat(v: &[f64], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        m[(j, j)] = v[k];
        k += 1;
        for i in j + 1..n {
            let x = v[k] / SQRT2;
            m[(i, j)] = x;
            m[(j, i)] = x;
            k += 1;
        }
    }
    m
}

/// One positive semidefinite block `h - G x`.
#[derive(Debug, Clone)]
pub struct ConeBlock {
    pub order: usize,
    pub h: DVector<f64>,
    pub g: DMatrix<f64>,
    /// Index of the modeling-level constraint this block came from.
    pub source: usize,
}

impl ConeBlock {
    pub fn slack(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let v = &self.h - &self.g * x;
        smat(v.as_slice(), self.order)
    }
}

#[derive(Debug, Clone)]
pub struct ConeProgram {
    pub c: DVector<f64>,
    /// Constant added to the objective when reporting.
    pub c0: f64,
    pub blocks: Vec<ConeBlock>,
}

impl ConeProgram {
    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// Barrier parameter: the sum of block orders.
    pub fn degree(&self) -> usize {
        self.blocks.iter().map(|b| b.order).sum()
    }

    pub fn h_norm(&self) -> f64 {
        self.blocks.iter().map(|b| b.h.norm_squared()).sum::<f64>().sqrt()
    }
}
