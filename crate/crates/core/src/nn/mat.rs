//! Minimal dense matrix for the fixed network family. Row-major f64.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Uniform init in ±1/sqrt(fan_in) where fan_in = cols.
    pub fn uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let limit = 1.0 / (cols as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
        Mat { rows, cols, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// y = A x.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// y = A^T v.
    pub fn matvec_t(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let vi = v[i];
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += vi * a;
            }
        }
        out
    }

    /// self += v x^T.
    pub fn add_outer(&mut self, v: &[f64], x: &[f64]) {
        debug_assert_eq!(v.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for i in 0..self.rows {
            let vi = v[i];
            for (w, xi) in self.row_mut(i).iter_mut().zip(x) {
                *w += vi * xi;
            }
        }
    }

    pub fn shape_ok(&self) -> bool {
        self.data.len() == self.rows * self.cols
    }
}

pub fn add_vec(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
