//! k-nearest-neighbour regression (Euclidean, unweighted mean).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub x: Matrix,
    pub y: Vec<f64>,
}

impl KnnModel {
    pub fn new(k: usize, x: Matrix, y: Vec<f64>) -> Self {
        KnnModel { k: k.clamp(1, y.len().max(1)), x, y }
    }

    /// Indices of the `k` nearest training rows; ties go to the lower index.
    pub fn neighbours(&self, q: &[f64]) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = self
            .x
            .rows()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
            .collect();
        let k = self.k.min(d.len());
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, cmp);
            d.truncate(k);
        }
        d.sort_by(cmp);
        d.into_iter().map(|(_, i)| i).collect()
    }

    pub fn predict_row(&self, q: &[f64]) -> f64 {
        let nb = self.neighbours(q);
        nb.iter().map(|&i| self.y[i]).sum::<f64>() / nb.len() as f64
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        let rows: Vec<&[f64]> = x.rows().collect();
        rows.par_iter().map(|r| self.predict_row(r)).collect()
    }
}
