//! Ordinary least squares via SVD (minimum-norm when rank deficient).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub rank: usize,
    /// Set when the centered design was not of full column rank and the
    /// minimum-norm solution was returned.
    pub rank_deficient: bool,
}

impl LinearModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.intercept + x.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>()
    }
}

pub(crate) fn column_means(x: &Matrix) -> Vec<f64> {
    let mut m = vec![0.0; x.ncols()];
    for r in x.rows() {
        m.iter_mut().zip(r).for_each(|(a, v)| *a += v);
    }
    let n = x.nrows().max(1) as f64;
    m.iter_mut().for_each(|a| *a /= n);
    m
}

pub fn fit_linear(x: &Matrix, y: &[f64]) -> Result<LinearModel> {
    let (n, p) = (x.nrows(), x.ncols());
    if n != y.len() {
        return Err(Error::invalid("row count differs from outcome length"));
    }
    if n == 0 {
        return Err(Error::invalid("cannot fit on zero rows"));
    }
    let xm = column_means(x);
    let ym = stats::mean(y);
    if p == 0 {
        return Ok(LinearModel {
            intercept: ym,
            coefficients: Vec::new(),
            rank: 0,
            rank_deficient: false,
        });
    }
    let a = DMatrix::from_fn(n, p, |i, j| x.get(i, j) - xm[j]);
    let b = DVector::from_iterator(n, y.iter().map(|v| v - ym));
    let svd = a.svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = smax * (n.max(p) as f64) * f64::EPSILON * 16.0;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let beta = svd
        .solve(&b, tol.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Degenerate(e.to_string()))?;
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let intercept = ym - coefficients.iter().zip(&xm).map(|(b, m)| b * m).sum::<f64>();
    Ok(LinearModel {
        intercept,
        coefficients,
        rank,
        rank_deficient: rank < p,
    })
}
