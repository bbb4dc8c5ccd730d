//! Elastic-net regression by cyclic coordinate descent.
//!
//! Minimizes (1/2n)‖y − b₀ − Xb‖² + λ(α‖b‖₁ + (1−α)/2 ‖b‖²) with an
//! unpenalized intercept. λ is given as a fraction of λ_max, the smallest
//! penalty that zeroes every coefficient.

use serde::{Deserialize, Serialize};

use super::linear::{column_means, fit_linear, LinearModel};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::stats;

const MAX_SWEEPS: usize = 10_000;
const TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticNetModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub alpha: f64,
    pub lambda: f64,
    pub sweeps: usize,
}

impl ElasticNetModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.intercept + x.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>()
    }
}

fn soft(z: f64, g: f64) -> f64 {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        0.0
    }
}

pub fn lambda_max(x: &Matrix, y: &[f64], alpha: f64) -> f64 {
    let xm = column_means(x);
    let ym = stats::mean(y);
    let n = x.nrows() as f64;
    let mut best: f64 = 0.0;
    for j in 0..x.ncols() {
        let dot: f64 = (0..x.nrows()).map(|i| (x.get(i, j) - xm[j]) * (y[i] - ym)).sum();
        best = best.max(dot.abs());
    }
    best / (n * alpha.max(1e-3))
}

/// Fit with an absolute penalty `lambda`. A zero penalty is solved exactly
/// by least squares.
pub fn fit_elastic_net(x: &Matrix, y: &[f64], alpha: f64, lambda: f64) -> Result<ElasticNetModel> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid("elastic-net alpha must lie in [0, 1]"));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid("elastic-net lambda must be finite and non-negative"));
    }
    if lambda == 0.0 {
        let LinearModel {
            intercept,
            coefficients,
            ..
        } = fit_linear(x, y)?;
        return Ok(ElasticNetModel {
            intercept,
            coefficients,
            alpha,
            lambda,
            sweeps: 0,
        });
    }
    let (n, p) = (x.nrows(), x.ncols());
    if n != y.len() || n == 0 {
        return Err(Error::invalid("row count differs from outcome length"));
    }
    let nf = n as f64;
    let xm = column_means(x);
    let ym = stats::mean(y);
    // centered columns, column-major
    let cols: Vec<Vec<f64>> = (0..p).map(|j| (0..n).map(|i| x.get(i, j) - xm[j]).collect()).collect();
    let sq: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>() / nf).collect();
    let mut resid: Vec<f64> = y.iter().map(|v| v - ym).collect();
    let mut beta = vec![0.0; p];
    let l1 = lambda * alpha;
    let l2 = lambda * (1.0 - alpha);
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut max_delta: f64 = 0.0;
        for j in 0..p {
            if sq[j] == 0.0 {
                continue;
            }
            let c = &cols[j];
            let rho: f64 = c.iter().zip(&resid).map(|(a, r)| a * r).sum::<f64>() / nf + sq[j] * beta[j];
            let new = soft(rho, l1) / (sq[j] + l2);
            let delta = new - beta[j];
            if delta != 0.0 {
                resid.iter_mut().zip(c).for_each(|(r, a)| *r -= delta * a);
                beta[j] = new;
                max_delta = max_delta.max(delta.abs() * sq[j].sqrt());
            }
        }
        if max_delta < TOL {
            break;
        }
    }
    let intercept = ym - beta.iter().zip(&xm).map(|(b, m)| b * m).sum::<f64>();
    Ok(ElasticNetModel {
        intercept,
        coefficients: beta,
        alpha,
        lambda,
        sweeps,
    })
}
