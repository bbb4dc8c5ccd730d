//! D-optimal subset selection by Fedorov exchange.
//!
//! Given a candidate model matrix `X` (N x p) the exchange searches for the
//! n-row subset maximizing det(X_dᵀX_d). Each iteration evaluates the
//! determinant ratio of swapping in-design row `i` for out-of-design row `j`,
//!
//!   Δ(i, j) = (1 + d_j)(1 - d_i) + d_ij²,   d_ij = x_iᵀ M⁻¹ x_j,
//!
//! and performs the best swap while Δ > 1.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

/// Number of independent exchange runs for small problems, and the number of
/// attempts at a non-singular starting design.
pub const MAX_RESTARTS: usize = 5;

/// Above this many (in, out) pairs the search is restricted to the
/// `SHORTLIST` least-informative design rows and most-informative outsiders.
const FULL_SEARCH_PAIRS: usize = 250_000;
const SHORTLIST: usize = 32;
const MIN_GAIN: f64 = 1e-9;
const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignSelection {
    /// Chosen candidate rows, ascending.
    pub indices: Vec<usize>,
    /// det(XᵀX)^(1/p) over the chosen rows.
    pub criterion: f64,
    pub log_det: f64,
    pub params: usize,
    /// Criterion after the start and after every accepted swap of the best run.
    pub trace: Vec<f64>,
    pub swaps: usize,
    pub runs: usize,
}

/// Information-matrix log-determinant of the given rows, `None` if singular.
pub fn log_det_of(x: &Matrix, rows: &[usize]) -> Option<f64> {
    let m = information(x, rows);
    let chol = m.cholesky()?;
    let l = chol.l();
    let ld: f64 = (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    ld.is_finite().then_some(ld)
}

fn information(x: &Matrix, rows: &[usize]) -> DMatrix<f64> {
    let p = x.ncols();
    let mut m = DMatrix::zeros(p, p);
    for &r in rows {
        let v = DVector::from_column_slice(x.row(r));
        m.ger(1.0, &v, &v, 1.0);
    }
    m
}

/// Greedy pick of rows that raise the rank, in the given order, then fill.
fn nonsingular_start(x: &Matrix, order: &[usize], n: usize) -> Option<Vec<usize>> {
    let p = x.ncols();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut chosen = Vec::with_capacity(n);
    let mut in_design = vec![false; x.nrows()];
    for &r in order {
        if basis.len() == p {
            break;
        }
        let mut v = x.row(r).to_vec();
        let norm0 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            continue;
        }
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            v.iter_mut().zip(b).for_each(|(a, c)| *a -= dot * c);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > RANK_TOL * norm0.max(1.0) {
            v.iter_mut().for_each(|a| *a /= norm);
            basis.push(v);
            chosen.push(r);
            in_design[r] = true;
        }
    }
    if basis.len() < p {
        return None;
    }
    for &r in order {
        if chosen.len() == n {
            break;
        }
        if !in_design[r] {
            in_design[r] = true;
            chosen.push(r);
        }
    }
    Some(chosen)
}

struct Exchange<'a> {
    x: &'a Matrix,
    design: Vec<usize>,
    in_design: Vec<bool>,
}

impl Exchange<'_> {
    fn inverse_information(&self) -> Option<DMatrix<f64>> {
        information(self.x, &self.design).cholesky().map(|c| c.inverse())
    }

    fn variances(&self, minv: &DMatrix<f64>) -> Vec<f64> {
        (0..self.x.nrows())
            .into_par_iter()
            .map(|j| quad(minv, self.x.row(j), self.x.row(j)))
            .collect()
    }

    /// Best (position in design, outsider, ratio).
    fn best_swap(&self, minv: &DMatrix<f64>, d: &[f64]) -> Option<(usize, usize, f64)> {
        let outside: Vec<usize> = (0..self.x.nrows()).filter(|&j| !self.in_design[j]).collect();
        if outside.is_empty() {
            return None;
        }
        let mut positions: Vec<usize> = (0..self.design.len()).collect();
        let mut outs = outside;
        if positions.len() * outs.len() > FULL_SEARCH_PAIRS {
            positions.sort_by(|&a, &b| d[self.design[a]].total_cmp(&d[self.design[b]]).then(a.cmp(&b)));
            positions.truncate(SHORTLIST);
            outs.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b)));
            outs.truncate(SHORTLIST);
        }
        let mut best: Option<(usize, usize, f64)> = None;
        for &pos in &positions {
            let i = self.design[pos];
            let xi = self.x.row(i);
            // M⁻¹ x_i once per design row
            let mi = minv * DVector::from_column_slice(xi);
            for &j in &outs {
                let dij: f64 = self.x.row(j).iter().zip(mi.iter()).map(|(a, b)| a * b).sum();
                let ratio = (1.0 + d[j]) * (1.0 - d[i]) + dij * dij;
                if best.is_none_or(|(_, _, r)| ratio > r) {
                    best = Some((pos, j, ratio));
                }
            }
        }
        best
    }

    fn run(&mut self, max_iter: usize) -> (f64, Vec<f64>, usize) {
        let p = self.x.ncols() as f64;
        let mut ld = log_det_of(self.x, &self.design).unwrap_or(f64::NEG_INFINITY);
        let mut trace = vec![(ld / p).exp()];
        let mut swaps = 0;
        for _ in 0..max_iter {
            let Some(minv) = self.inverse_information() else { break };
            let d = self.variances(&minv);
            let Some((pos, j, ratio)) = self.best_swap(&minv, &d) else { break };
            if ratio <= 1.0 + MIN_GAIN {
                break;
            }
            let old = self.design[pos];
            self.design[pos] = j;
            let Some(new_ld) = log_det_of(self.x, &self.design).filter(|&v| v > ld) else {
                // rounding made the swap a non-improvement; undo and stop
                self.design[pos] = old;
                break;
            };
            self.in_design[old] = false;
            self.in_design[j] = true;
            ld = new_ld;
            trace.push((ld / p).exp());
            swaps += 1;
        }
        (ld, trace, swaps)
    }
}

fn quad(m: &DMatrix<f64>, a: &[f64], b: &[f64]) -> f64 {
    let p = a.len();
    let mut s = 0.0;
    for r in 0..p {
        if a[r] == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for c in 0..p {
            row += m[(r, c)] * b[c];
        }
        s += a[r] * row;
    }
    s
}

/// Fedorov exchange from a seeded non-singular start.
pub fn federov_select(candidates: &Matrix, n: usize, max_iter: usize, seed: u64) -> Result<DesignSelection> {
    let (rows, p) = (candidates.nrows(), candidates.ncols());
    if p == 0 {
        return Err(Error::invalid("model matrix has no columns"));
    }
    if n < p {
        return Err(Error::DesignTooSmall { rows: n, params: p });
    }
    if n > rows {
        return Err(Error::SampleTooLarge {
            requested: n,
            available: rows,
        });
    }
    if n == rows {
        let all: Vec<usize> = (0..rows).collect();
        let ld = log_det_of(candidates, &all).ok_or(Error::SingularDesign { attempts: 1 })?;
        let crit = (ld / p as f64).exp();
        return Ok(DesignSelection {
            indices: all,
            criterion: crit,
            log_det: ld,
            params: p,
            trace: vec![crit],
            swaps: 0,
            runs: 1,
        });
    }

    let runs = if n * (rows - n) <= FULL_SEARCH_PAIRS / 10 { MAX_RESTARTS } else { 1 };
    let mut best: Option<DesignSelection> = None;
    let mut starts = 0;
    let mut failures = 0;
    let mut rng = rng::seeded(seed);
    while starts < runs && failures < MAX_RESTARTS {
        let mut order: Vec<usize> = (0..rows).collect();
        order.shuffle(&mut rng);
        let Some(design) = nonsingular_start(candidates, &order, n) else {
            failures += 1;
            continue;
        };
        let mut in_design = vec![false; rows];
        design.iter().for_each(|&r| in_design[r] = true);
        let mut ex = Exchange {
            x: candidates,
            design,
            in_design,
        };
        if log_det_of(candidates, &ex.design).is_none() {
            failures += 1;
            continue;
        }
        starts += 1;
        let (ld, trace, swaps) = ex.run(max_iter);
        if best.as_ref().is_none_or(|b| ld > b.log_det) {
            let mut indices = ex.design;
            indices.sort_unstable();
            best = Some(DesignSelection {
                indices,
                criterion: (ld / p as f64).exp(),
                log_det: ld,
                params: p,
                trace,
                swaps,
                runs: 0,
            });
        }
    }
    let mut sel = best.ok_or(Error::SingularDesign { attempts: failures })?;
    sel.runs = starts;
    Ok(sel)
}

/// Columns forming a maximal linearly independent set, scanned left to
/// right (so an intercept placed first is always kept).
pub fn independent_columns(x: &Matrix) -> Vec<usize> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut keep = Vec::new();
    for c in 0..x.ncols() {
        let mut v = x.column(c);
        let norm0 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            continue;
        }
        // two passes of Gram-Schmidt for stability
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
                v.iter_mut().zip(b).for_each(|(a, c)| *a -= dot * c);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 * norm0 {
            v.iter_mut().for_each(|a| *a /= norm);
            basis.push(v);
            keep.push(c);
        }
    }
    keep
}
