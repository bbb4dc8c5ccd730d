//! Leakage-free preprocessing recipe.
//!
//! Steps, in order: unseen-level handling, rare-level pooling, one-hot
//! encoding, median imputation, zero-variance removal, centering/scaling of
//! numeric predictors, optional PCA. Every parameter is learned in
//! [`Recipe::fit`] from training rows only and replayed verbatim by
//! [`Recipe::apply`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{CategoricalVar, InputVar, NumericVar, ProcessInputs, NONE_LEVEL};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::stats;

pub const OTHER_LEVEL: &str = "<other>";
pub const MAX_PCA_COMPONENTS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeOptions {
    /// Levels seen in fewer than this fraction of training rows are pooled.
    pub rare_threshold: f64,
    /// Number of principal components to keep (capped at 20), or none.
    pub pca_components: Option<usize>,
}

impl Default for RecipeOptions {
    fn default() -> Self {
        RecipeOptions {
            rare_threshold: 0.01,
            pca_components: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryEncoding {
    pub var: CategoricalVar,
    /// Retained levels in lexical order; everything else maps to `<other>`.
    pub levels: Vec<String>,
    /// Levels pooled because they were rare in training.
    pub pooled: Vec<String>,
    /// Whole family dropped because it was constant in training.
    pub dropped: bool,
}

impl CategoryEncoding {
    fn slot(&self, value: Option<&str>) -> usize {
        let v = value.unwrap_or(NONE_LEVEL);
        match self.levels.binary_search_by(|l| l.as_str().cmp(v)) {
            Ok(i) => i,
            Err(_) => self.levels.len(),
        }
    }

    pub fn width(&self) -> usize {
        self.levels.len() + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericScaling {
    pub var: NumericVar,
    pub median: f64,
    pub mean: f64,
    pub sd: f64,
    /// Constant in training (after imputation).
    pub dropped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Indicator { var: CategoricalVar, level: String },
    Numeric { var: NumericVar, mean: f64, sd: f64 },
    Component { index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

impl ColumnSpec {
    /// Original input variable this column derives from (none for PCA).
    pub fn source(&self) -> Option<InputVar> {
        match &self.kind {
            ColumnKind::Indicator { var, .. } => Some(InputVar::Categorical(*var)),
            ColumnKind::Numeric { var, .. } => Some(InputVar::Numeric(*var)),
            ColumnKind::Component { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub center: Vec<f64>,
    /// Column-major `input_dim x k` loadings, one component per column.
    pub loadings: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// Pre-PCA column layout.
    pub input_columns: Vec<ColumnSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub options: RecipeOptions,
    pub categorical: Vec<CategoryEncoding>,
    pub numeric: Vec<NumericScaling>,
    pub pca: Option<PcaBasis>,
    columns: Vec<ColumnSpec>,
    fitted: bool,
}

impl Recipe {
    pub fn unfitted(options: RecipeOptions) -> Self {
        Recipe {
            options,
            categorical: Vec::new(),
            numeric: Vec::new(),
            pca: None,
            columns: Vec::new(),
            fitted: false,
        }
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted
    }

    /// Learn every step's parameters from `rows`. When `outcomes` is given it
    /// must have nonzero spread.
    pub fn fit(rows: &[ProcessInputs], outcomes: Option<&[f64]>, options: RecipeOptions) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("cannot fit a recipe on zero rows"));
        }
        if let Some(y) = outcomes {
            if y.len() != rows.len() {
                return Err(Error::invalid("outcome length differs from row count"));
            }
            if stats::sample_sd(y) == 0.0 {
                return Err(Error::Degenerate("outcome has zero standard deviation".into()));
            }
        }
        let n = rows.len() as f64;

        let mut categorical = Vec::new();
        for var in CategoricalVar::ALL {
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for r in rows {
                *counts.entry(r.categorical(var).unwrap_or(NONE_LEVEL)).or_insert(0) += 1;
            }
            let (mut levels, mut pooled) = (Vec::new(), Vec::new());
            for (level, c) in &counts {
                if (*c as f64) < options.rare_threshold * n {
                    pooled.push(level.to_string());
                } else {
                    levels.push(level.to_string());
                }
            }
            let constant = (levels.len() == 1 && pooled.is_empty()) || (levels.is_empty());
            categorical.push(CategoryEncoding {
                var,
                levels,
                pooled,
                dropped: constant,
            });
        }

        let mut numeric = Vec::new();
        for var in NumericVar::ALL {
            let observed: Vec<f64> = rows.iter().filter_map(|r| r.numeric(var)).collect();
            let median = if observed.is_empty() { 0.0 } else { stats::median(&observed) };
            let imputed: Vec<f64> = rows.iter().map(|r| r.numeric(var).unwrap_or(median)).collect();
            let first = imputed[0];
            let constant = imputed.iter().all(|&v| v == first);
            let mean = stats::mean(&imputed);
            let sd = stats::sample_sd(&imputed);
            numeric.push(NumericScaling {
                var,
                median,
                mean,
                sd,
                dropped: constant || sd == 0.0,
            });
        }

        let mut recipe = Recipe {
            options: options.clone(),
            categorical,
            numeric,
            pca: None,
            columns: Vec::new(),
            fitted: true,
        };
        recipe.columns = recipe.base_columns();
        if recipe.columns.is_empty() {
            return Err(Error::Degenerate("all predictors removed".into()));
        }

        if let Some(k) = options.pca_components {
            let base = recipe.encode(rows);
            let basis = fit_pca(&base, k.min(MAX_PCA_COMPONENTS), recipe.columns.clone())?;
            recipe.columns = (0..basis.loadings.len())
                .map(|i| ColumnSpec {
                    name: format!("PC{}", i + 1),
                    kind: ColumnKind::Component { index: i },
                })
                .collect();
            recipe.pca = Some(basis);
        }
        Ok(recipe)
    }

    fn base_columns(&self) -> Vec<ColumnSpec> {
        let mut cols = Vec::new();
        for enc in self.categorical.iter().filter(|e| !e.dropped) {
            for level in enc.levels.iter().chain(std::iter::once(&OTHER_LEVEL.to_string())) {
                cols.push(ColumnSpec {
                    name: format!("{}={}", enc.var.name(), level),
                    kind: ColumnKind::Indicator {
                        var: enc.var,
                        level: level.clone(),
                    },
                });
            }
        }
        for s in self.numeric.iter().filter(|s| !s.dropped) {
            cols.push(ColumnSpec {
                name: s.var.name().to_string(),
                kind: ColumnKind::Numeric {
                    var: s.var,
                    mean: s.mean,
                    sd: s.sd,
                },
            });
        }
        cols
    }

    /// Output columns in their fixed order.
    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn n_outputs(&self) -> usize {
        self.columns.len()
    }

    /// Pre-PCA encoding.
    fn encode(&self, rows: &[ProcessInputs]) -> Matrix {
        let width: usize = self
            .categorical
            .iter()
            .filter(|e| !e.dropped)
            .map(CategoryEncoding::width)
            .sum::<usize>()
            + self.numeric.iter().filter(|s| !s.dropped).count();
        let mut m = Matrix::zeros(rows.len(), width);
        for (i, r) in rows.iter().enumerate() {
            let out = m.row_mut(i);
            let mut offset = 0;
            for enc in self.categorical.iter().filter(|e| !e.dropped) {
                out[offset + enc.slot(r.categorical(enc.var))] = 1.0;
                offset += enc.width();
            }
            for s in self.numeric.iter().filter(|s| !s.dropped) {
                let v = r.numeric(s.var).unwrap_or(s.median);
                out[offset] = (v - s.mean) / s.sd;
                offset += 1;
            }
        }
        m
    }

    /// Transform any batch with the fitted parameters.
    pub fn apply(&self, rows: &[ProcessInputs]) -> Result<Matrix> {
        if !self.fitted {
            return Err(Error::RecipeNotFitted);
        }
        let base = self.encode(rows);
        Ok(match &self.pca {
            None => base,
            Some(p) => project(&base, p),
        })
    }

    /// Map a value in standardized units back to raw units for a numeric
    /// column (identity for other column kinds).
    pub fn unscale(&self, column: usize, value: f64) -> f64 {
        match &self.columns[column].kind {
            ColumnKind::Numeric { mean, sd, .. } => value * sd + mean,
            _ => value,
        }
    }
}

fn fit_pca(x: &Matrix, k: usize, input_columns: Vec<ColumnSpec>) -> Result<PcaBasis> {
    let (n, d) = (x.nrows(), x.ncols());
    if n < 2 {
        return Err(Error::Degenerate("PCA needs at least two rows".into()));
    }
    let center: Vec<f64> = (0..d).map(|j| stats::mean(&x.column(j))).collect();
    let mut cov = nalgebra::DMatrix::<f64>::zeros(d, d);
    for row in x.rows() {
        for a in 0..d {
            let da = row[a] - center[a];
            for b in a..d {
                cov[(a, b)] += da * (row[b] - center[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            cov[(a, b)] /= (n - 1) as f64;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > top * 1e-12 && eig.eigenvalues[i] > 0.0)
        .count();
    let keep = k.min(rank).max(1);
    let mut loadings = Vec::with_capacity(keep);
    let mut eigenvalues = Vec::with_capacity(keep);
    for &i in order.iter().take(keep) {
        let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        // sign convention: largest-magnitude loading positive
        let (mut best, mut best_abs) = (0usize, -1.0);
        for (j, x) in v.iter().enumerate() {
            if x.abs() > best_abs + 1e-12 {
                best = j;
                best_abs = x.abs();
            }
        }
        if v[best] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        loadings.push(v);
        eigenvalues.push(eig.eigenvalues[i]);
    }
    Ok(PcaBasis {
        center,
        loadings,
        eigenvalues,
        input_columns,
    })
}

fn project(x: &Matrix, p: &PcaBasis) -> Matrix {
    let k = p.loadings.len();
    let mut out = Matrix::zeros(x.nrows(), k);
    for i in 0..x.nrows() {
        let row = x.row(i);
        for (c, v) in p.loadings.iter().enumerate() {
            let s: f64 = row
                .iter()
                .zip(&p.center)
                .zip(v)
                .map(|((x, m), l)| (x - m) * l)
                .sum();
            out.set(i, c, s);
        }
    }
    out
}

/// Reconstruct pre-PCA inputs from component scores.
pub fn pca_reconstruct(scores: &Matrix, p: &PcaBasis) -> Matrix {
    let d = p.center.len();
    let mut out = Matrix::zeros(scores.nrows(), d);
    for i in 0..scores.nrows() {
        let s = scores.row(i);
        let row = out.row_mut(i);
        for j in 0..d {
            row[j] = p.center[j] + p.loadings.iter().zip(s).map(|(v, sc)| v[j] * sc).sum::<f64>();
        }
    }
    out
}
