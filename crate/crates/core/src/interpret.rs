//! Model-agnostic interpretation: grouped permutation importance, two-variable
//! response grids, a shallow surrogate tree and residual diagnostics.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{ModelBundle, Predictor};
use crate::dataset::{CategoricalVar, InputVar, NumericVar, ProcessInputs};
use crate::error::{Error, Result};
use crate::learners::tree::{fit_tree, Node, RegressionTree, TreeParams};
use crate::pipeline::ColumnKind;
use crate::rng;
use crate::stats;

fn rmse(y: &[f64], p: &[f64]) -> f64 {
    (y.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64).sqrt()
}

fn r_squared(y: &[f64], p: &[f64]) -> Option<f64> {
    let m = stats::mean(y);
    let tss: f64 = y.iter().map(|v| (v - m).powi(2)).sum();
    if tss <= 0.0 {
        return None;
    }
    let rss: f64 = y.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum();
    Some(1.0 - rss / tss)
}

// ---------------------------------------------------------------------------
// Importance

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub variable: String,
    /// Mean RMSE increase, floored at zero.
    pub score: f64,
    /// Unfloored mean increase.
    pub raw_mean: f64,
    /// Standard error of the mean over repeats (0 with one repeat).
    pub std_error: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub baseline_rmse: f64,
    pub repeats: usize,
    pub seed: u64,
    /// Sorted by rank.
    pub features: Vec<FeatureImportance>,
}

impl ImportanceReport {
    pub fn get(&self, variable: &str) -> Option<&FeatureImportance> {
        self.features.iter().find(|f| f.variable == variable)
    }
}

fn copy_var(dst: &mut ProcessInputs, src: &ProcessInputs, var: InputVar) {
    match var {
        InputVar::Numeric(v) => dst.set_numeric(v, src.numeric(v)),
        InputVar::Categorical(v) => dst.set_categorical(v, src.categorical(v).map(str::to_string)),
    }
}

/// Shuffle each raw input variable in turn and measure the RMSE increase.
/// Categoricals are permuted before encoding, so every indicator column of a
/// family moves together.
pub fn permutation_importance(
    predictor: &dyn Predictor,
    rows: &[ProcessInputs],
    y: &[f64],
    repeats: usize,
    seed: u64,
) -> Result<ImportanceReport> {
    if rows.len() < 2 {
        return Err(Error::invalid("importance needs at least two rows"));
    }
    if rows.len() != y.len() {
        return Err(Error::invalid(format!("{} rows but {} outcomes", rows.len(), y.len())));
    }
    if repeats == 0 {
        return Err(Error::invalid("at least one permutation repeat is required"));
    }
    let baseline = rmse(y, &predictor.predict_inputs(rows)?);
    let mut features = InputVar::all()
        .into_par_iter()
        .map(|var| {
            let vseed = rng::derive_seed(seed, var.name());
            let incs = (0..repeats)
                .map(|r| {
                    let mut order: Vec<usize> = (0..rows.len()).collect();
                    order.shuffle(&mut rng::stream(vseed, r as u64));
                    let permuted: Vec<ProcessInputs> = rows
                        .iter()
                        .zip(&order)
                        .map(|(row, &j)| {
                            let mut x = row.clone();
                            copy_var(&mut x, &rows[j], var);
                            x
                        })
                        .collect();
                    Ok(rmse(y, &predictor.predict_inputs(&permuted)?) - baseline)
                })
                .collect::<Result<Vec<f64>>>()?;
            let mean = stats::mean(&incs);
            let se = if repeats > 1 { stats::sample_sd(&incs) / (repeats as f64).sqrt() } else { 0.0 };
            Ok(FeatureImportance {
                variable: var.name().to_string(),
                score: mean.max(0.0),
                raw_mean: mean,
                std_error: se,
                rank: 0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    features.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.variable.cmp(&b.variable)));
    for (i, f) in features.iter_mut().enumerate() {
        f.rank = i + 1;
    }
    Ok(ImportanceReport { baseline_rmse: baseline, repeats, seed, features })
}

// ---------------------------------------------------------------------------
// Response grid

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseGrid {
    pub var_a: String,
    pub var_b: String,
    pub grid_a: Vec<f64>,
    pub grid_b: Vec<f64>,
    /// Values used for every other input.
    pub fixed: BTreeMap<String, String>,
    /// `predictions[i][j]` is at `(grid_a[i], grid_b[j])`, nm.
    pub predictions: Vec<Vec<f64>>,
}

/// Training medians for numerics and modes for categoricals (ties go to the
/// lexically smaller level; a missing value counts as its own level).
pub fn reference_row(rows: &[ProcessInputs]) -> ProcessInputs {
    let mut x = ProcessInputs::new("");
    for var in NumericVar::ALL {
        let vals: Vec<f64> = rows.iter().filter_map(|r| r.numeric(var)).collect();
        x.set_numeric(var, (!vals.is_empty()).then(|| stats::median(&vals)));
    }
    for var in CategoricalVar::ALL {
        let mut counts: BTreeMap<Option<&str>, usize> = BTreeMap::new();
        for r in rows {
            *counts.entry(r.categorical(var)).or_default() += 1;
        }
        let best = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).and_then(|(k, _)| *k);
        x.set_categorical(var, best.map(str::to_string));
    }
    x
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
        .collect()
}

/// The synthesized rows behind a response grid, in row-major order.
pub fn grid_rows(rows: &[ProcessInputs], var_a: NumericVar, var_b: NumericVar, resolution: usize) -> Result<(Vec<f64>, Vec<f64>, ProcessInputs, Vec<ProcessInputs>)> {
    if resolution < 2 {
        return Err(Error::invalid("resolution must be at least 2"));
    }
    if var_a == var_b {
        return Err(Error::invalid("response grid needs two different variables"));
    }
    let range = |var: NumericVar| -> Result<(f64, f64)> {
        let vals: Vec<f64> = rows.iter().filter_map(|r| r.numeric(var)).collect();
        if vals.is_empty() {
            return Err(Error::invalid(format!("`{}` is never observed", var.name())));
        }
        Ok(vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v))))
    };
    let (a_lo, a_hi) = range(var_a)?;
    let (b_lo, b_hi) = range(var_b)?;
    let grid_a = linspace(a_lo, a_hi, resolution);
    let grid_b = linspace(b_lo, b_hi, resolution);
    let base = reference_row(rows);
    let mut out = Vec::with_capacity(resolution * resolution);
    for &a in &grid_a {
        for &b in &grid_b {
            let mut x = base.clone();
            x.set_numeric(var_a, Some(a));
            x.set_numeric(var_b, Some(b));
            out.push(x);
        }
    }
    Ok((grid_a, grid_b, base, out))
}

/// Predictions over an evenly spaced grid spanning the observed ranges of two
/// numeric inputs, all others held at [`reference_row`].
pub fn response_grid(predictor: &dyn Predictor, rows: &[ProcessInputs], var_a: &str, var_b: &str, resolution: usize) -> Result<ResponseGrid> {
    let parse = |name: &str| match InputVar::from_name(name) {
        Some(InputVar::Numeric(v)) => Ok(v),
        Some(InputVar::Categorical(_)) => Err(Error::invalid(format!("`{name}` is categorical; grids need numeric inputs"))),
        None => Err(Error::UnknownVariable(name.to_string())),
    };
    let (va, vb) = (parse(var_a)?, parse(var_b)?);
    let (grid_a, grid_b, base, synth) = grid_rows(rows, va, vb, resolution)?;
    let flat = predictor.predict_inputs(&synth)?;
    let predictions = flat.chunks(resolution).map(<[f64]>::to_vec).collect();
    let mut fixed = BTreeMap::new();
    for var in InputVar::all() {
        if var == InputVar::Numeric(va) || var == InputVar::Numeric(vb) {
            continue;
        }
        let shown = match var {
            InputVar::Numeric(v) => base.numeric(v).map(|x| x.to_string()),
            InputVar::Categorical(v) => base.categorical(v).map(str::to_string),
        };
        fixed.insert(var.name().to_string(), shown.unwrap_or_default());
    }
    Ok(ResponseGrid {
        var_a: va.name().to_string(),
        var_b: vb.name().to_string(),
        grid_a,
        grid_b,
        fixed,
        predictions,
    })
}

// ---------------------------------------------------------------------------
// Surrogate tree

pub const SURROGATE_MIN_LEAF: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateTree {
    pub max_depth: usize,
    pub tree: RegressionTree,
    /// R² of surrogate against the model's own predictions; `None` when the
    /// model is constant on these rows.
    pub fidelity: Option<f64>,
    /// One line per leaf: the conjunction of conditions leading to it.
    pub rules: Vec<String>,
}

impl SurrogateTree {
    /// Indented rendering with the fidelity on the first line.
    pub fn to_text(&self) -> String {
        let fid = self.fidelity.map_or("undefined (constant model)".to_string(), |f| format!("{f:.4}"));
        let mut s = format!("surrogate tree (max depth {}), fidelity R² = {fid}\n", self.max_depth);
        for r in &self.rules {
            s.push_str("  ");
            s.push_str(r);
            s.push('\n');
        }
        s
    }
}

fn condition(bundle: &ModelBundle, feature: usize, threshold: f64, left: bool) -> String {
    let col = &bundle.recipe.columns()[feature];
    match &col.kind {
        ColumnKind::Indicator { var, level } => {
            let op = if left { "!=" } else { "==" };
            format!("{} {op} {level}", var.name())
        }
        ColumnKind::Numeric { var, .. } => {
            let op = if left { "<=" } else { ">" };
            format!("{} {op} {:.4}", var.name(), bundle.recipe.unscale(feature, threshold))
        }
        ColumnKind::Component { .. } => {
            let op = if left { "<=" } else { ">" };
            format!("{} {op} {threshold:.4}", col.name)
        }
    }
}

fn collect_rules(bundle: &ModelBundle, tree: &RegressionTree, at: usize, path: &mut Vec<String>, out: &mut Vec<String>) {
    match &tree.nodes[at] {
        Node::Leaf { value, n } => {
            let cond = if path.is_empty() { "always".to_string() } else { path.join(" and ") };
            out.push(format!("if {cond} then {value:.1} nm (n = {n})"));
        }
        Node::Split { feature, threshold, left, right, .. } => {
            path.push(condition(bundle, *feature, *threshold, true));
            collect_rules(bundle, tree, *left, path, out);
            path.pop();
            path.push(condition(bundle, *feature, *threshold, false));
            collect_rules(bundle, tree, *right, path, out);
            path.pop();
        }
    }
}

/// Depth-limited regression tree fit to the model's predictions on `rows`,
/// in the model's own encoded feature space.
pub fn surrogate_tree(bundle: &ModelBundle, rows: &[ProcessInputs], max_depth: usize) -> Result<SurrogateTree> {
    if rows.is_empty() {
        return Err(Error::invalid("surrogate tree needs rows"));
    }
    let x = bundle.recipe.apply(rows)?;
    let target = bundle.model.predict(&x)?;
    let tree = fit_tree(
        &x,
        &target,
        TreeParams { max_depth, min_leaf: SURROGATE_MIN_LEAF, mtry: None },
    );
    let fidelity = r_squared(&target, &tree.predict(&x));
    let mut rules = Vec::new();
    collect_rules(bundle, &tree, 0, &mut Vec::new(), &mut rules);
    Ok(SurrogateTree { max_depth, tree, fidelity, rules })
}

// ---------------------------------------------------------------------------
// Residual diagnostics

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticThresholds {
    /// Standardized slope of residuals on fitted values.
    pub trend_slope: f64,
    /// Residual variance ratio between the upper and lower fitted halves.
    pub variance_ratio: f64,
    /// Extreme-quantile deviation, in theoretical standard errors.
    pub tail_se: f64,
}

impl Default for DiagnosticThresholds {
    fn default() -> Self {
        DiagnosticThresholds { trend_slope: 0.1, variance_ratio: 2.0, tail_se: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagKind {
    Trend,
    Heteroscedasticity,
    HeavyTails,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticFlag {
    pub kind: FlagKind,
    pub value: f64,
    pub threshold: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualDiagnostics {
    pub n: usize,
    /// (observed, predicted)
    pub observed_vs_predicted: Vec<(f64, f64)>,
    /// (fitted, residual)
    pub residuals_vs_fitted: Vec<(f64, f64)>,
    /// (theoretical normal quantile, standardized residual), sorted.
    pub qq: Vec<(f64, f64)>,
    pub trend_slope: Option<f64>,
    pub variance_ratio: Option<f64>,
    pub tail_deviation_se: Option<f64>,
    pub flags: Vec<DiagnosticFlag>,
    pub thresholds: DiagnosticThresholds,
}

impl ResidualDiagnostics {
    pub fn has(&self, kind: FlagKind) -> bool {
        self.flags.iter().any(|f| f.kind == kind)
    }

    /// One sentence per flag, or a single all-clear line.
    pub fn annotations(&self) -> Vec<String> {
        if self.flags.is_empty() {
            vec!["no residual pattern exceeded the diagnostic thresholds".into()]
        } else {
            self.flags.iter().map(|f| f.message.clone()).collect()
        }
    }
}

pub fn residual_diagnostics(y: &[f64], pred: &[f64]) -> Result<ResidualDiagnostics> {
    residual_diagnostics_with(y, pred, DiagnosticThresholds::default())
}

pub fn residual_diagnostics_with(y: &[f64], pred: &[f64], th: DiagnosticThresholds) -> Result<ResidualDiagnostics> {
    if y.len() != pred.len() {
        return Err(Error::invalid(format!("{} observations but {} predictions", y.len(), pred.len())));
    }
    let n = y.len();
    let resid: Vec<f64> = y.iter().zip(pred).map(|(a, p)| a - p).collect();
    let r_sd = if n > 1 { stats::sample_sd(&resid) } else { 0.0 };
    let r_mean = if n > 0 { stats::mean(&resid) } else { 0.0 };
    let mut flags = Vec::new();

    // Trend: slope of standardized residuals on standardized fitted values.
    let f_sd = if n > 1 { stats::sample_sd(pred) } else { 0.0 };
    let trend_slope = (r_sd > 0.0 && f_sd > 0.0).then(|| {
        let f_mean = stats::mean(pred);
        let cov = pred.iter().zip(&resid).map(|(f, r)| (f - f_mean) * (r - r_mean)).sum::<f64>() / (n - 1) as f64;
        cov / (f_sd * r_sd)
    });
    if let Some(s) = trend_slope.filter(|s| s.abs() > th.trend_slope) {
        flags.push(DiagnosticFlag {
            kind: FlagKind::Trend,
            value: s,
            threshold: th.trend_slope,
            message: format!("residuals trend with fitted values (standardized slope {s:.3}); the model may be biased at the extremes"),
        });
    }

    // Spread: residual variance in the upper vs lower half of fitted values.
    let variance_ratio = (n >= 4).then(|| {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| pred[a].total_cmp(&pred[b]).then(a.cmp(&b)));
        let half = n / 2;
        let var = |idx: &[usize]| {
            let v: Vec<f64> = idx.iter().map(|&i| resid[i]).collect();
            stats::sample_sd(&v).powi(2)
        };
        let (lo, hi) = (var(&order[..half]), var(&order[n - half..]));
        match (lo > 0.0, hi > 0.0) {
            (false, false) => 1.0,
            (true, true) => hi.max(lo) / hi.min(lo),
            _ => f64::INFINITY,
        }
    });
    if let Some(v) = variance_ratio.filter(|v| *v > th.variance_ratio) {
        flags.push(DiagnosticFlag {
            kind: FlagKind::Heteroscedasticity,
            value: v,
            threshold: th.variance_ratio,
            message: format!("residual spread differs between low and high fitted values (variance ratio {v:.2})"),
        });
    }

    // QQ series and tail check.
    let z: Vec<f64> = if r_sd > 0.0 { resid.iter().map(|r| (r - r_mean) / r_sd).collect() } else { vec![0.0; n] };
    let zs = stats::sorted_copy(&z);
    let qq: Vec<(f64, f64)> = zs
        .iter()
        .enumerate()
        .map(|(i, &v)| (stats::normal_quantile((i as f64 + 1.0 - 0.375) / (n as f64 + 0.25)), v))
        .collect();
    let tail_p = match n {
        n if n >= 100 => Some(0.01),
        n if n >= 20 => Some(0.05),
        _ => None,
    };
    let tail_deviation_se = tail_p.filter(|_| r_sd > 0.0).map(|p| {
        [p, 1.0 - p]
            .iter()
            .map(|&pp| {
                let q = stats::normal_quantile(pp);
                let se = (pp * (1.0 - pp) / n as f64).sqrt() / stats::normal_pdf(q);
                (stats::quantile_sorted(&zs, pp) - q).abs() / se
            })
            .fold(0.0, f64::max)
    });
    if let Some(d) = tail_deviation_se.filter(|d| *d > th.tail_se) {
        flags.push(DiagnosticFlag {
            kind: FlagKind::HeavyTails,
            value: d,
            threshold: th.tail_se,
            message: format!("residual tails depart from normality ({d:.1} standard errors at the extreme quantiles)"),
        });
    }

    Ok(ResidualDiagnostics {
        n,
        observed_vs_predicted: y.iter().copied().zip(pred.iter().copied()).collect(),
        residuals_vs_fitted: pred.iter().copied().zip(resid.iter().copied()).collect(),
        qq,
        trend_slope,
        variance_ratio,
        tail_deviation_se,
        flags,
        thresholds: th,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::TrainingMetadata;
    use crate::learners::LearnerRegistry;
    use crate::pipeline::{Recipe, RecipeOptions};
    use rand_distr::{Distribution, StandardNormal};

    struct Linear {
        intercept: f64,
        conc: f64,
    }
    impl Predictor for Linear {
        fn predict_inputs(&self, rows: &[ProcessInputs]) -> Result<Vec<f64>> {
            Ok(rows
                .iter()
                .map(|r| self.intercept + self.conc * r.solution_concentration.unwrap_or(0.0))
                .collect())
        }
    }

    fn data() -> (Vec<ProcessInputs>, Vec<f64>) {
        let ds = crate::synth::generate(300, 0.05, 5).unwrap();
        (ds.inputs(), ds.outcomes())
    }

    #[test]
    fn importance_ranks_the_only_used_input_first() {
        let (rows, _) = data();
        let model = Linear { intercept: 0.0, conc: 2.0 };
        let y = model.predict_inputs(&rows).unwrap();
        let rep = permutation_importance(&model, &rows, &y, 5, 3).unwrap();
        assert_eq!(rep.features[0].variable, "solution_concentration");
        assert_eq!(rep.features[0].rank, 1);
        assert_eq!(rep.baseline_rmse, 0.0);
        // Shuffling x in y = 2x gives RMSE = 2·sqrt(2·var_pop(x)) in expectation.
        let conc: Vec<f64> = rows.iter().filter_map(|r| r.solution_concentration).collect();
        let expect = 2.0 * (2.0 * stats::population_sd(&conc).powi(2)).sqrt();
        let got = rep.get("solution_concentration").unwrap().score;
        assert!((got - expect).abs() < 0.15 * expect, "{got} vs {expect}");
        let v = rep.get("voltage").unwrap();
        assert_eq!((v.score, v.std_error), (0.0, 0.0));
        // Ties are broken lexically.
        let zeros: Vec<&str> = rep.features.iter().filter(|f| f.score == 0.0).map(|f| f.variable.as_str()).collect();
        assert!(zeros.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn importance_is_seed_reproducible_and_repeat_consistent() {
        let (rows, _) = data();
        let model = Linear { intercept: 10.0, conc: 3.0 };
        let y: Vec<f64> = model.predict_inputs(&rows).unwrap().iter().map(|v| v + 1.0).collect();
        let a = permutation_importance(&model, &rows, &y, 10, 9).unwrap();
        let b = permutation_importance(&model, &rows, &y, 10, 9).unwrap();
        assert_eq!(a, b);
        let one = permutation_importance(&model, &rows, &y, 1, 9).unwrap();
        let (m1, m10) = (one.get("solution_concentration").unwrap().raw_mean, a.get("solution_concentration").unwrap());
        let sd = m10.std_error * 10f64.sqrt();
        assert!((m1 - m10.raw_mean).abs() <= 3.0 * sd.max(1e-9) + 3.0 * m10.std_error, "{m1} vs {}", m10.raw_mean);
    }

    #[test]
    fn ignored_feature_sits_inside_the_noise_band() {
        let ds = crate::synth::generate(400, 0.05, 8).unwrap();
        let (rows, y) = (ds.inputs(), ds.outcomes());
        let recipe = Recipe::fit(&rows, Some(&y), RecipeOptions::default()).unwrap();
        let x = recipe.apply(&rows).unwrap();
        let temp_col = recipe.columns().iter().position(|c| c.name == "temperature").unwrap();
        let keep: Vec<usize> = (0..x.ncols()).filter(|&j| j != temp_col).collect();
        // A tree that cannot see temperature provably ignores it.
        let mut xm = x.clone();
        for i in 0..xm.nrows() {
            xm.set(i, temp_col, 0.0);
        }
        let l = LearnerRegistry::default().get("tree").unwrap();
        let model = l.train(&l.default_grid(x.ncols())[0], &xm, &y, 1).unwrap();
        assert!(model.trees().iter().all(|t| t.feature_gains()[temp_col] == 0.0));
        let b = ModelBundle::new(recipe, model, TrainingMetadata::default());
        let rep = permutation_importance(&b, &rows, &y, 5, 1).unwrap();
        let t = rep.get("temperature").unwrap();
        assert!(t.raw_mean.abs() <= 3.0 * t.std_error + 1e-9, "{t:?}");
        assert!(keep.len() + 1 == x.ncols());
    }

    #[test]
    fn response_grid_shapes_and_values() {
        let (rows, _) = data();
        let flat = response_grid(&Linear { intercept: 7.0, conc: 0.0 }, &rows, "voltage", "distance", 5).unwrap();
        assert_eq!((flat.predictions.len(), flat.predictions[0].len()), (5, 5));
        assert!(flat.predictions.iter().flatten().all(|&v| v == 7.0));

        let m = Linear { intercept: 1.0, conc: 4.0 };
        let g = response_grid(&m, &rows, "solution_concentration", "voltage", 6).unwrap();
        for (i, row) in g.predictions.iter().enumerate() {
            assert!(row.iter().all(|&v| v == row[0]), "varies along voltage");
            assert_eq!(row[0], 1.0 + 4.0 * g.grid_a[i]);
        }
        let conc: Vec<f64> = rows.iter().filter_map(|r| r.solution_concentration).collect();
        let (lo, hi) = (stats::sorted_copy(&conc)[0], *stats::sorted_copy(&conc).last().unwrap());
        assert_eq!((g.grid_a[0], *g.grid_a.last().unwrap()), (lo, hi));

        let c = response_grid(&m, &rows, "voltage", "solution_concentration", 2).unwrap();
        assert_eq!(c.predictions, vec![vec![1.0 + 4.0 * lo, 1.0 + 4.0 * hi]; 2]);
        assert!(!c.fixed.contains_key("voltage"));
        assert!(matches!(response_grid(&m, &rows, "nope", "voltage", 3), Err(Error::UnknownVariable(_))));
        assert!(response_grid(&m, &rows, "polymer", "voltage", 3).is_err());
        assert!(response_grid(&m, &rows, "voltage", "distance", 1).is_err());
    }

    fn real_bundle(learner: &str) -> (ModelBundle, Vec<ProcessInputs>) {
        let ds = crate::synth::generate(300, 0.05, 4).unwrap();
        let (rows, y) = (ds.inputs(), ds.outcomes());
        let recipe = Recipe::fit(&rows, Some(&y), RecipeOptions::default()).unwrap();
        let x = recipe.apply(&rows).unwrap();
        let l = LearnerRegistry::default().get(learner).unwrap();
        let model = l.train(&l.default_grid(x.ncols())[0], &x, &y, 1).unwrap();
        (ModelBundle::new(recipe, model, TrainingMetadata::default()), rows)
    }

    #[test]
    fn grid_matches_direct_prediction_exactly() {
        let (b, rows) = real_bundle("random-forest");
        let g = response_grid(&b, &rows, "solution_concentration", "distance", 7).unwrap();
        let (_, _, _, synth) = grid_rows(&rows, NumericVar::SolutionConcentration, NumericVar::Distance, 7).unwrap();
        let direct = b.predict_inputs(&synth).unwrap();
        let flat: Vec<f64> = g.predictions.concat();
        assert!(flat.iter().zip(&direct).all(|(a, d)| a.to_bits() == d.to_bits()));
    }

    #[test]
    fn surrogate_fidelity_grows_with_depth() {
        let (b, rows) = real_bundle("boosting");
        let mut last = -f64::INFINITY;
        for d in 1..=6 {
            let s = surrogate_tree(&b, &rows, d).unwrap();
            let f = s.fidelity.unwrap();
            assert!(f >= last - 1e-12, "depth {d}: {f} < {last}");
            assert_eq!(s.rules.len(), s.tree.n_leaves());
            assert!(s.to_text().contains("fidelity"));
            last = f;
        }
    }

    #[test]
    fn surrogate_of_a_step_model_splits_at_the_step() {
        // Train a depth-1 tree on a pure step in concentration; the surrogate
        // must recover the same cut with perfect fidelity.
        let (mut rows, _) = data();
        for (i, r) in rows.iter_mut().enumerate() {
            r.solution_concentration = Some((i % 20) as f64);
        }
        let y: Vec<f64> = rows.iter().map(|r| if r.solution_concentration.unwrap() <= 9.0 { 100.0 } else { 400.0 }).collect();
        let recipe = Recipe::fit(&rows, Some(&y), RecipeOptions::default()).unwrap();
        let x = recipe.apply(&rows).unwrap();
        let l = LearnerRegistry::default().get("tree").unwrap();
        let model = l.train(&crate::learners::params(&[("max_depth", 1.0), ("min_leaf", 5.0)]), &x, &y, 1).unwrap();
        let b = ModelBundle::new(recipe, model, TrainingMetadata::default());
        let s = surrogate_tree(&b, &rows, 1).unwrap();
        assert!((s.fidelity.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(s.rules.len(), 2);
        assert!(s.rules[0].starts_with("if solution_concentration <= 9"), "{}", s.rules[0]);
        assert!(s.rules[0].contains("100.0 nm"));
    }

    #[test]
    fn surrogate_of_a_constant_model_is_a_stump() {
        let (rows, _) = data();
        let y: Vec<f64> = (0..rows.len()).map(|i| 100.0 + (i % 3) as f64).collect();
        let recipe = Recipe::fit(&rows, Some(&y), RecipeOptions::default()).unwrap();
        let x = recipe.apply(&rows).unwrap();
        let l = LearnerRegistry::default().get("tree").unwrap();
        let mut model = l.train(&crate::learners::params(&[("max_depth", 1.0)]), &x, &y, 1).unwrap();
        if let crate::learners::ModelState::Tree(t) = &mut model.state {
            t.nodes = vec![Node::Leaf { value: 250.0, n: rows.len() }];
        }
        let b = ModelBundle::new(recipe, model, TrainingMetadata::default());
        let s = surrogate_tree(&b, &rows, 3).unwrap();
        assert_eq!(s.fidelity, None);
        assert_eq!(s.rules, vec![format!("if always then 250.0 nm (n = {})", rows.len())]);
        assert!(s.to_text().contains("undefined"));
    }

    #[test]
    fn perfect_predictions_raise_no_flags() {
        let y: Vec<f64> = (0..200).map(|i| i as f64).collect();
        let d = residual_diagnostics(&y, &y).unwrap();
        assert!(d.flags.is_empty());
        assert!(d.residuals_vs_fitted.iter().all(|p| p.1 == 0.0));
        assert_eq!(d.qq.len(), 200);
        assert_eq!(d.annotations().len(), 1);
    }

    #[test]
    fn proportional_residuals_flag_heteroscedasticity() {
        let mut r = rng::stream(2, 0);
        let fitted: Vec<f64> = (1..=400).map(|i| i as f64).collect();
        let y: Vec<f64> = fitted
            .iter()
            .map(|f| {
                let e: f64 = StandardNormal.sample(&mut r);
                f + 0.2 * f * e
            })
            .collect();
        let d = residual_diagnostics(&y, &fitted).unwrap();
        // Upper-half fitted values are ~3x the lower half, so the variance ratio is ~7.
        assert!(d.variance_ratio.unwrap() > 2.0);
        assert!(d.has(FlagKind::Heteroscedasticity));
    }

    #[test]
    fn normal_residuals_pass_the_tail_check() {
        let mut r = rng::stream(1000, 0);
        let fitted: Vec<f64> = (0..1000).map(|i| 100.0 + (i % 50) as f64).collect();
        let y: Vec<f64> = fitted.iter().map(|f| { let e: f64 = StandardNormal.sample(&mut r); f + e }).collect();
        let d = residual_diagnostics(&y, &fitted).unwrap();
        assert!(!d.has(FlagKind::HeavyTails), "{:?}", d.tail_deviation_se);
        assert!(!d.has(FlagKind::Heteroscedasticity));
        assert!(!d.has(FlagKind::Trend));
    }

    #[test]
    fn heavy_tails_and_trend_are_flagged() {
        let mut r = rng::stream(3, 0);
        let fitted: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let heavy: Vec<f64> = fitted
            .iter()
            .map(|f| {
                let e: f64 = StandardNormal.sample(&mut r);
                f + e * e * e
            })
            .collect();
        assert!(residual_diagnostics(&heavy, &fitted).unwrap().has(FlagKind::HeavyTails));
        let biased: Vec<f64> = fitted.iter().map(|f| 1.5 * f).collect();
        assert!(residual_diagnostics(&biased, &fitted).unwrap().has(FlagKind::Trend));
        assert!(residual_diagnostics(&[1.0], &[1.0, 2.0]).is_err());
    }
}
