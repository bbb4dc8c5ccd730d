//! Splitting, cross-validation, error metrics and model selection.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ProcessInputs, SpinDataset};
use crate::error::{Error, Result};
use crate::learners::{params_label, FittedModel, Learner, Params};
use crate::pipeline::{Recipe, RecipeOptions};
use crate::rng;

pub const ALLOWED_FOLDS: [usize; 3] = [3, 5, 10];
pub const MIN_TEST_FRACTION: f64 = 0.10;
pub const MAX_TEST_FRACTION: f64 = 0.40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub rmse: f64,
    pub mae: f64,
    /// Mean absolute percentage error over rows with nonzero actuals.
    pub mape: Option<f64>,
    /// Undefined when the actuals have zero spread.
    pub r2: Option<f64>,
    pub n: usize,
    pub mape_skipped: usize,
}

pub fn compute_metrics(y: &[f64], pred: &[f64]) -> Result<MetricSet> {
    if y.len() != pred.len() {
        return Err(Error::invalid(format!("{} actuals but {} predictions", y.len(), pred.len())));
    }
    if y.is_empty() {
        return Err(Error::invalid("metrics need at least one row"));
    }
    let n = y.len() as f64;
    let ybar = y.iter().sum::<f64>() / n;
    let (mut sse, mut sae, mut sst, mut ape) = (0.0, 0.0, 0.0, 0.0);
    let mut skipped = 0;
    for (a, p) in y.iter().zip(pred) {
        let e = a - p;
        sse += e * e;
        sae += e.abs();
        sst += (a - ybar) * (a - ybar);
        if *a == 0.0 {
            skipped += 1;
        } else {
            ape += (e / a).abs();
        }
    }
    let used = y.len() - skipped;
    let m = MetricSet {
        rmse: (sse / n).sqrt(),
        mae: sae / n,
        mape: (used > 0).then(|| 100.0 * ape / used as f64),
        r2: (sst > 0.0).then(|| 1.0 - sse / sst),
        n: y.len(),
        mape_skipped: skipped,
    };
    debug_assert!(m.rmse + 1e-12 * m.rmse.max(1.0) >= m.mae);
    Ok(m)
}

/// Test minus cross-validation, per metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricDeltas {
    pub rmse: f64,
    pub mae: f64,
    pub mape: Option<f64>,
    pub r2: Option<f64>,
}

impl MetricDeltas {
    pub fn between(test: &MetricSet, cv: &MetricSet) -> Self {
        let d = |a: Option<f64>, b: Option<f64>| Some(a? - b?);
        MetricDeltas {
            rmse: test.rmse - cv.rmse,
            mae: test.mae - cv.mae,
            mape: d(test.mape, cv.mape),
            r2: d(test.r2, cv.r2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub warnings: Vec<String>,
}

fn strata(labels: &[String]) -> BTreeMap<&str, Vec<usize>> {
    let mut m: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        m.entry(l.as_str()).or_default().push(i);
    }
    m
}

/// Stratified train/test split: each stratum contributes round(f·n_s) test
/// rows. Singleton strata stay in training.
pub fn stratified_split(labels: &[String], test_fraction: f64, seed: u64) -> Result<Split> {
    if !(MIN_TEST_FRACTION..=MAX_TEST_FRACTION).contains(&test_fraction) {
        return Err(Error::invalid(format!(
            "test fraction {test_fraction} outside [{MIN_TEST_FRACTION}, {MAX_TEST_FRACTION}]"
        )));
    }
    let (mut train, mut test, mut warnings) = (Vec::new(), Vec::new(), Vec::new());
    for (label, mut idx) in strata(labels) {
        if idx.len() == 1 {
            warnings.push(format!("stratum `{label}` has a single row; kept in training"));
            train.extend(idx);
            continue;
        }
        idx.shuffle(&mut rng::seeded(rng::derive_seed(seed, label)));
        let k = ((test_fraction * idx.len() as f64).round() as usize).min(idx.len() - 1);
        test.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test, warnings })
}

/// Fold id for each row. Rows are shuffled within strata, strata are laid
/// end to end, and fold ids are assigned by position mod k, so global fold
/// sizes differ by at most one and every stratum is spread evenly.
pub fn stratified_folds(labels: &[String], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::invalid("cross-validation needs at least 2 folds"));
    }
    if k > labels.len() {
        return Err(Error::invalid(format!("{k} folds for {} rows", labels.len())));
    }
    let mut fold = vec![0; labels.len()];
    let mut pos = 0;
    for (label, mut idx) in strata(labels) {
        idx.shuffle(&mut rng::seeded(rng::derive_seed(seed, label)));
        for i in idx {
            fold[i] = pos % k;
            pos += 1;
        }
    }
    Ok(fold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub params: Params,
    pub cv: MetricSet,
    /// Pooled out-of-fold predictions aligned with the training rows.
    pub oof: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub learner: String,
    pub grid: Vec<GridResult>,
    pub best: usize,
    pub skipped_folds: Vec<String>,
}

/// k-fold cross-validation over a grid. The recipe is refit on each fold's
/// training part, so no statistics leak from held-out rows.
pub fn cross_validate(
    learner: &dyn Learner,
    grid: &[Params],
    inputs: &[ProcessInputs],
    y: &[f64],
    folds: &[usize],
    recipe: &RecipeOptions,
    seed: u64,
) -> Result<CvOutcome> {
    if grid.is_empty() {
        return Err(Error::invalid("empty hyperparameter grid"));
    }
    let k = folds.iter().max().map_or(0, |m| m + 1);
    let per_fold: Vec<Result<Option<(Vec<usize>, Vec<Vec<f64>>)>>> = (0..k)
        .into_par_iter()
        .map(|f| {
            let (tr, te): (Vec<usize>, Vec<usize>) = (0..y.len()).partition(|&i| folds[i] != f);
            if te.is_empty() {
                return Ok(None);
            }
            let tr_in: Vec<ProcessInputs> = tr.iter().map(|&i| inputs[i].clone()).collect();
            let te_in: Vec<ProcessInputs> = te.iter().map(|&i| inputs[i].clone()).collect();
            let tr_y: Vec<f64> = tr.iter().map(|&i| y[i]).collect();
            let rec = match Recipe::fit(&tr_in, Some(&tr_y), recipe.clone()) {
                Ok(r) => r,
                Err(Error::Degenerate(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            let xtr = rec.apply(&tr_in)?;
            let xte = rec.apply(&te_in)?;
            let models = match learner.train_grid(grid, &xtr, &tr_y, rng::derive_seed(seed, &format!("fold{f}"))) {
                Ok(m) => m,
                Err(Error::Degenerate(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            let preds = models.iter().map(|m| m.predict(&xte)).collect::<Result<Vec<_>>>()?;
            Ok(Some((te, preds)))
        })
        .collect();

    let mut oof = vec![vec![f64::NAN; y.len()]; grid.len()];
    let mut skipped_folds = Vec::new();
    for (f, r) in per_fold.into_iter().enumerate() {
        match r? {
            None => skipped_folds.push(format!("fold {f}: training outcome has zero variance")),
            Some((te, preds)) => {
                for (g, p) in preds.iter().enumerate() {
                    for (&i, v) in te.iter().zip(p) {
                        oof[g][i] = *v;
                    }
                }
            }
        }
    }
    let covered: Vec<usize> = (0..y.len()).filter(|&i| !oof[0][i].is_nan()).collect();
    if covered.is_empty() {
        return Err(Error::Degenerate("every fold was skipped".into()));
    }
    let yc: Vec<f64> = covered.iter().map(|&i| y[i]).collect();
    let mut results = Vec::with_capacity(grid.len());
    for (p, o) in grid.iter().zip(oof) {
        let pc: Vec<f64> = covered.iter().map(|&i| o[i]).collect();
        results.push(GridResult {
            params: p.clone(),
            cv: compute_metrics(&yc, &pc)?,
            oof: o,
        });
    }
    let best = (0..results.len())
        .min_by(|&a, &b| results[a].cv.rmse.total_cmp(&results[b].cv.rmse))
        .unwrap_or(0);
    Ok(CvOutcome {
        learner: learner.name().to_string(),
        grid: results,
        best,
        skipped_folds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub sampling: String,
    pub learner: String,
    pub params: Params,
    pub cv: MetricSet,
    /// Present for each learner's best grid point.
    pub test: Option<MetricSet>,
    pub deltas: Option<MetricDeltas>,
}

impl EvalEntry {
    pub fn id(&self) -> String {
        format!("{}[{}]", self.learner, params_label(&self.params))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub entries: Vec<EvalEntry>,
    pub folds: usize,
    pub test_fraction: f64,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    /// Out-of-fold predictions of the selected model, aligned with `train_rows`.
    pub oof_predictions: Vec<f64>,
    pub best: Option<String>,
    pub selection_rule: String,
    pub warnings: Vec<String>,
}

pub const SELECTION_RULE: &str = "minimum test RMSE; fallback minimum cv RMSE; ties by cv RMSE then learner name";

/// Index of the preferred entry: lowest test RMSE when available, else
/// lowest cv RMSE; ties broken by cv RMSE then learner name.
pub fn select_best(entries: &[EvalEntry]) -> Option<usize> {
    let key = |e: &EvalEntry| e.test.map_or(e.cv.rmse, |t| t.rmse);
    let any_test = entries.iter().any(|e| e.test.is_some());
    (0..entries.len())
        .filter(|&i| !any_test || entries[i].test.is_some())
        .min_by(|&a, &b| {
            let (ea, eb) = (&entries[a], &entries[b]);
            key(ea)
                .total_cmp(&key(eb))
                .then(ea.cv.rmse.total_cmp(&eb.cv.rmse))
                .then(ea.learner.cmp(&eb.learner))
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub test_fraction: f64,
    pub folds: usize,
    pub stratify_folds: bool,
    pub recipe: RecipeOptions,
    pub seed: u64,
    pub sampling_label: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            test_fraction: 0.30,
            folds: 5,
            stratify_folds: true,
            recipe: RecipeOptions::default(),
            seed: 42,
            sampling_label: "none".into(),
        }
    }
}

/// Result of a full benchmark: the report plus the selected model, refit
/// on the whole training split.
pub struct Benchmark {
    pub report: EvalReport,
    pub recipe: Recipe,
    pub model: FittedModel,
}

pub fn benchmark(ds: &SpinDataset, learners: &[Arc<dyn Learner>], cfg: &EvalConfig) -> Result<Benchmark> {
    if !ALLOWED_FOLDS.contains(&cfg.folds) {
        return Err(Error::invalid(format!("folds must be one of {ALLOWED_FOLDS:?}")));
    }
    if learners.is_empty() {
        return Err(Error::invalid("no learners requested"));
    }
    let labels: Vec<String> = ds.records().iter().map(|r| r.inputs.polymer.clone()).collect();
    let split = stratified_split(&labels, cfg.test_fraction, cfg.seed)?;
    let inputs = ds.inputs();
    let y = ds.outcomes();
    let pick = |idx: &[usize]| -> (Vec<ProcessInputs>, Vec<f64>) {
        (idx.iter().map(|&i| inputs[i].clone()).collect(), idx.iter().map(|&i| y[i]).collect())
    };
    let (tr_in, tr_y) = pick(&split.train);
    let (te_in, te_y) = pick(&split.test);
    let tr_labels: Vec<String> = split.train.iter().map(|&i| labels[i].clone()).collect();
    let fold_labels = if cfg.stratify_folds {
        tr_labels
    } else {
        vec![String::new(); tr_labels.len()]
    };
    let folds = stratified_folds(&fold_labels, cfg.folds, rng::derive_seed(cfg.seed, "folds"))?;

    let recipe = Recipe::fit(&tr_in, Some(&tr_y), cfg.recipe.clone())?;
    let xtr = recipe.apply(&tr_in)?;
    let xte = recipe.apply(&te_in)?;
    let p = recipe.n_outputs();

    let per_learner: Vec<Result<(CvOutcome, FittedModel, Option<MetricSet>)>> = learners
        .par_iter()
        .map(|l| {
            let grid = l.default_grid(p);
            let cv = cross_validate(l.as_ref(), &grid, &tr_in, &tr_y, &folds, &cfg.recipe, cfg.seed)?;
            let model = l.train(&cv.grid[cv.best].params, &xtr, &tr_y, cfg.seed)?;
            let test = if te_y.is_empty() {
                None
            } else {
                Some(compute_metrics(&te_y, &model.predict(&xte)?)?)
            };
            Ok((cv, model, test))
        })
        .collect();

    let mut entries = Vec::new();
    let mut models = Vec::new();
    let mut warnings = split.warnings.clone();
    for r in per_learner {
        let (cv, model, test) = r?;
        warnings.extend(cv.skipped_folds.iter().map(|s| format!("{}: {s}", cv.learner)));
        warnings.extend(model.notes().into_iter().map(|s| format!("{}: {s}", cv.learner)));
        for (g, gr) in cv.grid.iter().enumerate() {
            let t = (g == cv.best).then_some(test).flatten();
            entries.push(EvalEntry {
                sampling: cfg.sampling_label.clone(),
                learner: cv.learner.clone(),
                params: gr.params.clone(),
                cv: gr.cv,
                test: t,
                deltas: t.map(|t| MetricDeltas::between(&t, &gr.cv)),
            });
        }
        models.push((model, cv.grid[cv.best].oof.clone()));
    }
    let best = select_best(&entries).ok_or_else(|| Error::invalid("no models evaluated"))?;
    let best_entry = &entries[best];
    let (model, oof) = models
        .into_iter()
        .find(|(m, _)| m.learner == best_entry.learner)
        .expect("every learner contributes a model");
    Ok(Benchmark {
        report: EvalReport {
            best: Some(best_entry.id()),
            entries,
            folds: cfg.folds,
            test_fraction: cfg.test_fraction,
            train_rows: split.train,
            test_rows: split.test,
            oof_predictions: oof,
            selection_rule: SELECTION_RULE.into(),
            warnings,
        },
        recipe,
        model,
    })
}

impl EvalReport {
    pub fn best_entry(&self) -> Option<&EvalEntry> {
        let id = self.best.as_ref()?;
        self.entries.iter().find(|e| &e.id() == id)
    }

    /// Delimited export with test, cv and delta columns.
    pub fn write_table<W: Write>(&self, w: W, delimiter: u8) -> Result<()> {
        let mut out = csv::WriterBuilder::new().delimiter(delimiter).from_writer(w);
        out.write_record([
            "sampling", "learner", "params", "test_rmse", "test_mae", "test_mape", "test_r2", "cv_rmse", "cv_mae",
            "cv_mape", "cv_r2", "delta_rmse", "delta_mae", "delta_mape", "delta_r2",
        ])?;
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for e in &self.entries {
            let t = e.test;
            let d = e.deltas;
            out.write_record([
                e.sampling.clone(),
                e.learner.clone(),
                params_label(&e.params),
                f(t.map(|m| m.rmse)),
                f(t.map(|m| m.mae)),
                f(t.and_then(|m| m.mape)),
                f(t.and_then(|m| m.r2)),
                f(Some(e.cv.rmse)),
                f(Some(e.cv.mae)),
                f(e.cv.mape),
                f(e.cv.r2),
                f(d.map(|m| m.rmse)),
                f(d.map(|m| m.mae)),
                f(d.and_then(|m| m.mape)),
                f(d.and_then(|m| m.r2)),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}
