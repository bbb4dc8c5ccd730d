//! Sobol + D-optimal subset selection, plain and polymer-balanced.
//!
//! Sobol points over the operating variables are scaled to the observed
//! ranges and dressed with categorical fields. Each synthetic candidate is
//! then matched to its nearest real record, so the output is always a subset
//! of the dataset. The Fedorov exchange picks the final rows from the matched
//! pool on a model matrix built by a recipe fitted to that pool.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::allocation::{allocate_balanced, BalancedAllocation};
use super::composition::sample_ratios;
use super::doptimal::{federov_select, independent_columns};
use super::sobol::{scale_to_ranges, SobolStream};
use crate::dataset::{CategoricalVar, EmpiricalProfile, NumericVar, ProcessInputs, SpinDataset, NONE_LEVEL};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::pipeline::{ColumnKind, Recipe, RecipeOptions};
use crate::rng::{self, Rng as SeededRng};
use crate::stats;

pub const DEFAULT_OVERSAMPLE: f64 = 2.62;
pub const DEFAULT_MAX_ITER: usize = 100;
const COLLECTOR_MISMATCH_PENALTY: f64 = 1.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HybridOptions {
    pub oversample_factor: f64,
    /// Dress candidates with (polymer, solvent set, collector) tuples seen in
    /// the data instead of independent marginal draws.
    pub constrain_to_observed_tuples: bool,
    pub max_iter: usize,
}

impl Default for HybridOptions {
    fn default() -> Self {
        HybridOptions {
            oversample_factor: DEFAULT_OVERSAMPLE,
            constrain_to_observed_tuples: true,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HybridResult {
    /// Selected dataset rows, ascending.
    pub indices: Vec<usize>,
    pub candidates_generated: usize,
    /// Distinct records the candidates matched.
    pub matched_unique: usize,
    /// Candidates collapsed onto an already matched record.
    pub discarded: usize,
    /// Random unmatched rows added when the pool was smaller than `n`.
    pub topped_up: usize,
    pub design_params: usize,
    pub criterion: Option<f64>,
    pub log: Vec<String>,
}

pub fn candidate_count(n: usize, oversample_factor: f64) -> usize {
    ((n as f64) * oversample_factor).ceil() as usize
}

fn draw_level(levels: &[(String, f64)], rng: &mut SeededRng) -> Option<String> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (level, p) in levels {
        acc += p;
        if u < acc {
            return (level != NONE_LEVEL).then(|| level.clone());
        }
    }
    levels.last().and_then(|(l, _)| (l != NONE_LEVEL).then(|| l.clone()))
}

/// Synthetic candidates over `ds`; numeric fields from the Sobol stream.
pub fn generate_candidates(
    ds: &SpinDataset,
    count: usize,
    constrain: bool,
    seed: u64,
) -> Result<Vec<ProcessInputs>> {
    let profile = EmpiricalProfile::from_rows("*", ds.records().iter());
    let vars = NumericVar::OPERATING;
    let ranges: Vec<(f64, f64)> = vars.iter().map(|v| profile.range(*v).unwrap_or((0.0, 0.0))).collect();
    let mut stream = SobolStream::new(vars.len(), seed % 4096)?;
    let points = scale_to_ranges(&stream.take_points(count), &ranges);
    let mut rng = rng::seeded(seed);
    let records = ds.records();

    let mut out = Vec::with_capacity(count);
    for point in points {
        let mut c = if constrain {
            let donor = &records[rng.random_range(0..records.len())].inputs;
            let mut c = ProcessInputs::new(donor.polymer.clone());
            c.solvents = donor.solvents.clone();
            c.collector_type = donor.collector_type.clone();
            c
        } else {
            let mut c = ProcessInputs::new(
                draw_level(profile.levels(CategoricalVar::Polymer), &mut rng).unwrap_or_default(),
            );
            let mut solvents: Vec<String> = [CategoricalVar::Solvent1, CategoricalVar::Solvent2, CategoricalVar::Solvent3]
                .iter()
                .filter_map(|v| draw_level(profile.levels(*v), &mut rng))
                .collect();
            solvents.dedup();
            if solvents.is_empty() && !profile.solvent_pool.is_empty() {
                solvents.push(profile.solvent_pool[rng.random_range(0..profile.solvent_pool.len())].clone());
            }
            for (slot, s) in solvents.into_iter().take(3).enumerate() {
                c.solvents[slot] = Some(s);
            }
            c.collector_type = draw_level(profile.levels(CategoricalVar::CollectorType), &mut rng);
            c
        };
        let k = c.solvent_count();
        if k > 0 {
            let ratios = sample_ratios(k, None, &mut rng)?;
            let mut it = ratios.into_iter();
            for slot in 0..3 {
                c.ratios[slot] = if c.solvents[slot].is_some() { it.next().unwrap_or(0.0) } else { 0.0 };
            }
        }
        for (var, v) in vars.iter().zip(point) {
            c.set_numeric(*var, profile.range(*var).map(|_| v));
        }
        out.push(c);
    }
    Ok(out)
}

/// Standardized matching features: operating variables then ratios.
struct Matcher {
    medians: Vec<f64>,
    scales: Vec<f64>,
    features: Vec<Vec<f64>>,
    collectors: Vec<Option<String>>,
    by_tuple: HashMap<(String, Vec<String>), Vec<usize>>,
    by_polymer: HashMap<String, Vec<usize>>,
}

fn match_vars() -> Vec<NumericVar> {
    let mut v = NumericVar::OPERATING.to_vec();
    v.extend([NumericVar::Solvent1Ratio, NumericVar::Solvent2Ratio, NumericVar::Solvent3Ratio]);
    v
}

fn solvent_set(x: &ProcessInputs) -> Vec<String> {
    let mut s: Vec<String> = x.solvents.iter().flatten().cloned().collect();
    s.sort();
    s
}

impl Matcher {
    fn new(ds: &SpinDataset) -> Self {
        let vars = match_vars();
        let mut medians = Vec::new();
        let mut scales = Vec::new();
        for var in &vars {
            let vals: Vec<f64> = ds.records().iter().filter_map(|r| r.inputs.numeric(*var)).collect();
            let med = if vals.is_empty() { 0.0 } else { stats::median(&vals) };
            let sd = stats::sample_sd(&vals);
            medians.push(med);
            scales.push(if sd > 0.0 { sd } else { 1.0 });
        }
        let mut m = Matcher {
            medians,
            scales,
            features: Vec::with_capacity(ds.len()),
            collectors: Vec::with_capacity(ds.len()),
            by_tuple: HashMap::new(),
            by_polymer: HashMap::new(),
        };
        for (i, r) in ds.records().iter().enumerate() {
            let f = m.featurize(&r.inputs);
            m.features.push(f);
            m.collectors.push(r.inputs.collector_type.clone());
            m.by_tuple
                .entry((r.inputs.polymer.clone(), solvent_set(&r.inputs)))
                .or_default()
                .push(i);
            m.by_polymer.entry(r.inputs.polymer.clone()).or_default().push(i);
        }
        m
    }

    fn featurize(&self, x: &ProcessInputs) -> Vec<f64> {
        match_vars()
            .iter()
            .enumerate()
            .map(|(j, v)| (x.numeric(*v).unwrap_or(self.medians[j]) - self.medians[j]) / self.scales[j])
            .collect()
    }

    fn nearest(&self, c: &ProcessInputs) -> usize {
        let f = self.featurize(c);
        let all: Vec<usize>;
        let group: &[usize] = if let Some(g) = self.by_tuple.get(&(c.polymer.clone(), solvent_set(c))) {
            g
        } else if let Some(g) = self.by_polymer.get(&c.polymer) {
            g
        } else {
            all = (0..self.features.len()).collect();
            &all
        };
        let mut best = (f64::INFINITY, usize::MAX);
        for &i in group {
            let mut d: f64 = self.features[i].iter().zip(&f).map(|(a, b)| (a - b) * (a - b)).sum();
            if self.collectors[i] != c.collector_type {
                d += COLLECTOR_MISMATCH_PENALTY;
            }
            if d < best.0 || (d == best.0 && i < best.1) {
                best = (d, i);
            }
        }
        best.1
    }
}

/// Design matrix `[1 | recipe(rows)]` reduced to independent columns.
fn design_matrix(rows: &[ProcessInputs], operating_only: bool) -> Matrix {
    let encoded = Recipe::fit(rows, None, RecipeOptions::default()).ok().map(|r| {
        let m = r.apply(rows).expect("recipe was just fitted");
        let keep: Vec<usize> = r
            .columns()
            .iter()
            .enumerate()
            .filter(|(_, c)| {
                !operating_only
                    || matches!(c.kind, ColumnKind::Numeric { var, .. } if NumericVar::OPERATING.contains(&var))
            })
            .map(|(j, _)| j)
            .collect();
        m.select_columns(&keep)
    });
    let width = encoded.as_ref().map_or(0, Matrix::ncols);
    let mut x = Matrix::zeros(rows.len(), width + 1);
    for i in 0..rows.len() {
        let out = x.row_mut(i);
        out[0] = 1.0;
        if let Some(e) = &encoded {
            out[1..].copy_from_slice(e.row(i));
        }
    }
    let cols = independent_columns(&x);
    x.select_columns(&cols)
}

pub fn sobol_doptimal_sample(ds: &SpinDataset, n: usize, opts: &HybridOptions, seed: u64) -> Result<HybridResult> {
    let total = ds.len();
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    if n > total {
        return Err(Error::SampleTooLarge {
            requested: n,
            available: total,
        });
    }
    if !(opts.oversample_factor >= 1.0 && opts.oversample_factor.is_finite()) {
        return Err(Error::invalid("oversample factor must be at least 1"));
    }
    let mut log = Vec::new();
    if n == total {
        return Ok(HybridResult {
            indices: (0..total).collect(),
            candidates_generated: 0,
            matched_unique: total,
            discarded: 0,
            topped_up: 0,
            design_params: 0,
            criterion: None,
            log: vec!["budget equals available rows; all rows selected".into()],
        });
    }

    let generated = candidate_count(n, opts.oversample_factor);
    let candidates = generate_candidates(ds, generated, opts.constrain_to_observed_tuples, seed)?;
    let matcher = Matcher::new(ds);
    let matches: Vec<usize> = candidates.par_iter().map(|c| matcher.nearest(c)).collect();
    let mut seen = vec![false; total];
    let mut pool = Vec::new();
    for m in matches {
        if !seen[m] {
            seen[m] = true;
            pool.push(m);
        }
    }
    let matched_unique = pool.len();
    let discarded = generated - matched_unique;
    log.push(format!(
        "{generated} Sobol candidates matched {matched_unique} distinct records ({discarded} duplicates discarded)"
    ));

    let mut topped_up = 0;
    if pool.len() < n {
        let mut rest: Vec<usize> = (0..total).filter(|&i| !seen[i]).collect();
        rest.shuffle(&mut rng::stream(seed, 1));
        topped_up = n - pool.len();
        pool.extend(rest.into_iter().take(topped_up));
        log.push(format!("pool topped up with {topped_up} random unmatched records"));
    }
    if pool.len() == n {
        pool.sort_unstable();
        return Ok(HybridResult {
            indices: pool,
            candidates_generated: generated,
            matched_unique,
            discarded,
            topped_up,
            design_params: 0,
            criterion: None,
            log,
        });
    }

    let rows: Vec<ProcessInputs> = pool.iter().map(|&i| ds.records()[i].inputs.clone()).collect();
    let mut x = design_matrix(&rows, false);
    if x.ncols() > n {
        log.push(format!(
            "model matrix has {} parameters for a budget of {n}; using operating conditions only",
            x.ncols()
        ));
        x = design_matrix(&rows, true);
    }
    let sel = federov_select(&x, n, opts.max_iter, seed)?;
    log.push(format!(
        "Fedorov exchange: p = {}, {} swaps over {} run(s), criterion {:.6}",
        sel.params, sel.swaps, sel.runs, sel.criterion
    ));
    let mut indices: Vec<usize> = sel.indices.iter().map(|&k| pool[k]).collect();
    indices.sort_unstable();
    Ok(HybridResult {
        indices,
        candidates_generated: generated,
        matched_unique,
        discarded,
        topped_up,
        design_params: sel.params,
        criterion: Some(sel.criterion),
        log,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StratumReport {
    pub polymer: String,
    pub available: usize,
    pub budget: usize,
    pub selected: usize,
    /// `all`, `sobol-doptimal`, `random-fallback` or `empty`.
    pub method: String,
    pub candidates_generated: usize,
    pub discarded: usize,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalancedResult {
    pub indices: Vec<usize>,
    pub allocation: BalancedAllocation,
    pub strata: Vec<StratumReport>,
}

/// Per-polymer budgets from [`allocate_balanced`], each stratum sampled
/// independently with a seed derived from `(seed, polymer)`.
pub fn balanced_sobol_doptimal(
    ds: &SpinDataset,
    n: usize,
    opts: &HybridOptions,
    seed: u64,
) -> Result<BalancedResult> {
    let counts = ds.polymer_counts();
    let allocation = allocate_balanced(&counts, n)?;
    let per_polymer: Vec<(String, usize)> = allocation.allocations.iter().map(|(p, &b)| (p.clone(), b)).collect();
    let results: Vec<Result<(Vec<usize>, StratumReport)>> = per_polymer
        .par_iter()
        .map(|(polymer, budget)| run_stratum(ds, polymer, *budget, opts, rng::derive_seed(seed, polymer)))
        .collect();
    let mut indices = Vec::with_capacity(n);
    let mut strata = Vec::with_capacity(results.len());
    for r in results {
        let (idx, rep) = r?;
        indices.extend(idx);
        strata.push(rep);
    }
    indices.sort_unstable();
    Ok(BalancedResult {
        indices,
        allocation,
        strata,
    })
}

fn run_stratum(
    ds: &SpinDataset,
    polymer: &str,
    budget: usize,
    opts: &HybridOptions,
    seed: u64,
) -> Result<(Vec<usize>, StratumReport)> {
    let global = ds.indices_for_polymer(polymer);
    let mut rep = StratumReport {
        polymer: polymer.to_string(),
        available: global.len(),
        budget,
        selected: 0,
        method: String::new(),
        candidates_generated: 0,
        discarded: 0,
        note: None,
    };
    let local: Vec<usize> = if budget == 0 {
        rep.method = "empty".into();
        Vec::new()
    } else if budget == global.len() {
        rep.method = "all".into();
        (0..global.len()).collect()
    } else {
        let sub = ds.subset(&global);
        match sobol_doptimal_sample(&sub, budget, opts, seed) {
            Ok(h) => {
                rep.method = "sobol-doptimal".into();
                rep.candidates_generated = h.candidates_generated;
                rep.discarded = h.discarded;
                h.indices
            }
            Err(e @ (Error::DesignTooSmall { .. } | Error::SingularDesign { .. })) => {
                rep.method = "random-fallback".into();
                rep.note = Some(e.to_string());
                super::sample_random(global.len(), budget, seed)?
            }
            Err(e) => {
                return Err(Error::Stratum {
                    polymer: polymer.to_string(),
                    source: Box::new(e),
                })
            }
        }
    };
    rep.selected = local.len();
    Ok((local.into_iter().map(|i| global[i]).collect(), rep))
}

/// Per-polymer counts of a selection.
pub fn polymer_tally(ds: &SpinDataset, indices: &[usize]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for &i in indices {
        *m.entry(ds.records()[i].inputs.polymer.clone()).or_insert(0) += 1;
    }
    m
}
