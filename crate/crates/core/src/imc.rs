//! Inverse Monte Carlo: propose configurations, veto infeasible chemistry,
//! predict diameters and summarize how often the target band is hit.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::Predictor;
use crate::chemistry::{mixture_feasible, row_flag, FeasibilityTables, Rating, StrictnessPolicy};
use crate::dataset::{CategoricalVar, EmpiricalProfile, NumericVar, ProcessInputs, SpinDataset, NONE_LEVEL};
use crate::error::{Error, Result};
use crate::rng;
use crate::sampling::sample_ratios;

/// Polymers with fewer rows than this borrow the whole dataset.
pub const MIN_POLYMER_ROWS: usize = 5;
pub const DEFAULT_TOP_K: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImcMode {
    /// Whole historical rows, drawn jointly.
    Experimental,
    /// Synthetic settings within observed ranges, vetoed by chemistry.
    Optimization,
}

impl FromStr for ImcMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "experimental" | "exp" => Ok(ImcMode::Experimental),
            "optimization" | "optimisation" | "opt" => Ok(ImcMode::Optimization),
            other => Err(Error::invalid(format!("unknown IMC mode `{other}`"))),
        }
    }
}

impl fmt::Display for ImcMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ImcMode::Experimental => "experimental",
            ImcMode::Optimization => "optimization",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImcConfig {
    pub mode: ImcMode,
    pub polymer: String,
    /// Target diameter, nm.
    pub target: f64,
    /// Half-width of the success band, nm.
    pub tolerance: f64,
    pub n_simulations: usize,
    pub policy: StrictnessPolicy,
    pub seed: u64,
    pub max_solvents: usize,
    pub top_k: usize,
}

impl ImcConfig {
    pub fn new(mode: ImcMode, polymer: impl Into<String>, target: f64, tolerance: f64, n_simulations: usize) -> Self {
        ImcConfig {
            mode,
            polymer: polymer.into(),
            target,
            tolerance,
            n_simulations,
            policy: StrictnessPolicy::default(),
            seed: 42,
            max_solvents: 3,
            top_k: DEFAULT_TOP_K,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target > 0.0 && self.target.is_finite()) {
            return Err(Error::invalid("target must be a positive diameter"));
        }
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            return Err(Error::invalid("tolerance must be non-negative"));
        }
        if self.n_simulations == 0 {
            return Err(Error::invalid("at least one simulation is required"));
        }
        if !(1..=3).contains(&self.max_solvents) {
            return Err(Error::invalid("max solvent count must be 1, 2 or 3"));
        }
        StrictnessPolicy::new(self.policy.mode, self.policy.no_allow_pct)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DrawSource {
    Empirical { row: usize, doi: Option<String> },
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImcDraw {
    pub index: usize,
    pub inputs: ProcessInputs,
    pub accepted: bool,
    /// Present iff accepted.
    pub prediction: Option<f64>,
    pub abs_error: Option<f64>,
    pub flag: Rating,
    pub source: DrawSource,
    pub reasons: Vec<String>,
}

impl ImcDraw {
    pub fn within(&self, target: f64, tolerance: f64) -> bool {
        self.prediction.is_some_and(|p| (p - target).abs() <= tolerance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopCandidate {
    pub rank: usize,
    pub draw: usize,
    pub inputs: ProcessInputs,
    pub prediction: f64,
    pub abs_error: f64,
    pub flag: Rating,
    pub source: DrawSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImcSummary {
    pub mode: ImcMode,
    pub polymer: String,
    pub target: f64,
    pub tolerance: f64,
    pub strictness: String,
    pub no_allow_pct: f64,
    pub seed: u64,
    pub n_draws: usize,
    pub accepted: usize,
    pub successes: usize,
    pub pred_mean: Option<f64>,
    pub pred_sd: Option<f64>,
    pub rmse_to_target: Option<f64>,
    pub mae_to_target: Option<f64>,
    /// Share of accepted draws inside the band (primary figure).
    pub success_probability: Option<f64>,
    /// Share of all draws inside the band.
    pub success_probability_all: f64,
    /// Share of proposals passing the chemistry checks; optimization only.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub acceptance_rate: Option<f64>,
    /// Set when the polymer had too few rows and the full dataset was used.
    pub fallback_to_full_dataset: bool,
    pub unknown_pairs: Vec<String>,
    pub notes: Vec<String>,
    pub top: Vec<TopCandidate>,
}

pub struct ImcRun {
    pub summary: ImcSummary,
    pub draws: Vec<ImcDraw>,
}

/// Rows eligible for experimental draws, and whether the fallback applied.
pub fn experimental_pool(ds: &SpinDataset, polymer: &str) -> (Vec<usize>, bool) {
    let rows = ds.indices_for_polymer(polymer);
    if rows.len() < MIN_POLYMER_ROWS {
        ((0..ds.len()).collect(), true)
    } else {
        (rows, false)
    }
}

/// Profile used for optimization draws, with the same small-subset rule.
pub fn optimization_profile(ds: &SpinDataset, polymer: &str) -> EmpiricalProfile {
    let (rows, fallback) = experimental_pool(ds, polymer);
    let mut p = EmpiricalProfile::from_rows(polymer, rows.iter().map(|&i| &ds.records()[i]));
    p.fallback = fallback;
    p
}

fn draw_level<R: Rng>(levels: &[(String, f64)], r: &mut R) -> Option<String> {
    if levels.is_empty() {
        return None;
    }
    let mut u: f64 = r.random();
    for (l, p) in levels {
        u -= p;
        if u < 0.0 {
            return (l != NONE_LEVEL).then(|| l.clone());
        }
    }
    let l = &levels[levels.len() - 1].0;
    (l != NONE_LEVEL).then(|| l.clone())
}

/// One synthetic configuration: numerics uniform on observed ranges,
/// categoricals by observed frequency, solvents from the polymer's pool.
pub fn draw_optimization<R: Rng>(profile: &EmpiricalProfile, polymer: &str, max_solvents: usize, r: &mut R) -> Result<ProcessInputs> {
    if profile.solvent_pool.is_empty() {
        return Err(Error::EmptySolventPool(polymer.to_string()));
    }
    let mut x = ProcessInputs::new(polymer);
    for var in NumericVar::OPERATING {
        let v = profile.range(var).map(|(lo, hi)| if hi > lo { r.random_range(lo..=hi) } else { lo });
        x.set_numeric(var, v);
    }
    x.collector_type = draw_level(profile.levels(CategoricalVar::CollectorType), r);
    let cap = max_solvents.min(profile.solvent_pool.len()).max(1);
    let weights: Vec<f64> = profile.solvent_count_freqs[..cap].to_vec();
    let total: f64 = weights.iter().sum();
    let k = if total > 0.0 {
        let mut u = r.random::<f64>() * total;
        weights
            .iter()
            .position(|w| {
                u -= w;
                u < 0.0
            })
            .unwrap_or(cap - 1)
            + 1
    } else {
        1
    };
    let picks = index::sample(r, profile.solvent_pool.len(), k);
    let ratios = sample_ratios(k, None, r)?;
    for (slot, (i, ratio)) in picks.iter().zip(ratios).enumerate() {
        x.solvents[slot] = Some(profile.solvent_pool[i].clone());
        x.ratios[slot] = ratio;
    }
    Ok(x)
}

fn mean_sd(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.len() > 1).then(|| (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(m), sd.or(Some(0.0)))
}

fn sig3(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    format!("{:.2e}", v)
}

fn dedup_key(x: &ProcessInputs) -> String {
    let mut mix: Vec<(String, String)> = x.solvent_mix().iter().map(|(s, r)| (s.to_string(), sig3(*r))).collect();
    mix.sort();
    let nums: Vec<String> = NumericVar::OPERATING
        .iter()
        .map(|&v| x.numeric(v).map(sig3).unwrap_or_default())
        .collect();
    format!(
        "{}|{}|{:?}|{}",
        x.polymer,
        x.collector_type.as_deref().unwrap_or(""),
        mix,
        nums.join(",")
    )
}

/// Accepted draws by ascending error, one per configuration key, at most `k`.
pub fn top_k(draws: &[ImcDraw], k: usize) -> Vec<TopCandidate> {
    let mut ranked: Vec<&ImcDraw> = draws.iter().filter(|d| d.accepted && d.prediction.is_some()).collect();
    ranked.sort_by(|a, b| {
        a.abs_error
            .unwrap_or(f64::INFINITY)
            .total_cmp(&b.abs_error.unwrap_or(f64::INFINITY))
            .then(a.index.cmp(&b.index))
    });
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for d in ranked {
        if out.len() == k {
            break;
        }
        if seen.insert(dedup_key(&d.inputs)) {
            out.push(TopCandidate {
                rank: out.len() + 1,
                draw: d.index,
                inputs: d.inputs.clone(),
                prediction: d.prediction.expect("filtered"),
                abs_error: d.abs_error.expect("set with prediction"),
                flag: d.flag,
                source: d.source.clone(),
            });
        }
    }
    out
}

pub fn run_imc(cfg: &ImcConfig, predictor: &dyn Predictor, ds: &SpinDataset, tables: &FeasibilityTables) -> Result<ImcRun> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::invalid("IMC needs a non-empty dataset"));
    }
    let mut notes = Vec::new();
    let (mut draws, fallback): (Vec<ImcDraw>, bool) = match cfg.mode {
        ImcMode::Experimental => {
            let (pool, fallback) = experimental_pool(ds, &cfg.polymer);
            let draws = (0..cfg.n_simulations)
                .into_par_iter()
                .map(|i| {
                    let mut r = rng::stream(cfg.seed, i as u64);
                    let row = pool[r.random_range(0..pool.len())];
                    let rec = &ds.records()[row];
                    ImcDraw {
                        index: i,
                        inputs: rec.inputs.clone(),
                        accepted: true,
                        prediction: None,
                        abs_error: None,
                        flag: row_flag(&rec.inputs.polymer, rec.inputs.solvents.iter().flatten().map(String::as_str), &tables.solubility),
                        source: DrawSource::Empirical { row, doi: rec.doi.clone() },
                        reasons: Vec::new(),
                    }
                })
                .collect();
            (draws, fallback)
        }
        ImcMode::Optimization => {
            let profile = optimization_profile(ds, &cfg.polymer);
            let draws = (0..cfg.n_simulations)
                .into_par_iter()
                .map(|i| {
                    let mut r = rng::stream(cfg.seed, i as u64);
                    let x = draw_optimization(&profile, &cfg.polymer, cfg.max_solvents, &mut r)?;
                    let check = mixture_feasible(&x.solvent_mix(), &cfg.polymer, &cfg.policy, tables);
                    let flag = row_flag(&cfg.polymer, x.solvents.iter().flatten().map(String::as_str), &tables.solubility);
                    Ok(ImcDraw {
                        index: i,
                        accepted: check.accepted,
                        prediction: None,
                        abs_error: None,
                        flag,
                        source: DrawSource::Synthetic,
                        reasons: check.reasons,
                        inputs: x,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            (draws, profile.fallback)
        }
    };
    if fallback {
        notes.push(format!(
            "polymer `{}` has fewer than {MIN_POLYMER_ROWS} rows; drew from the full dataset",
            cfg.polymer
        ));
    }

    let accepted_idx: Vec<usize> = draws.iter().filter(|d| d.accepted).map(|d| d.index).collect();
    let batch: Vec<ProcessInputs> = accepted_idx.iter().map(|&i| draws[i].inputs.clone()).collect();
    let preds = if batch.is_empty() {
        Vec::new()
    } else {
        predictor.predict_inputs(&batch)?
    };
    for (&i, p) in accepted_idx.iter().zip(&preds) {
        draws[i].prediction = Some(*p);
        draws[i].abs_error = Some((p - cfg.target).abs());
    }

    let mut unknown = std::collections::BTreeSet::new();
    for d in &draws {
        for (s, _) in d.inputs.solvent_mix() {
            if tables.solubility.lookup(&d.inputs.polymer, s).is_none() {
                unknown.insert(format!("{}/{}", d.inputs.polymer, s));
            }
        }
    }
    if !unknown.is_empty() {
        notes.push(format!(
            "{} polymer/solvent pairs have no rating and were capped at the {} threshold",
            unknown.len(),
            cfg.policy.mode
        ));
    }
    let successes = draws.iter().filter(|d| d.within(cfg.target, cfg.tolerance)).count();
    let n_acc = accepted_idx.len();
    if n_acc == 0 {
        notes.push("no draw passed the chemistry checks; prediction statistics are undefined".into());
    }
    let (pred_mean, pred_sd) = mean_sd(&preds);
    let err: Vec<f64> = preds.iter().map(|p| p - cfg.target).collect();
    let summary = ImcSummary {
        mode: cfg.mode,
        polymer: cfg.polymer.clone(),
        target: cfg.target,
        tolerance: cfg.tolerance,
        strictness: cfg.policy.mode.to_string(),
        no_allow_pct: cfg.policy.no_allow_pct,
        seed: cfg.seed,
        n_draws: draws.len(),
        accepted: n_acc,
        successes,
        pred_mean,
        pred_sd,
        rmse_to_target: (n_acc > 0).then(|| (err.iter().map(|e| e * e).sum::<f64>() / n_acc as f64).sqrt()),
        mae_to_target: (n_acc > 0).then(|| err.iter().map(|e| e.abs()).sum::<f64>() / n_acc as f64),
        success_probability: (n_acc > 0).then(|| successes as f64 / n_acc as f64),
        success_probability_all: successes as f64 / draws.len() as f64,
        acceptance_rate: (cfg.mode == ImcMode::Optimization).then(|| n_acc as f64 / draws.len() as f64),
        fallback_to_full_dataset: fallback,
        unknown_pairs: unknown.into_iter().collect(),
        notes,
        top: top_k(&draws, cfg.top_k),
    };
    Ok(ImcRun { summary, draws })
}

fn input_fields(x: &ProcessInputs) -> Vec<String> {
    let o = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut row = vec![x.polymer.clone()];
    row.extend(x.solvents.iter().map(|s| s.clone().unwrap_or_default()));
    row.extend(x.ratios.iter().map(|r| r.to_string()));
    row.push(o(x.solution_concentration));
    row.push(o(x.needle_diameter));
    row.push(x.collector_type.clone().unwrap_or_default());
    for v in &NumericVar::OPERATING[2..] {
        row.push(o(x.numeric(*v)));
    }
    row
}

const INPUT_HEADER: [&str; 16] = [
    "polymer",
    "solvent_1",
    "solvent_2",
    "solvent_3",
    "solvent1_ratio",
    "solvent2_ratio",
    "solvent3_ratio",
    "solution_concentration",
    "needle_diameter",
    "collector_type",
    "rotation_speed",
    "voltage",
    "flow_rate",
    "distance",
    "temperature",
    "humidity",
];

fn source_fields(s: &DrawSource) -> [String; 3] {
    match s {
        DrawSource::Empirical { row, doi } => ["empirical".into(), row.to_string(), doi.clone().unwrap_or_default()],
        DrawSource::Synthetic => ["synthetic".into(), String::new(), String::new()],
    }
}

impl ImcRun {
    /// Full draw table as delimited text.
    pub fn write_draws<W: Write>(&self, w: W, delimiter: u8) -> Result<()> {
        let mut out = csv::WriterBuilder::new().delimiter(delimiter).from_writer(w);
        let mut header = vec!["draw", "source", "row", "doi", "accepted", "flag", "prediction", "abs_error", "within_band"];
        header.extend(INPUT_HEADER);
        out.write_record(&header)?;
        let (t, e) = (self.summary.target, self.summary.tolerance);
        for d in &self.draws {
            let mut row = vec![d.index.to_string()];
            row.extend(source_fields(&d.source));
            row.push(u8::from(d.accepted).to_string());
            row.push(d.flag.to_string());
            row.push(d.prediction.map(|p| p.to_string()).unwrap_or_default());
            row.push(d.abs_error.map(|p| p.to_string()).unwrap_or_default());
            row.push(u8::from(d.within(t, e)).to_string());
            row.extend(input_fields(&d.inputs));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_top<W: Write>(&self, w: W, delimiter: u8) -> Result<()> {
        let mut out = csv::WriterBuilder::new().delimiter(delimiter).from_writer(w);
        let mut header = vec!["rank", "draw", "prediction", "abs_error", "flag", "source", "row", "doi"];
        header.extend(INPUT_HEADER);
        out.write_record(&header)?;
        for c in &self.summary.top {
            let mut row = vec![c.rank.to_string(), c.draw.to_string(), c.prediction.to_string(), c.abs_error.to_string(), c.flag.to_string()];
            row.extend(source_fields(&c.source));
            row.extend(input_fields(&c.inputs));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}
