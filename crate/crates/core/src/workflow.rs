//! End-to-end training: optional sampling, benchmark, best-model bundle and
//! held-out diagnostics.

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::bundle::{ModelBundle, Predictor, TrainingMetadata};
use crate::dataset::{ProcessInputs, SpinDataset};
use crate::error::{Error, Result};
use crate::evaluation::{benchmark, EvalConfig, EvalReport};
use crate::interpret::{residual_diagnostics, ResidualDiagnostics};
use crate::learners::LearnerRegistry;
use crate::sampling::{SampleOutcome, SamplerRegistry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRequest {
    /// Sampler name; `None` trains on every row.
    pub sampling: Option<String>,
    pub sample_size: Option<usize>,
    pub sampling_seed: u64,
    pub learners: Vec<String>,
    pub eval: EvalConfig,
}

impl Default for TrainRequest {
    fn default() -> Self {
        TrainRequest {
            sampling: None,
            sample_size: None,
            sampling_seed: 42,
            learners: vec!["linear".into(), "random-forest".into(), "boosting".into()],
            eval: EvalConfig::default(),
        }
    }
}

/// Everything a report or the API needs besides the bundle itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingArtifacts {
    pub report: EvalReport,
    /// Best model on the held-out rows (out-of-fold rows when there is no
    /// test split).
    pub diagnostics: ResidualDiagnostics,
    pub diagnostics_source: String,
    pub sample: Option<SampleSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub method: String,
    pub seed: u64,
    pub requested: usize,
    pub selected: usize,
    pub per_polymer: std::collections::BTreeMap<String, usize>,
    pub log: Vec<String>,
}

impl From<&SampleOutcome> for SampleSummary {
    fn from(s: &SampleOutcome) -> Self {
        SampleSummary {
            method: s.method.clone(),
            seed: s.seed,
            requested: s.requested,
            selected: s.indices.len(),
            per_polymer: s.per_polymer.clone(),
            log: s.log.clone(),
        }
    }
}

pub struct TrainOutput {
    pub bundle: ModelBundle,
    pub artifacts: TrainingArtifacts,
    /// The rows actually used (after sampling).
    pub dataset: SpinDataset,
}

pub fn train(ds: &SpinDataset, req: &TrainRequest, learners: &LearnerRegistry, samplers: &SamplerRegistry) -> Result<TrainOutput> {
    let (data, sample) = match &req.sampling {
        None => (ds.clone(), None),
        Some(method) => {
            let n = req.sample_size.unwrap_or(ds.len());
            let s = samplers.get(method)?.sample(ds, n, req.sampling_seed)?;
            (ds.subset(&s.indices), Some(s))
        }
    };
    let chosen = req
        .learners
        .iter()
        .map(|n| learners.get(n))
        .collect::<Result<Vec<_>>>()?;
    let mut eval = req.eval.clone();
    eval.sampling_label = sample.as_ref().map_or("none".to_string(), |s| s.method.clone());
    let bench = benchmark(&data, &chosen, &eval)?;
    let best = bench
        .report
        .best_entry()
        .ok_or_else(|| Error::invalid("benchmark selected no model"))?
        .clone();

    let metadata = TrainingMetadata {
        dataset_fingerprint: ds.fingerprint(),
        dataset_rows: ds.len(),
        sampling_method: eval.sampling_label.clone(),
        sampling_seed: req.sampling_seed,
        sample_size: data.len(),
        test_fraction: eval.test_fraction,
        folds: eval.folds,
        seed: eval.seed,
        learner: best.learner.clone(),
        params: best.params.clone(),
        cv_metrics: Some(best.cv),
        test_metrics: best.test,
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        notes: bench.report.warnings.clone(),
    };
    let bundle = ModelBundle::new(bench.recipe, bench.model, metadata);

    let inputs: Vec<ProcessInputs> = data.inputs();
    let y = data.outcomes();
    let (diagnostics, source) = if bench.report.test_rows.is_empty() {
        let yt: Vec<f64> = bench.report.train_rows.iter().map(|&i| y[i]).collect();
        (residual_diagnostics(&yt, &bench.report.oof_predictions)?, "out-of-fold")
    } else {
        let rows: Vec<ProcessInputs> = bench.report.test_rows.iter().map(|&i| inputs[i].clone()).collect();
        let yt: Vec<f64> = bench.report.test_rows.iter().map(|&i| y[i]).collect();
        (residual_diagnostics(&yt, &bundle.predict_inputs(&rows)?)?, "test")
    };
    Ok(TrainOutput {
        bundle,
        artifacts: TrainingArtifacts {
            report: bench.report,
            diagnostics,
            diagnostics_source: source.into(),
            sample: sample.as_ref().map(SampleSummary::from),
        },
        dataset: data,
    })
}
