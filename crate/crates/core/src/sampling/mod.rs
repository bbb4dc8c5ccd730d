//! Training-subset selection: simple random, Sobol + D-optimal, and
//! polymer-balanced Sobol + D-optimal. Methods are registered by name behind
//! the [`Sampler`] trait.

pub mod allocation;
pub mod composition;
pub mod doptimal;
pub mod hybrid;
pub mod sobol;

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_records, SpinDataset};
use crate::error::{Error, Result};
use crate::rng;

pub use allocation::{allocate_balanced, BalancedAllocation};
pub use composition::sample_ratios;
pub use doptimal::{federov_select, DesignSelection};
pub use hybrid::{balanced_sobol_doptimal, sobol_doptimal_sample, HybridOptions};
pub use sobol::{scale_to_ranges, sobol_points, SobolStream};

/// `n` distinct row indices out of `total`, ascending, uniform over subsets.
pub fn sample_random(total: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > total {
        return Err(Error::SampleTooLarge {
            requested: n,
            available: total,
        });
    }
    if n == total {
        return Ok((0..total).collect());
    }
    let mut idx = index::sample(&mut rng::seeded(seed), total, n).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// A selection plus everything needed to reproduce and audit it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub method: String,
    pub seed: u64,
    pub requested: usize,
    pub indices: Vec<usize>,
    pub per_polymer: BTreeMap<String, usize>,
    pub parameters: BTreeMap<String, String>,
    pub candidates_generated: Option<usize>,
    pub discarded: Option<usize>,
    pub criterion: Option<f64>,
    pub allocation: Option<BalancedAllocation>,
    pub strata: Vec<hybrid::StratumReport>,
    pub log: Vec<String>,
}

impl SampleOutcome {
    fn new(method: &str, ds: &SpinDataset, n: usize, seed: u64, indices: Vec<usize>) -> Self {
        SampleOutcome {
            method: method.to_string(),
            seed,
            requested: n,
            per_polymer: hybrid::polymer_tally(ds, &indices),
            indices,
            parameters: BTreeMap::new(),
            candidates_generated: None,
            discarded: None,
            criterion: None,
            allocation: None,
            strata: Vec::new(),
            log: Vec::new(),
        }
    }

    /// Selected records as delimited text behind `#` provenance lines.
    pub fn export<W: Write>(&self, ds: &SpinDataset, mut w: W) -> Result<()> {
        writeln!(w, "# method: {}", self.method)?;
        writeln!(w, "# seed: {}", self.seed)?;
        writeln!(w, "# requested: {}", self.requested)?;
        for (k, v) in &self.parameters {
            writeln!(w, "# {k}: {v}")?;
        }
        let records: Vec<_> = self.indices.iter().map(|&i| ds.records()[i].clone()).collect();
        write_records(w, &records, b',')
    }
}

pub trait Sampler: Send + Sync {
    fn name(&self) -> &'static str;
    fn sample(&self, ds: &SpinDataset, n: usize, seed: u64) -> Result<SampleOutcome>;
}

pub struct RandomSampler;

impl Sampler for RandomSampler {
    fn name(&self) -> &'static str {
        "random"
    }

    fn sample(&self, ds: &SpinDataset, n: usize, seed: u64) -> Result<SampleOutcome> {
        let idx = sample_random(ds.len(), n, seed)?;
        Ok(SampleOutcome::new(self.name(), ds, n, seed, idx))
    }
}

#[derive(Default)]
pub struct SobolDOptimalSampler {
    pub options: HybridOptions,
}

fn hybrid_parameters(o: &HybridOptions) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("oversample_factor".to_string(), o.oversample_factor.to_string()),
        ("constrain_to_observed_tuples".to_string(), o.constrain_to_observed_tuples.to_string()),
        ("max_iter".to_string(), o.max_iter.to_string()),
    ])
}

impl Sampler for SobolDOptimalSampler {
    fn name(&self) -> &'static str {
        "sobol-doptimal"
    }

    fn sample(&self, ds: &SpinDataset, n: usize, seed: u64) -> Result<SampleOutcome> {
        let h = sobol_doptimal_sample(ds, n, &self.options, seed)?;
        let mut out = SampleOutcome::new(self.name(), ds, n, seed, h.indices);
        out.parameters = hybrid_parameters(&self.options);
        out.candidates_generated = Some(h.candidates_generated);
        out.discarded = Some(h.discarded);
        out.criterion = h.criterion;
        out.log = h.log;
        Ok(out)
    }
}

#[derive(Default)]
pub struct BalancedSampler {
    pub options: HybridOptions,
}

impl Sampler for BalancedSampler {
    fn name(&self) -> &'static str {
        "balanced"
    }

    fn sample(&self, ds: &SpinDataset, n: usize, seed: u64) -> Result<SampleOutcome> {
        let b = balanced_sobol_doptimal(ds, n, &self.options, seed)?;
        let mut out = SampleOutcome::new(self.name(), ds, n, seed, b.indices);
        out.parameters = hybrid_parameters(&self.options);
        out.candidates_generated = Some(b.strata.iter().map(|s| s.candidates_generated).sum());
        out.discarded = Some(b.strata.iter().map(|s| s.discarded).sum());
        out.log = b.allocation.log.clone();
        for s in &b.strata {
            out.log.push(format!(
                "{}: {} of {} via {}{}",
                s.polymer,
                s.selected,
                s.available,
                s.method,
                s.note.as_ref().map(|n| format!(" ({n})")).unwrap_or_default()
            ));
        }
        out.allocation = Some(b.allocation);
        out.strata = b.strata;
        Ok(out)
    }
}

/// Name-keyed sampler registry.
pub struct SamplerRegistry {
    entries: Vec<Box<dyn Sampler>>,
}

impl SamplerRegistry {
    pub fn empty() -> Self {
        SamplerRegistry { entries: Vec::new() }
    }

    pub fn with_options(options: HybridOptions) -> Self {
        let mut r = Self::empty();
        r.register(Box::new(RandomSampler));
        r.register(Box::new(SobolDOptimalSampler {
            options: options.clone(),
        }));
        r.register(Box::new(BalancedSampler { options }));
        r
    }

    /// Replaces any sampler already registered under the same name.
    pub fn register(&mut self, s: Box<dyn Sampler>) {
        self.entries.retain(|e| e.name() != s.name());
        self.entries.push(s);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Sampler> {
        self.entries
            .iter()
            .find(|e| e.name() == name)
            .map(|b| b.as_ref())
            .ok_or_else(|| Error::UnknownSampling(name.to_string()))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name()).collect()
    }
}

impl Default for SamplerRegistry {
    fn default() -> Self {
        Self::with_options(HybridOptions::default())
    }
}
