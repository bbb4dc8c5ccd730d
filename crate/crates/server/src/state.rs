use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use elspin_core::bundle::ModelBundle;
use elspin_core::canon::SolventCanon;
use elspin_core::chemistry::{FeasibilityTables, IncompatibilityTable, SolubilityTable};
use elspin_core::dataset::SpinDataset;
use elspin_core::learners::LearnerRegistry;
use elspin_core::sampling::SamplerRegistry;
use elspin_core::workflow::TrainingArtifacts;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::Semaphore;

use crate::ServerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Train,
    Imc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobState {
    pub id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    pub progress: f64,
    /// Model id for training jobs.
    pub result: Option<String>,
    pub error: Option<String>,
}

pub struct ModelEntry {
    pub bundle: ModelBundle,
    pub artifacts: Option<TrainingArtifacts>,
    /// Dataset the model was trained from, when known.
    pub dataset_id: Option<String>,
    /// Rows the model saw (post-sampling), for grids and importance.
    pub reference: Option<Arc<SpinDataset>>,
}

pub struct Export {
    pub content_type: &'static str,
    pub filename: String,
    pub body: Vec<u8>,
}

pub struct AppState {
    pub config: ServerConfig,
    pub canon: SolventCanon,
    pub learners: LearnerRegistry,
    pub samplers: SamplerRegistry,
    pub datasets: RwLock<HashMap<String, Arc<SpinDataset>>>,
    pub models: RwLock<HashMap<String, Arc<ModelEntry>>>,
    pub jobs: RwLock<HashMap<String, JobState>>,
    pub exports: RwLock<HashMap<String, Arc<Export>>>,
    pub feasibility: RwLock<Arc<FeasibilityTables>>,
    pub workers: Arc<Semaphore>,
    counter: AtomicU64,
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl AppState {
    pub fn new(config: ServerConfig) -> elspin_core::Result<Self> {
        let canon = SolventCanon::default();
        let feasibility = match &config.solubility {
            Some(p) => FeasibilityTables::load(p, config.incompatibility.as_deref(), &canon)?,
            None => FeasibilityTables {
                solubility: SolubilityTable::new(),
                incompatibility: match &config.incompatibility {
                    Some(p) => IncompatibilityTable::from_reader(std::fs::File::open(p)?, &canon)?,
                    None => IncompatibilityTable::builtin(&canon),
                },
            },
        };
        Ok(AppState {
            workers: Arc::new(Semaphore::new(config.workers.max(1))),
            config,
            canon,
            learners: LearnerRegistry::default(),
            samplers: SamplerRegistry::default(),
            datasets: RwLock::default(),
            models: RwLock::default(),
            jobs: RwLock::default(),
            exports: RwLock::default(),
            feasibility: RwLock::new(Arc::new(feasibility)),
            counter: AtomicU64::new(1),
        })
    }

    pub fn next_id(&self, prefix: &str) -> String {
        format!("{prefix}{}", self.counter.fetch_add(1, Ordering::Relaxed))
    }

    pub fn dataset(&self, id: &str) -> Option<Arc<SpinDataset>> {
        self.datasets.read().expect("lock").get(id).cloned()
    }

    pub fn model(&self, id: &str) -> Option<Arc<ModelEntry>> {
        self.models.read().expect("lock").get(id).cloned()
    }

    pub fn tables(&self) -> Arc<FeasibilityTables> {
        self.feasibility.read().expect("lock").clone()
    }

    /// Content-addressed, so identical exports share an id.
    pub fn add_export(&self, filename: String, content_type: &'static str, body: Vec<u8>) -> String {
        let id = hex_digest(&body)[..16].to_string();
        self.exports
            .write()
            .expect("lock")
            .entry(id.clone())
            .or_insert_with(|| Arc::new(Export { content_type, filename, body }));
        id
    }

    /// Status only moves forward; late or repeated updates are ignored.
    pub fn update_job(&self, id: &str, status: JobStatus, progress: f64, result: Option<String>, error: Option<String>) {
        let mut jobs = self.jobs.write().expect("lock");
        if let Some(j) = jobs.get_mut(id) {
            if status < j.status || j.status >= JobStatus::Done {
                return;
            }
            j.status = status;
            j.progress = progress.max(j.progress);
            if result.is_some() {
                j.result = result;
            }
            if error.is_some() {
                j.error = error;
            }
        }
    }

    pub fn data_path(&self, name: &str) -> PathBuf {
        let p = PathBuf::from(name);
        if p.is_absolute() {
            p
        } else {
            self.config.data_dir.join(p)
        }
    }
}
