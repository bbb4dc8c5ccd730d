//! Versioned, checksummed model container.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "ESPNBNDL" | u32 version | section* | sha256(all preceding bytes)
//! section = 4-byte tag | u64 length | JSON payload
//! ```
//!
//! Tags are `RCPE` (recipe), `MODL` (fitted model) and `META` (metadata).
//! Floats are written with round-trip precision, so a reloaded bundle
//! predicts bit-identically.

use std::io::Write;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::ProcessInputs;
use crate::error::{Error, Result};
use crate::evaluation::MetricSet;
use crate::learners::{FittedModel, Params};
use crate::pipeline::Recipe;

pub const MAGIC: &[u8; 8] = b"ESPNBNDL";
pub const FORMAT_VERSION: u32 = 1;
const TAG_RECIPE: &[u8; 4] = b"RCPE";
const TAG_MODEL: &[u8; 4] = b"MODL";
const TAG_META: &[u8; 4] = b"META";
const DIGEST_LEN: usize = 32;

/// Anything that maps raw process inputs to predicted diameters.
pub trait Predictor: Send + Sync {
    fn predict_inputs(&self, rows: &[ProcessInputs]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingMetadata {
    pub dataset_fingerprint: String,
    pub dataset_rows: usize,
    pub sampling_method: String,
    pub sampling_seed: u64,
    pub sample_size: usize,
    pub test_fraction: f64,
    pub folds: usize,
    pub seed: u64,
    pub learner: String,
    pub params: Params,
    pub cv_metrics: Option<MetricSet>,
    pub test_metrics: Option<MetricSet>,
    /// Seconds since the Unix epoch.
    pub created_unix: u64,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub version: u32,
    pub recipe: Recipe,
    pub model: FittedModel,
    pub metadata: TrainingMetadata,
}

impl ModelBundle {
    pub fn new(recipe: Recipe, model: FittedModel, metadata: TrainingMetadata) -> Self {
        ModelBundle {
            version: FORMAT_VERSION,
            recipe,
            model,
            metadata,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        for (tag, payload) in [
            (TAG_RECIPE, serde_json::to_vec(&self.recipe)?),
            (TAG_MODEL, serde_json::to_vec(&self.model)?),
            (TAG_META, serde_json::to_vec(&self.metadata)?),
        ] {
            out.extend_from_slice(tag);
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&payload);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN {
            return Err(Error::ChecksumMismatch);
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::ChecksumMismatch);
        }
        if &body[..8] != MAGIC {
            return Err(Error::Bundle("not a model bundle (bad magic bytes)".into()));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let mut pos = 12;
        let (mut recipe, mut model, mut meta) = (None, None, None);
        while pos < body.len() {
            if body.len() - pos < 12 {
                return Err(Error::Bundle("truncated section header".into()));
            }
            let tag: [u8; 4] = body[pos..pos + 4].try_into().expect("4 bytes");
            let len = u64::from_le_bytes(body[pos + 4..pos + 12].try_into().expect("8 bytes")) as usize;
            pos += 12;
            let payload = body
                .get(pos..pos.checked_add(len).ok_or_else(|| Error::Bundle("section length overflow".into()))?)
                .ok_or_else(|| Error::Bundle("truncated section".into()))?;
            pos += len;
            match &tag {
                TAG_RECIPE => recipe = Some(decode::<Recipe>(payload)?),
                TAG_MODEL => model = Some(decode::<FittedModel>(payload)?),
                TAG_META => meta = Some(decode::<TrainingMetadata>(payload)?),
                other => {
                    return Err(Error::Bundle(format!("unknown section `{}`", String::from_utf8_lossy(other))));
                }
            }
        }
        let missing = |s: &str| Error::Bundle(format!("missing {s} section"));
        Ok(ModelBundle {
            version,
            recipe: recipe.ok_or_else(|| missing("recipe"))?,
            model: model.ok_or_else(|| missing("model"))?,
            metadata: meta.ok_or_else(|| missing("metadata"))?,
        })
    }

    /// Written to a temporary sibling and renamed, so readers never see a
    /// partial file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp-bundle");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn decode<T: DeserializeOwned>(payload: &[u8]) -> Result<T> {
    serde_json::from_slice(payload).map_err(|e| Error::Bundle(format!("corrupt section: {e}")))
}

impl Predictor for ModelBundle {
    fn predict_inputs(&self, rows: &[ProcessInputs]) -> Result<Vec<f64>> {
        let x = self.recipe.apply(rows)?;
        self.model.predict(&x)
    }
}
