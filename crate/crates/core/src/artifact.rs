//! Artifact metadata and the self-describing model file.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::featurize::Featurizer;
use crate::io::write_file;
use crate::model::{Model, ModelSpec};
use crate::params::ParamEntry;
use crate::pipeline::{Dataset, PipelineConfig};

pub const SCHEMA_VERSION: u32 = 1;
pub const MODEL_KIND: &str = "trigin-model";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Short hash of any serializable configuration.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let json = serde_json::to_vec(cfg).expect("configuration serializes");
    sha256_hex(&json)[..16].to_string()
}

/// Content hash of ids, features and labels, used to tie splits to a dataset.
pub fn dataset_hash(data: &Dataset) -> String {
    let mut h = Sha256::new();
    for (i, r) in data.records.iter().enumerate() {
        h.update(serde_json::to_vec(r).expect("record serializes"));
        h.update([data.labels[i] as u8]);
        if let Some(t) = &data.texts {
            h.update(serde_json::to_vec(&t[i]).expect("tokens serialize"));
        }
    }
    hex::encode(h.finalize())[..16].to_string()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub schema_version: u32,
    pub seed: u64,
    pub config_hash: String,
}

impl Meta {
    pub fn new(seed: u64, config_hash: impl Into<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed,
            config_hash: config_hash.into(),
        }
    }

    /// Leading `#` line for CSV artifacts.
    pub fn csv_comment(&self) -> String {
        format!(
            "# schema_version={} seed={} config_hash={}\n",
            self.schema_version, self.seed, self.config_hash
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub kind: String,
    #[serde(flatten)]
    pub meta: Meta,
    pub dataset_hash: String,
    pub spec: ModelSpec,
    pub pipeline: PipelineConfig,
    pub featurizer: Featurizer,
    pub best_epoch: usize,
    pub params: Vec<ParamEntry>,
}

impl ModelFile {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: serde_json::Value = serde_json::from_str(text)?;
        if probe.get("kind").and_then(|k| k.as_str()) != Some(MODEL_KIND) {
            return Err(Error::Incompatible("not a model file (missing `kind`)".into()));
        }
        let version = probe.get("schema_version").and_then(|v| v.as_u64());
        if version != Some(SCHEMA_VERSION as u64) {
            return Err(Error::Incompatible(format!(
                "model schema_version {} but this build reads {SCHEMA_VERSION}",
                version.map_or_else(|| "missing".to_string(), |v| v.to_string())
            )));
        }
        Ok(serde_json::from_value(probe)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Rebuilds the model with the stored parameter values.
    pub fn model(&self) -> Result<Model> {
        let mut model = Model::new(self.spec.clone(), self.meta.seed)?;
        model.params.restore(&self.params)?;
        Ok(model)
    }
}

/// `fpr,tpr` rows preceded by a metadata comment.
pub fn roc_csv(meta: &Meta, points: &[(f64, f64)]) -> String {
    let mut out = meta.csv_comment();
    out.push_str("fpr,tpr\n");
    for (f, t) in points {
        let _ = writeln!(out, "{},{}", crate::io::fmt_f64(*f), crate::io::fmt_f64(*t));
    }
    out
}
