//! Files the command-line tool reads and writes besides datasets and Grams.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Standardization;
use crate::error::{Error, Result};
use crate::fingerprint::fingerprint_str;
use crate::kernel::KernelConfig;
use crate::model::{CardinalitySpec, InstanceModel};
use crate::training::{TrainConfig, TrainReport};

pub const MODEL_FORMAT: &str = "cardkernel-model/1";

/// A trained cardinality model with everything needed to apply it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub spec: CardinalitySpec,
    pub model: InstanceModel,
    pub standardization: Option<Standardization>,
    pub train_config: TrainConfig,
    pub report: TrainReport,
    /// `(lambda, validation accuracy)` when a lambda grid was searched.
    pub lambda_scores: Vec<(f64, f64)>,
    pub data_fingerprint: String,
    /// Hash of every other field.
    pub fingerprint: String,
}

impl ModelFile {
    pub fn content_fingerprint(&self) -> Result<String> {
        let mut bare = self.clone();
        bare.fingerprint = String::new();
        Ok(fingerprint_str(&[&serde_json::to_string(&bare)?]))
    }

    pub fn seal(mut self) -> Result<Self> {
        self.fingerprint = self.content_fingerprint()?;
        Ok(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ModelFile = read_json(path)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Mismatch(format!(
                "{}: unsupported model format `{}` (expected `{MODEL_FORMAT}`)",
                path.display(),
                file.format
            )));
        }
        if file.content_fingerprint()? != file.fingerprint {
            return Err(Error::Mismatch(format!("{}: model fingerprint does not match its contents", path.display())));
        }
        file.spec.validate()?;
        Ok(file)
    }
}

/// Fingerprint tying a Gram matrix to its dataset, model and kernel.
pub fn gram_fingerprint(data_fingerprint: &str, model_fingerprint: &str, kernel: &KernelConfig) -> String {
    fingerprint_str(&[
        data_fingerprint,
        model_fingerprint,
        &kernel.instance.to_string(),
        kernel.label_token(),
    ])
}

/// Record of one command invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// Input path to content fingerprint.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    /// Named wall-clock durations in seconds.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        RunManifest {
            command: command.to_string(),
            config,
            seed,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
        }
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
