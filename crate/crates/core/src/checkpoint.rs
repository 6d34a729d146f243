//! JSON checkpoints: model config and named parameter arrays, with optional
//! codebook and optimizer state for resuming.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::params::{NamedArray, ParamStore};
use crate::quantizer::Codebook;
use crate::scalar::{Precision, Scalar};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Optimizer and loop state needed to continue training bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSnapshot {
    /// Number of completed epochs.
    pub epoch: usize,
    /// Number of Adam updates applied so far.
    pub step: u64,
    pub seed: u64,
    pub best_val_mae: Option<f64>,
    pub best_epoch: Option<usize>,
    pub adam_m: Vec<NamedArray>,
    pub adam_v: Vec<NamedArray>,
    /// Parameters of the best model by validation MAE so far.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_params: Option<Vec<NamedArray>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub precision: Precision,
    pub config: ModelConfig,
    pub params: Vec<NamedArray>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codebook: Option<Codebook>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSnapshot>,
}

impl Checkpoint {
    pub fn new<T: Scalar>(params: &ModelParams<T>) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            precision: T::PRECISION,
            config: params.config.clone(),
            params: params.store.to_arrays(),
            codebook: None,
            train: None,
        }
    }

    pub fn with_codebook(mut self, cb: &Codebook) -> Self {
        self.codebook = Some(cb.clone());
        self
    }

    pub fn with_train(mut self, train: TrainSnapshot) -> Self {
        self.train = Some(train);
        self
    }

    /// Parameters in the requested precision. Loading an `f64` checkpoint as
    /// `f32` rounds each value once.
    pub fn model<T: Scalar>(&self) -> Result<ModelParams<T>> {
        ModelParams::from_store(self.config.clone(), ParamStore::from_arrays(&self.params)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if self
            .params
            .iter()
            .chain(self.train.iter().flat_map(|t| t.adam_m.iter().chain(&t.adam_v).chain(t.best_params.iter().flatten())))
            .any(|a| a.values.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Data("refusing to save a checkpoint with non-finite values".into()));
        }
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_str(&text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "{}: checkpoint version {} (supported: {CHECKPOINT_VERSION})",
                path.display(),
                ck.version
            )));
        }
        if let Some(cb) = &ck.codebook {
            ck.config.check_codebook(cb)?;
        }
        Ok(ck)
    }
}
