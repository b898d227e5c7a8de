use serde::{Deserialize, Serialize};

use crate::autodiff::Precision;
use crate::error::{Error, Result};
use crate::models::{GeneratorConfig, MlpConfig, DEFAULT_WINDOW};
use crate::train::AdamConfig;

/// Network shape shared by every generator, predictor and discriminator
/// of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub window: usize,
    #[serde(default)]
    pub batch_norm: bool,
    #[serde(default)]
    pub dropout: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            batch_norm: false,
            dropout: false,
        }
    }
}

impl ModelConfig {
    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            window: self.window,
            batch_norm: self.batch_norm,
        }
    }

    pub fn predictor(&self) -> MlpConfig {
        MlpConfig::predictor(self.generator().feature_len()).with_dropout(self.dropout)
    }

    pub fn discriminator(&self) -> MlpConfig {
        MlpConfig::discriminator(self.generator().feature_len()).with_dropout(self.dropout)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator().validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the prediction loss against the adversarial terms.
    pub lambda: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub precision: Precision,
    /// Off trains the ablated model: prediction loss only.
    pub adversarial: bool,
    /// Generator minimizes `-log(1 - D(G(y)))` instead of `log D(G(y))`.
    #[serde(default)]
    pub non_saturating: bool,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Batch size for validation and inference passes.
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
}

fn default_eval_batch() -> usize {
    256
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.05,
            batch_size: 64,
            max_epochs: 10,
            patience: 3,
            seed: 0,
            precision: Precision::F32,
            adversarial: true,
            non_saturating: false,
            adam: AdamConfig::default(),
            eval_batch_size: default_eval_batch(),
        }
    }
}

impl TrainConfig {
    /// Batch 1000, 50 epochs, λ = 0.05.
    pub fn paper() -> Self {
        Self {
            batch_size: 1000,
            max_epochs: 50,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda <= 0.0 {
            return Err(Error::config(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max epochs must be at least 1"));
        }
        if self.eval_batch_size == 0 {
            return Err(Error::config("eval batch size must be at least 1"));
        }
        let a = self.adam;
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(a.lr) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !positive(a.eps) {
            return Err(Error::config("invalid Adam hyperparameters"));
        }
        Ok(())
    }

    /// Batches per epoch over `windows` training windows.
    pub fn batches_per_epoch(&self, windows: usize) -> usize {
        windows.div_ceil(self.batch_size)
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: String,
    pub appliance: String,
    pub epoch: usize,
    /// Mean prediction loss (normalized MSE) over the epoch's batches.
    pub pred_loss: f64,
    /// Mean generator adversarial term summed over discriminators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adv_loss: Option<f64>,
    /// Per discriminator: mean loss over the epoch.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub d_loss: Vec<f64>,
    /// Per discriminator: mean output on shared-generator features.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub d_shared: Vec<f64>,
    /// Per discriminator: mean output on its extractor's features.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub d_specific: Vec<f64>,
    /// Validation MAE in normalized units and in watts.
    pub val_mae: Option<f64>,
    pub val_mae_watts: Option<f64>,
    pub best: bool,
}
