use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Real, Tensor};
use crate::error::{Error, Result};
use crate::models::generator::check_same_layout;
use crate::models::params::{Bound, Initializer, NetworkParams};
use crate::models::ForwardMode;

pub const PREDICTOR_HIDDEN: [usize; 2] = [1024, 128];
pub const DISCRIMINATOR_HIDDEN: [usize; 2] = [256, 64];
pub const DROPOUT_P: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input: usize,
    pub hidden: Vec<usize>,
    /// Dropout probability after each hidden layer, when enabled.
    #[serde(default)]
    pub dropout: Option<f64>,
}

impl MlpConfig {
    pub fn predictor(feature_len: usize) -> Self {
        Self {
            input: feature_len,
            hidden: PREDICTOR_HIDDEN.to_vec(),
            dropout: None,
        }
    }

    pub fn discriminator(feature_len: usize) -> Self {
        Self {
            input: feature_len,
            hidden: DISCRIMINATOR_HIDDEN.to_vec(),
            dropout: None,
        }
    }

    pub fn with_dropout(mut self, enabled: bool) -> Self {
        self.dropout = enabled.then_some(DROPOUT_P);
        self
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input];
        w.extend(&self.hidden);
        w.push(1);
        w
    }
}

/// Dense stack `FC-ReLU-…-FC` with a scalar head.
#[derive(Clone, Debug, PartialEq)]
struct Mlp<T> {
    config: MlpConfig,
    params: NetworkParams<T>,
}

impl<T: Real> Mlp<T> {
    fn new(config: MlpConfig, seed: u64) -> Result<Self> {
        if config.input == 0 || config.hidden.contains(&0) {
            return Err(Error::config("dense layer widths must be positive"));
        }
        let mut init = Initializer::new(seed);
        let mut params = NetworkParams::new();
        for (i, pair) in config.widths().windows(2).enumerate() {
            let (n, m) = (pair[0], pair[1]);
            params.insert(format!("fc{}.weight", i + 1), init.he(&[m, n], n))?;
            params.insert(format!("fc{}.bias", i + 1), Tensor::zeros([m]))?;
        }
        Ok(Self { config, params })
    }

    fn from_params(config: MlpConfig, params: NetworkParams<T>, what: &str) -> Result<Self> {
        let reference = Self::new(config.clone(), 0)?;
        check_same_layout(&reference.params, &params, what)?;
        Ok(Self { config, params })
    }

    /// Returns the `[B]` pre-activation of the scalar head.
    fn forward(&self, g: &mut Graph<T>, bound: &Bound, features: NodeId, mode: &mut ForwardMode<'_>) -> Result<NodeId> {
        let shape = g.value(features).shape().to_vec();
        let [batch, width] = shape[..] else {
            return Err(Error::shape(format!("dense stack input must be [B, F], got {shape:?}")));
        };
        if width != self.config.input {
            return Err(Error::shape(format!(
                "dense stack expects {} features, got {width}",
                self.config.input
            )));
        }
        let layers = self.config.hidden.len() + 1;
        let mut x = features;
        for l in 1..=layers {
            x = g.dense(x, bound.id(&format!("fc{l}.weight"))?, bound.id(&format!("fc{l}.bias"))?)?;
            if l < layers {
                x = g.relu(x);
                if let (Some(p), ForwardMode::Train { rng }) = (self.config.dropout, &mut *mode) {
                    x = g.dropout(x, p, *rng)?;
                }
            }
        }
        g.reshape(x, [batch])
    }
}

/// Regression head mapping generator features to a normalized midpoint
/// power.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictor<T>(Mlp<T>);

impl<T: Real> Predictor<T> {
    pub fn new(config: MlpConfig, seed: u64) -> Result<Self> {
        Mlp::new(config, seed).map(Self)
    }

    pub fn from_params(config: MlpConfig, params: NetworkParams<T>) -> Result<Self> {
        Mlp::from_params(config, params, "predictor").map(Self)
    }

    pub fn config(&self) -> &MlpConfig {
        &self.0.config
    }

    pub fn params(&self) -> &NetworkParams<T> {
        &self.0.params
    }

    pub fn params_mut(&mut self) -> &mut NetworkParams<T> {
        &mut self.0.params
    }

    /// `[B, F]` features to `[B]` predictions.
    pub fn forward(&self, g: &mut Graph<T>, bound: &Bound, features: NodeId, mode: &mut ForwardMode<'_>) -> Result<NodeId> {
        self.0.forward(g, bound, features, mode)
    }

    pub fn predict(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let bound = self.0.params.bind(&mut g, false);
        let input = g.constant(features.clone());
        let out = self.forward(&mut g, &bound, input, &mut ForwardMode::Eval)?;
        Ok(g.value(out).clone())
    }
}

/// Binary classifier over features: `FC-ReLU-FC-ReLU-FC-Sigmoid`. Outputs
/// near 1 mean "shared generator", near 0 "appliance-specific generator".
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T>(Mlp<T>);

impl<T: Real> Discriminator<T> {
    pub fn new(config: MlpConfig, seed: u64) -> Result<Self> {
        Mlp::new(config, seed).map(Self)
    }

    pub fn from_params(config: MlpConfig, params: NetworkParams<T>) -> Result<Self> {
        Mlp::from_params(config, params, "discriminator").map(Self)
    }

    pub fn config(&self) -> &MlpConfig {
        &self.0.config
    }

    pub fn params(&self) -> &NetworkParams<T> {
        &self.0.params
    }

    pub fn params_mut(&mut self) -> &mut NetworkParams<T> {
        &mut self.0.params
    }

    /// `[B, F]` features to `[B]` pre-sigmoid scores.
    pub fn logits(&self, g: &mut Graph<T>, bound: &Bound, features: NodeId, mode: &mut ForwardMode<'_>) -> Result<NodeId> {
        self.0.forward(g, bound, features, mode)
    }

    /// `[B, F]` features to `[B]` probabilities.
    pub fn forward(&self, g: &mut Graph<T>, bound: &Bound, features: NodeId, mode: &mut ForwardMode<'_>) -> Result<NodeId> {
        let logits = self.0.forward(g, bound, features, mode)?;
        Ok(g.sigmoid(logits))
    }

    pub fn probabilities(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let bound = self.0.params.bind(&mut g, false);
        let input = g.constant(features.clone());
        let out = self.forward(&mut g, &bound, input, &mut ForwardMode::Eval)?;
        Ok(g.value(out).clone())
    }
}
