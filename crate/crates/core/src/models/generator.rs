use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, NormStats, Real, Tensor};
use crate::error::{Error, Result};
use crate::models::params::{Bound, Initializer, NetworkParams};
use crate::models::ForwardMode;

pub const CONV_KERNELS: [usize; 4] = [7, 5, 5, 3];
pub const CONV_CHANNELS: [usize; 4] = [30, 40, 40, 50];
/// Pool after the first conv layer.
pub const FIRST_POOL: usize = 3;
/// Pool after the last conv layer.
pub const LAST_POOL: usize = 2;
pub const MIN_WINDOW: usize = 27;
pub const DEFAULT_WINDOW: usize = 599;

const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub window: usize,
    #[serde(default)]
    pub batch_norm: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            batch_norm: false,
        }
    }
}

impl GeneratorConfig {
    pub fn new(window: usize) -> Self {
        Self {
            window,
            batch_norm: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window.is_multiple_of(2) {
            return Err(Error::config(format!("window {} must be odd", self.window)));
        }
        if self.window < MIN_WINDOW {
            return Err(Error::config(format!(
                "window {} too small (minimum {MIN_WINDOW})",
                self.window
            )));
        }
        Ok(())
    }

    pub fn feature_len(&self) -> usize {
        feature_len(self.window)
    }
}

/// Width of the flattened generator output for a window of `window` samples.
pub fn feature_len(window: usize) -> usize {
    CONV_CHANNELS[3] * (window / FIRST_POOL / LAST_POOL)
}

/// Conv feature extractor: conv1 → pool(3) → conv2 → conv3 → conv4 →
/// pool(2) → flatten, ReLU after every conv (batch norm before the ReLU when
/// enabled). All convs are length preserving.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T> {
    config: GeneratorConfig,
    params: NetworkParams<T>,
}

/// Node handles produced by one generator forward pass.
#[derive(Clone, Debug)]
pub struct GeneratorForward {
    pub features: NodeId,
    norm_nodes: Vec<(usize, NodeId)>,
}

impl<T: Real> Generator<T> {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Initializer::new(seed);
        let mut params = NetworkParams::new();
        let mut c_in = 1;
        for (i, (&k, &c_out)) in CONV_KERNELS.iter().zip(&CONV_CHANNELS).enumerate() {
            let l = i + 1;
            params.insert(format!("conv{l}.weight"), init.he(&[c_out, c_in, k], c_in * k))?;
            params.insert(format!("conv{l}.bias"), Tensor::zeros([c_out]))?;
            if config.batch_norm {
                params.insert(format!("bn{l}.gamma"), Tensor::full([c_out], T::one()))?;
                params.insert(format!("bn{l}.beta"), Tensor::zeros([c_out]))?;
                params.insert(format!("bn{l}.running_mean"), Tensor::zeros([c_out]))?;
                params.insert(format!("bn{l}.running_var"), Tensor::full([c_out], T::one()))?;
            }
            c_in = c_out;
        }
        Ok(Self { config, params })
    }

    /// Rebuilds a generator from stored parameters, checking every shape.
    pub fn from_params(config: GeneratorConfig, params: NetworkParams<T>) -> Result<Self> {
        let reference = Self::new(config.clone(), 0)?;
        check_same_layout(&reference.params, &params, "generator")?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &NetworkParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut NetworkParams<T> {
        &mut self.params
    }

    pub fn feature_len(&self) -> usize {
        self.config.feature_len()
    }

    /// `input` is a `[B, W]` batch of normalized mains windows; the output
    /// node is `[B, feature_len]`.
    pub fn forward(&self, g: &mut Graph<T>, bound: &Bound, input: NodeId, mode: &mut ForwardMode<'_>) -> Result<GeneratorForward> {
        let shape = g.value(input).shape().to_vec();
        let [batch, width] = shape[..] else {
            return Err(Error::shape(format!("generator input must be [B, W], got {shape:?}")));
        };
        if width != self.config.window {
            return Err(Error::shape(format!(
                "generator expects windows of {}, got {width}",
                self.config.window
            )));
        }
        let mut x = g.reshape(input, [batch, 1, width])?;
        let mut norm_nodes = Vec::new();
        for (i, &k) in CONV_KERNELS.iter().enumerate() {
            let l = i + 1;
            x = g.conv1d(
                x,
                bound.id(&format!("conv{l}.weight"))?,
                bound.id(&format!("conv{l}.bias"))?,
                k / 2,
            )?;
            if self.config.batch_norm {
                let gamma = bound.id(&format!("bn{l}.gamma"))?;
                let beta = bound.id(&format!("bn{l}.beta"))?;
                x = match mode {
                    ForwardMode::Train { .. } => g.batch_norm(x, gamma, beta, NormStats::Batch)?,
                    ForwardMode::Eval => {
                        let mean = self.params.expect(&format!("bn{l}.running_mean"))?.to_f64_vec();
                        let var = self.params.expect(&format!("bn{l}.running_var"))?.to_f64_vec();
                        g.batch_norm(x, gamma, beta, NormStats::Fixed { mean: &mean, var: &var })?
                    }
                };
                norm_nodes.push((l, x));
            }
            x = g.relu(x);
            if l == 1 {
                x = g.maxpool1d(x, FIRST_POOL)?;
            }
        }
        x = g.maxpool1d(x, LAST_POOL)?;
        let features = g.reshape(x, [batch, self.feature_len()])?;
        Ok(GeneratorForward { features, norm_nodes })
    }

    /// Eval-mode features for a `[B, W]` batch.
    pub fn features(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let input = g.constant(batch.clone());
        let out = self.forward(&mut g, &bound, input, &mut ForwardMode::Eval)?;
        Ok(g.value(out.features).clone())
    }

    /// Folds the batch statistics of a training forward pass into the running
    /// normalization buffers.
    pub fn absorb_batch_stats(&mut self, g: &Graph<T>, fwd: &GeneratorForward) {
        for &(l, node) in &fwd.norm_nodes {
            let Some((mean, var)) = g.batch_norm_stats(node) else { continue };
            for (name, fresh) in [("running_mean", mean), ("running_var", var)] {
                if let Some(buf) = self.params.get_mut(&format!("bn{l}.{name}")) {
                    for (b, &f) in buf.data_mut().iter_mut().zip(fresh) {
                        *b = T::of_f64((1.0 - BN_MOMENTUM) * b.as_f64() + BN_MOMENTUM * f);
                    }
                }
            }
        }
    }
}

pub(crate) fn check_same_layout<T: Real>(reference: &NetworkParams<T>, got: &NetworkParams<T>, what: &str) -> Result<()> {
    if reference.len() != got.len() {
        return Err(Error::shape(format!(
            "{what}: expected {} tensors, got {}",
            reference.len(),
            got.len()
        )));
    }
    for ((rn, rt), (gn, gt)) in reference.iter().zip(got.iter()) {
        if rn != gn || rt.shape() != gt.shape() {
            return Err(Error::shape(format!(
                "{what}: expected `{rn}` {:?}, got `{gn}` {:?}",
                rt.shape(),
                gt.shape()
            )));
        }
    }
    Ok(())
}
