use crate::autodiff::{Graph, Real, Tensor};
use crate::error::{Error, Result};
use crate::metrics::clamp_nonnegative;
use crate::models::{ForwardMode, Generator, GeneratorConfig, NetworkParams, Predictor};
use crate::signal::{midpoint_offset, window_tensor, NormalizationStats, Role, SignalSeries, WindowSet};
use crate::train::{Checkpoint, CheckpointMeta, CheckpointRole, ModelConfig};

/// A trained generator and predictor for one appliance, with the
/// normalization needed to map watts in and out.
#[derive(Clone, Debug, PartialEq)]
pub struct Disaggregator<T> {
    pub appliance: String,
    pub generator: Generator<T>,
    pub predictor: Predictor<T>,
    pub mains_stats: NormalizationStats,
    pub appliance_stats: NormalizationStats,
}

impl<T: Real> Disaggregator<T> {
    pub fn window(&self) -> usize {
        self.generator.config().window
    }

    /// Normalized midpoint predictions for a `[B, W]` batch.
    pub fn predict_batch(&self, windows: &Tensor<T>) -> Result<Tensor<T>> {
        predict_batch(&self.generator, &self.predictor, windows)
    }

    /// Normalized predictions for every window of `set`, in order.
    pub fn predict_set(&self, set: &WindowSet, batch: usize) -> Result<Vec<f64>> {
        predict_set(&self.generator, &self.predictor, set, batch)
    }

    /// Stride-1 midpoint predictions in watts for samples
    /// `W/2 ..= T - 1 - W/2` of `mains`; edge samples without a full window
    /// are absent.
    pub fn disaggregate(&self, mains: &SignalSeries, batch: usize, clamp: bool) -> Result<SignalSeries> {
        let w = self.window();
        let len = mains.len();
        if len < w {
            return Err(Error::TooShort { len, window: w });
        }
        let norm: Vec<f64> = mains.watts().iter().map(|&x| self.mains_stats.normalize_value(x)).collect();
        let n = len - w + 1;
        let mut out = Vec::with_capacity(n);
        let starts: Vec<usize> = (0..n).collect();
        for chunk in starts.chunks(batch.max(1)) {
            let p = self.predict_batch(&window_tensor::<T>(&norm, chunk, w)?)?;
            out.extend(p.data().iter().map(|v| self.appliance_stats.denormalize_value(v.as_f64())));
        }
        if clamp {
            clamp_nonnegative(&mut out);
        }
        let off = midpoint_offset(w);
        SignalSeries::new(
            mains.timestamps()[off..off + n].to_vec(),
            out,
            Role::appliance(&self.appliance),
        )
    }

    pub fn to_checkpoint(&self, mut meta: CheckpointMeta) -> Checkpoint<T> {
        let mut params = NetworkParams::new();
        for (prefix, net) in [("generator", self.generator.params()), ("predictor", self.predictor.params())] {
            for (name, t) in net.iter() {
                params.insert(format!("{prefix}.{name}"), t.clone()).expect("prefixed names are unique");
            }
        }
        meta.appliance = Some(self.appliance.clone());
        meta.window = Some(self.window());
        meta.mains_stats = Some(self.mains_stats);
        meta.appliance_stats = Some(self.appliance_stats);
        Checkpoint::new(CheckpointRole::Model, meta, params)
    }

    pub fn from_checkpoint(ckpt: Checkpoint<T>) -> Result<Self> {
        ckpt.expect_role(CheckpointRole::Model)?;
        let missing = |what: &str| Error::CorruptCheckpoint(format!("model checkpoint has no {what}"));
        let meta = &ckpt.meta;
        let appliance = meta.appliance.clone().ok_or_else(|| missing("appliance name"))?;
        let window = meta.window.ok_or_else(|| missing("window"))?;
        let mains_stats = meta.mains_stats.ok_or_else(|| missing("mains statistics"))?;
        let appliance_stats = meta.appliance_stats.ok_or_else(|| missing("appliance statistics"))?;
        let (mut g, mut c) = (NetworkParams::new(), NetworkParams::new());
        for (name, t) in ckpt.params.into_entries() {
            if let Some(n) = name.strip_prefix("generator.") {
                g.insert(n, t)?;
            } else if let Some(n) = name.strip_prefix("predictor.") {
                c.insert(n, t)?;
            } else {
                return Err(Error::CorruptCheckpoint(format!("unexpected tensor `{name}`")));
            }
        }
        let model = ModelConfig {
            window,
            batch_norm: g.get("bn1.gamma").is_some(),
            dropout: false,
        };
        let generator = Generator::from_params(GeneratorConfig { window, batch_norm: model.batch_norm }, g)?;
        let predictor = Predictor::from_params(model.predictor(), c)?;
        Ok(Self {
            appliance,
            generator,
            predictor,
            mains_stats,
            appliance_stats,
        })
    }
}

pub(crate) fn predict_batch<T: Real>(gen: &Generator<T>, pred: &Predictor<T>, windows: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let gb = gen.params().bind(&mut g, false);
    let cb = pred.params().bind(&mut g, false);
    let x = g.constant(windows.clone());
    let f = gen.forward(&mut g, &gb, x, &mut ForwardMode::Eval)?;
    let p = pred.forward(&mut g, &cb, f.features, &mut ForwardMode::Eval)?;
    Ok(g.value(p).clone())
}

pub(crate) fn predict_set<T: Real>(gen: &Generator<T>, pred: &Predictor<T>, set: &WindowSet, batch: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(set.len());
    for b in set.batches::<T>(batch) {
        let p = predict_batch(gen, pred, &b?.windows)?;
        out.extend(p.data().iter().map(|v| v.as_f64()));
    }
    Ok(out)
}
