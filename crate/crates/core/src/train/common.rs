use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Real};
use crate::error::{Error, Result};
use crate::metrics::mae;
use crate::models::{ForwardMode, Generator, Predictor};
use crate::signal::{WindowBatch, WindowSet};
use crate::synth::mix_seed;
use crate::train::model::predict_set;
use crate::train::{adam_step, AdamState, EpochLog, ModelConfig};

/// Called after every epoch with the log line and the current networks.
pub type Observer<'a, T> = dyn FnMut(&EpochLog, &Generator<T>, &Predictor<T>) -> Result<()> + 'a;

/// Sub-seed streams of a run.
pub(crate) mod stream {
    pub const GENERATOR: u64 = 1;
    pub const PREDICTOR: u64 = 2;
    pub const DROPOUT: u64 = 3;
    pub const DISCRIMINATOR: u64 = 100;
    pub const SHUFFLE: u64 = 10_000;
}

/// Fresh generator and predictor; the same seed always gives the same
/// networks, whichever appliance they are trained for.
pub fn init_models<T: Real>(model: &ModelConfig, seed: u64) -> Result<(Generator<T>, Predictor<T>)> {
    model.validate()?;
    Ok((
        Generator::new(model.generator(), mix_seed(seed, stream::GENERATOR))?,
        Predictor::new(model.predictor(), mix_seed(seed, stream::PREDICTOR))?,
    ))
}

pub(crate) fn dropout_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, stream::DROPOUT))
}

/// Window indices of one epoch in shuffled order.
pub(crate) fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, stream::SHUFFLE + epoch as u64)));
    idx
}

pub(crate) fn check_data(train: &WindowSet, model: &ModelConfig) -> Result<()> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if train.window() != model.window {
        return Err(Error::shape(format!(
            "windows are {} samples but the model expects {}",
            train.window(),
            model.window
        )));
    }
    Ok(())
}

/// Validation MAE in normalized units and in watts (predictions clamped at
/// zero), or `None` for an empty set.
pub(crate) fn validation_mae<T: Real>(
    gen: &Generator<T>,
    pred: &Predictor<T>,
    val: &WindowSet,
    batch: usize,
) -> Result<Option<(f64, f64)>> {
    if val.is_empty() {
        return Ok(None);
    }
    let p = predict_set(gen, pred, val, batch)?;
    let targets: Vec<f64> = (0..val.len()).map(|i| val.target(i)).collect();
    let stats = val.appliance_stats();
    let watts: Vec<f64> = p.iter().map(|&z| stats.denormalize_value(z).max(0.0)).collect();
    Ok(Some((mae(&p, &targets)?, mae(&watts, &val.raw_targets())?)))
}

/// Tracks the best validation score and a copy of the networks that
/// achieved it.
pub(crate) struct BestKeeper<T> {
    pub best: Option<(f64, usize, Generator<T>, Predictor<T>)>,
    since: usize,
    patience: usize,
}

impl<T: Real> BestKeeper<T> {
    pub fn new(patience: usize) -> Self {
        Self {
            best: None,
            since: 0,
            patience,
        }
    }

    /// Returns whether this epoch is the new best.
    pub fn offer(&mut self, score: Option<f64>, epoch: usize, gen: &Generator<T>, pred: &Predictor<T>) -> bool {
        let better = match (&self.best, score) {
            (_, None) => true,
            (None, Some(_)) => true,
            (Some((b, ..)), Some(s)) => s < *b,
        };
        if better {
            self.best = Some((score.unwrap_or(f64::INFINITY), epoch, gen.clone(), pred.clone()));
            self.since = 0;
        } else {
            self.since += 1;
        }
        better
    }

    pub fn exhausted(&self) -> bool {
        self.since >= self.patience
    }
}

/// One prediction-loss step on `(gen, pred)` with the loss scaled by
/// `scale`. Returns the unscaled loss.
#[allow(clippy::too_many_arguments)]
pub(crate) fn supervised_step<T: Real>(
    gen: &mut Generator<T>,
    pred: &mut Predictor<T>,
    gs: &mut AdamState<T>,
    cs: &mut AdamState<T>,
    batch: &WindowBatch<T>,
    scale: f64,
    rng: &mut ChaCha8Rng,
    epoch: usize,
) -> Result<f64> {
    let mut g = Graph::new();
    let gb = gen.params().bind(&mut g, true);
    let cb = pred.params().bind(&mut g, true);
    let x = g.constant(batch.windows.clone());
    let y = g.constant(batch.targets.clone());
    let mut mode = ForwardMode::Train { rng };
    let fwd = gen.forward(&mut g, &gb, x, &mut mode)?;
    let p = pred.forward(&mut g, &cb, fwd.features, &mut mode)?;
    let loss = g.mse(p, y)?;
    let value = g.value(loss).item().as_f64();
    if !value.is_finite() {
        return Err(Error::Diverged {
            epoch,
            what: "prediction loss".into(),
        });
    }
    let root = if scale == 1.0 { loss } else { g.scale(loss, scale) };
    let mut grads = g.backward(root)?;
    gen.absorb_batch_stats(&g, &fwd);
    adam_step(gen.params_mut(), &gb.gradients(&mut grads), gs)?;
    adam_step(pred.params_mut(), &cb.gradients(&mut grads), cs)?;
    Ok(value)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use crate::signal::{NormalizationStats, WindowSet};
    use crate::synth::{simulate_household, ApplianceKind, ApplianceModel, NoiseModel};

    pub const W: usize = 27;

    /// Two aligned sets of a toy household: the first appliance is the
    /// target, the others are background.
    pub fn household_sets(samples: usize, stride: usize, seed: u64, target: usize) -> (WindowSet, WindowSet) {
        let models = vec![
            ApplianceModel::new(
                "heater",
                ApplianceKind::TwoState {
                    on_power: 800.0,
                    mean_on: 40.0,
                    mean_off: 60.0,
                },
            ),
            ApplianceModel::new(
                "pump",
                ApplianceKind::Cyclic {
                    on_power: 150.0,
                    on_duration: 30,
                    off_duration: 50,
                    jitter: 0.2,
                },
            ),
            ApplianceModel::new(
                "kettle",
                ApplianceKind::Spike {
                    on_power: 2000.0,
                    duration: 8,
                    mean_off: 200.0,
                },
            ),
        ];
        let h = simulate_household(&models, &NoiseModel::gaussian(10.0), samples, seed).unwrap();
        let mains_stats = NormalizationStats::new(600.0, 700.0).unwrap();
        let app_stats = NormalizationStats::new(300.0, 500.0).unwrap();
        let cut = samples * 4 / 5;
        let split = |lo: usize, hi: usize| {
            let m = h.mains.slice(lo..hi).unwrap();
            let a = h.appliances[target].slice(lo..hi).unwrap();
            let mut set = WindowSet::new(W, stride, mains_stats, app_stats).unwrap();
            set.add(&m, &a).unwrap();
            set
        };
        (split(0, cut), split(cut, samples))
    }
}
