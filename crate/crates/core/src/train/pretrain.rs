use crate::autodiff::Real;
use crate::error::Result;
use crate::models::{Generator, Predictor};
use crate::signal::WindowSet;
use crate::train::common::{
    check_data, dropout_rng, epoch_order, init_models, supervised_step, validation_mae, BestKeeper, Observer,
};
use crate::train::{AdamState, EpochLog, ModelConfig, TrainConfig};

/// Result of supervised training for one appliance.
#[derive(Clone, Debug)]
pub struct Pretrained<T> {
    pub generator: Generator<T>,
    pub predictor: Predictor<T>,
    pub trace: Vec<EpochLog>,
    /// Epoch (1-based) whose networks were kept.
    pub best_epoch: usize,
}

/// Fits `C(G(window))` to the normalized midpoint target by mean squared
/// error, keeping the networks with the lowest validation MAE and stopping
/// after `patience` epochs without improvement.
pub fn pretrain_appliance<T: Real>(
    appliance: &str,
    train: &WindowSet,
    val: &WindowSet,
    model: &ModelConfig,
    cfg: &TrainConfig,
    observer: &mut Observer<'_, T>,
) -> Result<Pretrained<T>> {
    cfg.validate()?;
    check_data(train, model)?;
    let (mut gen, mut pred) = init_models::<T>(model, cfg.seed)?;
    let mut gs = AdamState::new(gen.params(), cfg.adam);
    let mut cs = AdamState::new(pred.params(), cfg.adam);
    let mut rng = dropout_rng(cfg.seed);
    let mut keeper = BestKeeper::new(cfg.patience);
    let mut trace = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let mut total = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            let batch = train.batch::<T>(idx)?;
            total += supervised_step(
                &mut gen, &mut pred, &mut gs, &mut cs, &batch, 1.0, &mut rng, epoch,
            )?;
            batches += 1;
        }
        let val_mae = validation_mae(&gen, &pred, val, cfg.eval_batch_size)?;
        let best = keeper.offer(val_mae.map(|v| v.1), epoch, &gen, &pred);
        let log = EpochLog {
            stage: "pretrain".into(),
            appliance: appliance.into(),
            epoch,
            pred_loss: total / batches as f64,
            adv_loss: None,
            d_loss: Vec::new(),
            d_shared: Vec::new(),
            d_specific: Vec::new(),
            val_mae: val_mae.map(|v| v.0),
            val_mae_watts: val_mae.map(|v| v.1),
            best,
        };
        observer(&log, &gen, &pred)?;
        trace.push(log);
        if keeper.exhausted() {
            break;
        }
    }
    let (_, best_epoch, generator, predictor) = keeper.best.expect("at least one epoch ran");
    Ok(Pretrained {
        generator,
        predictor,
        trace,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::signal::{NormalizationStats, Role, SignalSeries};
    use crate::train::common::fixtures::{household_sets, W};

    fn quiet() -> impl FnMut(&EpochLog, &Generator<f32>, &Predictor<f32>) -> Result<()> {
        |_, _, _| Ok(())
    }

    fn model() -> ModelConfig {
        ModelConfig {
            window: W,
            ..ModelConfig::default()
        }
    }

    fn constant_set(samples: usize) -> WindowSet {
        let mains: Vec<f64> = (0..samples).map(|i| 200.0 + 150.0 * ((i / 13) % 3) as f64).collect();
        let m = SignalSeries::regular(0, 6, mains, Role::Mains).unwrap();
        let a = SignalSeries::regular(0, 6, vec![0.0; samples], Role::appliance("idle")).unwrap();
        let mut set = WindowSet::new(
            W,
            1,
            NormalizationStats::new(522.0, 814.0).unwrap(),
            NormalizationStats::new(700.0, 1000.0).unwrap(),
        )
        .unwrap();
        set.add(&m, &a).unwrap();
        set
    }

    #[test]
    fn constant_target_is_learned_quickly() {
        let train = constant_set(3000);
        let val = constant_set(600);
        let cfg = TrainConfig {
            max_epochs: 2,
            seed: 5,
            ..TrainConfig::default()
        };
        let out = pretrain_appliance::<f32>("idle", &train, &val, &model(), &cfg, &mut quiet()).unwrap();
        let mae = out.trace.iter().filter_map(|l| l.val_mae).fold(f64::INFINITY, f64::min);
        assert!(mae < 0.01, "validation MAE {mae}");
    }

    #[test]
    fn beats_mean_predictor() {
        let (train, val) = household_sets(12_000, 1, 11, 0);
        let cfg = TrainConfig {
            max_epochs: 3,
            seed: 3,
            ..TrainConfig::default()
        };
        let out = pretrain_appliance::<f32>("heater", &train, &val, &model(), &cfg, &mut quiet()).unwrap();
        let truth = val.raw_targets();
        let mean = train.raw_targets().iter().sum::<f64>() / train.len() as f64;
        let baseline = truth.iter().map(|t| (t - mean).abs()).sum::<f64>() / truth.len() as f64;
        let best = out.trace[out.best_epoch - 1].val_mae_watts.unwrap();
        assert!(best <= 0.5 * baseline, "MAE {best} vs mean predictor {baseline}");
    }

    #[test]
    fn same_seed_same_trace() {
        let (train, val) = household_sets(3000, 2, 4, 0);
        let cfg = TrainConfig {
            max_epochs: 2,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = pretrain_appliance::<f32>("heater", &train, &val, &model(), &cfg, &mut quiet()).unwrap();
        let b = pretrain_appliance::<f32>("heater", &train, &val, &model(), &cfg, &mut quiet()).unwrap();
        assert_eq!(a.trace, b.trace);
        assert!(a.generator.params().bit_eq(b.generator.params()));
        assert!(a.predictor.params().bit_eq(b.predictor.params()));
    }

    #[test]
    fn empty_and_mismatched_data() {
        let (_, val) = household_sets(3000, 2, 4, 0);
        let empty = WindowSet::new(W, 1, *val.mains_stats(), *val.appliance_stats()).unwrap();
        let cfg = TrainConfig::default();
        let err = pretrain_appliance::<f32>("x", &empty, &val, &model(), &cfg, &mut quiet()).unwrap_err();
        assert!(matches!(err, Error::EmptyDataset));
        let wide = ModelConfig {
            window: 31,
            ..ModelConfig::default()
        };
        let err = pretrain_appliance::<f32>("x", &val, &val, &wide, &cfg, &mut quiet()).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn observer_errors_abort() {
        let (train, val) = household_sets(2000, 4, 4, 0);
        let mut calls = 0;
        let mut obs = |_: &EpochLog, _: &Generator<f32>, _: &Predictor<f32>| {
            calls += 1;
            Err(Error::Config("stop".into()))
        };
        let r = pretrain_appliance::<f32>("heater", &train, &val, &model(), &TrainConfig::default(), &mut obs);
        assert!(r.is_err());
        assert_eq!(calls, 1);
    }
}
