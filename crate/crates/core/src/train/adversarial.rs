use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId, Real, Tensor};
use crate::error::{Error, Result};
use crate::models::{Discriminator, ForwardMode, Generator, Predictor};
use crate::signal::{WindowBatch, WindowSet};
use crate::synth::mix_seed;
use crate::train::common::{
    check_data, dropout_rng, epoch_order, init_models, stream, supervised_step, validation_mae, BestKeeper, Observer,
};
use crate::train::{adam_step, AdamState, EpochLog, ModelConfig, TrainConfig};

/// Windows used to measure discriminator outputs after training.
const CONFUSION_WINDOWS: usize = 2048;

#[derive(Clone, Debug)]
pub struct AdversarialOutcome<T> {
    pub generator: Generator<T>,
    pub predictor: Predictor<T>,
    /// Discriminators as they were at the kept epoch, one per extractor;
    /// empty for the ablated run.
    pub discriminators: Vec<Discriminator<T>>,
    pub trace: Vec<EpochLog>,
    pub best_epoch: usize,
    /// Mean output of each kept `D_j` on the kept generator's validation
    /// features.
    pub d_shared: Vec<f64>,
    /// Mean `D_j` output on `G_j`'s validation features.
    pub d_specific: Vec<f64>,
}

/// Mean of `softplus(sign_i * z_i)`: with `sign = -1` on shared rows and
/// `+1` on specific rows this is `-mean log D(shared) - mean log(1 - D(specific))`
/// up to the factor 2 of the concatenation.
fn discriminator_step<T: Real>(
    d: &mut Discriminator<T>,
    st: &mut AdamState<T>,
    shared: &Tensor<T>,
    specific: &Tensor<T>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let (b, f) = (shared.shape()[0], shared.shape()[1]);
    let mut both = Vec::with_capacity(2 * b * f);
    both.extend_from_slice(shared.data());
    both.extend_from_slice(specific.data());
    let signs: Vec<T> = (0..2 * b).map(|i| T::of_f64(if i < b { -1.0 } else { 1.0 })).collect();

    let mut g = Graph::new();
    let db = d.params().bind(&mut g, true);
    let x = g.constant(Tensor::from_vec([2 * b, f], both)?);
    let s = g.constant(Tensor::from_vec([2 * b], signs)?);
    let z = d.logits(&mut g, &db, x, &mut ForwardMode::Train { rng })?;
    let sz = g.mul(z, s)?;
    let sp = g.softplus(sz);
    let m = g.mean(sp);
    let loss = g.scale(m, 2.0);
    let value = g.value(loss).item().as_f64();
    let mut grads = g.backward(loss)?;
    adam_step(d.params_mut(), &db.gradients(&mut grads), st)?;
    Ok(value)
}

/// Generator adversarial term for one discriminator on feature node `f`.
/// Literal form: `mean log D(f) = -mean softplus(-z)`; non-saturating:
/// `-mean log(1 - D(f)) = mean softplus(z)`.
fn generator_term<T: Real>(
    g: &mut Graph<T>,
    d: &Discriminator<T>,
    f: NodeId,
    non_saturating: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(NodeId, f64)> {
    let db = d.params().bind(g, false);
    let z = d.logits(g, &db, f, &mut ForwardMode::Train { rng })?;
    let mean_prob = mean_sigmoid(g.value(z).data());
    let term = if non_saturating {
        let sp = g.softplus(z);
        g.mean(sp)
    } else {
        let nz = g.scale(z, -1.0);
        let sp = g.softplus(nz);
        let m = g.mean(sp);
        g.scale(m, -1.0)
    };
    Ok((term, mean_prob))
}

fn mean_of<T: Real>(p: &[T]) -> f64 {
    p.iter().map(|v| v.as_f64()).sum::<f64>() / p.len() as f64
}

fn mean_sigmoid<T: Real>(z: &[T]) -> f64 {
    z.iter().map(|v| 1.0 / (1.0 + (-v.as_f64()).exp())).sum::<f64>() / z.len() as f64
}

struct StepStats {
    pred_loss: f64,
    adv: f64,
    d_loss: Vec<f64>,
    d_shared: Vec<f64>,
    d_specific: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn adversarial_step<T: Real>(
    gen: &mut Generator<T>,
    pred: &mut Predictor<T>,
    gs: &mut AdamState<T>,
    cs: &mut AdamState<T>,
    extractors: &[Generator<T>],
    discs: &mut [Discriminator<T>],
    ds: &mut [AdamState<T>],
    batch: &WindowBatch<T>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    epoch: usize,
) -> Result<StepStats> {
    let mut g = Graph::new();
    let gb = gen.params().bind(&mut g, true);
    let cb = pred.params().bind(&mut g, true);
    let x = g.constant(batch.windows.clone());
    let y = g.constant(batch.targets.clone());
    let fwd = gen.forward(&mut g, &gb, x, &mut ForwardMode::Train { rng: &mut *rng })?;
    let p = pred.forward(&mut g, &cb, fwd.features, &mut ForwardMode::Train { rng: &mut *rng })?;
    let lpred = g.mse(p, y)?;
    let pred_loss = g.value(lpred).item().as_f64();
    if !pred_loss.is_finite() {
        return Err(Error::Diverged {
            epoch,
            what: "prediction loss".into(),
        });
    }
    let shared = g.value(fwd.features).clone();

    let mut root = g.scale(lpred, cfg.lambda);
    let mut stats = StepStats {
        pred_loss,
        adv: 0.0,
        d_loss: Vec::with_capacity(discs.len()),
        d_shared: Vec::with_capacity(discs.len()),
        d_specific: Vec::with_capacity(discs.len()),
    };
    for ((gj, dj), sj) in extractors.iter().zip(discs.iter_mut()).zip(ds.iter_mut()) {
        let specific = gj.features(&batch.windows)?;
        let dl = discriminator_step(dj, sj, &shared, &specific, &mut *rng)?;
        if !dl.is_finite() {
            return Err(Error::Diverged {
                epoch,
                what: "discriminator loss".into(),
            });
        }
        stats.d_loss.push(dl);
        stats.d_specific.push(mean_of(dj.probabilities(&specific)?.data()));
        let (term, prob) = generator_term(&mut g, dj, fwd.features, cfg.non_saturating, &mut *rng)?;
        stats.adv += g.value(term).item().as_f64();
        stats.d_shared.push(prob);
        root = g.add(root, term)?;
    }
    let mut grads = g.backward(root)?;
    gen.absorb_batch_stats(&g, &fwd);
    adam_step(gen.params_mut(), &gb.gradients(&mut grads), gs)?;
    adam_step(pred.params_mut(), &cb.gradients(&mut grads), cs)?;
    Ok(stats)
}

/// Mean discriminator outputs on shared and specific features over (a
/// strided subset of) `val`.
pub fn discriminator_confusion<T: Real>(
    gen: &Generator<T>,
    extractors: &[Generator<T>],
    discs: &[Discriminator<T>],
    val: &WindowSet,
    batch: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = extractors.len();
    if val.is_empty() || n == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let step = val.len().div_ceil(CONFUSION_WINDOWS).max(1);
    let idx: Vec<usize> = (0..val.len()).step_by(step).collect();
    let (mut sh, mut sp) = (vec![0.0; n], vec![0.0; n]);
    for chunk in idx.chunks(batch.max(1)) {
        let b = val.batch::<T>(chunk)?;
        let f = gen.features(&b.windows)?;
        for j in 0..n {
            let fj = extractors[j].features(&b.windows)?;
            sh[j] += discs[j].probabilities(&f)?.data().iter().map(|v| v.as_f64()).sum::<f64>();
            sp[j] += discs[j].probabilities(&fj)?.data().iter().map(|v| v.as_f64()).sum::<f64>();
        }
    }
    let total = idx.len() as f64;
    Ok((sh.iter().map(|s| s / total).collect(), sp.iter().map(|s| s / total).collect()))
}

/// Multi-adversarial training of a shared generator and predictor for one
/// target appliance against frozen per-appliance extractors.
///
/// Per batch: every `D_j` in turn takes one Adam step to increase
/// `log D_j(G(y)) + log(1 - D_j(G_j(y)))`; the generator then descends
/// `Σ_j log D_j(G(y)) + λ L_pred` (evaluated with the updated `D_j`) and the
/// predictor descends `λ L_pred`. With `cfg.adversarial` off only the
/// `λ L_pred` updates run.
///
/// `init` defaults to the networks pretraining starts from under the same
/// seed. The returned networks are those with the best validation MAE.
#[allow(clippy::too_many_arguments)]
pub fn train_adversarial<T: Real>(
    appliance: &str,
    train: &WindowSet,
    val: &WindowSet,
    extractors: &[Generator<T>],
    init: Option<(Generator<T>, Predictor<T>)>,
    model: &ModelConfig,
    cfg: &TrainConfig,
    observer: &mut Observer<'_, T>,
) -> Result<AdversarialOutcome<T>> {
    cfg.validate()?;
    check_data(train, model)?;
    if cfg.adversarial && extractors.is_empty() {
        return Err(Error::config("adversarial training needs at least one pretrained extractor"));
    }
    let (mut gen, mut pred) = match init {
        Some(pair) => pair,
        None => init_models::<T>(model, cfg.seed)?,
    };
    for (j, gj) in extractors.iter().enumerate() {
        if gj.config() != gen.config() {
            return Err(Error::shape(format!(
                "extractor {} has config {:?}, shared generator {:?}",
                j + 1,
                gj.config(),
                gen.config()
            )));
        }
    }
    if gen.config() != &model.generator() {
        return Err(Error::shape("initial generator does not match the model config"));
    }
    let n = if cfg.adversarial { extractors.len() } else { 0 };
    let mut discs = (0..n)
        .map(|j| Discriminator::new(model.discriminator(), mix_seed(cfg.seed, stream::DISCRIMINATOR + j as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mut ds: Vec<AdamState<T>> = discs.iter().map(|d| AdamState::new(d.params(), cfg.adam)).collect();
    let mut gs = AdamState::new(gen.params(), cfg.adam);
    let mut cs = AdamState::new(pred.params(), cfg.adam);
    let mut rng = dropout_rng(cfg.seed);
    let mut keeper = BestKeeper::new(cfg.patience);
    let mut best_discs = discs.clone();
    let mut trace = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let mut sums = (0.0, 0.0, vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let batch = train.batch::<T>(idx)?;
            if n == 0 {
                sums.0 += supervised_step(&mut gen, &mut pred, &mut gs, &mut cs, &batch, cfg.lambda, &mut rng, epoch)?;
            } else {
                let s = adversarial_step(
                    &mut gen, &mut pred, &mut gs, &mut cs, extractors, &mut discs, &mut ds, &batch, cfg, &mut rng, epoch,
                )?;
                sums.0 += s.pred_loss;
                sums.1 += s.adv;
                for j in 0..n {
                    sums.2[j] += s.d_loss[j];
                    sums.3[j] += s.d_shared[j];
                    sums.4[j] += s.d_specific[j];
                }
            }
            batches += 1;
        }
        let k = batches as f64;
        let avg = |v: &[f64]| v.iter().map(|x| x / k).collect::<Vec<_>>();
        let val_mae = validation_mae(&gen, &pred, val, cfg.eval_batch_size)?;
        let best = keeper.offer(val_mae.map(|v| v.1), epoch, &gen, &pred);
        if best {
            best_discs.clone_from(&discs);
        }
        let log = EpochLog {
            stage: if n > 0 { "adversarial" } else { "ablation" }.into(),
            appliance: appliance.into(),
            epoch,
            pred_loss: sums.0 / k,
            adv_loss: (n > 0).then(|| sums.1 / k),
            d_loss: avg(&sums.2),
            d_shared: avg(&sums.3),
            d_specific: avg(&sums.4),
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
    let (d_shared, d_specific) = if n > 0 {
        discriminator_confusion(&generator, extractors, &best_discs, val, cfg.eval_batch_size)?
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(AdversarialOutcome {
        generator,
        predictor,
        discriminators: best_discs,
        trace,
        best_epoch,
        d_shared,
        d_specific,
    })
}
