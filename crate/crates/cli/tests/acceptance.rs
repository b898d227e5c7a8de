//! End-to-end acceptance checks. Each test prints one `criterion N PASS|FAIL`
//! line to stderr before asserting.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use aed::autodiff::{Graph, NodeId, NormStats, Tensor};
use aed::metrics::{mae, sae, EvalReport};
use aed::models::{
    feature_len, Bound, Discriminator, ForwardMode, Generator, GeneratorConfig, MlpConfig, NetworkParams, Predictor,
};
use aed::signal::{denormalize, normalize, NormalizationStats, Split, BUILTIN_STATS};
use aed::synth::{simulate_household, ApplianceKind, ApplianceModel, NoiseModel, Phase};
use aed::train::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, CheckpointRole};
use aed_cli::pipeline::{self, covered_truth, disaggregate_series, Dataset, Logger};
use aed_cli::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn verdict(n: u8, name: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(io::stderr(), "criterion {n:>2} {status} {name}: {detail}");
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

// 1. gradients

const EPS: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const GRAD_SEEDS: u64 = 20;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero with random sign, so ReLU probes stay on
/// one branch.
fn signed(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..2.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape.to_vec(), v).unwrap()
}

type Builder<'a> = dyn Fn(&mut Graph<f64>, &[NodeId]) -> aed::Result<NodeId> + 'a;
type Inputs = Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>>;
type Case = (&'static str, Inputs, Box<Builder<'static>>);

fn evaluate(inputs: &[Tensor<f64>], build: &Builder<'_>) -> f64 {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let root = build(&mut g, &ids).unwrap();
    g.value(root).item()
}

#[derive(Default)]
struct GradStats {
    worst: f64,
    checked: usize,
    skipped: usize,
}

/// Central differences against `Graph::backward` on up to `coords` sampled
/// coordinates per input. A coordinate whose forward and backward one-sided
/// slopes disagree sits on a branch point and is counted as skipped.
fn oracle(inputs: &[Tensor<f64>], build: &Builder<'_>, coords: usize, rng: &mut ChaCha8Rng, stats: &mut GradStats) {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = build(&mut g, &ids).unwrap();
    let grads = g.backward(root).unwrap();
    let f0 = g.value(root).item();
    let mut work = inputs.to_vec();
    for (i, id) in ids.iter().enumerate() {
        let analytic = grads.get(*id).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        let n = inputs[i].numel();
        let picks: Vec<usize> = if n <= coords { (0..n).collect() } else { (0..coords).map(|_| rng.random_range(0..n)).collect() };
        for c in picks {
            let x = inputs[i].data()[c];
            work[i].data_mut()[c] = x + EPS;
            let up = evaluate(&work, build);
            work[i].data_mut()[c] = x - EPS;
            let down = evaluate(&work, build);
            work[i].data_mut()[c] = x;
            let (fwd, bwd) = ((up - f0) / EPS, (f0 - down) / EPS);
            if (fwd - bwd).abs() > 1e-3 * fwd.abs().max(bwd.abs()).max(1e-3) {
                stats.skipped += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * EPS);
            let denom = analytic[c].abs().max(numeric.abs()).max(1e-6);
            stats.worst = stats.worst.max((analytic[c] - numeric).abs() / denom);
            stats.checked += 1;
        }
    }
}

/// Sums the output against a fixed random weighting so every output
/// coordinate reaches the scalar root.
fn weighted(g: &mut Graph<f64>, out: NodeId, seed: u64) -> aed::Result<NodeId> {
    let shape = g.value(out).shape().to_vec();
    let w = g.constant(uniform(&mut ChaCha8Rng::seed_from_u64(seed), &shape, -1.0, 1.0));
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

fn primitive_cases() -> Vec<Case> {
    fn one(shape: &'static [usize]) -> Inputs {
        Box::new(move |r| vec![signed(r, shape)])
    }
    fn two(a: &'static [usize], b: &'static [usize]) -> Inputs {
        Box::new(move |r| vec![signed(r, a), signed(r, b)])
    }
    vec![
        ("relu", one(&[4, 5]), Box::new(|g, x| Ok(g.relu(x[0])))),
        ("softplus", one(&[4, 5]), Box::new(|g, x| Ok(g.softplus(x[0])))),
        ("sigmoid", one(&[4, 5]), Box::new(|g, x| Ok(g.sigmoid(x[0])))),
        ("log", Box::new(|r| vec![uniform(r, &[4, 5], 0.3, 3.0)]), Box::new(|g, x| g.log(x[0]))),
        ("scale", one(&[4, 5]), Box::new(|g, x| Ok(g.scale(x[0], 1.7)))),
        ("add", two(&[4, 5], &[4, 5]), Box::new(|g, x| g.add(x[0], x[1]))),
        ("sub", two(&[4, 5], &[1]), Box::new(|g, x| g.sub(x[0], x[1]))),
        ("mul", two(&[4, 5], &[4, 5]), Box::new(|g, x| g.mul(x[0], x[1]))),
        ("sum", one(&[4, 5]), Box::new(|g, x| Ok(g.sum(x[0])))),
        ("mean", one(&[4, 5]), Box::new(|g, x| Ok(g.mean(x[0])))),
        ("reshape", one(&[4, 5]), Box::new(|g, x| g.reshape(x[0], [5, 4]))),
        ("mse", two(&[7], &[7]), Box::new(|g, x| g.mse(x[0], x[1]))),
        ("dense", Box::new(|r| vec![signed(r, &[3, 6]), signed(r, &[4, 6]), signed(r, &[4])]), Box::new(|g, x| g.dense(x[0], x[1], x[2]))),
        (
            "conv1d",
            Box::new(|r| vec![signed(r, &[2, 2, 11]), signed(r, &[3, 2, 5]), signed(r, &[3])]),
            Box::new(|g, x| g.conv1d(x[0], x[1], x[2], 2)),
        ),
        ("maxpool1d", one(&[2, 2, 12]), Box::new(|g, x| g.maxpool1d(x[0], 3))),
        (
            "batch_norm",
            Box::new(|r| vec![signed(r, &[4, 2, 5]), uniform(r, &[2], 0.5, 1.5), signed(r, &[2])]),
            Box::new(|g, x| g.batch_norm(x[0], x[1], x[2], NormStats::Batch)),
        ),
        (
            "dropout",
            one(&[4, 5]),
            Box::new(|g, x| g.dropout(x[0], 0.1, &mut ChaCha8Rng::seed_from_u64(11))),
        ),
    ]
}

fn composed_case(seed: u64, discriminator: bool, rng: &mut ChaCha8Rng, stats: &mut GradStats) {
    let w = 27;
    let gen = Generator::<f64>::new(GeneratorConfig::new(w), seed).unwrap();
    let f = feature_len(w);
    let head: NetworkParams<f64> = if discriminator {
        Discriminator::<f64>::new(MlpConfig::discriminator(f), seed + 1).unwrap().params().clone()
    } else {
        Predictor::<f64>::new(MlpConfig::predictor(f), seed + 1).unwrap().params().clone()
    };
    let (gp, hp) = (gen.params().clone(), head.clone());
    let mut inputs: Vec<Tensor<f64>> = gp.iter().chain(hp.iter()).map(|(_, t)| t.clone()).collect();
    inputs.push(signed(rng, &[2, w]));
    let target = uniform(rng, &[2], -1.0, 1.0);
    let ng = gp.len();
    let build = move |g: &mut Graph<f64>, ids: &[NodeId]| -> aed::Result<NodeId> {
        let gb = Bound::from_ids(&gp, &ids[..ng])?;
        let hb = Bound::from_ids(&hp, &ids[ng..ids.len() - 1])?;
        let feats = gen.forward(g, &gb, ids[ids.len() - 1], &mut ForwardMode::Eval)?.features;
        if discriminator {
            let d = Discriminator::<f64>::from_params(MlpConfig::discriminator(f), hp.clone())?;
            let p = d.forward(g, &hb, feats, &mut ForwardMode::Eval)?;
            let l = g.log(p)?;
            Ok(g.mean(l))
        } else {
            let c = Predictor::<f64>::from_params(MlpConfig::predictor(f), hp.clone())?;
            let y = g.constant(target.clone());
            let p = c.forward(g, &hb, feats, &mut ForwardMode::Eval)?;
            g.mse(p, y)
        }
    };
    oracle(&inputs, &build, 4, rng, stats);
}

#[test]
fn criterion_01_gradient_correctness() {
    let start = Instant::now();
    let mut stats = GradStats::default();
    for seed in 0..GRAD_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, make, build) in primitive_cases() {
            let inputs = make(&mut rng);
            let b: &Builder<'_> = &|g, ids| {
                let out = build(g, ids)?;
                weighted(g, out, seed)
            };
            oracle(&inputs, b, 16, &mut rng, &mut stats);
        }
        composed_case(seed, false, &mut rng, &mut stats);
        composed_case(seed, true, &mut rng, &mut stats);
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = stats.worst < GRAD_TOL && secs < 60.0 && stats.skipped * 20 <= stats.checked;
    verdict(
        1,
        "gradient correctness",
        pass,
        &format!(
            "max relative error {:.2e} over {} coordinates ({} on branch points skipped), {secs:.1} s",
            stats.worst, stats.checked, stats.skipped
        ),
    );
}

// 2. architecture

#[test]
fn criterion_02_architecture_arithmetic() {
    let start = Instant::now();
    let mut bad = Vec::new();
    for w in (27..=1023).step_by(2) {
        let expect = 50 * ((w / 3) / 2);
        let g = Generator::<f32>::new(GeneratorConfig::new(w), 0).unwrap();
        let out = g.features(&Tensor::zeros([1, w])).unwrap();
        if feature_len(w) != expect || out.shape() != [1, expect] {
            bad.push(w);
        }
    }
    let at599 = feature_len(599);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        2,
        "architecture arithmetic",
        bad.is_empty() && at599 == 4950 && secs < 5.0,
        &format!("{} windows wrong {bad:?}, W=599 gives {at599}, {secs:.2} s", bad.len()),
    );
}

// 3. normalization

#[test]
fn criterion_03_normalization_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..1_000_000).map(|_| rng.random_range(-5000.0..5000.0)).collect();
    let mut worst = 0.0f64;
    for (_, mean, std) in BUILTIN_STATS {
        let s = NormalizationStats::new(mean, std).unwrap();
        let back = denormalize(&normalize(&x, &s).unwrap(), &s).unwrap();
        worst = x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    verdict(
        3,
        "normalization round trip",
        worst <= 1e-9,
        &format!("max error {worst:.2e} over {} stats rows", BUILTIN_STATS.len()),
    );
}

// 4. metrics

fn loop_mae(p: &[f64], t: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        s += (p[i] - t[i]).abs();
    }
    s / p.len() as f64
}

fn loop_sae(p: &[f64], t: &[f64]) -> f64 {
    let mut a = 0.0;
    let mut b = 0.0;
    for i in 0..p.len() {
        a += p[i];
        b += t[i];
    }
    (a - b).abs() / b
}

#[test]
fn criterion_04_metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut dm, mut ds) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = rng.random_range(1..500);
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3000.0)).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3000.0)).collect();
        if t.iter().sum::<f64>() == 0.0 {
            continue;
        }
        dm = dm.max((mae(&p, &t).unwrap() - loop_mae(&p, &t)).abs());
        ds = ds.max((sae(&p, &t).unwrap() - loop_sae(&p, &t)).abs());
    }
    let x: Vec<f64> = (0..1000).map(|_| rng.random_range(1.0..3000.0)).collect();
    let scaled: Vec<f64> = x.iter().map(|v| 1.1 * v).collect();
    let s = sae(&scaled, &x).unwrap();
    verdict(
        4,
        "metric oracles",
        dm <= 1e-12 && ds <= 1e-12 && (s - 0.1).abs() <= 1e-9,
        &format!("mae diff {dm:.1e}, sae diff {ds:.1e}, sae(1.1x, x) = {s:.12}"),
    );
}

// 5. simulator

fn random_model(rng: &mut ChaCha8Rng, i: usize) -> ApplianceModel {
    let name = format!("a{i}");
    let kind = match rng.random_range(0..4) {
        0 => ApplianceKind::TwoState {
            on_power: rng.random_range(10.0..3000.0),
            mean_on: rng.random_range(1.0..300.0),
            mean_off: rng.random_range(1.0..600.0),
        },
        1 => ApplianceKind::Cyclic {
            on_power: rng.random_range(10.0..500.0),
            on_duration: rng.random_range(1..200),
            off_duration: rng.random_range(1..400),
            jitter: rng.random_range(0.0..0.5),
        },
        2 => ApplianceKind::Spike {
            on_power: rng.random_range(500.0..3000.0),
            duration: rng.random_range(1..60),
            mean_off: rng.random_range(10.0..2000.0),
        },
        _ => ApplianceKind::MultiPhase {
            phases: (0..rng.random_range(1..5))
                .map(|_| Phase {
                    power: rng.random_range(10.0..2500.0),
                    duration: rng.random_range(1..100),
                })
                .collect(),
            mean_off: rng.random_range(10.0..2000.0),
        },
    };
    let mut m = ApplianceModel::new(name, kind);
    if rng.random::<bool>() {
        m.standby_power = rng.random_range(0.0..10.0);
    }
    m
}

#[test]
fn criterion_05_simulator_conservation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut nonzero = 0usize;
    for c in 0..100 {
        let models: Vec<ApplianceModel> = (0..rng.random_range(1..6)).map(|i| random_model(&mut rng, i)).collect();
        let h = simulate_household(&models, &NoiseModel::gaussian(0.0), 3000, c).unwrap();
        for t in 0..h.mains.len() {
            let sum: f64 = h.appliances.iter().map(|a| a.watts()[t]).sum();
            if h.mains.watts()[t] - sum != 0.0 {
                nonzero += 1;
            }
        }
    }
    // an always-on base load keeps the mains clear of the zero floor
    let mut base = ApplianceModel::new(
        "base",
        ApplianceKind::Cyclic {
            on_power: 400.0,
            on_duration: 100,
            off_duration: 200,
            jitter: 0.1,
        },
    );
    base.standby_power = 2500.0;
    let h = simulate_household(&[base], &NoiseModel::gaussian(200.0), 100_000, 55).unwrap();
    let r: Vec<f64> = h.mains.watts().iter().zip(h.appliances[0].watts()).map(|(m, a)| m - a).collect();
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    let var = r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (r.len() - 1) as f64;
    let rel = var / 40_000.0 - 1.0;
    verdict(
        5,
        "simulator conservation",
        nonzero == 0 && rel.abs() <= 0.05,
        &format!("{nonzero} nonzero residual samples over 100 noiseless configs, residual variance {var:.0} ({:+.2}%)", 100.0 * rel),
    );
}

// 6-8. the desk fleet

struct Trained {
    appliance: String,
    d_shared: Vec<f64>,
}

struct FleetRun {
    _dir: TempDir,
    cfg: RunConfig,
    pretrain_secs: f64,
    /// (appliance, held-out MAE, always-mean MAE)
    pretrained: Vec<(String, f64, f64)>,
}

fn quiet(dir: &Path, name: &str) -> Logger {
    Logger::to_file(&dir.join(name)).unwrap()
}

/// Desk fleet and desk training defaults, with `FLEET_EPOCHS` pretraining
/// epochs.
fn fleet() -> &'static FleetRun {
    static RUN: OnceLock<FleetRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig {
            out: dir.path().join("run"),
            threads: None,
            ..RunConfig::default()
        };
        cfg.train.max_epochs = FLEET_EPOCHS;
        cfg.validate().unwrap();
        pipeline::init_threads(cfg.threads);
        let mut log = quiet(dir.path(), "simulate.jsonl");
        pipeline::simulate(&cfg, &mut log).unwrap();

        let start = Instant::now();
        let cks = pipeline::pretrain(&cfg, &[], &mut quiet(dir.path(), "pretrain.jsonl")).unwrap();
        let pretrain_secs = start.elapsed().as_secs_f64();

        let data = Dataset::open(&cfg).unwrap();
        let mut pretrained = Vec::new();
        for (app, ck) in data.appliances.iter().zip(&cks) {
            let mut train_power = Vec::new();
            for h in data.houses_in(Split::Train) {
                train_power.extend_from_slice(data.pair(h, app).unwrap().1.watts());
            }
            let mean = train_power.iter().sum::<f64>() / train_power.len() as f64;
            let (mut pred, mut truth) = (Vec::new(), Vec::new());
            for h in data.houses_in(Split::Test) {
                let (m, a) = data.pair(h, app).unwrap();
                let p = disaggregate_series(ck, &m, 256, cfg.clamp).unwrap();
                truth.extend(covered_truth(&a, &p).unwrap());
                pred.extend_from_slice(p.watts());
            }
            let baseline = vec![mean; truth.len()];
            pretrained.push((app.clone(), mae(&pred, &truth).unwrap(), mae(&baseline, &truth).unwrap()));
        }
        FleetRun {
            _dir: dir,
            cfg,
            pretrain_secs,
            pretrained,
        }
    })
}

const FLEET_EPOCHS: usize = 2;
/// Epochs for each arm of the adversarial comparison.
const ARM_EPOCHS: usize = 1;

fn file_digest(path: &Path) -> u32 {
    crc32fast::hash(&fs::read(path).unwrap())
}

/// Adversarial arm, then the ablation arm, both evaluated on the held-out
/// household.
fn arms() -> &'static (Vec<Trained>, bool, EvalReport, EvalReport) {
    static ARMS: OnceLock<(Vec<Trained>, bool, EvalReport, EvalReport)> = OnceLock::new();
    ARMS.get_or_init(|| {
        let run = fleet();
        let mut cfg = run.cfg.clone();
        cfg.train.max_epochs = ARM_EPOCHS;
        let dir = cfg.out.clone();
        let data = Dataset::open(&cfg).unwrap();
        let frozen: Vec<PathBuf> = data.appliances.iter().map(|a| pipeline::checkpoint_path(&cfg.pretrain_dir(), a)).collect();
        let before: Vec<u32> = frozen.iter().map(|p| file_digest(p)).collect();

        let mut log = quiet(&dir, "train.jsonl");
        pipeline::train(&cfg, &[], &mut log).unwrap();
        let unchanged = frozen.iter().map(|p| file_digest(p)).collect::<Vec<_>>() == before;
        let trained = data
            .appliances
            .iter()
            .map(|app| {
                let text = fs::read_to_string(cfg.arm_dir().join(format!("{app}.jsonl"))).unwrap();
                let last: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
                Trained {
                    appliance: app.clone(),
                    d_shared: last["d_shared"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect(),
                }
            })
            .collect();
        pipeline::disaggregate_dataset(&cfg, &mut log).unwrap();
        let aed = pipeline::evaluate_dataset(&cfg, &mut log).unwrap();

        let mut minus_cfg = cfg.clone();
        minus_cfg.train.adversarial = false;
        pipeline::train(&minus_cfg, &[], &mut log).unwrap();
        pipeline::disaggregate_dataset(&minus_cfg, &mut log).unwrap();
        let minus = pipeline::evaluate_dataset(&minus_cfg, &mut log).unwrap();
        (trained, unchanged, aed, minus)
    })
}

#[test]
fn criterion_06_seq2point_learning() {
    let run = fleet();
    let data = Dataset::open(&run.cfg).unwrap();
    let windows = data.windows(&data.appliances[0], Split::Train, run.cfg.model.window, run.cfg.stride).unwrap().len();
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(4);
    // ten minutes on four cores, scaled to the cores available here
    let budget = 600.0 * 4.0 / cores as f64;
    let learned = run.pretrained.iter().all(|(_, m, b)| *m <= 0.5 * b);
    let detail = run
        .pretrained
        .iter()
        .map(|(a, m, b)| format!("{a} {m:.1} W vs mean {b:.1} W ({:.2})", m / b))
        .collect::<Vec<_>>()
        .join(", ");
    let c = &run.cfg;
    let setup_ok = windows >= 50_000 && c.model.window == 599 && c.train.batch_size == 64 && c.train.max_epochs <= 10;
    verdict(
        6,
        "seq2point learning",
        learned && setup_ok && run.pretrain_secs <= budget,
        &format!(
            "{detail}; {windows} training windows, {:.0} s on {cores} core(s) (budget {budget:.0} s)",
            run.pretrain_secs
        ),
    );
}

#[test]
fn criterion_07_adversarial_confusion() {
    let (trained, unchanged, _, _) = arms();
    let inside = trained.iter().all(|t| !t.d_shared.is_empty() && t.d_shared.iter().all(|d| (0.35..=0.65).contains(d)));
    let detail = trained
        .iter()
        .map(|t| {
            let ds: Vec<String> = t.d_shared.iter().map(|d| format!("{d:.3}")).collect();
            format!("{} [{}]", t.appliance, ds.join(", "))
        })
        .collect::<Vec<_>>()
        .join("; ");
    verdict(
        7,
        "adversarial confusion",
        inside && *unchanged,
        &format!("mean D_j output on shared features: {detail}; frozen extractors unchanged: {unchanged}"),
    );
}

#[test]
fn criterion_08_ablation_direction() {
    let (_, _, aed, minus) = arms();
    let ratio = aed.mean_mae() / minus.mean_mae();
    let per: Vec<String> = aed
        .appliances
        .iter()
        .map(|a| format!("{} {:.1}/{:.1}", a.appliance, a.mae_watts, minus.get(&a.appliance).unwrap().mae_watts))
        .collect();
    verdict(
        8,
        "ablation direction",
        ratio <= 1.05,
        &format!(
            "AED {:.2} W vs AED- {:.2} W, ratio {ratio:.3} ({})",
            aed.mean_mae(),
            minus.mean_mae(),
            per.join(", ")
        ),
    );
}

// 9. determinism

const SMALL_FLEET: &str = r#"{
  "simulator": {
    "households": 4, "samples": 2000, "period": 6, "noise": {"sigma": 15.0},
    "split": {"train": 0.5, "validation": 0.25, "test": 0.25},
    "power_variation": 0.1,
    "appliances": [
      {"name": "fridge", "kind": "cyclic", "on_power": 150.0, "on_duration": 60, "off_duration": 120, "jitter": 0.2},
      {"name": "kettle", "kind": "spike", "on_power": 2000.0, "duration": 10, "mean_off": 300.0}
    ]
  },
  "model": {"window": 41},
  "train": {"max_epochs": 2, "seed": 21, "batch_size": 32},
  "stride": 3
}"#;

fn run_pipeline(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::write(dir.join("run.json"), SMALL_FLEET).unwrap();
    for cmd in ["simulate", "pretrain", "train", "disaggregate", "evaluate"] {
        let out = Command::new(env!("CARGO_BIN_EXE_aed"))
            .current_dir(dir)
            .args(["--config", "run.json", "--threads", "1", cmd])
            .output()
            .unwrap();
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let mut files = BTreeMap::new();
    for sub in ["pretrain", "aed"] {
        for e in fs::read_dir(dir.join("runs").join(sub)).unwrap() {
            let p = e.unwrap().path();
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            if name.ends_with(".aedc") || name.starts_with("report") {
                files.insert(format!("{sub}/{name}"), fs::read(&p).unwrap());
            }
        }
    }
    files
}

#[test]
fn criterion_09_determinism() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (x, y) = (run_pipeline(a.path()), run_pipeline(b.path()));
    let names: Vec<&String> = x.keys().collect();
    let differing: Vec<&String> = x.iter().filter(|(k, v)| y.get(*k) != Some(v)).map(|(k, _)| k).collect();
    let checkpoints = names.iter().filter(|n| n.ends_with(".aedc")).count();
    let reports = names.len() - checkpoints;
    verdict(
        9,
        "determinism",
        differing.is_empty()
            && x.len() == y.len()
            && checkpoints == 4
            && ["aed/report.csv", "aed/report.json", "aed/report_shares.svg"].iter().all(|f| x.contains_key(*f)),
        &format!("{checkpoints} checkpoints and {reports} report files compared, differing: {differing:?}"),
    );
}

// 10. checkpoints

fn random_params(rng: &mut ChaCha8Rng) -> (CheckpointRole, Option<usize>, NetworkParams<f64>) {
    let w = 2 * rng.random_range(13..60) + 1;
    let seed = rng.random::<u64>();
    match rng.random_range(0..3) {
        0 => (CheckpointRole::Generator, Some(w), Generator::<f64>::new(GeneratorConfig::new(w), seed).unwrap().params().clone()),
        1 => (
            CheckpointRole::Predictor,
            None,
            Predictor::<f64>::new(MlpConfig::predictor(feature_len(w)), seed).unwrap().params().clone(),
        ),
        _ => (
            CheckpointRole::Discriminator,
            None,
            Discriminator::<f64>::new(MlpConfig::discriminator(feature_len(w)), seed).unwrap().params().clone(),
        ),
    }
}

fn perturb(params: &mut NetworkParams<f64>, rng: &mut ChaCha8Rng) {
    for (_, t) in params.iter_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-1.0..1.0) * 1e-3;
        }
    }
}

fn structured_error(e: Option<aed::Error>) -> bool {
    matches!(
        e,
        Some(aed::Error::CorruptCheckpoint(_) | aed::Error::TruncatedCheckpoint(_) | aed::Error::UnsupportedVersion { .. })
    )
}

#[test]
fn criterion_10_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut identical, mut rejected, mut corruptions) = (0usize, 0usize, 0usize);
    for i in 0..100 {
        let (role, window, mut params) = random_params(&mut rng);
        perturb(&mut params, &mut rng);
        let meta = CheckpointMeta {
            appliance: Some(format!("app{i}")),
            window,
            seed: rng.random(),
            epoch: rng.random_range(1..50),
            ..CheckpointMeta::default()
        };
        let path = dir.path().join(format!("{i}.aedc"));
        let ok = if i % 2 == 0 {
            let ck = Checkpoint::new(role, meta.clone(), params.clone());
            save_checkpoint(&path, &ck).unwrap();
            let back = load_checkpoint::<f64>(&path).unwrap();
            back.role == role && back.meta == meta && back.params.bit_eq(&params)
        } else {
            let p32: NetworkParams<f32> = params.cast();
            let ck = Checkpoint::new(role, meta.clone(), p32.clone());
            save_checkpoint(&path, &ck).unwrap();
            let back = load_checkpoint::<f32>(&path).unwrap();
            back.role == role && back.meta == meta && back.params.bit_eq(&p32)
        };
        identical += ok as usize;

        let bytes = fs::read(&path).unwrap();
        let mut cases: Vec<Vec<u8>> = Vec::new();
        let mut flipped = bytes.clone();
        let at = rng.random_range(0..bytes.len());
        flipped[at] ^= 1 << rng.random_range(0..8);
        cases.push(flipped);
        cases.push(bytes[..rng.random_range(0..bytes.len())].to_vec());
        let mut version = bytes.clone();
        version[4] = version[4].wrapping_add(1);
        cases.push(version);
        let mut extra = bytes.clone();
        extra.push(0);
        cases.push(extra);
        for case in cases {
            corruptions += 1;
            let bad = dir.path().join("bad.aedc");
            fs::write(&bad, &case).unwrap();
            let structured = if i % 2 == 0 {
                structured_error(load_checkpoint::<f64>(&bad).err())
            } else {
                structured_error(load_checkpoint::<f32>(&bad).err())
            };
            rejected += structured as usize;
        }
    }
    verdict(
        10,
        "checkpoint round trip",
        identical == 100 && rejected == corruptions,
        &format!("{identical}/100 round trips identical, {rejected}/{corruptions} corrupted files rejected"),
    );
}
