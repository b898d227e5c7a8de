use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use aed::autodiff::{Precision, Real};
use aed::metrics::{emit_report, EvalReport, PlotTrace, ReportFormat, ReportMeta};
use aed::models::{Generator, Predictor};
use aed::signal::{
    load_series, write_series, DatasetManifest, HouseholdEntry, LoadedHousehold, NormalizationStats, Role,
    SeriesFormat, SignalSeries, Split, WindowSet,
};
use aed::synth::{simulate_fleet, Household};
use aed::train::{
    checkpoint_precision, load_checkpoint, pretrain_appliance, save_checkpoint, train_adversarial, CheckpointMeta,
    Disaggregator, EpochLog,
};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const CHECKPOINT_EXT: &str = "aedc";
pub const REPORT_FORMATS: [ReportFormat; 3] = [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Svg];

/// Line-delimited JSON events on stderr, optionally mirrored to a file.
pub struct Logger {
    file: Option<BufWriter<File>>,
}

impl Logger {
    pub fn stderr() -> Self {
        Self { file: None }
    }

    pub fn to_file(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| aed::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(Self {
            file: Some(BufWriter::new(f)),
        })
    }

    pub fn emit(&mut self, event: &str, body: Value) {
        let mut line = json!({ "event": event });
        if let (Value::Object(dst), Value::Object(src)) = (&mut line, body) {
            dst.extend(src);
        }
        let text = line.to_string();
        eprintln!("{text}");
        if let Some(f) = &mut self.file {
            let _ = writeln!(f, "{text}");
        }
    }

    pub fn epoch(&mut self, log: &EpochLog) {
        self.emit("epoch", serde_json::to_value(log).expect("epoch log serializes"));
    }
}

impl Drop for Logger {
    fn drop(&mut self) {
        if let Some(f) = &mut self.file {
            let _ = f.flush();
        }
    }
}

/// Sizes the global worker pool; later calls keep the first size.
pub fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| {
        aed::Error::Io {
            path: dir.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(aed::Error::from)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| {
        aed::Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

pub fn checkpoint_path(dir: &Path, appliance: &str) -> PathBuf {
    dir.join(format!("{appliance}.{CHECKPOINT_EXT}"))
}

fn series_name(appliance: &str) -> String {
    format!("{appliance}.csv")
}

// simulate

fn household_entry(h: &Household, split: Split, dir: &Path) -> Result<HouseholdEntry> {
    let rel = PathBuf::from(&h.name);
    write_series(dir.join(&rel).join("mains.csv"), &h.mains)?;
    let mut channels = std::collections::BTreeMap::new();
    for a in &h.appliances {
        let name = a.role().name().to_string();
        let file = rel.join(series_name(&name));
        write_series(dir.join(&file), a)?;
        channels.insert(name, file);
    }
    Ok(HouseholdEntry {
        name: h.name.clone(),
        split,
        mains: rel.join("mains.csv"),
        channels,
    })
}

/// Writes the simulated fleet under `<out>/data` and returns the manifest
/// path.
pub fn simulate(cfg: &RunConfig, log: &mut Logger) -> Result<PathBuf> {
    let fleet_cfg = cfg.fleet();
    let fleet = simulate_fleet(&fleet_cfg, cfg.train.seed)?;
    let dir = cfg.data_dir();
    create_dir(&dir)?;
    let mut entries = Vec::new();
    for (split, homes) in [
        (Split::Train, &fleet.train),
        (Split::Validation, &fleet.validation),
        (Split::Test, &fleet.test),
    ] {
        for h in homes {
            entries.push(household_entry(h, split, &dir)?);
        }
    }
    let names = fleet_cfg.appliances.iter().map(|a| a.name.clone()).collect();
    let mut manifest = DatasetManifest::new(SeriesFormat::Csv, names, entries);
    manifest.sample_period = Some(fleet_cfg.period);
    let path = dir.join("manifest.json");
    manifest.write(&path)?;
    write_json(&dir.join("simulator.json"), &json!({ "seed": cfg.train.seed, "fleet": fleet_cfg }))?;
    log.emit(
        "simulated",
        json!({
            "manifest": path,
            "households": fleet_cfg.households,
            "samples": fleet_cfg.samples,
            "appliances": manifest.appliances,
        }),
    );
    Ok(path)
}

// dataset access

pub struct Dataset {
    pub path: PathBuf,
    pub manifest: DatasetManifest,
    pub appliances: Vec<String>,
    pub houses: Vec<LoadedHousehold>,
    /// Identifies the manifest by file name and content checksum.
    pub label: String,
}

impl Dataset {
    pub fn open(cfg: &RunConfig) -> Result<Self> {
        let path = match &cfg.dataset {
            Some(p) => p.clone(),
            None => {
                let p = cfg.data_dir().join("manifest.json");
                if !p.is_file() {
                    return Err(CliError::missing("dataset manifest", p, "aed simulate"));
                }
                p
            }
        };
        let manifest = DatasetManifest::read(&path)?;
        manifest.check_paths()?;
        let appliances = if cfg.appliances.is_empty() {
            manifest.appliances.clone()
        } else {
            for a in &cfg.appliances {
                if !manifest.appliances.contains(a) {
                    return Err(CliError::usage(format!("appliance `{a}` is not in {}", path.display())));
                }
            }
            cfg.appliances.clone()
        };
        let houses = manifest
            .households
            .iter()
            .map(|h| manifest.load_household(h))
            .collect::<aed::Result<Vec<_>>>()?;
        let bytes = fs::read(&path).map_err(|e| aed::Error::Io {
            path: path.clone(),
            source: e,
        })?;
        let label = format!(
            "{} (crc32 {:08x})",
            path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            crc32fast::hash(&bytes)
        );
        Ok(Self {
            path,
            manifest,
            appliances,
            houses,
            label,
        })
    }

    pub fn houses_in(&self, split: Split) -> impl Iterator<Item = &LoadedHousehold> {
        self.houses.iter().filter(move |h| h.split == split)
    }

    pub fn pair(&self, house: &LoadedHousehold, appliance: &str) -> Result<(SignalSeries, SignalSeries)> {
        Ok(self.manifest.aligned_pair(house, appliance)?)
    }

    pub fn mains_stats(&self) -> NormalizationStats {
        self.manifest
            .stats_override("mains")
            .or_else(|| NormalizationStats::builtin("aggregate"))
            .expect("aggregate statistics are built in")
    }

    /// Manifest override, then the built-in table, then the training split.
    pub fn appliance_stats(&self, appliance: &str) -> Result<NormalizationStats> {
        if let Some(s) = self.manifest.stats_override(appliance).or_else(|| NormalizationStats::builtin(appliance)) {
            return Ok(s);
        }
        let series = self
            .houses_in(Split::Train)
            .map(|h| self.pair(h, appliance).map(|p| p.1))
            .collect::<Result<Vec<_>>>()?;
        Ok(NormalizationStats::from_series(&series)?)
    }

    pub fn windows(&self, appliance: &str, split: Split, window: usize, stride: usize) -> Result<WindowSet> {
        let mut set = WindowSet::new(window, stride, self.mains_stats(), self.appliance_stats(appliance)?)?;
        for h in self.houses_in(split) {
            let (m, a) = self.pair(h, appliance)?;
            set.add(&m, &a)?;
        }
        Ok(set)
    }
}

// ingest

/// Loads and aligns every household and writes `<out>/ingest.json`.
pub fn ingest(cfg: &RunConfig, log: &mut Logger) -> Result<PathBuf> {
    let data = Dataset::open(cfg)?;
    let mut houses = Vec::new();
    for h in &data.houses {
        let mut channels = serde_json::Map::new();
        for a in &data.appliances {
            let (m, _) = data.pair(h, a)?;
            channels.insert(
                a.clone(),
                json!({
                    "samples": m.len(),
                    "start": m.start(),
                    "end": m.end(),
                    "period": m.native_period(),
                    "windows": aed::signal::window_count(m.len(), cfg.model.window, cfg.stride),
                }),
            );
        }
        houses.push(json!({ "name": h.name, "split": h.split, "channels": channels }));
    }
    let mut stats = serde_json::Map::new();
    stats.insert("mains".into(), serde_json::to_value(data.mains_stats()).expect("stats serialize"));
    for a in &data.appliances {
        stats.insert(a.clone(), serde_json::to_value(data.appliance_stats(a)?).expect("stats serialize"));
    }
    create_dir(&cfg.out)?;
    let path = cfg.out.join("ingest.json");
    let summary = json!({ "dataset": data.label, "households": houses, "normalization": stats });
    write_json(&path, &summary)?;
    log.emit("ingested", json!({ "summary": path, "households": data.houses.len() }));
    Ok(path)
}

// training

fn meta_for(cfg: &RunConfig, appliance: &str, set: &WindowSet, epoch: usize, adversarial: Option<bool>) -> CheckpointMeta {
    CheckpointMeta {
        appliance: Some(appliance.to_string()),
        window: Some(cfg.model.window),
        epoch,
        seed: cfg.train.seed,
        adversarial,
        mains_stats: Some(*set.mains_stats()),
        appliance_stats: Some(*set.appliance_stats()),
        config: cfg.echo(),
    }
}

fn model_of<T: Real>(appliance: &str, g: &Generator<T>, c: &Predictor<T>, set: &WindowSet) -> Disaggregator<T> {
    Disaggregator {
        appliance: appliance.to_string(),
        generator: g.clone(),
        predictor: c.clone(),
        mains_stats: *set.mains_stats(),
        appliance_stats: *set.appliance_stats(),
    }
}

fn pick(all: &[String], subset: &[String]) -> Result<Vec<String>> {
    if subset.is_empty() {
        return Ok(all.to_vec());
    }
    for s in subset {
        if !all.contains(s) {
            return Err(CliError::usage(format!("unknown appliance `{s}`")));
        }
    }
    Ok(subset.to_vec())
}

/// Per-appliance supervised training; writes `<out>/pretrain/<app>.aedc`
/// and a JSON log next to it.
pub fn pretrain(cfg: &RunConfig, only: &[String], log: &mut Logger) -> Result<Vec<PathBuf>> {
    match cfg.train.precision {
        Precision::F32 => pretrain_as::<f32>(cfg, only, log),
        Precision::F64 => pretrain_as::<f64>(cfg, only, log),
    }
}

fn pretrain_as<T: Real>(cfg: &RunConfig, only: &[String], log: &mut Logger) -> Result<Vec<PathBuf>> {
    let data = Dataset::open(cfg)?;
    let dir = cfg.pretrain_dir();
    create_dir(&dir)?;
    let mut written = Vec::new();
    for app in pick(&data.appliances, only)? {
        let train = data.windows(&app, Split::Train, cfg.model.window, cfg.stride)?;
        let val = data.windows(&app, Split::Validation, cfg.model.window, cfg.stride)?;
        log.emit(
            "pretrain_start",
            json!({ "appliance": app, "train_windows": train.len(), "validation_windows": val.len() }),
        );
        let mut file_log = Logger::to_file(&dir.join(format!("{app}.jsonl")))?;
        let last = dir.join(format!("{app}.last.{CHECKPOINT_EXT}"));
        let out = pretrain_appliance::<T>(&app, &train, &val, &cfg.model, &cfg.train, &mut |l, g, c| {
            file_log.epoch(l);
            let ck = model_of(&app, g, c, &train).to_checkpoint(meta_for(cfg, &app, &train, l.epoch, None));
            save_checkpoint(&last, &ck)
        })?;
        let path = checkpoint_path(&dir, &app);
        let ck = model_of(&app, &out.generator, &out.predictor, &train)
            .to_checkpoint(meta_for(cfg, &app, &train, out.best_epoch, None));
        save_checkpoint(&path, &ck)?;
        let _ = fs::remove_file(&last);
        log.emit(
            "pretrained",
            json!({
                "appliance": app,
                "checkpoint": path,
                "best_epoch": out.best_epoch,
                "epochs": out.trace.len(),
                "val_mae_watts": out.trace[out.best_epoch - 1].val_mae_watts,
            }),
        );
        written.push(path);
    }
    Ok(written)
}

fn load_model<T: Real>(path: &Path, producer: &'static str) -> Result<Disaggregator<T>> {
    if !path.is_file() {
        return Err(CliError::missing("checkpoint", path, producer));
    }
    Ok(Disaggregator::from_checkpoint(load_checkpoint::<T>(path)?)?)
}

/// Trains one (G, C) per target against the frozen pretrained generators,
/// or the prediction-only ablation with `adversarial` off. Writes
/// `<out>/<arm>/<target>.aedc`.
pub fn train(cfg: &RunConfig, targets: &[String], log: &mut Logger) -> Result<Vec<PathBuf>> {
    match cfg.train.precision {
        Precision::F32 => train_as::<f32>(cfg, targets, log),
        Precision::F64 => train_as::<f64>(cfg, targets, log),
    }
}

fn train_as<T: Real>(cfg: &RunConfig, targets: &[String], log: &mut Logger) -> Result<Vec<PathBuf>> {
    let data = Dataset::open(cfg)?;
    let mut extractors = Vec::new();
    if cfg.train.adversarial {
        for app in &data.appliances {
            let m = load_model::<T>(&checkpoint_path(&cfg.pretrain_dir(), app), "aed pretrain")?;
            if m.window() != cfg.model.window {
                return Err(CliError::usage(format!(
                    "pretrained `{app}` uses window {} but the config asks for {}",
                    m.window(),
                    cfg.model.window
                )));
            }
            extractors.push(m.generator);
        }
    }
    let dir = cfg.arm_dir();
    create_dir(&dir)?;
    let adversarial = Some(cfg.train.adversarial);
    let mut written = Vec::new();
    for app in pick(&data.appliances, targets)? {
        let train = data.windows(&app, Split::Train, cfg.model.window, cfg.stride)?;
        let val = data.windows(&app, Split::Validation, cfg.model.window, cfg.stride)?;
        log.emit(
            "train_start",
            json!({
                "appliance": app,
                "adversarial": cfg.train.adversarial,
                "discriminators": extractors.len(),
                "train_windows": train.len(),
            }),
        );
        let mut file_log = Logger::to_file(&dir.join(format!("{app}.jsonl")))?;
        let last = dir.join(format!("{app}.last.{CHECKPOINT_EXT}"));
        let out = train_adversarial::<T>(
            &app,
            &train,
            &val,
            &extractors,
            None,
            &cfg.model,
            &cfg.train,
            &mut |l, g, c| {
                file_log.epoch(l);
                let ck = model_of(&app, g, c, &train).to_checkpoint(meta_for(cfg, &app, &train, l.epoch, adversarial));
                save_checkpoint(&last, &ck)
            },
        )?;
        let path = checkpoint_path(&dir, &app);
        let ck = model_of(&app, &out.generator, &out.predictor, &train)
            .to_checkpoint(meta_for(cfg, &app, &train, out.best_epoch, adversarial));
        save_checkpoint(&path, &ck)?;
        let _ = fs::remove_file(&last);
        let summary = json!({
            "appliance": app,
            "checkpoint": path,
            "adversarial": cfg.train.adversarial,
            "best_epoch": out.best_epoch,
            "epochs": out.trace.len(),
            "val_mae_watts": out.trace[out.best_epoch - 1].val_mae_watts,
            "d_shared": out.d_shared,
            "d_specific": out.d_specific,
        });
        file_log.emit("trained", summary.clone());
        log.emit("trained", summary);
        written.push(path);
    }
    Ok(written)
}

// inference

fn disaggregate_with<T: Real>(ck: &Path, mains: &SignalSeries, batch: usize, clamp: bool) -> Result<SignalSeries> {
    let m = load_model::<T>(ck, "aed train")?;
    Ok(m.disaggregate(mains, batch, clamp)?)
}

/// Stride-1 predictions in watts from the checkpoint at `ck`, computed at
/// the checkpoint's own precision.
pub fn disaggregate_series(ck: &Path, mains: &SignalSeries, batch: usize, clamp: bool) -> Result<SignalSeries> {
    if !ck.is_file() {
        return Err(CliError::missing("checkpoint", ck, "aed train"));
    }
    match checkpoint_precision(ck)? {
        Precision::F32 => disaggregate_with::<f32>(ck, mains, batch, clamp),
        Precision::F64 => disaggregate_with::<f64>(ck, mains, batch, clamp),
    }
}

fn appliance_of(ck: &Path) -> Result<String> {
    let p = checkpoint_precision(ck)?;
    let meta = match p {
        Precision::F32 => load_checkpoint::<f32>(ck)?.meta,
        Precision::F64 => load_checkpoint::<f64>(ck)?.meta,
    };
    meta.appliance
        .ok_or_else(|| CliError::usage(format!("{} does not name its appliance", ck.display())))
}

/// Predictions for every test household under `<out>/<arm>/predictions`.
pub fn disaggregate_dataset(cfg: &RunConfig, log: &mut Logger) -> Result<Vec<PathBuf>> {
    let data = Dataset::open(cfg)?;
    let dir = cfg.arm_dir();
    let mut written = Vec::new();
    for h in data.houses_in(Split::Test) {
        for app in &data.appliances {
            let (m, _) = data.pair(h, app)?;
            let pred = disaggregate_series(&checkpoint_path(&dir, app), &m, cfg.train.eval_batch_size, cfg.clamp)?;
            let path = dir.join("predictions").join(&h.name).join(series_name(app));
            write_series(&path, &pred)?;
            written.push(path);
        }
    }
    log.emit("disaggregated", json!({ "files": written.len(), "dir": dir.join("predictions") }));
    Ok(written)
}

/// Predictions of each checkpoint for one mains file, written as
/// `<out_dir>/<appliance>.csv`.
pub fn disaggregate_files(
    checkpoints: &[PathBuf],
    mains: &Path,
    format: SeriesFormat,
    out_dir: &Path,
    cfg: &RunConfig,
    log: &mut Logger,
) -> Result<Vec<PathBuf>> {
    let series = load_series(mains, format, Role::Mains)?;
    let mut written = Vec::new();
    for ck in checkpoints {
        let pred = disaggregate_series(ck, &series, cfg.train.eval_batch_size, cfg.clamp)?;
        let path = out_dir.join(series_name(&appliance_of(ck)?));
        write_series(&path, &pred)?;
        written.push(path);
    }
    log.emit("disaggregated", json!({ "files": written, "mains": mains }));
    Ok(written)
}

/// Truth readings at exactly the prediction's timestamps.
pub fn covered_truth(truth: &SignalSeries, pred: &SignalSeries) -> Result<Vec<f64>> {
    let ts = truth.timestamps();
    let off = ts
        .binary_search(&pred.start())
        .map_err(|_| CliError::usage(format!("prediction starts at {} which is not a truth timestamp", pred.start())))?;
    let end = off + pred.len();
    if end > ts.len() || ts[off..end] != *pred.timestamps() {
        return Err(CliError::usage("prediction timestamps do not lie on the truth grid"));
    }
    Ok(truth.watts()[off..end].to_vec())
}

fn plot(appliance: &str, mains: &SignalSeries, truth: &SignalSeries, pred: &SignalSeries, span: usize) -> Result<PlotTrace> {
    let t = covered_truth(truth, pred)?;
    let m = covered_truth(mains, pred)?;
    let n = span.min(pred.len());
    let start = truth.timestamps().binary_search(&pred.start()).unwrap_or(0);
    Ok(PlotTrace {
        appliance: appliance.to_string(),
        start,
        mains: m[..n].to_vec(),
        truth: t[..n].to_vec(),
        prediction: pred.watts()[..n].to_vec(),
    })
}

fn read_prediction(path: &Path, appliance: &str) -> Result<SignalSeries> {
    if !path.is_file() {
        return Err(CliError::missing("prediction", path, "aed disaggregate"));
    }
    Ok(load_series(path, SeriesFormat::Csv, Role::appliance(appliance))?)
}

/// Scores the predictions of every test household against its truth over
/// the covered span and writes `<out>/<arm>/report.{csv,json,svg}`.
pub fn evaluate_dataset(cfg: &RunConfig, log: &mut Logger) -> Result<EvalReport> {
    let data = Dataset::open(cfg)?;
    let dir = cfg.arm_dir();
    let mut entries = Vec::new();
    let mut plots = Vec::new();
    for app in &data.appliances {
        let (mut pred, mut truth) = (Vec::new(), Vec::new());
        for (k, h) in data.houses_in(Split::Test).enumerate() {
            let (m, a) = data.pair(h, app)?;
            let p = read_prediction(&dir.join("predictions").join(&h.name).join(series_name(app)), app)?;
            truth.extend(covered_truth(&a, &p)?);
            pred.extend_from_slice(p.watts());
            if k == 0 {
                plots.push(plot(app, &m, &a, &p, cfg.plot_span)?);
            }
        }
        if pred.is_empty() {
            return Err(CliError::usage("the dataset has no test households"));
        }
        entries.push((app.clone(), pred, truth));
    }
    let meta = ReportMeta {
        dataset: data.label.clone(),
        checkpoint: format!("{}/*.{CHECKPOINT_EXT}", cfg.arm()),
        window: cfg.model.window,
        seed: cfg.train.seed,
    };
    let mut report = EvalReport::from_predictions(meta, &entries)?;
    report.plots = plots;
    let files = emit_report(&report, &REPORT_FORMATS, dir.join("report"))?;
    log.emit(
        "evaluated",
        json!({ "mean_mae_watts": report.mean_mae(), "appliances": report.appliances, "files": files }),
    );
    Ok(report)
}

/// Scores prediction files against truth files paired by position; the
/// appliance name is the prediction file's stem.
pub fn evaluate_files(
    preds: &[PathBuf],
    truths: &[PathBuf],
    format: SeriesFormat,
    prefix: &Path,
    cfg: &RunConfig,
    log: &mut Logger,
) -> Result<EvalReport> {
    if preds.len() != truths.len() || preds.is_empty() {
        return Err(CliError::usage("pass one --truth file per --pred file"));
    }
    let mut entries = Vec::new();
    for (p, t) in preds.iter().zip(truths) {
        let app = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| CliError::usage(format!("cannot name appliance from {}", p.display())))?;
        let pred = read_prediction(p, &app)?;
        let truth = load_series(t, format, Role::appliance(&app))?;
        entries.push((app, pred.watts().to_vec(), covered_truth(&truth, &pred)?));
    }
    let meta = ReportMeta {
        window: cfg.model.window,
        seed: cfg.train.seed,
        ..ReportMeta::default()
    };
    let report = EvalReport::from_predictions(meta, &entries)?;
    let files = emit_report(&report, &REPORT_FORMATS, prefix)?;
    log.emit("evaluated", json!({ "mean_mae_watts": report.mean_mae(), "files": files }));
    Ok(report)
}

/// Re-emits a saved JSON report in the requested formats.
pub fn report(input: &Path, formats: &[ReportFormat], prefix: &Path, log: &mut Logger) -> Result<Vec<PathBuf>> {
    if !input.is_file() {
        return Err(CliError::missing("report", input, "aed evaluate"));
    }
    let r = EvalReport::read_json(input)?;
    let files = emit_report(&r, formats, prefix)?;
    log.emit("reported", json!({ "files": files }));
    Ok(files)
}
