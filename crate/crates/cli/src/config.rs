use std::fs;
use std::path::{Path, PathBuf};

use aed::autodiff::Precision;
use aed::models::DEFAULT_WINDOW;
use aed::synth::FleetConfig;
use aed::train::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const DEFAULT_OUT: &str = "runs";
pub const DEFAULT_PLOT_SPAN: usize = 2000;

/// Everything a pipeline run needs. Relative paths in a config file are
/// resolved against the file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset manifest; defaults to `<out>/data/manifest.json`.
    pub dataset: Option<PathBuf>,
    /// Fleet used by `simulate`; the desk fleet if absent.
    pub simulator: Option<FleetConfig>,
    /// Appliances to model; every manifest appliance if empty.
    pub appliances: Vec<String>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Step between training and validation window starts.
    pub stride: usize,
    pub out: PathBuf,
    pub threads: Option<usize>,
    /// Clamp negative predictions to zero before writing and scoring.
    pub clamp: bool,
    /// Samples drawn in each report line plot.
    pub plot_span: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            simulator: None,
            appliances: Vec::new(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            stride: 1,
            out: PathBuf::from(DEFAULT_OUT),
            threads: None,
            clamp: true,
            plot_span: DEFAULT_PLOT_SPAN,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub threads: Option<usize>,
    pub precision: Option<Precision>,
    pub no_adversarial: bool,
    pub paper_defaults: bool,
}

impl RunConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(d) = &cfg.dataset {
            cfg.dataset = Some(base.join(d));
        }
        cfg.out = base.join(&cfg.out);
        Ok(cfg)
    }

    /// File (or defaults), then `--paper-defaults`, then explicit flags.
    pub fn load(path: Option<&Path>, o: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::read(p)?,
            None => Self::default(),
        };
        if o.paper_defaults {
            let paper = TrainConfig::paper();
            cfg.train.batch_size = paper.batch_size;
            cfg.train.max_epochs = paper.max_epochs;
            cfg.train.lambda = paper.lambda;
            cfg.model.window = DEFAULT_WINDOW;
        }
        if let Some(s) = o.seed {
            cfg.train.seed = s;
        }
        if let Some(p) = &o.out {
            cfg.out = p.clone();
        }
        if let Some(d) = &o.dataset {
            cfg.dataset = Some(d.clone());
        }
        if o.threads.is_some() {
            cfg.threads = o.threads;
        }
        if let Some(p) = o.precision {
            cfg.train.precision = p;
        }
        if o.no_adversarial {
            cfg.train.adversarial = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.stride == 0 {
            return Err(CliError::usage("stride must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(CliError::usage("threads must be at least 1"));
        }
        let mut names = self.appliances.clone();
        names.sort();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(CliError::usage(format!("appliance `{}` listed twice", w[0])));
        }
        if let Some(d) = &self.dataset {
            if !d.is_file() {
                return Err(CliError::usage(format!("dataset manifest {} does not exist", d.display())));
            }
        }
        if let Some(f) = &self.simulator {
            f.validate()?;
        }
        Ok(())
    }

    pub fn fleet(&self) -> FleetConfig {
        self.simulator.clone().unwrap_or_else(FleetConfig::desk)
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out.join("data")
    }

    pub fn pretrain_dir(&self) -> PathBuf {
        self.out.join("pretrain")
    }

    /// Output directory of the adversarial model or of its ablation.
    pub fn arm_dir(&self) -> PathBuf {
        self.out.join(self.arm())
    }

    pub fn arm(&self) -> &'static str {
        if self.train.adversarial {
            "aed"
        } else {
            "aed_minus"
        }
    }

    /// Model, training and stride settings echoed into checkpoints, without
    /// any filesystem paths.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::json!({
            "model": self.model,
            "train": self.train,
            "stride": self.stride,
        })
    }
}
