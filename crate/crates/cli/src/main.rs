use std::path::PathBuf;
use std::process::ExitCode;

use aed::autodiff::Precision;
use aed::metrics::ReportFormat;
use aed::signal::SeriesFormat;
use aed_cli::pipeline::{self, Logger, REPORT_FORMATS};
use aed_cli::{CliError, Overrides, Result, RunConfig};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "aed", version, about = "Adversarial energy disaggregation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset manifest (defaults to <out>/data/manifest.json)
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Worker threads; 1 gives the reference single-threaded run
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    precision: Option<Precision>,
    /// Train or use the prediction-only model instead of the adversarial one
    #[arg(long, global = true)]
    no_adversarial: bool,
    /// Batch 1000, 50 epochs, lambda 0.05, window 599
    #[arg(long, global = true)]
    paper_defaults: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic fleet and its manifest
    Simulate,
    /// Load and align a dataset and summarize it
    Ingest,
    /// Train one generator and predictor per appliance
    Pretrain {
        #[arg(long = "appliance")]
        appliances: Vec<String>,
    },
    /// Train target models against the pretrained generators
    Train {
        #[arg(long = "target")]
        targets: Vec<String>,
    },
    /// Predict appliance power from mains
    Disaggregate {
        /// Model checkpoints; all trained models if omitted
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
        /// Mains file; the dataset's test households if omitted
        #[arg(long)]
        mains: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: SeriesFormat,
    },
    /// Score predictions against ground truth
    Evaluate {
        #[arg(long = "pred")]
        preds: Vec<PathBuf>,
        #[arg(long = "truth")]
        truths: Vec<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: SeriesFormat,
    },
    /// Re-emit a saved JSON report
    Report {
        /// Report JSON; <out>/<arm>/report.json if omitted
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "csv,json,svg")]
        formats: Vec<ReportFormat>,
        /// Output prefix; <out>/<arm>/report if omitted
        #[arg(long)]
        prefix: Option<PathBuf>,
    },
}

fn run(cli: Cli, log: &mut Logger) -> Result<()> {
    let c = cli.common;
    let overrides = Overrides {
        seed: c.seed,
        out: c.out,
        dataset: c.dataset,
        threads: c.threads,
        precision: c.precision,
        no_adversarial: c.no_adversarial,
        paper_defaults: c.paper_defaults,
    };
    let cfg = RunConfig::load(c.config.as_deref(), &overrides)?;
    pipeline::init_threads(cfg.threads);
    match cli.command {
        Command::Simulate => pipeline::simulate(&cfg, log).map(drop),
        Command::Ingest => pipeline::ingest(&cfg, log).map(drop),
        Command::Pretrain { appliances } => pipeline::pretrain(&cfg, &appliances, log).map(drop),
        Command::Train { targets } => pipeline::train(&cfg, &targets, log).map(drop),
        Command::Disaggregate {
            checkpoints,
            mains,
            format,
        } => match mains {
            None if checkpoints.is_empty() => pipeline::disaggregate_dataset(&cfg, log).map(drop),
            None => Err(CliError::usage("--checkpoint needs --mains")),
            Some(m) => {
                let cks = if checkpoints.is_empty() {
                    let data = pipeline::Dataset::open(&cfg)?;
                    data.appliances.iter().map(|a| pipeline::checkpoint_path(&cfg.arm_dir(), a)).collect()
                } else {
                    checkpoints
                };
                pipeline::disaggregate_files(&cks, &m, format, &cfg.arm_dir().join("predictions"), &cfg, log)
                    .map(drop)
            }
        },
        Command::Evaluate { preds, truths, format } => {
            if preds.is_empty() && truths.is_empty() {
                pipeline::evaluate_dataset(&cfg, log).map(drop)
            } else {
                pipeline::evaluate_files(&preds, &truths, format, &cfg.arm_dir().join("report"), &cfg, log).map(drop)
            }
        }
        Command::Report { input, formats, prefix } => {
            let input = input.unwrap_or_else(|| cfg.arm_dir().join("report.json"));
            let prefix = prefix.unwrap_or_else(|| cfg.arm_dir().join("report"));
            let formats = if formats.is_empty() { REPORT_FORMATS.to_vec() } else { formats };
            pipeline::report(&input, &formats, &prefix, log).map(drop)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut log = Logger::stderr();
    match run(cli, &mut log) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            log.emit("error", json!({ "message": e.to_string(), "exit_code": code }));
            ExitCode::from(code as u8)
        }
    }
}
