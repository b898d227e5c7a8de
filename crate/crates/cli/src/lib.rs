//! Pipeline driver behind the `aed` binary: simulation, ingestion,
//! pretraining, adversarial training, inference and evaluation.

pub mod config;
pub mod error;
pub mod pipeline;

pub use config::{Overrides, RunConfig};
pub use error::{exit, CliError, Result};
