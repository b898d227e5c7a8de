//! Adversarial energy disaggregation.
//!
//! Seq2point appliance-power prediction from aggregate mains readings,
//! regularized by a multi-adversarial game between a shared feature
//! generator and per-appliance discriminators.

pub mod autodiff;
pub mod error;
pub mod metrics;
pub mod models;
pub mod signal;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
