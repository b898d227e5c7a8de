//! Disaggregation metrics and report output.

mod report;
mod svg;

pub use report::{emit_report, ApplianceMetrics, EvalReport, PlotTrace, ReportFormat, ReportMeta};

use crate::error::{Error, Result};

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!(
            "prediction has {} samples, truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::EmptySeries);
    }
    Ok(())
}

/// Mean absolute error per sample.
pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let total: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum();
    Ok(total / pred.len() as f64)
}

/// Signal aggregate error `|r̂ - r| / r` with `r̂`, `r` the summed
/// prediction and truth.
pub fn sae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let r: f64 = truth.iter().sum();
    if r.is_nan() || r <= 0.0 {
        return Err(Error::UndefinedMetric(format!("SAE needs positive true energy, got {r}")));
    }
    let r_hat: f64 = pred.iter().sum();
    Ok((r_hat - r).abs() / r)
}

/// Percentage of the summed totals taken by each entry.
pub fn energy_shares(totals: &[f64]) -> Result<Vec<f64>> {
    if let Some(t) = totals.iter().find(|t| !t.is_finite() || **t < 0.0) {
        return Err(Error::UndefinedMetric(format!("energy total {t} is not a finite non-negative value")));
    }
    let sum: f64 = totals.iter().sum();
    if sum.is_nan() || sum <= 0.0 {
        return Err(Error::UndefinedMetric("energy shares need at least one positive total".into()));
    }
    Ok(totals.iter().map(|t| 100.0 * t / sum).collect())
}

/// Negative powers set to zero.
pub fn clamp_nonnegative(values: &mut [f64]) {
    values.iter_mut().for_each(|v| *v = v.max(0.0));
}
