use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{energy_shares, mae, sae, svg};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "svg" => Ok(Self::Svg),
            other => Err(Error::config(format!("unknown report format `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub dataset: String,
    pub checkpoint: String,
    pub window: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApplianceMetrics {
    pub appliance: String,
    pub mae_watts: f64,
    /// Absent when the true energy is zero.
    pub sae: Option<f64>,
    pub pred_total: f64,
    pub true_total: f64,
    pub share_pct: f64,
}

/// Span of mains, truth and prediction drawn in the line plot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotTrace {
    pub appliance: String,
    /// Sample index of the first plotted value.
    pub start: usize,
    pub mains: Vec<f64>,
    pub truth: Vec<f64>,
    pub prediction: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: ReportMeta,
    pub appliances: Vec<ApplianceMetrics>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub plots: Vec<PlotTrace>,
}

impl EvalReport {
    /// Metrics for `(appliance, prediction, truth)` triples in watts; shares
    /// are taken over the predicted totals.
    pub fn from_predictions(meta: ReportMeta, entries: &[(String, Vec<f64>, Vec<f64>)]) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::config("report needs at least one appliance"));
        }
        let totals: Vec<f64> = entries.iter().map(|(_, p, _)| p.iter().sum()).collect();
        let shares = energy_shares(&totals).unwrap_or_else(|_| vec![0.0; totals.len()]);
        let appliances = entries
            .iter()
            .zip(totals.iter().zip(&shares))
            .map(|((name, pred, truth), (&pred_total, &share_pct))| {
                Ok(ApplianceMetrics {
                    appliance: name.clone(),
                    mae_watts: mae(pred, truth)?,
                    sae: match sae(pred, truth) {
                        Ok(v) => Some(v),
                        Err(Error::UndefinedMetric(_)) => None,
                        Err(e) => return Err(e),
                    },
                    pred_total,
                    true_total: truth.iter().sum(),
                    share_pct,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            meta,
            appliances,
            plots: Vec::new(),
        })
    }

    pub fn mean_mae(&self) -> f64 {
        self.appliances.iter().map(|a| a.mae_watts).sum::<f64>() / self.appliances.len() as f64
    }

    pub fn get(&self, appliance: &str) -> Option<&ApplianceMetrics> {
        self.appliances.iter().find(|a| a.appliance == appliance)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("appliance,mae_watts,sae,pred_total,true_total,share_pct\n");
        for a in &self.appliances {
            let sae = a.sae.map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{}",
                csv_field(&a.appliance),
                a.mae_watts,
                sae,
                a.pred_total,
                a.true_total,
                a.share_pct
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    prefix.with_file_name(name)
}

/// Writes `<prefix>.csv`, `<prefix>.json`, and for SVG one
/// `<prefix>_<appliance>.svg` line plot per plot trace plus
/// `<prefix>_shares.svg`. Returns the written paths in that order.
pub fn emit_report(report: &EvalReport, formats: &[ReportFormat], prefix: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let prefix = prefix.as_ref();
    if report.appliances.is_empty() {
        return Err(Error::config("report has no appliances"));
    }
    if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut written = Vec::new();
    let mut put = |path: PathBuf, text: String| -> Result<()> {
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    for f in formats {
        match f {
            ReportFormat::Csv => put(with_suffix(prefix, ".csv"), report.to_csv())?,
            ReportFormat::Json => put(with_suffix(prefix, ".json"), report.to_json()?)?,
            ReportFormat::Svg => {
                for p in &report.plots {
                    put(with_suffix(prefix, &format!("_{}.svg", p.appliance)), svg::line_plot(p))?;
                }
                put(with_suffix(prefix, "_shares.svg"), svg::share_chart(&report.appliances))?;
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> EvalReport {
        let entries = vec![
            ("fridge".to_string(), vec![100.0, 0.0, 50.0], vec![90.0, 10.0, 50.0]),
            ("kettle".to_string(), vec![0.0, 300.0, 0.0], vec![0.0, 0.0, 0.0]),
        ];
        let mut r = EvalReport::from_predictions(ReportMeta::default(), &entries).unwrap();
        r.plots.push(PlotTrace {
            appliance: "fridge".into(),
            start: 10,
            mains: vec![200.0, 20.0, 80.0],
            truth: vec![90.0, 10.0, 50.0],
            prediction: vec![100.0, 0.0, 50.0],
        });
        r
    }

    #[test]
    fn metrics_and_shares() {
        let r = report();
        let f = r.get("fridge").unwrap();
        assert!((f.mae_watts - 20.0 / 3.0).abs() < 1e-12);
        assert_eq!(f.sae, Some(0.0));
        assert_eq!(r.get("kettle").unwrap().sae, None);
        assert_eq!(f.share_pct + r.get("kettle").unwrap().share_pct, 100.0);
    }

    #[test]
    fn csv_structure() {
        let csv = report().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "appliance,mae_watts,sae,pred_total,true_total,share_pct");
        assert!(lines[2].starts_with("kettle,100,,300,0,"));
    }

    #[test]
    fn emit_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let r = report();
        let all = [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Svg];
        let a = emit_report(&r, &all, dir.path().join("a/report")).unwrap();
        let b = emit_report(&r, &all, dir.path().join("b/report")).unwrap();
        assert_eq!(a.len(), 4);
        for (pa, pb) in a.iter().zip(&b) {
            assert_eq!(fs::read(pa).unwrap(), fs::read(pb).unwrap());
        }
        let json: EvalReport = EvalReport::read_json(&a[1]).unwrap();
        assert_eq!(json, r);
    }

    #[test]
    fn empty_report_is_an_error() {
        assert!(EvalReport::from_predictions(ReportMeta::default(), &[]).is_err());
        let mut r = report();
        r.appliances.clear();
        assert!(emit_report(&r, &[ReportFormat::Csv], "/tmp/unused").is_err());
    }
}
