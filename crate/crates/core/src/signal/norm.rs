use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::SignalSeries;

/// Mean and standard deviation, in watts, of one channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: f64,
    pub std: f64,
}

/// Published per-channel statistics: (name, mean, std).
pub const BUILTIN_STATS: [(&str, f64, f64); 6] = [
    ("aggregate", 522.0, 814.0),
    ("kettle", 700.0, 1000.0),
    ("microwave", 500.0, 800.0),
    ("fridge", 200.0, 400.0),
    ("dishwasher", 700.0, 1000.0),
    ("washing machine", 400.0, 700.0),
];

fn canonical(name: &str) -> String {
    let n: String = name
        .chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect();
    match n.as_str() {
        "mains" | "aggregate" => "aggregate".into(),
        "washingmachine" | "washer" => "washingmachine".into(),
        _ => n,
    }
}

impl NormalizationStats {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        let s = Self { mean, std };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mean.is_finite() || !self.std.is_finite() || self.std <= 0.0 {
            return Err(Error::config(format!(
                "normalization needs finite mean and std > 0, got mean {} std {}",
                self.mean, self.std
            )));
        }
        Ok(())
    }

    /// Built-in statistics for a channel name such as `"kettle"`,
    /// `"washing_machine"` or `"mains"`.
    pub fn builtin(name: &str) -> Option<Self> {
        let key = canonical(name);
        BUILTIN_STATS
            .iter()
            .find(|(n, _, _)| canonical(n) == key)
            .map(|&(_, mean, std)| Self { mean, std })
    }

    /// Population mean and standard deviation of `values`.
    pub fn from_data(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySeries);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self::new(mean, var.sqrt())
    }

    pub fn from_series<'a>(series: impl IntoIterator<Item = &'a SignalSeries>) -> Result<Self> {
        let all: Vec<f64> = series.into_iter().flat_map(|s| s.watts().iter().copied()).collect();
        Self::from_data(&all)
    }

    #[inline]
    pub fn normalize_value(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    #[inline]
    pub fn denormalize_value(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

pub fn normalize(values: &[f64], stats: &NormalizationStats) -> Result<Vec<f64>> {
    stats.validate()?;
    Ok(values.iter().map(|&x| stats.normalize_value(x)).collect())
}

pub fn denormalize(values: &[f64], stats: &NormalizationStats) -> Result<Vec<f64>> {
    stats.validate()?;
    Ok(values.iter().map(|&z| stats.denormalize_value(z)).collect())
}

/// Normalized copy of a series. The result may hold negative values, so
/// only the unchecked constructor is used.
pub fn normalize_series(series: &SignalSeries, stats: &NormalizationStats) -> Result<SignalSeries> {
    series.with_watts(normalize(series.watts(), stats)?)
}

pub fn denormalize_series(series: &SignalSeries, stats: &NormalizationStats) -> Result<SignalSeries> {
    series.with_watts(denormalize(series.watts(), stats)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_lookup() {
        let agg = NormalizationStats::builtin("mains").unwrap();
        assert_eq!((agg.mean, agg.std), (522.0, 814.0));
        assert_eq!(NormalizationStats::builtin("Washing_Machine").unwrap().std, 700.0);
        assert!(NormalizationStats::builtin("toaster").is_none());
    }

    #[test]
    fn published_examples() {
        let agg = NormalizationStats::builtin("aggregate").unwrap();
        assert_eq!(agg.normalize_value(522.0), 0.0);
        let kettle = NormalizationStats::builtin("kettle").unwrap();
        assert_eq!(kettle.normalize_value(1700.0), 1.0);
    }

    #[test]
    fn std_must_be_positive() {
        assert!(NormalizationStats::new(1.0, 0.0).is_err());
        assert!(normalize(&[1.0], &NormalizationStats { mean: 0.0, std: -1.0 }).is_err());
        assert!(NormalizationStats::from_data(&[3.0, 3.0]).is_err());
    }

    #[test]
    fn from_data_population_moments() {
        let s = NormalizationStats::from_data(&[1.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std), (2.0, 1.0));
    }
}
