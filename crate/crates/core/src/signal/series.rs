use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a series measures.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Mains,
    Appliance(String),
}

impl Role {
    pub fn appliance(name: impl Into<String>) -> Self {
        Role::Appliance(name.into())
    }

    /// `"mains"` or the appliance name.
    pub fn name(&self) -> &str {
        match self {
            Role::Mains => "mains",
            Role::Appliance(n) => n,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Power readings in watts at strictly increasing unix-second timestamps.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalSeries {
    timestamps: Vec<i64>,
    watts: Vec<f64>,
    role: Role,
}

impl SignalSeries {
    pub fn new(timestamps: Vec<i64>, watts: Vec<f64>, role: Role) -> Result<Self> {
        if timestamps.len() != watts.len() {
            return Err(Error::shape(format!(
                "{} timestamps but {} readings",
                timestamps.len(),
                watts.len()
            )));
        }
        if timestamps.is_empty() {
            return Err(Error::EmptySeries);
        }
        for (i, pair) in timestamps.windows(2).enumerate() {
            if pair[1] <= pair[0] {
                return Err(Error::NonMonotonic {
                    row: i + 2,
                    previous: pair[0],
                    timestamp: pair[1],
                });
            }
        }
        if let Some(i) = watts.iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFinite(format!("{role} reading at row {}", i + 1)));
        }
        Ok(Self { timestamps, watts, role })
    }

    /// Like [`SignalSeries::new`], also rejecting negative readings.
    pub fn checked(timestamps: Vec<i64>, watts: Vec<f64>, role: Role) -> Result<Self> {
        let s = Self::new(timestamps, watts, role)?;
        s.check_nonnegative()?;
        Ok(s)
    }

    /// Samples at `start + i * period`.
    pub fn regular(start: i64, period: i64, watts: Vec<f64>, role: Role) -> Result<Self> {
        if period <= 0 {
            return Err(Error::config(format!("period must be positive, got {period}")));
        }
        let ts = (0..watts.len() as i64).map(|i| start + i * period).collect();
        Self::new(ts, watts, role)
    }

    pub fn check_nonnegative(&self) -> Result<()> {
        match self.watts.iter().position(|&w| w < 0.0) {
            Some(i) => Err(Error::config(format!(
                "negative reading {} W in {} at row {}",
                self.watts[i],
                self.role,
                i + 1
            ))),
            None => Ok(()),
        }
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn watts(&self) -> &[f64] {
        &self.watts
    }

    pub fn role(&self) -> &Role {
        &self.role
    }

    pub fn len(&self) -> usize {
        self.watts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.watts.is_empty()
    }

    pub fn start(&self) -> i64 {
        self.timestamps[0]
    }

    pub fn end(&self) -> i64 {
        *self.timestamps.last().expect("series is never empty")
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    /// Replaces readings, keeping timestamps and role.
    pub fn with_watts(&self, watts: Vec<f64>) -> Result<Self> {
        Self::new(self.timestamps.clone(), watts, self.role.clone())
    }

    /// Samples `range`, which must be non-empty and in bounds.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.len() {
            return Err(Error::Config(format!("slice {range:?} of a {}-sample series", self.len())));
        }
        Ok(Self {
            timestamps: self.timestamps[range.clone()].to_vec(),
            watts: self.watts[range].to_vec(),
            role: self.role.clone(),
        })
    }

    /// Median spacing between consecutive timestamps; 1 for a single sample.
    pub fn native_period(&self) -> i64 {
        let mut d: Vec<i64> = self.timestamps.windows(2).map(|p| p[1] - p[0]).collect();
        if d.is_empty() {
            return 1;
        }
        d.sort_unstable();
        d[d.len() / 2]
    }

    /// Sum of readings in watt-samples.
    pub fn total(&self) -> f64 {
        self.watts.iter().sum()
    }
}
