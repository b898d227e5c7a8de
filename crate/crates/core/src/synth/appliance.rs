use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One step of a multi-phase program.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub power: f64,
    pub duration: usize,
}

/// Activation pattern of an appliance. Durations are in samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ApplianceKind {
    /// Markov on/off switching; ON and OFF spells are geometric with the
    /// given means.
    TwoState { on_power: f64, mean_on: f64, mean_off: f64 },
    /// Regular duty cycle (fridge-like), each spell jittered uniformly by
    /// up to `jitter` of its nominal length.
    Cyclic {
        on_power: f64,
        on_duration: usize,
        off_duration: usize,
        #[serde(default)]
        jitter: f64,
    },
    /// Fixed program of phases separated by geometric idle spells
    /// (washing-machine-like).
    MultiPhase { phases: Vec<Phase>, mean_off: f64 },
    /// Short fixed-length bursts at high power (kettle-like).
    Spike { on_power: f64, duration: usize, mean_off: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApplianceModel {
    pub name: String,
    #[serde(flatten)]
    pub kind: ApplianceKind,
    /// Draw while idle.
    #[serde(default)]
    pub standby_power: f64,
}

fn check_power(p: f64, what: &str) -> Result<()> {
    if p.is_finite() && p >= 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!("{what} must be a finite power >= 0, got {p}")))
    }
}

fn check_mean(m: f64, what: &str) -> Result<()> {
    if m.is_finite() && m >= 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("{what} must be at least 1 sample, got {m}")))
    }
}

fn check_len(d: usize, what: &str) -> Result<()> {
    if d >= 1 {
        Ok(())
    } else {
        Err(Error::config(format!("{what} must be at least 1 sample")))
    }
}

/// Spell length with mean `mean` >= 1: one plus a geometric number of
/// failures.
fn geometric_len<R: Rng>(mean: f64, rng: &mut R) -> usize {
    let g = Geometric::new(1.0 / mean).expect("mean >= 1 gives p in (0, 1]");
    1 + g.sample(rng) as usize
}

fn jittered<R: Rng>(nominal: usize, jitter: f64, rng: &mut R) -> usize {
    if jitter == 0.0 {
        return nominal;
    }
    let f = rng.random_range(1.0 - jitter..=1.0 + jitter);
    ((nominal as f64 * f).round() as usize).max(1)
}

impl ApplianceModel {
    pub fn new(name: impl Into<String>, kind: ApplianceKind) -> Self {
        Self {
            name: name.into(),
            kind,
            standby_power: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::config("appliance name must not be empty"));
        }
        check_power(self.standby_power, "standby_power")?;
        match &self.kind {
            ApplianceKind::TwoState { on_power, mean_on, mean_off } => {
                check_power(*on_power, "on_power")?;
                check_mean(*mean_on, "mean_on")?;
                check_mean(*mean_off, "mean_off")
            }
            ApplianceKind::Cyclic {
                on_power,
                on_duration,
                off_duration,
                jitter,
            } => {
                check_power(*on_power, "on_power")?;
                check_len(*on_duration, "on_duration")?;
                check_len(*off_duration, "off_duration")?;
                if !(0.0..1.0).contains(jitter) {
                    return Err(Error::config(format!("jitter must be in [0, 1), got {jitter}")));
                }
                Ok(())
            }
            ApplianceKind::MultiPhase { phases, mean_off } => {
                if phases.is_empty() {
                    return Err(Error::config("multi-phase appliance needs at least one phase"));
                }
                for p in phases {
                    check_power(p.power, "phase power")?;
                    check_len(p.duration, "phase duration")?;
                }
                check_mean(*mean_off, "mean_off")
            }
            ApplianceKind::Spike {
                on_power,
                duration,
                mean_off,
            } => {
                check_power(*on_power, "on_power")?;
                check_len(*duration, "duration")?;
                check_mean(*mean_off, "mean_off")
            }
        }
    }

    /// Copy with every active power multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut m = self.clone();
        match &mut m.kind {
            ApplianceKind::TwoState { on_power, .. }
            | ApplianceKind::Cyclic { on_power, .. }
            | ApplianceKind::Spike { on_power, .. } => *on_power *= factor,
            ApplianceKind::MultiPhase { phases, .. } => phases.iter_mut().for_each(|p| p.power *= factor),
        }
        m
    }

    /// Power trace of `samples` readings.
    pub fn trace<R: Rng>(&self, samples: usize, rng: &mut R) -> Vec<f64> {
        let idle = self.standby_power;
        let mut out = Vec::with_capacity(samples);
        match &self.kind {
            ApplianceKind::TwoState { on_power, mean_on, mean_off } => {
                let mut on = rng.random::<f64>() < mean_on / (mean_on + mean_off);
                let (p_stop, p_start) = (1.0 / mean_on, 1.0 / mean_off);
                for _ in 0..samples {
                    out.push(if on { *on_power } else { idle });
                    let u = rng.random::<f64>();
                    on = if on { u >= p_stop } else { u < p_start };
                }
            }
            ApplianceKind::Cyclic {
                on_power,
                on_duration,
                off_duration,
                jitter,
            } => {
                // Random phase: skip into the first cycle.
                let mut skip = rng.random_range(0..on_duration + off_duration);
                while out.len() < samples {
                    for (power, nominal) in [(*on_power, *on_duration), (idle, *off_duration)] {
                        let mut d = jittered(nominal, *jitter, rng);
                        let s = skip.min(d);
                        d -= s;
                        skip -= s;
                        out.extend(std::iter::repeat_n(power, d));
                    }
                }
            }
            ApplianceKind::MultiPhase { phases, mean_off } => {
                while out.len() < samples {
                    out.extend(std::iter::repeat_n(idle, geometric_len(*mean_off, rng)));
                    for p in phases {
                        out.extend(std::iter::repeat_n(p.power, p.duration));
                    }
                }
            }
            ApplianceKind::Spike {
                on_power,
                duration,
                mean_off,
            } => {
                while out.len() < samples {
                    out.extend(std::iter::repeat_n(idle, geometric_len(*mean_off, rng)));
                    out.extend(std::iter::repeat_n(*on_power, *duration));
                }
            }
        }
        out.truncate(samples);
        out
    }
}
