use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{Role, SignalSeries};
use crate::synth::{ApplianceKind, ApplianceModel, Phase};

/// Seconds between simulated readings.
pub const DEFAULT_PERIOD: i64 = 6;
/// Timestamp of the first simulated reading.
pub const DEFAULT_START: i64 = 1_300_000_000;

/// Additive Gaussian measurement noise on the mains.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
    /// Optional per-step multipliers of `sigma`, applied cyclically.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub profile: Vec<f64>,
}

impl NoiseModel {
    pub fn gaussian(sigma: f64) -> Self {
        Self { sigma, profile: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(Error::config(format!("noise sigma must be >= 0, got {}", self.sigma)));
        }
        if self.profile.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::config("noise profile entries must be finite and >= 0"));
        }
        Ok(())
    }

    fn sigma_at(&self, t: usize) -> f64 {
        if self.profile.is_empty() {
            self.sigma
        } else {
            self.sigma * self.profile[t % self.profile.len()]
        }
    }
}

/// One simulated home: mains plus ground-truth appliance traces on the same
/// timestamps.
#[derive(Clone, Debug, PartialEq)]
pub struct Household {
    pub name: String,
    pub seed: u64,
    pub mains: SignalSeries,
    pub appliances: Vec<SignalSeries>,
}

/// SplitMix64 finalizer; used to derive independent sub-seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `mains(t) = max(0, Σ_i x_i(t) + ε(t))` with `ε(t) ~ N(0, σ_t²)`.
pub fn simulate_household(
    models: &[ApplianceModel],
    noise: &NoiseModel,
    samples: usize,
    seed: u64,
) -> Result<Household> {
    simulate_household_at(models, noise, samples, seed, DEFAULT_START, DEFAULT_PERIOD)
}

pub fn simulate_household_at(
    models: &[ApplianceModel],
    noise: &NoiseModel,
    samples: usize,
    seed: u64,
    start: i64,
    period: i64,
) -> Result<Household> {
    if samples == 0 {
        return Err(Error::config("a household needs at least one sample"));
    }
    if models.is_empty() {
        return Err(Error::config("a household needs at least one appliance"));
    }
    noise.validate()?;
    for m in models {
        m.validate()?;
    }
    let traces: Vec<Vec<f64>> = models
        .iter()
        .enumerate()
        .map(|(i, m)| m.trace(samples, &mut ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64 + 1))))
        .collect();
    let mut mains = vec![0.0; samples];
    for tr in &traces {
        for (m, &x) in mains.iter_mut().zip(tr) {
            *m += x;
        }
    }
    if noise.sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0));
        let std = Normal::new(0.0, 1.0).expect("unit normal");
        for (t, m) in mains.iter_mut().enumerate() {
            *m = (*m + noise.sigma_at(t) * std.sample(&mut rng)).max(0.0);
        }
    }
    let appliances = traces
        .into_iter()
        .zip(models)
        .map(|(tr, m)| SignalSeries::regular(start, period, tr, Role::appliance(&m.name)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Household {
        name: String::new(),
        seed,
        mains: SignalSeries::regular(start, period, mains, Role::Mains)?,
        appliances,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.validation, self.test];
        if f.iter().any(|x| !x.is_finite() || *x < 0.0) || ((f.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "split fractions must be non-negative and sum to 1, got ({}, {}, {})",
                self.train, self.validation, self.test
            )));
        }
        Ok(())
    }

    /// Household counts: train and validation are rounded, test takes the
    /// remainder.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        let tr = (n as f64 * self.train).round() as usize;
        let va = (n as f64 * self.validation).round() as usize;
        if tr + va > n {
            return Err(Error::config(format!("split fractions overflow {n} households")));
        }
        Ok((tr, va, n - tr - va))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FleetConfig {
    pub households: usize,
    pub samples: usize,
    #[serde(default = "default_period")]
    pub period: i64,
    pub appliances: Vec<ApplianceModel>,
    pub noise: NoiseModel,
    pub split: SplitFractions,
    /// Each household scales every appliance's power by a factor drawn
    /// uniformly from `[1 - v, 1 + v]`.
    #[serde(default)]
    pub power_variation: f64,
}

fn default_period() -> i64 {
    DEFAULT_PERIOD
}

impl FleetConfig {
    /// Three appliances (fridge, kettle, washing machine), seven homes of
    /// 10 800 readings split 5/1/1.
    pub fn desk() -> Self {
        let mut fridge = ApplianceModel::new(
            "fridge",
            ApplianceKind::Cyclic {
                on_power: 150.0,
                on_duration: 120,
                off_duration: 240,
                jitter: 0.2,
            },
        );
        fridge.standby_power = 2.0;
        let kettle = ApplianceModel::new(
            "kettle",
            ApplianceKind::Spike {
                on_power: 2000.0,
                duration: 30,
                mean_off: 600.0,
            },
        );
        let washer = ApplianceModel::new(
            "washing_machine",
            ApplianceKind::MultiPhase {
                phases: vec![
                    Phase { power: 500.0, duration: 60 },
                    Phase { power: 2000.0, duration: 20 },
                    Phase { power: 300.0, duration: 80 },
                    Phase { power: 600.0, duration: 40 },
                ],
                mean_off: 2000.0,
            },
        );
        Self {
            households: 7,
            samples: 10_800,
            period: DEFAULT_PERIOD,
            appliances: vec![fridge, kettle, washer],
            noise: NoiseModel::gaussian(20.0),
            split: SplitFractions {
                train: 0.7,
                validation: 0.15,
                test: 0.15,
            },
            power_variation: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.households == 0 {
            return Err(Error::config("fleet needs at least one household"));
        }
        if self.samples == 0 {
            return Err(Error::config("households need at least one sample"));
        }
        if self.period <= 0 {
            return Err(Error::config("sample period must be positive"));
        }
        if self.appliances.is_empty() {
            return Err(Error::config("fleet needs at least one appliance"));
        }
        let mut names: Vec<&str> = self.appliances.iter().map(|a| a.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("appliance names must be unique"));
        }
        if !(0.0..1.0).contains(&self.power_variation) {
            return Err(Error::config("power_variation must be in [0, 1)"));
        }
        for a in &self.appliances {
            a.validate()?;
        }
        self.noise.validate()?;
        self.split.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fleet {
    pub train: Vec<Household>,
    pub validation: Vec<Household>,
    pub test: Vec<Household>,
}

impl Fleet {
    pub fn all(&self) -> impl Iterator<Item = &Household> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }
}

/// Households `house_1 … house_n`, each with its own seed derived from
/// `seed`, assigned to splits in order.
pub fn simulate_fleet(config: &FleetConfig, seed: u64) -> Result<Fleet> {
    config.validate()?;
    let (n_train, n_val, _) = config.split.sizes(config.households)?;
    let mut homes = Vec::with_capacity(config.households);
    for h in 0..config.households {
        let hseed = mix_seed(seed, 1_000 + h as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(hseed);
        let models: Vec<ApplianceModel> = config
            .appliances
            .iter()
            .map(|m| {
                let v = config.power_variation;
                let f = if v > 0.0 { rng.random_range(1.0 - v..=1.0 + v) } else { 1.0 };
                m.scaled(f)
            })
            .collect();
        let start = DEFAULT_START;
        let mut home = simulate_household_at(&models, &config.noise, config.samples, hseed, start, config.period)?;
        home.name = format!("house_{}", h + 1);
        homes.push(home);
    }
    let test = homes.split_off(n_train + n_val);
    let validation = homes.split_off(n_train);
    Ok(Fleet {
        train: homes,
        validation,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> ApplianceModel {
        ApplianceModel::new("a", ApplianceKind::TwoState { on_power: 1000.0, mean_on: 20.0, mean_off: 60.0 })
    }

    #[test]
    fn noiseless_mains_is_the_sum() {
        let fleet = FleetConfig {
            noise: NoiseModel::gaussian(0.0),
            households: 2,
            samples: 2000,
            ..FleetConfig::desk()
        };
        let f = simulate_fleet(&fleet, 3).unwrap();
        for h in f.all() {
            for t in 0..h.mains.len() {
                let s: f64 = h.appliances.iter().map(|a| a.watts()[t]).sum();
                assert_eq!(h.mains.watts()[t] - s, 0.0);
            }
        }
    }

    #[test]
    fn energy_of_two_state_trace() {
        let h = simulate_household(&[two_state()], &NoiseModel::gaussian(0.0), 5000, 9).unwrap();
        let trace = h.appliances[0].watts();
        let d = trace.iter().filter(|&&w| w == 1000.0).count();
        assert!(d > 0);
        assert_eq!(trace.iter().sum::<f64>(), 1000.0 * d as f64);
    }

    #[test]
    fn seeded_determinism() {
        let a = simulate_household(&[two_state()], &NoiseModel::gaussian(5.0), 500, 4).unwrap();
        let b = simulate_household(&[two_state()], &NoiseModel::gaussian(5.0), 500, 4).unwrap();
        let c = simulate_household(&[two_state()], &NoiseModel::gaussian(5.0), 500, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.mains.watts().iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn split_sizes() {
        let f = |t, v, s| SplitFractions { train: t, validation: v, test: s };
        assert_eq!(f(1.0, 0.0, 0.0).sizes(5).unwrap(), (5, 0, 0));
        assert_eq!(f(0.8, 0.1, 0.1).sizes(10).unwrap(), (8, 1, 1));
        assert!(f(0.8, 0.1, 0.2).sizes(10).is_err());
        assert!(f(1.2, -0.2, 0.0).sizes(10).is_err());
    }

    #[test]
    fn fleet_households_have_distinct_seeds() {
        let cfg = FleetConfig {
            households: 10,
            samples: 50,
            split: SplitFractions { train: 0.8, validation: 0.1, test: 0.1 },
            ..FleetConfig::desk()
        };
        let f = simulate_fleet(&cfg, 11).unwrap();
        assert_eq!((f.train.len(), f.validation.len(), f.test.len()), (8, 1, 1));
        let mut seeds: Vec<u64> = f.all().map(|h| h.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 10);
        assert_eq!(simulate_fleet(&cfg, 11).unwrap(), f);
    }

    #[test]
    fn preconditions() {
        assert!(simulate_household(&[], &NoiseModel::gaussian(0.0), 10, 0).is_err());
        assert!(simulate_household(&[two_state()], &NoiseModel::gaussian(0.0), 0, 0).is_err());
        assert!(simulate_household(&[two_state()], &NoiseModel::gaussian(-1.0), 10, 0).is_err());
    }
}
