use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{align_resample_with, load_series, AlignOptions, NormalizationStats, Role, SeriesFormat, SignalSeries};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HouseholdEntry {
    pub name: String,
    pub split: Split,
    pub mains: PathBuf,
    /// Appliance name to channel file.
    pub channels: BTreeMap<String, PathBuf>,
}

/// JSON description of a dataset: channel files per household plus
/// optional normalization overrides keyed by channel name (`"mains"` for the
/// aggregate). Relative paths resolve against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default)]
    pub format: SeriesFormat,
    /// Resampling period in seconds; the coarser native interval if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_period: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_gap: Option<i64>,
    pub appliances: Vec<String>,
    pub households: Vec<HouseholdEntry>,
    #[serde(default)]
    pub normalization: BTreeMap<String, NormalizationStats>,
    #[serde(skip)]
    base: PathBuf,
}

/// Raw channels of one household, not yet aligned.
#[derive(Clone, Debug)]
pub struct LoadedHousehold {
    pub name: String,
    pub split: Split,
    pub mains: SignalSeries,
    pub appliances: Vec<SignalSeries>,
}

impl LoadedHousehold {
    pub fn appliance(&self, name: &str) -> Option<&SignalSeries> {
        self.appliances.iter().find(|s| s.role().name() == name)
    }
}

impl DatasetManifest {
    pub fn new(format: SeriesFormat, appliances: Vec<String>, households: Vec<HouseholdEntry>) -> Self {
        Self {
            format,
            sample_period: None,
            max_gap: None,
            appliances,
            households,
            normalization: BTreeMap::new(),
            base: PathBuf::new(),
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Self = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        m.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn with_base(mut self, base: impl Into<PathBuf>) -> Self {
        self.base = base.into();
        self
    }

    pub fn base(&self) -> &Path {
        &self.base
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// Structural checks: unique appliance names, every household lists a
    /// channel for every appliance, valid override statistics.
    pub fn validate(&self) -> Result<()> {
        if self.appliances.is_empty() {
            return Err(Error::config("manifest lists no appliances"));
        }
        let mut seen = BTreeSet::new();
        for a in &self.appliances {
            if !seen.insert(a) {
                return Err(Error::config(format!("duplicate appliance `{a}`")));
            }
            if a == "mains" {
                return Err(Error::config("`mains` is reserved for the aggregate channel"));
            }
        }
        let mut names = BTreeSet::new();
        for h in &self.households {
            if !names.insert(&h.name) {
                return Err(Error::config(format!("duplicate household `{}`", h.name)));
            }
            for a in &self.appliances {
                if !h.channels.contains_key(a) {
                    return Err(Error::config(format!("household `{}` has no `{a}` channel", h.name)));
                }
            }
        }
        for (name, s) in &self.normalization {
            s.validate()
                .map_err(|e| Error::config(format!("normalization for `{name}`: {e}")))?;
        }
        Ok(())
    }

    /// Fails with the first channel file that does not exist.
    pub fn check_paths(&self) -> Result<()> {
        for h in &self.households {
            for p in std::iter::once(&h.mains).chain(h.channels.values()) {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(Error::config(format!("missing channel file {}", full.display())));
                }
            }
        }
        Ok(())
    }

    pub fn households_in(&self, split: Split) -> impl Iterator<Item = &HouseholdEntry> {
        self.households.iter().filter(move |h| h.split == split)
    }

    pub fn stats_override(&self, channel: &str) -> Option<NormalizationStats> {
        self.normalization.get(channel).copied()
    }

    pub fn align_options(&self) -> AlignOptions {
        AlignOptions {
            period: self.sample_period,
            max_gap: self.max_gap,
        }
    }

    pub fn load_household(&self, entry: &HouseholdEntry) -> Result<LoadedHousehold> {
        let mains = load_series(self.resolve(&entry.mains), self.format, Role::Mains)?;
        let appliances = self
            .appliances
            .iter()
            .map(|a| load_series(self.resolve(&entry.channels[a]), self.format, Role::appliance(a)))
            .collect::<Result<Vec<_>>>()?;
        Ok(LoadedHousehold {
            name: entry.name.clone(),
            split: entry.split,
            mains,
            appliances,
        })
    }

    /// Mains and one appliance channel on a common grid.
    pub fn aligned_pair(&self, house: &LoadedHousehold, appliance: &str) -> Result<(SignalSeries, SignalSeries)> {
        let a = house
            .appliance(appliance)
            .ok_or_else(|| Error::config(format!("household `{}` has no `{appliance}` channel", house.name)))?;
        align_resample_with(&house.mains, a, &self.align_options())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(name: &str, split: Split, apps: &[&str]) -> HouseholdEntry {
        HouseholdEntry {
            name: name.into(),
            split,
            mains: format!("{name}/mains.dat").into(),
            channels: apps.iter().map(|a| (a.to_string(), format!("{name}/{a}.dat").into())).collect(),
        }
    }

    #[test]
    fn json_round_trip_and_validation() {
        let mut m = DatasetManifest::new(
            SeriesFormat::Csv,
            vec!["kettle".into(), "fridge".into()],
            vec![entry("h1", Split::Train, &["kettle", "fridge"])],
        );
        m.normalization.insert("kettle".into(), NormalizationStats::new(700.0, 1000.0).unwrap());
        let text = serde_json::to_string(&m).unwrap();
        let back: DatasetManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        assert!(m.validate().is_ok());

        let mut dup = m.clone();
        dup.appliances.push("kettle".into());
        assert!(dup.validate().is_err());
        let mut missing = m.clone();
        missing.households.push(entry("h2", Split::Test, &["kettle"]));
        assert!(missing.validate().is_err());
    }

    #[test]
    fn relative_paths_resolve_against_base() {
        let m = DatasetManifest::new(SeriesFormat::Csv, vec!["k".into()], vec![]).with_base("/data/set");
        assert_eq!(m.resolve(Path::new("h1/k.dat")), PathBuf::from("/data/set/h1/k.dat"));
        assert_eq!(m.resolve(Path::new("/abs.dat")), PathBuf::from("/abs.dat"));
    }
}
