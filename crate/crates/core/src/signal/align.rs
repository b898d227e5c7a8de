use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::SignalSeries;

/// Staleness limit in periods when none is given.
pub const DEFAULT_STALENESS_PERIODS: i64 = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignOptions {
    /// Grid spacing in seconds; defaults to the coarser native interval of
    /// the two inputs.
    #[serde(default)]
    pub period: Option<i64>,
    /// Longest source gap, in seconds, that forward-fill may bridge;
    /// defaults to three periods.
    #[serde(default)]
    pub max_gap: Option<i64>,
}

/// Finest grid both series support: the coarser of the two native intervals.
pub fn common_period(a: &SignalSeries, b: &SignalSeries) -> i64 {
    a.native_period().max(b.native_period())
}

/// Resamples both series onto `t0, t0 + period, …` over their common time
/// range using forward-fill with the default staleness limit.
pub fn align_resample(mains: &SignalSeries, appliance: &SignalSeries, period: i64) -> Result<(SignalSeries, SignalSeries)> {
    align_resample_with(
        mains,
        appliance,
        &AlignOptions {
            period: Some(period),
            max_gap: None,
        },
    )
}

/// The grid starts at the later of the two first timestamps and ends at or
/// before the earlier of the two last timestamps. A grid point is dropped
/// from both outputs when, in either input, it falls strictly inside a gap
/// between consecutive readings longer than `max_gap`.
pub fn align_resample_with(
    mains: &SignalSeries,
    appliance: &SignalSeries,
    opts: &AlignOptions,
) -> Result<(SignalSeries, SignalSeries)> {
    let period = opts.period.unwrap_or_else(|| common_period(mains, appliance));
    if period <= 0 {
        return Err(Error::config(format!("resampling period must be positive, got {period}")));
    }
    let max_gap = opts.max_gap.unwrap_or(DEFAULT_STALENESS_PERIODS * period);
    if max_gap < 0 {
        return Err(Error::config(format!("staleness limit must be non-negative, got {max_gap}")));
    }
    let t0 = mains.start().max(appliance.start());
    let t1 = mains.end().min(appliance.end());
    if t0 > t1 {
        return Err(Error::NoOverlap);
    }

    let mut fa = ForwardFill::new(mains, max_gap);
    let mut fb = ForwardFill::new(appliance, max_gap);
    let mut ts = Vec::new();
    let (mut wa, mut wb) = (Vec::new(), Vec::new());
    let mut g = t0;
    while g <= t1 {
        if let (Some(a), Some(b)) = (fa.at(g), fb.at(g)) {
            ts.push(g);
            wa.push(a);
            wb.push(b);
        }
        g += period;
    }
    if ts.is_empty() {
        return Err(Error::NoOverlap);
    }
    Ok((
        SignalSeries::new(ts.clone(), wa, mains.role().clone())?,
        SignalSeries::new(ts, wb, appliance.role().clone())?,
    ))
}

/// Cursor for monotonically increasing queries.
struct ForwardFill<'a> {
    ts: &'a [i64],
    w: &'a [f64],
    idx: usize,
    max_gap: i64,
}

impl<'a> ForwardFill<'a> {
    fn new(s: &'a SignalSeries, max_gap: i64) -> Self {
        Self {
            ts: s.timestamps(),
            w: s.watts(),
            idx: 0,
            max_gap,
        }
    }

    /// Last reading at or before `t`, unless `t` sits inside an over-long gap.
    fn at(&mut self, t: i64) -> Option<f64> {
        while self.idx + 1 < self.ts.len() && self.ts[self.idx + 1] <= t {
            self.idx += 1;
        }
        let here = self.ts[self.idx];
        if here > t {
            return None;
        }
        if here < t {
            let next = *self.ts.get(self.idx + 1)?;
            if next - here > self.max_gap {
                return None;
            }
        }
        Some(self.w[self.idx])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Role;

    fn series(ts: &[i64], w: &[f64], role: Role) -> SignalSeries {
        SignalSeries::new(ts.to_vec(), w.to_vec(), role).unwrap()
    }

    #[test]
    fn identical_grids_restrict_to_overlap() {
        let m = series(&[0, 3, 6, 9, 12], &[1., 2., 3., 4., 5.], Role::Mains);
        let a = series(&[3, 6, 9, 12, 15], &[10., 20., 30., 40., 50.], Role::appliance("k"));
        let (am, aa) = align_resample(&m, &a, 3).unwrap();
        assert_eq!(am.timestamps(), &[3, 6, 9, 12]);
        assert_eq!(am.watts(), &[2., 3., 4., 5.]);
        assert_eq!(aa.watts(), &[10., 20., 30., 40.]);
        assert_eq!(aa.role(), &Role::appliance("k"));
    }

    #[test]
    fn one_second_mains_onto_three_second_grid() {
        // Ten mains samples at 1 s; appliance at 3 s over the same span.
        let mw: Vec<f64> = (0..10).map(|i| 100.0 + i as f64).collect();
        let m = series(&(0..10).collect::<Vec<_>>(), &mw, Role::Mains);
        let a = series(&[0, 3, 6, 9], &[5., 6., 7., 8.], Role::appliance("f"));
        let (am, aa) = align_resample(&m, &a, 3).unwrap();
        assert_eq!(am.timestamps(), &[0, 3, 6, 9]);
        assert_eq!(am.watts(), &[100., 103., 106., 109.]);
        assert_eq!(aa, a);
    }

    #[test]
    fn disjoint_ranges() {
        let m = series(&[0, 1], &[1., 1.], Role::Mains);
        let a = series(&[5, 6], &[1., 1.], Role::Mains);
        assert!(matches!(align_resample(&m, &a, 1), Err(Error::NoOverlap)));
    }

    #[test]
    fn long_gaps_are_dropped_from_both() {
        let m = series(&[0, 1, 2, 10, 11], &[1., 2., 3., 4., 5.], Role::Mains);
        let a = series(&(0..12).collect::<Vec<_>>(), &[9.; 12], Role::appliance("x"));
        let (am, aa) = align_resample(&m, &a, 1).unwrap();
        assert_eq!(am.timestamps(), &[0, 1, 2, 10, 11]);
        assert_eq!(aa.timestamps(), am.timestamps());
        // A gap within the limit is bridged by forward-fill.
        let (bm, _) = align_resample_with(&m, &a, &AlignOptions { period: Some(1), max_gap: Some(8) }).unwrap();
        assert_eq!(bm.len(), 12);
        assert_eq!(bm.watts()[5], 3.0);
    }

    #[test]
    fn default_period_is_coarser_native_interval() {
        let m = series(&(0..10).collect::<Vec<_>>(), &[1.; 10], Role::Mains);
        let a = series(&[0, 3, 6, 9], &[2.; 4], Role::appliance("f"));
        let (am, _) = align_resample_with(&m, &a, &AlignOptions::default()).unwrap();
        assert_eq!(am.timestamps(), &[0, 3, 6, 9]);
    }
}
