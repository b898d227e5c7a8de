use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};
use crate::signal::{NormalizationStats, SignalSeries};

/// Number of full windows of width `window` at `stride` over `len` samples.
pub fn window_count(len: usize, window: usize, stride: usize) -> usize {
    if len < window || window == 0 || stride == 0 {
        0
    } else {
        (len - window) / stride + 1
    }
}

/// Offset of the predicted sample inside a window.
pub fn midpoint_offset(window: usize) -> usize {
    window / 2
}

/// `[B, W]` tensor of the windows of `values` starting at `starts`.
pub fn window_tensor<T: Real>(values: &[f64], starts: &[usize], window: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(starts.len() * window);
    for &s in starts {
        let w = values
            .get(s..s + window)
            .ok_or(Error::TooShort { len: values.len(), window: s + window })?;
        data.extend(w.iter().map(|&v| T::of_f64(v)));
    }
    Tensor::from_vec([starts.len(), window], data)
}

/// Materialized training batch.
#[derive(Clone, Debug)]
pub struct WindowBatch<T> {
    /// `[B, W]` normalized mains.
    pub windows: Tensor<T>,
    /// `[B]` normalized appliance power at each window's midpoint.
    pub targets: Tensor<T>,
    /// The same targets in watts, taken from the source series unchanged.
    pub raw_targets: Vec<f64>,
    pub window_size: usize,
    pub midpoint_offset: usize,
}

#[derive(Clone, Debug)]
struct Segment {
    mains: Vec<f64>,
    targets: Vec<f64>,
    raw: Vec<f64>,
}

/// Windows over one or more aligned (mains, appliance) segments, e.g. one
/// segment per household. A window never spans two segments.
///
/// Window `t` of a segment covers samples `[t, t + W)` and predicts the
/// appliance reading at `t + W / 2`.
#[derive(Clone, Debug)]
pub struct WindowSet {
    window: usize,
    stride: usize,
    mains_stats: NormalizationStats,
    appliance_stats: NormalizationStats,
    segments: Vec<Segment>,
    index: Vec<(u32, u32)>,
}

impl WindowSet {
    pub fn new(
        window: usize,
        stride: usize,
        mains_stats: NormalizationStats,
        appliance_stats: NormalizationStats,
    ) -> Result<Self> {
        if window == 0 || window.is_multiple_of(2) {
            return Err(Error::config(format!("window {window} must be odd")));
        }
        if stride == 0 {
            return Err(Error::config("stride must be at least 1"));
        }
        mains_stats.validate()?;
        appliance_stats.validate()?;
        Ok(Self {
            window,
            stride,
            mains_stats,
            appliance_stats,
            segments: Vec::new(),
            index: Vec::new(),
        })
    }

    /// Adds an aligned pair; both series must share timestamps.
    pub fn add(&mut self, mains: &SignalSeries, appliance: &SignalSeries) -> Result<()> {
        if mains.timestamps() != appliance.timestamps() {
            return Err(Error::shape(format!(
                "{} and {} are not aligned",
                mains.role(),
                appliance.role()
            )));
        }
        let len = mains.len();
        if len < self.window {
            return Err(Error::TooShort { len, window: self.window });
        }
        let seg = self.segments.len() as u32;
        let n = window_count(len, self.window, self.stride);
        self.index
            .extend((0..n).map(|k| (seg, (k * self.stride) as u32)));
        let off = midpoint_offset(self.window);
        let raw = appliance.watts()[off..len - off].to_vec();
        self.segments.push(Segment {
            mains: mains.watts().iter().map(|&x| self.mains_stats.normalize_value(x)).collect(),
            targets: raw.iter().map(|&x| self.appliance_stats.normalize_value(x)).collect(),
            raw,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn midpoint_offset(&self) -> usize {
        midpoint_offset(self.window)
    }

    pub fn mains_stats(&self) -> &NormalizationStats {
        &self.mains_stats
    }

    pub fn appliance_stats(&self) -> &NormalizationStats {
        &self.appliance_stats
    }

    /// `(segment, start)` of window `i`.
    pub fn position(&self, i: usize) -> (usize, usize) {
        let (s, t) = self.index[i];
        (s as usize, t as usize)
    }

    /// Normalized mains values of window `i`.
    pub fn mains(&self, i: usize) -> &[f64] {
        let (s, t) = self.position(i);
        &self.segments[s].mains[t..t + self.window]
    }

    pub fn target(&self, i: usize) -> f64 {
        let (s, t) = self.position(i);
        self.segments[s].targets[t]
    }

    /// Midpoint appliance reading in watts, exactly as loaded.
    pub fn raw_target(&self, i: usize) -> f64 {
        let (s, t) = self.position(i);
        self.segments[s].raw[t]
    }

    pub fn raw_targets(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.raw_target(i)).collect()
    }

    pub fn batch<T: Real>(&self, indices: &[usize]) -> Result<WindowBatch<T>> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut windows = Vec::with_capacity(indices.len() * self.window);
        let mut targets = Vec::with_capacity(indices.len());
        let mut raw_targets = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::shape(format!("window {i} out of range ({} windows)", self.len())));
            }
            windows.extend(self.mains(i).iter().map(|&v| T::of_f64(v)));
            targets.push(T::of_f64(self.target(i)));
            raw_targets.push(self.raw_target(i));
        }
        Ok(WindowBatch {
            windows: Tensor::from_vec([indices.len(), self.window], windows)?,
            targets: Tensor::from_vec([indices.len()], targets)?,
            raw_targets,
            window_size: self.window,
            midpoint_offset: self.midpoint_offset(),
        })
    }

    /// Consecutive batches of at most `size` windows in index order.
    pub fn batches<T: Real>(&self, size: usize) -> impl Iterator<Item = Result<WindowBatch<T>>> + '_ {
        let size = size.max(1);
        (0..self.len())
            .step_by(size)
            .map(move |s| self.batch(&(s..(s + size).min(self.len())).collect::<Vec<_>>()))
    }
}

/// Windows over a single aligned pair.
pub fn make_windows(
    mains: &SignalSeries,
    appliance: &SignalSeries,
    window: usize,
    stride: usize,
    mains_stats: NormalizationStats,
    appliance_stats: NormalizationStats,
) -> Result<WindowSet> {
    let mut set = WindowSet::new(window, stride, mains_stats, appliance_stats)?;
    set.add(mains, appliance)?;
    Ok(set)
}
