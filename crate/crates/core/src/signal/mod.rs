//! Loading, alignment, normalization and windowing of power series.

mod align;
mod io;
mod manifest;
mod norm;
mod series;
mod windows;

pub use align::{align_resample, align_resample_with, common_period, AlignOptions, DEFAULT_STALENESS_PERIODS};
pub use io::{format_series, load_series, parse_series, write_series, SeriesFormat};
pub use manifest::{DatasetManifest, HouseholdEntry, LoadedHousehold, Split};
pub use norm::{
    denormalize, denormalize_series, normalize, normalize_series, NormalizationStats, BUILTIN_STATS,
};
pub use series::{Role, SignalSeries};
pub use windows::{make_windows, midpoint_offset, window_count, window_tensor, WindowBatch, WindowSet};
