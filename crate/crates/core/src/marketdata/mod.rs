//! Raw bar ingestion, indicator computation and rolling feature windows.

mod bars;
mod dataset;
mod indicators;
pub mod synthetic;

pub(crate) use dataset::hex_digest;

pub use bars::{load_ohlcv, parse_date, read_ohlcv, BarSet, OhlcvBar, TickerSeries};
pub use dataset::{
    build_windows, parse_splits, price_targets, Dataset, DatasetManifest, FeatureLayout, FeatureWindow, Slice,
    SplitRange, TemporalFeatures, DATASET_FORMAT_VERSION, MAX_MISSING_FRACTION, PRICE_CHANNELS,
    TEMPORAL_CHANNELS,
};
pub use indicators::{compute_indicators, IndicatorSeries, IndicatorSpec};
