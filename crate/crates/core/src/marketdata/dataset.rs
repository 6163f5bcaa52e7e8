use std::collections::BTreeMap;
use std::ops::{Range, RangeInclusive};
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use ndarray::{s, Array2, Array3, ArrayView2};
use ndarray_npy::{read_npy, write_npy};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::bars::BarSet;
use super::indicators::{compute_indicators, IndicatorSpec};
use crate::error::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const PRICE_CHANNELS: usize = 4;
pub const TEMPORAL_CHANNELS: usize = 3;
/// Tickers with a larger share of filled days are dropped at build time.
pub const MAX_MISSING_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slice {
    pub start: usize,
    pub len: usize,
}

impl Slice {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }
}

/// Named column slices of the last axis of a feature window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    /// open, high, low, close (raw currency units in the stored window)
    pub prices: Slice,
    pub indicators: Slice,
    /// day_of_week (0-6), day_of_month (1-31), month (1-12)
    pub temporal: Slice,
}

impl FeatureLayout {
    pub fn new(num_indicators: usize) -> Self {
        FeatureLayout {
            prices: Slice { start: 0, len: PRICE_CHANNELS },
            indicators: Slice { start: PRICE_CHANNELS, len: num_indicators },
            temporal: Slice {
                start: PRICE_CHANNELS + num_indicators,
                len: TEMPORAL_CHANNELS,
            },
        }
    }

    pub fn num_features(&self) -> usize {
        self.prices.len + self.indicators.len + self.temporal.len
    }

    /// Width of the dense (price + indicator) input.
    pub fn dense_width(&self) -> usize {
        self.prices.len + self.indicators.len
    }

    pub fn slices(&self) -> [(&'static str, Slice); 3] {
        [
            ("prices", self.prices),
            ("indicators", self.indicators),
            ("temporal", self.temporal),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemporalFeatures {
    pub day_of_week: u32,
    pub day_of_month: u32,
    pub month: u32,
}

impl TemporalFeatures {
    pub fn from_date(date: NaiveDate) -> Self {
        TemporalFeatures {
            day_of_week: date.weekday().num_days_from_monday(),
            day_of_month: date.day(),
            month: date.month(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub tickers: Vec<String>,
    pub dropped_tickers: Vec<String>,
    pub calendar: Vec<NaiveDate>,
    pub window: usize,
    pub num_features: usize,
    pub feature_layout: FeatureLayout,
    pub indicator_names: Vec<String>,
    pub indicator_spec: IndicatorSpec,
    pub splits: BTreeMap<String, SplitRange>,
}

impl DatasetManifest {
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("manifest serializes");
        hex_digest(&bytes)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// A `stocks x days x features` slice ending on one trading day.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWindow {
    pub tickers: Vec<String>,
    pub days: Vec<NaiveDate>,
    pub features: Array3<f64>,
    pub layout: FeatureLayout,
}

impl FeatureWindow {
    pub fn num_stocks(&self) -> usize {
        self.features.dim().0
    }

    pub fn num_days(&self) -> usize {
        self.features.dim().1
    }

    pub fn end_date(&self) -> NaiveDate {
        *self.days.last().expect("window has days")
    }

    /// OHLC divided by each stock's last close in the window.
    pub fn normalized_prices(&self) -> Array3<f64> {
        let (n, d, _) = self.features.dim();
        let p = self.layout.prices;
        let close_col = p.start + 3;
        let mut out = Array3::zeros((n, d, p.len));
        for i in 0..n {
            let last_close = self.features[[i, d - 1, close_col]];
            for t in 0..d {
                for c in 0..p.len {
                    out[[i, t, c]] = self.features[[i, t, p.start + c]] / last_close;
                }
            }
        }
        out
    }

    /// Dense model input: normalized OHLC followed by indicators, `n x d x dense_width`.
    pub fn dense_input(&self) -> Array3<f64> {
        let (n, d, _) = self.features.dim();
        let prices = self.normalized_prices();
        let ind = self.layout.indicators;
        let mut out = Array3::zeros((n, d, self.layout.dense_width()));
        out.slice_mut(s![.., .., 0..PRICE_CHANNELS]).assign(&prices);
        out.slice_mut(s![.., .., PRICE_CHANNELS..])
            .assign(&self.features.slice(s![.., .., ind.range()]));
        out
    }

    /// Temporal categories per day, taken from the first stock row (the calendar is shared).
    pub fn temporal(&self) -> Vec<TemporalFeatures> {
        let t = self.layout.temporal;
        (0..self.num_days())
            .map(|day| TemporalFeatures {
                day_of_week: self.features[[0, day, t.start]] as u32,
                day_of_month: self.features[[0, day, t.start + 1]] as u32,
                month: self.features[[0, day, t.start + 2]] as u32,
            })
            .collect()
    }
}

/// An aligned multi-ticker dataset with per-day features for every ticker.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    /// `stocks x calendar days x features`; rows before the indicator warm-up are zero.
    pub features: Array3<f64>,
}

impl Dataset {
    pub fn build(
        bars: &BarSet,
        spec: &IndicatorSpec,
        window: usize,
        splits: BTreeMap<String, SplitRange>,
    ) -> Result<Dataset> {
        if window == 0 {
            return Err(Error::InvalidArgument("window must be >= 1".into()));
        }
        let (kept, dropped): (Vec<_>, Vec<_>) = bars
            .series
            .iter()
            .partition(|s| s.missing_fraction() <= MAX_MISSING_FRACTION);
        for s in &dropped {
            log::warn!(
                "dropping {}: {:.1}% of days missing",
                s.ticker,
                100.0 * s.missing_fraction()
            );
        }
        if kept.is_empty() {
            return Err(Error::Validation("no tickers left after the missing-data filter".into()));
        }

        let layout = FeatureLayout::new(spec.len());
        let n = kept.len();
        let days = bars.calendar.len();
        let mut features = Array3::zeros((n, days, layout.num_features()));
        for (i, series) in kept.iter().enumerate() {
            let ind = compute_indicators(&series.bars, spec)?;
            for (t, bar) in series.bars.iter().enumerate() {
                let mut row = features.slice_mut(s![i, t, ..]);
                row[0] = bar.open;
                row[1] = bar.high;
                row[2] = bar.low;
                row[3] = bar.close;
                if let Some(v) = ind.at(t) {
                    for (k, x) in v.iter().enumerate() {
                        row[layout.indicators.start + k] = *x;
                    }
                }
                let tf = TemporalFeatures::from_date(bar.date);
                row[layout.temporal.start] = tf.day_of_week as f64;
                row[layout.temporal.start + 1] = tf.day_of_month as f64;
                row[layout.temporal.start + 2] = tf.month as f64;
            }
        }

        let manifest = DatasetManifest {
            format_version: DATASET_FORMAT_VERSION,
            tickers: kept.iter().map(|s| s.ticker.clone()).collect(),
            dropped_tickers: dropped.iter().map(|s| s.ticker.clone()).collect(),
            calendar: bars.calendar.clone(),
            window,
            num_features: layout.num_features(),
            feature_layout: layout,
            indicator_names: spec.names(),
            indicator_spec: spec.clone(),
            splits,
        };
        let dataset = Dataset { manifest, features };
        for name in dataset.manifest.splits.keys() {
            dataset.split_days(name)?;
        }
        Ok(dataset)
    }

    pub fn tickers(&self) -> &[String] {
        &self.manifest.tickers
    }

    pub fn num_stocks(&self) -> usize {
        self.manifest.tickers.len()
    }

    pub fn window_len(&self) -> usize {
        self.manifest.window
    }

    pub fn layout(&self) -> FeatureLayout {
        self.manifest.feature_layout
    }

    pub fn calendar(&self) -> &[NaiveDate] {
        &self.manifest.calendar
    }

    pub fn ticker_index(&self, ticker: &str) -> Option<usize> {
        self.manifest.tickers.iter().position(|t| t == ticker)
    }

    /// First calendar index that can end a complete window.
    pub fn first_window_end(&self) -> usize {
        self.manifest.indicator_spec.warmup() + self.manifest.window - 1
    }

    /// Calendar indices of the days in a split; every one of them ends a full window.
    pub fn split_days(&self, name: &str) -> Result<RangeInclusive<usize>> {
        let split = self
            .manifest
            .splits
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown split `{name}`")))?;
        self.days_in_range(split)
    }

    pub fn days_in_range(&self, split: &SplitRange) -> Result<RangeInclusive<usize>> {
        let cal = &self.manifest.calendar;
        let first = cal.iter().position(|d| *d >= split.start);
        let last = cal.iter().rposition(|d| *d <= split.end);
        let (first, last) = match (first, last) {
            (Some(f), Some(l)) if f <= l => (f, l),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "split {}..{} is outside data coverage",
                    split.start, split.end
                )))
            }
        };
        if first < self.first_window_end() {
            return Err(Error::InvalidArgument(format!(
                "split starting {} needs {} earlier days of history for indicators and the window; first usable day is {}",
                split.start,
                self.first_window_end(),
                cal[self.first_window_end().min(cal.len() - 1)]
            )));
        }
        Ok(first..=last)
    }

    /// Window of `window_len` days ending on calendar index `end`.
    pub fn window(&self, end: usize) -> FeatureWindow {
        let d = self.manifest.window;
        assert!(end >= self.first_window_end() && end < self.manifest.calendar.len());
        let start = end + 1 - d;
        FeatureWindow {
            tickers: self.manifest.tickers.clone(),
            days: self.manifest.calendar[start..=end].to_vec(),
            features: self.features.slice(s![.., start..=end, ..]).to_owned(),
            layout: self.manifest.feature_layout,
        }
    }

    /// Close prices, `stocks x calendar days`.
    pub fn closes(&self) -> ArrayView2<'_, f64> {
        self.features.slice(s![.., .., PRICE_CHANNELS - 1])
    }

    pub fn close(&self, stock: usize, day: usize) -> f64 {
        self.features[[stock, day, PRICE_CHANNELS - 1]]
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest_path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
        let feat_path = dir.join("features.npy");
        write_npy(&feat_path, &self.features).map_err(|e| Error::Serde(format!("{}: {e}", feat_path.display())))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let manifest_path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        if manifest.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: manifest.format_version,
                expected: DATASET_FORMAT_VERSION,
            });
        }
        let feat_path = dir.join("features.npy");
        let features: Array3<f64> =
            read_npy(&feat_path).map_err(|e| Error::Serde(format!("{}: {e}", feat_path.display())))?;
        let expected = (manifest.tickers.len(), manifest.calendar.len(), manifest.num_features);
        if features.dim() != expected {
            return Err(Error::Shape(format!(
                "features.npy has shape {:?}, manifest says {:?}",
                features.dim(),
                expected
            )));
        }
        Ok(Dataset { manifest, features })
    }
}

/// Windows for every day of a split, in calendar order.
pub fn build_windows<'a>(
    dataset: &'a Dataset,
    split: &str,
) -> Result<impl Iterator<Item = FeatureWindow> + 'a> {
    let days = dataset.split_days(split)?;
    Ok(days.map(move |t| dataset.window(t)))
}

/// Parses a `{"name": {"start": "YYYY-MM-DD", "end": "YYYY-MM-DD"}}` document.
pub fn parse_splits(json: &str) -> Result<BTreeMap<String, SplitRange>> {
    let splits: BTreeMap<String, SplitRange> = serde_json::from_str(json)?;
    for (name, s) in &splits {
        if s.start > s.end {
            return Err(Error::InvalidArgument(format!("split `{name}` ends before it starts")));
        }
    }
    Ok(splits)
}

/// Normalized OHLC of one stock in a window flattened to `d * 4` values (row-major by day).
pub fn flatten_prices(prices: ArrayView2<'_, f64>) -> Vec<f64> {
    prices.iter().copied().collect()
}

/// Reconstruction targets for a set of stocks, one row per stock.
pub fn price_targets(window: &FeatureWindow, stocks: &[usize]) -> Array2<f64> {
    let prices = window.normalized_prices();
    let d = window.num_days();
    let mut out = Array2::zeros((stocks.len(), d * PRICE_CHANNELS));
    for (r, &i) in stocks.iter().enumerate() {
        let flat = flatten_prices(prices.slice(s![i, .., ..]));
        out.row_mut(r).assign(&ndarray::ArrayView1::from(&flat[..]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marketdata::bars::read_ohlcv;

    pub(crate) fn csv_for(tickers: &[&str], days: usize) -> String {
        let mut s = String::from("date,ticker,open,high,low,close,volume\n");
        let start = NaiveDate::from_ymd_opt(2023, 1, 2).unwrap();
        for d in 0..days {
            let date = start + chrono::Days::new(d as u64);
            for (k, t) in tickers.iter().enumerate() {
                let c = 100.0 + k as f64 * 10.0 + d as f64;
                s.push_str(&format!("{date},{t},{},{},{},{},1000\n", c - 0.5, c + 1.0, c - 1.0, c));
            }
        }
        s
    }

    fn dataset(days: usize, window: usize) -> Dataset {
        let bars = read_ohlcv(csv_for(&["AAA", "BBB"], days).as_bytes(), None).unwrap();
        let cal = bars.calendar.clone();
        let mut splits = BTreeMap::new();
        splits.insert(
            "all".to_string(),
            SplitRange { start: cal[IndicatorSpec::default().warmup() + window - 1], end: *cal.last().unwrap() },
        );
        Dataset::build(&bars, &IndicatorSpec::default(), window, splits).unwrap()
    }

    #[test]
    fn twelve_aligned_days_give_three_windows() {
        // 10 warm-up days precede the first window, so 22 calendar days leave 12 usable ones.
        let ds = dataset(10 + 9 + 3, 10);
        let windows: Vec<_> = build_windows(&ds, "all").unwrap().collect();
        assert_eq!(windows.len(), 3);
        assert_eq!(windows[0].end_date(), ds.calendar()[19]);
        assert_eq!(windows[2].end_date(), ds.calendar()[21]);
    }

    #[test]
    fn windows_have_fixed_ticker_order_and_shape() {
        let ds = dataset(30, 10);
        for w in build_windows(&ds, "all").unwrap() {
            assert_eq!(w.features.dim(), (2, 10, 19));
            assert_eq!(w.tickers, vec!["AAA".to_string(), "BBB".to_string()]);
            assert!(w.features.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn layout_slices_partition_features() {
        let ds = dataset(30, 10);
        let layout = ds.layout();
        let mut covered = vec![0usize; layout.num_features()];
        for (_, sl) in layout.slices() {
            for c in sl.range() {
                covered[c] += 1;
            }
        }
        assert!(covered.iter().all(|c| *c == 1));
        assert_eq!(layout.num_features(), ds.manifest.num_features);
    }

    #[test]
    fn normalized_last_close_is_one() {
        let ds = dataset(30, 10);
        let w = ds.window(25);
        let p = w.normalized_prices();
        assert_eq!(p[[0, 9, 3]], 1.0);
        assert_eq!(p[[1, 9, 3]], 1.0);
    }

    #[test]
    fn split_before_warmup_is_rejected() {
        let bars = read_ohlcv(csv_for(&["AAA"], 30).as_bytes(), None).unwrap();
        let mut splits = BTreeMap::new();
        splits.insert("early".into(), SplitRange { start: bars.calendar[3], end: bars.calendar[25] });
        assert!(Dataset::build(&bars, &IndicatorSpec::default(), 10, splits).is_err());
    }

    #[test]
    fn split_outside_coverage_is_rejected() {
        let ds = dataset(30, 10);
        let far = SplitRange {
            start: NaiveDate::from_ymd_opt(2030, 1, 1).unwrap(),
            end: NaiveDate::from_ymd_opt(2030, 2, 1).unwrap(),
        };
        assert!(ds.days_in_range(&far).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let ds = dataset(30, 10);
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.manifest, ds.manifest);
        assert_eq!(back.features, ds.features);
    }

    #[test]
    fn sparse_ticker_is_dropped() {
        let mut csv = csv_for(&["AAA"], 30);
        // BBB only trades on the first 20 days: a third of the calendar is missing.
        let start = NaiveDate::from_ymd_opt(2023, 1, 2).unwrap();
        for d in 0..20 {
            let date = start + chrono::Days::new(d);
            csv.push_str(&format!("{date},BBB,10,11,9,10,5\n"));
        }
        let bars = read_ohlcv(csv.as_bytes(), None).unwrap();
        let ds = Dataset::build(&bars, &IndicatorSpec::default(), 10, BTreeMap::new()).unwrap();
        assert_eq!(ds.tickers(), &["AAA".to_string()]);
        assert_eq!(ds.manifest.dropped_tickers, vec!["BBB".to_string()]);
    }
}
