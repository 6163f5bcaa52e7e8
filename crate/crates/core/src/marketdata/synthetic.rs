//! Seeded synthetic markets for demos and behavioral tests.

use chrono::{Datelike, NaiveDate, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use std::collections::BTreeMap;

use super::bars::{BarSet, OhlcvBar, TickerSeries};
use super::dataset::{Dataset, SplitRange};
use super::indicators::IndicatorSpec;
use crate::error::Result;

/// Per-ticker log-drift and log-volatility for a geometric random walk.
#[derive(Debug, Clone)]
pub struct SyntheticAsset {
    pub ticker: String,
    pub drift: f64,
    pub volatility: f64,
}

/// Business days starting at `start`, skipping weekends.
pub fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

/// Generates aligned bars; closes follow `c_t = c_{t-1} * (1 + drift + volatility * z)`.
pub fn generate(assets: &[SyntheticAsset], days: usize, seed: u64) -> BarSet {
    let calendar = business_days(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), days);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let series = assets
        .iter()
        .map(|asset| {
            let mut close = 100.0;
            let bars = calendar
                .iter()
                .map(|&date| {
                    let prev = close;
                    close = prev * (1.0 + asset.drift + asset.volatility * std_normal.sample(&mut rng));
                    let open = prev;
                    let wiggle = 0.5 * asset.volatility * prev * std_normal.sample(&mut rng).abs();
                    OhlcvBar {
                        date,
                        ticker: asset.ticker.clone(),
                        open,
                        high: open.max(close) + wiggle,
                        low: open.min(close) - wiggle,
                        close,
                        volume: 1_000.0,
                    }
                })
                .collect::<Vec<_>>();
            TickerSeries {
                ticker: asset.ticker.clone(),
                filled: vec![false; bars.len()],
                bars,
            }
        })
        .collect();
    BarSet { calendar, series }
}

/// One asset drifting up 0.1% per day without noise and `flat` zero-drift noisy assets.
pub fn drift_market(flat: usize, days: usize, volatility: f64, seed: u64) -> BarSet {
    let mut assets = vec![SyntheticAsset {
        ticker: "DRIFT".into(),
        drift: 0.001,
        volatility: 0.0,
    }];
    assets.extend((0..flat).map(|k| SyntheticAsset {
        ticker: format!("FLAT{k}"),
        drift: 0.0,
        volatility,
    }));
    generate(&assets, days, seed)
}

/// [`drift_market`] built into a dataset with a `train` split of `train_days`
/// windows followed by a `test` split of `test_days` windows.
pub fn drift_dataset(
    flat: usize,
    train_days: usize,
    test_days: usize,
    window: usize,
    volatility: f64,
    seed: u64,
) -> Result<(BarSet, Dataset)> {
    let spec = IndicatorSpec::default();
    let lead = spec.warmup() + window.max(1) - 1;
    let days = lead + train_days + test_days;
    let bars = drift_market(flat, days, volatility, seed);
    let cal = &bars.calendar;
    let mut splits = BTreeMap::new();
    if train_days > 0 {
        splits.insert(
            "train".to_string(),
            SplitRange {
                start: cal[lead],
                end: cal[lead + train_days - 1],
            },
        );
    }
    if test_days > 0 {
        splits.insert(
            "test".to_string(),
            SplitRange {
                start: cal[lead + train_days],
                end: cal[days - 1],
            },
        );
    }
    let dataset = Dataset::build(&bars, &spec, window, splits)?;
    Ok((bars, dataset))
}

/// Writes bars in the input CSV format.
pub fn to_csv(bars: &BarSet) -> String {
    let mut out = String::from("date,ticker,open,high,low,close,volume\n");
    for (t, date) in bars.calendar.iter().enumerate() {
        for s in &bars.series {
            let b = &s.bars[t];
            out.push_str(&format!(
                "{date},{},{},{},{},{},{}\n",
                s.ticker, b.open, b.high, b.low, b.close, b.volume
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marketdata::read_ohlcv;

    #[test]
    fn bars_are_valid_and_round_trip_through_csv() {
        let set = drift_market(3, 60, 0.01, 7);
        for s in &set.series {
            for b in &s.bars {
                b.validate().unwrap();
            }
        }
        let back = read_ohlcv(to_csv(&set).as_bytes(), None).unwrap();
        assert_eq!(back.calendar, set.calendar);
        assert_eq!(back.series.len(), 4);
        let drift = back.get("DRIFT").unwrap();
        let ratio = drift.bars[10].close / drift.bars[9].close;
        assert!((ratio - 1.001).abs() < 1e-12);
    }
}
