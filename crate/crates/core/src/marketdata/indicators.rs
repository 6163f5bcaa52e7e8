use serde::{Deserialize, Serialize};

use super::bars::OhlcvBar;
use crate::error::{Error, Result};

/// Which indicator families to compute and with which lookbacks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndicatorSpec {
    /// k-day close return `c_t / c_{t-k} - 1`.
    pub return_windows: Vec<usize>,
    /// k-day close moving average divided by the current close.
    pub ma_windows: Vec<usize>,
    /// Population standard deviation of the last k one-day returns.
    pub std_windows: Vec<usize>,
    /// Four intraday shape ratios normalized by the open.
    pub intraday: bool,
    /// k-day max close divided by the current close.
    pub max_windows: Vec<usize>,
}

impl Default for IndicatorSpec {
    fn default() -> Self {
        IndicatorSpec {
            return_windows: vec![1, 5, 10],
            ma_windows: vec![5, 10],
            std_windows: vec![5, 10],
            intraday: true,
            max_windows: vec![10],
        }
    }
}

impl IndicatorSpec {
    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        names.extend(self.return_windows.iter().map(|k| format!("ret_{k}")));
        names.extend(self.ma_windows.iter().map(|k| format!("ma_ratio_{k}")));
        names.extend(self.std_windows.iter().map(|k| format!("ret_std_{k}")));
        if self.intraday {
            names.extend(["hl_range", "body", "upper_shadow", "lower_shadow"].map(String::from));
        }
        names.extend(self.max_windows.iter().map(|k| format!("max_ratio_{k}")));
        names
    }

    pub fn len(&self) -> usize {
        self.return_windows.len()
            + self.ma_windows.len()
            + self.std_windows.len()
            + if self.intraday { 4 } else { 0 }
            + self.max_windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index of the first day for which every indicator is defined.
    pub fn warmup(&self) -> usize {
        let ret = self.return_windows.iter().copied().max().unwrap_or(0);
        let std = self.std_windows.iter().copied().max().unwrap_or(0);
        let ma = self.ma_windows.iter().map(|k| k.saturating_sub(1)).max().unwrap_or(0);
        let max = self.max_windows.iter().map(|k| k.saturating_sub(1)).max().unwrap_or(0);
        ret.max(std).max(ma).max(max)
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .return_windows
            .iter()
            .chain(&self.ma_windows)
            .chain(&self.std_windows)
            .chain(&self.max_windows);
        if all.clone().any(|k| *k == 0) {
            return Err(Error::InvalidArgument("indicator lookbacks must be >= 1".into()));
        }
        Ok(())
    }
}

/// Indicator values for one ticker; `values[j]` belongs to bar `start + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorSeries {
    pub names: Vec<String>,
    pub start: usize,
    pub values: Vec<Vec<f64>>,
}

impl IndicatorSeries {
    /// Indicator vector for bar index `t` of the source series.
    pub fn at(&self, t: usize) -> Option<&[f64]> {
        t.checked_sub(self.start)
            .and_then(|j| self.values.get(j))
            .map(Vec::as_slice)
    }
}

pub fn compute_indicators(bars: &[OhlcvBar], spec: &IndicatorSpec) -> Result<IndicatorSeries> {
    spec.validate()?;
    let warmup = spec.warmup();
    if bars.len() <= warmup {
        return Err(Error::InsufficientHistory {
            required: warmup + 1,
            actual: bars.len(),
        });
    }
    let close: Vec<f64> = bars.iter().map(|b| b.close).collect();
    let one_day: Vec<f64> = std::iter::once(0.0)
        .chain(close.windows(2).map(|w| w[1] / w[0] - 1.0))
        .collect();

    let mut values = Vec::with_capacity(bars.len() - warmup);
    for t in warmup..bars.len() {
        let c = close[t];
        let mut v = Vec::with_capacity(spec.len());
        for &k in &spec.return_windows {
            v.push(c / close[t - k] - 1.0);
        }
        for &k in &spec.ma_windows {
            let window = &close[t + 1 - k..=t];
            v.push(window.iter().sum::<f64>() / k as f64 / c);
        }
        for &k in &spec.std_windows {
            v.push(population_std(&one_day[t + 1 - k..=t]));
        }
        if spec.intraday {
            let b = &bars[t];
            v.push((b.high - b.low) / b.open);
            v.push((b.close - b.open) / b.open);
            v.push((b.high - b.close) / b.open);
            v.push((b.close - b.low) / b.open);
        }
        for &k in &spec.max_windows {
            let m = close[t + 1 - k..=t].iter().copied().fold(f64::MIN, f64::max);
            v.push(m / c);
        }
        values.push(v);
    }
    Ok(IndicatorSeries {
        names: spec.names(),
        start: warmup,
        values,
    })
}

fn population_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn bars_from_closes(closes: &[f64]) -> Vec<OhlcvBar> {
        let start = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
        closes
            .iter()
            .enumerate()
            .map(|(i, &c)| OhlcvBar {
                date: start + chrono::Days::new(i as u64),
                ticker: "T".into(),
                open: c * 0.99,
                high: c * 1.02,
                low: c * 0.98,
                close: c,
                volume: 1.0,
            })
            .collect()
    }

    #[test]
    fn default_set_has_twelve_indicators() {
        let spec = IndicatorSpec::default();
        assert_eq!(spec.len(), 12);
        assert_eq!(spec.names().len(), 12);
        assert_eq!(spec.warmup(), 10);
    }

    #[test]
    fn flat_series_gives_zero_returns_and_unit_ratios() {
        let bars = bars_from_closes(&[50.0; 15]);
        let out = compute_indicators(&bars, &IndicatorSpec::default()).unwrap();
        assert_eq!(out.values.len(), 5);
        for v in &out.values {
            assert_eq!(&v[0..3], &[0.0, 0.0, 0.0]);
            assert_eq!(&v[3..5], &[1.0, 1.0]);
            assert_eq!(&v[5..7], &[0.0, 0.0]);
            assert_eq!(v[11], 1.0);
        }
    }

    #[test]
    fn one_day_return_definition() {
        let spec = IndicatorSpec {
            return_windows: vec![1],
            ma_windows: vec![],
            std_windows: vec![],
            intraday: false,
            max_windows: vec![],
        };
        let out = compute_indicators(&bars_from_closes(&[100.0, 110.0]), &spec).unwrap();
        assert_eq!(out.start, 1);
        assert!((out.values[0][0] - 0.10).abs() < 1e-15);
    }

    #[test]
    fn short_series_names_required_length() {
        let err = compute_indicators(&bars_from_closes(&[1.0; 10]), &IndicatorSpec::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientHistory { required: 11, actual: 10 }));
        assert!(err.to_string().contains("11"));
    }
}
