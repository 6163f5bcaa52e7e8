use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

/// Portfolio values `V_0..V_T` with their dates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

impl ReturnSeries {
    pub fn new(dates: Vec<NaiveDate>, values: Vec<f64>) -> Result<Self> {
        if dates.len() != values.len() {
            return Err(Error::Shape(format!("{} dates for {} values", dates.len(), values.len())));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Validation(format!("portfolio value must be positive and finite, got {v}")));
        }
        Ok(ReturnSeries { dates, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Simple returns `r_t = (V_t - V_{t-1}) / V_{t-1}`.
    pub fn returns(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| (w[1] - w[0]) / w[0]).collect()
    }

    /// `V_t / V_0 - 1` for every point.
    pub fn cumulative_returns(&self) -> Vec<f64> {
        let v0 = self.values.first().copied().unwrap_or(1.0);
        self.values.iter().map(|v| v / v0 - 1.0).collect()
    }
}

/// Daily-return metrics; ratios are not annualized except ARR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub arr: f64,
    pub sr: f64,
    pub vol: f64,
    pub mdd: f64,
    pub cr: f64,
    pub sor: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
fn std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Largest running peak-to-trough loss, as a fraction of the peak.
pub fn max_drawdown(values: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst: f64 = 0.0;
    for &v in values {
        peak = peak.max(v);
        worst = worst.max((peak - v) / peak);
    }
    worst
}

fn metrics_inner(series: &ReturnSeries) -> Result<(Metrics, bool)> {
    if series.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "metrics need at least 2 values, got {}",
            series.len()
        )));
    }
    let r = series.returns();
    let steps = r.len() as f64;
    let (v0, vt) = (series.values[0], series.values[series.len() - 1]);
    let arr = (vt - v0) / v0 * TRADING_DAYS_PER_YEAR / steps;
    let m = mean(&r);
    let vol = std(&r);
    let mdd = max_drawdown(&series.values);
    let cr = if mdd > 0.0 { m / mdd } else { f64::INFINITY };
    let negatives: Vec<f64> = r.iter().copied().filter(|x| *x < 0.0).collect();
    let sor = if negatives.is_empty() {
        f64::INFINITY
    } else {
        let dd = std(&negatives);
        if dd > 0.0 {
            m / dd
        } else if m == 0.0 {
            0.0
        } else {
            m.signum() * f64::INFINITY
        }
    };
    let degenerate = vol == 0.0;
    let sr = if degenerate { f64::NAN } else { m / vol };
    Ok((
        Metrics {
            arr,
            sr,
            vol,
            mdd,
            cr,
            sor,
        },
        degenerate,
    ))
}

/// ARR, SR, VOL, MDD, CR and SoR of a value series. A zero-variance return series
/// has no Sharpe ratio and is an error.
pub fn compute_metrics(series: &ReturnSeries) -> Result<Metrics> {
    let (m, degenerate) = metrics_inner(series)?;
    if degenerate {
        return Err(Error::DegenerateSeries("returns have zero standard deviation".into()));
    }
    Ok(m)
}

/// Like [`compute_metrics`] but reports an undefined SR as NaN instead of failing.
pub fn compute_metrics_lenient(series: &ReturnSeries) -> Result<Metrics> {
    metrics_inner(series).map(|(m, _)| m)
}
