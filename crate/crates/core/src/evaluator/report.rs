use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics_lenient, Metrics};
use super::runner::BacktestResult;
use crate::error::{Error, Result};

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub strategy: String,
    pub split: String,
    /// Hash of the configuration or checkpoint that produced the run.
    pub config: String,
    pub arr: f64,
    pub sr: f64,
    pub vol: f64,
    pub mdd: f64,
    pub cr: f64,
    pub sor: f64,
}

impl MetricsReport {
    pub fn new(strategy: &str, split: &str, config: &str, m: Metrics) -> Self {
        MetricsReport {
            strategy: strategy.into(),
            split: split.into(),
            config: config.into(),
            arr: m.arr,
            sr: m.sr,
            vol: m.vol,
            mdd: m.mdd,
            cr: m.cr,
            sor: m.sor,
        }
    }

    /// Metrics of a finished run; an undefined SR is reported as NaN.
    pub fn from_result(result: &BacktestResult, config: &str) -> Result<Self> {
        let m = compute_metrics_lenient(&result.series)?;
        Ok(Self::new(&result.strategy, &result.split, config, m))
    }

    pub fn metrics(&self) -> Metrics {
        Metrics {
            arr: self.arr,
            sr: self.sr,
            vol: self.vol,
            mdd: self.mdd,
            cr: self.cr,
            sor: self.sor,
        }
    }
}

const METRICS_HEADER: [&str; 9] = ["strategy", "split", "config", "arr", "sr", "vol", "mdd", "cr", "sor"];

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Serde(format!("{}: {e}", path.display()))
}

/// Writes `metrics.csv`, `curves/<strategy>.csv` and `weights/<strategy>.csv`.
/// Floats use the shortest representation that parses back to the same value.
pub fn emit_report(reports: &[MetricsReport], results: &[BacktestResult], tickers: &[String], out: &Path) -> Result<()> {
    for sub in ["curves", "weights"] {
        let dir = out.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }

    let path = out.join("metrics.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record(METRICS_HEADER).map_err(|e| csv_err(&path, e))?;
    for r in reports {
        let m = r.metrics();
        let mut row = vec![r.strategy.clone(), r.split.clone(), r.config.clone()];
        row.extend([m.arr, m.sr, m.vol, m.mdd, m.cr, m.sor].iter().map(f64::to_string));
        w.write_record(&row).map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    for res in results {
        let path = out.join("curves").join(format!("{}.csv", res.strategy));
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        w.write_record(["date", "value", "cumulative_return"])
            .map_err(|e| csv_err(&path, e))?;
        let cum = res.series.cumulative_returns();
        for ((d, v), c) in res.series.dates.iter().zip(&res.series.values).zip(cum) {
            w.write_record([d.to_string(), v.to_string(), c.to_string()])
                .map_err(|e| csv_err(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = out.join("weights").join(format!("{}.csv", res.strategy));
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        let mut header = vec!["date".to_string(), "cash".to_string()];
        header.extend(tickers.iter().cloned());
        w.write_record(&header).map_err(|e| csv_err(&path, e))?;
        for s in &res.steps {
            let mut row = vec![s.date.to_string()];
            row.extend(s.weights.iter().map(f64::to_string));
            w.write_record(&row).map_err(|e| csv_err(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Reads a `metrics.csv` written by [`emit_report`].
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsReport>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != METRICS_HEADER.len() {
            return Err(Error::Parse {
                line: out.len() + 2,
                message: format!("expected {} fields, got {}", METRICS_HEADER.len(), rec.len()),
            });
        }
        let num = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|e| Error::Parse {
                line: out.len() + 2,
                message: format!("{}: {e}", METRICS_HEADER[i]),
            })
        };
        out.push(MetricsReport {
            strategy: rec[0].to_string(),
            split: rec[1].to_string(),
            config: rec[2].to_string(),
            arr: num(3)?,
            sr: num(4)?,
            vol: num(5)?,
            mdd: num(6)?,
            cr: num(7)?,
            sor: num(8)?,
        });
    }
    Ok(out)
}
