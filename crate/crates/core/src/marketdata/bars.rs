use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One daily bar for one ticker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OhlcvBar {
    pub date: NaiveDate,
    pub ticker: String,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl OhlcvBar {
    pub fn validate(&self) -> Result<()> {
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(Error::Validation(format!(
                "{} {}: prices must be finite and > 0",
                self.ticker, self.date
            )));
        }
        if !self.volume.is_finite() || self.volume < 0.0 {
            return Err(Error::Validation(format!(
                "{} {}: volume must be non-negative",
                self.ticker, self.date
            )));
        }
        if self.low > self.open.min(self.close) || self.high < self.open.max(self.close) {
            return Err(Error::Validation(format!(
                "{} {}: require low <= min(open, close) and high >= max(open, close)",
                self.ticker, self.date
            )));
        }
        Ok(())
    }

    fn filled_from(prev_close: f64, ticker: &str, date: NaiveDate) -> Self {
        OhlcvBar {
            date,
            ticker: ticker.to_string(),
            open: prev_close,
            high: prev_close,
            low: prev_close,
            close: prev_close,
            volume: 0.0,
        }
    }
}

/// Bars of a single ticker aligned to the calendar. `filled[i]` marks bars
/// that were synthesized because the ticker had no row on that date.
#[derive(Debug, Clone, PartialEq)]
pub struct TickerSeries {
    pub ticker: String,
    pub bars: Vec<OhlcvBar>,
    pub filled: Vec<bool>,
}

impl TickerSeries {
    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn missing_fraction(&self) -> f64 {
        if self.filled.is_empty() {
            return 0.0;
        }
        self.filled.iter().filter(|f| **f).count() as f64 / self.filled.len() as f64
    }

    pub fn closes(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.close).collect()
    }
}

/// Result of loading a bar file: the aligned calendar and one series per
/// ticker, tickers in lexicographic order.
#[derive(Debug, Clone)]
pub struct BarSet {
    pub calendar: Vec<NaiveDate>,
    pub series: Vec<TickerSeries>,
}

impl BarSet {
    pub fn tickers(&self) -> Vec<String> {
        self.series.iter().map(|s| s.ticker.clone()).collect()
    }

    pub fn get(&self, ticker: &str) -> Option<&TickerSeries> {
        self.series.iter().find(|s| s.ticker == ticker)
    }
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    date: String,
    ticker: String,
    open: f64,
    high: f64,
    low: f64,
    close: f64,
    volume: f64,
}

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok()
}

/// Loads `date,ticker,open,high,low,close,volume` rows.
///
/// Without an explicit calendar the union of all dates in the file is used.
/// Gaps inside a ticker's history are forward-filled from the previous close;
/// gaps before its first row are back-filled from the first close. Both are
/// flagged in [`TickerSeries::filled`].
pub fn load_ohlcv(path: &Path, calendar: Option<&[NaiveDate]>) -> Result<BarSet> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_ohlcv(file, calendar)
}

pub fn read_ohlcv<R: std::io::Read>(reader: R, calendar: Option<&[NaiveDate]>) -> Result<BarSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);

    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let expected = ["date", "ticker", "open", "high", "low", "close", "volume"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", expected.join(",")),
        });
    }

    let mut by_ticker: BTreeMap<String, BTreeMap<NaiveDate, OhlcvBar>> = BTreeMap::new();
    for result in rdr.records() {
        let record = result.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let row: CsvRow = record.deserialize(Some(&headers)).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let date = parse_date(&row.date).ok_or_else(|| Error::Parse {
            line,
            message: format!("bad ISO-8601 date `{}`", row.date),
        })?;
        let bar = OhlcvBar {
            date,
            ticker: row.ticker.clone(),
            open: row.open,
            high: row.high,
            low: row.low,
            close: row.close,
            volume: row.volume,
        };
        bar.validate()?;
        let entry = by_ticker.entry(row.ticker.clone()).or_default();
        if entry.insert(date, bar).is_some() {
            return Err(Error::Validation(format!(
                "duplicate row for ({}, {})",
                row.ticker, date
            )));
        }
    }

    let calendar: Vec<NaiveDate> = match calendar {
        Some(c) => {
            if c.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Validation("calendar must be strictly increasing".into()));
            }
            let known: BTreeSet<NaiveDate> = c.iter().copied().collect();
            for (ticker, bars) in &by_ticker {
                if let Some(d) = bars.keys().find(|d| !known.contains(d)) {
                    return Err(Error::Validation(format!(
                        "{ticker} has a row on {d} which is not a calendar day"
                    )));
                }
            }
            c.to_vec()
        }
        None => by_ticker
            .values()
            .flat_map(|b| b.keys().copied())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };

    let series = by_ticker
        .into_iter()
        .filter(|(_, bars)| !bars.is_empty())
        .map(|(ticker, bars)| align(&ticker, &bars, &calendar))
        .collect();

    Ok(BarSet { calendar, series })
}

fn align(ticker: &str, bars: &BTreeMap<NaiveDate, OhlcvBar>, calendar: &[NaiveDate]) -> TickerSeries {
    let first_close = bars.values().next().map(|b| b.close).unwrap_or(1.0);
    let mut out = Vec::with_capacity(calendar.len());
    let mut filled = Vec::with_capacity(calendar.len());
    let mut prev_close: Option<f64> = None;
    for &date in calendar {
        match bars.get(&date) {
            Some(bar) => {
                prev_close = Some(bar.close);
                out.push(bar.clone());
                filled.push(false);
            }
            None => {
                let close = prev_close.unwrap_or(first_close);
                out.push(OhlcvBar::filled_from(close, ticker, date));
                filled.push(true);
            }
        }
    }
    TickerSeries {
        ticker: ticker.to_string(),
        bars: out,
        filled,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "date,ticker,open,high,low,close,volume\n";

    fn d(s: &str) -> NaiveDate {
        parse_date(s).unwrap()
    }

    #[test]
    fn clean_rows_are_sorted() {
        let csv = format!(
            "{HEADER}2024-01-03,AAA,10,11,9,10.5,100\n2024-01-02,AAA,10,11,9,10,100\n2024-01-04,AAA,10,12,9,11,100\n"
        );
        let set = read_ohlcv(csv.as_bytes(), None).unwrap();
        let s = set.get("AAA").unwrap();
        assert_eq!(s.len(), 3);
        let dates: Vec<_> = s.bars.iter().map(|b| b.date).collect();
        assert_eq!(dates, vec![d("2024-01-02"), d("2024-01-03"), d("2024-01-04")]);
        assert!(s.filled.iter().all(|f| !f));
    }

    #[test]
    fn low_above_high_is_rejected() {
        let csv = format!("{HEADER}2024-01-02,AAA,10,9,11,10,100\n");
        assert!(matches!(read_ohlcv(csv.as_bytes(), None), Err(Error::Validation(_))));
    }

    #[test]
    fn non_positive_price_is_rejected() {
        let csv = format!("{HEADER}2024-01-02,AAA,0,1,0,0.5,100\n");
        assert!(matches!(read_ohlcv(csv.as_bytes(), None), Err(Error::Validation(_))));
    }

    #[test]
    fn duplicate_rows_are_rejected() {
        let csv = format!("{HEADER}2024-01-02,AAA,10,11,9,10,1\n2024-01-02,AAA,10,11,9,10,1\n");
        let err = read_ohlcv(csv.as_bytes(), None).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn malformed_row_names_line() {
        let csv = format!("{HEADER}2024-01-02,AAA,10,11,9,10,1\n2024-01-03,AAA,ten,11,9,10,1\n");
        match read_ohlcv(csv.as_bytes(), None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn calendar_gap_is_forward_filled_and_flagged() {
        let calendar = [d("2024-01-02"), d("2024-01-03"), d("2024-01-04"), d("2024-01-05")];
        let csv = format!(
            "{HEADER}2024-01-02,AAA,10,11,9,10,100\n2024-01-03,AAA,10,12,9,11,100\n2024-01-05,AAA,11,13,10,12,100\n"
        );
        let set = read_ohlcv(csv.as_bytes(), Some(&calendar)).unwrap();
        let s = set.get("AAA").unwrap();

        let expected = TickerSeries {
            ticker: "AAA".into(),
            bars: vec![
                OhlcvBar { date: calendar[0], ticker: "AAA".into(), open: 10.0, high: 11.0, low: 9.0, close: 10.0, volume: 100.0 },
                OhlcvBar { date: calendar[1], ticker: "AAA".into(), open: 10.0, high: 12.0, low: 9.0, close: 11.0, volume: 100.0 },
                OhlcvBar { date: calendar[2], ticker: "AAA".into(), open: 11.0, high: 11.0, low: 11.0, close: 11.0, volume: 0.0 },
                OhlcvBar { date: calendar[3], ticker: "AAA".into(), open: 11.0, high: 13.0, low: 10.0, close: 12.0, volume: 100.0 },
            ],
            filled: vec![false, false, true, false],
        };
        assert_eq!(s, &expected);
    }

    #[test]
    fn bad_header_is_a_parse_error() {
        let csv = "day,ticker,open,high,low,close,volume\n";
        assert!(matches!(read_ohlcv(csv.as_bytes(), None), Err(Error::Parse { line: 1, .. })));
    }
}
