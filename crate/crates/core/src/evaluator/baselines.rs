use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::runner::{run_strategy, BacktestResult, Strategy, DEFAULT_INITIAL_CASH};
use crate::env::{PoolMask, PoolSchedule, PortfolioVector};
use crate::error::{Error, Result};
use crate::marketdata::Dataset;

pub const BASELINE_LOOKBACK: usize = 10;
pub const BASELINE_QUANTILE: f64 = 1.0 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    /// Equal weight over the current pool.
    Market,
    /// Equal weight over the worst performers of the lookback.
    Blsw,
    /// Equal weight over the best performers of the lookback.
    Csm,
}

impl Baseline {
    pub const ALL: [Baseline; 3] = [Baseline::Market, Baseline::Blsw, Baseline::Csm];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Market => "market",
            Baseline::Blsw => "blsw",
            Baseline::Csm => "csm",
        }
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "market" => Ok(Baseline::Market),
            "blsw" => Ok(Baseline::Blsw),
            "csm" => Ok(Baseline::Csm),
            other => Err(Error::InvalidArgument(format!("unknown baseline `{other}`"))),
        }
    }
}

/// Number of names a quantile selects from `n`; zero means "hold the whole pool".
pub fn quantile_count(n: usize, quantile: f64) -> usize {
    (quantile * n as f64 + 1e-9).floor() as usize
}

/// Picks `quantile` of the candidate slots by score, highest first when `top`.
/// Ties go to the lowest slot index.
pub fn select_quantile(candidates: &[usize], scores: &[f64], quantile: f64, top: bool) -> Vec<usize> {
    let k = quantile_count(candidates.len(), quantile);
    if k == 0 {
        return candidates.to_vec();
    }
    let mut order = candidates.to_vec();
    order.sort_by(|&a, &b| {
        let ord = scores[a].total_cmp(&scores[b]);
        let ord = if top { ord.reverse() } else { ord };
        ord.then(a.cmp(&b))
    });
    order.truncate(k);
    order.sort_unstable();
    order
}

/// Equal weights over `slots`, zero cash.
pub fn equal_weight(n: usize, slots: &[usize]) -> PortfolioVector {
    let mut stock_weights = vec![0.0; n];
    for &s in slots {
        stock_weights[s] = 1.0 / slots.len() as f64;
    }
    PortfolioVector {
        cash_weight: 0.0,
        stock_weights,
    }
}

#[derive(Debug, Clone)]
pub struct BaselineStrategy {
    pub kind: Baseline,
    pub lookback: usize,
    pub quantile: f64,
}

impl BaselineStrategy {
    pub fn new(kind: Baseline) -> Self {
        BaselineStrategy {
            kind,
            lookback: BASELINE_LOOKBACK,
            quantile: BASELINE_QUANTILE,
        }
    }

    /// Close-to-close return over the lookback, shortened at the start of the calendar.
    pub fn lookback_returns(&self, dataset: &Dataset, day: usize) -> Vec<f64> {
        let from = day.saturating_sub(self.lookback);
        (0..dataset.num_stocks())
            .map(|i| dataset.close(i, day) / dataset.close(i, from) - 1.0)
            .collect()
    }

    pub fn weights_for(&self, scores: &[f64], mask: &PoolMask) -> PortfolioVector {
        let pool = mask.selected_slots();
        let chosen = match self.kind {
            Baseline::Market => pool,
            Baseline::Blsw => select_quantile(&pool, scores, self.quantile, false),
            Baseline::Csm => select_quantile(&pool, scores, self.quantile, true),
        };
        equal_weight(mask.len(), &chosen)
    }
}

impl Strategy for BaselineStrategy {
    fn name(&self) -> &str {
        self.kind.name()
    }

    fn decide(&mut self, dataset: &Dataset, day: usize, mask: &PoolMask) -> Result<PortfolioVector> {
        if mask.count_selected() == 0 {
            return Err(Error::EmptyPool);
        }
        let scores = match self.kind {
            Baseline::Market => vec![0.0; dataset.num_stocks()],
            _ => self.lookback_returns(dataset, day),
        };
        Ok(self.weights_for(&scores, mask))
    }
}

pub fn run_baseline(kind: Baseline, dataset: &Dataset, split: &str, schedule: &PoolSchedule) -> Result<BacktestResult> {
    run_strategy(
        dataset,
        split,
        schedule,
        &mut BaselineStrategy::new(kind),
        DEFAULT_INITIAL_CASH,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_stock_example() {
        let scores = [0.1, 0.0, -0.1];
        let mask = PoolMask::all(3);
        let csm = BaselineStrategy::new(Baseline::Csm).weights_for(&scores, &mask);
        assert_eq!(csm.stock_weights, vec![1.0, 0.0, 0.0]);
        let blsw = BaselineStrategy::new(Baseline::Blsw).weights_for(&scores, &mask);
        assert_eq!(blsw.stock_weights, vec![0.0, 0.0, 1.0]);
        let market = BaselineStrategy::new(Baseline::Market).weights_for(&scores, &mask);
        assert_eq!(market.cash_weight, 0.0);
        assert!(market.stock_weights.iter().all(|w| (w - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn ties_go_to_lowest_slot() {
        let scores = [0.0; 6];
        let pool: Vec<usize> = (0..6).collect();
        assert_eq!(select_quantile(&pool, &scores, 1.0 / 3.0, true), vec![0, 1]);
        assert_eq!(select_quantile(&pool, &scores, 1.0 / 3.0, false), vec![0, 1]);
    }

    #[test]
    fn ten_stocks_at_point_three() {
        let scores: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let mask = PoolMask::all(10);
        let s = BaselineStrategy {
            quantile: 0.3,
            ..BaselineStrategy::new(Baseline::Csm)
        };
        let w = s.weights_for(&scores, &mask);
        let held: Vec<usize> = (0..10).filter(|&i| w.stock_weights[i] > 0.0).collect();
        assert_eq!(held, vec![7, 8, 9]);
        assert!(held.iter().all(|&i| (w.stock_weights[i] - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn small_pool_holds_everything() {
        let scores = [0.3, -0.2, 0.1];
        let mask = PoolMask::new(vec![true, false, true]).unwrap();
        let w = BaselineStrategy::new(Baseline::Csm).weights_for(&scores, &mask);
        assert_eq!(w.stock_weights, vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn masked_slots_are_never_selected() {
        let scores = [0.9, 0.1, 0.0, -0.5, 0.2, 0.3];
        let mask = PoolMask::new(vec![false, true, true, true, true, true]).unwrap();
        let w = BaselineStrategy::new(Baseline::Csm).weights_for(&scores, &mask);
        assert_eq!(w.stock_weights[0], 0.0);
        assert_eq!(w.stock_weights[5], 1.0);
    }

    #[test]
    fn parses_names() {
        assert_eq!("CSM".parse::<Baseline>().unwrap(), Baseline::Csm);
        assert!("xgb".parse::<Baseline>().is_err());
    }
}
