//! Portfolio management with customizable stock pools as an MDP.
//!
//! States are windows of the dataset plus a pool mask, actions are weights
//! over cash and every stock of the global pool, and the reward is the
//! one-step change of portfolio value.

use std::ops::RangeInclusive;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marketdata::{Dataset, FeatureWindow};

pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_HORIZON: usize = 128;

/// Which stocks of the global pool belong to the current customizable pool.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<bool>", into = "Vec<bool>")]
pub struct PoolMask {
    selected: Vec<bool>,
}

impl TryFrom<Vec<bool>> for PoolMask {
    type Error = Error;

    fn try_from(selected: Vec<bool>) -> Result<Self> {
        PoolMask::new(selected)
    }
}

impl From<PoolMask> for Vec<bool> {
    fn from(m: PoolMask) -> Self {
        m.selected
    }
}

impl PoolMask {
    pub fn new(selected: Vec<bool>) -> Result<Self> {
        if !selected.iter().any(|s| *s) {
            return Err(Error::EmptyPool);
        }
        Ok(PoolMask { selected })
    }

    pub fn all(n: usize) -> Self {
        assert!(n > 0);
        PoolMask { selected: vec![true; n] }
    }

    pub fn from_tickers(universe: &[String], pool: &[String]) -> Result<Self> {
        let unknown: Vec<String> = pool.iter().filter(|t| !universe.contains(t)).cloned().collect();
        if !unknown.is_empty() {
            return Err(Error::UnknownTicker(unknown));
        }
        PoolMask::new(universe.iter().map(|t| pool.contains(t)).collect())
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn selected(&self) -> &[bool] {
        &self.selected
    }

    pub fn is_selected(&self, slot: usize) -> bool {
        self.selected[slot]
    }

    pub fn count_selected(&self) -> usize {
        self.selected.iter().filter(|s| **s).count()
    }

    /// Number of masked stocks (N*).
    pub fn count_masked(&self) -> usize {
        self.len() - self.count_selected()
    }

    pub fn masked_slots(&self) -> Vec<usize> {
        (0..self.len()).filter(|i| !self.selected[*i]).collect()
    }

    pub fn selected_slots(&self) -> Vec<usize> {
        (0..self.len()).filter(|i| self.selected[*i]).collect()
    }

    /// Adds then removes tickers; the result must stay non-empty.
    pub fn with_changes(&self, universe: &[String], add: &[String], remove: &[String]) -> Result<Self> {
        let unknown: Vec<String> = add
            .iter()
            .chain(remove)
            .filter(|t| !universe.contains(t))
            .cloned()
            .collect();
        if !unknown.is_empty() {
            return Err(Error::UnknownTicker(unknown));
        }
        let mut selected = self.selected.clone();
        for (slot, ticker) in universe.iter().enumerate() {
            if add.contains(ticker) {
                selected[slot] = true;
            }
            if remove.contains(ticker) {
                selected[slot] = false;
            }
        }
        PoolMask::new(selected)
    }
}

/// Cash weight plus one weight per global-pool slot; long only, sums to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioVector {
    pub cash_weight: f64,
    pub stock_weights: Vec<f64>,
}

impl PortfolioVector {
    pub fn all_cash(n: usize) -> Self {
        PortfolioVector {
            cash_weight: 1.0,
            stock_weights: vec![0.0; n],
        }
    }

    /// Builds from `[cash, w_1, ..., w_N]`.
    pub fn from_full(weights: &[f64]) -> Result<Self> {
        let (cash, stocks) = weights
            .split_first()
            .ok_or_else(|| Error::RejectedAction("empty weight vector".into()))?;
        let v = PortfolioVector {
            cash_weight: *cash,
            stock_weights: stocks.to_vec(),
        };
        v.validate()?;
        Ok(v)
    }

    pub fn to_full(&self) -> Vec<f64> {
        std::iter::once(self.cash_weight)
            .chain(self.stock_weights.iter().copied())
            .collect()
    }

    pub fn total(&self) -> f64 {
        self.cash_weight + self.stock_weights.iter().sum::<f64>()
    }

    pub fn validate(&self) -> Result<()> {
        let all = std::iter::once(&self.cash_weight).chain(&self.stock_weights);
        for w in all {
            if !w.is_finite() || *w < 0.0 || *w > 1.0 + WEIGHT_SUM_TOLERANCE {
                return Err(Error::RejectedAction(format!("weight {w} outside [0, 1]")));
            }
        }
        let total = self.total();
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::RejectedAction(format!("weights sum to {total}, expected 1")));
        }
        Ok(())
    }

    /// Total weight on masked slots.
    pub fn masked_weight(&self, mask: &PoolMask) -> f64 {
        mask.masked_slots().iter().map(|&i| self.stock_weights[i]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    /// Calendar index of the last day of the current window.
    pub day: usize,
    pub mask: PoolMask,
    pub portfolio_value: f64,
    pub step_index: usize,
    pub horizon: usize,
    pub last_action: Option<PortfolioVector>,
}

impl EnvState {
    pub fn done(&self) -> bool {
        self.step_index >= self.horizon
    }
}

/// One-step portfolio value update.
///
/// `V_t = w0 V + (1 - w0) V (1 + sum_i (w_i / (1 - w0)) r_i)`; the inner sum
/// is skipped when everything is in cash.
pub fn next_value(value: f64, action: &PortfolioVector, returns: &[f64]) -> f64 {
    let w0 = action.cash_weight;
    let risky = 1.0 - w0;
    if risky <= 0.0 {
        return value;
    }
    let sleeve_return: f64 = action
        .stock_weights
        .iter()
        .zip(returns)
        .map(|(w, r)| (w / risky) * r)
        .sum();
    w0 * value + risky * value * (1.0 + sleeve_return)
}

/// Environment over one contiguous range of calendar days of a dataset.
#[derive(Debug, Clone)]
pub struct PortfolioEnv<'a> {
    dataset: &'a Dataset,
    days: RangeInclusive<usize>,
    /// Proportional cost on turnover; zero reproduces the frictionless accounting.
    pub cost_rate: f64,
}

impl<'a> PortfolioEnv<'a> {
    pub fn new(dataset: &'a Dataset, split: &str) -> Result<Self> {
        Ok(PortfolioEnv {
            dataset,
            days: dataset.split_days(split)?,
            cost_rate: 0.0,
        })
    }

    pub fn with_days(dataset: &'a Dataset, days: RangeInclusive<usize>) -> Self {
        assert!(*days.start() >= dataset.first_window_end());
        PortfolioEnv {
            dataset,
            days,
            cost_rate: 0.0,
        }
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.dataset
    }

    pub fn days(&self) -> RangeInclusive<usize> {
        self.days.clone()
    }

    pub fn num_windows(&self) -> usize {
        self.days.end() - self.days.start() + 1
    }

    /// Longest episode that fits: every step needs the following window.
    pub fn max_horizon(&self) -> usize {
        self.num_windows() - 1
    }

    pub fn reset(&self, initial_cash: f64, mask: PoolMask, horizon: usize) -> Result<EnvState> {
        self.reset_at(0, initial_cash, mask, horizon)
    }

    /// Starts an episode `offset` windows into the range.
    pub fn reset_at(&self, offset: usize, initial_cash: f64, mask: PoolMask, horizon: usize) -> Result<EnvState> {
        if !(initial_cash > 0.0 && initial_cash.is_finite()) {
            return Err(Error::InvalidArgument(format!("initial cash must be > 0, got {initial_cash}")));
        }
        if mask.len() != self.dataset.num_stocks() {
            return Err(Error::Shape(format!(
                "mask has {} slots, dataset has {} stocks",
                mask.len(),
                self.dataset.num_stocks()
            )));
        }
        if horizon == 0 || offset + horizon > self.max_horizon() {
            return Err(Error::InvalidArgument(format!(
                "horizon {horizon} from offset {offset} needs {} windows, split has {} (short by {})",
                offset + horizon + 1,
                self.num_windows(),
                (offset + horizon + 1).saturating_sub(self.num_windows())
            )));
        }
        Ok(EnvState {
            day: self.days.start() + offset,
            mask,
            portfolio_value: initial_cash,
            step_index: 0,
            horizon,
            last_action: None,
        })
    }

    pub fn window(&self, state: &EnvState) -> FeatureWindow {
        self.dataset.window(state.day)
    }

    pub fn date(&self, state: &EnvState) -> NaiveDate {
        self.dataset.calendar()[state.day]
    }

    /// Simple close-to-close returns from the state's day to the next one.
    pub fn next_returns(&self, day: usize) -> Vec<f64> {
        (0..self.dataset.num_stocks())
            .map(|i| self.dataset.close(i, day + 1) / self.dataset.close(i, day) - 1.0)
            .collect()
    }

    pub fn step(&self, state: &EnvState, action: &PortfolioVector) -> Result<(EnvState, f64)> {
        action.validate()?;
        if action.stock_weights.len() != self.dataset.num_stocks() {
            return Err(Error::RejectedAction(format!(
                "expected {} stock weights, got {}",
                self.dataset.num_stocks(),
                action.stock_weights.len()
            )));
        }
        if state.done() || state.day >= *self.days.end() {
            return Err(Error::Exhausted(state.step_index));
        }
        let before = state.portfolio_value;
        let mut after = next_value(before, action, &self.next_returns(state.day));
        if self.cost_rate > 0.0 {
            let prev = state
                .last_action
                .clone()
                .unwrap_or_else(|| PortfolioVector::all_cash(action.stock_weights.len()));
            let turnover: f64 = action
                .stock_weights
                .iter()
                .zip(&prev.stock_weights)
                .map(|(a, b)| (a - b).abs())
                .sum();
            after -= self.cost_rate * before * turnover;
        }
        let next = EnvState {
            day: state.day + 1,
            mask: state.mask.clone(),
            portfolio_value: after,
            step_index: state.step_index + 1,
            horizon: state.horizon,
            last_action: Some(action.clone()),
        };
        Ok((next, after - before))
    }

    pub fn update_pool(&self, state: &EnvState, mask: PoolMask) -> Result<EnvState> {
        if mask.len() != state.mask.len() {
            return Err(Error::Shape("mask length does not match the global pool".into()));
        }
        Ok(EnvState { mask, ..state.clone() })
    }
}

/// A dated add/remove instruction applied before the step of that date.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolEvent {
    pub date: NaiveDate,
    #[serde(default)]
    pub add: Vec<String>,
    #[serde(default)]
    pub remove: Vec<String>,
}

/// Pool events ordered by date, consumed with a cursor as a run advances.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoolSchedule {
    events: Vec<PoolEvent>,
    cursor: usize,
}

impl PoolSchedule {
    pub fn new(mut events: Vec<PoolEvent>) -> Self {
        events.sort_by_key(|e| e.date);
        PoolSchedule { events, cursor: 0 }
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(PoolSchedule::new(serde_json::from_str(json)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn events(&self) -> &[PoolEvent] {
        &self.events
    }

    pub fn validate(&self, universe: &[String]) -> Result<()> {
        let mut unknown: Vec<String> = self
            .events
            .iter()
            .flat_map(|e| e.add.iter().chain(&e.remove))
            .filter(|t| !universe.contains(t))
            .cloned()
            .collect();
        unknown.sort();
        unknown.dedup();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::UnknownTicker(unknown))
        }
    }

    /// Events not yet applied whose date is on or before `date`.
    pub fn take_due(&mut self, date: NaiveDate) -> &[PoolEvent] {
        let start = self.cursor;
        while self.cursor < self.events.len() && self.events[self.cursor].date <= date {
            self.cursor += 1;
        }
        &self.events[start..self.cursor]
    }

    pub fn apply_due(&mut self, date: NaiveDate, universe: &[String], mask: &PoolMask) -> Result<PoolMask> {
        let mut mask = mask.clone();
        for e in self.take_due(date) {
            mask = mask.with_changes(universe, &e.add, &e.remove)?;
        }
        Ok(mask)
    }
}
