use std::ops::RangeInclusive;

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::ReturnSeries;
use crate::agent::SacAgent;
use crate::env::{EnvState, PoolMask, PoolSchedule, PortfolioEnv, PortfolioVector};
use crate::error::{Error, Result};
use crate::marketdata::Dataset;
use crate::representation::{MaskPlan, PreparedWindow};

/// Chooses a portfolio for one day given the current pool.
pub trait Strategy {
    fn name(&self) -> &str;
    fn decide(&mut self, dataset: &Dataset, day: usize, mask: &PoolMask) -> Result<PortfolioVector>;
}

/// The trained policy in deterministic mode.
pub struct AgentStrategy<'a> {
    agent: &'a SacAgent,
    temperature: f64,
}

impl<'a> AgentStrategy<'a> {
    pub fn new(agent: &'a SacAgent, temperature: Option<f64>) -> Self {
        AgentStrategy {
            agent,
            temperature: temperature.unwrap_or(agent.cfg.temperature),
        }
    }
}

impl Strategy for AgentStrategy<'_> {
    fn name(&self) -> &str {
        "earnmore"
    }

    fn decide(&mut self, dataset: &Dataset, day: usize, mask: &PoolMask) -> Result<PortfolioVector> {
        let input = PreparedWindow::new(&dataset.window(day), &self.agent.cfg.representation())?;
        let rep = self
            .agent
            .repr
            .represent_one(&self.agent.params.repr, &input, &MaskPlan::from_pool(mask));
        // Deterministic mode never draws from the generator.
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        self.agent.act(&rep, false, self.temperature, &mut unused)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Date of the window the decision was made on.
    pub date: NaiveDate,
    /// Value after the step.
    pub value: f64,
    pub reward: f64,
    /// Cash first, then one weight per global-pool slot.
    pub weights: Vec<f64>,
    pub mask: PoolMask,
}

/// Step-by-step inference over a split: apply the pool, decide, advance.
/// Histories are append-only.
#[derive(Debug, Clone)]
pub struct Runner {
    days: RangeInclusive<usize>,
    state: EnvState,
    dates: Vec<NaiveDate>,
    values: Vec<f64>,
    steps: Vec<StepRecord>,
}

impl Runner {
    /// Starts at the first window of `split` with the full global pool.
    pub fn new(dataset: &Dataset, split: &str, initial_cash: f64, mask: Option<PoolMask>) -> Result<Self> {
        let env = PortfolioEnv::new(dataset, split)?;
        let mask = mask.unwrap_or_else(|| PoolMask::all(dataset.num_stocks()));
        let horizon = env.max_horizon();
        if horizon == 0 {
            return Err(Error::InvalidArgument(format!("split `{split}` has a single window")));
        }
        let state = env.reset(initial_cash, mask, horizon)?;
        Ok(Runner {
            days: env.days(),
            dates: vec![env.date(&state)],
            values: vec![initial_cash],
            state,
            steps: Vec::new(),
        })
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn mask(&self) -> &PoolMask {
        &self.state.mask
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn is_exhausted(&self) -> bool {
        self.state.done()
    }

    pub fn remaining(&self) -> usize {
        self.state.horizon - self.state.step_index
    }

    /// Date of the window the next decision will be made on.
    pub fn current_date(&self) -> NaiveDate {
        *self.dates.last().expect("at least the initial point")
    }

    pub fn series(&self) -> ReturnSeries {
        ReturnSeries {
            dates: self.dates.clone(),
            values: self.values.clone(),
        }
    }

    /// Replaces the pool; takes effect at the next step.
    pub fn set_mask(&mut self, mask: PoolMask) -> Result<()> {
        if mask.len() != self.state.mask.len() {
            return Err(Error::Shape("mask length does not match the global pool".into()));
        }
        self.state.mask = mask;
        Ok(())
    }

    pub fn step(&mut self, dataset: &Dataset, strategy: &mut dyn Strategy) -> Result<StepRecord> {
        if self.is_exhausted() {
            return Err(Error::Exhausted(self.state.step_index));
        }
        let env = PortfolioEnv::with_days(dataset, self.days.clone());
        let action = strategy.decide(dataset, self.state.day, &self.state.mask)?;
        let (next, reward) = env.step(&self.state, &action)?;
        let record = StepRecord {
            step: next.step_index,
            date: env.date(&self.state),
            value: next.portfolio_value,
            reward,
            weights: action.to_full(),
            mask: self.state.mask.clone(),
        };
        self.dates.push(env.date(&next));
        self.values.push(next.portfolio_value);
        self.steps.push(record.clone());
        self.state = next;
        Ok(record)
    }
}

/// A complete run of one strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktestResult {
    pub strategy: String,
    pub split: String,
    pub series: ReturnSeries,
    pub steps: Vec<StepRecord>,
}

/// Runs a strategy over the whole split, applying due pool events before each step.
pub fn run_strategy(
    dataset: &Dataset,
    split: &str,
    schedule: &PoolSchedule,
    strategy: &mut dyn Strategy,
    initial_cash: f64,
) -> Result<BacktestResult> {
    schedule.validate(dataset.tickers())?;
    let mut schedule = schedule.clone();
    let mut runner = Runner::new(dataset, split, initial_cash, None)?;
    while !runner.is_exhausted() {
        let mask = schedule.apply_due(runner.current_date(), dataset.tickers(), runner.mask())?;
        runner.set_mask(mask)?;
        runner.step(dataset, strategy)?;
    }
    Ok(BacktestResult {
        strategy: strategy.name().to_string(),
        split: split.to_string(),
        series: runner.series(),
        steps: runner.steps().to_vec(),
    })
}

pub const DEFAULT_INITIAL_CASH: f64 = 1.0e6;

/// Deterministic inference of a trained agent over a split with scripted pool events.
pub fn backtest(
    agent: &SacAgent,
    dataset: &Dataset,
    split: &str,
    schedule: &PoolSchedule,
    temperature: Option<f64>,
) -> Result<BacktestResult> {
    if let Some(t) = temperature {
        if !(t > 0.0) {
            return Err(Error::InvalidArgument(format!("temperature must be > 0, got {t}")));
        }
    }
    run_strategy(
        dataset,
        split,
        schedule,
        &mut AgentStrategy::new(agent, temperature),
        DEFAULT_INITIAL_CASH,
    )
}
