//! Inference over scripted pool sequences, metrics, rule-based baselines and reports.

mod baselines;
mod metrics;
mod report;
mod runner;

pub use baselines::{
    equal_weight, quantile_count, run_baseline, select_quantile, Baseline, BaselineStrategy, BASELINE_LOOKBACK,
    BASELINE_QUANTILE,
};
pub use metrics::{compute_metrics, compute_metrics_lenient, max_drawdown, Metrics, ReturnSeries, TRADING_DAYS_PER_YEAR};
pub use report::{emit_report, read_metrics_csv, MetricsReport};
pub use runner::{
    backtest, run_strategy, AgentStrategy, BacktestResult, Runner, StepRecord, Strategy, DEFAULT_INITIAL_CASH,
};
