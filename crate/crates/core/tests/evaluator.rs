mod common;

use chrono::NaiveDate;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use earnmore::agent::SacAgent;
use earnmore::env::{PoolMask, PoolSchedule, PortfolioVector};
use earnmore::evaluator::{
    backtest, compute_metrics, compute_metrics_lenient, emit_report, max_drawdown, read_metrics_csv,
    run_baseline, run_strategy, Baseline, MetricsReport, ReturnSeries, Strategy as DailyStrategy,
};
use earnmore::marketdata::Dataset;
use earnmore::trainer::TrainConfig;
use earnmore::Error;

fn series(values: Vec<f64>) -> ReturnSeries {
    let start = NaiveDate::from_ymd_opt(2021, 1, 4).unwrap();
    let dates = (0..values.len()).map(|i| start + chrono::Days::new(i as u64)).collect();
    ReturnSeries::new(dates, values).unwrap()
}

fn untrained_agent(ds: &Dataset, seed: u64) -> SacAgent {
    let cfg = TrainConfig::desk().agent_config(ds);
    SacAgent::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn metrics_agree_with_oracle_on_hundred_series() {
    assert_eq!(common::metrics_check(1, 100), 0);
}

fn values_strategy() -> impl Strategy<Value = Vec<f64>> {
    (prop::collection::vec(-0.05f64..0.05, 2..80), 1.0f64..1e4).prop_map(|(r, v0)| {
        let mut v = vec![v0];
        for x in r {
            let last = *v.last().unwrap();
            v.push(last * (1.0 + x));
        }
        v
    })
}

proptest! {
    #[test]
    fn arr_has_sign_of_total_return(v in values_strategy()) {
        let m = compute_metrics_lenient(&series(v.clone())).unwrap();
        let total = v[v.len() - 1] - v[0];
        prop_assert_eq!(m.arr > 0.0, total > 0.0);
        prop_assert_eq!(m.arr < 0.0, total < 0.0);
    }

    #[test]
    fn drawdown_is_scale_free_and_bounded(v in values_strategy(), k in 0.01f64..100.0) {
        let scaled: Vec<f64> = v.iter().map(|x| x * k).collect();
        let a = max_drawdown(&v);
        prop_assert!((a - max_drawdown(&scaled)).abs() <= 1e-12);
        prop_assert!((0.0..1.0).contains(&a));
    }

    #[test]
    fn rising_series_has_no_drawdown(steps in prop::collection::vec(0.0f64..0.05, 1..50)) {
        let mut v = vec![100.0];
        for s in steps {
            let last = *v.last().unwrap();
            v.push(last * (1.0 + s));
        }
        prop_assert_eq!(max_drawdown(&v), 0.0);
    }
}

struct AllCash;

impl DailyStrategy for AllCash {
    fn name(&self) -> &str {
        "cash"
    }

    fn decide(&mut self, dataset: &Dataset, _day: usize, _mask: &PoolMask) -> Result<PortfolioVector, Error> {
        Ok(PortfolioVector::all_cash(dataset.num_stocks()))
    }
}

#[test]
fn all_cash_run_is_flat_with_no_sharpe() {
    let ds = common::desk_dataset(0);
    let res = run_strategy(&ds, "test", &PoolSchedule::default(), &mut AllCash, 1e6).unwrap();
    assert_eq!(res.series.len(), common::DESK_TEST_DAYS);
    assert!(res.series.values.iter().all(|v| *v == 1e6));
    assert!(matches!(compute_metrics(&res.series), Err(Error::DegenerateSeries(_))));
    let m = compute_metrics_lenient(&res.series).unwrap();
    assert_eq!((m.arr, m.vol, m.mdd), (0.0, 0.0, 0.0));
    assert!(m.sr.is_nan());
}

fn removal_schedule(ds: &Dataset, ticker: &str, offset: usize) -> (PoolSchedule, NaiveDate) {
    let day = *ds.split_days("test").unwrap().start() + offset;
    let date = ds.calendar()[day];
    let json = format!(r#"[{{"date": "{date}", "remove": ["{ticker}"]}}]"#);
    (PoolSchedule::from_json(&json).unwrap(), date)
}

#[test]
fn removal_event_masks_the_slot_from_its_date() {
    let ds = common::desk_dataset(0);
    let agent = untrained_agent(&ds, 1);
    let slot = 2;
    let ticker = ds.tickers()[slot].clone();
    let (schedule, date) = removal_schedule(&ds, &ticker, 40);
    let res = backtest(&agent, &ds, "test", &schedule, None).unwrap();
    for s in &res.steps {
        assert_eq!(s.mask.is_selected(slot), s.date < date, "{}", s.date);
        assert_eq!(s.mask.count_selected(), if s.date < date { 4 } else { 3 });
        PortfolioVector::from_full(&s.weights).unwrap().validate().unwrap();
    }
    for b in [Baseline::Market, Baseline::Blsw, Baseline::Csm] {
        let base = run_baseline(b, &ds, "test", &schedule).unwrap();
        for s in base.steps.iter().filter(|s| s.date >= date) {
            assert_eq!(s.weights[slot + 1], 0.0, "{} on {}", b.name(), s.date);
        }
    }
}

#[test]
fn backtest_is_deterministic() {
    let ds = common::desk_dataset(0);
    let agent = untrained_agent(&ds, 2);
    let (schedule, _) = removal_schedule(&ds, "DRIFT", 10);
    let a = backtest(&agent, &ds, "test", &schedule, None).unwrap();
    let b = backtest(&agent, &ds, "test", &schedule, None).unwrap();
    assert_eq!(a.series.values, b.series.values);
    assert_eq!(a.steps, b.steps);
}

#[test]
fn bad_events_fail_before_running() {
    let ds = common::desk_dataset(0);
    let agent = untrained_agent(&ds, 3);
    let (unknown, _) = removal_schedule(&ds, "NOPE", 5);
    assert!(matches!(
        backtest(&agent, &ds, "test", &unknown, None),
        Err(Error::UnknownTicker(_))
    ));
    assert!(backtest(&agent, &ds, "test", &PoolSchedule::default(), Some(0.0)).is_err());
    assert!(backtest(&agent, &ds, "nope", &PoolSchedule::default(), None).is_err());
}

#[test]
fn report_files_share_dates_and_metrics_round_trip() {
    let ds = common::desk_dataset(0);
    let agent = untrained_agent(&ds, 4);
    let schedule = PoolSchedule::default();
    let mut results = vec![backtest(&agent, &ds, "test", &schedule, None).unwrap()];
    for b in [Baseline::Market, Baseline::Blsw, Baseline::Csm] {
        results.push(run_baseline(b, &ds, "test", &schedule).unwrap());
    }
    let reports: Vec<MetricsReport> = results
        .iter()
        .map(|r| MetricsReport::from_result(r, "cfg").unwrap())
        .collect();
    let dir = tempfile::tempdir().unwrap();
    emit_report(&reports, &results, ds.tickers(), dir.path()).unwrap();

    let back = read_metrics_csv(&dir.path().join("metrics.csv")).unwrap();
    assert_eq!(back.len(), 4);
    for (a, b) in back.iter().zip(&reports) {
        assert_eq!(a.strategy, b.strategy);
        let (x, y) = (a.metrics(), b.metrics());
        for (p, q) in [(x.arr, y.arr), (x.sr, y.sr), (x.vol, y.vol), (x.mdd, y.mdd), (x.cr, y.cr), (x.sor, y.sor)] {
            assert!(p == q || (p.is_nan() && q.is_nan()));
        }
    }

    let dates = |name: &str| -> Vec<String> {
        let text = std::fs::read_to_string(dir.path().join("curves").join(format!("{name}.csv"))).unwrap();
        text.lines().skip(1).map(|l| l.split(',').next().unwrap().to_string()).collect()
    };
    let first = dates("earnmore");
    assert_eq!(first.len(), common::DESK_TEST_DAYS);
    for name in ["market", "blsw", "csm"] {
        assert_eq!(dates(name), first, "{name}");
    }
    let weights = std::fs::read_to_string(dir.path().join("weights").join("market.csv")).unwrap();
    let header = weights.lines().next().unwrap();
    assert_eq!(header, format!("date,cash,{}", ds.tickers().join(",")));
    assert_eq!(weights.lines().count(), common::DESK_TEST_DAYS);
}
