//! C ABI over the `earnmore` library: load a dataset and a checkpoint, run
//! backtests (agent or rule-based baseline) and read value series and metrics.
//!
//! Every function returns an [`EarnmoreStatus`]; on failure the message is kept
//! per thread and read with [`earnmore_last_error`]. Handles are opaque and must
//! be released with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use earnmore::env::PoolSchedule;
use earnmore::evaluator::{backtest, compute_metrics_lenient, run_baseline, BacktestResult, Baseline};
use earnmore::marketdata::Dataset;
use earnmore::trainer::load_checkpoint;
use earnmore::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EarnmoreStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    Validation = 6,
    EmptyPool = 7,
    UnknownTicker = 8,
    DegenerateSeries = 9,
    NonFinite = 10,
    VersionMismatch = 11,
    Exhausted = 12,
    BufferTooSmall = 13,
    Panic = 14,
}

/// Performance metrics of a value series. SR is NaN for a flat series; CR and
/// SoR are +inf when there is no drawdown or no negative return.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EarnmoreMetrics {
    pub arr: f64,
    pub sr: f64,
    pub vol: f64,
    pub mdd: f64,
    pub cr: f64,
    pub sor: f64,
}

/// A loaded dataset.
pub struct EarnmoreDataset(Dataset);

/// A trained agent loaded from a checkpoint directory.
pub struct EarnmoreAgent(earnmore::agent::SacAgent);

/// A finished backtest run.
pub struct EarnmoreBacktest(BacktestResult);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> EarnmoreStatus {
    match e {
        Error::Io { .. } => EarnmoreStatus::Io,
        Error::Parse { .. } | Error::Serde(_) => EarnmoreStatus::Parse,
        Error::Validation(_) | Error::Shape(_) | Error::InsufficientHistory { .. } => EarnmoreStatus::Validation,
        Error::InvalidArgument(_) | Error::RejectedAction(_) | Error::SessionNotFound(_) => {
            EarnmoreStatus::InvalidArgument
        }
        Error::EmptyPool => EarnmoreStatus::EmptyPool,
        Error::UnknownTicker(_) => EarnmoreStatus::UnknownTicker,
        Error::DegenerateSeries(_) => EarnmoreStatus::DegenerateSeries,
        Error::NonFinite { .. } => EarnmoreStatus::NonFinite,
        Error::VersionMismatch { .. } => EarnmoreStatus::VersionMismatch,
        Error::Exhausted(_) => EarnmoreStatus::Exhausted,
    }
}

struct Failure(EarnmoreStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

/// Runs `f`, turning errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EarnmoreStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            EarnmoreStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            EarnmoreStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(EarnmoreStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(EarnmoreStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

unsafe fn copy_str(s: &str, buf: *mut c_char, cap: usize) -> usize {
    if !buf.is_null() && cap > 0 {
        let n = s.len().min(cap - 1);
        ptr::copy_nonoverlapping(s.as_ptr() as *const c_char, buf, n);
        *buf.add(n) = 0;
    }
    s.len()
}

fn schedule(events_json: Option<&str>) -> Result<PoolSchedule, Failure> {
    Ok(match events_json {
        Some(json) => PoolSchedule::from_json(json)?,
        None => PoolSchedule::default(),
    })
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `cap - 1` bytes) and returns its full length in bytes. The
/// message is empty after a successful call. `buf` may be null to query the length.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn earnmore_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| copy_str(&e.borrow(), buf, cap))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn earnmore_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Loads a dataset directory written by `earnmore data build` or `data synth`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn earnmore_dataset_load(path: *const c_char, out: *mut *mut EarnmoreDataset) -> EarnmoreStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        put(out, EarnmoreDataset(Dataset::load(Path::new(path))?));
        Ok(())
    })
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `ds` must come from [`earnmore_dataset_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn earnmore_dataset_free(ds: *mut EarnmoreDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of stocks in the dataset universe.
///
/// # Safety
/// `ds` must be a live dataset handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn earnmore_dataset_num_stocks(ds: *const EarnmoreDataset, out: *mut usize) -> EarnmoreStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ds.0.num_stocks();
        Ok(())
    })
}

/// Copies ticker `index` into `buf` like [`earnmore_last_error`] and stores its
/// full length in `len`.
///
/// # Safety
/// `ds` must be a live dataset handle, `buf` null or `cap` writable bytes, `len` valid.
#[no_mangle]
pub unsafe extern "C" fn earnmore_dataset_ticker(
    ds: *const EarnmoreDataset,
    index: usize,
    buf: *mut c_char,
    cap: usize,
    len: *mut usize,
) -> EarnmoreStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        if len.is_null() {
            return Err(null("len"));
        }
        let ticker = ds.0.tickers().get(index).ok_or_else(|| {
            Failure(
                EarnmoreStatus::InvalidArgument,
                format!("ticker index {index} out of range for {} stocks", ds.0.num_stocks()),
            )
        })?;
        *len = copy_str(ticker, buf, cap);
        Ok(())
    })
}

/// Loads a checkpoint directory. With a dataset, a mismatched dataset hash is
/// logged as a warning; the call still succeeds.
///
/// # Safety
/// `path` must be a NUL-terminated string, `ds` null or a live handle, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn earnmore_checkpoint_load(
    path: *const c_char,
    ds: *const EarnmoreDataset,
    out: *mut *mut EarnmoreAgent,
) -> EarnmoreStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        let manifest = ds.as_ref().map(|d| &d.0.manifest);
        let ckpt = load_checkpoint(Path::new(path), manifest)?;
        put(out, EarnmoreAgent(ckpt.agent));
        Ok(())
    })
}

/// Releases an agent. Null is ignored.
///
/// # Safety
/// `agent` must come from [`earnmore_checkpoint_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn earnmore_agent_free(agent: *mut EarnmoreAgent) {
    if !agent.is_null() {
        drop(Box::from_raw(agent));
    }
}

/// Runs the agent over `split` with optional pool events, given as a JSON list
/// of `{"date", "add", "remove"}` objects. `temperature` may be null for the
/// trained value.
///
/// # Safety
/// Handles must be live, strings NUL-terminated (`events_json` may be null),
/// `temperature` null or valid, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn earnmore_backtest_run(
    agent: *const EarnmoreAgent,
    ds: *const EarnmoreDataset,
    split: *const c_char,
    events_json: *const c_char,
    temperature: *const f64,
    out: *mut *mut EarnmoreBacktest,
) -> EarnmoreStatus {
    guard(|| {
        let agent = handle(agent, "agent")?;
        let ds = handle(ds, "dataset")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let split = str_arg(split, "split")?;
        let schedule = schedule(opt_str_arg(events_json, "events_json")?)?;
        let result = backtest(&agent.0, &ds.0, split, &schedule, temperature.as_ref().copied())?;
        put(out, EarnmoreBacktest(result));
        Ok(())
    })
}

/// Runs a rule-based baseline (`market`, `blsw` or `csm`) like [`earnmore_backtest_run`].
///
/// # Safety
/// As for [`earnmore_backtest_run`].
#[no_mangle]
pub unsafe extern "C" fn earnmore_baseline_run(
    ds: *const EarnmoreDataset,
    name: *const c_char,
    split: *const c_char,
    events_json: *const c_char,
    out: *mut *mut EarnmoreBacktest,
) -> EarnmoreStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let kind: Baseline = str_arg(name, "name")?.parse()?;
        let split = str_arg(split, "split")?;
        let schedule = schedule(opt_str_arg(events_json, "events_json")?)?;
        put(out, EarnmoreBacktest(run_baseline(kind, &ds.0, split, &schedule)?));
        Ok(())
    })
}

/// Releases a backtest. Null is ignored.
///
/// # Safety
/// `bt` must come from a run function and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn earnmore_backtest_free(bt: *mut EarnmoreBacktest) {
    if !bt.is_null() {
        drop(Box::from_raw(bt));
    }
}

/// Number of points in the value series (steps + 1).
///
/// # Safety
/// `bt` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn earnmore_backtest_len(bt: *const EarnmoreBacktest, out: *mut usize) -> EarnmoreStatus {
    guard(|| {
        let bt = handle(bt, "backtest")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = bt.0.series.len();
        Ok(())
    })
}

/// Copies the portfolio value series into `buf`. Fails with `BufferTooSmall`
/// (writing nothing) when `cap` is below the series length.
///
/// # Safety
/// `bt` must be a live handle and `buf` point to `cap` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn earnmore_backtest_values(bt: *const EarnmoreBacktest, buf: *mut f64, cap: usize) -> EarnmoreStatus {
    guard(|| {
        let bt = handle(bt, "backtest")?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let values = &bt.0.series.values;
        if cap < values.len() {
            return Err(Failure(
                EarnmoreStatus::BufferTooSmall,
                format!("buffer holds {cap} values, series has {}", values.len()),
            ));
        }
        ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
        Ok(())
    })
}

/// Metrics of the run's value series.
///
/// # Safety
/// `bt` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn earnmore_backtest_metrics(bt: *const EarnmoreBacktest, out: *mut EarnmoreMetrics) -> EarnmoreStatus {
    guard(|| {
        let bt = handle(bt, "backtest")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let m = compute_metrics_lenient(&bt.0.series)?;
        *out = EarnmoreMetrics {
            arr: m.arr,
            sr: m.sr,
            vol: m.vol,
            mdd: m.mdd,
            cr: m.cr,
            sor: m.sor,
        };
        Ok(())
    })
}
