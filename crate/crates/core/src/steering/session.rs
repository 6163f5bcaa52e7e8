use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use super::json_f64;
use crate::agent::SacAgent;
use crate::env::PoolMask;
use crate::error::{Error, Result};
use crate::evaluator::{compute_metrics_lenient, AgentStrategy, Metrics, Runner, DEFAULT_INITIAL_CASH};
use crate::marketdata::Dataset;
use crate::trainer::load_checkpoint;

const EVENT_CHANNEL_CAPACITY: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Paused,
    Playing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Active,
    Exhausted,
}

/// Body of `POST /sessions`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    /// Split name; defaults to `test`.
    #[serde(default)]
    pub split: Option<String>,
    /// Checkpoint directory; defaults to the one the server was started with.
    #[serde(default)]
    pub checkpoint: Option<String>,
    /// Initial pool as tickers; defaults to the whole universe.
    #[serde(default)]
    pub pool: Option<Vec<String>>,
    /// Initial pool as one flag per universe slot; alternative to `pool`.
    #[serde(default)]
    pub mask: Option<Vec<bool>>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub initial_cash: Option<f64>,
}

/// One entry of a session's event stream. `seq` counts from 0 without gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    /// Steps completed when the event was recorded.
    pub step: usize,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum EventKind {
    Step {
        /// Date of the window the decision was made on.
        date: NaiveDate,
        value: f64,
        reward: f64,
        /// Cash first, then one weight per universe slot.
        weights: Vec<f64>,
        mask: Vec<bool>,
    },
    Pool {
        add: Vec<String>,
        remove: Vec<String>,
        mask: Vec<bool>,
    },
}

impl SessionEvent {
    pub fn name(&self) -> &'static str {
        match self.kind {
            EventKind::Step { .. } => "step",
            EventKind::Pool { .. } => "pool",
        }
    }
}

/// Metrics with non-finite values encoded as strings so they survive JSON.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsView {
    #[serde(with = "json_f64")]
    pub arr: f64,
    #[serde(with = "json_f64")]
    pub sr: f64,
    #[serde(with = "json_f64")]
    pub vol: f64,
    #[serde(with = "json_f64")]
    pub mdd: f64,
    #[serde(with = "json_f64")]
    pub cr: f64,
    #[serde(with = "json_f64")]
    pub sor: f64,
}

impl From<Metrics> for MetricsView {
    fn from(m: Metrics) -> Self {
        MetricsView {
            arr: m.arr,
            sr: m.sr,
            vol: m.vol,
            mdd: m.mdd,
            cr: m.cr,
            sor: m.sor,
        }
    }
}

/// Full state of a session as returned by `GET /sessions/{id}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub id: String,
    pub split: String,
    pub checkpoint: String,
    pub mode: Mode,
    pub status: Status,
    pub step: usize,
    pub remaining: usize,
    /// Date of the window the next decision is made on.
    pub date: NaiveDate,
    pub temperature: f64,
    /// One date per value point.
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
    /// Latest weights, cash first; null before the first step.
    pub weights: Option<Vec<f64>>,
    pub mask: Vec<bool>,
    pub pool: Vec<String>,
    /// Metrics of `values`; null before the first step.
    pub metrics: Option<MetricsView>,
    pub events: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub split: String,
    pub mode: Mode,
    pub status: Status,
    pub step: usize,
    pub value: f64,
}

pub struct Session {
    id: String,
    split: String,
    checkpoint: String,
    agent: Arc<SacAgent>,
    temperature: f64,
    mode: Mode,
    runner: Runner,
    events: Vec<SessionEvent>,
    sender: broadcast::Sender<SessionEvent>,
}

impl Session {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn runner(&self) -> &Runner {
        &self.runner
    }

    /// History from `from` plus a receiver for everything after it, taken atomically.
    pub fn subscribe(&self, from: u64) -> (Vec<SessionEvent>, broadcast::Receiver<SessionEvent>) {
        let start = (from as usize).min(self.events.len());
        (self.events[start..].to_vec(), self.sender.subscribe())
    }

    fn record(&mut self, kind: EventKind) -> SessionEvent {
        let event = SessionEvent {
            seq: self.events.len() as u64,
            step: self.runner.state().step_index,
            kind,
        };
        self.events.push(event.clone());
        // No receivers is fine.
        let _ = self.sender.send(event.clone());
        event
    }

    /// Advances `count` steps under the current pool. Rejected without any change
    /// when fewer than `count` steps remain.
    pub fn step(&mut self, dataset: &Dataset, count: usize) -> Result<Vec<SessionEvent>> {
        let remaining = self.runner.remaining();
        if count > remaining {
            return Err(Error::Exhausted(self.runner.state().step_index));
        }
        let agent = Arc::clone(&self.agent);
        let mut strategy = AgentStrategy::new(&agent, Some(self.temperature));
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let rec = self.runner.step(dataset, &mut strategy)?;
            out.push(self.record(EventKind::Step {
                date: rec.date,
                value: rec.value,
                reward: rec.reward,
                weights: rec.weights,
                mask: rec.mask.into(),
            }));
        }
        Ok(out)
    }

    /// Applies additions then removals; effective from the next step.
    pub fn update_pool(&mut self, dataset: &Dataset, add: &[String], remove: &[String]) -> Result<PoolMask> {
        let mask = self.runner.mask().with_changes(dataset.tickers(), add, remove)?;
        self.runner.set_mask(mask.clone())?;
        self.record(EventKind::Pool {
            add: add.to_vec(),
            remove: remove.to_vec(),
            mask: mask.clone().into(),
        });
        Ok(mask)
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn status(&self) -> Status {
        if self.runner.is_exhausted() {
            Status::Exhausted
        } else {
            Status::Active
        }
    }

    pub fn snapshot(&self, dataset: &Dataset) -> SessionSnapshot {
        let series = self.runner.series();
        let metrics = compute_metrics_lenient(&series).ok().map(MetricsView::from);
        let mask = self.runner.mask();
        SessionSnapshot {
            id: self.id.clone(),
            split: self.split.clone(),
            checkpoint: self.checkpoint.clone(),
            mode: self.mode,
            status: self.status(),
            step: self.runner.state().step_index,
            remaining: self.runner.remaining(),
            date: self.runner.current_date(),
            temperature: self.temperature,
            dates: series.dates,
            values: series.values,
            weights: self.runner.steps().last().map(|s| s.weights.clone()),
            mask: mask.selected().to_vec(),
            pool: mask
                .selected_slots()
                .into_iter()
                .map(|i| dataset.tickers()[i].clone())
                .collect(),
            metrics,
            events: self.events.len() as u64,
        }
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            id: self.id.clone(),
            split: self.split.clone(),
            mode: self.mode,
            status: self.status(),
            step: self.runner.state().step_index,
            value: *self.runner.values().last().expect("initial value"),
        }
    }
}

/// Owns the dataset, the loaded checkpoints and all live sessions.
/// Each session is behind its own lock so commands on one session are serialized
/// while different sessions proceed independently.
pub struct SessionManager {
    dataset: Arc<Dataset>,
    default_checkpoint: String,
    agents: Mutex<HashMap<String, Arc<SacAgent>>>,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
    snapshot_dir: Option<PathBuf>,
}

impl SessionManager {
    pub fn new(dataset: Arc<Dataset>, agent: Arc<SacAgent>, checkpoint_ref: &str) -> Self {
        let mut agents = HashMap::new();
        agents.insert(checkpoint_ref.to_string(), agent);
        SessionManager {
            dataset,
            default_checkpoint: checkpoint_ref.to_string(),
            agents: Mutex::new(agents),
            sessions: RwLock::new(BTreeMap::new()),
            next_id: AtomicU64::new(1),
            snapshot_dir: None,
        }
    }

    /// Closed sessions are written to `dir/<id>.json`.
    pub fn with_snapshot_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.snapshot_dir = Some(dir.into());
        self
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.dataset
    }

    fn agent(&self, checkpoint: &str) -> Result<Arc<SacAgent>> {
        let mut agents = self.agents.lock().expect("agent cache lock");
        if let Some(a) = agents.get(checkpoint) {
            return Ok(Arc::clone(a));
        }
        let ckpt = load_checkpoint(Path::new(checkpoint), Some(&self.dataset.manifest))?;
        if ckpt.agent.cfg.num_stocks != self.dataset.num_stocks() {
            return Err(Error::Validation(format!(
                "checkpoint expects {} stocks, dataset has {}",
                ckpt.agent.cfg.num_stocks,
                self.dataset.num_stocks()
            )));
        }
        let agent = Arc::new(ckpt.agent);
        agents.insert(checkpoint.to_string(), Arc::clone(&agent));
        Ok(agent)
    }

    pub fn create(&self, req: &CreateSession) -> Result<String> {
        let split = req.split.clone().unwrap_or_else(|| "test".into());
        let checkpoint = req.checkpoint.clone().unwrap_or_else(|| self.default_checkpoint.clone());
        let agent = self.agent(&checkpoint)?;
        let mask = match (&req.pool, &req.mask) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidArgument("give either `pool` or `mask`, not both".into()));
            }
            (Some(pool), None) => PoolMask::from_tickers(self.dataset.tickers(), pool)?,
            (None, Some(flags)) => {
                if flags.len() != self.dataset.num_stocks() {
                    return Err(Error::Shape(format!(
                        "mask has {} flags, universe has {} tickers",
                        flags.len(),
                        self.dataset.num_stocks()
                    )));
                }
                PoolMask::new(flags.clone())?
            }
            (None, None) => PoolMask::all(self.dataset.num_stocks()),
        };
        let temperature = req.temperature.unwrap_or(agent.cfg.temperature);
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!("temperature must be > 0, got {temperature}")));
        }
        let cash = req.initial_cash.unwrap_or(DEFAULT_INITIAL_CASH);
        if !(cash > 0.0 && cash.is_finite()) {
            return Err(Error::InvalidArgument(format!("initial_cash must be > 0, got {cash}")));
        }
        let runner = Runner::new(&self.dataset, &split, cash, Some(mask))?;
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let (sender, _) = broadcast::channel(EVENT_CHANNEL_CAPACITY);
        let session = Session {
            id: id.clone(),
            split,
            checkpoint,
            agent,
            temperature,
            mode: Mode::Paused,
            runner,
            events: Vec::new(),
            sender,
        };
        self.sessions
            .write()
            .expect("session map lock")
            .insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| Error::SessionNotFound(id.to_string()))
    }

    pub fn with_session<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> Result<T>) -> Result<T> {
        let session = self.get(id)?;
        let mut guard = session.lock().expect("session lock");
        f(&mut guard)
    }

    pub fn step(&self, id: &str, count: usize) -> Result<SessionSnapshot> {
        let dataset = Arc::clone(&self.dataset);
        self.with_session(id, |s| {
            s.step(&dataset, count)?;
            Ok(s.snapshot(&dataset))
        })
    }

    pub fn update_pool(&self, id: &str, add: &[String], remove: &[String]) -> Result<PoolMask> {
        let dataset = Arc::clone(&self.dataset);
        self.with_session(id, |s| s.update_pool(&dataset, add, remove))
    }

    pub fn set_mode(&self, id: &str, mode: Mode) -> Result<SessionSnapshot> {
        let dataset = Arc::clone(&self.dataset);
        self.with_session(id, |s| {
            s.set_mode(mode);
            Ok(s.snapshot(&dataset))
        })
    }

    pub fn snapshot(&self, id: &str) -> Result<SessionSnapshot> {
        let dataset = Arc::clone(&self.dataset);
        self.with_session(id, |s| Ok(s.snapshot(&dataset)))
    }

    pub fn list(&self) -> Vec<SessionSummary> {
        let sessions: Vec<_> = self.sessions.read().expect("session map lock").values().cloned().collect();
        sessions
            .iter()
            .map(|s| s.lock().expect("session lock").summary())
            .collect()
    }

    /// Removes a session, writing its final snapshot when a snapshot directory is set.
    pub fn close(&self, id: &str) -> Result<SessionSnapshot> {
        let session = self
            .sessions
            .write()
            .expect("session map lock")
            .remove(id)
            .ok_or_else(|| Error::SessionNotFound(id.to_string()))?;
        let snapshot = session.lock().expect("session lock").snapshot(&self.dataset);
        if let Some(dir) = &self.snapshot_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(format!("{id}.json"));
            let text = serde_json::to_string_pretty(&snapshot)?;
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(snapshot)
    }
}
