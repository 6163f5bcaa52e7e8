//! Interaction loop, replay, the per-batch optimization sequence and checkpoints.

mod checkpoint;
mod config;
mod replay;

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointManifest, ParamEntry, CHECKPOINT_FORMAT_VERSION,
};
pub use config::TrainConfig;
pub use replay::{ReplayBuffer, Transition};

use crate::agent::{standard_normal, LossBatch, SacAgent};
use crate::env::{PoolMask, PortfolioEnv, PortfolioVector};
use crate::error::{Error, Result};
use crate::marketdata::Dataset;
use crate::nn::{AdamW, Bind, Graph, ParamStore};
use crate::representation::{plan_mask, MaskPlan, PreparedWindow, RepresentationConfig, RepresentationNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Critic,
    Alpha,
    Actor,
    Representation,
}

/// One line of the training log, written at the end of every episode.
/// Losses are episode means over gradient steps and absent when none ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub episode: usize,
    /// Environment steps taken so far.
    pub step: usize,
    pub j_q: Option<f64>,
    pub j_pi: Option<f64>,
    pub j_alpha: Option<f64>,
    pub j_recon: Option<f64>,
    pub alpha: f64,
    pub lr: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<Stage>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepLosses {
    pub j_q: f64,
    pub j_pi: f64,
    pub j_alpha: f64,
    pub j_recon: Option<f64>,
    pub penalty: f64,
}

/// Lazily prepared model inputs per calendar day.
#[derive(Debug, Clone)]
pub struct WindowCache {
    cfg: RepresentationConfig,
    items: Vec<Option<PreparedWindow>>,
}

impl WindowCache {
    pub fn new(cfg: RepresentationConfig, days: usize) -> Self {
        WindowCache {
            cfg,
            items: vec![None; days],
        }
    }

    pub fn ensure(&mut self, dataset: &Dataset, day: usize) -> Result<()> {
        if self.items[day].is_none() {
            self.items[day] = Some(PreparedWindow::new(&dataset.window(day), &self.cfg)?);
        }
        Ok(())
    }

    pub fn get(&self, day: usize) -> &PreparedWindow {
        self.items[day].as_ref().expect("window prepared before use")
    }
}

fn finite(stage: &str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        log::error!("training aborted: {stage} loss is {value}");
        Err(Error::NonFinite {
            stage: stage.to_string(),
            detail: format!("loss = {value}"),
        })
    }
}

/// One gradient step on the masked reconstruction loss; `None` when no sample has a masked stock.
pub fn reconstruction_update(
    repr: &RepresentationNet,
    store: &mut ParamStore,
    opt: &mut AdamW,
    inputs: &[&PreparedWindow],
    plans: &[MaskPlan],
    lr: f64,
) -> Result<Option<f64>> {
    let (value, grads) = {
        let mut g = Graph::new();
        let Some((loss, _)) = repr.reconstruction_loss(&mut g, Bind::Train(store), inputs, plans) else {
            return Ok(None);
        };
        (finite("representation", g.scalar(loss))?, g.backward(loss).into_params())
    };
    opt.step(store, &grads, lr);
    Ok(Some(value))
}

pub struct Trainer<'a> {
    dataset: &'a Dataset,
    env: PortfolioEnv<'a>,
    cfg: TrainConfig,
    pub agent: SacAgent,
    opt_repr: AdamW,
    opt_actor: AdamW,
    opt_critic: AdamW,
    opt_alpha: AdamW,
    buffer: ReplayBuffer,
    cache: WindowCache,
    rng: ChaCha8Rng,
    episode: usize,
    total_steps: usize,
    stages: Vec<Stage>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub agent: SacAgent,
    pub log: Vec<LogRecord>,
    pub config_hash: String,
    pub dataset_hash: String,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if dataset.num_stocks() < 2 {
            return Err(Error::InvalidArgument("training needs at least 2 stocks".into()));
        }
        let env = PortfolioEnv::new(dataset, &cfg.split)?;
        if env.max_horizon() < cfg.horizon {
            return Err(Error::InvalidArgument(format!(
                "split `{}` has {} windows, horizon {} needs {}",
                cfg.split,
                env.num_windows(),
                cfg.horizon,
                cfg.horizon + 1
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let agent = SacAgent::new(cfg.agent_config(dataset), &mut rng)?;
        let wd = cfg.weight_decay;
        Ok(Trainer {
            dataset,
            env,
            opt_repr: AdamW::new(&agent.params.repr, wd),
            opt_actor: AdamW::new(&agent.params.actor, wd),
            opt_critic: AdamW::new(&agent.params.critic, wd),
            opt_alpha: AdamW::new(&agent.params.alpha, 0.0),
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            cache: WindowCache::new(agent.cfg.representation(), dataset.calendar().len()),
            agent,
            cfg,
            rng,
            episode: 0,
            total_steps: 0,
            stages: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    fn random_action(&mut self) -> Result<PortfolioVector> {
        let k = self.agent.cfg.action_dim();
        let logits: Vec<f64> = standard_normal(&mut self.rng, 1, k).iter().copied().collect();
        self.agent.portfolio_from_logits(&logits, 1.0)
    }

    /// Runs one episode, taking gradient steps as transitions accumulate.
    pub fn run_episode(&mut self) -> Result<LogRecord> {
        let lr = self.cfg.schedule().lr(self.episode);
        let n = self.dataset.num_stocks();
        let offset = self.rng.random_range(0..=self.env.max_horizon() - self.cfg.horizon);
        let mut state = self
            .env
            .reset_at(offset, self.cfg.initial_cash, PoolMask::all(n), self.cfg.horizon)?;
        let ratio_dist = self.cfg.mask_ratio();
        let mut sums = [0.0; 3];
        let mut recon = (0.0, 0usize);
        let mut updates = 0usize;
        while !state.done() {
            let ratio = ratio_dist.sample(&mut self.rng)?;
            let plan = plan_mask(n, ratio, &mut self.rng, None)?;
            state = self.env.update_pool(&state, plan.to_pool()?)?;
            let action = if self.total_steps < self.cfg.warm_start_steps {
                self.random_action()?
            } else {
                self.cache.ensure(self.dataset, state.day)?;
                let rep = self
                    .agent
                    .repr
                    .represent_one(&self.agent.params.repr, self.cache.get(state.day), &plan);
                self.agent.act(&rep, true, self.cfg.temperature, &mut self.rng)?
            };
            let (next, reward) = self.env.step(&state, &action)?;
            self.buffer.push(Transition {
                window_ref: state.day,
                mask: state.mask.clone(),
                action,
                reward,
                value_before: state.portfolio_value,
                next_window_ref: next.day,
            });
            self.total_steps += 1;
            if self.total_steps > self.cfg.warm_start_steps && self.buffer.len() >= self.cfg.batch_size {
                let l = self.gradient_step(lr)?;
                sums[0] += l.j_q;
                sums[1] += l.j_pi;
                sums[2] += l.j_alpha;
                if let Some(r) = l.j_recon {
                    recon.0 += r;
                    recon.1 += 1;
                }
                updates += 1;
            }
            state = next;
        }
        let mean = |s: f64, k: usize| (k > 0).then(|| s / k as f64);
        let record = LogRecord {
            episode: self.episode,
            step: self.total_steps,
            j_q: mean(sums[0], updates),
            j_pi: mean(sums[1], updates),
            j_alpha: mean(sums[2], updates),
            j_recon: mean(recon.0, recon.1),
            alpha: self.agent.alpha(),
            lr,
            stages: std::mem::take(&mut self.stages),
        };
        self.episode += 1;
        Ok(record)
    }


    /// Critic, alpha, actor, then representation, each with its own optimizer step.
    pub fn gradient_step(&mut self, lr: f64) -> Result<StepLosses> {
        let batch: Vec<Transition> = self
            .buffer
            .sample(&mut self.rng, self.cfg.batch_size)
            .into_iter()
            .cloned()
            .collect();
        for t in &batch {
            self.cache.ensure(self.dataset, t.window_ref)?;
            self.cache.ensure(self.dataset, t.next_window_ref)?;
        }
        let plans: Vec<MaskPlan> = batch.iter().map(|t| MaskPlan::from_pool(&t.mask)).collect();
        let inputs: Vec<&PreparedWindow> = batch.iter().map(|t| self.cache.get(t.window_ref)).collect();
        let next_inputs: Vec<&PreparedWindow> = batch.iter().map(|t| self.cache.get(t.next_window_ref)).collect();
        let states = self.agent.repr.represent(&self.agent.params.repr, &inputs, &plans);
        let next_states = self.agent.repr.represent(&self.agent.params.repr, &next_inputs, &plans);
        let k = self.agent.cfg.action_dim();
        let mut actions = Array2::zeros((batch.len(), k));
        for (b, t) in batch.iter().enumerate() {
            for (j, w) in t.action.to_full().into_iter().enumerate() {
                actions[[b, j]] = w;
            }
        }
        let rewards = batch
            .iter()
            .map(|t| self.cfg.reward_scale * t.reward / t.value_before)
            .collect();
        let lb = LossBatch {
            states,
            next_states,
            actions,
            rewards,
            plans: plans.clone(),
            noise: standard_normal(&mut self.rng, batch.len(), k),
            next_noise: standard_normal(&mut self.rng, batch.len(), k),
        };

        let critic = self.agent.critic_loss(&lb, self.cfg.gamma, self.agent.alpha());
        let j_q = finite("critic", critic.value)?;
        self.opt_critic.step(&mut self.agent.params.critic, &critic.grads, lr);
        if self.cfg.record_stages {
            self.stages.push(Stage::Critic);
        }

        let alpha = self.agent.alpha_loss(&lb, self.agent.cfg.target_entropy());
        let j_alpha = finite("alpha", alpha.value)?;
        self.opt_alpha.step(&mut self.agent.params.alpha, &alpha.grads, lr);
        if self.cfg.record_stages {
            self.stages.push(Stage::Alpha);
        }

        let actor = self
            .agent
            .actor_loss(&lb, self.agent.alpha(), self.cfg.lambda_mask, self.cfg.temperature);
        let j_pi = finite("actor", actor.value)?;
        self.opt_actor.step(&mut self.agent.params.actor, &actor.grads, lr);
        if self.cfg.record_stages {
            self.stages.push(Stage::Actor);
        }

        let j_recon = reconstruction_update(
            &self.agent.repr,
            &mut self.agent.params.repr,
            &mut self.opt_repr,
            &inputs,
            &plans,
            lr,
        )?;
        if self.cfg.record_stages {
            self.stages.push(Stage::Representation);
        }

        self.agent.update_targets(self.cfg.tau)?;
        Ok(StepLosses {
            j_q,
            j_pi,
            j_alpha,
            j_recon,
            penalty: actor.penalty,
        })
    }

    /// Runs all configured episodes. With an output directory, the log is appended
    /// line by line to `train_log.jsonl` and the final parameters go to `checkpoint/`.
    pub fn train(mut self, out: Option<&Path>) -> Result<TrainOutcome> {
        let config_hash = self.cfg.hash();
        let dataset_hash = self.dataset.manifest.hash();
        let mut writer = match out {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join("train_log.jsonl");
                Some((std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?, path))
            }
            None => None,
        };
        let mut log = Vec::with_capacity(self.cfg.episodes);
        while self.episode < self.cfg.episodes {
            let record = self.run_episode()?;
            log::info!(
                "episode {} step {} j_q {:?} j_pi {:?} alpha {:.4}",
                record.episode,
                record.step,
                record.j_q,
                record.j_pi,
                record.alpha
            );
            if let Some((file, path)) = writer.as_mut() {
                let line = serde_json::to_string(&record)?;
                writeln!(file, "{line}").and_then(|_| file.flush()).map_err(|e| Error::io(&*path, e))?;
            }
            log.push(record);
            if let Some(dir) = out {
                if self.cfg.checkpoint_every > 0 && self.episode % self.cfg.checkpoint_every == 0 {
                    let sub = dir.join("checkpoints").join(format!("episode-{}", self.episode));
                    save_checkpoint(&sub, &self.agent, &config_hash, &dataset_hash, self.episode)?;
                }
            }
        }
        if let Some(dir) = out {
            save_checkpoint(&dir.join("checkpoint"), &self.agent, &config_hash, &dataset_hash, self.episode)?;
        }
        Ok(TrainOutcome {
            agent: self.agent,
            log,
            config_hash,
            dataset_hash,
        })
    }
}

pub fn train(dataset: &Dataset, cfg: TrainConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    Trainer::new(dataset, cfg)?.train(out)
}
