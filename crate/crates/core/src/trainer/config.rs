use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::error::{Error, Result};
use crate::marketdata::{hex_digest, Dataset};
use crate::nn::WarmupMultiStep;
use crate::representation::MaskRatioDist;

/// Training hyperparameters. Serialized flat; file keys equal field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub batch_size: usize,
    pub horizon: usize,
    pub lr: f64,
    pub warmup_episodes: usize,
    pub warmup_start_lr: f64,
    pub decay_points: Vec<usize>,
    pub decay_factor: f64,
    pub gamma: f64,
    pub tau: f64,
    pub lambda_mask: f64,
    pub temperature: f64,
    pub mask_mu: f64,
    pub mask_sigma: f64,
    pub mask_a: f64,
    pub mask_b: f64,
    pub seed: u64,

    pub split: String,
    pub buffer_capacity: usize,
    /// Environment steps taken with random actions before gradient steps begin.
    pub warm_start_steps: usize,
    pub weight_decay: f64,
    pub embed_dim: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub init_alpha: f64,
    pub init_log_std: f64,
    pub target_entropy: Option<f64>,
    /// The learning signal is `reward_scale * reward / value_before`.
    pub reward_scale: f64,
    pub initial_cash: f64,
    /// Write an intermediate checkpoint every this many episodes (0 disables).
    pub checkpoint_every: usize,
    /// Record the per-batch optimization stage sequence.
    pub record_stages: bool,
    pub sparsify_threshold: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 2000,
            batch_size: 128,
            horizon: 128,
            lr: 1e-5,
            warmup_episodes: 300,
            warmup_start_lr: 1e-8,
            decay_points: vec![600, 1000, 1400],
            decay_factor: 0.1,
            gamma: 0.99,
            tau: 0.005,
            lambda_mask: 1.0,
            temperature: 0.1,
            mask_mu: 0.7,
            mask_sigma: 0.1,
            mask_a: 0.6,
            mask_b: 0.8,
            seed: 0,
            split: "train".into(),
            buffer_capacity: 100_000,
            warm_start_steps: 1000,
            weight_decay: 1e-2,
            embed_dim: 64,
            hidden: 64,
            kernel: 3,
            init_alpha: 1.0,
            init_log_std: -1.0,
            target_entropy: None,
            reward_scale: 100.0,
            initial_cash: 1.0e6,
            checkpoint_every: 0,
            record_stages: false,
            sparsify_threshold: None,
        }
    }
}

impl TrainConfig {
    /// Small, fast settings for a handful of synthetic stocks on a CPU.
    pub fn desk() -> Self {
        TrainConfig {
            episodes: 200,
            batch_size: 64,
            horizon: 64,
            lr: 1e-3,
            warmup_episodes: 5,
            warmup_start_lr: 1e-5,
            decay_points: vec![150],
            decay_factor: 0.3,
            gamma: 0.9,
            tau: 0.01,
            embed_dim: 32,
            hidden: 64,
            init_alpha: 1e-3,
            reward_scale: 500.0,
            // With four stocks the default ratio always hides two or three; this
            // range also covers the full pool and single removals.
            mask_mu: 0.3,
            mask_sigma: 0.2,
            mask_a: 0.0,
            mask_b: 0.6,
            buffer_capacity: 20_000,
            ..TrainConfig::default()
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg: TrainConfig = if is_json {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text).map_err(|e| Error::Serde(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size as f64),
            ("horizon", self.horizon as f64),
            ("lr", self.lr),
            ("warmup_start_lr", self.warmup_start_lr),
            ("decay_factor", self.decay_factor),
            ("tau", self.tau),
            ("temperature", self.temperature),
            ("mask_sigma", self.mask_sigma),
            ("buffer_capacity", self.buffer_capacity as f64),
            ("embed_dim", self.embed_dim as f64),
            ("hidden", self.hidden as f64),
            ("kernel", self.kernel as f64),
            ("init_alpha", self.init_alpha),
            ("reward_scale", self.reward_scale),
            ("initial_cash", self.initial_cash),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Validation(format!("gamma must be in [0, 1), got {}", self.gamma)));
        }
        if self.tau > 1.0 {
            return Err(Error::Validation(format!("tau must be <= 1, got {}", self.tau)));
        }
        if self.lambda_mask < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Validation("lambda_mask and weight_decay must be >= 0".into()));
        }
        if self.decay_points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation("decay_points must be strictly increasing".into()));
        }
        if !(0.0 <= self.mask_a && self.mask_a < self.mask_b && self.mask_b <= 1.0) {
            return Err(Error::Validation(format!(
                "mask bounds must satisfy 0 <= a < b <= 1, got [{}, {}]",
                self.mask_a, self.mask_b
            )));
        }
        Ok(())
    }

    pub fn schedule(&self) -> WarmupMultiStep {
        WarmupMultiStep {
            base_lr: self.lr,
            start_lr: self.warmup_start_lr,
            warmup_episodes: self.warmup_episodes,
            milestones: self.decay_points.clone(),
            factor: self.decay_factor,
        }
    }

    pub fn mask_ratio(&self) -> MaskRatioDist {
        MaskRatioDist {
            mu: self.mask_mu,
            sigma: self.mask_sigma,
            a: self.mask_a,
            b: self.mask_b,
        }
    }

    pub fn agent_config(&self, dataset: &Dataset) -> AgentConfig {
        let mut cfg = AgentConfig::new(dataset.num_stocks(), dataset.window_len(), dataset.layout().dense_width());
        cfg.embed_dim = self.embed_dim;
        cfg.hidden = self.hidden;
        cfg.kernel = self.kernel.min(dataset.window_len());
        cfg.gamma = self.gamma;
        cfg.tau = self.tau;
        cfg.lambda_mask = self.lambda_mask;
        cfg.temperature = self.temperature;
        cfg.target_entropy = self.target_entropy;
        cfg.init_alpha = self.init_alpha;
        cfg.init_log_std = self.init_log_std;
        cfg.sparsify_threshold = self.sparsify_threshold;
        cfg
    }

    pub fn hash(&self) -> String {
        hex_digest(&serde_json::to_vec(self).expect("config serializes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
        TrainConfig::desk().validate().unwrap();
    }

    #[test]
    fn decay_points_must_increase() {
        let cfg = TrainConfig {
            decay_points: vec![600, 600],
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_and_json_use_field_names() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        std::fs::write(&t, "episodes = 3\nbatch_size = 8\ndecay_points = [10, 20]\n").unwrap();
        let cfg = TrainConfig::from_path(&t).unwrap();
        assert_eq!((cfg.episodes, cfg.batch_size, cfg.decay_points.clone()), (3, 8, vec![10, 20]));

        let j = dir.path().join("c.json");
        std::fs::write(&j, r#"{"episodes": 4, "lr": 0.001}"#).unwrap();
        let cfg = TrainConfig::from_path(&j).unwrap();
        assert_eq!((cfg.episodes, cfg.lr), (4, 0.001));

        std::fs::write(&j, r#"{"episode": 4}"#).unwrap();
        assert!(TrainConfig::from_path(&j).is_err());
    }

    #[test]
    fn default_schedule_points() {
        let s = TrainConfig::default().schedule();
        let lrs: Vec<f64> = [0, 300, 600, 1000, 1400].iter().map(|e| s.lr(*e)).collect();
        let expected = [1e-8, 1e-5, 1e-6, 1e-7, 1e-8];
        for (a, b) in lrs.iter().zip(expected) {
            assert!((a - b).abs() <= 1e-12 * b, "{a} vs {b}");
        }
    }
}
