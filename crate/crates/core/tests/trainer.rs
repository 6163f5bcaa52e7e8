mod common;

use earnmore::env::{PoolMask, PortfolioVector};
use earnmore::marketdata::synthetic::drift_dataset;
use earnmore::marketdata::Dataset;
use earnmore::trainer::{
    load_checkpoint, save_checkpoint, train, ReplayBuffer, Stage, TrainConfig, Trainer, Transition,
    CHECKPOINT_FORMAT_VERSION,
};
use earnmore::Error;

fn small_dataset() -> Dataset {
    drift_dataset(2, 60, 20, 5, 0.01, 3).unwrap().1
}

fn small_config() -> TrainConfig {
    TrainConfig {
        episodes: 3,
        batch_size: 8,
        horizon: 16,
        warm_start_steps: 10,
        embed_dim: 8,
        hidden: 8,
        record_stages: true,
        ..TrainConfig::desk()
    }
}

#[test]
fn every_gradient_step_runs_stages_in_order() {
    let ds = small_dataset();
    let out = train(&ds, small_config(), None).unwrap();
    let order = [Stage::Critic, Stage::Alpha, Stage::Actor, Stage::Representation];
    let mut steps = 0;
    for record in &out.log {
        // The representation update is skipped only when no stock was masked.
        let mut i = 0;
        while i < record.stages.len() {
            assert_eq!(&record.stages[i..i + 3], &order[..3], "episode {}", record.episode);
            i += 3;
            if record.stages.get(i) == Some(&Stage::Representation) {
                i += 1;
            }
            steps += 1;
        }
    }
    // 48 environment steps, gradients from step 11 on.
    assert_eq!(steps, 3 * 16 - 10);
    for r in &out.log {
        if r.j_q.is_some() {
            assert!(r.j_q.unwrap().is_finite() && r.j_pi.unwrap().is_finite());
        }
    }
}

#[test]
fn no_gradients_before_warm_start() {
    let ds = small_dataset();
    let cfg = TrainConfig {
        episodes: 1,
        warm_start_steps: 100,
        ..small_config()
    };
    let mut t = Trainer::new(&ds, cfg).unwrap();
    let before = t.agent.clone();
    let r = t.run_episode().unwrap();
    assert!(r.j_q.is_none() && r.stages.is_empty());
    assert_eq!(t.agent.params.actor, before.params.actor);
    assert_eq!(t.buffer().len(), 16);
}

fn transition(i: usize) -> Transition {
    Transition {
        window_ref: i,
        mask: PoolMask::all(2),
        action: PortfolioVector::all_cash(2),
        reward: i as f64,
        value_before: 1.0,
        next_window_ref: i + 1,
    }
}

#[test]
fn replay_buffer_overwrites_oldest() {
    let mut b = ReplayBuffer::new(4);
    for i in 0..10 {
        b.push(transition(i));
    }
    assert_eq!(b.len(), 4);
    let kept: Vec<usize> = b.iter().map(|t| t.window_ref).collect();
    assert_eq!(kept, vec![6, 7, 8, 9]);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut sample: Vec<usize> = b.sample(&mut rng, 10).iter().map(|t| t.window_ref).collect();
    sample.sort();
    assert_eq!(sample, vec![6, 7, 8, 9]);
}

#[test]
fn same_seed_same_log_and_parameters() {
    let ds = small_dataset();
    let a = train(&ds, small_config(), None).unwrap();
    let b = train(&ds, small_config(), None).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.agent.params.actor, b.agent.params.actor);
    let c = train(&ds, TrainConfig { seed: 1, ..small_config() }, None).unwrap();
    assert_ne!(a.agent.params.actor, c.agent.params.actor);
}

#[test]
fn checkpoint_round_trip_reproduces_actions() {
    let ds = small_dataset();
    let dir = tempfile::tempdir().unwrap();
    let out = train(&ds, small_config(), Some(dir.path())).unwrap();
    let log = std::fs::read_to_string(dir.path().join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let ckpt = load_checkpoint(&dir.path().join("checkpoint"), Some(&ds.manifest)).unwrap();
    assert!(ckpt.warnings.is_empty());
    assert_eq!(ckpt.manifest.format_version, CHECKPOINT_FORMAT_VERSION);
    assert_eq!(ckpt.manifest.episodes, 3);
    assert_eq!(ckpt.agent.params, out.agent.params);

    let schedule = Default::default();
    let a = earnmore::evaluator::backtest(&out.agent, &ds, "test", &schedule, None).unwrap();
    let b = earnmore::evaluator::backtest(&ckpt.agent, &ds, "test", &schedule, None).unwrap();
    assert_eq!(a.series.values, b.series.values);
}

#[test]
fn other_dataset_only_warns() {
    let ds = small_dataset();
    let other = drift_dataset(2, 70, 20, 5, 0.01, 3).unwrap().1;
    let dir = tempfile::tempdir().unwrap();
    let out = train(&ds, TrainConfig { episodes: 1, ..small_config() }, None).unwrap();
    save_checkpoint(dir.path(), &out.agent, &out.config_hash, &out.dataset_hash, 1).unwrap();
    let ckpt = load_checkpoint(dir.path(), Some(&other.manifest)).unwrap();
    assert_eq!(ckpt.warnings.len(), 1);
    assert!(ckpt.warnings[0].contains("dataset hash"));
}

#[test]
fn wrong_format_version_is_rejected() {
    let ds = small_dataset();
    let dir = tempfile::tempdir().unwrap();
    let out = train(&ds, TrainConfig { episodes: 1, ..small_config() }, None).unwrap();
    save_checkpoint(dir.path(), &out.agent, &out.config_hash, &out.dataset_hash, 1).unwrap();
    let path = dir.path().join("manifest.json");
    let mut manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    manifest["format_version"] = serde_json::json!(CHECKPOINT_FORMAT_VERSION + 1);
    std::fs::write(&path, manifest.to_string()).unwrap();
    let err = load_checkpoint(dir.path(), None).unwrap_err();
    assert!(matches!(err, Error::VersionMismatch { .. }), "{err}");
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        TrainConfig { gamma: 1.0, ..TrainConfig::default() },
        TrainConfig { tau: 0.0, ..TrainConfig::default() },
        TrainConfig { temperature: 0.0, ..TrainConfig::default() },
        TrainConfig { mask_a: 0.8, mask_b: 0.6, ..TrainConfig::default() },
        TrainConfig { decay_points: vec![5, 5], ..TrainConfig::default() },
        TrainConfig { lambda_mask: -1.0, ..TrainConfig::default() },
    ];
    for cfg in bad {
        assert!(matches!(cfg.validate(), Err(Error::Validation(_))));
    }
    TrainConfig::default().validate().unwrap();
    TrainConfig::desk().validate().unwrap();

    let ds = small_dataset();
    let too_long = TrainConfig { horizon: 1000, ..small_config() };
    assert!(Trainer::new(&ds, too_long).is_err());
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.toml");
    std::fs::write(&path, "episodes = 7\nlr = 0.002\nseed = 9\n").unwrap();
    let cfg = TrainConfig::from_path(&path).unwrap();
    assert_eq!((cfg.episodes, cfg.lr, cfg.seed), (7, 0.002, 9));
    assert_eq!(cfg.gamma, TrainConfig::default().gamma);
    std::fs::write(&path, "gamma = 1.5\n").unwrap();
    assert!(TrainConfig::from_path(&path).is_err());
}
