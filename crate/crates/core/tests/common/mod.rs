#![allow(dead_code)]

use earnmore::marketdata::synthetic::drift_dataset;
use earnmore::marketdata::Dataset;

pub const DESK_WINDOW: usize = 10;
pub const DESK_TRAIN_DAYS: usize = 400;
pub const DESK_TEST_DAYS: usize = 120;

/// One noiseless +0.1%/day asset and three zero-drift noisy assets, with a
/// training split followed by a held-out test split.
pub fn desk_dataset(seed: u64) -> Dataset {
    drift_dataset(3, DESK_TRAIN_DAYS, DESK_TEST_DAYS, DESK_WINDOW, 0.01, seed)
        .expect("desk dataset builds")
        .1
}

use earnmore::env::{PoolMask, PortfolioEnv, PortfolioVector};
use earnmore::evaluator::{compute_metrics, ReturnSeries};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random long-only weights; sometimes all cash or fully invested.
pub fn random_portfolio(rng: &mut ChaCha8Rng, n: usize) -> PortfolioVector {
    let mut raw: Vec<f64> = (0..=n).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    match rng.random_range(0..10) {
        0 => {
            raw.iter_mut().for_each(|w| *w = 0.0);
            raw[0] = 1.0;
        }
        1 => raw[0] = 0.0,
        _ => {}
    }
    let total: f64 = raw.iter().sum();
    PortfolioVector {
        cash_weight: raw[0] / total,
        stock_weights: raw[1..].iter().map(|w| w / total).collect(),
    }
}

/// Runs `steps` random actions and tracks each asset's currency position
/// separately. Returns the worst relative value error and the relative
/// telescoping error of the summed rewards.
pub fn accounting_check(seed: u64, steps: usize) -> (f64, f64) {
    let (_, ds) = drift_dataset(4, steps + 1, 0, 3, 0.03, seed).expect("dataset builds");
    let env = PortfolioEnv::new(&ds, "train").unwrap();
    let n = ds.num_stocks();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v0 = 1_000.0;
    let mut state = env.reset(v0, PoolMask::all(n), steps).unwrap();
    let mut oracle = v0;
    let mut worst: f64 = 0.0;
    let mut rewards = 0.0;
    while !state.done() {
        let action = random_portfolio(&mut rng, n);
        let day = state.day;
        let mut cash = action.cash_weight * oracle;
        for i in 0..n {
            let units = action.stock_weights[i] * oracle / ds.close(i, day);
            cash += units * ds.close(i, day + 1);
        }
        oracle = cash;
        let (next, reward) = env.step(&state, &action).unwrap();
        rewards += reward;
        worst = worst.max((next.portfolio_value - oracle).abs() / oracle);
        state = next;
    }
    let telescoping = (rewards - (state.portfolio_value - v0)).abs() / v0;
    (worst, telescoping)
}

/// Independent straight-line metrics: `[arr, sr, vol, mdd, cr, sor]`.
pub fn oracle_metrics(v: &[f64]) -> [f64; 6] {
    let t = v.len() - 1;
    let mut r = Vec::new();
    for i in 1..v.len() {
        r.push((v[i] - v[i - 1]) / v[i - 1]);
    }
    let mut sum = 0.0;
    for x in &r {
        sum += x;
    }
    let mean = sum / t as f64;
    let mut ss = 0.0;
    for x in &r {
        ss += (x - mean) * (x - mean);
    }
    let vol = (ss / t as f64).sqrt();
    let mut mdd: f64 = 0.0;
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            mdd = mdd.max((v[i] - v[j]) / v[i]);
        }
    }
    let neg: Vec<f64> = r.iter().copied().filter(|x| *x < 0.0).collect();
    let sor = if neg.is_empty() {
        f64::INFINITY
    } else {
        let m = neg.iter().sum::<f64>() / neg.len() as f64;
        let dd = (neg.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / neg.len() as f64).sqrt();
        mean / dd
    };
    let arr = (v[t] - v[0]) / v[0] * 252.0 / t as f64;
    let cr = if mdd == 0.0 { f64::INFINITY } else { mean / mdd };
    [arr, mean / vol, vol, mdd, cr, sor]
}

pub fn random_values(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let len = rng.random_range(2..300);
    let mut v = vec![rng.random_range(10.0..1000.0)];
    for _ in 1..len {
        let last = *v.last().unwrap();
        v.push(last * (1.0 + rng.random_range(-0.05..0.055)));
    }
    v
}

fn metric_close(a: f64, b: f64) -> bool {
    if a.is_infinite() || b.is_infinite() {
        return a == b;
    }
    (a - b).abs() <= 1e-9 * b.abs() || (a - b).abs() <= 1e-15
}

/// Number of series (out of `count`) whose metrics disagree with the oracle.
pub fn metrics_check(seed: u64, count: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    let mut failures = 0;
    for _ in 0..count {
        let v = random_values(&mut rng);
        let dates = (0..v.len()).map(|i| start + chrono::Days::new(i as u64)).collect();
        let m = compute_metrics(&ReturnSeries::new(dates, v.clone()).unwrap()).unwrap();
        let o = oracle_metrics(&v);
        let got = [m.arr, m.sr, m.vol, m.mdd, m.cr, m.sor];
        if !got.iter().zip(o).all(|(a, b)| metric_close(*a, b)) {
            failures += 1;
        }
    }
    failures
}

use std::collections::HashMap;

use earnmore::agent::{standard_normal, AgentConfig, LossBatch, SacAgent};
use earnmore::nn::{Bind, Graph, Mat, ParamStore};
use earnmore::representation::{MaskPlan, PreparedWindow};

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Denominator floor so that gradients that are zero up to rounding compare absolutely.
pub const FD_FLOOR: f64 = 1e-6;

/// Tiny instance: N = 3 stocks, D = 4 days, E = 8.
pub struct TinyCase {
    pub agent: SacAgent,
    pub inputs: Vec<PreparedWindow>,
    pub plans: Vec<MaskPlan>,
    pub batch: LossBatch,
}

pub fn tiny_case(seed: u64) -> TinyCase {
    let (_, ds) = drift_dataset(2, 12, 0, 4, 0.02, seed).expect("dataset builds");
    let mut cfg = AgentConfig::new(3, 4, ds.layout().dense_width());
    cfg.embed_dim = 8;
    cfg.hidden = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agent = SacAgent::new(cfg.clone(), &mut rng).unwrap();
    let days: Vec<usize> = ds.split_days("train").unwrap().take(5).collect();
    let inputs: Vec<PreparedWindow> = days
        .iter()
        .map(|&t| PreparedWindow::new(&ds.window(t), &cfg.representation()).unwrap())
        .collect();
    let plans = vec![
        MaskPlan::from_masked(3, vec![0]),
        MaskPlan::from_masked(3, vec![1, 2]),
        MaskPlan::from_masked(3, vec![2]),
        MaskPlan::from_masked(3, vec![]),
    ];
    let now: Vec<&PreparedWindow> = inputs[..4].iter().collect();
    let next: Vec<&PreparedWindow> = inputs[1..].iter().collect();
    let states = agent.repr.represent(&agent.params.repr, &now, &plans);
    let next_states = agent.repr.represent(&agent.params.repr, &next, &plans);
    let mut actions = Mat::zeros((4, 4));
    for b in 0..4 {
        let p = random_portfolio(&mut rng, 3);
        for (j, w) in p.to_full().into_iter().enumerate() {
            actions[[b, j]] = w;
        }
    }
    let batch = LossBatch {
        states,
        next_states,
        actions,
        rewards: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
        plans: plans.clone(),
        noise: standard_normal(&mut rng, 4, 4),
        next_noise: standard_normal(&mut rng, 4, 4),
    };
    TinyCase {
        agent,
        inputs,
        plans,
        batch,
    }
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub name: String,
    pub worst: f64,
    pub checked: usize,
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

/// Central differences on every entry of small parameters and on a fixed
/// sample of larger ones.
fn fd_group(
    name: &str,
    case: &TinyCase,
    group: &str,
    only: Option<&[usize]>,
    grads: &HashMap<usize, Mat>,
    loss: &dyn Fn(&SacAgent) -> f64,
) -> GradReport {
    let store: &ParamStore = case.agent.params.groups().into_iter().find(|(g, _)| *g == group).unwrap().1;
    let ids: Vec<usize> = match only {
        Some(ids) => ids.to_vec(),
        None => (0..store.len()).collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for id in ids {
        let shape = store.get(id).dim();
        let size = shape.0 * shape.1;
        let entries: Vec<usize> = if size <= 64 {
            (0..size).collect()
        } else {
            (0..24).map(|_| rng.random_range(0..size)).collect()
        };
        let zero = Mat::zeros(shape);
        let analytic = grads.get(&id).unwrap_or(&zero);
        for e in entries {
            let (r, c) = (e / shape.1, e % shape.1);
            let mut plus = case.agent.clone();
            plus.params.group_mut(group).unwrap().get_mut(id)[[r, c]] += FD_STEP;
            let mut minus = case.agent.clone();
            minus.params.group_mut(group).unwrap().get_mut(id)[[r, c]] -= FD_STEP;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel(analytic[[r, c]], fd));
            checked += 1;
        }
    }
    GradReport {
        name: name.into(),
        worst,
        checked,
    }
}

pub fn reconstruction_value(agent: &SacAgent, inputs: &[PreparedWindow], plans: &[MaskPlan]) -> (f64, HashMap<usize, Mat>) {
    let refs: Vec<&PreparedWindow> = inputs[..plans.len()].iter().collect();
    let mut g = Graph::new();
    let (loss, _) = agent
        .repr
        .reconstruction_loss(&mut g, Bind::Train(&agent.params.repr), &refs, plans)
        .expect("some stocks are masked");
    (g.scalar(loss), g.backward(loss).into_params())
}

/// Finite-difference reports for the reconstruction loss (mask token and every
/// representation parameter), critic, actor and alpha losses.
pub fn gradient_checks(seed: u64) -> Vec<GradReport> {
    let case = tiny_case(seed);
    let (gamma, alpha, lambda, temp) = (0.9, 0.3, 1.0, 0.1);
    let te = case.agent.cfg.target_entropy();
    let mut out = Vec::new();

    let (_, g) = reconstruction_value(&case.agent, &case.inputs, &case.plans);
    let recon = |a: &SacAgent| reconstruction_value(a, &case.inputs, &case.plans).0;
    let token = [case.agent.repr.mask_token];
    out.push(fd_group("reconstruction / mask token", &case, "repr", Some(&token), &g, &recon));
    out.push(fd_group("reconstruction / all parameters", &case, "repr", None, &g, &recon));

    let g = case.agent.critic_loss(&case.batch, gamma, alpha).grads;
    let critic = |a: &SacAgent| a.critic_loss(&case.batch, gamma, alpha).value;
    out.push(fd_group("critic loss", &case, "critic", None, &g, &critic));

    let g = case.agent.actor_loss(&case.batch, alpha, lambda, temp).grads;
    let actor = |a: &SacAgent| a.actor_loss(&case.batch, alpha, lambda, temp).value;
    out.push(fd_group("actor loss", &case, "actor", None, &g, &actor));

    let g = case.agent.alpha_loss(&case.batch, te).grads;
    let alpha_fn = |a: &SacAgent| a.alpha_loss(&case.batch, te).value;
    out.push(fd_group("alpha loss", &case, "alpha", None, &g, &alpha_fn));
    out
}

use earnmore::agent::re_weight;
use earnmore::representation::MaskRatioDist;

/// Truncated-normal mean by Simpson's rule on the density restricted to [a, b].
pub fn simpson_truncated_mean(mu: f64, sigma: f64, a: f64, b: f64) -> f64 {
    let n = 20_000;
    let h = (b - a) / n as f64;
    let dens = |x: f64| (-0.5 * ((x - mu) / sigma).powi(2)).exp();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..=n {
        let x = a + i as f64 * h;
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        num += w * x * dens(x);
        den += w * dens(x);
    }
    num / den
}

/// Samples with the default ratio parameters: (all within [a, b], |empirical - analytic mean|).
pub fn truncated_check(seed: u64, samples: usize) -> (bool, f64) {
    let d = MaskRatioDist::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inside = true;
    let mut sum = 0.0;
    for _ in 0..samples {
        let r = d.sample(&mut rng).unwrap();
        inside &= (d.a..=d.b).contains(&r);
        sum += r;
    }
    let analytic = simpson_truncated_mean(d.mu, d.sigma, d.a, d.b);
    (inside, (sum / samples as f64 - analytic).abs())
}

#[derive(Debug, Clone)]
pub struct ReweightReport {
    pub softmax_err: f64,
    pub symmetry_exact: bool,
    pub monotone_violations: usize,
    pub argmax_violations: usize,
}

pub const TEMPERATURE_GRID: [f64; 7] = [10.0, 5.0, 1.0, 0.5, 0.1, 0.05, 0.01];

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..xs.len() {
        if xs[i] > xs[best] {
            best = i;
        }
    }
    best
}

/// Softmax equivalence at T = 1, the symmetric example and, over `count`
/// random logit vectors, max-weight monotonicity along the grid and argmax
/// preservation at every grid temperature.
pub fn reweight_suite(seed: u64, count: usize) -> ReweightReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut softmax_err: f64 = 0.0;
    let mut monotone_violations = 0;
    let mut argmax_violations = 0;
    for _ in 0..count {
        let n = rng.random_range(2..12);
        let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mx = logits.iter().copied().fold(f64::MIN, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let z: f64 = exps.iter().sum();
        let w = re_weight(&logits, 1.0).unwrap();
        for (a, e) in w.iter().zip(&exps) {
            softmax_err = softmax_err.max((a - e / z).abs());
        }
        let mut last = 0.0;
        let top = argmax(&logits);
        for t in TEMPERATURE_GRID {
            let w = re_weight(&logits, t).unwrap();
            let m = w.iter().copied().fold(f64::MIN, f64::max);
            if m < last {
                monotone_violations += 1;
            }
            last = m;
            if argmax(&w) != top {
                argmax_violations += 1;
            }
        }
    }
    let sym = re_weight(&[0.0, 0.0, 0.0], 0.37).unwrap();
    ReweightReport {
        softmax_err,
        symmetry_exact: sym.iter().all(|w| *w == 1.0 / 3.0),
        monotone_violations,
        argmax_violations,
    }
}
