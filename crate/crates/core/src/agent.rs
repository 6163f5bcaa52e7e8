//! Soft actor-critic over maskable representations.
//!
//! The actor emits a diagonal Gaussian over `n + 1` logits (cash first); the
//! portfolio is the temperature softmax of the sampled logits. Two critics
//! score `(representation, weights)` pairs and slowly-moving copies provide
//! bootstrap targets. The entropy coefficient is tuned automatically.

use std::collections::HashMap;

use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::PortfolioVector;
use crate::error::{Error, Result};
use crate::nn::{Bind, Graph, Mat, Mlp, ParamStore, Var};
use crate::representation::{MaskPlan, MaskableRepresentation, RepresentationConfig, RepresentationNet};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const ACTOR_OUTPUT_INIT_SCALE: f64 = 0.01;
const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// Temperature softmax `exp(x_i / T) / sum_j exp(x_j / T)`.
pub fn re_weight(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {temperature}")));
    }
    if logits.is_empty() {
        return Err(Error::InvalidArgument("no logits".into()));
    }
    if let Some(bad) = logits.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            stage: "re-weighting".into(),
            detail: format!("logit {bad}"),
        });
    }
    Ok(re_weight_unchecked(logits, temperature))
}

pub(crate) fn re_weight_unchecked(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| ((x - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Zeroes weights below `threshold` and renormalizes the rest.
pub fn sparsify(weights: &[f64], threshold: f64) -> Vec<f64> {
    let kept: Vec<f64> = weights.iter().map(|w| if *w < threshold { 0.0 } else { *w }).collect();
    let total: f64 = kept.iter().sum();
    if total <= 0.0 {
        return weights.to_vec();
    }
    kept.into_iter().map(|w| w / total).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub num_stocks: usize,
    pub window: usize,
    pub dense_width: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub gamma: f64,
    pub tau: f64,
    pub lambda_mask: f64,
    pub temperature: f64,
    /// Defaults to `-(n + 1)`.
    pub target_entropy: Option<f64>,
    pub init_alpha: f64,
    /// Initial bias of the log-std head, so exploration starts below the clamp.
    pub init_log_std: f64,
    /// Optional post-step that zeroes weights under this value.
    pub sparsify_threshold: Option<f64>,
}

impl AgentConfig {
    pub fn new(num_stocks: usize, window: usize, dense_width: usize) -> Self {
        AgentConfig {
            num_stocks,
            window,
            dense_width,
            embed_dim: 64,
            hidden: 64,
            kernel: 3.min(window),
            gamma: 0.99,
            tau: 0.005,
            lambda_mask: 1.0,
            temperature: 0.1,
            target_entropy: None,
            init_alpha: 1.0,
            init_log_std: -1.0,
            sparsify_threshold: None,
        }
    }

    pub fn action_dim(&self) -> usize {
        self.num_stocks + 1
    }

    pub fn state_dim(&self) -> usize {
        (self.num_stocks + 1) * self.embed_dim
    }

    pub fn target_entropy(&self) -> f64 {
        self.target_entropy.unwrap_or(-(self.action_dim() as f64))
    }

    pub fn representation(&self) -> RepresentationConfig {
        RepresentationConfig {
            num_stocks: self.num_stocks,
            window: self.window,
            dense_width: self.dense_width,
            embed_dim: self.embed_dim,
            kernel: self.kernel,
        }
    }
}

/// Every trainable tensor of the agent, grouped by optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentParams {
    pub repr: ParamStore,
    pub actor: ParamStore,
    pub critic: ParamStore,
    pub critic_target: ParamStore,
    pub alpha: ParamStore,
}

impl AgentParams {
    pub fn groups(&self) -> [(&'static str, &ParamStore); 5] {
        [
            ("repr", &self.repr),
            ("actor", &self.actor),
            ("critic", &self.critic),
            ("critic_target", &self.critic_target),
            ("alpha", &self.alpha),
        ]
    }

    pub fn group_mut(&mut self, name: &str) -> Option<&mut ParamStore> {
        match name {
            "repr" => Some(&mut self.repr),
            "actor" => Some(&mut self.actor),
            "critic" => Some(&mut self.critic),
            "critic_target" => Some(&mut self.critic_target),
            "alpha" => Some(&mut self.alpha),
            _ => None,
        }
    }
}

/// Actor output for a batch.
#[derive(Debug, Clone)]
pub struct PolicySample {
    pub mean: Var,
    pub log_std: Var,
    pub logits: Var,
    /// `batch x 1`
    pub log_prob: Var,
    /// `batch x (n + 1)` after re-weighting
    pub weights: Var,
}

/// Policy values for a single state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    pub sampled_logits: Vec<f64>,
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticPair {
    pub q1: f64,
    pub q2: f64,
    pub target_q1: f64,
    pub target_q2: f64,
}

/// Inputs shared by the three SAC losses. Representations are plain values:
/// gradients from the RL losses do not flow into the representation.
#[derive(Debug, Clone)]
pub struct LossBatch {
    /// `batch x state_dim`
    pub states: Mat,
    pub next_states: Mat,
    /// `batch x (n + 1)` executed weights
    pub actions: Mat,
    pub rewards: Vec<f64>,
    pub plans: Vec<MaskPlan>,
    /// Standard normal noise for the policy sample at `states`.
    pub noise: Mat,
    /// Standard normal noise for the policy sample at `next_states`.
    pub next_noise: Mat,
}

impl LossBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// A scalar loss with gradients for the store it optimizes.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    pub grads: HashMap<usize, Mat>,
    /// Masked-weight penalty part of the actor loss (zero elsewhere).
    pub penalty: f64,
    /// Mean log-probability of the fresh policy sample, where one was drawn.
    pub mean_log_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SacAgent {
    pub cfg: AgentConfig,
    pub repr: RepresentationNet,
    pub actor: Mlp,
    pub critics: [Mlp; 2],
    pub log_alpha: usize,
    pub params: AgentParams,
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

impl SacAgent {
    pub fn new<R: Rng>(cfg: AgentConfig, rng: &mut R) -> Result<Self> {
        if !(cfg.temperature > 0.0) {
            return Err(Error::InvalidArgument("temperature must be > 0".into()));
        }
        if !(cfg.init_alpha > 0.0) {
            return Err(Error::InvalidArgument("initial alpha must be > 0".into()));
        }
        let mut repr_store = ParamStore::new();
        let repr = RepresentationNet::new(cfg.representation(), &mut repr_store, rng)?;
        let mut actor_store = ParamStore::new();
        let actor = Mlp::new(&mut actor_store, "actor", cfg.state_dim(), cfg.hidden, 2 * cfg.action_dim(), rng);
        // Small initial logits keep the low-temperature softmax away from saturation.
        actor_store.get_mut(actor.output.weight).mapv_inplace(|w| w * ACTOR_OUTPUT_INIT_SCALE);
        let bias = actor_store.get_mut(actor.output.bias);
        bias.fill(0.0);
        bias.slice_mut(s![.., cfg.action_dim()..]).fill(cfg.init_log_std);
        let mut critic_store = ParamStore::new();
        let critic_in = cfg.state_dim() + cfg.action_dim();
        let critics = [
            Mlp::new(&mut critic_store, "critic.q1", critic_in, cfg.hidden, 1, rng),
            Mlp::new(&mut critic_store, "critic.q2", critic_in, cfg.hidden, 1, rng),
        ];
        let critic_target = critic_store.clone();
        let mut alpha = ParamStore::new();
        let log_alpha = alpha.add("log_alpha", Array2::from_elem((1, 1), cfg.init_alpha.ln()), false);
        Ok(SacAgent {
            cfg,
            repr,
            actor,
            critics,
            log_alpha,
            params: AgentParams {
                repr: repr_store,
                actor: actor_store,
                critic: critic_store,
                critic_target,
                alpha,
            },
        })
    }

    pub fn alpha(&self) -> f64 {
        self.params.alpha.get(self.log_alpha)[[0, 0]].exp()
    }

    /// Gaussian policy head, reparameterized sample, log-density of the logits and re-weighting.
    pub fn policy(&self, g: &mut Graph, bind: Bind, states: Var, noise: &Mat, temperature: f64) -> PolicySample {
        let k = self.cfg.action_dim();
        let out = self.actor.forward(g, bind, states);
        let mean = g.slice_cols(out, 0, k);
        let raw_log_std = g.slice_cols(out, k, k);
        let log_std = soft_clamp(g, raw_log_std, LOG_STD_MIN, LOG_STD_MAX);
        let std = g.exp(log_std);
        let eps = g.constant(noise.clone());
        let scaled = g.mul(std, eps);
        let logits = g.add(mean, scaled);

        // log N(logits; mean, std) = sum_j (-eps_j^2 / 2 - log_std_j - log(2 pi) / 2)
        let quad: Array2<f64> = noise.mapv(|e| -0.5 * e * e - HALF_LOG_TWO_PI);
        let quad = g.constant(quad);
        let neg_log_std = g.scale(log_std, -1.0);
        let terms = g.add(quad, neg_log_std);
        let log_prob = g.row_sum(terms);

        let weights = g.softmax_rows(logits, temperature);
        PolicySample {
            mean,
            log_std,
            logits,
            log_prob,
            weights,
        }
    }

    pub fn q_value(&self, g: &mut Graph, bind: Bind, which: usize, states: Var, actions: Var) -> Var {
        let x = g.concat_cols(&[states, actions]);
        self.critics[which].forward(g, bind, x)
    }

    /// Bootstrap targets `r + gamma * (min target Q - alpha log pi)` at fresh next-state samples.
    pub fn td_targets(&self, batch: &LossBatch, gamma: f64, alpha: f64) -> Vec<f64> {
        let mut g = Graph::new();
        let next = g.constant(batch.next_states.clone());
        let pol = self.policy(&mut g, Bind::Frozen(&self.params.actor), next, &batch.next_noise, self.cfg.temperature);
        let tq1 = self.q_value(&mut g, Bind::Frozen(&self.params.critic_target), 0, next, pol.weights);
        let tq2 = self.q_value(&mut g, Bind::Frozen(&self.params.critic_target), 1, next, pol.weights);
        let tq = g.min(tq1, tq2);
        let (tq, lp) = (g.value(tq), g.value(pol.log_prob));
        (0..batch.len())
            .map(|b| batch.rewards[b] + gamma * (tq[[b, 0]] - alpha * lp[[b, 0]]))
            .collect()
    }

    /// `sum over both critics of 1/2 mean (Q(s, a) - y)^2`.
    pub fn critic_loss(&self, batch: &LossBatch, gamma: f64, alpha: f64) -> LossOutput {
        let y = self.td_targets(batch, gamma, alpha);
        let mut g = Graph::new();
        let bind = Bind::Train(&self.params.critic);
        let states = g.constant(batch.states.clone());
        let actions = g.constant(batch.actions.clone());
        let y = g.constant(Array2::from_shape_vec((y.len(), 1), y).expect("column"));
        let mut total = None;
        for which in 0..2 {
            let q = self.q_value(&mut g, bind, which, states, actions);
            let d = g.sub(q, y);
            let sq = g.square(d);
            let m = g.mean(sq);
            let half = g.scale(m, 0.5);
            total = Some(match total {
                None => half,
                Some(t) => g.add(t, half),
            });
        }
        let loss = total.expect("two critics");
        LossOutput {
            value: g.scalar(loss),
            grads: g.backward(loss).into_params(),
            penalty: 0.0,
            mean_log_prob: 0.0,
        }
    }

    /// `mean(alpha log pi - min Q) + lambda_mask * mean(sum of re-weighted mass on masked slots)`.
    pub fn actor_loss(&self, batch: &LossBatch, alpha: f64, lambda_mask: f64, temperature: f64) -> LossOutput {
        let mut g = Graph::new();
        let states = g.constant(batch.states.clone());
        let pol = self.policy(&mut g, Bind::Train(&self.params.actor), states, &batch.noise, temperature);
        let q1 = self.q_value(&mut g, Bind::Frozen(&self.params.critic), 0, states, pol.weights);
        let q2 = self.q_value(&mut g, Bind::Frozen(&self.params.critic), 1, states, pol.weights);
        let q = g.min(q1, q2);
        let alpha_lp = g.scale(pol.log_prob, alpha);
        let sac = g.sub(alpha_lp, q);
        let sac = g.mean(sac);

        let selector = masked_selector(&batch.plans, self.cfg.action_dim());
        let (loss, penalty) = if selector.iter().any(|x| *x != 0.0) && lambda_mask != 0.0 {
            let sel = g.constant(selector);
            let masked = g.mul(pol.weights, sel);
            let mass = g.sum(masked);
            let pen = g.scale(mass, lambda_mask / batch.len() as f64);
            (g.add(sac, pen), g.scalar(pen))
        } else {
            (sac, 0.0)
        };
        let mean_log_prob = g.value(pol.log_prob).mean().unwrap_or(0.0);
        LossOutput {
            value: g.scalar(loss),
            grads: g.backward(loss).into_params(),
            penalty,
            mean_log_prob,
        }
    }

    /// `mean(-alpha log pi - alpha H)` differentiated with respect to `log_alpha`.
    pub fn alpha_loss(&self, batch: &LossBatch, target_entropy: f64) -> LossOutput {
        let mut g = Graph::new();
        let states = g.constant(batch.states.clone());
        let pol = self.policy(&mut g, Bind::Frozen(&self.params.actor), states, &batch.noise, self.cfg.temperature);
        let lp = g.value(pol.log_prob).clone();
        let mean_log_prob = lp.mean().unwrap_or(0.0);
        self.alpha_loss_from_log_probs(&lp.column(0).to_vec(), target_entropy, mean_log_prob)
    }

    pub fn alpha_loss_from_log_probs(&self, log_probs: &[f64], target_entropy: f64, mean_log_prob: f64) -> LossOutput {
        let mut g = Graph::new();
        let log_alpha = g.param(self.log_alpha, self.params.alpha.get(self.log_alpha).clone());
        let alpha = g.exp(log_alpha);
        let shifted: Vec<f64> = log_probs.iter().map(|lp| -lp - target_entropy).collect();
        let n = shifted.len();
        let c = g.constant(Array2::from_shape_vec((n, 1), shifted).expect("column"));
        let terms = g.scale_by(c, alpha);
        let loss = g.mean(terms);
        LossOutput {
            value: g.scalar(loss),
            grads: g.backward(loss).into_params(),
            penalty: 0.0,
            mean_log_prob,
        }
    }

    /// `target <- tau * online + (1 - tau) * target`.
    pub fn update_targets(&mut self, tau: f64) -> Result<()> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::InvalidArgument(format!("tau must be in (0, 1], got {tau}")));
        }
        let online = self.params.critic.clone();
        self.params.critic_target.soft_update_from(&online, tau);
        Ok(())
    }

    /// Policy statistics for one representation.
    pub fn policy_output(&self, rep: &MaskableRepresentation, noise: Option<&[f64]>) -> PolicyOutput {
        let k = self.cfg.action_dim();
        let eps = match noise {
            Some(n) => Array2::from_shape_vec((1, k), n.to_vec()).expect("noise length"),
            None => Array2::zeros((1, k)),
        };
        let mut g = Graph::new();
        let state = g.constant(rep.flattened());
        let pol = self.policy(&mut g, Bind::Frozen(&self.params.actor), state, &eps, self.cfg.temperature);
        let row = |v: Var| g.value(v).row(0).to_vec();
        PolicyOutput {
            mean: row(pol.mean),
            log_std: row(pol.log_std),
            sampled_logits: row(pol.logits),
            log_prob: g.scalar(pol.log_prob),
        }
    }

    /// Maps a representation to a portfolio. Deterministic mode uses the mean logits.
    pub fn act<R: Rng + ?Sized>(
        &self,
        rep: &MaskableRepresentation,
        stochastic: bool,
        temperature: f64,
        rng: &mut R,
    ) -> Result<PortfolioVector> {
        if rep.slots.nrows() != self.cfg.action_dim() {
            return Err(Error::Shape(format!(
                "representation has {} slots, agent expects {}",
                rep.slots.nrows(),
                self.cfg.action_dim()
            )));
        }
        let noise: Option<Vec<f64>> =
            stochastic.then(|| (0..self.cfg.action_dim()).map(|_| StandardNormal.sample(rng)).collect());
        let out = self.policy_output(rep, noise.as_deref());
        let logits = if stochastic { out.sampled_logits } else { out.mean };
        self.portfolio_from_logits(&logits, temperature)
    }

    pub fn portfolio_from_logits(&self, logits: &[f64], temperature: f64) -> Result<PortfolioVector> {
        let mut w = re_weight(logits, temperature)?;
        if let Some(th) = self.cfg.sparsify_threshold {
            w = sparsify(&w, th);
        }
        PortfolioVector::from_full(&w)
    }

    /// Deterministic actions for a batch of flattened representations.
    pub fn act_batch(&self, states: &Mat, temperature: f64) -> Result<Vec<PortfolioVector>> {
        let k = self.cfg.action_dim();
        let mut g = Graph::new();
        let st = g.constant(states.clone());
        let zeros = Array2::zeros((states.nrows(), k));
        let pol = self.policy(&mut g, Bind::Frozen(&self.params.actor), st, &zeros, temperature);
        let means = g.value(pol.mean);
        (0..states.nrows())
            .map(|b| self.portfolio_from_logits(&means.slice(s![b, ..]).to_vec(), temperature))
            .collect()
    }

    pub fn critic_values(&self, state: &Mat, action: &[f64]) -> CriticPair {
        let mut g = Graph::new();
        let st = g.constant(state.clone());
        let a = g.constant(Array2::from_shape_vec((1, action.len()), action.to_vec()).expect("row"));
        let mut vals = [0.0; 4];
        for (k, (store, which)) in [
            (&self.params.critic, 0),
            (&self.params.critic, 1),
            (&self.params.critic_target, 0),
            (&self.params.critic_target, 1),
        ]
        .into_iter()
        .enumerate()
        {
            let q = self.q_value(&mut g, Bind::Frozen(store), which, st, a);
            vals[k] = g.scalar(q);
        }
        CriticPair {
            q1: vals[0],
            q2: vals[1],
            target_q1: vals[2],
            target_q2: vals[3],
        }
    }
}

/// Smooth bound into `[lo, hi]`: `hi - softplus(hi - lo - softplus(x - lo))`.
/// Close to the identity well inside the range; unlike a hard clamp its gradient
/// never vanishes at the upper bound, so a head pushed past it can come back.
pub fn soft_clamp(g: &mut Graph, x: Var, lo: f64, hi: f64) -> Var {
    let above_lo = g.add_scalar(x, -lo);
    let above_lo = g.softplus(above_lo);
    let gap = g.scale(above_lo, -1.0);
    let gap = g.add_scalar(gap, hi - lo);
    let gap = g.softplus(gap);
    let y = g.scale(gap, -1.0);
    let y = g.add_scalar(y, hi);
    g.clamp(y, lo, hi)
}

/// `batch x (n + 1)` indicator of masked stock slots (column 0 is cash).
pub fn masked_selector(plans: &[MaskPlan], action_dim: usize) -> Mat {
    let mut sel = Array2::zeros((plans.len(), action_dim));
    for (b, plan) in plans.iter().enumerate() {
        for &i in &plan.masked {
            sel[[b, i + 1]] = 1.0;
        }
    }
    sel
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_temperature_is_softmax() {
        let x = [0.3, -1.0, 2.5, 0.0];
        let w = re_weight(&x, 1.0).unwrap();
        let z: f64 = x.iter().map(|v| v.exp()).sum();
        for (wi, xi) in w.iter().zip(x) {
            assert!((wi - xi.exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_logits_are_uniform() {
        for t in [0.01, 0.1, 1.0, 10.0] {
            let w = re_weight(&[0.0, 0.0, 0.0], t).unwrap();
            assert!(w.iter().all(|v| *v == 1.0 / 3.0));
        }
    }

    #[test]
    fn low_temperature_example() {
        let w = re_weight(&[2.0, 1.0, 0.0], 0.1).unwrap();
        // 40-digit reference values
        let expected = [0.999_954_600_070_331_1, 4.539_786_860_886_666e-5, 2.061_060_046_209_062e-9];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() <= 1e-12 * b.max(1e-300) + 1e-18, "{a} vs {b}");
        }
    }

    #[test]
    fn non_positive_temperature_rejected() {
        assert!(re_weight(&[1.0, 2.0], 0.0).is_err());
        assert!(re_weight(&[1.0, 2.0], -1.0).is_err());
        assert!(re_weight(&[1.0, f64::NAN], 1.0).is_err());
    }

    #[test]
    fn sparsify_renormalizes() {
        let w = sparsify(&[0.5, 0.49995, 0.00005], 1e-4);
        assert_eq!(w[2], 0.0);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn selector_marks_masked_stock_columns() {
        let plans = vec![MaskPlan::from_masked(3, vec![1]), MaskPlan::all_visible(3)];
        let sel = masked_selector(&plans, 4);
        assert_eq!(sel, ndarray::array![[0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 0.0]]);
    }
}
