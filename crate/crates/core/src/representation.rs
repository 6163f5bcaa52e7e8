//! Maskable stock representation.
//!
//! Each stock's window is embedded (a 1-D convolution over time of prices and
//! indicators plus calendar lookups), a subset of stocks is masked, the
//! visible ones and a `[CLS]` slot go through a per-slot encoder, and masked
//! slots are filled with a learnable token. A decoder reconstructs the
//! normalized OHLC window of every masked stock.

use ndarray::{s, Array2};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::env::PoolMask;
use crate::error::{Error, Result};
use crate::marketdata::{FeatureWindow, TemporalFeatures, PRICE_CHANNELS};
use crate::nn::{normal_matrix, Bind, Graph, Mat, Mlp, ParamStore, Var};

pub const DAYS_OF_WEEK: usize = 7;
pub const DAYS_OF_MONTH: usize = 31;
pub const MONTHS: usize = 12;
pub const TOKEN_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepresentationConfig {
    pub num_stocks: usize,
    pub window: usize,
    /// Width of the price + indicator input per day.
    pub dense_width: usize,
    pub embed_dim: usize,
    pub kernel: usize,
}

impl RepresentationConfig {
    pub fn patch_width(&self) -> usize {
        self.kernel * self.dense_width
    }

    pub fn target_width(&self) -> usize {
        self.window * PRICE_CHANNELS
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.kernel > self.window {
            return Err(Error::InvalidArgument(format!(
                "convolution kernel {} must be in 1..={}",
                self.kernel, self.window
            )));
        }
        if self.num_stocks == 0 || self.embed_dim == 0 || self.dense_width == 0 {
            return Err(Error::InvalidArgument("representation sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Truncated-normal mask-ratio distribution parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskRatioDist {
    pub mu: f64,
    pub sigma: f64,
    pub a: f64,
    pub b: f64,
}

impl Default for MaskRatioDist {
    fn default() -> Self {
        MaskRatioDist {
            mu: 0.7,
            sigma: 0.1,
            a: 0.6,
            b: 0.8,
        }
    }
}

impl MaskRatioDist {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        sample_mask_ratio(rng, self.mu, self.sigma, self.a, self.b)
    }
}

/// Draws from `N(mu, sigma^2)` truncated to `[a, b]` by inverting the CDF.
pub fn sample_mask_ratio<R: Rng + ?Sized>(rng: &mut R, mu: f64, sigma: f64, a: f64, b: f64) -> Result<f64> {
    if !(a < b) {
        return Err(Error::InvalidArgument(format!("truncation bounds need a < b, got a={a}, b={b}")));
    }
    if !(sigma > 0.0) || !mu.is_finite() {
        return Err(Error::InvalidArgument(format!("need finite mu and sigma > 0, got mu={mu}, sigma={sigma}")));
    }
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    let alpha = (a - mu) / sigma;
    let beta = (b - mu) / sigma;
    // Work in whichever tail keeps the CDF values away from 1.
    let (lo, hi, flip) = if alpha > 0.0 { (-beta, -alpha, true) } else { (alpha, beta, false) };
    let (plo, phi) = (std.cdf(lo), std.cdf(hi));
    let z = if phi - plo > 1e-300 {
        let u: f64 = rng.random_range(0.0..1.0);
        std.inverse_cdf(plo + u * (phi - plo)).clamp(lo, hi)
    } else {
        // Essentially all mass sits at the bound nearest the mean.
        lo
    };
    let z = if flip { -z } else { z };
    Ok((mu + sigma * z).clamp(a, b))
}

/// Analytic mean of the truncated normal.
pub fn truncated_normal_mean(mu: f64, sigma: f64, a: f64, b: f64) -> f64 {
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let (alpha, beta) = ((a - mu) / sigma, (b - mu) / sigma);
    mu + sigma * (pdf(alpha) - pdf(beta)) / (std.cdf(beta) - std.cdf(alpha))
}

/// Which stock slots are masked for one state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub num_stocks: usize,
    pub masked: Vec<usize>,
    pub visible: Vec<usize>,
}

impl MaskPlan {
    pub fn from_pool(mask: &PoolMask) -> Self {
        MaskPlan {
            num_stocks: mask.len(),
            masked: mask.masked_slots(),
            visible: mask.selected_slots(),
        }
    }

    pub fn all_visible(n: usize) -> Self {
        MaskPlan {
            num_stocks: n,
            masked: vec![],
            visible: (0..n).collect(),
        }
    }

    pub fn from_masked(n: usize, mut masked: Vec<usize>) -> Self {
        masked.sort_unstable();
        masked.dedup();
        let visible = (0..n).filter(|i| masked.binary_search(i).is_err()).collect();
        MaskPlan {
            num_stocks: n,
            masked,
            visible,
        }
    }

    pub fn is_masked(&self, slot: usize) -> bool {
        self.masked.binary_search(&slot).is_ok()
    }

    pub fn masked_flags(&self) -> Vec<bool> {
        (0..self.num_stocks).map(|i| self.is_masked(i)).collect()
    }

    pub fn to_pool(&self) -> Result<PoolMask> {
        PoolMask::new((0..self.num_stocks).map(|i| !self.is_masked(i)).collect())
    }
}

/// Number of masked stocks for a training ratio: `round(ratio * n)`, keeping at least one visible.
pub fn masked_count(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).round() as usize).min(n - 1)
}

/// Training plans mask a uniformly random subset; a forced pool masks its complement.
pub fn plan_mask<R: Rng + ?Sized>(n: usize, ratio: f64, rng: &mut R, forced: Option<&PoolMask>) -> Result<MaskPlan> {
    if let Some(pool) = forced {
        if pool.len() != n {
            return Err(Error::Shape(format!("pool has {} slots, expected {n}", pool.len())));
        }
        return Ok(MaskPlan::from_pool(pool));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("training masks need at least 2 stocks".into()));
    }
    let k = masked_count(n, ratio);
    Ok(MaskPlan::from_masked(n, sample(rng, n, k).into_vec()))
}

/// Model-ready, parameter-free view of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedWindow {
    /// Time-averaged convolution patches, `n x (kernel * dense_width)`.
    pub patches: Mat,
    pub day_of_week: Mat,
    pub day_of_month: Mat,
    pub month: Mat,
    /// Normalized OHLC flattened per stock, `n x (window * 4)`.
    pub targets: Mat,
}

impl PreparedWindow {
    pub fn new(window: &FeatureWindow, cfg: &RepresentationConfig) -> Result<Self> {
        let (n, d, f) = window.features.dim();
        if n != cfg.num_stocks || d != cfg.window || window.layout.dense_width() != cfg.dense_width {
            return Err(Error::Shape(format!(
                "window is {n}x{d} with dense width {}, model expects {}x{} with {}",
                window.layout.dense_width(),
                cfg.num_stocks,
                cfg.window,
                cfg.dense_width
            )));
        }
        if f != window.layout.num_features() {
            return Err(Error::Shape("feature axis does not match the layout".into()));
        }
        let dense = window.dense_input();
        let k = cfg.kernel;
        let positions = d - k + 1;
        // Convolution followed by mean pooling over positions is linear, so it
        // equals the convolution kernel applied to the position-averaged patch.
        let mut patches = Array2::zeros((n, cfg.patch_width()));
        for i in 0..n {
            for p in 0..positions {
                for tap in 0..k {
                    for c in 0..cfg.dense_width {
                        patches[[i, tap * cfg.dense_width + c]] += dense[[i, p + tap, c]];
                    }
                }
            }
        }
        patches /= positions as f64;

        let (dow, dom, month) = temporal_counts(&window.temporal());
        let prices = window.normalized_prices();
        let mut targets = Array2::zeros((n, cfg.target_width()));
        for i in 0..n {
            let flat: Vec<f64> = prices.slice(s![i, .., ..]).iter().copied().collect();
            targets.row_mut(i).assign(&ndarray::ArrayView1::from(&flat[..]));
        }
        Ok(PreparedWindow {
            patches,
            day_of_week: dow,
            day_of_month: dom,
            month,
            targets,
        })
    }

    pub fn num_stocks(&self) -> usize {
        self.patches.nrows()
    }
}

fn temporal_counts(days: &[TemporalFeatures]) -> (Mat, Mat, Mat) {
    let mut dow = Array2::zeros((1, DAYS_OF_WEEK));
    let mut dom = Array2::zeros((1, DAYS_OF_MONTH));
    let mut month = Array2::zeros((1, MONTHS));
    for t in days {
        dow[[0, t.day_of_week as usize]] += 1.0;
        dom[[0, t.day_of_month as usize - 1]] += 1.0;
        month[[0, t.month as usize - 1]] += 1.0;
    }
    (dow, dom, month)
}

/// Per-stock embedding, `n x embed_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct StockLevelEmbedding {
    pub vectors: Mat,
}

/// Encoder output: the `[CLS]` latent and one latent per visible stock (in `plan.visible` order).
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub cls: Mat,
    pub visible: Mat,
}

/// `(n + 1) x embed_dim` slots; slot 0 is `[CLS]`, slot `i + 1` is stock `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskableRepresentation {
    pub slots: Mat,
    pub masked_flag: Vec<bool>,
}

impl MaskableRepresentation {
    pub fn num_stocks(&self) -> usize {
        self.masked_flag.len()
    }

    pub fn flattened(&self) -> Mat {
        let data: Vec<f64> = self.slots.iter().copied().collect();
        Array2::from_shape_vec((1, data.len()), data).expect("contiguous")
    }

    pub fn plan(&self) -> MaskPlan {
        let masked = (0..self.num_stocks()).filter(|i| self.masked_flag[*i]).collect();
        MaskPlan::from_masked(self.num_stocks(), masked)
    }
}

/// Predicted normalized OHLC for each masked stock, `n_masked x (window * 4)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionOutput {
    pub masked: Vec<usize>,
    pub predicted_prices: Mat,
}

/// Ids of every parameter of the representation network inside its store.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationNet {
    pub cfg: RepresentationConfig,
    pub conv_weight: usize,
    pub conv_bias: usize,
    pub dow_table: usize,
    pub dom_table: usize,
    pub month_table: usize,
    pub encoder: Mlp,
    pub cls_query: usize,
    pub mask_token: usize,
    pub decoder_position: usize,
    pub decoder: Mlp,
}

/// Graph nodes produced by one batched forward pass.
#[derive(Debug, Clone)]
pub struct RepForward {
    /// `batch * (n + 1) x embed_dim`, sample-major.
    pub slots: Var,
    /// `batch x ((n + 1) * embed_dim)`.
    pub flat: Var,
}

impl RepresentationNet {
    pub fn new<R: Rng>(cfg: RepresentationConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let e = cfg.embed_dim;
        let bound = 1.0 / (cfg.patch_width() as f64).sqrt();
        let conv_weight = store.add(
            "repr.conv.weight",
            Array2::from_shape_simple_fn((cfg.patch_width(), e), || rng.random_range(-bound..=bound)),
            true,
        );
        let conv_bias = store.add(
            "repr.conv.bias",
            Array2::from_shape_simple_fn((1, e), || rng.random_range(-bound..=bound)),
            true,
        );
        let dow_table = store.add("repr.embed.day_of_week", normal_matrix(DAYS_OF_WEEK, e, TOKEN_INIT_STD, rng), true);
        let dom_table = store.add("repr.embed.day_of_month", normal_matrix(DAYS_OF_MONTH, e, TOKEN_INIT_STD, rng), true);
        let month_table = store.add("repr.embed.month", normal_matrix(MONTHS, e, TOKEN_INIT_STD, rng), true);
        let encoder = Mlp::new(store, "repr.encoder", e, e, e, rng);
        let cls_query = store.add("repr.cls_query", normal_matrix(e, 1, TOKEN_INIT_STD, rng), true);
        let mask_token = store.add("repr.mask_token", normal_matrix(1, e, TOKEN_INIT_STD, rng), true);
        let decoder_position = store.add(
            "repr.decoder.position",
            normal_matrix(cfg.num_stocks, e, TOKEN_INIT_STD, rng),
            true,
        );
        let decoder = Mlp::new(store, "repr.decoder", e, e, cfg.target_width(), rng);
        Ok(RepresentationNet {
            cfg,
            conv_weight,
            conv_bias,
            dow_table,
            dom_table,
            month_table,
            encoder,
            cls_query,
            mask_token,
            decoder_position,
            decoder,
        })
    }

    /// Stock-level embeddings for a batch, `batch * n x embed_dim`.
    pub fn embed_batch(&self, g: &mut Graph, bind: Bind, inputs: &[&PreparedWindow]) -> Var {
        let n = self.cfg.num_stocks;
        let rows = inputs.len() * n;
        let mut patches = Array2::zeros((rows, self.cfg.patch_width()));
        let mut dow = Array2::zeros((rows, DAYS_OF_WEEK));
        let mut dom = Array2::zeros((rows, DAYS_OF_MONTH));
        let mut month = Array2::zeros((rows, MONTHS));
        for (b, w) in inputs.iter().enumerate() {
            patches.slice_mut(s![b * n..(b + 1) * n, ..]).assign(&w.patches);
            for i in 0..n {
                dow.row_mut(b * n + i).assign(&w.day_of_week.row(0));
                dom.row_mut(b * n + i).assign(&w.day_of_month.row(0));
                month.row_mut(b * n + i).assign(&w.month.row(0));
            }
        }
        let patches = g.constant(patches);
        let conv_w = bind.var(g, self.conv_weight);
        let conv_b = bind.var(g, self.conv_bias);
        let dense = g.matmul(patches, conv_w);
        let dense = g.add_row(dense, conv_b);

        let mut sparse_terms = Vec::with_capacity(3);
        for (counts, table) in [(dow, self.dow_table), (dom, self.dom_table), (month, self.month_table)] {
            let c = g.constant(counts);
            let t = bind.var(g, table);
            sparse_terms.push(g.matmul(c, t));
        }
        let sparse = g.add(sparse_terms[0], sparse_terms[1]);
        let sparse = g.add(sparse, sparse_terms[2]);
        g.add(dense, sparse)
    }

    /// Encodes visible stocks plus `[CLS]` and fills masked slots with the token.
    pub fn encode_fill_batch(&self, g: &mut Graph, bind: Bind, embeddings: Var, plans: &[MaskPlan]) -> RepForward {
        let n = self.cfg.num_stocks;
        let e = self.cfg.embed_dim;
        let batch = plans.len();

        let mut visible_rows = Vec::new();
        let mut segments = Vec::with_capacity(batch);
        for (b, plan) in plans.iter().enumerate() {
            debug_assert_eq!(plan.num_stocks, n);
            visible_rows.extend(plan.visible.iter().map(|&i| (embeddings, b * n + i)));
            segments.push(plan.visible.len());
        }
        assert!(segments.iter().all(|s| *s > 0), "every state needs a visible stock");
        let visible = g.gather_rows(&visible_rows);

        // [CLS] input: learnable query attending over the visible stock embeddings.
        let query = bind.var(g, self.cls_query);
        let scores = g.matmul(visible, query);
        let scores = g.scale(scores, 1.0 / (e as f64).sqrt());
        let attn = g.segment_softmax(scores, &segments);
        let cls_in = g.segment_weighted_sum(attn, visible, &segments);

        let mut stack: Vec<(Var, usize)> = (0..batch).map(|b| (cls_in, b)).collect();
        stack.extend((0..visible_rows.len()).map(|r| (visible, r)));
        let enc_in = g.gather_rows(&stack);
        let latent = self.encoder.forward(g, bind, enc_in);

        let token = bind.var(g, self.mask_token);
        let mut slots = Vec::with_capacity(batch * (n + 1));
        let mut offset = batch;
        for (b, plan) in plans.iter().enumerate() {
            slots.push((latent, b));
            let mut vis = plan.visible.iter().peekable();
            for i in 0..n {
                if vis.peek() == Some(&&i) {
                    vis.next();
                    slots.push((latent, offset));
                    offset += 1;
                } else {
                    slots.push((token, 0));
                }
            }
        }
        let slots = g.gather_rows(&slots);
        let flat = g.reshape(slots, batch, (n + 1) * e);
        RepForward { slots, flat }
    }

    /// Decoder predictions for every masked stock of the batch (sample-major, ascending slot).
    pub fn decode_batch(&self, g: &mut Graph, bind: Bind, slots: Var, plans: &[MaskPlan]) -> Option<Var> {
        let n = self.cfg.num_stocks;
        let position = bind.var(g, self.decoder_position);
        let mut stock_rows = Vec::new();
        let mut cls_rows = Vec::new();
        let mut pos_rows = Vec::new();
        for (b, plan) in plans.iter().enumerate() {
            for &i in &plan.masked {
                stock_rows.push((slots, b * (n + 1) + 1 + i));
                cls_rows.push((slots, b * (n + 1)));
                pos_rows.push((position, i));
            }
        }
        if stock_rows.is_empty() {
            return None;
        }
        let stock = g.gather_rows(&stock_rows);
        let cls = g.gather_rows(&cls_rows);
        let pos = g.gather_rows(&pos_rows);
        let x = g.add(stock, cls);
        let x = g.add(x, pos);
        Some(self.decoder.forward(g, bind, x))
    }

    pub fn forward_batch(&self, g: &mut Graph, bind: Bind, inputs: &[&PreparedWindow], plans: &[MaskPlan]) -> RepForward {
        assert_eq!(inputs.len(), plans.len());
        let h = self.embed_batch(g, bind, inputs);
        self.encode_fill_batch(g, bind, h, plans)
    }

    /// Mean over the batch of `(1 / N*) * sum over masked stocks of the per-stock MSE`.
    /// Samples without masked stocks are skipped; `None` if none remain.
    pub fn reconstruction_loss(
        &self,
        g: &mut Graph,
        bind: Bind,
        inputs: &[&PreparedWindow],
        plans: &[MaskPlan],
    ) -> Option<(Var, RepForward)> {
        let forward = self.forward_batch(g, bind, inputs, plans);
        let used: Vec<usize> = (0..plans.len()).filter(|b| !plans[*b].masked.is_empty()).collect();
        let pred = self.decode_batch(g, bind, forward.slots, plans)?;
        let width = self.cfg.target_width();
        let total_masked: usize = plans.iter().map(|p| p.masked.len()).sum();
        let mut targets = Array2::zeros((total_masked, width));
        let mut weights = Array2::zeros((total_masked, width));
        let mut r = 0;
        for (plan, input) in plans.iter().zip(inputs) {
            let nstar = plan.masked.len() as f64;
            for &i in &plan.masked {
                targets.row_mut(r).assign(&input.targets.row(i));
                weights.row_mut(r).fill(1.0 / (used.len() as f64 * nstar * width as f64));
                r += 1;
            }
        }
        let targets = g.constant(targets);
        let diff = g.sub(pred, targets);
        let sq = g.square(diff);
        let w = g.constant(weights);
        let weighted = g.mul(sq, w);
        Some((g.sum(weighted), forward))
    }

    /// Representation values for a batch without gradient bookkeeping, `batch x ((n + 1) * embed_dim)`.
    pub fn represent(&self, store: &ParamStore, inputs: &[&PreparedWindow], plans: &[MaskPlan]) -> Mat {
        let mut g = Graph::new();
        let fwd = self.forward_batch(&mut g, Bind::Frozen(store), inputs, plans);
        g.value(fwd.flat).clone()
    }

    pub fn embed_stocks(&self, store: &ParamStore, input: &PreparedWindow) -> StockLevelEmbedding {
        let mut g = Graph::new();
        let h = self.embed_batch(&mut g, Bind::Frozen(store), &[input]);
        StockLevelEmbedding {
            vectors: g.value(h).clone(),
        }
    }

    /// Encoder over visible stocks plus `[CLS]`; masked stocks never reach it.
    pub fn encode(&self, store: &ParamStore, emb: &StockLevelEmbedding, plan: &MaskPlan) -> Latent {
        let mut g = Graph::new();
        let bind = Bind::Frozen(store);
        let e = self.cfg.embed_dim;
        let h = g.constant(emb.vectors.clone());
        let rows: Vec<(Var, usize)> = plan.visible.iter().map(|&i| (h, i)).collect();
        let visible = g.gather_rows(&rows);
        let query = bind.var(&mut g, self.cls_query);
        let scores = g.matmul(visible, query);
        let scores = g.scale(scores, 1.0 / (e as f64).sqrt());
        let attn = g.segment_softmax(scores, &[rows.len()]);
        let cls_in = g.segment_weighted_sum(attn, visible, &[rows.len()]);
        let cls = self.encoder.forward(&mut g, bind, cls_in);
        let vis = self.encoder.forward(&mut g, bind, visible);
        Latent {
            cls: g.value(cls).clone(),
            visible: g.value(vis).clone(),
        }
    }

    pub fn fill_mask(&self, store: &ParamStore, latent: &Latent, plan: &MaskPlan) -> MaskableRepresentation {
        fill_mask(latent, plan, store.get(self.mask_token))
    }

    pub fn decode(&self, store: &ParamStore, rep: &MaskableRepresentation) -> ReconstructionOutput {
        let plan = rep.plan();
        let mut g = Graph::new();
        let slots = g.constant(rep.slots.clone());
        let pred = self.decode_batch(&mut g, Bind::Frozen(store), slots, std::slice::from_ref(&plan));
        ReconstructionOutput {
            predicted_prices: pred
                .map(|p| g.value(p).clone())
                .unwrap_or_else(|| Array2::zeros((0, self.cfg.target_width()))),
            masked: plan.masked,
        }
    }

    /// Full single-state pipeline: embed, encode, fill.
    pub fn represent_one(&self, store: &ParamStore, input: &PreparedWindow, plan: &MaskPlan) -> MaskableRepresentation {
        let emb = self.embed_stocks(store, input);
        let latent = self.encode(store, &emb, plan);
        self.fill_mask(store, &latent, plan)
    }
}

/// Restores slot order: `[CLS]`, then each stock's latent or the mask token.
pub fn fill_mask(latent: &Latent, plan: &MaskPlan, token: &Mat) -> MaskableRepresentation {
    let n = plan.num_stocks;
    let e = latent.cls.ncols();
    let mut slots = Array2::zeros((n + 1, e));
    slots.row_mut(0).assign(&latent.cls.row(0));
    for (r, &i) in plan.visible.iter().enumerate() {
        slots.row_mut(i + 1).assign(&latent.visible.row(r));
    }
    for &i in &plan.masked {
        slots.row_mut(i + 1).assign(&token.row(0));
    }
    MaskableRepresentation {
        slots,
        masked_flag: plan.masked_flags(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ratio_default_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = MaskRatioDist::default();
        for _ in 0..1000 {
            let r = d.sample(&mut rng).unwrap();
            assert!((0.6..=0.8).contains(&r));
        }
    }

    #[test]
    fn ratio_rejects_bad_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_mask_ratio(&mut rng, 0.7, 0.1, 0.8, 0.8).is_err());
        assert!(sample_mask_ratio(&mut rng, 0.7, 0.1, 0.9, 0.6).is_err());
        assert!(sample_mask_ratio(&mut rng, 0.7, 0.0, 0.6, 0.8).is_err());
    }

    #[test]
    fn tiny_sigma_concentrates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let r = sample_mask_ratio(&mut rng, 0.7, 1e-6, 0.6, 0.8).unwrap();
            assert!((r - 0.7).abs() < 1e-4);
        }
    }

    #[test]
    fn far_tail_window_stays_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let r = sample_mask_ratio(&mut rng, 0.0, 0.01, 0.5, 0.6).unwrap();
            assert!((0.5..=0.6).contains(&r));
        }
    }

    #[test]
    fn plan_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = plan_mask(4, 0.5, &mut rng, None).unwrap();
        assert_eq!(p.masked.len(), 2);
        assert_eq!(p.visible.len(), 2);
        let all = PoolMask::all(5);
        let p = plan_mask(5, 0.7, &mut rng, Some(&all)).unwrap();
        assert!(p.masked.is_empty());
        assert_eq!(masked_count(4, 0.0), 0);
        assert_eq!(masked_count(28, 0.6), 17);
        assert_eq!(masked_count(4, 1.0), 3);
    }

    #[test]
    fn plan_is_seed_reproducible() {
        let a = plan_mask(28, 0.7, &mut ChaCha8Rng::seed_from_u64(9), None).unwrap();
        let b = plan_mask(28, 0.7, &mut ChaCha8Rng::seed_from_u64(9), None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.masked.len(), 20);
        let mut union: Vec<usize> = a.masked.iter().chain(&a.visible).copied().collect();
        union.sort_unstable();
        assert_eq!(union, (0..28).collect::<Vec<_>>());
    }

    #[test]
    fn single_stock_training_plan_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(plan_mask(1, 0.5, &mut rng, None).is_err());
    }

    #[test]
    fn fill_without_masks_reorders_only() {
        let latent = Latent {
            cls: Array2::from_elem((1, 2), 9.0),
            visible: ndarray::array![[1.0, 1.0], [2.0, 2.0]],
        };
        let plan = MaskPlan::all_visible(2);
        let token = Array2::from_elem((1, 2), -5.0);
        let rep = fill_mask(&latent, &plan, &token);
        assert_eq!(rep.slots, ndarray::array![[9.0, 9.0], [1.0, 1.0], [2.0, 2.0]]);
        assert_eq!(rep.masked_flag, vec![false, false]);
    }
}
