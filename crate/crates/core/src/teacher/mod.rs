//! Stand-in teacher: an autoregressive categorical model over discretized
//! action tokens. Each action dimension is one token; the head for dimension
//! `d` sees the trunk features and a one-hot of the tokens already emitted.

mod tokenizer;

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use tokenizer::{parse_action, ActionTokenizer};

use crate::envs::{ActionVec, Env, EnvConfig, Observation, ACTION_DIM, OBS_LEN};
use crate::error::{CovrError, Result};
use crate::numcore::{softmax, Activation, Adam, AdamConfig, Checkpoint, Mlp, MlpGrads, RngStream, Tensor2};

/// Probability floor inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferMode {
    #[default]
    Greedy,
    Sample,
}

impl FromStr for InferMode {
    type Err = CovrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(InferMode::Greedy),
            "sample" => Ok(InferMode::Sample),
            other => Err(CovrError::config("teacher.mode", format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherConfig {
    pub bins: usize,
    pub hidden_dim: usize,
    /// Label smoothing used during fine-tuning.
    pub smoothing: f64,
    /// Environment steps between teacher queries.
    pub cadence: usize,
    /// Reuse the last teacher action on steps between queries; otherwise
    /// those transitions carry no guidance target.
    pub cache_between: bool,
    pub mode: InferMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Label noise for pretraining. `inf` skips pretraining.
    pub sigma_n: f64,
    pub pretrain: bool,
    pub pretrain_samples: usize,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            bins: 21,
            hidden_dim: 128,
            smoothing: 0.1,
            cadence: 10,
            cache_between: true,
            mode: InferMode::Greedy,
            epochs: 2,
            batch_size: 64,
            lr: 1e-3,
            sigma_n: 0.4,
            pretrain: true,
            pretrain_samples: 2000,
            pretrain_epochs: 4,
            pretrain_lr: 1e-3,
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(CovrError::config("teacher.bins", "need at least 2 bins"));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(CovrError::config("teacher.smoothing", "must lie in [0, 1)"));
        }
        if self.cadence == 0 {
            return Err(CovrError::config("teacher.cadence", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(CovrError::config("teacher.batch_size", "must be positive"));
        }
        if self.hidden_dim == 0 {
            return Err(CovrError::config("teacher.hidden_dim", "must be positive"));
        }
        if !(self.sigma_n >= 0.0) {
            return Err(CovrError::config("teacher.sigma_n", "must be non-negative"));
        }
        if !(self.lr > 0.0 && self.pretrain_lr > 0.0) {
            return Err(CovrError::config("teacher.lr", "must be positive"));
        }
        Ok(())
    }

    pub fn pretrains(&self) -> bool {
        self.pretrain && self.sigma_n.is_finite() && self.pretrain_samples > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherModel {
    pub trunk: Mlp,
    pub heads: Vec<Mlp>,
    bins: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherGrads {
    pub trunk: MlpGrads,
    pub heads: Vec<MlpGrads>,
}

impl TeacherGrads {
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out = self.trunk.blocks();
        for h in &self.heads {
            out.extend(h.blocks());
        }
        out
    }

    pub fn squared_norm(&self) -> f64 {
        self.trunk.squared_norm() + self.heads.iter().map(MlpGrads::squared_norm).sum::<f64>()
    }
}

/// One inference: tokens, their text rendering, and the parsed action.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherOutput {
    pub tokens: Vec<usize>,
    pub text: String,
    pub action: ActionVec,
}

/// Per-token smoothed losses for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct NllOutput {
    pub losses: Vec<f64>,
    pub floored: usize,
}

/// Weighted token loss over a batch with parameter gradients.
#[derive(Debug, Clone)]
pub struct WeightedLoss {
    pub loss: f64,
    /// Tokens of positively weighted samples.
    pub valid_tokens: usize,
    pub floored: usize,
    pub grads: TeacherGrads,
}

/// `(1−ε)(−log p_y) + (ε/K)·Σ_k(−log p_k)` with `p` floored inside the log,
/// plus its gradient with respect to the logits.
pub fn smoothed_token_loss(logits: &[f64], y: usize, smoothing: f64) -> (f64, Vec<f64>, usize) {
    let k = logits.len();
    let p = softmax(logits);
    let c: Vec<f64> = (0..k)
        .map(|j| smoothing / k as f64 + if j == y { 1.0 - smoothing } else { 0.0 })
        .collect();
    let mut loss = 0.0;
    let mut floored = 0;
    let mut live_mass = 0.0;
    for j in 0..k {
        if p[j] < PROB_FLOOR {
            floored += 1;
            loss -= c[j] * PROB_FLOOR.ln();
        } else {
            loss -= c[j] * p[j].ln();
            live_mass += c[j];
        }
    }
    let grad = (0..k)
        .map(|j| p[j] * live_mass - if p[j] < PROB_FLOOR { 0.0 } else { c[j] })
        .collect();
    (loss, grad, floored)
}

fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl TeacherModel {
    pub fn new(bins: usize, hidden: usize, rng: &mut RngStream) -> Self {
        TeacherModel::with_token_count(bins, hidden, ACTION_DIM, rng)
    }

    /// A model emitting `tokens` tokens per sample. Only models with one token
    /// per action dimension can run [`TeacherModel::infer`].
    pub fn with_token_count(bins: usize, hidden: usize, tokens: usize, rng: &mut RngStream) -> Self {
        let trunk = Mlp::new(&[OBS_LEN, hidden], Activation::Tanh, Activation::Tanh, rng);
        let heads = (0..tokens)
            .map(|d| Mlp::new(&[hidden + d * bins, bins], Activation::Identity, Activation::Identity, rng))
            .collect();
        TeacherModel { trunk, heads, bins }
    }

    pub fn from_config(cfg: &TeacherConfig, rng: &mut RngStream) -> Self {
        TeacherModel::new(cfg.bins, cfg.hidden_dim, rng)
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn tokens_per_action(&self) -> usize {
        self.heads.len()
    }

    pub fn tokenizer(&self) -> ActionTokenizer {
        ActionTokenizer::new(self.bins)
    }

    fn hidden_dim(&self) -> usize {
        self.trunk.output_dim()
    }

    fn head_input(&self, h: &[f64], prev: &[usize]) -> Vec<f64> {
        let mut x = h.to_vec();
        x.resize(h.len() + prev.len() * self.bins, 0.0);
        for (d, &t) in prev.iter().enumerate() {
            x[h.len() + d * self.bins + t] = 1.0;
        }
        x
    }

    /// Logits of head `d` given the tokens before it.
    pub fn logits(&self, obs: &Observation, prev: &[usize]) -> Result<Vec<f64>> {
        let h = self.trunk.forward(&obs.pixels())?;
        self.heads[prev.len()].forward(&self.head_input(&h, prev))
    }

    pub fn infer(&self, obs: &Observation, mode: InferMode, rng: &mut RngStream) -> Result<TeacherOutput> {
        let h = self.trunk.forward(&obs.pixels())?;
        let mut tokens = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let logits = head.forward(&self.head_input(&h, &tokens))?;
            let t = match mode {
                InferMode::Greedy => argmax_lowest(&logits),
                InferMode::Sample => {
                    let p = softmax(&logits);
                    let u = rng.uniform();
                    let mut acc = 0.0;
                    let mut pick = p.len() - 1;
                    for (i, pi) in p.iter().enumerate() {
                        acc += pi;
                        if u < acc {
                            pick = i;
                            break;
                        }
                    }
                    pick
                }
            };
            tokens.push(t);
        }
        let tok = self.tokenizer();
        let text = tok.render(&tokens);
        let action = parse_action(&text)?;
        Ok(TeacherOutput { tokens, text, action })
    }

    /// Per-token smoothed negative log-likelihood of `tokens` (teacher forcing).
    pub fn nll_smoothed(&self, obs: &Observation, tokens: &[usize], smoothing: f64) -> Result<NllOutput> {
        self.check_tokens(tokens)?;
        let h = self.trunk.forward(&obs.pixels())?;
        let mut losses = Vec::with_capacity(tokens.len());
        let mut floored = 0;
        for (d, head) in self.heads.iter().enumerate() {
            let logits = head.forward(&self.head_input(&h, &tokens[..d]))?;
            let (l, _, f) = smoothed_token_loss(&logits, tokens[d], smoothing);
            losses.push(l);
            floored += f;
        }
        Ok(NllOutput { losses, floored })
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.len() != self.heads.len() {
            return Err(CovrError::dimension("token sequence", self.heads.len(), tokens.len()));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t >= self.bins) {
            return Err(CovrError::dimension("token index bound", self.bins, t));
        }
        Ok(())
    }

    pub fn zero_grads(&self) -> TeacherGrads {
        TeacherGrads {
            trunk: self.trunk.zero_grads(),
            heads: self.heads.iter().map(Mlp::zero_grads).collect(),
        }
    }

    /// `(1/N_v)·Σ_b w_b·Σ_t ℓ_bt`, with `N_v` the token count of samples whose
    /// weight is positive. Samples with `w_b ≤ 0` are not evaluated at all.
    pub fn weighted_loss(
        &self,
        obs: &[&Observation],
        tokens: &[Vec<usize>],
        weights: &[f64],
        smoothing: f64,
    ) -> Result<WeightedLoss> {
        if obs.len() != tokens.len() || obs.len() != weights.len() {
            return Err(CovrError::dimension("teacher batch", obs.len(), tokens.len().min(weights.len())));
        }
        let live: Vec<usize> = (0..obs.len()).filter(|&b| weights[b] > 0.0).collect();
        if live.is_empty() {
            return Err(CovrError::EmptyEffectiveBatch);
        }
        for &b in &live {
            self.check_tokens(&tokens[b])?;
        }
        let n = live.len();
        let t_len = self.heads.len();
        let valid_tokens = n * t_len;
        let scale = 1.0 / valid_tokens as f64;
        let mut x = Tensor2::zeros(n, OBS_LEN);
        for (i, &b) in live.iter().enumerate() {
            obs[b].write_into(x.row_mut(i));
        }
        let trunk_trace = self.trunk.forward_batch(&x)?;
        let hd = self.hidden_dim();
        let mut dh = Tensor2::zeros(n, hd);
        let mut head_grads = Vec::with_capacity(t_len);
        let mut loss = 0.0;
        let mut floored = 0;
        for (d, head) in self.heads.iter().enumerate() {
            let width = hd + d * self.bins;
            let mut input = Tensor2::zeros(n, width);
            for (i, &b) in live.iter().enumerate() {
                let row = input.row_mut(i);
                row[..hd].copy_from_slice(trunk_trace.output().row(i));
                for (e, &t) in tokens[b][..d].iter().enumerate() {
                    row[hd + e * self.bins + t] = 1.0;
                }
            }
            let trace = head.forward_batch(&input)?;
            let mut dlogits = Tensor2::zeros(n, self.bins);
            for (i, &b) in live.iter().enumerate() {
                let (l, g, f) = smoothed_token_loss(trace.output().row(i), tokens[b][d], smoothing);
                let w = weights[b];
                loss += w * l * scale;
                floored += f;
                for (dst, gv) in dlogits.row_mut(i).iter_mut().zip(g) {
                    *dst = w * gv * scale;
                }
            }
            let (g, din) = head.backward(&trace, &dlogits, true)?;
            dh.add_assign(&din.expect("input grad requested").columns(0, hd));
            head_grads.push(g);
        }
        let (trunk_grads, _) = self.trunk.backward(&trunk_trace, &dh, false)?;
        Ok(WeightedLoss {
            loss,
            valid_tokens,
            floored,
            grads: TeacherGrads {
                trunk: trunk_grads,
                heads: head_grads,
            },
        })
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = self.trunk.params();
        for h in &self.heads {
            out.extend(h.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.trunk.params_mut();
        for h in &mut self.heads {
            out.extend(h.params_mut());
        }
        out
    }

    pub fn apply(&mut self, opt: &mut Adam, grads: &TeacherGrads) -> Result<()> {
        let g = grads.blocks();
        opt.step(&mut self.params_mut(), &g)
    }

    pub fn optimizer(&self, lr: f64) -> Adam {
        Adam::for_params("teacher", AdamConfig::with_lr(lr), &self.params())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push_net("teacher_trunk", &self.trunk);
        for (d, h) in self.heads.iter().enumerate() {
            ck.push_net(&format!("teacher_head_{d}"), h);
        }
        ck.push_scalar("teacher_bins", self.bins as f64);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let bins = ck.scalar("teacher_bins")? as usize;
        let trunk = ck.net("teacher_trunk")?.clone();
        let mut heads = Vec::new();
        while let Ok(h) = ck.net(&format!("teacher_head_{}", heads.len())) {
            heads.push(h.clone());
        }
        if heads.is_empty() {
            return Err(CovrError::format("checkpoint", "no teacher heads"));
        }
        Ok(TeacherModel { trunk, heads, bins })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        TeacherModel::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Summary of a run of mini-batch passes.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainReport {
    pub samples: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub steps: usize,
    /// Mini-batches whose weights were all zero.
    pub skipped_batches: usize,
    pub floored: usize,
}

fn dataset_loss(
    model: &TeacherModel,
    obs: &[&Observation],
    tokens: &[Vec<usize>],
    weights: &[f64],
    smoothing: f64,
) -> Result<(f64, usize)> {
    // Chunked evaluation of the full-set loss; chunk terms are rescaled to the global N_v.
    const CHUNK: usize = 512;
    let live = weights.iter().filter(|&&w| w > 0.0).count();
    if live == 0 {
        return Err(CovrError::EmptyEffectiveBatch);
    }
    let mut total = 0.0;
    let mut floored = 0;
    for start in (0..obs.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(obs.len());
        match model.weighted_loss(&obs[start..end], &tokens[start..end], &weights[start..end], smoothing) {
            Ok(out) => {
                total += out.loss * out.valid_tokens as f64;
                floored += out.floored;
            }
            Err(CovrError::EmptyEffectiveBatch) => {}
            Err(e) => return Err(e),
        }
    }
    Ok((total / (live * model.tokens_per_action()) as f64, floored))
}

/// Mini-batch Adam passes over a weighted token dataset.
#[allow(clippy::too_many_arguments)]
pub fn train_weighted(
    model: &mut TeacherModel,
    obs: &[&Observation],
    tokens: &[Vec<usize>],
    weights: &[f64],
    smoothing: f64,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    rng: &mut RngStream,
) -> Result<TrainReport> {
    let (initial_loss, _) = dataset_loss(model, obs, tokens, weights, smoothing)?;
    let mut opt = model.optimizer(lr);
    let mut order: Vec<usize> = (0..obs.len()).collect();
    let mut report = TrainReport {
        samples: obs.len(),
        initial_loss,
        ..TrainReport::default()
    };
    for _ in 0..epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(batch_size.max(1)) {
            let o: Vec<&Observation> = chunk.iter().map(|&i| obs[i]).collect();
            let t: Vec<Vec<usize>> = chunk.iter().map(|&i| tokens[i].clone()).collect();
            let w: Vec<f64> = chunk.iter().map(|&i| weights[i]).collect();
            match model.weighted_loss(&o, &t, &w, smoothing) {
                Ok(out) => {
                    model.apply(&mut opt, &out.grads)?;
                    report.steps += 1;
                    report.floored += out.floored;
                }
                Err(CovrError::EmptyEffectiveBatch) => report.skipped_batches += 1,
                Err(e) => return Err(e),
            }
        }
    }
    report.final_loss = dataset_loss(model, obs, tokens, weights, smoothing)?.0;
    Ok(report)
}

/// Observations from behaviour-noised expert rollouts, labelled with the
/// expert action plus Gaussian noise of scale `sigma_n` (clamped).
pub fn expert_dataset(
    env: &EnvConfig,
    sigma_n: f64,
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<(Vec<Observation>, Vec<ActionVec>)> {
    const BEHAVIOUR_NOISE: f64 = 0.3;
    let mut obs_out = Vec::with_capacity(n_samples);
    let mut labels = Vec::with_capacity(n_samples);
    let (mut e, mut obs) = Env::reset(env, rng)?;
    while obs_out.len() < n_samples {
        let expert = e.expert_action();
        let label = ActionVec::new(
            expert.0[0] + sigma_n * rng.normal(),
            expert.0[1] + sigma_n * rng.normal(),
        );
        obs_out.push(obs.clone());
        labels.push(label);
        let behaviour = ActionVec::new(
            expert.0[0] + BEHAVIOUR_NOISE * rng.normal(),
            expert.0[1] + BEHAVIOUR_NOISE * rng.normal(),
        );
        let step = e.step(behaviour)?;
        obs = step.observation;
        if step.done {
            let (ne, no) = Env::reset(env, rng)?;
            e = ne;
            obs = no;
        }
    }
    Ok((obs_out, labels))
}

/// Supervised pretraining on noisy expert labels with plain NLL.
pub fn teacher_pretrain(
    model: &mut TeacherModel,
    env: &EnvConfig,
    cfg: &TeacherConfig,
    rng: &mut RngStream,
) -> Result<TrainReport> {
    if !cfg.pretrains() {
        return Ok(TrainReport::default());
    }
    let (obs, labels) = expert_dataset(env, cfg.sigma_n, cfg.pretrain_samples, rng)?;
    let mut tok = model.tokenizer();
    let tokens: Vec<Vec<usize>> = labels.iter().map(|a| tok.tokenize(a)).collect();
    let refs: Vec<&Observation> = obs.iter().collect();
    let weights = vec![1.0; obs.len()];
    train_weighted(
        model,
        &refs,
        &tokens,
        &weights,
        0.0,
        cfg.pretrain_epochs,
        cfg.batch_size,
        cfg.pretrain_lr,
        rng,
    )
}
