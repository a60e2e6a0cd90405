//! Soft actor-critic objectives with hand-derived gradients.
//!
//! Every loss takes its Gaussian noise as an explicit tensor so the same
//! draw can be replayed, which is what the finite-difference checks rely on.

use std::f64::consts::{LN_2, PI};

use super::replay::Batch;
use super::AgentNets;
use crate::error::{CovrError, Result};
use crate::numcore::{softplus, Mlp, MlpGrads, MlpTrace, Tensor2};

pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// `ln(1 − tanh²(u))`, evaluated without cancellation.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

/// Squashed-Gaussian draw for one dimension: returns `(tanh(u), log density of the action)`
/// with `u = mean + exp(log_std)·noise`. `log_std` is used as given.
pub fn squashed_log_prob(mean: f64, log_std: f64, noise: f64) -> (f64, f64) {
    let u = mean + log_std.exp() * noise;
    let logp = -0.5 * noise * noise - log_std - 0.5 * (2.0 * PI).ln() - log_one_minus_tanh_sq(u);
    (u.tanh(), logp)
}

/// Reparameterized policy sample over a batch of latents.
#[derive(Debug, Clone)]
pub struct PolicySample {
    pub trace: MlpTrace,
    pub mean: Tensor2,
    pub log_std: Tensor2,
    /// Raw log-std outside the clamp range: no gradient flows through it.
    pub clamped: Vec<bool>,
    pub noise: Tensor2,
    pub action: Tensor2,
    pub log_prob: Vec<f64>,
}

pub fn policy_sample(actor: &Mlp, latent: &Tensor2, noise: &Tensor2) -> Result<PolicySample> {
    let trace = actor.forward_batch(latent)?;
    let out = trace.output();
    let a_dim = out.cols() / 2;
    if noise.rows() != out.rows() || noise.cols() != a_dim {
        return Err(CovrError::dimension(
            "policy noise",
            out.rows() * a_dim,
            noise.rows() * noise.cols(),
        ));
    }
    let n = out.rows();
    let mut mean = Tensor2::zeros(n, a_dim);
    let mut log_std = Tensor2::zeros(n, a_dim);
    let mut clamped = vec![false; n * a_dim];
    let mut action = Tensor2::zeros(n, a_dim);
    let mut log_prob = vec![0.0; n];
    for b in 0..n {
        for i in 0..a_dim {
            let m = out.get(b, i);
            let raw = out.get(b, a_dim + i);
            let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
            clamped[b * a_dim + i] = raw != ls;
            let (a, lp) = squashed_log_prob(m, ls, noise.get(b, i));
            mean.set(b, i, m);
            log_std.set(b, i, ls);
            action.set(b, i, a);
            log_prob[b] += lp;
        }
    }
    Ok(PolicySample {
        trace,
        mean,
        log_std,
        clamped,
        noise: noise.clone(),
        action,
        log_prob,
    })
}

impl PolicySample {
    /// Gradient w.r.t. the actor's raw output given upstream gradients on the
    /// squashed action, on the mean's squashed value `tanh(mean)`, and on the log-probability.
    fn head_gradient(
        &self,
        d_action: &Tensor2,
        d_tanh_mean: Option<&Tensor2>,
        d_log_prob: &[f64],
    ) -> Tensor2 {
        let n = self.action.rows();
        let a_dim = self.action.cols();
        let mut g = Tensor2::zeros(n, 2 * a_dim);
        for b in 0..n {
            for i in 0..a_dim {
                let a = self.action.get(b, i);
                let std = self.log_std.get(b, i).exp();
                let eps = self.noise.get(b, i);
                // d logπ/du = 2·tanh(u)
                let du = d_action.get(b, i) * (1.0 - a * a) + d_log_prob[b] * 2.0 * a;
                let mut dmean = du;
                if let Some(dm) = d_tanh_mean {
                    let tm = self.mean.get(b, i).tanh();
                    dmean += dm.get(b, i) * (1.0 - tm * tm);
                }
                let dls = if self.clamped[b * a_dim + i] {
                    0.0
                } else {
                    du * std * eps - d_log_prob[b]
                };
                g.set(b, i, dmean);
                g.set(b, a_dim + i, dls);
            }
        }
        g
    }
}

/// `min(Q̄1, Q̄2) − α·logπ`.
pub fn soft_value(q1: f64, q2: f64, alpha: f64, log_prob: f64) -> f64 {
    q1.min(q2) - alpha * log_prob
}

/// `r + γ·(1 − done)·V`; exactly `r` on terminal steps.
pub fn bellman_target(reward: f64, gamma: f64, done: bool, value: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * value
    }
}

#[derive(Debug, Clone)]
pub struct CriticGrads {
    pub encoder: MlpGrads,
    pub q1: MlpGrads,
    pub q2: MlpGrads,
}

#[derive(Debug, Clone)]
pub struct CriticLoss {
    pub loss: f64,
    pub targets: Vec<f64>,
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
    pub grads: CriticGrads,
}

/// Twin-critic soft Bellman loss: `mean((Q1 − y)²) + mean((Q2 − y)²)`.
/// Gradients reach the encoder and both online critics.
pub fn critic_loss(nets: &AgentNets, batch: &Batch, gamma: f64, next_noise: &Tensor2) -> Result<CriticLoss> {
    let n = batch.len();
    if n == 0 {
        return Err(CovrError::Usage("critic loss on an empty batch".into()));
    }
    let alpha = nets.alpha();
    let enc_trace = nets.encoder.forward_batch(&batch.obs)?;
    let next_latent = nets.encoder.forward_batch(&batch.next_obs)?;
    let next_pi = policy_sample(&nets.actor, next_latent.output(), next_noise)?;
    let next_target_latent = nets.target_encoder.forward_batch(&batch.next_obs)?;
    let next_in = next_target_latent.output().hcat(&next_pi.action)?;
    let tq1 = nets.target_q1.forward_batch(&next_in)?;
    let tq2 = nets.target_q2.forward_batch(&next_in)?;
    let mut targets = Vec::with_capacity(n);
    for b in 0..n {
        let v = soft_value(tq1.output().get(b, 0), tq2.output().get(b, 0), alpha, next_pi.log_prob[b]);
        let y = bellman_target(batch.rewards[b], gamma, batch.dones[b], v);
        if !y.is_finite() {
            return Err(CovrError::non_finite("critic target for transition", b));
        }
        targets.push(y);
    }
    let latent_dim = enc_trace.output().cols();
    let input = enc_trace.output().hcat(&batch.actions)?;
    let t1 = nets.q1.forward_batch(&input)?;
    let t2 = nets.q2.forward_batch(&input)?;
    let q1: Vec<f64> = t1.output().data().to_vec();
    let q2: Vec<f64> = t2.output().data().to_vec();
    let inv = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut g1 = Tensor2::zeros(n, 1);
    let mut g2 = Tensor2::zeros(n, 1);
    for b in 0..n {
        let e1 = q1[b] - targets[b];
        let e2 = q2[b] - targets[b];
        loss += inv * (e1 * e1 + e2 * e2);
        g1.set(b, 0, 2.0 * e1 * inv);
        g2.set(b, 0, 2.0 * e2 * inv);
    }
    let (gq1, din1) = nets.q1.backward(&t1, &g1, true)?;
    let (gq2, din2) = nets.q2.backward(&t2, &g2, true)?;
    let mut dz = din1.expect("input grad requested").columns(0, latent_dim);
    dz.add_assign(&din2.expect("input grad requested").columns(0, latent_dim));
    let (genc, _) = nets.encoder.backward(&enc_trace, &dz, false)?;
    Ok(CriticLoss {
        loss,
        targets,
        q1,
        q2,
        grads: CriticGrads {
            encoder: genc,
            q1: gq1,
            q2: gq2,
        },
    })
}

/// Which policy action the guidance term compares against the teacher's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceTarget {
    /// The reparameterized sample used by the policy loss.
    #[default]
    Sample,
    /// `tanh(mean)`.
    Mean,
}

#[derive(Debug, Clone)]
pub struct ActorLoss {
    pub loss: f64,
    pub policy_loss: f64,
    pub guidance_loss: f64,
    pub log_probs: Vec<f64>,
    pub grads: MlpGrads,
}

/// `mean(α·logπ(a|s) − min(Q1,Q2)(s,a)) + (1/B)·Σ λ‖a_v − a‖²` over guided rows.
/// The encoder is detached; only the actor head receives gradients.
pub fn actor_loss_guided(
    nets: &AgentNets,
    batch: &Batch,
    lambda: f64,
    target: GuidanceTarget,
    noise: &Tensor2,
) -> Result<ActorLoss> {
    if !(lambda >= 0.0) {
        return Err(CovrError::config("guidance.lambda", "must be non-negative"));
    }
    let n = batch.len();
    if n == 0 {
        return Err(CovrError::Usage("actor loss on an empty batch".into()));
    }
    let alpha = nets.alpha();
    let latent = nets.encoder.forward_batch(&batch.obs)?;
    let latent_dim = latent.output().cols();
    let pi = policy_sample(&nets.actor, latent.output(), noise)?;
    let a_dim = pi.action.cols();
    let input = latent.output().hcat(&pi.action)?;
    let t1 = nets.q1.forward_batch(&input)?;
    let t2 = nets.q2.forward_batch(&input)?;
    let inv = 1.0 / n as f64;
    let mut policy_loss = 0.0;
    let mut sel1 = Tensor2::zeros(n, 1);
    let mut sel2 = Tensor2::zeros(n, 1);
    for b in 0..n {
        let (v1, v2) = (t1.output().get(b, 0), t2.output().get(b, 0));
        let q = v1.min(v2);
        policy_loss += inv * (alpha * pi.log_prob[b] - q);
        if v1 <= v2 {
            sel1.set(b, 0, -inv);
        } else {
            sel2.set(b, 0, -inv);
        }
    }
    let (_, din1) = nets.q1.backward(&t1, &sel1, true)?;
    let (_, din2) = nets.q2.backward(&t2, &sel2, true)?;
    let mut d_action = din1.expect("input grad requested").columns(latent_dim, latent_dim + a_dim);
    d_action.add_assign(&din2.expect("input grad requested").columns(latent_dim, latent_dim + a_dim));
    let d_log_prob = vec![alpha * inv; n];

    let mut guidance_loss = 0.0;
    let mut d_tanh_mean = None;
    if lambda > 0.0 && batch.teacher_actions.iter().any(Option::is_some) {
        let mut dm = Tensor2::zeros(n, a_dim);
        for (b, av) in batch.teacher_actions.iter().enumerate() {
            let Some(av) = av else { continue };
            for i in 0..a_dim {
                let a = match target {
                    GuidanceTarget::Sample => pi.action.get(b, i),
                    GuidanceTarget::Mean => pi.mean.get(b, i).tanh(),
                };
                let diff = a - av.0[i];
                guidance_loss += inv * lambda * diff * diff;
                let g = 2.0 * lambda * diff * inv;
                match target {
                    GuidanceTarget::Sample => d_action.set(b, i, d_action.get(b, i) + g),
                    GuidanceTarget::Mean => dm.set(b, i, g),
                }
            }
        }
        if target == GuidanceTarget::Mean {
            d_tanh_mean = Some(dm);
        }
    }
    let head_grad = pi.head_gradient(&d_action, d_tanh_mean.as_ref(), &d_log_prob);
    let (grads, _) = nets.actor.backward(&pi.trace, &head_grad, false)?;
    Ok(ActorLoss {
        loss: policy_loss + guidance_loss,
        policy_loss,
        guidance_loss,
        log_probs: pi.log_prob,
        grads,
    })
}

/// `mean(−α·(logπ + H̄))` and its derivative w.r.t. `ln α`.
/// With `frozen` the loss is reported but the gradient is zero.
pub fn temperature_loss(log_alpha: f64, log_probs: &[f64], target_entropy: f64, frozen: bool) -> (f64, f64) {
    if log_probs.is_empty() {
        return (0.0, 0.0);
    }
    let alpha = log_alpha.exp();
    let loss = log_probs
        .iter()
        .map(|lp| -alpha * (lp + target_entropy))
        .sum::<f64>()
        / log_probs.len() as f64;
    // d/d(ln α) of −α·c is −α·c, i.e. the loss itself.
    (loss, if frozen { 0.0 } else { loss })
}

/// Mean of `−logπ(a|s)` over fresh samples.
pub fn policy_entropy_estimate(nets: &AgentNets, obs: &Tensor2, noise: &Tensor2) -> Result<f64> {
    if obs.rows() == 0 {
        return Err(CovrError::Usage("entropy estimate on an empty batch".into()));
    }
    let latent = nets.encoder.forward_batch(obs)?;
    let pi = policy_sample(&nets.actor, latent.output(), noise)?;
    Ok(-pi.log_prob.iter().sum::<f64>() / pi.log_prob.len() as f64)
}

#[derive(Debug, Clone)]
pub struct AuxLoss {
    pub loss: f64,
    pub reward_loss: f64,
    pub encoder: MlpGrads,
    pub head: MlpGrads,
}

/// Mean squared error of the predicted `(next latent, reward)` against
/// `(encoder(o'), r)`, averaged over batch and output dimensions. The next
/// latent is treated as a constant.
pub fn aux_transition_loss(nets: &AgentNets, batch: &Batch) -> Result<AuxLoss> {
    let head = nets
        .aux
        .as_ref()
        .ok_or_else(|| CovrError::config("sac.aux", "auxiliary heads are disabled"))?;
    let n = batch.len();
    if n == 0 {
        return Err(CovrError::Usage("aux loss on an empty batch".into()));
    }
    let enc = nets.encoder.forward_batch(&batch.obs)?;
    let latent_dim = enc.output().cols();
    let next = nets.encoder.forward_batch(&batch.next_obs)?;
    let input = enc.output().hcat(&batch.actions)?;
    let trace = head.forward_batch(&input)?;
    let pred = trace.output();
    let width = latent_dim + 1;
    let scale = 1.0 / (n * width) as f64;
    let mut loss = 0.0;
    let mut reward_loss = 0.0;
    let mut g = Tensor2::zeros(n, width);
    for b in 0..n {
        for j in 0..width {
            let target = if j < latent_dim {
                next.output().get(b, j)
            } else {
                batch.rewards[b]
            };
            let e = pred.get(b, j) - target;
            loss += scale * e * e;
            if j == latent_dim {
                reward_loss += e * e / n as f64;
            }
            g.set(b, j, 2.0 * e * scale);
        }
    }
    let (ghead, din) = head.backward(&trace, &g, true)?;
    let dz = din.expect("input grad requested").columns(0, latent_dim);
    let (genc, _) = nets.encoder.backward(&enc, &dz, false)?;
    Ok(AuxLoss {
        loss,
        reward_loss,
        encoder: genc,
        head: ghead,
    })
}
