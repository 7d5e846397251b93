//! Clipped-surrogate PPO update for the shared actor and centralized critic.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::buffer::Batch;
use super::mlp::MlpCache;
use super::policy::{gaussian_entropy, gaussian_log_prob, gaussian_log_prob_grad, PolicyParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_ratio: f64,
    pub epochs_per_batch: usize,
    pub minibatch_size: usize,
    /// Agent-steps collected per update.
    pub steps_per_rollout: usize,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    /// Environment transitions (all agents move once per transition).
    pub total_env_steps: usize,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_ratio: 0.2,
            epochs_per_batch: 4,
            minibatch_size: 512,
            steps_per_rollout: 4096,
            learning_rate: 3e-4,
            entropy_coef: 0.0,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            total_env_steps: 200_000,
            hidden: vec![64, 64],
            init_log_std: 0.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::Config(
                "ppo: gamma and gae_lambda must lie in [0, 1]".into(),
            ));
        }
        if !(self.clip_ratio > 0.0) || !(self.learning_rate > 0.0) || !(self.max_grad_norm > 0.0) {
            return Err(Error::Config(
                "ppo: clip_ratio, learning_rate and max_grad_norm must be positive".into(),
            ));
        }
        if self.epochs_per_batch == 0 || self.minibatch_size == 0 || self.steps_per_rollout == 0 {
            return Err(Error::Config(
                "ppo: epochs, minibatch and rollout sizes must be positive".into(),
            ));
        }
        if !(self.entropy_coef >= 0.0)
            || !(self.value_coef >= 0.0)
            || !self.init_log_std.is_finite()
        {
            return Err(Error::Config(
                "ppo: coefficients must be non-negative".into(),
            ));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config(
                "ppo.hidden must list positive layer widths".into(),
            ));
        }
        Ok(())
    }
}

/// Gradient with the same layout as [`PolicyParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub actor: Vec<f64>,
    pub log_std: [f64; 2],
    pub critic: Vec<f64>,
}

impl Gradient {
    pub fn zeros_like(p: &PolicyParams) -> Self {
        Self {
            actor: vec![0.0; p.actor.n_params()],
            log_std: [0.0; 2],
            critic: vec![0.0; p.critic.n_params()],
        }
    }

    pub fn norm(&self) -> f64 {
        self.actor
            .iter()
            .chain(&self.log_std)
            .chain(&self.critic)
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.actor
            .iter_mut()
            .chain(&mut self.log_std)
            .chain(&mut self.critic)
            .for_each(|g| *g *= s);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Mean loss over `indices` and its gradient. Advantages are used as stored.
pub fn loss_and_grad(
    params: &PolicyParams,
    batch: &Batch,
    indices: &[usize],
    cfg: &PpoConfig,
) -> (LossTerms, Gradient) {
    let mut grad = Gradient::zeros_like(params);
    let mut terms = LossTerms::default();
    let inv = 1.0 / indices.len().max(1) as f64;
    let mut actor_cache = MlpCache::default();
    let mut critic_cache = MlpCache::default();
    let (lo, hi) = (1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio);
    for &i in indices {
        params.actor.forward_cached(&batch.obs[i], &mut actor_cache);
        let out = actor_cache.output();
        let mean = [out[0], out[1]];
        let lp = gaussian_log_prob(batch.z[i], mean, params.log_std);
        let log_ratio = lp - batch.log_prob[i];
        let ratio = log_ratio.exp();
        let a = batch.advantages[i];
        let unclipped = ratio * a;
        let clipped = ratio.clamp(lo, hi) * a;
        terms.policy_loss -= unclipped.min(clipped) * inv;
        terms.approx_kl += ((ratio - 1.0) - log_ratio) * inv;
        if (ratio - 1.0).abs() > cfg.clip_ratio {
            terms.clip_fraction += inv;
        }
        if unclipped <= clipped {
            let d_lp = -a * ratio * inv;
            let (dm, ds) = gaussian_log_prob_grad(batch.z[i], mean, params.log_std);
            params
                .actor
                .backward(&actor_cache, &[d_lp * dm[0], d_lp * dm[1]], &mut grad.actor);
            grad.log_std[0] += d_lp * ds[0];
            grad.log_std[1] += d_lp * ds[1];
        }

        params
            .critic
            .forward_cached(&batch.critic_obs[i], &mut critic_cache);
        let err = critic_cache.output()[0] - batch.returns[i];
        terms.value_loss += err * err * inv;
        params.critic.backward(
            &critic_cache,
            &[2.0 * cfg.value_coef * err * inv],
            &mut grad.critic,
        );
    }
    terms.entropy = gaussian_entropy(params.log_std);
    grad.log_std[0] -= cfg.entropy_coef;
    grad.log_std[1] -= cfg.entropy_coef;
    terms.total =
        terms.policy_loss + cfg.value_coef * terms.value_loss - cfg.entropy_coef * terms.entropy;
    (terms, grad)
}

/// Zero-mean, unit-(population-)std advantages.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
    let scale = if std > 1e-12 { 1.0 / std } else { 1.0 };
    adv.iter_mut().for_each(|a| *a = (*a - mean) * scale);
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    m: Gradient,
    v: Gradient,
    t: i32,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(params: &PolicyParams, lr: f64) -> Self {
        Self {
            m: Gradient::zeros_like(params),
            v: Gradient::zeros_like(params),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut PolicyParams, g: &Gradient) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
            }
        };
        update(
            params.actor.params_mut(),
            &g.actor,
            &mut self.m.actor,
            &mut self.v.actor,
        );
        update(
            &mut params.log_std,
            &g.log_std,
            &mut self.m.log_std,
            &mut self.v.log_std,
        );
        update(
            params.critic.params_mut(),
            &g.critic,
            &mut self.m.critic,
            &mut self.v.critic,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

/// Several epochs of minibatch updates. On a non-finite loss the parameters and
/// optimizer state are restored and the offending statistics are reported.
pub fn ppo_update<R: Rng + ?Sized>(
    params: &mut PolicyParams,
    batch: &Batch,
    cfg: &PpoConfig,
    adam: &mut Adam,
    rng: &mut R,
) -> Result<TrainStats> {
    let mut batch = batch.clone();
    normalize_advantages(&mut batch.advantages);
    let backup = (params.clone(), adam.clone());
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut stats = TrainStats::default();
    let mut count = 0usize;
    for _ in 0..cfg.epochs_per_batch {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch_size) {
            let (terms, mut grad) = loss_and_grad(params, &batch, chunk, cfg);
            let gn = grad.norm();
            if !terms.total.is_finite() || !gn.is_finite() {
                let diag = format!(
                    "non-finite PPO loss (policy {}, value {}, entropy {}, grad norm {gn})",
                    terms.policy_loss, terms.value_loss, terms.entropy
                );
                *params = backup.0;
                *adam = backup.1;
                return Err(Error::Numerical(diag));
            }
            if gn > cfg.max_grad_norm {
                grad.scale(cfg.max_grad_norm / gn);
            }
            adam.step(params, &grad);
            stats.policy_loss += terms.policy_loss;
            stats.value_loss += terms.value_loss;
            stats.entropy += terms.entropy;
            stats.approx_kl += terms.approx_kl;
            stats.clip_fraction += terms.clip_fraction;
            stats.grad_norm += gn;
            count += 1;
        }
    }
    if count > 0 {
        let c = count as f64;
        stats.policy_loss /= c;
        stats.value_loss /= c;
        stats.entropy /= c;
        stats.approx_kl /= c;
        stats.clip_fraction /= c;
        stats.grad_norm /= c;
    }
    Ok(stats)
}
