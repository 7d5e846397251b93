//! Shared actor and centralized critic.
//!
//! The actor maps one agent's observation to the mean of a diagonal Gaussian
//! over a pre-squash action `z`; the executed input is `center + half · tanh(z)`.
//! Log-probabilities are taken on `z`, so the squash Jacobian cancels in PPO
//! ratios. The critic sees every agent's observation in id order followed by a
//! one-hot of the agent being valued.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use crate::dynamics::{ControlInput, VehicleParams};
use crate::error::{Error, Result};

const LOG_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub actor: Mlp,
    pub log_std: [f64; 2],
    pub critic: Mlp,
    pub obs_dim: usize,
    pub n_agents: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionSample {
    pub z: [f64; 2],
    pub log_prob: f64,
    pub action: ControlInput,
}

/// Center and half-range of the input box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionScale {
    pub center: [f64; 2],
    pub half: [f64; 2],
}

impl ActionScale {
    pub fn from_params(p: &VehicleParams) -> Self {
        let (center, half) = p.input_box();
        Self { center, half }
    }

    pub fn squash(&self, z: [f64; 2]) -> ControlInput {
        ControlInput::new(
            self.center[0] + self.half[0] * z[0].tanh(),
            self.center[1] + self.half[1] * z[1].tanh(),
        )
    }
}

pub fn gaussian_log_prob(z: [f64; 2], mean: [f64; 2], log_std: [f64; 2]) -> f64 {
    (0..2)
        .map(|k| {
            let s = (z[k] - mean[k]) / log_std[k].exp();
            -0.5 * s * s - log_std[k] - 0.5 * LOG_2PI
        })
        .sum()
}

/// ∂ log p / ∂mean and ∂ log p / ∂log_std.
pub fn gaussian_log_prob_grad(
    z: [f64; 2],
    mean: [f64; 2],
    log_std: [f64; 2],
) -> ([f64; 2], [f64; 2]) {
    let mut dm = [0.0; 2];
    let mut ds = [0.0; 2];
    for k in 0..2 {
        let var = (2.0 * log_std[k]).exp();
        let d = z[k] - mean[k];
        dm[k] = d / var;
        ds[k] = d * d / var - 1.0;
    }
    (dm, ds)
}

pub fn gaussian_entropy(log_std: [f64; 2]) -> f64 {
    log_std.iter().map(|s| s + 0.5 * (LOG_2PI + 1.0)).sum()
}

impl PolicyParams {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        n_agents: usize,
        hidden: &[usize],
        init_log_std: f64,
        rng: &mut R,
    ) -> Self {
        let mut actor_sizes = vec![obs_dim];
        actor_sizes.extend_from_slice(hidden);
        actor_sizes.push(2);
        let mut critic_sizes = vec![Self::critic_dim_for(obs_dim, n_agents)];
        critic_sizes.extend_from_slice(hidden);
        critic_sizes.push(1);
        Self {
            actor: Mlp::new(&actor_sizes, 0.01, rng),
            log_std: [init_log_std; 2],
            critic: Mlp::new(&critic_sizes, 1.0, rng),
            obs_dim,
            n_agents,
        }
    }

    fn critic_dim_for(obs_dim: usize, n_agents: usize) -> usize {
        obs_dim * n_agents + n_agents
    }

    pub fn critic_dim(&self) -> usize {
        Self::critic_dim_for(self.obs_dim, self.n_agents)
    }

    pub fn n_params(&self) -> usize {
        self.actor.n_params() + 2 + self.critic.n_params()
    }

    pub fn is_finite(&self) -> bool {
        self.actor
            .params()
            .iter()
            .chain(&self.log_std)
            .chain(self.critic.params())
            .all(|v| v.is_finite())
    }

    pub fn check_obs(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.obs_dim {
            return Err(Error::ShapeMismatch {
                expected: self.obs_dim,
                got: obs.len(),
            });
        }
        Ok(())
    }

    /// Mean and log standard deviation of the pre-squash action.
    pub fn policy_forward(&self, obs: &[f64]) -> Result<([f64; 2], [f64; 2])> {
        self.check_obs(obs)?;
        let out = self.actor.forward(obs);
        Ok(([out[0], out[1]], self.log_std))
    }

    /// Critic input for `agent` from all agents' observations.
    pub fn critic_input(&self, observations: &[Vec<f64>], agent: usize) -> Result<Vec<f64>> {
        if observations.len() != self.n_agents {
            return Err(Error::ShapeMismatch {
                expected: self.n_agents,
                got: observations.len(),
            });
        }
        let mut x = Vec::with_capacity(self.critic_dim());
        for o in observations {
            self.check_obs(o)?;
            x.extend_from_slice(o);
        }
        x.extend((0..self.n_agents).map(|k| if k == agent { 1.0 } else { 0.0 }));
        Ok(x)
    }

    pub fn value(&self, critic_input: &[f64]) -> Result<f64> {
        if critic_input.len() != self.critic_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.critic_dim(),
                got: critic_input.len(),
            });
        }
        Ok(self.critic.forward(critic_input)[0])
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        scale: &ActionScale,
        rng: &mut R,
    ) -> Result<ActionSample> {
        let (mean, log_std) = self.policy_forward(obs)?;
        let z = [0, 1].map(|k| mean[k] + log_std[k].exp() * rng.sample::<f64, _>(StandardNormal));
        Ok(ActionSample {
            z,
            log_prob: gaussian_log_prob(z, mean, log_std),
            action: scale.squash(z),
        })
    }

    /// Squashed mean action.
    pub fn deterministic_action(&self, obs: &[f64], scale: &ActionScale) -> Result<ControlInput> {
        let (mean, _) = self.policy_forward(obs)?;
        Ok(scale.squash(mean))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_actor_centers_actions() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = PolicyParams::new(5, 2, &[8, 8], 0.0, &mut rng);
        p.actor = Mlp::zeros(p.actor.sizes());
        let scale = ActionScale::from_params(&VehicleParams::default());
        let (mean, _) = p.policy_forward(&[0.1; 5]).unwrap();
        assert_eq!(mean, [0.0, 0.0]);
        assert_eq!(
            p.deterministic_action(&[0.1; 5], &scale).unwrap(),
            ControlInput::new(0.0, 0.0)
        );
        assert!(p.policy_forward(&[0.0; 4]).is_err());
    }

    #[test]
    fn sampling_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = PolicyParams::new(5, 2, &[8], 0.0, &mut rng);
        let scale = ActionScale::from_params(&VehicleParams::default());
        let a = p
            .sample(&[0.2; 5], &scale, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        let b = p
            .sample(&[0.2; 5], &scale, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn log_prob_gradient_matches_differences() {
        let z = [0.4, -1.2];
        let mean = [0.1, -0.3];
        let ls = [-0.2, 0.3];
        let (dm, ds) = gaussian_log_prob_grad(z, mean, ls);
        let eps = 1e-6;
        for k in 0..2 {
            let mut mp = mean;
            mp[k] += eps;
            let mut mm = mean;
            mm[k] -= eps;
            let fd = (gaussian_log_prob(z, mp, ls) - gaussian_log_prob(z, mm, ls)) / (2.0 * eps);
            assert!((fd - dm[k]).abs() <= 1e-4 * fd.abs().max(1e-8));
            let mut sp = ls;
            sp[k] += eps;
            let mut sm = ls;
            sm[k] -= eps;
            let fd =
                (gaussian_log_prob(z, mean, sp) - gaussian_log_prob(z, mean, sm)) / (2.0 * eps);
            assert!((fd - ds[k]).abs() <= 1e-4 * fd.abs().max(1e-8));
        }
    }
}
