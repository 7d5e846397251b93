//! Rollout collection and the training loop.
//!
//! Every worker owns one environment and its own random stream, seeded from the
//! run seed in worker order. Workers collect in parallel against a read-only
//! parameter snapshot and their trajectories are merged in worker order, so the
//! result does not depend on thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::buffer::{RolloutBuffer, Trajectory, Transition};
use super::policy::{ActionScale, PolicyParams};
use super::ppo::{ppo_update, Adam, PpoConfig};
use crate::env::{Environment, EventKind, WorldState};
use crate::error::{Error, Result};
use crate::rewards::RewardConfig;

/// One row of the training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub env_steps: usize,
    /// Mean per-agent-step reward over the rollout.
    pub mean_episode_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub exits: usize,
    pub collisions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub params: PolicyParams,
    pub curve: Vec<CurvePoint>,
}

struct Worker {
    world: WorldState,
    rng: ChaCha8Rng,
}

struct Collected {
    trajectories: Vec<Trajectory>,
    exits: usize,
    collisions: usize,
    /// Sum of environment rewards, without truncation bootstraps.
    reward_sum: f64,
}

pub fn initial_params(env: &Environment, cfg: &PpoConfig, seed: u64) -> PolicyParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PolicyParams::new(
        env.observation_len(),
        env.n_agents(),
        &cfg.hidden,
        cfg.init_log_std,
        &mut rng,
    )
}

fn observe_all(env: &Environment, world: &WorldState) -> Vec<Vec<f64>> {
    (0..env.n_agents()).map(|i| env.observe(world, i)).collect()
}

fn values(params: &PolicyParams, obs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let inputs = (0..obs.len())
        .map(|i| params.critic_input(obs, i))
        .collect::<Result<Vec<_>>>()?;
    let v = inputs
        .iter()
        .map(|x| params.value(x))
        .collect::<Result<Vec<_>>>()?;
    Ok((inputs, v))
}

fn collect(
    worker: &mut Worker,
    env: &Environment,
    params: &PolicyParams,
    reward_cfg: &RewardConfig,
    gamma: f64,
    n_steps: usize,
) -> Result<Collected> {
    let n = env.n_agents();
    let scale = ActionScale::from_params(env.params());
    let horizon = env.config().episode_horizon;
    let mut trajectories = vec![Trajectory::default(); n];
    let mut exits = 0;
    let mut collisions = 0;
    let mut reward_sum = 0.0;
    let mut obs = observe_all(env, &worker.world);
    for _ in 0..n_steps {
        let (critic_obs, value) = values(params, &obs)?;
        let samples = obs
            .iter()
            .map(|o| params.sample(o, &scale, &mut worker.rng))
            .collect::<Result<Vec<_>>>()?;
        let actions: Vec<_> = samples.iter().map(|s| s.action).collect();
        let result = env.step(&mut worker.world, &actions, reward_cfg)?;
        for e in &result.events {
            match e.kind {
                EventKind::Exit => exits += 1,
                EventKind::CollisionVehicle | EventKind::CollisionRoad => collisions += 1,
            }
        }
        let next_obs = observe_all(env, &worker.world);
        let truncated = worker.world.step_index >= horizon;
        let next_values = if truncated {
            Some(values(params, &next_obs)?.1)
        } else {
            None
        };
        for (i, (o, c)) in obs.into_iter().zip(critic_obs).enumerate() {
            let mut reward = result.rewards[i].total;
            reward_sum += reward;
            let mut done = result.respawned[i];
            if let (Some(nv), false) = (&next_values, done) {
                reward += gamma * nv[i];
                done = true;
            }
            trajectories[i].steps.push(Transition {
                obs: o,
                critic_obs: c,
                z: samples[i].z,
                log_prob: samples[i].log_prob,
                reward,
                value: value[i],
                done,
            });
        }
        if truncated {
            worker.world = env.reset(worker.rng.random())?;
            obs = observe_all(env, &worker.world);
        } else {
            obs = next_obs;
        }
    }
    let (_, last) = values(params, &obs)?;
    for (t, v) in trajectories.iter_mut().zip(last) {
        t.last_value = v;
    }
    Ok(Collected {
        trajectories,
        exits,
        collisions,
        reward_sum,
    })
}

pub fn train(
    env: &Environment,
    reward_cfg: &RewardConfig,
    ppo_cfg: &PpoConfig,
    seed: u64,
    workers: usize,
) -> Result<TrainOutput> {
    train_with(env, reward_cfg, ppo_cfg, seed, workers, |_, _| Ok(()))
}

/// Training loop; `on_update` runs after every update (used for checkpoints and logs).
pub fn train_with<F>(
    env: &Environment,
    reward_cfg: &RewardConfig,
    ppo_cfg: &PpoConfig,
    seed: u64,
    workers: usize,
    mut on_update: F,
) -> Result<TrainOutput>
where
    F: FnMut(&PolicyParams, &CurvePoint) -> Result<()>,
{
    ppo_cfg.validate()?;
    reward_cfg.validate()?;
    if workers == 0 {
        return Err(Error::Config("at least one worker is required".into()));
    }
    let mut params = initial_params(env, ppo_cfg, seed);
    let mut master = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut pool = (0..workers)
        .map(|_| {
            let mut rng = ChaCha8Rng::seed_from_u64(master.random());
            let world = env.reset(rng.random())?;
            Ok(Worker { world, rng })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut update_rng = ChaCha8Rng::seed_from_u64(master.random());
    let mut adam = Adam::new(&params, ppo_cfg.learning_rate);
    let per_worker = ppo_cfg
        .steps_per_rollout
        .div_ceil(env.n_agents() * workers)
        .max(1);
    let mut curve = Vec::new();
    let mut env_steps = 0;
    while env_steps < ppo_cfg.total_env_steps {
        let remaining = (ppo_cfg.total_env_steps - env_steps).div_ceil(workers);
        let n_steps = per_worker.min(remaining);
        let snapshot = &params;
        let collected = pool
            .par_iter_mut()
            .map(|w| collect(w, env, snapshot, reward_cfg, ppo_cfg.gamma, n_steps))
            .collect::<Result<Vec<_>>>()?;
        env_steps += n_steps * workers;
        let mut buffer = RolloutBuffer::default();
        let (mut exits, mut collisions, mut reward_sum) = (0, 0, 0.0);
        for c in collected {
            buffer.trajectories.extend(c.trajectories);
            exits += c.exits;
            collisions += c.collisions;
            reward_sum += c.reward_sum;
        }
        let mean_reward = reward_sum / buffer.n_samples() as f64;
        let batch = buffer.into_batch(ppo_cfg.gamma, ppo_cfg.gae_lambda);
        let stats = ppo_update(&mut params, &batch, ppo_cfg, &mut adam, &mut update_rng)?;
        let point = CurvePoint {
            env_steps,
            mean_episode_reward: mean_reward,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            approx_kl: stats.approx_kl,
            clip_fraction: stats.clip_fraction,
            exits,
            collisions,
        };
        on_update(&params, &point)?;
        curve.push(point);
    }
    Ok(TrainOutput { params, curve })
}
