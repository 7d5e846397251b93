//! Rollout storage and generalized advantage estimation.

/// One agent-step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub critic_obs: Vec<f64>,
    pub z: [f64; 2],
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    /// Bootstrapping stops after this step (exit, collision or truncation).
    pub done: bool,
}

/// Consecutive transitions of one agent in one environment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<Transition>,
    /// Value of the state following the last step.
    pub last_value: f64,
}

/// `δ_t = r_t + γ·V_{t+1}·(1−done_t) − V_t`, `A_t = δ_t + γλ·(1−done_t)·A_{t+1}`.
/// Returns (advantages, returns = A + V).
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(
        values.len() == n && dones.len() == n,
        "GAE inputs must have equal length"
    );
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = last_value;
    for t in (0..n).rev() {
        let keep = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * keep - values[t];
        next_adv = delta + gamma * lambda * keep * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Flattened training batch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    pub obs: Vec<Vec<f64>>,
    pub critic_obs: Vec<Vec<f64>>,
    pub z: Vec<[f64; 2]>,
    pub log_prob: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutBuffer {
    pub trajectories: Vec<Trajectory>,
}

impl RolloutBuffer {
    pub fn n_samples(&self) -> usize {
        self.trajectories.iter().map(|t| t.steps.len()).sum()
    }

    /// Advantages are computed fresh from the stored rewards and values.
    pub fn into_batch(self, gamma: f64, lambda: f64) -> Batch {
        let mut batch = Batch::default();
        for traj in self.trajectories {
            let rewards: Vec<f64> = traj.steps.iter().map(|s| s.reward).collect();
            let values: Vec<f64> = traj.steps.iter().map(|s| s.value).collect();
            let dones: Vec<bool> = traj.steps.iter().map(|s| s.done).collect();
            let (adv, ret) = compute_gae(&rewards, &values, &dones, traj.last_value, gamma, lambda);
            batch.advantages.extend(adv);
            batch.returns.extend(ret);
            for s in traj.steps {
                batch.obs.push(s.obs);
                batch.critic_obs.push(s.critic_obs);
                batch.z.push(s.z);
                batch.log_prob.push(s.log_prob);
            }
        }
        batch
    }
}
