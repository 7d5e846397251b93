use cbfrl::cbf::CbfSettings;
use cbfrl::dynamics::VehicleParams;
use cbfrl::env::{EnvConfig, Environment};
use cbfrl::geometry::IntersectionConfig;
use cbfrl::marl::policy::gaussian_log_prob;
use cbfrl::marl::{
    compute_gae, loss_and_grad, normalize_advantages, train, ActionScale, Adam, Batch,
    PolicyParams, PpoConfig,
};
use cbfrl::rewards::RewardConfig;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_batch(params: &PolicyParams, rng: &mut ChaCha8Rng, n: usize) -> Batch {
    let mut b = Batch::default();
    for _ in 0..n {
        let obs: Vec<f64> = (0..params.obs_dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let critic_obs: Vec<f64> = (0..params.critic_dim())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let (mean, log_std) = params.policy_forward(&obs).unwrap();
        let z = [
            mean[0] + rng.random_range(-1.0..1.0),
            mean[1] + rng.random_range(-1.0..1.0),
        ];
        // Old log-probs within ±0.05 of the current ones keep ratios far from the clip edges.
        let lp = gaussian_log_prob(z, mean, log_std) + rng.random_range(-0.05..0.05);
        b.obs.push(obs);
        b.critic_obs.push(critic_obs);
        b.z.push(z);
        b.log_prob.push(lp);
        b.advantages.push(rng.random_range(-2.0..2.0));
        b.returns.push(rng.random_range(-1.0..1.0));
    }
    b
}

/// Reads or writes parameter `k` in the flat order actor, log_std, critic.
fn param(p: &mut PolicyParams, k: usize) -> &mut f64 {
    let na = p.actor.n_params();
    if k < na {
        &mut p.actor.params_mut()[k]
    } else if k < na + 2 {
        &mut p.log_std[k - na]
    } else {
        &mut p.critic.params_mut()[k - na - 2]
    }
}

#[test]
fn loss_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let cfg = PpoConfig {
        entropy_coef: 0.01,
        ..PpoConfig::default()
    };
    let params = PolicyParams::new(2, 1, &[3], -0.3, &mut rng);
    let batch = tiny_batch(&params, &mut rng, 16);
    let idx: Vec<usize> = (0..batch.len()).collect();
    let (_, grad) = loss_and_grad(&params, &batch, &idx, &cfg);
    let flat: Vec<f64> = grad
        .actor
        .iter()
        .chain(&grad.log_std)
        .chain(&grad.critic)
        .copied()
        .collect();
    let eps = 1e-6;
    for (k, g) in flat.iter().enumerate() {
        let mut plus = params.clone();
        *param(&mut plus, k) += eps;
        let mut minus = params.clone();
        *param(&mut minus, k) -= eps;
        let fd = (loss_and_grad(&plus, &batch, &idx, &cfg).0.total
            - loss_and_grad(&minus, &batch, &idx, &cfg).0.total)
            / (2.0 * eps);
        let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-6);
        assert!(rel <= 1e-3, "param {k}: analytic {g}, numeric {fd}");
    }
}

#[test]
fn positive_advantage_raises_log_prob() {
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    let cfg = PpoConfig::default();
    let mut params = PolicyParams::new(2, 1, &[8], 0.0, &mut rng);
    let mut batch = tiny_batch(&params, &mut rng, 1);
    let (mean, log_std) = params.policy_forward(&batch.obs[0]).unwrap();
    batch.log_prob[0] = gaussian_log_prob(batch.z[0], mean, log_std);
    batch.advantages[0] = 1.0;
    let before = batch.log_prob[0];
    let (_, grad) = loss_and_grad(&params, &batch, &[0], &cfg);
    Adam::new(&params, 1e-3).step(&mut params, &grad);
    let (mean, log_std) = params.policy_forward(&batch.obs[0]).unwrap();
    assert!(gaussian_log_prob(batch.z[0], mean, log_std) > before);
}

#[test]
fn gae_with_unit_discounts_sums_future_rewards() {
    let rewards = [1.0, 2.0, 3.0];
    let values = [0.5, -0.5, 0.25];
    let (adv, ret) = compute_gae(&rewards, &values, &[false, false, false], 4.0, 1.0, 1.0);
    for t in 0..3 {
        let tail: f64 = rewards[t..].iter().sum::<f64>() + 4.0;
        assert!((ret[t] - tail).abs() < 1e-12);
        assert!((adv[t] - (tail - values[t])).abs() < 1e-12);
    }
    // A terminal step cuts the bootstrap.
    let (_, ret) = compute_gae(&rewards, &values, &[false, true, false], 4.0, 1.0, 1.0);
    assert!((ret[0] - 3.0).abs() < 1e-12);
}

#[test]
fn training_is_reproducible() {
    let env = Environment::new(
        &IntersectionConfig::default(),
        VehicleParams::default(),
        EnvConfig {
            n_agents: 2,
            ..EnvConfig::default()
        },
        CbfSettings::default(),
    )
    .unwrap();
    let cfg = PpoConfig {
        total_env_steps: 600,
        steps_per_rollout: 400,
        minibatch_size: 100,
        hidden: vec![16, 16],
        ..PpoConfig::default()
    };
    let a = train(&env, &RewardConfig::default(), &cfg, 9, 2).unwrap();
    let b = train(&env, &RewardConfig::default(), &cfg, 9, 2).unwrap();
    assert_eq!(a, b);
    assert!(a.params.is_finite());
    assert!(!a.curve.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn squashed_actions_stay_in_the_box(z0 in -1e3f64..1e3, z1 in -1e3f64..1e3) {
        let p = VehicleParams::default();
        let u = ActionScale::from_params(&p).squash([z0, z1]);
        prop_assert!(u.u_v >= p.a_min && u.u_v <= p.a_max);
        prop_assert!(u.u_delta >= p.steering_rate_min && u.u_delta <= p.steering_rate_max);
    }

    #[test]
    fn normalized_advantages_are_standardized(adv in prop::collection::vec(-100.0f64..100.0, 2..64)) {
        let spread = adv.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - adv.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-3);
        let mut a = adv.clone();
        normalize_advantages(&mut a);
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        let var = a.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((var - 1.0).abs() < 1e-9);
    }
}
