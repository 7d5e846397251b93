use cbfrl::cbf::CbfSettings;
use cbfrl::dynamics::{VehicleParams, VehicleState};
use cbfrl::env::{EnvConfig, Environment, EpisodeEvent, EventKind};
use cbfrl::eval::{
    apply_grid_point, evaluate_policy, expand_grid, export_footprints, mean_std, records_from_csv,
    run_episode, summarize, sweep, sweep_csv, total_reward, EvalConfig, Frozen, GridPoint,
    PathFollower, PolicySource, SweepRecord, SweepSetup, Trace, TraceStep,
};
use cbfrl::geometry::{rectangle_corners, IntersectionConfig};
use cbfrl::marl::{initial_params, PpoConfig};
use cbfrl::rewards::{RewardConfig, RewardMethod};
use cbfrl::Error;

fn env(n: usize) -> Environment {
    Environment::new(
        &IntersectionConfig::default(),
        VehicleParams::default(),
        EnvConfig {
            n_agents: n,
            ..EnvConfig::default()
        },
        CbfSettings::default(),
    )
    .unwrap()
}

fn short_eval() -> EvalConfig {
    EvalConfig {
        t_eval: 20.0,
        seeds: vec![1, 2, 3],
        ..EvalConfig::default()
    }
}

#[test]
fn frozen_vehicles_never_exit() {
    let e = env(4);
    let cfg = short_eval();
    for seed in cfg.seeds.clone() {
        let (m, _) =
            run_episode(&e, &mut Frozen, &RewardConfig::default(), &cfg, seed, false).unwrap();
        assert_eq!(m.exits, 0);
        assert!(m.total_reward <= 0.0);
    }
}

#[test]
fn lone_path_follower_exits_without_collisions() {
    let e = env(1);
    let cfg = EvalConfig::default();
    for seed in cfg.seeds.clone() {
        let mut ctrl = PathFollower { target_speed: 0.6 };
        let (m, _) =
            run_episode(&e, &mut ctrl, &RewardConfig::default(), &cfg, seed, false).unwrap();
        assert_eq!(m.collision_events, 0, "seed {seed}");
        assert!(m.exits > 0, "seed {seed}");
        let expect = m.exits as f64 - m.comfort_penalty;
        assert!((m.total_reward - expect).abs() <= 1e-12);
    }
}

#[test]
fn total_reward_decomposes_for_interacting_vehicles() {
    let e = env(4);
    let cfg = short_eval();
    for seed in cfg.seeds.clone() {
        let mut ctrl = PathFollower { target_speed: 0.8 };
        let (m, _) =
            run_episode(&e, &mut ctrl, &RewardConfig::default(), &cfg, seed, false).unwrap();
        let expect = m.exits as f64 - m.collision_events as f64 - m.comfort_penalty;
        assert!((m.total_reward - expect).abs() <= 1e-12);
        assert!(m.collision_vehicles >= m.collision_events);
    }
}

#[test]
fn evaluation_is_deterministic_and_checks_shapes() {
    let e = env(4);
    let params = initial_params(&e, &PpoConfig::default(), 5);
    let cfg = short_eval();
    let a = evaluate_policy(&params, &e, &RewardConfig::default(), &cfg, true).unwrap();
    let b = evaluate_policy(&params, &e, &RewardConfig::default(), &cfg, true).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|(m, _)| m.activation_degree.is_some()));

    let other = initial_params(&env(3), &PpoConfig::default(), 5);
    assert!(matches!(
        evaluate_policy(&other, &e, &RewardConfig::default(), &cfg, false),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn injected_collision_costs_exactly_one() {
    let e = env(3);
    let cfg = short_eval();
    let mut ctrl = PathFollower { target_speed: 0.8 };
    let (_, trace) = run_episode(&e, &mut ctrl, &RewardConfig::default(), &cfg, 4, false).unwrap();
    let before = total_reward(&trace, &cfg).unwrap();
    let mut injected = trace.clone();
    injected.steps[17].events.push(EpisodeEvent {
        kind: EventKind::CollisionVehicle,
        step: 17,
        agents: vec![0, 2],
    });
    let after = total_reward(&injected, &cfg).unwrap();
    assert_eq!(after.total, before.total - 1.0);
    assert_eq!(after.collision_vehicles, before.collision_vehicles + 2);

    // Relabeling agents leaves the comfort penalty unchanged.
    let mut relabeled = trace.clone();
    for s in &mut relabeled.steps {
        s.accel.rotate_left(1);
        s.jerk.rotate_left(1);
    }
    let r = total_reward(&relabeled, &cfg).unwrap();
    assert!(
        (r.comfort_penalty - before.comfort_penalty).abs()
            <= 1e-12 * before.comfort_penalty.max(1.0)
    );
}

#[test]
fn sweep_summary_is_reproducible_from_csv() {
    let records: Vec<SweepRecord> = [1.0, 3.0, 2.5]
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            let per_seed = vec![m - 0.5, m + 0.5];
            let (mean, std) = mean_std(&per_seed);
            SweepRecord {
                method: RewardMethod::Distance,
                hyperparams: vec![
                    ("d_road_th".into(), 0.005),
                    ("d_veh_th".into(), 0.1 * (k + 1) as f64),
                ],
                per_seed,
                mean,
                std,
                activation_degree: 0.01 * k as f64,
                mean_correction: 0.0,
                exits: 1.0,
                collisions: 0.0,
            }
        })
        .collect();
    let back = records_from_csv(&sweep_csv(&records).unwrap()).unwrap();
    assert_eq!(back, records);
    let (a, b) = (
        summarize(RewardMethod::Distance, &records),
        summarize(RewardMethod::Distance, &back),
    );
    assert_eq!(a, b);
    let recomputed: Vec<f64> = back.iter().map(|r| mean_std(&r.per_seed).0).collect();
    assert_eq!(mean_std(&recomputed), (a.mean, a.std));
}

#[test]
fn single_point_sweep_has_zero_spread_and_missing_checkpoints_fail() {
    let e = env(2);
    let ppo = PpoConfig {
        total_env_steps: 200,
        steps_per_rollout: 200,
        minibatch_size: 64,
        ..PpoConfig::default()
    };
    let eval = EvalConfig {
        t_eval: 2.0,
        seeds: vec![1],
        ..EvalConfig::default()
    };
    let reward = RewardConfig::default();
    let setup = SweepSetup {
        env: &e,
        base_reward: &reward,
        ppo: &ppo,
        eval: &eval,
        seed: 0,
        workers: 1,
        config_hash: "h",
    };
    let grid: Vec<GridPoint> = expand_grid(&[("psi_th".into(), vec![0.1])]);
    let (records, summary) = sweep(
        &setup,
        RewardMethod::Cbf,
        &grid,
        &PolicySource::Train {
            checkpoint_dir: None,
        },
    )
    .unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(summary.std, 0.0);

    let dir = tempfile::tempdir().unwrap();
    let missing = sweep(
        &setup,
        RewardMethod::Cbf,
        &grid,
        &PolicySource::Load {
            checkpoint_dir: dir.path().to_path_buf(),
        },
    );
    assert!(matches!(missing, Err(Error::MissingFile(_))));
    assert!(sweep(
        &setup,
        RewardMethod::Cbf,
        &[],
        &PolicySource::Train {
            checkpoint_dir: None
        }
    )
    .is_err());
    assert!(apply_grid_point(&reward, &vec![("psi_th".into(), -1.0)]).is_err());
}

fn stationary_trace(n_steps: usize) -> Trace {
    let s = VehicleState::new(0.3, -0.2, 0.4, 0.0, 0.0);
    Trace {
        n_agents: 1,
        dt: 0.1,
        steps: (0..n_steps)
            .map(|step| TraceStep {
                step,
                states: vec![s],
                paths: vec![0],
                actions: vec![Default::default()],
                rewards: vec![0.0],
                events: vec![],
                accel: vec![0.0],
                jerk: vec![0.0],
                filter: None,
            })
            .collect(),
    }
}

#[test]
fn footprints_follow_logged_states() {
    let p = VehicleParams::default();
    let fp = export_footprints(&stationary_trace(30), (5, 25), &p, None).unwrap();
    assert_eq!(fp.outlines.len(), 20);
    assert!(fp
        .outlines
        .iter()
        .all(|o| o.corners == fp.outlines[0].corners));

    let e = env(3);
    let mut ctrl = PathFollower { target_speed: 0.8 };
    let (_, trace) = run_episode(
        &e,
        &mut ctrl,
        &RewardConfig::default(),
        &short_eval(),
        2,
        false,
    )
    .unwrap();
    let fp = export_footprints(&trace, (0, 50), &p, Some(e.map())).unwrap();
    assert_eq!(fp.outlines.len(), 50 * 3);
    for o in &fp.outlines {
        let expect = rectangle_corners(
            &trace.steps[o.step].states[o.agent],
            p.body_length,
            p.body_width,
        );
        assert_eq!(o.corners, expect);
    }
    assert!(fp.svg.starts_with("<svg") && fp.svg.contains("<polygon"));
    assert_eq!(fp.csv.lines().count(), 1 + 150);
}
