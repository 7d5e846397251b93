use cbfrl::dynamics::{
    saturated_derivative, step, wrap_angle, ControlInput, VehicleParams, VehicleState,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Explicit midpoint with `substeps` sub-intervals, followed by the same
/// post-step clamps as the integrator under test.
fn fine_step(
    s: &VehicleState,
    u: &ControlInput,
    p: &VehicleParams,
    dt: f64,
    substeps: usize,
) -> VehicleState {
    let u = p.clamp_input(*u);
    let h = dt / substeps as f64;
    let mut x = s.to_array();
    for _ in 0..substeps {
        let k1 = saturated_derivative(&VehicleState::from_array(x), &u, p);
        let mid = VehicleState::from_array(std::array::from_fn(|i| x[i] + 0.5 * h * k1[i]));
        let k2 = saturated_derivative(&mid, &u, p);
        x = std::array::from_fn(|i| x[i] + h * k2[i]);
    }
    VehicleState::new(
        x[0],
        x[1],
        wrap_angle(x[2]),
        x[3].clamp(0.0, p.v_max),
        x[4].clamp(-p.delta_max, p.delta_max),
    )
}

/// Uniform over the input box shrunk by `scale` around zero.
fn random_input(rng: &mut ChaCha8Rng, p: &VehicleParams, scale: f64) -> ControlInput {
    ControlInput::new(
        scale * rng.random_range(p.a_min..=p.a_max),
        scale * rng.random_range(p.steering_rate_min..=p.steering_rate_max),
    )
}

#[test]
fn moderate_input_trajectories_match_fine_integration() {
    let p = VehicleParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..100 {
        let mut a = VehicleState::new(
            0.0,
            0.0,
            rng.random_range(-3.0..3.0),
            rng.random_range(0.0..1.0),
            rng.random_range(-0.3..0.3),
        );
        let mut b = a;
        for _ in 0..100 {
            let u = random_input(&mut rng, &p, 0.1);
            a = step(&a, &u, &p, 0.1);
            b = fine_step(&b, &u, &p, 0.1, 2000);
        }
        assert!(a.position().distance(b.position()) < 1e-4);
    }
}

#[test]
fn single_steps_match_fine_integration_over_the_full_box() {
    let p = VehicleParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    for _ in 0..2000 {
        let s = VehicleState::new(
            0.0,
            0.0,
            rng.random_range(-3.0..3.0),
            rng.random_range(0.0..=1.0),
            rng.random_range(-0.785..0.785),
        );
        let u = random_input(&mut rng, &p, 1.0);
        let (a, b) = (step(&s, &u, &p, 0.1), fine_step(&s, &u, &p, 0.1, 2000));
        assert!(a.position().distance(b.position()) < 1e-4, "{s:?} {u:?}");
        // The midpoint oracle can stop up to one substep of motion short of a bound.
        let h = 0.1 / 2000.0;
        assert!((a.v - b.v).abs() <= h * p.a_max + 1e-12);
        assert!((a.delta - b.delta).abs() <= h * p.steering_rate_max + 1e-12);
    }
}

#[test]
fn rk4_local_error_shrinks_with_fifth_order() {
    let p = VehicleParams::default();
    let s = VehicleState::new(0.0, 0.0, 0.3, 0.6, 0.2);
    let u = ControlInput::new(0.3, 0.1);
    let err = |dt: f64| {
        let a = step(&s, &u, &p, dt);
        let b = fine_step(&s, &u, &p, dt, 10_000);
        a.position().distance(b.position()) + (a.theta - b.theta).abs()
    };
    let (e1, e2) = (err(0.4), err(0.2));
    assert!(e1 / e2 >= 8.0, "ratio {}", e1 / e2);
}

#[test]
fn step_is_bitwise_deterministic() {
    let p = VehicleParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..1000 {
        let s = VehicleState::new(
            rng.random(),
            rng.random(),
            rng.random_range(-3.0..3.0),
            rng.random(),
            rng.random_range(-0.7..0.7),
        );
        let u = random_input(&mut rng, &p, 1.0);
        assert_eq!(step(&s, &u, &p, 0.1), step(&s, &u, &p, 0.1));
    }
}

#[test]
fn bounds_hold_under_fuzzing() {
    let p = VehicleParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut s = VehicleState::default();
    for k in 0..100_000 {
        if k % 1000 == 0 {
            s = VehicleState::new(
                0.0,
                0.0,
                rng.random_range(-3.0..3.0),
                rng.random_range(0.0..1.0),
                rng.random_range(-0.78..0.78),
            );
        }
        let u = ControlInput::new(rng.random_range(-50.0..50.0), rng.random_range(-10.0..10.0));
        s = step(&s, &u, &p, 0.1);
        assert!((0.0..=p.v_max).contains(&s.v));
        assert!(s.delta.abs() <= p.delta_max);
        assert!(s.theta > -std::f64::consts::PI - 1e-12 && s.theta <= std::f64::consts::PI + 1e-12);
    }
}

#[test]
fn one_step_movement_never_exceeds_top_speed() {
    let p = VehicleParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    for _ in 0..100_000 {
        let s = VehicleState::new(
            0.0,
            0.0,
            rng.random_range(-3.2..3.2),
            rng.random_range(0.0..=1.0),
            rng.random_range(-0.785..0.785),
        );
        let u = random_input(&mut rng, &p, 1.0);
        let next = step(&s, &u, &p, 0.1);
        assert!(
            next.position().norm() <= p.v_max * 0.1 + 1e-12,
            "{s:?} {u:?}"
        );
    }
}
