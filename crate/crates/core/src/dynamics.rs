//! Kinematic bicycle model with slip angle.
//!
//! The state is `[x, y, θ, v, δ]` with the reference point at the center of
//! gravity; the input is `[acceleration, steering rate]`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub delta: f64,
}

impl VehicleState {
    pub const fn new(x: f64, y: f64, theta: f64, v: f64, delta: f64) -> Self {
        Self {
            x,
            y,
            theta,
            v,
            delta,
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.x, self.y, self.theta, self.v, self.delta]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// Longitudinal acceleration.
    pub u_v: f64,
    /// Steering rate.
    pub u_delta: f64,
}

impl ControlInput {
    pub const fn new(u_v: f64, u_delta: f64) -> Self {
        Self { u_v, u_delta }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.u_v, self.u_delta]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub rear_wheelbase: f64,
    pub body_length: f64,
    pub body_width: f64,
    pub v_max: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub steering_rate_min: f64,
    pub steering_rate_max: f64,
    pub delta_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 0.16,
            rear_wheelbase: 0.08,
            body_length: 0.22,
            body_width: 0.10,
            v_max: 1.0,
            a_min: -5.0,
            a_max: 5.0,
            steering_rate_min: -0.5 * PI,
            steering_rate_max: 0.5 * PI,
            delta_max: FRAC_PI_4,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rear_wheelbase > 0.0 && self.rear_wheelbase < self.wheelbase) {
            return Err(Error::Config(
                "vehicle: need 0 < rear_wheelbase < wheelbase".into(),
            ));
        }
        if !(self.body_length >= self.body_width && self.body_width > 0.0) {
            return Err(Error::Config(
                "vehicle: need body_length >= body_width > 0".into(),
            ));
        }
        if !(self.v_max > 0.0) {
            return Err(Error::Config("vehicle.v_max must be positive".into()));
        }
        if !(self.a_min < self.a_max) || !(self.steering_rate_min < self.steering_rate_max) {
            return Err(Error::Config(
                "vehicle: input limits must be ordered".into(),
            ));
        }
        if !(self.delta_max > 0.0 && self.delta_max < FRAC_PI_2) {
            return Err(Error::Config(
                "vehicle.delta_max must lie in (0, pi/2)".into(),
            ));
        }
        Ok(())
    }

    pub fn clamp_input(&self, u: ControlInput) -> ControlInput {
        ControlInput::new(
            u.u_v.clamp(self.a_min, self.a_max),
            u.u_delta
                .clamp(self.steering_rate_min, self.steering_rate_max),
        )
    }

    /// Ratio ℓ_r / ℓ_wb that enters the slip angle.
    pub fn slip_ratio(&self) -> f64 {
        self.rear_wheelbase / self.wheelbase
    }

    /// Center and half-extent of the input box, per axis.
    pub fn input_box(&self) -> ([f64; 2], [f64; 2]) {
        (
            [
                0.5 * (self.a_min + self.a_max),
                0.5 * (self.steering_rate_min + self.steering_rate_max),
            ],
            [
                0.5 * (self.a_max - self.a_min),
                0.5 * (self.steering_rate_max - self.steering_rate_min),
            ],
        )
    }
}

/// Wraps an angle to (−π, π].
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

pub fn slip_angle(delta: f64, params: &VehicleParams) -> Result<f64> {
    if delta.abs() >= FRAC_PI_2 || !delta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "steering angle {delta} outside (-pi/2, pi/2)"
        )));
    }
    Ok((delta.tan() * params.slip_ratio()).atan())
}

/// Drift term A(x); the input enters only the last two components.
pub fn drift(state: &VehicleState, params: &VehicleParams) -> [f64; 5] {
    let beta = (state.delta.tan() * params.slip_ratio()).atan();
    [
        state.v * (state.theta + beta).cos(),
        state.v * (state.theta + beta).sin(),
        state.v / params.wheelbase * state.delta.tan() * beta.cos(),
        0.0,
        0.0,
    ]
}

/// ẋ = A(x) + B u.
pub fn derivative(state: &VehicleState, input: &ControlInput, params: &VehicleParams) -> [f64; 5] {
    let mut d = drift(state, params);
    d[3] += input.u_v;
    d[4] += input.u_delta;
    d
}

/// Vector field used by [`step`]: speed and steering saturate inside the step, so
/// the kinematics see `v ∈ [0, v_max]`, `|δ| ≤ δ_max`, and `v̇`, `δ̇` stop at the
/// bounds. Every stage velocity is then at most `v_max`, which bounds the one-step
/// movement by `v_max·Δt`. Equals [`derivative`] strictly inside the bounds.
pub fn saturated_derivative(
    state: &VehicleState,
    input: &ControlInput,
    params: &VehicleParams,
) -> [f64; 5] {
    let inner = VehicleState {
        v: state.v.clamp(0.0, params.v_max),
        delta: state.delta.clamp(-params.delta_max, params.delta_max),
        ..*state
    };
    let mut d = drift(&inner, params);
    let stops =
        |x: f64, lo: f64, hi: f64, rate: f64| (x >= hi && rate > 0.0) || (x <= lo && rate < 0.0);
    d[3] = if stops(state.v, 0.0, params.v_max, input.u_v) {
        0.0
    } else {
        input.u_v
    };
    d[4] = if stops(
        state.delta,
        -params.delta_max,
        params.delta_max,
        input.u_delta,
    ) {
        0.0
    } else {
        input.u_delta
    };
    d
}

fn axpy(x: [f64; 5], a: f64, d: [f64; 5]) -> VehicleState {
    VehicleState::from_array(std::array::from_fn(|k| x[k] + a * d[k]))
}

fn rk4(state: &VehicleState, u: &ControlInput, params: &VehicleParams, h: f64) -> [f64; 5] {
    let x = state.to_array();
    let k1 = saturated_derivative(state, u, params);
    let k2 = saturated_derivative(&axpy(x, 0.5 * h, k1), u, params);
    let k3 = saturated_derivative(&axpy(x, 0.5 * h, k2), u, params);
    let k4 = saturated_derivative(&axpy(x, h, k3), u, params);
    std::array::from_fn(|k| x[k] + h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]))
}

/// Time until a coordinate moving at `rate` reaches `lo` or `hi`; infinite if it never does.
fn time_to_bound(x: f64, rate: f64, lo: f64, hi: f64) -> f64 {
    if rate > 0.0 && x < hi {
        (hi - x) / rate
    } else if rate < 0.0 && x > lo {
        (lo - x) / rate
    } else {
        f64::INFINITY
    }
}

/// One sampling period: clamp the input, integrate [`saturated_derivative`] with
/// classical RK4, then clamp speed and steering and wrap the heading.
///
/// Speed and steering are linear in time under a constant input, so the instants
/// at which they saturate are known exactly. The period is split there and each
/// smooth piece gets its own RK4 step.
pub fn step(
    state: &VehicleState,
    input: &ControlInput,
    params: &VehicleParams,
    dt: f64,
) -> VehicleState {
    let u = params.clamp_input(*input);
    let mut s = *state;
    let mut left = dt;
    for _ in 0..3 {
        let d = saturated_derivative(&s, &u, params);
        let t_v = time_to_bound(s.v, d[3], 0.0, params.v_max);
        let t_d = time_to_bound(s.delta, d[4], -params.delta_max, params.delta_max);
        let h = left.min(t_v).min(t_d);
        let next = rk4(&s, &u, params, h);
        s = VehicleState::from_array(next);
        // Land exactly on a bound reached at the end of this piece.
        if h == t_v {
            s.v = if d[3] > 0.0 { params.v_max } else { 0.0 };
        }
        if h == t_d {
            s.delta = if d[4] > 0.0 {
                params.delta_max
            } else {
                -params.delta_max
            };
        }
        left -= h;
        if left <= 0.0 {
            break;
        }
    }
    if left > 0.0 {
        s = VehicleState::from_array(rk4(&s, &u, params, left));
    }
    VehicleState {
        theta: wrap_angle(s.theta),
        v: s.v.clamp(0.0, params.v_max),
        delta: s.delta.clamp(-params.delta_max, params.delta_max),
        ..s
    }
}
