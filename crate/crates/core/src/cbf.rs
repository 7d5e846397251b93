//! Road-boundary and vehicle-pair barrier functions with their first two time
//! derivatives along the bicycle dynamics, and the constraint value ψ.
//!
//! Each barrier is a minimum over circles (or circle pairs). Derivatives are taken
//! at the minimizing element with its boundary feature frozen, which makes `ḣ` a
//! smooth function of the state and `ḧ` affine in the inputs of the involved
//! vehicles: `ḧ = ∇ₓḣ · (A(x) + B u)`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{drift, ControlInput, VehicleParams, VehicleState};
use crate::error::{Error, Result};
use crate::geometry::{
    circle_centers, pseudo_distance, CircleDecomposition, Corridor, Point2, Polyline,
    PseudoDistance, Side,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum RemainderMode {
    Zero,
    Constant { value: f64 },
}

impl RemainderMode {
    pub fn value(&self) -> f64 {
        match *self {
            RemainderMode::Zero => 0.0,
            RemainderMode::Constant { value } => value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CbfConfig {
    pub dt: f64,
    /// Slope of the linear class-K function α(h) = γ·h.
    pub gamma: f64,
    pub remainder: RemainderMode,
}

impl Default for CbfConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            gamma: 1.0,
            remainder: RemainderMode::Zero,
        }
    }
}

impl CbfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.gamma > 0.0) || !self.remainder.value().is_finite() {
            return Err(Error::Config(
                "cbf: need dt > 0, gamma > 0 and a finite remainder".into(),
            ));
        }
        Ok(())
    }
}

/// Config-file view of [`CbfConfig`]; the sampling period comes from the environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CbfSettings {
    pub gamma: f64,
    pub remainder: RemainderMode,
}

impl Default for CbfSettings {
    fn default() -> Self {
        let c = CbfConfig::default();
        Self {
            gamma: c.gamma,
            remainder: c.remainder,
        }
    }
}

impl CbfSettings {
    pub fn with_dt(&self, dt: f64) -> CbfConfig {
        CbfConfig {
            dt,
            gamma: self.gamma,
            remainder: self.remainder,
        }
    }
}

/// Which element achieved the minimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActiveSelector {
    Road {
        circle: usize,
        segment: usize,
        at_vertex: bool,
    },
    Pair {
        circle_a: usize,
        circle_b: usize,
    },
}

/// Derivative data for one vehicle taking part in a barrier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvolvedVehicle {
    pub grad_h: [f64; 5],
    pub grad_h_dot: [f64; 5],
}

impl InvolvedVehicle {
    /// Coefficients of `ḧ` on this vehicle's `(u_v, u_δ)`.
    pub fn input_coeffs(&self) -> [f64; 2] {
        [self.grad_h_dot[3], self.grad_h_dot[4]]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbfEvaluation {
    pub h: f64,
    pub h_dot: f64,
    /// Input-free part of `ḧ`.
    pub h_ddot_drift: f64,
    /// One entry per involved vehicle: the ego vehicle first.
    pub involved: Vec<InvolvedVehicle>,
    pub active: ActiveSelector,
}

impl CbfEvaluation {
    pub fn h_ddot(&self, inputs: &[ControlInput]) -> Result<f64> {
        if inputs.len() != self.involved.len() {
            return Err(Error::ShapeMismatch {
                expected: self.involved.len(),
                got: inputs.len(),
            });
        }
        Ok(self.h_ddot_drift
            + self
                .involved
                .iter()
                .zip(inputs)
                .map(|(inv, u)| {
                    let c = inv.input_coeffs();
                    c[0] * u.u_v + c[1] * u.u_delta
                })
                .sum::<f64>())
    }

    fn swapped(&self) -> CbfEvaluation {
        let mut out = self.clone();
        out.involved.reverse();
        if let ActiveSelector::Pair { circle_a, circle_b } = self.active {
            out.active = ActiveSelector::Pair {
                circle_a: circle_b,
                circle_b: circle_a,
            };
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConstraintSource {
    Road(SideTag),
    /// (ego, other)
    Pair(usize, usize),
}

/// Ordered stand-in for [`Side`] so sources sort deterministically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SideTag {
    L,
    R,
}

impl From<Side> for SideTag {
    fn from(s: Side) -> Self {
        match s {
            Side::Left => SideTag::L,
            Side::Right => SideTag::R,
        }
    }
}

impl std::fmt::Display for ConstraintSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConstraintSource::Road(SideTag::L) => write!(f, "road_L"),
            ConstraintSource::Road(SideTag::R) => write!(f, "road_R"),
            ConstraintSource::Pair(i, j) => write!(f, "pair({i},{j})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintValue {
    pub source: ConstraintSource,
    pub psi: f64,
    pub evaluation: CbfEvaluation,
}

/// Position, velocity and their state Jacobians for one circle center.
struct CircleMotion {
    center: Point2,
    velocity: Point2,
    /// ∂c/∂x, one column per state component.
    d_center: [Point2; 5],
    /// ∂ċ/∂x.
    d_velocity: [Point2; 5],
}

fn circle_motion(state: &VehicleState, offset: f64, params: &VehicleParams) -> CircleMotion {
    let rho = params.slip_ratio();
    let (theta, v, delta) = (state.theta, state.v, state.delta);
    let tan = delta.tan();
    let sec2 = 1.0 + tan * tan;
    let q = 1.0 + rho * rho * tan * tan;
    let beta = (rho * tan).atan();
    // tan δ · cos β and its derivative in δ.
    let m = tan / q.sqrt();
    let dm = sec2 / (q * q.sqrt());
    let dbeta = rho * sec2 / q;
    let k = offset / params.wheelbase;

    let heading = Point2::from_angle(theta);
    let heading_perp = heading.perp();
    let course = Point2::from_angle(theta + beta);
    let course_perp = course.perp();

    let g = course + heading_perp * (k * m);
    let dg_dtheta = course_perp - heading * (k * m);
    let dg_ddelta = course_perp * dbeta + heading_perp * (k * dm);

    let zero = Point2::default();
    CircleMotion {
        center: state.position() + heading * offset,
        velocity: g * v,
        d_center: [
            Point2::new(1.0, 0.0),
            Point2::new(0.0, 1.0),
            heading_perp * offset,
            zero,
            zero,
        ],
        d_velocity: [zero, zero, dg_dtheta * v, g, dg_ddelta * v],
    }
}

fn row_times(w: Point2, cols: &[Point2; 5]) -> [f64; 5] {
    std::array::from_fn(|k| w.dot(cols[k]))
}

fn add5(a: [f64; 5], b: [f64; 5]) -> [f64; 5] {
    std::array::from_fn(|k| a[k] + b[k])
}

fn scale5(a: [f64; 5], s: f64) -> [f64; 5] {
    std::array::from_fn(|k| a[k] * s)
}

fn dot5(a: [f64; 5], b: [f64; 5]) -> f64 {
    a.iter().zip(&b).map(|(x, y)| x * y).sum()
}

/// Value and derivatives of `σ‖D‖` for a difference vector D with rate Ḋ.
/// Returns (value, unit direction, ḊᵀP/‖D‖).
fn norm_terms(d: Point2, d_dot: Point2) -> (f64, Point2, Point2) {
    let len = d.norm();
    if len <= 1e-12 {
        return (len, Point2::default(), Point2::default());
    }
    let unit = d * (1.0 / len);
    let proj = (d_dot - unit * unit.dot(d_dot)) * (1.0 / len);
    (len, unit, proj)
}

/// Barrier of one vehicle against one side of its corridor.
pub fn road_cbf(
    state: &VehicleState,
    side: Side,
    corridor: &Corridor,
    decomp: &CircleDecomposition,
    params: &VehicleParams,
) -> CbfEvaluation {
    road_cbf_against(state, corridor.boundary(side), decomp, params)
}

pub fn road_cbf_against(
    state: &VehicleState,
    boundary: &Polyline,
    decomp: &CircleDecomposition,
    params: &VehicleParams,
) -> CbfEvaluation {
    let centers = circle_centers(state, decomp);
    let (circle, hit) = centers
        .iter()
        .map(|&c| pseudo_distance(c, boundary))
        .enumerate()
        .fold(
            None,
            |best: Option<(usize, PseudoDistance)>, (j, pd)| match best {
                Some((_, b)) if b.distance <= pd.distance => best,
                _ => Some((j, pd)),
            },
        )
        .expect("decomposition has at least one circle");
    let motion = circle_motion(state, decomp.offsets[circle], params);
    let h = hit.distance - decomp.radius;

    let (h_dot, grad_h, grad_h_dot) = if hit.at_vertex() {
        let vertex = hit.closest;
        let (_, unit, proj) = norm_terms(motion.center - vertex, motion.velocity);
        let s = hit.sign;
        let h_dot = s * unit.dot(motion.velocity);
        let grad_h = scale5(row_times(unit, &motion.d_center), s);
        let grad_h_dot = scale5(
            add5(
                row_times(proj, &motion.d_center),
                row_times(unit, &motion.d_velocity),
            ),
            s,
        );
        (h_dot, grad_h, grad_h_dot)
    } else {
        let (a, b) = boundary.segment(hit.segment);
        let u = (b - a) * (1.0 / a.distance(b));
        let side_sign = match boundary.corridor_side() {
            Side::Left => 1.0,
            Side::Right => -1.0,
        };
        let normal = u.perp() * side_sign;
        (
            normal.dot(motion.velocity),
            row_times(normal, &motion.d_center),
            row_times(normal, &motion.d_velocity),
        )
    };
    let involved = InvolvedVehicle { grad_h, grad_h_dot };
    CbfEvaluation {
        h,
        h_dot,
        h_ddot_drift: dot5(grad_h_dot, drift(state, params)),
        involved: vec![involved],
        active: ActiveSelector::Road {
            circle,
            segment: hit.segment,
            at_vertex: hit.at_vertex(),
        },
    }
}

/// Barrier between two vehicles: smallest circle-pair surface distance.
/// Ties resolve to the lexicographically smallest circle pair.
pub fn vehicle_pair_cbf(
    state_i: &VehicleState,
    state_j: &VehicleState,
    decomp: &CircleDecomposition,
    params: &VehicleParams,
) -> CbfEvaluation {
    let ci = circle_centers(state_i, decomp);
    let cj = circle_centers(state_j, decomp);
    let mut best = (f64::INFINITY, 0, 0);
    for (a, pa) in ci.iter().enumerate() {
        for (b, pb) in cj.iter().enumerate() {
            let d = pa.distance(*pb);
            if d < best.0 {
                best = (d, a, b);
            }
        }
    }
    let (_, a, b) = best;
    let mi = circle_motion(state_i, decomp.offsets[a], params);
    let mj = circle_motion(state_j, decomp.offsets[b], params);
    let d_dot = mi.velocity - mj.velocity;
    let (len, unit, proj) = norm_terms(mi.center - mj.center, d_dot);

    let grad_i = row_times(unit, &mi.d_center);
    let grad_j = scale5(row_times(unit, &mj.d_center), -1.0);
    let grad_dot_i = add5(
        row_times(proj, &mi.d_center),
        row_times(unit, &mi.d_velocity),
    );
    let grad_dot_j = scale5(
        add5(
            row_times(proj, &mj.d_center),
            row_times(unit, &mj.d_velocity),
        ),
        -1.0,
    );
    let h_ddot_drift =
        dot5(grad_dot_i, drift(state_i, params)) + dot5(grad_dot_j, drift(state_j, params));
    CbfEvaluation {
        h: len - 2.0 * decomp.radius,
        h_dot: unit.dot(d_dot),
        h_ddot_drift,
        involved: vec![
            InvolvedVehicle {
                grad_h: grad_i,
                grad_h_dot: grad_dot_i,
            },
            InvolvedVehicle {
                grad_h: grad_j,
                grad_h_dot: grad_dot_j,
            },
        ],
        active: ActiveSelector::Pair {
            circle_a: a,
            circle_b: b,
        },
    }
}

/// ψ = Δt·ḣ + ½Δt²·ḧ(u) + γ·h + R_T.
pub fn evaluate_psi(
    eval: &CbfEvaluation,
    inputs: &[ControlInput],
    config: &CbfConfig,
) -> Result<f64> {
    let h_ddot = eval.h_ddot(inputs)?;
    let dt = config.dt;
    Ok(dt * eval.h_dot + 0.5 * dt * dt * h_ddot + config.gamma * eval.h + config.remainder.value())
}

/// One agent's view for constraint assembly.
#[derive(Debug, Clone, Copy)]
pub struct AgentGeometry<'a> {
    pub state: VehicleState,
    pub corridor: &'a Corridor,
}

/// Per agent: left road, right road, then one pair constraint per other agent in id order.
pub fn all_constraints(
    agents: &[AgentGeometry<'_>],
    joint_inputs: &[ControlInput],
    decomp: &CircleDecomposition,
    params: &VehicleParams,
    config: &CbfConfig,
) -> Result<Vec<Vec<ConstraintValue>>> {
    let n = agents.len();
    if joint_inputs.len() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            got: joint_inputs.len(),
        });
    }
    let mut out: Vec<Vec<ConstraintValue>> = (0..n).map(|_| Vec::with_capacity(n + 1)).collect();
    for (i, agent) in agents.iter().enumerate() {
        for side in [Side::Left, Side::Right] {
            let evaluation = road_cbf(&agent.state, side, agent.corridor, decomp, params);
            let psi = evaluate_psi(&evaluation, &joint_inputs[i..=i], config)?;
            out[i].push(ConstraintValue {
                source: ConstraintSource::Road(side.into()),
                psi,
                evaluation,
            });
        }
    }
    let mut pairs = vec![None; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let evaluation = vehicle_pair_cbf(&agents[i].state, &agents[j].state, decomp, params);
            let psi = evaluate_psi(&evaluation, &[joint_inputs[i], joint_inputs[j]], config)?;
            pairs[i * n + j] = Some((evaluation, psi));
        }
    }
    for (i, row) in out.iter_mut().enumerate() {
        for j in (0..n).filter(|&j| j != i) {
            let (evaluation, psi) = if i < j {
                pairs[i * n + j].clone().unwrap()
            } else {
                let (e, psi) = pairs[j * n + i].as_ref().unwrap();
                (e.swapped(), *psi)
            };
            row.push(ConstraintValue {
                source: ConstraintSource::Pair(i, j),
                psi,
                evaluation,
            });
        }
    }
    Ok(out)
}
