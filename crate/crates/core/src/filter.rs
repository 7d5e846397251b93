//! Posterior safety filter used as a measuring instrument.
//!
//! Each agent's barrier constraints become half-planes in its own 2-D input with
//! the other agents' inputs frozen at their policy actions. The projection of the
//! policy action onto the feasible polygon is found exactly by active-set
//! enumeration: with two variables an optimal active set has at most two members.

use serde::{Deserialize, Serialize};

use crate::cbf::{ConstraintSource, ConstraintValue};
use crate::dynamics::ControlInput;
use crate::env::{Environment, WorldState};
use crate::error::{Error, Result};

/// `a · u ≥ b`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfPlane {
    pub a: [f64; 2],
    pub b: f64,
    /// `None` for input-box edges.
    pub source: Option<ConstraintSource>,
}

impl HalfPlane {
    pub fn slack(&self, u: [f64; 2]) -> f64 {
        self.a[0] * u[0] + self.a[1] * u[1] - self.b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputBox {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl InputBox {
    pub fn contains(&self, u: [f64; 2], tol: f64) -> bool {
        (0..2).all(|k| u[k] >= self.lo[k] - tol && u[k] <= self.hi[k] + tol)
    }

    fn edges(&self) -> [HalfPlane; 4] {
        [
            HalfPlane {
                a: [1.0, 0.0],
                b: self.lo[0],
                source: None,
            },
            HalfPlane {
                a: [-1.0, 0.0],
                b: -self.hi[0],
                source: None,
            },
            HalfPlane {
                a: [0.0, 1.0],
                b: self.lo[1],
                source: None,
            },
            HalfPlane {
                a: [0.0, -1.0],
                b: -self.hi[1],
                source: None,
            },
        ]
    }

    fn half_range(&self) -> [f64; 2] {
        [
            0.5 * (self.hi[0] - self.lo[0]),
            0.5 * (self.hi[1] - self.lo[1]),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentQp {
    pub constraints: Vec<HalfPlane>,
    pub bounds: InputBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterResult {
    pub u_rl: ControlInput,
    pub u_filtered: ControlInput,
    pub correction: f64,
    /// Correction with each input axis divided by its half-range.
    pub normalized_correction: f64,
    pub feasible: bool,
    pub active_constraints: Vec<ConstraintSource>,
}

/// Slack below which a candidate counts as satisfying a half-plane.
const FEAS_TOL: f64 = 1e-10;
const ACTIVE_TOL: f64 = 1e-8;

/// Half-planes from an agent's constraint values. Since ψ is affine in the
/// agent's input, `a = ∂ψ/∂u` and `b = a·u_rl − ψ(u_rl)` reproduce it exactly.
pub fn half_planes(constraints: &[ConstraintValue], dt: f64, u_rl: ControlInput) -> Vec<HalfPlane> {
    constraints
        .iter()
        .map(|c| {
            let coeffs = c.evaluation.involved[0].input_coeffs();
            let a = [0.5 * dt * dt * coeffs[0], 0.5 * dt * dt * coeffs[1]];
            HalfPlane {
                a,
                b: a[0] * u_rl.u_v + a[1] * u_rl.u_delta - c.psi,
                source: Some(c.source),
            }
        })
        .collect()
}

pub fn assemble_agent_qp(
    env: &Environment,
    world: &WorldState,
    joint_rl_actions: &[ControlInput],
    agent: usize,
) -> Result<AgentQp> {
    let p = env.params();
    let inputs: Vec<ControlInput> = joint_rl_actions.iter().map(|u| p.clamp_input(*u)).collect();
    let all = env.constraints(world, &inputs)?;
    Ok(AgentQp {
        constraints: half_planes(&all[agent], env.cbf_config().dt, inputs[agent]),
        bounds: InputBox {
            lo: [p.a_min, p.steering_rate_min],
            hi: [p.a_max, p.steering_rate_max],
        },
    })
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn project_onto_line(u: [f64; 2], h: &HalfPlane) -> Option<[f64; 2]> {
    let n2 = h.a[0] * h.a[0] + h.a[1] * h.a[1];
    if n2 <= 1e-24 {
        return None;
    }
    let t = (h.b - (h.a[0] * u[0] + h.a[1] * u[1])) / n2;
    Some([u[0] + t * h.a[0], u[1] + t * h.a[1]])
}

/// Solves `p·u = r` and `q·u = s`.
fn intersect(p: [f64; 2], r: f64, q: [f64; 2], s: f64) -> Option<[f64; 2]> {
    let det = p[0] * q[1] - p[1] * q[0];
    let scale = (p[0].hypot(p[1]) * q[0].hypot(q[1])).max(1e-300);
    if det.abs() <= 1e-12 * scale {
        return None;
    }
    Some([(r * q[1] - p[1] * s) / det, (p[0] * s - r * q[0]) / det])
}

fn feasible(u: [f64; 2], planes: &[HalfPlane]) -> bool {
    planes
        .iter()
        .all(|h| h.slack(u) >= -FEAS_TOL * (1.0 + h.b.abs()))
}

/// Point of the box minimizing the largest constraint violation.
fn least_violation(u_rl: [f64; 2], constraints: &[HalfPlane], bounds: &InputBox) -> [f64; 2] {
    let worst = |u: [f64; 2]| {
        constraints
            .iter()
            .map(|h| -h.slack(u))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let edges = bounds.edges();
    let mut candidates = vec![
        [bounds.lo[0], bounds.lo[1]],
        [bounds.lo[0], bounds.hi[1]],
        [bounds.hi[0], bounds.lo[1]],
        [bounds.hi[0], bounds.hi[1]],
    ];
    // Lines of equal violation between two constraints.
    let mut level_lines = Vec::new();
    for (k, hk) in constraints.iter().enumerate() {
        for hl in &constraints[k + 1..] {
            level_lines.push(([hk.a[0] - hl.a[0], hk.a[1] - hl.a[1]], hk.b - hl.b));
        }
    }
    for (p, r) in &level_lines {
        for e in &edges {
            if let Some(u) = intersect(*p, *r, e.a, e.b) {
                candidates.push(u);
            }
        }
    }
    for (i, (p, r)) in level_lines.iter().enumerate() {
        for (q, s) in &level_lines[i + 1..] {
            if let Some(u) = intersect(*p, *r, *q, *s) {
                candidates.push(u);
            }
        }
    }
    candidates
        .into_iter()
        .filter(|u| bounds.contains(*u, 1e-12))
        .map(|u| (worst(u), dist2(u, u_rl), u))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)))
        .map(|(_, _, u)| u)
        .unwrap_or(u_rl)
}

/// Exact Euclidean projection of `u_rl` onto the constraint polygon.
pub fn solve_box_qp(
    u_rl: ControlInput,
    constraints: &[HalfPlane],
    bounds: &InputBox,
) -> FilterResult {
    let u0 = [u_rl.u_v, u_rl.u_delta];
    let mut planes: Vec<HalfPlane> = constraints.to_vec();
    planes.extend(bounds.edges());

    let mut candidates = vec![u0];
    if !feasible(u0, &planes) {
        candidates.extend(planes.iter().filter_map(|h| project_onto_line(u0, h)));
        for (i, p) in planes.iter().enumerate() {
            for q in &planes[i + 1..] {
                candidates.extend(intersect(p.a, p.b, q.a, q.b));
            }
        }
    }
    let best = candidates
        .into_iter()
        .filter(|u| feasible(*u, &planes))
        .map(|u| (dist2(u, u0), u))
        .min_by(|a, b| a.0.total_cmp(&b.0));
    let (u, is_feasible) = match best {
        Some((_, u)) => (u, true),
        None => (least_violation(u0, constraints, bounds), false),
    };
    let half = bounds.half_range();
    let du = [u[0] - u0[0], u[1] - u0[1]];
    FilterResult {
        u_rl,
        u_filtered: ControlInput::new(u[0], u[1]),
        correction: du[0].hypot(du[1]),
        normalized_correction: (du[0] / half[0]).hypot(du[1] / half[1]),
        feasible: is_feasible,
        active_constraints: constraints
            .iter()
            .filter(|h| h.slack(u).abs() <= ACTIVE_TOL * (1.0 + h.b.abs()))
            .filter_map(|h| h.source)
            .collect(),
    }
}

/// Filter result of every agent at the current state.
pub fn filter_all(
    env: &Environment,
    world: &WorldState,
    joint_rl_actions: &[ControlInput],
) -> Result<Vec<FilterResult>> {
    let p = env.params();
    let inputs: Vec<ControlInput> = joint_rl_actions.iter().map(|u| p.clamp_input(*u)).collect();
    let all = env.constraints(world, &inputs)?;
    let bounds = InputBox {
        lo: [p.a_min, p.steering_rate_min],
        hi: [p.a_max, p.steering_rate_max],
    };
    Ok(all
        .iter()
        .zip(&inputs)
        .map(|(c, u)| solve_box_qp(*u, &half_planes(c, env.cbf_config().dt, *u), &bounds))
        .collect())
}

/// Fraction of agent-steps whose normalized correction exceeds `epsilon`.
pub fn activation_degree(results: &[FilterResult], epsilon: f64) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::InvalidArgument(
            "activation degree of an empty trajectory".into(),
        ));
    }
    let active = results
        .iter()
        .filter(|r| r.normalized_correction > epsilon)
        .count();
    Ok(active as f64 / results.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box() -> InputBox {
        InputBox {
            lo: [-5.0, -1.5],
            hi: [5.0, 1.5],
        }
    }

    fn plane(a: [f64; 2], b: f64) -> HalfPlane {
        HalfPlane {
            a,
            b,
            source: Some(ConstraintSource::Pair(0, 1)),
        }
    }

    #[test]
    fn feasible_action_is_untouched() {
        let r = solve_box_qp(
            ControlInput::new(1.0, 0.5),
            &[plane([1.0, 0.0], -2.0)],
            &unit_box(),
        );
        assert!(r.feasible);
        assert_eq!(r.correction, 0.0);
        assert_eq!(r.u_filtered, ControlInput::new(1.0, 0.5));
    }

    #[test]
    fn single_half_plane_projection() {
        let h = plane([1.0, 1.0], 1.0);
        let r = solve_box_qp(ControlInput::new(0.0, 0.0), &[h], &unit_box());
        assert!(r.feasible);
        assert!(
            (r.u_filtered.u_v - 0.5).abs() < 1e-12 && (r.u_filtered.u_delta - 0.5).abs() < 1e-12
        );
        assert_eq!(r.active_constraints, vec![ConstraintSource::Pair(0, 1)]);
    }

    #[test]
    fn box_corner_and_half_plane() {
        // Projection onto u_v ≥ 6 is outside the box: infeasible.
        let r = solve_box_qp(
            ControlInput::new(0.0, 0.0),
            &[plane([1.0, 0.0], 6.0)],
            &unit_box(),
        );
        assert!(!r.feasible);
        assert!((r.u_filtered.u_v - 5.0).abs() < 1e-12);
        // Two constraints meeting at a corner of the feasible polygon.
        let r = solve_box_qp(
            ControlInput::new(0.0, 0.0),
            &[plane([1.0, 0.0], 1.0), plane([0.0, 1.0], 1.0)],
            &unit_box(),
        );
        assert!(
            (r.u_filtered.u_v - 1.0).abs() < 1e-12 && (r.u_filtered.u_delta - 1.0).abs() < 1e-12
        );
        assert_eq!(r.active_constraints.len(), 2);
    }

    #[test]
    fn degenerate_constraint_without_input_dependence() {
        let satisfied = plane([0.0, 0.0], -1.0);
        assert!(solve_box_qp(ControlInput::default(), &[satisfied], &unit_box()).feasible);
        let violated = plane([0.0, 0.0], 1.0);
        assert!(!solve_box_qp(ControlInput::default(), &[violated], &unit_box()).feasible);
    }

    #[test]
    fn activation_counting() {
        let mk = |c: f64| FilterResult {
            u_rl: ControlInput::default(),
            u_filtered: ControlInput::default(),
            correction: c,
            normalized_correction: c,
            feasible: true,
            active_constraints: vec![],
        };
        let mut v: Vec<FilterResult> = (0..100).map(|_| mk(0.0)).collect();
        assert_eq!(activation_degree(&v, 1e-6).unwrap(), 0.0);
        v[3] = mk(0.5);
        v[40] = mk(1e-3);
        assert!((activation_degree(&v, 1e-6).unwrap() - 0.02).abs() < 1e-15);
        assert!(activation_degree(&[], 1e-6).is_err());
    }
}
