//! Per-agent step rewards: the barrier-informed safety term, the two heuristic
//! baselines (distance and time-to-collision), and the shared forward-progress term.

use serde::{Deserialize, Serialize};

use crate::cbf::{ConstraintSource, ConstraintValue, SideTag};
use crate::dynamics::{VehicleParams, VehicleState};
use crate::error::{Error, Result};
use crate::geometry::{circle_centers, CircleDecomposition, Point2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMethod {
    Cbf,
    Distance,
    Ttc,
}

impl RewardMethod {
    pub const ALL: [RewardMethod; 3] =
        [RewardMethod::Cbf, RewardMethod::Distance, RewardMethod::Ttc];

    pub fn name(self) -> &'static str {
        match self {
            RewardMethod::Cbf => "cbf",
            RewardMethod::Distance => "distance",
            RewardMethod::Ttc => "ttc",
        }
    }
}

impl std::str::FromStr for RewardMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cbf" => Ok(RewardMethod::Cbf),
            "distance" => Ok(RewardMethod::Distance),
            "ttc" => Ok(RewardMethod::Ttc),
            other => Err(Error::Config(format!("unknown reward method '{other}'"))),
        }
    }
}

impl std::fmt::Display for RewardMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub method: RewardMethod,
    pub psi_th: f64,
    pub d_road_th: f64,
    pub d_veh_th: f64,
    pub t_ttc_th: f64,
    pub w_prog: f64,
    /// Weights of the short-term reference points, nearest first.
    pub weights: Vec<f64>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            method: RewardMethod::Cbf,
            psi_th: 0.1,
            d_road_th: 0.005,
            d_veh_th: 0.1,
            t_ttc_th: 4.0,
            w_prog: 0.1,
            weights: vec![3.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0],
        }
    }
}

impl RewardConfig {
    pub fn n_ref_points(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("psi_th", self.psi_th),
            ("d_road_th", self.d_road_th),
            ("d_veh_th", self.d_veh_th),
            ("t_ttc_th", self.t_ttc_th),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("reward.{name} must be positive")));
            }
        }
        if !(self.w_prog >= 0.0) {
            return Err(Error::Config("reward.w_prog must be non-negative".into()));
        }
        if self.weights.is_empty() || self.weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Config(
                "reward.weights must be non-empty and non-negative".into(),
            ));
        }
        if (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("reward.weights must sum to 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourcePenalty {
    pub source: ConstraintSource,
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub safety: f64,
    pub progress: f64,
    pub total: f64,
    pub per_source: Vec<SourcePenalty>,
}

/// Linear clipping of a constraint value: 0 when satisfied, −1 once the
/// violation reaches `psi_th`.
pub fn clip_rho(psi: f64, psi_th: f64) -> Result<f64> {
    if !(psi_th > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "psi_th must be positive, got {psi_th}"
        )));
    }
    Ok(-(-psi / psi_th).max(0.0).min(1.0))
}

/// −min{max{z, 0}, 1}
pub fn rho_prime(z: f64) -> f64 {
    -z.max(0.0).min(1.0)
}

fn mean_or_zero(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Safety term of the barrier-informed reward with its per-source penalties.
pub fn cbf_reward(
    agent: usize,
    n_agents: usize,
    constraints: &[ConstraintValue],
    psi_th: f64,
) -> Result<(f64, Vec<SourcePenalty>)> {
    let find = |source: ConstraintSource| {
        constraints
            .iter()
            .find(|c| c.source == source)
            .ok_or_else(|| Error::MissingConstraint {
                agent,
                source_name: source.to_string(),
            })
    };
    let mut per_source = Vec::with_capacity(n_agents + 1);
    let mut road = 0.0;
    for side in [SideTag::L, SideTag::R] {
        let c = find(ConstraintSource::Road(side))?;
        let penalty = clip_rho(c.psi, psi_th)?;
        road += penalty;
        per_source.push(SourcePenalty {
            source: c.source,
            penalty,
        });
    }
    let mut pair_penalties = Vec::with_capacity(n_agents.saturating_sub(1));
    for j in (0..n_agents).filter(|&j| j != agent) {
        let c = find(ConstraintSource::Pair(agent, j))?;
        let penalty = clip_rho(c.psi, psi_th)?;
        pair_penalties.push(penalty);
        per_source.push(SourcePenalty {
            source: c.source,
            penalty,
        });
    }
    let veh = mean_or_zero(pair_penalties.into_iter());
    Ok(((veh + road) / 3.0, per_source))
}

/// Weighted projections of the one-step movement onto directions toward the
/// reference points, normalized by the largest possible one-step movement.
pub fn progress_reward(
    p_prev: Point2,
    p_now: Point2,
    ref_points: &[Point2],
    config: &RewardConfig,
    v_max: f64,
    dt: f64,
) -> Result<f64> {
    if ref_points.len() != config.weights.len() {
        return Err(Error::ShapeMismatch {
            expected: config.weights.len(),
            got: ref_points.len(),
        });
    }
    let step = p_now - p_prev;
    let weighted: f64 = ref_points
        .iter()
        .zip(&config.weights)
        .map(|(q, w)| {
            let dir = *q - p_prev;
            let len = dir.norm();
            if len <= 1e-9 {
                0.0
            } else {
                w * step.dot(dir) / len
            }
        })
        .sum();
    Ok(config.w_prog * weighted / (v_max * dt))
}

fn road_distance_terms(road: [f64; 2], config: &RewardConfig) -> Result<[f64; 2]> {
    if road.iter().any(|&d| !(d >= 0.0)) {
        return Err(Error::InvalidArgument(
            "road distances must be non-negative".into(),
        ));
    }
    Ok(road.map(|d| rho_prime((config.d_road_th - d) / config.d_road_th)))
}

/// Distance baseline: `road` is (left, right), `vehicles` one distance per other agent.
pub fn distance_baseline_reward(
    road: [f64; 2],
    vehicles: &[f64],
    config: &RewardConfig,
) -> Result<f64> {
    let [l, r] = road_distance_terms(road, config)?;
    if vehicles.iter().any(|&d| !(d >= 0.0)) {
        return Err(Error::InvalidArgument(
            "vehicle distances must be non-negative".into(),
        ));
    }
    let veh = mean_or_zero(
        vehicles
            .iter()
            .map(|d| rho_prime((config.d_veh_th - d) / config.d_veh_th)),
    );
    Ok((l + r + veh) / 3.0)
}

/// TTC baseline: road terms as in the distance baseline, vehicle term from TTCs.
pub fn ttc_baseline_reward(road: [f64; 2], ttcs: &[f64], config: &RewardConfig) -> Result<f64> {
    let [l, r] = road_distance_terms(road, config)?;
    let veh = mean_or_zero(ttcs.iter().map(|&t| {
        if t.is_infinite() {
            0.0
        } else {
            rho_prime((config.t_ttc_th - t) / config.t_ttc_th)
        }
    }));
    Ok((l + r + veh) / 3.0)
}

/// Planar velocity of the vehicle body (heading plus slip).
pub fn planar_velocity(state: &VehicleState, params: &VehicleParams) -> Point2 {
    let beta = (state.delta.tan() * params.slip_ratio()).atan();
    Point2::from_angle(state.theta + beta) * state.v
}

/// First time at which any circle pair touches when both vehicles keep their
/// current planar velocity; `+∞` if they never do.
pub fn ttc(
    state_i: &VehicleState,
    state_j: &VehicleState,
    decomp: &CircleDecomposition,
    params: &VehicleParams,
) -> f64 {
    let dv = planar_velocity(state_i, params) - planar_velocity(state_j, params);
    let reach = 2.0 * decomp.radius;
    let a = dv.dot(dv);
    let ci = circle_centers(state_i, decomp);
    let cj = circle_centers(state_j, decomp);
    let mut best = f64::INFINITY;
    for pa in &ci {
        for pb in &cj {
            let dc = *pa - *pb;
            let c = dc.dot(dc) - reach * reach;
            if c <= 0.0 {
                return 0.0;
            }
            if a <= 0.0 {
                continue;
            }
            let b = dc.dot(dv);
            let disc = b * b - a * c;
            if disc < 0.0 || b >= 0.0 {
                continue;
            }
            let t = (-b - disc.sqrt()) / a;
            best = best.min(t);
        }
    }
    best
}

/// Inputs each method needs to form its safety term.
#[derive(Debug, Clone, Copy)]
pub enum SafetySignals<'a> {
    Cbf(&'a [ConstraintValue]),
    Distance { road: [f64; 2], vehicles: &'a [f64] },
    Ttc { road: [f64; 2], ttcs: &'a [f64] },
}

/// Safety term plus progress term for one agent.
pub fn step_reward(
    agent: usize,
    n_agents: usize,
    signals: SafetySignals<'_>,
    progress: f64,
    config: &RewardConfig,
) -> Result<RewardBreakdown> {
    let (safety, per_source) = match signals {
        SafetySignals::Cbf(constraints) => cbf_reward(agent, n_agents, constraints, config.psi_th)?,
        SafetySignals::Distance { road, vehicles } => (
            distance_baseline_reward(road, vehicles, config)?,
            Vec::new(),
        ),
        SafetySignals::Ttc { road, ttcs } => (ttc_baseline_reward(road, ttcs, config)?, Vec::new()),
    };
    Ok(RewardBreakdown {
        safety,
        progress,
        total: safety + progress,
        per_source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cbf::{ActiveSelector, CbfEvaluation};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cv(source: ConstraintSource, psi: f64) -> ConstraintValue {
        ConstraintValue {
            source,
            psi,
            evaluation: CbfEvaluation {
                h: 0.0,
                h_dot: 0.0,
                h_ddot_drift: 0.0,
                involved: vec![],
                active: ActiveSelector::Pair {
                    circle_a: 0,
                    circle_b: 0,
                },
            },
        }
    }

    #[test]
    fn clip_rho_examples() {
        assert_eq!(clip_rho(0.05, 0.1).unwrap(), 0.0);
        assert_eq!(clip_rho(-0.1, 0.1).unwrap(), -1.0);
        assert_abs_diff_eq!(clip_rho(-0.05, 0.1).unwrap(), -0.5, epsilon = 1e-15);
        assert!(clip_rho(0.0, 0.0).is_err());
    }

    #[test]
    fn cbf_reward_examples() {
        let road = |l, r| {
            vec![
                cv(ConstraintSource::Road(SideTag::L), l),
                cv(ConstraintSource::Road(SideTag::R), r),
            ]
        };
        let mut c = road(0.1, 0.2);
        c.push(cv(ConstraintSource::Pair(0, 1), 0.3));
        assert_eq!(cbf_reward(0, 2, &c, 0.1).unwrap().0, 0.0);

        let mut c = road(-1.0, -0.5);
        c.push(cv(ConstraintSource::Pair(0, 1), 0.3));
        assert_abs_diff_eq!(
            cbf_reward(0, 2, &c, 0.1).unwrap().0,
            -2.0 / 3.0,
            epsilon = 1e-15
        );

        let mut c = road(0.0, 0.0);
        c.push(cv(ConstraintSource::Pair(0, 1), -0.5));
        c.push(cv(ConstraintSource::Pair(0, 2), -0.04));
        // Pair penalties −1 and −0.4 average to −0.7.
        assert_abs_diff_eq!(
            cbf_reward(0, 3, &c, 0.1).unwrap().0,
            -0.7 / 3.0,
            epsilon = 1e-12
        );

        // Single agent: empty pair average.
        assert_eq!(cbf_reward(0, 1, &road(0.0, 0.0), 0.1).unwrap().0, 0.0);
        assert!(matches!(
            cbf_reward(0, 2, &road(0.0, 0.0), 0.1),
            Err(Error::MissingConstraint { .. })
        ));
    }

    #[test]
    fn progress_reward_examples() {
        let cfg = RewardConfig::default();
        let p = Point2::new(0.0, 0.0);
        let refs = [
            Point2::new(0.5, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.5, 0.0),
        ];
        assert_eq!(progress_reward(p, p, &refs, &cfg, 1.0, 0.1).unwrap(), 0.0);
        assert_abs_diff_eq!(
            progress_reward(p, Point2::new(0.1, 0.0), &refs, &cfg, 1.0, 0.1).unwrap(),
            0.1,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            progress_reward(p, Point2::new(0.0, 0.1), &refs, &cfg, 1.0, 0.1).unwrap(),
            0.0
        );
        // A reference point on top of the previous position contributes nothing.
        let refs = [p, Point2::new(1.0, 0.0), Point2::new(1.5, 0.0)];
        assert_abs_diff_eq!(
            progress_reward(p, Point2::new(0.1, 0.0), &refs, &cfg, 1.0, 0.1).unwrap(),
            0.1 * 0.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn distance_baseline_examples() {
        let cfg = RewardConfig::default();
        assert_eq!(
            distance_baseline_reward([0.1, 0.1], &[1.0, 2.0], &cfg).unwrap(),
            0.0
        );
        assert_abs_diff_eq!(
            distance_baseline_reward([0.0, 0.0], &[5.0], &cfg).unwrap(),
            -2.0 / 3.0
        );
        assert_abs_diff_eq!(
            distance_baseline_reward([1.0, 1.0], &[cfg.d_veh_th / 2.0], &cfg).unwrap(),
            -1.0 / 6.0,
            epsilon = 1e-15
        );
        assert!(distance_baseline_reward([-0.1, 0.0], &[], &cfg).is_err());
    }

    #[test]
    fn ttc_baseline_examples() {
        let cfg = RewardConfig::default();
        assert_eq!(
            ttc_baseline_reward([1.0, 1.0], &[f64::INFINITY; 3], &cfg).unwrap(),
            0.0
        );
        assert_abs_diff_eq!(
            ttc_baseline_reward([1.0, 1.0], &[0.0], &cfg).unwrap(),
            -1.0 / 3.0
        );
        assert_abs_diff_eq!(
            ttc_baseline_reward([1.0, 1.0], &[cfg.t_ttc_th / 2.0], &cfg).unwrap(),
            -1.0 / 6.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn ttc_examples() {
        let p = VehicleParams::default();
        let d = CircleDecomposition {
            offsets: vec![0.0],
            radius: 0.06,
        };
        let a = VehicleState::new(0.0, 0.0, 0.0, 1.0, 0.0);
        let b = VehicleState::new(1.0, 0.0, std::f64::consts::PI, 1.0, 0.0);
        // Surface gap 0.88 closing at 2 m/s.
        assert_abs_diff_eq!(ttc(&a, &b, &d, &p), 0.44, epsilon = 1e-12);
        let a_away = VehicleState {
            theta: std::f64::consts::PI,
            ..a
        };
        let b_away = VehicleState { theta: 0.0, ..b };
        assert!(ttc(&a_away, &b_away, &d, &p).is_infinite());
        let overlap = VehicleState::new(0.05, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(ttc(&a, &overlap, &d, &p), 0.0);
    }

    #[test]
    fn step_reward_composition() {
        let cfg = RewardConfig::default();
        let mut c = vec![
            cv(ConstraintSource::Road(SideTag::L), 0.1),
            cv(ConstraintSource::Road(SideTag::R), 0.1),
        ];
        let r = step_reward(0, 1, SafetySignals::Cbf(&c), 0.0, &cfg).unwrap();
        assert_eq!(r.total, 0.0);
        let r = step_reward(0, 1, SafetySignals::Cbf(&c), cfg.w_prog, &cfg).unwrap();
        assert_abs_diff_eq!(r.total, cfg.w_prog);
        c.push(cv(ConstraintSource::Pair(0, 1), -1.0));
        let r = step_reward(0, 2, SafetySignals::Cbf(&c), cfg.w_prog, &cfg).unwrap();
        assert_abs_diff_eq!(r.total, cfg.w_prog - 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(r.total, r.safety + r.progress);
    }

    proptest! {
        #[test]
        fn clip_rho_is_bounded_and_monotone(a in -1.0f64..1.0, b in -1.0f64..1.0, th in 0.01f64..0.5) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let rl = clip_rho(lo, th).unwrap();
            let rh = clip_rho(hi, th).unwrap();
            prop_assert!((-1.0..=0.0).contains(&rl));
            prop_assert!(rl <= rh);
            prop_assert!(rho_prime(hi) <= rho_prime(lo));
        }

        #[test]
        fn cbf_reward_is_scale_invariant(psis in proptest::collection::vec(-0.5f64..0.5, 5), scale in 0.1f64..10.0) {
            let build = |s: f64| {
                let mut c = vec![
                    cv(ConstraintSource::Road(SideTag::L), psis[0] * s),
                    cv(ConstraintSource::Road(SideTag::R), psis[1] * s),
                ];
                for j in 1..4 {
                    c.push(cv(ConstraintSource::Pair(0, j), psis[j + 1] * s));
                }
                c
            };
            let r1 = cbf_reward(0, 4, &build(1.0), 0.1).unwrap().0;
            let r2 = cbf_reward(0, 4, &build(scale), 0.1 * scale).unwrap().0;
            prop_assert!((r1 - r2).abs() < 1e-12);
            prop_assert!((-1.0..=0.0).contains(&r1));
        }

        #[test]
        fn progress_is_bounded(dx in -1.0f64..1.0, dy in -1.0f64..1.0, qx in -3.0f64..3.0, qy in -3.0f64..3.0) {
            let cfg = RewardConfig::default();
            let step = Point2::new(dx, dy);
            let step = if step.norm() > 0.1 { step * (0.1 / step.norm()) } else { step };
            let refs = [Point2::new(qx, qy), Point2::new(qx + 0.5, qy), Point2::new(qx, qy + 0.5)];
            let r = progress_reward(Point2::default(), step, &refs, &cfg, 1.0, 0.1).unwrap();
            prop_assert!(r.abs() <= cfg.w_prog + 1e-12);
        }
    }
}
