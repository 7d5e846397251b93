//! Multi-agent intersection environment.
//!
//! A step computes rewards on the pre-transition state with the joint action,
//! integrates every vehicle, detects collisions on the exact rectangles and exits
//! by path completion inside the exit region, respawns the affected vehicles and
//! logs one event per cause.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cbf::{
    all_constraints, road_cbf, vehicle_pair_cbf, AgentGeometry, CbfConfig, CbfSettings,
    ConstraintValue,
};
use crate::collision::{polyline_hits_rectangle, rectangles_overlap};
use crate::dynamics::{step as integrate, wrap_angle, ControlInput, VehicleParams, VehicleState};
use crate::error::{Error, Result};
use crate::geometry::{
    build_intersection, decompose_rectangle, rectangle_corners, sample_reference_points,
    CircleDecomposition, IntersectionConfig, IntersectionMap, Point2, Side,
};
use crate::rewards::{
    progress_reward, step_reward, ttc, RewardBreakdown, RewardConfig, RewardMethod, SafetySignals,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub n_agents: usize,
    pub dt: f64,
    pub n_circles: usize,
    pub n_ref_points: usize,
    /// Reference-point spacing in units of `v_max · dt`.
    pub ref_lookahead: f64,
    /// Distance between spawn slots in vehicle lengths.
    pub spawn_spacing: f64,
    /// Minimum circle-surface gap to every other vehicle at spawn.
    pub spawn_clearance: f64,
    pub max_spawn_attempts: usize,
    /// Training episode length in steps.
    pub episode_horizon: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_agents: 4,
            dt: 0.1,
            n_circles: 3,
            n_ref_points: 3,
            ref_lookahead: 5.0,
            spawn_spacing: 1.5,
            spawn_clearance: 0.05,
            max_spawn_attempts: 100,
            episode_horizon: 600,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 {
            return Err(Error::Config("env.n_agents must be at least 1".into()));
        }
        if !(self.dt > 0.0) || !(self.ref_lookahead > 0.0) || !(self.spawn_spacing >= 1.0) {
            return Err(Error::Config(
                "env: need dt > 0, ref_lookahead > 0, spawn_spacing >= 1".into(),
            ));
        }
        if self.n_circles == 0
            || self.n_ref_points == 0
            || self.max_spawn_attempts == 0
            || self.episode_horizon == 0
        {
            return Err(Error::Config("env: counts must be positive".into()));
        }
        if !(self.spawn_clearance >= 0.0) {
            return Err(Error::Config(
                "env.spawn_clearance must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Exit,
    CollisionVehicle,
    CollisionRoad,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeEvent {
    pub kind: EventKind,
    pub step: usize,
    pub agents: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub state: VehicleState,
    /// Index into the map's reference paths.
    pub path: usize,
    pub accel: f64,
    pub jerk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub vehicles: Vec<Vehicle>,
    pub step_index: usize,
    pub rng: ChaCha8Rng,
    pub event_log: Vec<EpisodeEvent>,
}

impl WorldState {
    pub fn states(&self) -> Vec<VehicleState> {
        self.vehicles.iter().map(|v| v.state).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub rewards: Vec<RewardBreakdown>,
    pub events: Vec<EpisodeEvent>,
    /// Agents whose vehicle ended its trip this step and was placed at an entry.
    pub respawned: Vec<bool>,
    /// Realized (acceleration, jerk) of the transition, before any respawn.
    pub comfort: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct Environment {
    config: EnvConfig,
    params: VehicleParams,
    cbf: CbfConfig,
    map: Arc<IntersectionMap>,
    decomp: CircleDecomposition,
    /// Arclengths of the spawn slots along any entry path.
    slots: Vec<f64>,
}

impl Environment {
    pub fn new(
        map_config: &IntersectionConfig,
        params: VehicleParams,
        config: EnvConfig,
        cbf: CbfSettings,
    ) -> Result<Self> {
        config.validate()?;
        params.validate()?;
        let cbf = cbf.with_dt(config.dt);
        cbf.validate()?;
        let map = build_intersection(map_config)?;
        let decomp = decompose_rectangle(params.body_length, params.body_width, config.n_circles)?;
        let len = params.body_length;
        let mut slots = Vec::new();
        let mut s = 0.5 * len;
        while s + 0.5 * len <= map_config.entry_length + 1e-12 {
            slots.push(s);
            s += config.spawn_spacing * len;
        }
        if slots.is_empty() {
            return Err(Error::Config(
                "entry regions are shorter than a vehicle".into(),
            ));
        }
        // Left turns start on the inner lane, the others on the outer lane.
        let capacity = 4 * 2 * slots.len();
        if config.n_agents > capacity {
            return Err(Error::Config(format!(
                "{} agents exceed the spawn capacity {capacity}",
                config.n_agents
            )));
        }
        Ok(Self {
            config,
            params,
            cbf,
            map: Arc::new(map),
            decomp,
            slots,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn params(&self) -> &VehicleParams {
        &self.params
    }

    pub fn cbf_config(&self) -> &CbfConfig {
        &self.cbf
    }

    pub fn map(&self) -> &IntersectionMap {
        &self.map
    }

    pub fn decomposition(&self) -> &CircleDecomposition {
        &self.decomp
    }

    pub fn n_agents(&self) -> usize {
        self.config.n_agents
    }

    pub fn observation_len(&self) -> usize {
        3 + 2 * self.config.n_ref_points + 4 * (self.config.n_agents - 1)
    }

    fn ref_spacing(&self) -> f64 {
        self.params.v_max * self.config.dt * self.config.ref_lookahead
    }

    fn clear_of(&self, candidate: &VehicleState, others: &[VehicleState]) -> bool {
        let corners = rectangle_corners(candidate, self.params.body_length, self.params.body_width);
        others.iter().all(|o| {
            let oc = rectangle_corners(o, self.params.body_length, self.params.body_width);
            !rectangles_overlap(&corners, &oc)
                && vehicle_pair_cbf(candidate, o, &self.decomp, &self.params).h
                    > self.config.spawn_clearance
        })
    }

    fn spawn(
        &self,
        rng: &mut ChaCha8Rng,
        agent: usize,
        others: &[VehicleState],
    ) -> Result<Vehicle> {
        for _ in 0..self.config.max_spawn_attempts {
            let entry = rng.random_range(0..4usize);
            let maneuver = rng.random_range(0..3usize);
            let slot = self.slots[rng.random_range(0..self.slots.len())];
            let v = rng.random_range(0.0..=self.params.v_max);
            let path_index = 3 * entry + maneuver;
            let path = &self.map.reference_paths[path_index];
            let p = path.point_at(slot);
            let state = VehicleState::new(p.x, p.y, path.heading_at(slot), v, 0.0);
            if self.clear_of(&state, others) {
                return Ok(Vehicle {
                    state,
                    path: path_index,
                    accel: 0.0,
                    jerk: 0.0,
                });
            }
        }
        Err(Error::SpawnFailed {
            agent,
            attempts: self.config.max_spawn_attempts,
        })
    }

    pub fn reset(&self, seed: u64) -> Result<WorldState> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vehicles: Vec<Vehicle> = Vec::with_capacity(self.config.n_agents);
        for agent in 0..self.config.n_agents {
            let placed: Vec<VehicleState> = vehicles.iter().map(|v| v.state).collect();
            vehicles.push(self.spawn(&mut rng, agent, &placed)?);
        }
        Ok(WorldState {
            vehicles,
            step_index: 0,
            rng,
            event_log: Vec::new(),
        })
    }

    /// Barrier constraints of every agent under the joint input.
    pub fn constraints(
        &self,
        world: &WorldState,
        joint_inputs: &[ControlInput],
    ) -> Result<Vec<Vec<ConstraintValue>>> {
        let agents: Vec<AgentGeometry<'_>> = world
            .vehicles
            .iter()
            .map(|v| AgentGeometry {
                state: v.state,
                corridor: &self.map.corridors[v.path],
            })
            .collect();
        all_constraints(&agents, joint_inputs, &self.decomp, &self.params, &self.cbf)
    }

    /// Circle-surface distance of an agent to its left and right road boundaries, clamped at 0.
    pub fn road_distances(&self, world: &WorldState, agent: usize) -> [f64; 2] {
        let v = &world.vehicles[agent];
        let corridor = &self.map.corridors[v.path];
        [Side::Left, Side::Right].map(|side| {
            road_cbf(&v.state, side, corridor, &self.decomp, &self.params)
                .h
                .max(0.0)
        })
    }

    /// Safety terms of every agent for the configured reward method.
    fn safety_terms(
        &self,
        world: &WorldState,
        inputs: &[ControlInput],
        cfg: &RewardConfig,
        progress: &[f64],
    ) -> Result<Vec<RewardBreakdown>> {
        let n = self.n_agents();
        match cfg.method {
            RewardMethod::Cbf => {
                let constraints = self.constraints(world, inputs)?;
                (0..n)
                    .map(|i| {
                        step_reward(i, n, SafetySignals::Cbf(&constraints[i]), progress[i], cfg)
                    })
                    .collect()
            }
            RewardMethod::Distance | RewardMethod::Ttc => (0..n)
                .map(|i| {
                    let road = self.road_distances(world, i);
                    let si = &world.vehicles[i].state;
                    let others = (0..n).filter(|&j| j != i).map(|j| &world.vehicles[j].state);
                    if cfg.method == RewardMethod::Distance {
                        let d: Vec<f64> = others
                            .map(|sj| {
                                vehicle_pair_cbf(si, sj, &self.decomp, &self.params)
                                    .h
                                    .max(0.0)
                            })
                            .collect();
                        step_reward(
                            i,
                            n,
                            SafetySignals::Distance { road, vehicles: &d },
                            progress[i],
                            cfg,
                        )
                    } else {
                        let t: Vec<f64> = others
                            .map(|sj| ttc(si, sj, &self.decomp, &self.params))
                            .collect();
                        step_reward(
                            i,
                            n,
                            SafetySignals::Ttc { road, ttcs: &t },
                            progress[i],
                            cfg,
                        )
                    }
                })
                .collect(),
        }
    }

    pub fn step(
        &self,
        world: &mut WorldState,
        actions: &[ControlInput],
        reward_cfg: &RewardConfig,
    ) -> Result<StepResult> {
        let n = self.n_agents();
        if actions.len() != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                got: actions.len(),
            });
        }
        if reward_cfg.n_ref_points() != self.config.n_ref_points {
            return Err(Error::Config(format!(
                "reward weights ({}) do not match env.n_ref_points ({})",
                reward_cfg.n_ref_points(),
                self.config.n_ref_points
            )));
        }
        let inputs: Vec<ControlInput> = actions
            .iter()
            .map(|u| self.params.clamp_input(*u))
            .collect();
        let dt = self.config.dt;

        let prev: Vec<VehicleState> = world.states();
        let refs: Vec<Vec<Point2>> = world
            .vehicles
            .iter()
            .map(|v| {
                sample_reference_points(
                    &self.map.reference_paths[v.path],
                    v.state.position(),
                    self.config.n_ref_points,
                    self.ref_spacing(),
                )
            })
            .collect();

        // Rewards see the pre-transition state; progress is filled in after integration.
        let mut rewards = self.safety_terms(world, &inputs, reward_cfg, &vec![0.0; n])?;
        for (v, u) in world.vehicles.iter_mut().zip(&inputs) {
            v.state = integrate(&v.state, u, &self.params, dt);
        }
        for (i, r) in rewards.iter_mut().enumerate() {
            r.progress = progress_reward(
                prev[i].position(),
                world.vehicles[i].state.position(),
                &refs[i],
                reward_cfg,
                self.params.v_max,
                dt,
            )?;
            r.total = r.safety + r.progress;
        }
        let post: Vec<VehicleState> = world.states();

        let step = world.step_index;
        let mut events = Vec::new();
        let mut ended = vec![false; n];
        let corners: Vec<[Point2; 4]> = post
            .iter()
            .map(|s| rectangle_corners(s, self.params.body_length, self.params.body_width))
            .collect();
        for i in 0..n {
            for j in i + 1..n {
                if rectangles_overlap(&corners[i], &corners[j]) {
                    events.push(EpisodeEvent {
                        kind: EventKind::CollisionVehicle,
                        step,
                        agents: vec![i, j],
                    });
                    ended[i] = true;
                    ended[j] = true;
                }
            }
        }
        for i in 0..n {
            if !ended[i] && self.hits_road(&post[i], world.vehicles[i].path) {
                events.push(EpisodeEvent {
                    kind: EventKind::CollisionRoad,
                    step,
                    agents: vec![i],
                });
                ended[i] = true;
            }
        }
        for i in 0..n {
            if !ended[i] && self.has_exited(&post[i], world.vehicles[i].path) {
                events.push(EpisodeEvent {
                    kind: EventKind::Exit,
                    step,
                    agents: vec![i],
                });
                ended[i] = true;
            }
        }

        let mut comfort = Vec::with_capacity(n);
        for (v, p) in world.vehicles.iter_mut().zip(&prev) {
            let a = (v.state.v - p.v) / dt;
            v.jerk = (a - v.accel) / dt;
            v.accel = a;
            comfort.push((v.accel, v.jerk));
        }

        for agent in (0..n).filter(|&i| ended[i]) {
            let others: Vec<VehicleState> = (0..n)
                .filter(|&j| j != agent && (!ended[j] || j < agent))
                .map(|j| world.vehicles[j].state)
                .collect();
            let fresh = self.spawn(&mut world.rng, agent, &others)?;
            world.vehicles[agent] = fresh;
        }

        world.event_log.extend(events.iter().cloned());
        world.step_index += 1;
        Ok(StepResult {
            rewards,
            events,
            respawned: ended,
            comfort,
        })
    }

    /// Any rectangle edge meets a boundary segment of the vehicle's corridor.
    pub fn hits_road(&self, state: &VehicleState, path: usize) -> bool {
        let corners = rectangle_corners(state, self.params.body_length, self.params.body_width);
        let corridor = &self.map.corridors[path];
        polyline_hits_rectangle(&corridor.left, &corners)
            || polyline_hits_rectangle(&corridor.right, &corners)
    }

    /// Path completed and the vehicle is inside the exit region of its path.
    pub fn has_exited(&self, state: &VehicleState, path: usize) -> bool {
        let rp = &self.map.reference_paths[path];
        let p = state.position();
        rp.project(p).arclength >= rp.length() - 1e-9
            && self.map.exit_regions[rp.exit.index()].contains(p)
    }

    pub fn observe(&self, world: &WorldState, agent: usize) -> Vec<f64> {
        let mut obs = Vec::with_capacity(self.observation_len());
        let ego = &world.vehicles[agent];
        let s = ego.state;
        let path = &self.map.reference_paths[ego.path];
        let proj = path.project(s.position());
        let path_heading = proj.tangent.y.atan2(proj.tangent.x);
        obs.extend([s.v, s.delta, wrap_angle(s.theta - path_heading)]);
        for q in sample_reference_points(
            path,
            s.position(),
            self.config.n_ref_points,
            self.ref_spacing(),
        ) {
            let r = (q - s.position()).to_frame(s.theta);
            obs.extend([r.x, r.y]);
        }
        let mut others: Vec<(f64, usize)> = world
            .vehicles
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != agent)
            .map(|(j, v)| (v.state.position().distance(s.position()), j))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (_, j) in others {
            let o = world.vehicles[j].state;
            let r = (o.position() - s.position()).to_frame(s.theta);
            obs.extend([r.x, r.y, wrap_angle(o.theta - s.theta), o.v]);
        }
        obs
    }

    /// (acceleration, jerk) of the agent's latest transition.
    pub fn comfort_signals(&self, world: &WorldState, agent: usize) -> (f64, f64) {
        let v = &world.vehicles[agent];
        (v.accel, v.jerk)
    }

    /// Pure-pursuit controller that tracks the assigned path at `target_speed`.
    pub fn path_following_action(
        &self,
        world: &WorldState,
        agent: usize,
        target_speed: f64,
    ) -> ControlInput {
        let v = &world.vehicles[agent];
        let s = v.state;
        let path = &self.map.reference_paths[v.path];
        let lookahead = 0.3;
        let target = path.point_at(path.project(s.position()).arclength + lookahead);
        let beta = (s.delta.tan() * self.params.slip_ratio()).atan();
        let local = (target - s.position()).to_frame(s.theta + beta);
        let ld = local.norm().max(1e-6);
        let curvature = 2.0 * local.y / (ld * ld);
        // Invert curvature = tan δ · cos β / ℓ_wb for δ.
        let c = (curvature * self.params.wheelbase).clamp(-0.99, 0.99);
        let rho = self.params.slip_ratio();
        let t = c / (1.0 - rho * rho * c * c).max(1e-6).sqrt();
        let delta_des = t
            .atan()
            .clamp(-self.params.delta_max, self.params.delta_max);
        let dt = self.config.dt;
        self.params.clamp_input(ControlInput::new(
            (target_speed - s.v) / dt * 0.5,
            (delta_des - s.delta) / dt,
        ))
    }
}
