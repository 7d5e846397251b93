//! Evaluation protocol: total reward over a fixed horizon, per-seed policy
//! evaluation with optional safety-filter diagnostics, hyperparameter sweeps
//! and footprint export.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, VehicleParams, VehicleState};
use crate::env::{Environment, EpisodeEvent, EventKind, Vehicle, WorldState};
use crate::error::{Error, Result};
use crate::filter::{activation_degree, filter_all};
use crate::geometry::{rectangle_corners, IntersectionMap, Point2};
use crate::marl::{ActionScale, Checkpoint, CurvePoint, PolicyParams, PpoConfig};
use crate::rewards::{RewardConfig, RewardMethod};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Evaluation horizon in seconds.
    pub t_eval: f64,
    pub w_comf: f64,
    pub a_norm: f64,
    pub j_norm: f64,
    pub seeds: Vec<u64>,
    pub deterministic_policy: bool,
    /// Normalized correction above which the filter counts as active.
    pub epsilon_act: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            t_eval: 60.0,
            w_comf: 0.2,
            a_norm: 3.0,
            j_norm: 20.0,
            seeds: vec![1001, 1002, 1003, 1004, 1005],
            deterministic_policy: true,
            epsilon_act: 1e-6,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_eval > 0.0)
            || !(self.a_norm > 0.0)
            || !(self.j_norm > 0.0)
            || !(self.w_comf >= 0.0)
        {
            return Err(Error::Config(
                "eval: need t_eval, a_norm, j_norm > 0 and w_comf >= 0".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("eval.seeds must not be empty".into()));
        }
        if !(self.epsilon_act >= 0.0) {
            return Err(Error::Config(
                "eval.epsilon_act must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// ⌊T_eval / Δt⌋, robust to the representation error of `T/Δt`.
    pub fn horizon_steps(&self, dt: f64) -> usize {
        (self.t_eval / dt + 1e-9).floor() as usize
    }
}

/// Filter diagnostics of one agent-step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterDiag {
    pub correction: f64,
    pub normalized_correction: f64,
    pub feasible: bool,
}

/// One step of an episode: the state the actions were applied to, and the outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub states: Vec<VehicleState>,
    pub paths: Vec<usize>,
    pub actions: Vec<ControlInput>,
    pub rewards: Vec<f64>,
    pub events: Vec<EpisodeEvent>,
    pub accel: Vec<f64>,
    pub jerk: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<Vec<FilterDiag>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub n_agents: usize,
    pub dt: f64,
    pub steps: Vec<TraceStep>,
}

impl Trace {
    /// JSON lines: a header record followed by one record per step.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out =
            serde_json::to_string(&serde_json::json!({"n_agents": self.n_agents, "dt": self.dt}))?;
        out.push('\n');
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: serde_json::Value = serde_json::from_str(
            lines
                .next()
                .ok_or_else(|| Error::InvalidArgument("empty trace".into()))?,
        )?;
        let n_agents = header["n_agents"]
            .as_u64()
            .ok_or_else(|| Error::InvalidArgument("trace header lacks n_agents".into()))?
            as usize;
        let dt = header["dt"]
            .as_f64()
            .ok_or_else(|| Error::InvalidArgument("trace header lacks dt".into()))?;
        let steps = lines
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self {
            n_agents,
            dt,
            steps,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TotalReward {
    pub exits: usize,
    /// One per collision event.
    pub collision_events: usize,
    /// One per vehicle involved in a collision.
    pub collision_vehicles: usize,
    pub comfort_penalty: f64,
    pub total: f64,
}

/// `N_exit − N_col − w_comf/(N·K) · ΣΣ((|a|/a_norm)² + (|j|/j_norm)²)` over exactly K steps.
pub fn total_reward(trace: &Trace, cfg: &EvalConfig) -> Result<TotalReward> {
    let k = cfg.horizon_steps(trace.dt);
    if trace.steps.len() != k {
        return Err(Error::InvalidArgument(format!(
            "trace has {} steps, evaluation horizon needs {k}",
            trace.steps.len()
        )));
    }
    let (mut exits, mut collision_events, mut collision_vehicles) = (0, 0, 0);
    let mut comfort = 0.0;
    for s in &trace.steps {
        for e in &s.events {
            match e.kind {
                EventKind::Exit => exits += 1,
                EventKind::CollisionVehicle | EventKind::CollisionRoad => {
                    collision_events += 1;
                    collision_vehicles += e.agents.len();
                }
            }
        }
        comfort += s
            .accel
            .iter()
            .zip(&s.jerk)
            .map(|(a, j)| (a.abs() / cfg.a_norm).powi(2) + (j.abs() / cfg.j_norm).powi(2))
            .sum::<f64>();
    }
    let comfort_penalty = cfg.w_comf / (trace.n_agents * k) as f64 * comfort;
    Ok(TotalReward {
        exits,
        collision_events,
        collision_vehicles,
        comfort_penalty,
        total: exits as f64 - collision_events as f64 - comfort_penalty,
    })
}

/// Produces the joint action for the current world.
pub trait Controller {
    fn act(&mut self, env: &Environment, world: &WorldState) -> Result<Vec<ControlInput>>;
}

/// Learned policy, either with the squashed mean or sampled actions.
pub struct PolicyController<'a> {
    pub params: &'a PolicyParams,
    pub deterministic: bool,
    pub rng: ChaCha8Rng,
}

impl Controller for PolicyController<'_> {
    fn act(&mut self, env: &Environment, world: &WorldState) -> Result<Vec<ControlInput>> {
        let scale = ActionScale::from_params(env.params());
        (0..env.n_agents())
            .map(|i| {
                let obs = env.observe(world, i);
                if self.deterministic {
                    self.params.deterministic_action(&obs, &scale)
                } else {
                    Ok(self.params.sample(&obs, &scale, &mut self.rng)?.action)
                }
            })
            .collect()
    }
}

/// Scripted pure-pursuit driver.
pub struct PathFollower {
    pub target_speed: f64,
}

impl Controller for PathFollower {
    fn act(&mut self, env: &Environment, world: &WorldState) -> Result<Vec<ControlInput>> {
        Ok((0..env.n_agents())
            .map(|i| env.path_following_action(world, i, self.target_speed))
            .collect())
    }
}

/// Full braking with the steering held: vehicles come to rest.
pub struct Frozen;

impl Controller for Frozen {
    fn act(&mut self, env: &Environment, _world: &WorldState) -> Result<Vec<ControlInput>> {
        Ok(vec![
            ControlInput::new(env.params().a_min, 0.0);
            env.n_agents()
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub seed: u64,
    pub total_reward: f64,
    pub exits: usize,
    pub collision_events: usize,
    pub collision_vehicles: usize,
    pub comfort_penalty: f64,
    pub mean_step_reward: f64,
    pub activation_degree: Option<f64>,
    pub mean_correction: Option<f64>,
}

/// Runs one evaluation episode of `K` steps from `env.reset(seed)`.
pub fn run_episode(
    env: &Environment,
    controller: &mut dyn Controller,
    reward_cfg: &RewardConfig,
    eval_cfg: &EvalConfig,
    seed: u64,
    analyze_filter: bool,
) -> Result<(EpisodeMetrics, Trace)> {
    let k = eval_cfg.horizon_steps(env.config().dt);
    let mut world = env.reset(seed)?;
    let mut steps = Vec::with_capacity(k);
    let mut filter_results = Vec::new();
    let mut reward_sum = 0.0;
    for _ in 0..k {
        let actions = controller.act(env, &world)?;
        let filter = if analyze_filter {
            let results = filter_all(env, &world, &actions)?;
            let diag = results
                .iter()
                .map(|r| FilterDiag {
                    correction: r.correction,
                    normalized_correction: r.normalized_correction,
                    feasible: r.feasible,
                })
                .collect();
            filter_results.extend(results);
            Some(diag)
        } else {
            None
        };
        let states = world.states();
        let paths = world.vehicles.iter().map(|v| v.path).collect();
        let step = world.step_index;
        let result = env.step(&mut world, &actions, reward_cfg)?;
        let rewards: Vec<f64> = result.rewards.iter().map(|r| r.total).collect();
        reward_sum += rewards.iter().sum::<f64>();
        steps.push(TraceStep {
            step,
            states,
            paths,
            actions,
            rewards,
            events: result.events,
            accel: result.comfort.iter().map(|c| c.0).collect(),
            jerk: result.comfort.iter().map(|c| c.1).collect(),
            filter,
        });
    }
    let trace = Trace {
        n_agents: env.n_agents(),
        dt: env.config().dt,
        steps,
    };
    let tr = total_reward(&trace, eval_cfg)?;
    let (activation, mean_correction) = if analyze_filter && !filter_results.is_empty() {
        (
            Some(activation_degree(&filter_results, eval_cfg.epsilon_act)?),
            Some(
                filter_results
                    .iter()
                    .map(|r| r.normalized_correction)
                    .sum::<f64>()
                    / filter_results.len() as f64,
            ),
        )
    } else {
        (None, None)
    };
    Ok((
        EpisodeMetrics {
            seed,
            total_reward: tr.total,
            exits: tr.exits,
            collision_events: tr.collision_events,
            collision_vehicles: tr.collision_vehicles,
            comfort_penalty: tr.comfort_penalty,
            mean_step_reward: reward_sum / (k * env.n_agents()).max(1) as f64,
            activation_degree: activation,
            mean_correction,
        },
        trace,
    ))
}

/// Evaluates a policy on every configured seed.
pub fn evaluate_policy(
    params: &PolicyParams,
    env: &Environment,
    reward_cfg: &RewardConfig,
    eval_cfg: &EvalConfig,
    analyze_filter: bool,
) -> Result<Vec<(EpisodeMetrics, Trace)>> {
    eval_cfg.validate()?;
    if params.obs_dim != env.observation_len() || params.n_agents != env.n_agents() {
        return Err(Error::ShapeMismatch {
            expected: env.observation_len(),
            got: params.obs_dim,
        });
    }
    eval_cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut controller = PolicyController {
                params,
                deterministic: eval_cfg.deterministic_policy,
                rng: ChaCha8Rng::seed_from_u64(seed),
            };
            run_episode(
                env,
                &mut controller,
                reward_cfg,
                eval_cfg,
                seed,
                analyze_filter,
            )
        })
        .collect()
}

/// One hyperparameter assignment, in axis order.
pub type GridPoint = Vec<(String, f64)>;

/// Hyperparameter grid of a method.
pub fn default_grid(method: RewardMethod) -> Vec<(String, Vec<f64>)> {
    match method {
        RewardMethod::Cbf => vec![(
            "psi_th".into(),
            vec![0.04, 0.06, 0.08, 0.10, 0.12, 0.14, 0.16, 0.18, 0.20],
        )],
        RewardMethod::Distance => vec![
            ("d_road_th".into(), vec![0.003, 0.005, 0.01, 0.02]),
            ("d_veh_th".into(), vec![0.02, 0.05, 0.1, 0.15, 0.2, 0.3]),
        ],
        RewardMethod::Ttc => vec![
            ("d_road_th".into(), vec![0.003, 0.005, 0.01, 0.02]),
            ("t_ttc_th".into(), vec![2.0, 3.0, 4.0, 5.0, 6.0]),
        ],
    }
}

/// Cartesian product of the axes; the last axis varies fastest.
pub fn expand_grid(axes: &[(String, Vec<f64>)]) -> Vec<GridPoint> {
    let mut points: Vec<GridPoint> = vec![Vec::new()];
    for (name, values) in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((name.clone(), *v));
                    q
                })
            })
            .collect();
    }
    points
}

pub fn apply_grid_point(base: &RewardConfig, point: &GridPoint) -> Result<RewardConfig> {
    let mut cfg = base.clone();
    for (name, v) in point {
        let slot = match name.as_str() {
            "psi_th" => &mut cfg.psi_th,
            "d_road_th" => &mut cfg.d_road_th,
            "d_veh_th" => &mut cfg.d_veh_th,
            "t_ttc_th" => &mut cfg.t_ttc_th,
            "w_prog" => &mut cfg.w_prog,
            other => return Err(Error::Config(format!("unknown grid key '{other}'"))),
        };
        *slot = *v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn grid_label(point: &GridPoint) -> String {
    point
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join("_")
}

pub fn checkpoint_path(dir: &Path, method: RewardMethod, point: &GridPoint) -> PathBuf {
    let label = grid_label(point);
    if label.is_empty() {
        dir.join(format!("ckpt_{method}.json"))
    } else {
        dir.join(format!("ckpt_{method}_{label}.json"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub method: RewardMethod,
    pub hyperparams: GridPoint,
    pub per_seed: Vec<f64>,
    pub mean: f64,
    /// Population std across seeds.
    pub std: f64,
    pub activation_degree: f64,
    pub mean_correction: f64,
    pub exits: f64,
    pub collisions: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub method: RewardMethod,
    pub n_points: usize,
    /// Mean of the per-point means.
    pub mean: f64,
    /// Population std of the per-point means (sensitivity).
    pub std: f64,
    pub best: f64,
    pub activation_degree: f64,
}

/// (mean, population std)
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn summarize(method: RewardMethod, records: &[SweepRecord]) -> SweepSummary {
    let means: Vec<f64> = records.iter().map(|r| r.mean).collect();
    let (mean, std) = mean_std(&means);
    SweepSummary {
        method,
        n_points: records.len(),
        mean,
        std,
        best: means.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        activation_degree: records.iter().map(|r| r.activation_degree).sum::<f64>()
            / records.len().max(1) as f64,
    }
}

/// Where sweep policies come from.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySource {
    /// Train per point; checkpoints are written to the directory when given.
    Train { checkpoint_dir: Option<PathBuf> },
    /// Load `ckpt_<method>_<point>.json` from the directory.
    Load { checkpoint_dir: PathBuf },
}

pub struct SweepSetup<'a> {
    pub env: &'a Environment,
    pub base_reward: &'a RewardConfig,
    pub ppo: &'a PpoConfig,
    pub eval: &'a EvalConfig,
    pub seed: u64,
    pub workers: usize,
    pub config_hash: &'a str,
}

pub fn evaluate_point(
    setup: &SweepSetup<'_>,
    method: RewardMethod,
    point: &GridPoint,
    params: &PolicyParams,
) -> Result<SweepRecord> {
    let mut reward = apply_grid_point(setup.base_reward, point)?;
    reward.method = method;
    let runs = evaluate_policy(params, setup.env, &reward, setup.eval, true)?;
    let per_seed: Vec<f64> = runs.iter().map(|(m, _)| m.total_reward).collect();
    let (mean, std) = mean_std(&per_seed);
    let n = runs.len() as f64;
    Ok(SweepRecord {
        method,
        hyperparams: point.clone(),
        per_seed,
        mean,
        std,
        activation_degree: runs
            .iter()
            .map(|(m, _)| m.activation_degree.unwrap_or(0.0))
            .sum::<f64>()
            / n,
        mean_correction: runs
            .iter()
            .map(|(m, _)| m.mean_correction.unwrap_or(0.0))
            .sum::<f64>()
            / n,
        exits: runs.iter().map(|(m, _)| m.exits as f64).sum::<f64>() / n,
        collisions: runs
            .iter()
            .map(|(m, _)| m.collision_events as f64)
            .sum::<f64>()
            / n,
    })
}

/// Trains (or loads) one policy per grid point and evaluates it on every seed.
/// Points run in parallel; results keep grid order.
pub fn sweep(
    setup: &SweepSetup<'_>,
    method: RewardMethod,
    grid: &[GridPoint],
    source: &PolicySource,
) -> Result<(Vec<SweepRecord>, SweepSummary)> {
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    // Fail fast on missing checkpoints before any work starts.
    if let PolicySource::Load { checkpoint_dir } = source {
        for p in grid {
            let path = checkpoint_path(checkpoint_dir, method, p);
            if !path.exists() {
                return Err(Error::MissingFile(path.display().to_string()));
            }
        }
    }
    let records = grid
        .par_iter()
        .map(|point| {
            let params = match source {
                PolicySource::Load { checkpoint_dir } => {
                    Checkpoint::load(
                        &checkpoint_path(checkpoint_dir, method, point),
                        setup.config_hash,
                    )?
                    .params
                }
                PolicySource::Train { checkpoint_dir } => {
                    let mut reward = apply_grid_point(setup.base_reward, point)?;
                    reward.method = method;
                    let out = crate::marl::train(
                        setup.env,
                        &reward,
                        setup.ppo,
                        setup.seed,
                        setup.workers,
                    )?;
                    if let Some(dir) = checkpoint_dir {
                        let steps = out.curve.last().map(|c| c.env_steps).unwrap_or(0);
                        Checkpoint::new(setup.config_hash, steps, out.params.clone())
                            .save(&checkpoint_path(dir, method, point))?;
                    }
                    out.params
                }
            };
            evaluate_point(setup, method, point, &params)
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(method, &records);
    Ok((records, summary))
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Heatmap-ready CSV: one column per hyperparameter, then the metrics and the
/// `;`-joined per-seed totals.
pub fn sweep_csv(records: &[SweepRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let keys: Vec<String> = records
        .first()
        .map(|r| r.hyperparams.iter().map(|(k, _)| k.clone()).collect())
        .unwrap_or_default();
    let mut header = vec!["method".to_string()];
    header.extend(keys.iter().cloned());
    header.extend(
        [
            "mean",
            "std",
            "activation_degree",
            "mean_correction",
            "exits",
            "collisions",
            "per_seed",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.method.to_string()];
        row.extend(r.hyperparams.iter().map(|(_, v)| fmt_f64(*v)));
        row.extend([
            fmt_f64(r.mean),
            fmt_f64(r.std),
            fmt_f64(r.activation_degree),
            fmt_f64(r.mean_correction),
            fmt_f64(r.exits),
            fmt_f64(r.collisions),
            r.per_seed
                .iter()
                .map(|v| fmt_f64(*v))
                .collect::<Vec<_>>()
                .join(";"),
        ]);
        w.write_record(&row)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Parses a CSV written by [`sweep_csv`].
pub fn records_from_csv(text: &str) -> Result<Vec<SweepRecord>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers()?.clone();
    let mean_col = headers
        .iter()
        .position(|h| h == "mean")
        .ok_or_else(|| Error::InvalidArgument("sweep CSV lacks a mean column".into()))?;
    let num = |v: &str| -> Result<f64> {
        v.parse::<f64>()
            .map_err(|_| Error::InvalidArgument(format!("bad number '{v}' in sweep CSV")))
    };
    r.records()
        .map(|row| {
            let row = row?;
            if row.len() != headers.len() {
                return Err(Error::InvalidArgument("ragged sweep CSV".into()));
            }
            let method: RewardMethod = row[0]
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("unknown method '{}'", &row[0])))?;
            let hyperparams = (1..mean_col)
                .map(|c| Ok((headers[c].to_string(), num(&row[c])?)))
                .collect::<Result<Vec<_>>>()?;
            let per_seed = row[mean_col + 6]
                .split(';')
                .filter(|v| !v.is_empty())
                .map(num)
                .collect::<Result<Vec<_>>>()?;
            Ok(SweepRecord {
                method,
                hyperparams,
                per_seed,
                mean: num(&row[mean_col])?,
                std: num(&row[mean_col + 1])?,
                activation_degree: num(&row[mean_col + 2])?,
                mean_correction: num(&row[mean_col + 3])?,
                exits: num(&row[mean_col + 4])?,
                collisions: num(&row[mean_col + 5])?,
            })
        })
        .collect()
}

pub fn summary_csv(summaries: &[SweepSummary]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "method",
        "n_points",
        "mean",
        "std",
        "best",
        "activation_degree",
    ])?;
    for s in summaries {
        w.write_record([
            s.method.to_string(),
            s.n_points.to_string(),
            fmt_f64(s.mean),
            fmt_f64(s.std),
            fmt_f64(s.best),
            fmt_f64(s.activation_degree),
        ])?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Filter diagnostics recomputed from a stored trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub agent_steps: usize,
    pub activation_degree: f64,
    pub mean_correction: f64,
    pub infeasible: usize,
}

/// World snapshot of a trace step; enough for constraints and observations.
pub fn world_at(step: &TraceStep) -> WorldState {
    WorldState {
        vehicles: step
            .states
            .iter()
            .zip(&step.paths)
            .map(|(s, p)| Vehicle {
                state: *s,
                path: *p,
                accel: 0.0,
                jerk: 0.0,
            })
            .collect(),
        step_index: step.step,
        rng: ChaCha8Rng::seed_from_u64(0),
        event_log: Vec::new(),
    }
}

/// Runs the safety filter on every step of a trace. Actions come from the
/// policy when given, otherwise from the log. Returns the report and a
/// per-agent-step CSV.
pub fn analyze_trace(
    env: &Environment,
    trace: &Trace,
    params: Option<&PolicyParams>,
    epsilon: f64,
) -> Result<(FilterReport, String)> {
    if trace.n_agents != env.n_agents() {
        return Err(Error::ShapeMismatch {
            expected: env.n_agents(),
            got: trace.n_agents,
        });
    }
    let scale = ActionScale::from_params(env.params());
    let mut all = Vec::new();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "step",
        "agent",
        "u_v",
        "u_delta",
        "f_v",
        "f_delta",
        "correction",
        "normalized_correction",
        "feasible",
    ])?;
    for step in &trace.steps {
        let world = world_at(step);
        let actions = match params {
            Some(p) => (0..env.n_agents())
                .map(|i| p.deterministic_action(&env.observe(&world, i), &scale))
                .collect::<Result<Vec<_>>>()?,
            None => step.actions.clone(),
        };
        let results = filter_all(env, &world, &actions)?;
        for (agent, r) in results.iter().enumerate() {
            w.write_record([
                step.step.to_string(),
                agent.to_string(),
                fmt_f64(r.u_rl.u_v),
                fmt_f64(r.u_rl.u_delta),
                fmt_f64(r.u_filtered.u_v),
                fmt_f64(r.u_filtered.u_delta),
                fmt_f64(r.correction),
                fmt_f64(r.normalized_correction),
                r.feasible.to_string(),
            ])?;
        }
        all.extend(results);
    }
    let report = FilterReport {
        agent_steps: all.len(),
        activation_degree: activation_degree(&all, epsilon)?,
        mean_correction: all.iter().map(|r| r.normalized_correction).sum::<f64>()
            / all.len() as f64,
        infeasible: all.iter().filter(|r| !r.feasible).count(),
    };
    let csv = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok((report, csv))
}

pub fn curve_csv(curve: &[CurvePoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in curve {
        w.serialize(p)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

pub fn curve_from_csv(text: &str) -> Result<Vec<CurvePoint>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    Ok(r.deserialize()
        .collect::<std::result::Result<Vec<CurvePoint>, _>>()?)
}

/// Rectangle outline of one vehicle at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outline {
    pub step: usize,
    pub time: f64,
    pub agent: usize,
    pub corners: [Point2; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Footprints {
    pub outlines: Vec<Outline>,
    pub csv: String,
    pub svg: String,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Outlines of every vehicle for trace steps in `[start, end)`, as CSV and SVG.
pub fn export_footprints(
    trace: &Trace,
    window: (usize, usize),
    params: &VehicleParams,
    map: Option<&IntersectionMap>,
) -> Result<Footprints> {
    let (start, end) = window;
    if start > end {
        return Err(Error::InvalidArgument(format!(
            "window {start}:{end} is reversed"
        )));
    }
    let outlines: Vec<Outline> = trace
        .steps
        .iter()
        .filter(|s| s.step >= start && s.step < end)
        .flat_map(|s| {
            s.states.iter().enumerate().map(move |(agent, st)| Outline {
                step: s.step,
                time: s.step as f64 * trace.dt,
                agent,
                corners: rectangle_corners(st, params.body_length, params.body_width),
            })
        })
        .collect();

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "step", "time", "agent", "x0", "y0", "x1", "y1", "x2", "y2", "x3", "y3",
    ])?;
    for o in &outlines {
        let mut row = vec![o.step.to_string(), fmt_f64(o.time), o.agent.to_string()];
        for c in &o.corners {
            row.push(fmt_f64(c.x));
            row.push(fmt_f64(c.y));
        }
        w.write_record(&row)?;
    }
    let csv = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let extent = map.map(|m| m.config.extent()).unwrap_or_else(|| {
        outlines
            .iter()
            .flat_map(|o| o.corners.iter())
            .map(|c| c.x.abs().max(c.y.abs()))
            .fold(1.0, f64::max)
    });
    let size = 800.0;
    let scale = size / (2.0 * extent);
    let px = |p: Point2| ((p.x + extent) * scale, (extent - p.y) * scale);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if let Some(m) = map {
        for c in &m.corridors {
            for line in [&c.left, &c.right] {
                let pts: Vec<String> = line
                    .vertices()
                    .iter()
                    .map(|p| {
                        let (x, y) = px(*p);
                        format!("{x:.2},{y:.2}")
                    })
                    .collect();
                let _ = writeln!(
                    svg,
                    r##"<polyline points="{}" fill="none" stroke="#bbbbbb" stroke-width="0.5"/>"##,
                    pts.join(" ")
                );
            }
        }
    }
    for o in &outlines {
        let pts: Vec<String> = o
            .corners
            .iter()
            .map(|p| {
                let (x, y) = px(*p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            svg,
            r#"<polygon points="{}" fill="none" stroke="{}" stroke-width="0.8" stroke-opacity="0.6"/>"#,
            pts.join(" "),
            PALETTE[o.agent % PALETTE.len()]
        );
    }
    let t0 = start as f64 * trace.dt;
    let t1 = end.min(trace.steps.len()) as f64 * trace.dt;
    let _ = writeln!(
        svg,
        r#"<text x="10" y="20" font-family="sans-serif" font-size="14">t = {t0:.1} s to {t1:.1} s</text>"#
    );
    svg.push_str("</svg>\n");
    Ok(Footprints { outlines, csv, svg })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(n: usize, k: usize, a: f64, j: f64) -> Trace {
        Trace {
            n_agents: n,
            dt: 0.1,
            steps: (0..k)
                .map(|step| TraceStep {
                    step,
                    states: vec![VehicleState::default(); n],
                    paths: vec![0; n],
                    actions: vec![ControlInput::default(); n],
                    rewards: vec![0.0; n],
                    events: vec![],
                    accel: vec![a; n],
                    jerk: vec![j; n],
                    filter: None,
                })
                .collect(),
        }
    }

    fn event(kind: EventKind, agents: Vec<usize>) -> EpisodeEvent {
        EpisodeEvent {
            kind,
            step: 0,
            agents,
        }
    }

    #[test]
    fn total_reward_examples() {
        let cfg = EvalConfig::default();
        assert_eq!(
            total_reward(&synthetic(2, 600, 0.0, 0.0), &cfg)
                .unwrap()
                .total,
            0.0
        );

        let mut t = synthetic(2, 600, 0.0, 0.0);
        t.steps[3].events = vec![
            event(EventKind::Exit, vec![0]),
            event(EventKind::Exit, vec![1]),
            event(EventKind::CollisionVehicle, vec![0, 1]),
        ];
        t.steps[9].events = vec![event(EventKind::Exit, vec![0])];
        let r = total_reward(&t, &cfg).unwrap();
        assert_eq!(r.total, 2.0);
        assert_eq!(r.collision_vehicles, 2);

        let r = total_reward(&synthetic(2, 600, 3.0, 0.0), &cfg).unwrap();
        assert!((r.comfort_penalty - 0.2).abs() < 1e-12);
        assert!((r.total + 0.2).abs() < 1e-12);

        assert!(total_reward(&synthetic(2, 599, 0.0, 0.0), &cfg).is_err());
    }

    #[test]
    fn grid_expansion_order() {
        let g = expand_grid(&[
            ("a".into(), vec![1.0, 2.0]),
            ("b".into(), vec![3.0, 4.0, 5.0]),
        ]);
        assert_eq!(g.len(), 6);
        assert_eq!(g[1], vec![("a".to_string(), 1.0), ("b".to_string(), 4.0)]);
        assert_eq!(expand_grid(&default_grid(RewardMethod::Distance)).len(), 24);
        assert!(apply_grid_point(&RewardConfig::default(), &vec![("nope".into(), 1.0)]).is_err());
    }

    #[test]
    fn population_std() {
        assert_eq!(mean_std(&[5.0]), (5.0, 0.0));
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
    }

    #[test]
    fn trace_jsonl_round_trip() {
        let t = synthetic(2, 3, 0.5, -1.0);
        assert_eq!(Trace::from_jsonl(&t.to_jsonl().unwrap()).unwrap(), t);
    }
}
