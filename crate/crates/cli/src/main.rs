//! Command-line front end: train, eval, sweep, filter-analyze and plot.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cbfrl::config::RunConfig;
use cbfrl::eval::{
    analyze_trace, curve_csv, curve_from_csv, default_grid, evaluate_policy, expand_grid,
    export_footprints, records_from_csv, summarize, summary_csv, sweep, sweep_csv, GridPoint,
    PolicySource, SweepSetup, Trace,
};
use cbfrl::marl::{train_with, Checkpoint};
use cbfrl::plot::{curve_svg, sweep_svg};
use cbfrl::rewards::RewardMethod;
use cbfrl::{Error, Result};

#[derive(Parser)]
#[command(
    name = "cbfrl",
    version,
    about = "Multi-vehicle intersection RL with barrier-informed rewards"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults are used for anything not set.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_method)]
    method: Option<RewardMethod>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parallel rollout workers (environments) per training run.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Single-threaded execution and mean actions during evaluation.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy; writes a checkpoint and the training curve.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on the configured seeds; writes metrics and traces.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to <out>/ckpt_<method>.json.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Record safety-filter diagnostics in the traces.
        #[arg(long)]
        filter_analyze: bool,
    },
    /// Train (or load) and evaluate one policy per grid point.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Grid axis as key=v1,v2,...; repeat for more axes. Defaults to the method's full grid.
        #[arg(long, value_parser = parse_grid_axis)]
        grid: Vec<(String, Vec<f64>)>,
        /// Load checkpoints instead of training.
        #[arg(long)]
        eval_only: bool,
        /// Checkpoint directory; defaults to the output directory.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Activation-degree report for a stored trace.
    FilterAnalyze {
        #[command(flatten)]
        common: Common,
        trace: PathBuf,
        /// Re-query this policy instead of using the logged actions.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Render SVG figures from stored outputs.
    Plot {
        #[command(subcommand)]
        kind: PlotKind,
    },
}

#[derive(Subcommand)]
enum PlotKind {
    /// Accumulated vehicle outlines from a JSON-lines trace.
    Footprints {
        #[command(flatten)]
        common: Common,
        trace: PathBuf,
        /// Step window start:end (end exclusive).
        #[arg(long, value_parser = parse_window, default_value = "0:200")]
        window: (usize, usize),
    },
    /// Training curve from a curve CSV.
    Curve {
        #[command(flatten)]
        common: Common,
        input: PathBuf,
    },
    /// Per-grid-point totals from a sweep CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        input: PathBuf,
    },
}

fn parse_method(s: &str) -> std::result::Result<RewardMethod, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_grid_axis(s: &str) -> std::result::Result<(String, Vec<f64>), String> {
    let (key, values) = s.split_once('=').ok_or("expected key=v1,v2,...")?;
    let values = values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| format!("bad grid value '{v}'"))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if key.is_empty() || values.is_empty() {
        return Err("expected key=v1,v2,...".into());
    }
    Ok((key.to_string(), values))
}

fn parse_window(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or("expected start:end")?;
    let a = a.parse().map_err(|_| format!("bad window start '{a}'"))?;
    let b = b.parse().map_err(|_| format!("bad window end '{b}'"))?;
    Ok((a, b))
}

/// Loads the config and applies command-line overrides.
fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(m) = common.method {
        cfg.reward.method = m;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if common.deterministic {
        cfg.eval.deterministic_policy = true;
    }
    if common.workers == 0 {
        return Err(Error::Config("--workers must be at least 1".into()));
    }
    cfg.validate()?;
    cfg.write_resolved(&cfg.out_dir)?;
    Ok(cfg)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents)?;
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.display().to_string()));
    }
    Ok(std::fs::read_to_string(path)?)
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into())
}

fn run_train(common: &Common) -> Result<()> {
    let cfg = resolve(common)?;
    let env = cfg.environment()?;
    let hash = cfg.config_hash()?;
    let method = cfg.reward.method;
    let out = train_with(
        &env,
        &cfg.reward,
        &cfg.ppo,
        cfg.seed,
        common.workers,
        |_, p| {
            eprintln!(
                "steps={} reward={:.5} exits={} collisions={} kl={:.4}",
                p.env_steps, p.mean_episode_reward, p.exits, p.collisions, p.approx_kl
            );
            Ok(())
        },
    )?;
    let steps = out.curve.last().map(|c| c.env_steps).unwrap_or(0);
    Checkpoint::new(hash, steps, out.params)
        .save(&cfg.out_dir.join(format!("ckpt_{method}.json")))?;
    write(
        &cfg.out_dir.join(format!("curve_{method}.csv")),
        &curve_csv(&out.curve)?,
    )?;
    println!(
        "trained {method}: {steps} env steps, output in {}",
        cfg.out_dir.display()
    );
    Ok(())
}

fn run_eval(common: &Common, checkpoint: Option<&Path>, filter_analyze: bool) -> Result<()> {
    let cfg = resolve(common)?;
    let env = cfg.environment()?;
    let method = cfg.reward.method;
    let ckpt_path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir.join(format!("ckpt_{method}.json")));
    let ckpt = Checkpoint::load(&ckpt_path, &cfg.config_hash()?)?;
    let runs = evaluate_policy(&ckpt.params, &env, &cfg.reward, &cfg.eval, filter_analyze)?;
    let mut rows = String::from(
        "seed,total_reward,exits,collision_events,collision_vehicles,comfort_penalty,mean_step_reward,activation_degree\n",
    );
    for (m, trace) in &runs {
        rows.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            m.seed,
            m.total_reward,
            m.exits,
            m.collision_events,
            m.collision_vehicles,
            m.comfort_penalty,
            m.mean_step_reward,
            m.activation_degree
                .map(|a| a.to_string())
                .unwrap_or_default()
        ));
        write(
            &cfg.out_dir
                .join(format!("trace_{method}_s{}.jsonl", m.seed)),
            &trace.to_jsonl()?,
        )?;
        println!(
            "seed {}: R_tot={:.4} exits={} collisions={}",
            m.seed, m.total_reward, m.exits, m.collision_events
        );
    }
    write(&cfg.out_dir.join(format!("metrics_{method}.csv")), &rows)?;
    Ok(())
}

fn run_sweep(
    common: &Common,
    grid: &[(String, Vec<f64>)],
    eval_only: bool,
    checkpoints: Option<&Path>,
) -> Result<()> {
    let cfg = resolve(common)?;
    let method = cfg.reward.method;
    let axes = if grid.is_empty() {
        default_grid(method)
    } else {
        grid.to_vec()
    };
    let points: Vec<GridPoint> = expand_grid(&axes);
    let env = cfg.environment()?;
    let hash = cfg.config_hash()?;
    let dir = checkpoints
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir.clone());
    let source = if eval_only {
        PolicySource::Load {
            checkpoint_dir: dir,
        }
    } else {
        std::fs::create_dir_all(&dir)?;
        PolicySource::Train {
            checkpoint_dir: Some(dir),
        }
    };
    let setup = SweepSetup {
        env: &env,
        base_reward: &cfg.reward,
        ppo: &cfg.ppo,
        eval: &cfg.eval,
        seed: cfg.seed,
        workers: common.workers,
        config_hash: &hash,
    };
    let (records, summary) = sweep(&setup, method, &points, &source)?;
    write(
        &cfg.out_dir.join(format!("sweep_{method}.csv")),
        &sweep_csv(&records)?,
    )?;
    write(
        &cfg.out_dir.join(format!("sweep_summary_{method}.csv")),
        &summary_csv(&[summary.clone()])?,
    )?;
    println!(
        "{method}: {} points, mean {:.4}, std {:.4}, best {:.4}, activation {:.4}",
        summary.n_points, summary.mean, summary.std, summary.best, summary.activation_degree
    );
    Ok(())
}

fn run_filter_analyze(common: &Common, trace_path: &Path, checkpoint: Option<&Path>) -> Result<()> {
    let cfg = resolve(common)?;
    let env = cfg.environment()?;
    let trace = Trace::from_jsonl(&read(trace_path)?)?;
    let ckpt = match checkpoint {
        Some(p) => Some(Checkpoint::load(p, &cfg.config_hash()?)?),
        None => None,
    };
    let (report, csv) = analyze_trace(
        &env,
        &trace,
        ckpt.as_ref().map(|c| &c.params),
        cfg.eval.epsilon_act,
    )?;
    let stem = file_stem(trace_path);
    write(&cfg.out_dir.join(format!("filter_{stem}.csv")), &csv)?;
    write(
        &cfg.out_dir.join(format!("filter_report_{stem}.json")),
        &serde_json::to_string_pretty(&report).map_err(Error::from)?,
    )?;
    println!(
        "activation degree {:.6} over {} agent-steps, mean normalized correction {:.6}, infeasible {}",
        report.activation_degree, report.agent_steps, report.mean_correction, report.infeasible
    );
    Ok(())
}

fn run_plot(kind: &PlotKind) -> Result<()> {
    match kind {
        PlotKind::Footprints {
            common,
            trace,
            window,
        } => {
            let cfg = resolve(common)?;
            let env = cfg.environment()?;
            let t = Trace::from_jsonl(&read(trace)?)?;
            let fp = export_footprints(&t, *window, env.params(), Some(env.map()))?;
            let stem = file_stem(trace);
            write(&cfg.out_dir.join(format!("footprints_{stem}.svg")), &fp.svg)?;
            write(&cfg.out_dir.join(format!("footprints_{stem}.csv")), &fp.csv)?;
            println!("{} outlines", fp.outlines.len());
        }
        PlotKind::Curve { common, input } => {
            let cfg = resolve(common)?;
            let curve = curve_from_csv(&read(input)?)?;
            let stem = file_stem(input);
            write(
                &cfg.out_dir.join(format!("{stem}.svg")),
                &curve_svg(&curve, &stem),
            )?;
        }
        PlotKind::Sweep { common, input } => {
            let cfg = resolve(common)?;
            let records = records_from_csv(&read(input)?)?;
            let stem = file_stem(input);
            if let Some(first) = records.first() {
                let s = summarize(first.method, &records);
                println!(
                    "{}: mean {:.4}, std {:.4}, best {:.4}",
                    s.method, s.mean, s.std, s.best
                );
            }
            write(
                &cfg.out_dir.join(format!("{stem}.svg")),
                &sweep_svg(&records, &stem),
            )?;
        }
    }
    Ok(())
}

fn threads(cmd: &Command) -> usize {
    let common = match cmd {
        Command::Train { common }
        | Command::Eval { common, .. }
        | Command::Sweep { common, .. } => common,
        Command::FilterAnalyze { common, .. } => common,
        Command::Plot { kind } => match kind {
            PlotKind::Footprints { common, .. }
            | PlotKind::Curve { common, .. }
            | PlotKind::Sweep { common, .. } => common,
        },
    };
    if common.deterministic {
        1
    } else {
        0
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::Geometry(_)
        | Error::ShapeMismatch { .. }
        | Error::SpawnFailed { .. }
        | Error::Json(_)
        | Error::Csv(_) => 2,
        Error::MissingFile(_) => 3,
        Error::Numerical(_) => 4,
        _ => 1,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "config",
        Error::Geometry(_) => "geometry",
        Error::InvalidArgument(_) => "invalid_argument",
        Error::MissingConstraint { .. } => "missing_constraint",
        Error::ShapeMismatch { .. } => "shape_mismatch",
        Error::SpawnFailed { .. } => "spawn_failed",
        Error::Numerical(_) => "numerical",
        Error::MissingFile(_) => "missing_file",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
        Error::Csv(_) => "csv",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let n = threads(&cli.command);
    if n > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let result = match &cli.command {
        Command::Train { common } => run_train(common),
        Command::Eval {
            common,
            checkpoint,
            filter_analyze,
        } => run_eval(common, checkpoint.as_deref(), *filter_analyze),
        Command::Sweep {
            common,
            grid,
            eval_only,
            checkpoints,
        } => run_sweep(common, grid, *eval_only, checkpoints.as_deref()),
        Command::FilterAnalyze {
            common,
            trace,
            checkpoint,
        } => run_filter_analyze(common, trace, checkpoint.as_deref()),
        Command::Plot { kind } => run_plot(kind),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let msg = e.to_string().replace(['\n', '"'], " ");
            eprintln!(
                "error kind={} code={code} message=\"{msg}\"",
                error_kind(&e)
            );
            ExitCode::from(code)
        }
    }
}
