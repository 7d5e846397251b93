use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
[env]
n_agents = 2

[ppo]
total_env_steps = 300
steps_per_rollout = 200
minibatch_size = 100
hidden = [8]

[eval]
t_eval = 4.0
seeds = [5]
"#;

fn cbfrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbfrl"))
        .args(args)
        .output()
        .unwrap()
}

fn setup() -> (tempfile::TempDir, String, String) {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, CONFIG).unwrap();
    let out = dir.path().join("out");
    (
        dir,
        config.to_string_lossy().into_owned(),
        out.to_string_lossy().into_owned(),
    )
}

#[test]
fn train_eval_plot_round_trip() {
    let (_dir, config, out) = setup();
    for args in [
        vec!["train", "--config", &config, "--out", &out],
        vec![
            "eval",
            "--config",
            &config,
            "--out",
            &out,
            "--filter-analyze",
        ],
    ] {
        let o = cbfrl(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let out_dir = Path::new(&out);
    for f in [
        "ckpt_cbf.json",
        "curve_cbf.csv",
        "metrics_cbf.csv",
        "trace_cbf_s5.jsonl",
        "config.resolved.toml",
        "VERSION",
    ] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    let trace = out_dir.join("trace_cbf_s5.jsonl");
    let o = cbfrl(&[
        "plot",
        "footprints",
        trace.to_str().unwrap(),
        "--window",
        "0:10",
        "--config",
        &config,
        "--out",
        &out,
    ]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(out_dir.join("footprints_trace_cbf_s5.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 10 * 2);
    let metrics = std::fs::read_to_string(out_dir.join("metrics_cbf.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
}

#[test]
fn errors_map_to_exit_codes() {
    let (dir, config, out) = setup();
    let missing = dir.path().join("nowhere");
    let o = cbfrl(&[
        "sweep",
        "--config",
        &config,
        "--out",
        &out,
        "--grid",
        "psi_th=0.04,0.2",
        "--eval-only",
        "--checkpoints",
        missing.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("kind="));

    let o = cbfrl(&[
        "sweep", "--config", &config, "--out", &out, "--grid", "bogus=1",
    ]);
    assert_eq!(o.status.code(), Some(2));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[env]\nn_agents = 0\n").unwrap();
    let o = cbfrl(&["train", "--config", bad.to_str().unwrap(), "--out", &out]);
    assert_eq!(o.status.code(), Some(2));

    let o = cbfrl(&[
        "eval",
        "--config",
        &config,
        "--out",
        &out,
        "--checkpoint",
        missing.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
}
