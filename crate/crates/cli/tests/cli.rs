//! End-to-end checks of the command-line surface: exit codes, artifact
//! layout, determinism of the primary outputs, and the export format.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mpe() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mpe"))
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run_ok(output: &Output) {
    assert!(
        output.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn validate_accepts_shipped_configs() {
    for name in [
        "riccati_1v1.toml",
        "desk_2v1.toml",
        "nash_2v2.toml",
        "capture_3v1.toml",
        "capture_3v3_decoys.toml",
        "targeting_demo.toml",
    ] {
        let out = mpe().args(["validate", "-c"]).arg(scenario(name)).output().unwrap();
        run_ok(&out);
    }
}

#[test]
fn validate_rejects_indefinite_weight_with_exit_1() {
    let out = mpe()
        .args(["validate", "-c"])
        .arg(scenario("desk_2v1.toml"))
        .args(["--set", "pursuers.lambda_team=0.0"])
        .args(["--set", "pursuers.lambda_cross=0.0"])
        .args(["--set", "pursuers.gamma=1.0"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("not positive definite"), "stderr: {stderr}");
    assert!(stderr.contains("eigenvalue"), "stderr: {stderr}");
}

#[test]
fn validate_rejects_bad_interval_with_exit_1() {
    let out = mpe()
        .args(["validate", "-c"])
        .arg(scenario("capture_3v1.toml"))
        .args(["--set", "targeting.interval=0.13"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn parse_error_reports_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = \nmode=3\n").unwrap();
    let out = mpe().args(["validate", "-c"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 1"), "stderr: {stderr}");
}

#[test]
fn run_writes_artifacts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out_dir in [&out_a, &out_b] {
        let out = mpe()
            .args(["run", "-c"])
            .arg(scenario("targeting_demo.toml"))
            .arg("-o")
            .arg(out_dir)
            .output()
            .unwrap();
        run_ok(&out);
    }
    for name in ["trace.csv", "events.jsonl", "summary.json", "weights.csv"] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    // wall-clock metadata is confined to the sidecar
    assert!(out_a.join("meta.json").exists());
}

#[test]
fn run_zero_horizon_has_single_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = mpe()
        .args(["run", "-c"])
        .arg(scenario("targeting_demo.toml"))
        .args(["--set", "horizon=0.0", "--set", "targeting.enabled=false"])
        .arg("-o")
        .arg(dir.path())
        .output()
        .unwrap();
    run_ok(&out);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["steps"], 0);
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    // two header comment lines, one column row, one record
    assert_eq!(trace.lines().count(), 4);
}

#[test]
fn pi_emits_weights_and_history() {
    let dir = tempfile::tempdir().unwrap();
    let out = mpe()
        .args(["pi", "-c"])
        .arg(scenario("riccati_1v1.toml"))
        .arg("-o")
        .arg(dir.path())
        .output()
        .unwrap();
    run_ok(&out);
    let history = std::fs::read_to_string(dir.path().join("residual_history.csv")).unwrap();
    assert!(history.starts_with("iteration,mean_abs_bellman_error,sup_value_change"));
    assert!(history.lines().count() > 2);
    let weights = std::fs::read_to_string(dir.path().join("weights.csv")).unwrap();
    assert!(weights.starts_with("# mpe-weights v1"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("pi_summary.json")).unwrap())
            .unwrap();
    assert!(summary["final_mean_abs_bellman_error"].as_f64().unwrap() < 1e-2);

    // converged weights warm-restart a fixed-policy run
    let run_dir = tempfile::tempdir().unwrap();
    let out = mpe()
        .args(["run", "-c"])
        .arg(scenario("riccati_1v1.toml"))
        .args(["--set", "mode=fixed_policy"])
        .arg("--weights")
        .arg(dir.path().join("weights.csv"))
        .arg("-o")
        .arg(run_dir.path())
        .output()
        .unwrap();
    run_ok(&out);
}

#[test]
fn nash_check_writes_deviation_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = mpe()
        .args(["nash-check", "-c"])
        .arg(scenario("nash_2v2.toml"))
        .args(["--agent", "p0", "--rollouts", "5", "--factors", "0.5,1.5"])
        .arg("-o")
        .arg(dir.path())
        .output()
        .unwrap();
    run_ok(&out);
    let table = std::fs::read_to_string(dir.path().join("deviation.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "agent,factor,mean_index,std_index,rollouts");
    // baseline plus two factors
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("p0,1,"));
}

#[test]
fn capture_study_compares_paired_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let out = mpe()
        .args(["capture-study", "-c"])
        .arg(scenario("capture_3v1.toml"))
        .arg("--paired")
        .arg(scenario("capture_3v3_decoys.toml"))
        .args(["--seeds", "2"])
        .arg("-o")
        .arg(dir.path())
        .output()
        .unwrap();
    run_ok(&out);
    let table = std::fs::read_to_string(dir.path().join("capture_study.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "scenario,seed,all_captured,all_captured_time");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("primary,42,true,"));
    assert!(lines[3].starts_with("paired,42,false,"));
}

#[test]
fn export_plots_tables_are_consistent() {
    let run_dir = tempfile::tempdir().unwrap();
    let out = mpe()
        .args(["run", "-c"])
        .arg(scenario("capture_3v1.toml"))
        .arg("-o")
        .arg(run_dir.path())
        .output()
        .unwrap();
    run_ok(&out);
    let plot_dir = tempfile::tempdir().unwrap();
    let out = mpe()
        .args(["export-plots", "-t"])
        .arg(run_dir.path().join("trace.csv"))
        .arg("-o")
        .arg(plot_dir.path())
        .output()
        .unwrap();
    run_ok(&out);

    let read_lines = |name: &str| -> Vec<String> {
        std::fs::read_to_string(plot_dir.path().join(name))
            .unwrap()
            .lines()
            .map(str::to_string)
            .collect()
    };
    let trajectories = read_lines("trajectories.csv");
    let distances = read_lines("distances.csv");
    let steps = (trajectories.len() - 1) / 4; // 4 agents
    assert_eq!(distances.len() - 1, steps * 3, "steps x pursuer-evader pairs");

    // exported distances match recomputation from exported trajectories
    let mut positions: std::collections::HashMap<(String, String), (f64, f64)> =
        std::collections::HashMap::new();
    for line in &trajectories[1..] {
        let parts: Vec<&str> = line.split(',').collect();
        positions.insert(
            (parts[0].to_string(), parts[1].to_string()),
            (parts[2].parse().unwrap(), parts[3].parse().unwrap()),
        );
    }
    for line in &distances[1..] {
        let parts: Vec<&str> = line.split(',').collect();
        let t = parts[0].to_string();
        let p = positions[&(t.clone(), parts[1].to_string())];
        let e = positions[&(t, parts[2].to_string())];
        let recomputed = ((p.0 - e.0).powi(2) + (p.1 - e.1).powi(2)).sqrt();
        let exported: f64 = parts[3].parse().unwrap();
        assert!((recomputed - exported).abs() <= 1e-12, "{recomputed} vs {exported}");
    }
}

#[test]
fn export_plots_empty_trace_gives_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let trace_path = dir.path().join("empty.csv");
    std::fs::write(
        &trace_path,
        "# mpe-trace v1\n# config_hash=x step=0.1 state_dim=2 input_dim=2 pursuers=1 evaders=1 position_dim=2\ntime,x_p0_0,x_p0_1,u_p0_0,u_p0_1,delta_p0_0,delta_p0_1,delta_p0_2,delta_p0_3,vhat_p0,cost_p0,margin_p0,wc_p0,wa_p0,x_e0_0,x_e0_1,u_e0_0,u_e0_1,delta_e0_0,delta_e0_1,delta_e0_2,delta_e0_3,vhat_e0,cost_e0,wc_e0,wa_e0,g_p0_e0\n",
    )
    .unwrap();
    let out = mpe().args(["export-plots", "-t"]).arg(&trace_path).arg("-o").arg(dir.path()).output().unwrap();
    run_ok(&out);
    for name in ["trajectories.csv", "distances.csv", "vhat.csv", "margins.csv", "weight_norms.csv"] {
        let content = std::fs::read_to_string(dir.path().join(name)).unwrap();
        assert_eq!(content.lines().count(), 1, "{name} should be headers only");
    }
}

#[test]
fn export_plots_rejects_malformed_trace_with_exit_3_or_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "nonsense\n").unwrap();
    let out = mpe().args(["export-plots", "-t"]).arg(&bad).arg("-o").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn validate_is_crash_free_and_consistent_with_run() {
    // mutate a valid config in assorted ways: validate must never crash,
    // and anything it accepts must also run
    let base = std::fs::read_to_string(scenario("targeting_demo.toml")).unwrap();
    let mutations: Vec<String> = vec![
        base.replace("horizon = 10.0", "horizon = -1.0"),
        base.replace("step = 0.02", "step = 0.0"),
        base.replace("count = 3", "count = 0"),
        base.replace("input_bound = 1.2", "input_bound = -0.5"),
        base.replace("r = 0.3", "r = 0.0"),
        base.replace("interval = 1.0", "interval = 30.0"),
        base.replace("quadrature_step = 0.01", "quadrature_step = -1.0"),
        base.replace("[init]", "[init]
pursuer_box = { low = [0.0], high = [1.0] }"),
        base.replace("chi = 0.05", "chi = -0.2"),
        base.replace("lambda_team = 0.2", "lambda_team = [[1.0, 2.0], [3.0, 4.0]]"),
        base.replace("mode = \"online\"", "mode = \"nonsense\""),
        base.replace("pe = { preset = \"complete\", weight = 1.0 }", "pe = { preset = \"complete\", weight = -1.0 }"),
        base.replace("exploration_end_frac = 0.3", "exploration_end_frac = 7.0"),
        base.clone(),
    ];
    let dir = tempfile::tempdir().unwrap();
    for (k, text) in mutations.iter().enumerate() {
        let path = dir.path().join(format!("mut{k}.toml"));
        std::fs::write(&path, text).unwrap();
        let validate = mpe().args(["validate", "-c"]).arg(&path).output().unwrap();
        assert!(
            validate.status.code().is_some(),
            "validate crashed on mutation {k}"
        );
        if validate.status.success() {
            let out_dir = dir.path().join(format!("out{k}"));
            let run = mpe()
                .args(["run", "-c"])
                .arg(&path)
                .args(["--set", "horizon=0.2", "--set", "targeting.interval=0.2"])
                .arg("-o")
                .arg(&out_dir)
                .output()
                .unwrap();
            assert!(
                run.status.success(),
                "mutation {k} validated but failed to run: {}",
                String::from_utf8_lossy(&run.stderr)
            );
        }
    }
}

#[test]
fn out_dir_env_variable_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let out = mpe()
        .args(["run", "-c"])
        .arg(scenario("targeting_demo.toml"))
        .args(["--set", "horizon=0.5", "--set", "targeting.interval=0.5"])
        .env("MPE_OUT_DIR", dir.path())
        .output()
        .unwrap();
    run_ok(&out);
    assert!(dir.path().join("trace.csv").exists());
}
