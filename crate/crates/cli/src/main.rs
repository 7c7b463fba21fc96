//! Batch CLI for the pursuit-evasion game simulator.
//!
//! Exit codes: 0 success, 1 configuration/validation failure, 2 runtime
//! divergence or non-convergence, 3 I/O error.

use clap::{Args, Parser, Subcommand};
use mpe_core::engine::{self, config as cfg, trace as tr, EngineError, RunOptions};
use mpe_core::learning::{self, LearningError};
use mpe_core::{PlayerId, Side};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

const EXIT_VALIDATION: i32 = 1;
const EXIT_RUNTIME: i32 = 2;
const EXIT_IO: i32 = 3;

#[derive(Parser)]
#[command(
    name = "mpe",
    version,
    about = "Simulate input-constrained multi-agent pursuit-evasion games",
    long_about = "Simulate input-constrained multi-agent pursuit-evasion games with \
slightly-altruistic costs, learned saturated policies, and rolling-horizon target \
selection.\n\nThe default output directory is taken from MPE_OUT_DIR when set, \
otherwise ./out. Primary outputs are byte-deterministic for a given config and seed; \
wall-clock metadata goes to a sidecar meta.json."
)]
struct CliArgs {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Scenario configuration file (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory (created if absent) [env: MPE_OUT_DIR, default: ./out]
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Dotted-key overrides applied after parsing, before validation
    /// (e.g. --set targeting.chi=0.1).
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Check a configuration against every invariant; exit 0 iff valid.
    Validate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Simulate the scenario and write trace, events, summary, weights.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Warm-restart weights file.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Offline policy iteration; writes converged weights and histories.
    Pi {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Unilateral-deviation table around converged policies.
    NashCheck {
        #[command(flatten)]
        common: CommonArgs,
        /// Actor-weight scale factors to test.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 0.8, 1.2, 1.5])]
        factors: Vec<f64>,
        /// Seeded rollouts per factor.
        #[arg(long, default_value_t = 30)]
        rollouts: usize,
        /// Agent to perturb (p0, e1, ...); all agents when omitted.
        #[arg(long)]
        agent: Option<String>,
        /// Converged weights file; policy iteration runs when omitted.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Paired capture comparison between two scenario files.
    CaptureStudy {
        #[command(flatten)]
        common: CommonArgs,
        /// The paired scenario (typically game weights frozen).
        #[arg(long)]
        paired: PathBuf,
        /// Number of consecutive seeds starting at the config seed.
        #[arg(long, default_value_t = 10)]
        seeds: usize,
    },
    /// Re-emit a trace as tidy per-metric tables.
    ExportPlots {
        /// Trace file written by `run`.
        #[arg(short, long)]
        trace: PathBuf,
        /// Output directory [env: MPE_OUT_DIR, default: ./out]
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let code = match real_main() {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err:#}");
            err.exit_code()
        }
    };
    std::process::exit(code);
}

#[derive(Debug)]
struct CliError {
    message: String,
    code: i32,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        self.code
    }

    fn io(err: impl std::fmt::Display) -> Self {
        CliError { message: err.to_string(), code: EXIT_IO }
    }

    fn validation(err: impl std::fmt::Display) -> Self {
        CliError { message: err.to_string(), code: EXIT_VALIDATION }
    }

    fn runtime(err: impl std::fmt::Display) -> Self {
        CliError { message: err.to_string(), code: EXIT_RUNTIME }
    }
}

impl From<EngineError> for CliError {
    fn from(err: EngineError) -> Self {
        match &err {
            EngineError::Config(_) => CliError::validation(err),
            EngineError::Trace(tr::TraceError::Io(_)) => CliError::io(err),
            EngineError::Learning(LearningError::Io(_)) => CliError::io(err),
            _ => CliError::runtime(err),
        }
    }
}

impl From<tr::TraceError> for CliError {
    fn from(err: tr::TraceError) -> Self {
        match err {
            tr::TraceError::Io(_) => CliError::io(err),
            _ => CliError::validation(err),
        }
    }
}

fn real_main() -> Result<(), CliError> {
    match CliArgs::parse().command {
        Command::Validate { common } => validate_cmd(&common),
        Command::Run { common, weights } => run_cmd(&common, weights.as_deref()),
        Command::Pi { common } => pi_cmd(&common),
        Command::NashCheck { common, factors, rollouts, agent, weights } => {
            nash_cmd(&common, &factors, rollouts, agent.as_deref(), weights.as_deref())
        }
        Command::CaptureStudy { common, paired, seeds } => capture_study_cmd(&common, &paired, seeds),
        Command::ExportPlots { trace, out } => export_plots_cmd(&trace, out),
    }
}

fn out_dir(requested: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = requested
        .clone()
        .or_else(|| std::env::var_os("MPE_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(CliError::io)?;
    Ok(dir)
}

fn load_config(common: &CommonArgs) -> Result<cfg::ScenarioConfig, CliError> {
    let text = std::fs::read_to_string(&common.config).map_err(CliError::io)?;
    let mut overrides = Vec::new();
    for item in &common.set {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| CliError::validation(format!("--set {item}: expected KEY=VALUE")))?;
        overrides.push((key.to_string(), value.to_string()));
    }
    if let Some(seed) = common.seed {
        overrides.push(("seed".to_string(), seed.to_string()));
    }
    cfg::ScenarioConfig::with_overrides(&text, &overrides).map_err(CliError::validation)
}

fn resolve(common: &CommonArgs) -> Result<cfg::Resolved, CliError> {
    let config = load_config(common)?;
    cfg::resolve(&config).map_err(CliError::validation)
}

fn write_meta(dir: &Path, command: &str, started: Instant) -> Result<(), CliError> {
    let meta = serde_json::json!({
        "command": command,
        "duration_seconds": started.elapsed().as_secs_f64(),
        "unix_time": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    });
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta).unwrap())
        .map_err(CliError::io)
}

fn validate_cmd(common: &CommonArgs) -> Result<(), CliError> {
    let config = load_config(common)?;
    let violations = cfg::validate(&config);
    if violations.is_empty() {
        println!("ok: {}", common.config.display());
        Ok(())
    } else {
        let mut message = format!("{} violation(s):\n", violations.len());
        for v in &violations {
            message.push_str(&format!("  - {v}\n"));
        }
        Err(CliError::validation(message.trim_end()))
    }
}

fn write_run_artifacts(dir: &Path, output: &engine::RunOutput) -> Result<(), CliError> {
    output.trace.write_csv(&dir.join("trace.csv"))?;
    tr::write_events(&dir.join("events.jsonl"), &output.events)?;
    tr::write_summary(&dir.join("summary.json"), &output.summary)?;
    learning::save_weights(&dir.join("weights.csv"), &output.nets)
        .map_err(|e| CliError::io(e))?;
    Ok(())
}

fn run_cmd(common: &CommonArgs, weights_path: Option<&Path>) -> Result<(), CliError> {
    let started = Instant::now();
    let dir = out_dir(&common.out)?;
    let resolved = resolve(common)?;
    let mut options = RunOptions::default();
    if let Some(path) = weights_path {
        let mut nets = engine_warm_nets(&resolved)?;
        learning::load_weights(path, &mut nets).map_err(CliError::validation)?;
        options.nets = Some(nets);
    }
    match engine::run(&resolved, &options) {
        Ok(output) => {
            write_run_artifacts(&dir, &output)?;
            write_meta(&dir, "run", started)?;
            let captured = output.summary.capture_times.iter().filter(|t| t.is_some()).count();
            println!(
                "run: {} steps, {}/{} pursuers captured{}",
                output.summary.steps,
                captured,
                output.summary.capture_times.len(),
                match output.summary.all_captured_time {
                    Some(t) => format!(", all captured at t = {t}"),
                    None => String::new(),
                }
            );
            Ok(())
        }
        Err(EngineError::Divergence { time, reason, partial }) => {
            write_run_artifacts(&dir, &partial)?;
            write_meta(&dir, "run", started)?;
            Err(CliError::runtime(format!("diverged at t = {time}: {reason} (partial trace flushed)")))
        }
        Err(other) => Err(other.into()),
    }
}

fn engine_warm_nets(resolved: &cfg::Resolved) -> Result<learning::NetSet, CliError> {
    let s = &resolved.scenario;
    learning::warm_started_nets(
        &s.topology,
        &s.models,
        &s.weights,
        s.config.learning.include_neighbors,
        s.config.learning.critic_rate,
        s.config.learning.actor_rate,
        s.config.learning.stabilizer,
        s.config.learning.warm_start_horizon.unwrap_or(s.config.horizon.max(1.0)),
    )
    .map_err(CliError::runtime)
}

fn pi_cmd(common: &CommonArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let dir = out_dir(&common.out)?;
    let resolved = resolve(common)?;
    let result = match engine::run_policy_iteration(&resolved, &RunOptions::default()) {
        Ok(result) => result,
        Err(EngineError::Learning(LearningError::NonConvergence {
            iterations,
            last_change,
            residual_history,
        })) => {
            write_residual_history(&dir, &residual_history, &[])?;
            return Err(CliError::runtime(format!(
                "policy iteration did not converge within {iterations} iterations \
                 (last sup-norm change {last_change:.3e}); residual history written"
            )));
        }
        Err(other) => return Err(other.into()),
    };
    learning::save_weights(&dir.join("weights.csv"), &result.nets).map_err(CliError::io)?;
    write_residual_history(&dir, &result.residual_history, &result.value_change_history)?;
    let summary = serde_json::json!({
        "config_hash": resolved.scenario.config_hash,
        "iterations": result.iterations,
        "final_mean_abs_bellman_error": result.residual_history.last(),
        "final_sup_value_change": result.value_change_history.last(),
    });
    std::fs::write(dir.join("pi_summary.json"), serde_json::to_string_pretty(&summary).unwrap())
        .map_err(CliError::io)?;
    write_meta(&dir, "pi", started)?;
    println!(
        "pi: converged in {} iterations, final mean |bellman error| = {:.3e}",
        result.iterations,
        result.residual_history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn write_residual_history(
    dir: &Path,
    residuals: &[f64],
    value_changes: &[f64],
) -> Result<(), CliError> {
    let mut out = String::from("iteration,mean_abs_bellman_error,sup_value_change\n");
    for (k, r) in residuals.iter().enumerate() {
        let change = value_changes.get(k).map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", k + 1, r, change));
    }
    std::fs::write(dir.join("residual_history.csv"), out).map_err(CliError::io)
}

fn parse_agent(token: &str) -> Result<PlayerId, CliError> {
    let (side, rest) = match token.split_at(1) {
        ("p", rest) => (Side::Pursuer, rest),
        ("e", rest) => (Side::Evader, rest),
        _ => return Err(CliError::validation(format!("bad agent id {token:?} (want p0, e1, ...)"))),
    };
    rest.parse()
        .map(|index| PlayerId { side, index })
        .map_err(|_| CliError::validation(format!("bad agent id {token:?}")))
}

fn nash_cmd(
    common: &CommonArgs,
    factors: &[f64],
    rollouts: usize,
    agent: Option<&str>,
    weights_path: Option<&Path>,
) -> Result<(), CliError> {
    let started = Instant::now();
    let dir = out_dir(&common.out)?;
    let resolved = resolve(common)?;
    let nets = match weights_path {
        Some(path) => {
            let mut nets = engine_warm_nets(&resolved)?;
            learning::load_weights(path, &mut nets).map_err(CliError::validation)?;
            nets
        }
        None => engine::run_policy_iteration(&resolved, &RunOptions::default())?.nets,
    };
    let agents: Vec<PlayerId> = match agent {
        Some(token) => vec![parse_agent(token)?],
        None => nets.players(),
    };
    let mut rows = Vec::new();
    for id in agents {
        rows.extend(engine::nash_perturbation_check(&resolved, &nets, id, factors, rollouts)?);
    }
    let mut table = String::from("agent,factor,mean_index,std_index,rollouts\n");
    for row in &rows {
        table.push_str(&format!(
            "{},{},{},{},{}\n",
            row.agent, row.factor, row.mean_index, row.std_index, row.rollouts
        ));
    }
    std::fs::write(dir.join("deviation.csv"), &table).map_err(CliError::io)?;
    write_meta(&dir, "nash-check", started)?;
    print!("{table}");
    Ok(())
}

fn capture_study_cmd(common: &CommonArgs, paired: &Path, seeds: usize) -> Result<(), CliError> {
    let started = Instant::now();
    let dir = out_dir(&common.out)?;
    let primary = resolve(common)?;
    let paired_common = CommonArgs {
        config: paired.to_path_buf(),
        out: common.out.clone(),
        set: common.set.clone(),
        seed: common.seed,
    };
    let paired_resolved = resolve(&paired_common)?;
    let base_seed = common.seed.unwrap_or(primary.scenario.config.seed);
    let mut table = String::from("scenario,seed,all_captured,all_captured_time\n");
    let mut captured_counts = [0usize; 2];
    for (slot, (label, resolved)) in
        [("primary", &primary), ("paired", &paired_resolved)].iter().enumerate()
    {
        for s in 0..seeds {
            let seed = base_seed.wrapping_add(s as u64);
            let output = engine::run(resolved, &RunOptions { nets: None, seed: Some(seed) })?;
            let captured = output.summary.all_captured_time.is_some();
            if captured {
                captured_counts[slot] += 1;
            }
            table.push_str(&format!(
                "{label},{seed},{},{}\n",
                captured,
                output
                    .summary
                    .all_captured_time
                    .map(|t| t.to_string())
                    .unwrap_or_default()
            ));
        }
    }
    std::fs::write(dir.join("capture_study.csv"), &table).map_err(CliError::io)?;
    write_meta(&dir, "capture-study", started)?;
    print!("{table}");
    println!(
        "primary: captured {}/{seeds}; paired: captured {}/{seeds}",
        captured_counts[0], captured_counts[1]
    );
    Ok(())
}

fn export_plots_cmd(trace_path: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let dir = out_dir(&out)?;
    let table = tr::SimulationTrace::read_csv(trace_path)?;
    let n = table.meta_usize("state_dim")?;
    let n_p = table.meta_usize("pursuers")?;
    let n_e = table.meta_usize("evaders")?;
    let position_dim = table.meta_usize("position_dim")?;
    let time = table.column("time")?;

    let agents: Vec<String> = (0..n_p)
        .map(|i| format!("p{i}"))
        .chain((0..n_e).map(|j| format!("e{j}")))
        .collect();

    // trajectories: one row per step per agent
    let mut trajectories = String::from("time,agent");
    for d in 0..n {
        trajectories.push_str(&format!(",x{d}"));
    }
    trajectories.push('\n');
    for row in &table.rows {
        for agent in &agents {
            trajectories.push_str(&format!("{},{agent}", row[time]));
            for d in 0..n {
                let c = table.column(&format!("x_{agent}_{d}"))?;
                trajectories.push_str(&format!(",{}", row[c]));
            }
            trajectories.push('\n');
        }
    }
    write_table(&dir, "trajectories.csv", &trajectories)?;

    // pairwise pursuer-evader position distances
    let mut distances = String::from("time,pursuer,evader,distance\n");
    for row in &table.rows {
        for i in 0..n_p {
            for j in 0..n_e {
                let mut acc = 0.0;
                for d in 0..position_dim {
                    let cp = table.column(&format!("x_p{i}_{d}"))?;
                    let ce = table.column(&format!("x_e{j}_{d}"))?;
                    acc += (row[cp] - row[ce]) * (row[cp] - row[ce]);
                }
                distances.push_str(&format!("{},p{i},e{j},{}\n", row[time], acc.sqrt()));
            }
        }
    }
    write_table(&dir, "distances.csv", &distances)?;

    // critic estimates
    let mut vhat = String::from("time,agent,vhat\n");
    for row in &table.rows {
        for agent in &agents {
            let c = table.column(&format!("vhat_{agent}"))?;
            vhat.push_str(&format!("{},{agent},{}\n", row[time], row[c]));
        }
    }
    write_table(&dir, "vhat.csv", &vhat)?;

    // capture margins per pursuer
    let mut margins = String::from("time,pursuer,margin\n");
    for row in &table.rows {
        for i in 0..n_p {
            let c = table.column(&format!("margin_p{i}"))?;
            margins.push_str(&format!("{},p{i},{}\n", row[time], row[c]));
        }
    }
    write_table(&dir, "margins.csv", &margins)?;

    // weight norms
    let mut norms = String::from("time,agent,critic_norm,actor_norm\n");
    for row in &table.rows {
        for agent in &agents {
            let wc = table.column(&format!("wc_{agent}"))?;
            let wa = table.column(&format!("wa_{agent}"))?;
            norms.push_str(&format!("{},{agent},{},{}\n", row[time], row[wc], row[wa]));
        }
    }
    write_table(&dir, "weight_norms.csv", &norms)?;

    println!("export-plots: {} rows over {} agents -> {}", table.rows.len(), agents.len(), dir.display());
    Ok(())
}

fn write_table(dir: &Path, name: &str, body: &str) -> Result<(), CliError> {
    let mut file = std::fs::File::create(dir.join(name)).map_err(CliError::io)?;
    file.write_all(body.as_bytes()).map_err(CliError::io)
}
