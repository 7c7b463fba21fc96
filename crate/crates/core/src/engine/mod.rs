//! Deterministic simulation engine.
//!
//! A run advances all agent states with classical fourth-order Runge-Kutta
//! under zero-order-hold controls, applies one Euler update of every
//! critic and actor from the frozen pre-step snapshot (online mode),
//! invokes the rolling-horizon target selection at interval boundaries,
//! and records a trace row per step. Everything derives from the config
//! and the seed: one ChaCha stream per purpose (initial conditions,
//! per-agent exploration), so repeated runs are byte-identical.

pub mod config;
pub mod trace;

pub use config::{validate, ConfigError, InitSource, Mode, Resolved, Scenario, ScenarioConfig, SideInit};
pub use trace::{RunEvent, RunSummary, SimulationTrace, TraceError, TraceRecord};

use crate::costs::{self, CostError};
use crate::dynamics::{self, Controls, DynamicsError, ErrorSet, JointState};
use crate::learning::{self, LearningError, NetSet, PiParams, PiResult};
use crate::policy::{self, PolicyError};
use crate::targeting::{self, TargetingError};
use crate::{parallel, PlayerId, Side};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error(transparent)]
    Targeting(#[from] TargetingError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("simulation diverged at t = {time}: {reason}")]
    Divergence { time: f64, reason: String, partial: Box<RunOutput> },
    #[error("nash check needs a non-empty factor list")]
    EmptyFactors,
}

/// Everything a run produces.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trace: SimulationTrace,
    pub events: Vec<RunEvent>,
    pub summary: RunSummary,
    pub nets: NetSet,
}

/// Per-run options layered over the scenario.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Use these nets instead of the warm start (fixed-policy rollouts,
    /// perturbation studies, warm restarts).
    pub nets: Option<NetSet>,
    /// Replaces the config seed.
    pub seed: Option<u64>,
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Online => "online",
        Mode::OfflinePi => "offline_pi",
        Mode::FixedPolicy => "fixed_policy",
    }
}

/// Draws initial states: explicit positions or seeded uniform boxes
/// (stream 0 of the run's generator; pursuers drawn before evaders).
fn initial_state(resolved: &Resolved, seed: u64) -> JointState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let draw_side = |source: &SideInit, count: usize, rng: &mut ChaCha8Rng| match source {
        SideInit::Explicit(xs) => xs.clone(),
        SideInit::Box(b) => (0..count).map(|_| b.draw(rng)).collect(),
    };
    JointState {
        pursuer_states: draw_side(
            &resolved.init.pursuers,
            resolved.scenario.topology.n_pursuers(),
            &mut rng,
        ),
        evader_states: draw_side(
            &resolved.init.evaders,
            resolved.scenario.topology.n_evaders(),
            &mut rng,
        ),
        time: 0.0,
    }
}

fn warm_start(scenario: &Scenario) -> Result<NetSet, LearningError> {
    let pseudo = scenario
        .config
        .learning
        .warm_start_horizon
        .unwrap_or(scenario.config.horizon.max(1.0));
    learning::warm_started_nets(
        &scenario.topology,
        &scenario.models,
        &scenario.weights,
        scenario.config.learning.include_neighbors,
        scenario.config.learning.critic_rate,
        scenario.config.learning.actor_rate,
        scenario.config.learning.stabilizer,
        pseudo,
    )
}

/// Offline policy iteration with the scenario's sampling boxes.
pub fn run_policy_iteration(
    resolved: &Resolved,
    options: &RunOptions,
) -> Result<PiResult, EngineError> {
    let scenario = &resolved.scenario;
    let (pursuer_box, evader_box) = resolved.pi_boxes.clone().ok_or_else(|| {
        ConfigError::Invalid {
            violations: vec!["pi: sampling boxes required (pi.* or init.* boxes)".into()],
        }
    })?;
    let nets = match &options.nets {
        Some(nets) => nets.clone(),
        None => warm_start(scenario)?,
    };
    let params = PiParams {
        samples: scenario.config.pi.samples,
        tolerance: scenario.config.pi.tolerance,
        max_iters: scenario.config.pi.max_iters,
        seed: options.seed.unwrap_or(scenario.config.seed),
        relaxation: scenario.config.pi.relaxation,
        pursuer_box,
        evader_box,
    };
    Ok(learning::policy_iteration(
        &scenario.topology,
        &scenario.models,
        &scenario.weights,
        nets,
        &params,
    )?)
}

struct StepSnapshot {
    errors: ErrorSet,
    controls: Controls,
}

/// Exploration amplitude at time t: linear decay to zero at
/// `end_frac * horizon`.
fn exploration_amplitude(amplitude0: f64, end_frac: f64, t: f64, horizon: f64) -> f64 {
    if amplitude0 <= 0.0 || end_frac <= 0.0 || horizon <= 0.0 {
        return 0.0;
    }
    let end = end_frac * horizon;
    if t >= end {
        0.0
    } else {
        amplitude0 * (1.0 - t / end)
    }
}

/// Advances one agent's state by RK4 under a constant control.
fn rk4_state(model: &crate::dynamics::AgentModel, x: &DVector<f64>, u: &DVector<f64>, h: f64) -> DVector<f64> {
    let forcing = &model.b_matrix * u;
    let f = |x: &DVector<f64>| &model.a_matrix * x + &forcing;
    let k1 = f(x);
    let k2 = f(&(x + &k1 * (h / 2.0)));
    let k3 = f(&(x + &k2 * (h / 2.0)));
    let k4 = f(&(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Runs the scenario to completion (or early capture stop).
pub fn run(resolved: &Resolved, options: &RunOptions) -> Result<RunOutput, EngineError> {
    let scenario = &resolved.scenario;
    let cfg = &scenario.config;
    let seed = options.seed.unwrap_or(cfg.seed);
    let h = cfg.step;
    let total_steps = (cfg.horizon / h).round() as usize;
    let steps_per_interval = if scenario.targeting_enabled {
        (scenario.targeting.interval / h).round() as usize
    } else {
        usize::MAX
    };

    let mut nets = match (&options.nets, cfg.mode) {
        (Some(nets), _) => nets.clone(),
        (None, Mode::OfflinePi) => run_policy_iteration(resolved, options)?.nets,
        (None, _) => warm_start(scenario)?,
    };
    let online = cfg.mode == Mode::Online;

    let mut top = scenario.topology.clone();
    let models = &scenario.models;
    let weights = &scenario.weights;
    let players = nets.players();

    // one noise stream per agent, fixed offsets from the run seed
    let mut noise_rngs: Vec<ChaCha8Rng> = players
        .iter()
        .enumerate()
        .map(|(slot, _)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(slot as u64 + 1);
            rng
        })
        .collect();

    let mut state = initial_state(resolved, seed);
    let mut events: Vec<RunEvent> = Vec::new();
    let mut halted = vec![false; top.n_pursuers()];
    let mut capture_times: Vec<Option<f64>> = vec![None; top.n_pursuers()];
    let mut all_captured_time = None;
    let mut early_stopped = false;

    let mut trace = SimulationTrace {
        config_hash: scenario.config_hash.clone(),
        step: h,
        state_dim: models.state_dim(),
        input_dim: models.input_dim(),
        n_pursuers: top.n_pursuers(),
        n_evaders: top.n_evaders(),
        position_dim: scenario.targeting.position_dim,
        records: Vec::with_capacity(total_steps + 1),
    };

    let mut k = 0usize;
    loop {
        let t = k as f64 * h;
        state.time = t;

        // rolling-horizon selection at interval boundaries (not at t_f)
        if scenario.targeting_enabled && k < total_steps && k % steps_per_interval == 0 {
            let errors = dynamics::all_local_errors(&state, &top)?;
            let controls = learning::all_actor_controls(&nets, &errors, &top, weights, models)?;
            let mut targeting_events = Vec::new();
            targeting::rolling_horizon_step(
                &state,
                &mut top,
                models,
                weights,
                &controls,
                t,
                cfg.horizon,
                &scenario.targeting,
                k / steps_per_interval,
                &mut halted,
                &mut targeting_events,
            )?;
            events.extend(targeting_events.into_iter().map(RunEvent::Targeting));
        }

        // frozen snapshot: errors, controls (with exploration), diagnostics
        let errors = dynamics::all_local_errors(&state, &top)?;
        let mut controls = learning::all_actor_controls(&nets, &errors, &top, weights, models)?;
        if online {
            let amp_frac = exploration_amplitude(
                cfg.learning.exploration_amplitude,
                cfg.learning.exploration_end_frac,
                t,
                cfg.horizon,
            );
            if amp_frac > 0.0 {
                for (slot, id) in players.iter().enumerate() {
                    let bound = models.get(*id)?.input_bound;
                    let amp = amp_frac * bound;
                    let rng = &mut noise_rngs[slot];
                    let clamp = bound * crate::policy::TANH_CLAMP;
                    let u = match id.side {
                        Side::Pursuer => &mut controls.pursuer_inputs[id.index],
                        Side::Evader => &mut controls.evader_inputs[id.index],
                    };
                    for c in u.iter_mut() {
                        *c = (*c + rng.gen_range(-amp..amp)).clamp(-clamp, clamp);
                    }
                }
            }
        }
        let snapshot = StepSnapshot { errors, controls };

        // record
        let mut value_pursuers = Vec::with_capacity(top.n_pursuers());
        let mut value_evaders = Vec::with_capacity(top.n_evaders());
        let mut cost_pursuers = Vec::with_capacity(top.n_pursuers());
        let mut cost_evaders = Vec::with_capacity(top.n_evaders());
        let mut critic_norms = Vec::with_capacity(players.len());
        let mut actor_norms = Vec::with_capacity(players.len());
        for id in &players {
            let critic = nets.critic(*id);
            let z = critic.spec.stack(&snapshot.errors);
            let v = critic.estimate(&z)?;
            let cost = costs::running_cost(*id, &snapshot.errors, &snapshot.controls, &top, weights, models)?;
            match id.side {
                Side::Pursuer => {
                    value_pursuers.push(v);
                    cost_pursuers.push(cost);
                }
                Side::Evader => {
                    value_evaders.push(v);
                    cost_evaders.push(cost);
                }
            }
            critic_norms.push(critic.weights.norm());
            actor_norms.push(nets.actor(*id).weights.norm());
        }
        let margins: Vec<f64> = (0..top.n_pursuers())
            .map(|i| {
                policy::capture_margin(PlayerId::pursuer(i), &snapshot.controls, &top, weights, models)
            })
            .collect::<Result<_, _>>()?;
        let mut game_weights = nalgebra::DMatrix::zeros(top.n_pursuers(), top.n_evaders());
        for i in 0..top.n_pursuers() {
            for j in 0..top.n_evaders() {
                game_weights[(i, j)] = top.game_weight(i, j);
            }
        }
        trace.records.push(TraceRecord {
            time: t,
            state: state.clone(),
            controls: snapshot.controls.clone(),
            errors_pursuers: snapshot.errors.pursuers.iter().map(|e| e.stacked()).collect(),
            errors_evaders: snapshot.errors.evaders.iter().map(|e| e.stacked()).collect(),
            value_pursuers,
            value_evaders,
            margins: margins.clone(),
            running_cost_pursuers: cost_pursuers,
            running_cost_evaders: cost_evaders,
            critic_norms,
            actor_norms,
            game_weights,
        });

        // capture bookkeeping on the current state
        let status = targeting::capture_monitor(&state, &top, &scenario.targeting);
        for (i, hit) in status.iter().enumerate() {
            if capture_times[i].is_none() {
                if let Some(j) = hit {
                    capture_times[i] = Some(t);
                    events.push(RunEvent::Capture { time: t, pursuer: i, evader: *j });
                }
            }
        }
        if all_captured_time.is_none() && capture_times.iter().all(Option::is_some) {
            all_captured_time = Some(t);
            events.push(RunEvent::AllCaptured { time: t });
            if k < total_steps {
                early_stopped = true;
                events.push(RunEvent::EarlyStop { time: t });
            }
            break;
        }
        if k >= total_steps {
            break;
        }

        // integrate (zero-order hold)
        for (i, x) in state.pursuer_states.iter_mut().enumerate() {
            *x = rk4_state(&models.pursuers[i], x, &snapshot.controls.pursuer_inputs[i], h);
        }
        for (j, x) in state.evader_states.iter_mut().enumerate() {
            *x = rk4_state(&models.evaders[j], x, &snapshot.controls.evader_inputs[j], h);
        }
        if !state.all_finite() {
            let summary = summarize(cfg, scenario, &trace, &capture_times, all_captured_time, &margins, &nets, early_stopped);
            events.push(RunEvent::DivergenceAbort {
                time: t + h,
                reason: "non-finite state after integration".into(),
            });
            return Err(EngineError::Divergence {
                time: t + h,
                reason: "non-finite state after integration".into(),
                partial: Box::new(RunOutput { trace, events, summary, nets }),
            });
        }

        // learning updates from the frozen snapshot, committed afterwards
        if online {
            let updates: Vec<Result<(DVector<f64>, DVector<f64>), LearningError>> =
                parallel::map(&players, |id| {
                    let critic = nets.critic(*id);
                    let (zeta, sigma) = learning::bellman_parts(
                        *id,
                        critic,
                        &snapshot.controls,
                        &snapshot.errors,
                        &top,
                        weights,
                        models,
                    )?;
                    let mut critic_next = critic.clone();
                    learning::critic_update(&mut critic_next, zeta, &sigma, h)?;
                    let mut actor_next = nets.actor(*id).clone();
                    let z = actor_next.spec.stack(&snapshot.errors);
                    let b_bar = dynamics::b_bar(*id, &top, models)?;
                    learning::actor_update(
                        &mut actor_next,
                        critic,
                        &z,
                        &b_bar,
                        &weights.get(*id).r_diag,
                        models.get(*id)?.input_bound,
                        h,
                    )?;
                    Ok((critic_next.weights, actor_next.weights))
                });
            for (slot, update) in updates.into_iter().enumerate() {
                let (wc, wa) = update?;
                let id = players[slot];
                nets.critic_mut(id).weights = wc;
                nets.actor_mut(id).weights = wa;
            }
        }

        k += 1;
    }

    let final_margins = trace.records.last().map(|r| r.margins.clone()).unwrap_or_default();
    let summary = summarize(
        cfg,
        scenario,
        &trace,
        &capture_times,
        all_captured_time,
        &final_margins,
        &nets,
        early_stopped,
    );
    Ok(RunOutput { trace, events, summary, nets })
}

#[allow(clippy::too_many_arguments)]
fn summarize(
    cfg: &ScenarioConfig,
    scenario: &Scenario,
    trace: &SimulationTrace,
    capture_times: &[Option<f64>],
    all_captured_time: Option<f64>,
    final_margins: &[f64],
    nets: &NetSet,
    early_stopped: bool,
) -> RunSummary {
    RunSummary {
        config_hash: scenario.config_hash.clone(),
        mode: mode_name(cfg.mode).to_string(),
        steps: trace.records.len().saturating_sub(1),
        end_time: trace.records.last().map(|r| r.time).unwrap_or(0.0),
        early_stopped,
        capture_times: capture_times.to_vec(),
        all_captured_time,
        final_margins: final_margins.to_vec(),
        final_critic_norms: nets.players().iter().map(|id| nets.critic(*id).weights.norm()).collect(),
        final_actor_norms: nets.players().iter().map(|id| nets.actor(*id).weights.norm()).collect(),
    }
}

/// Realized index of `owner` over a recorded trace.
pub fn trace_index(
    owner: PlayerId,
    trace: &SimulationTrace,
    scenario: &Scenario,
) -> Result<f64, EngineError> {
    let mut errors = Vec::with_capacity(trace.records.len());
    let mut tops = Vec::with_capacity(trace.records.len());
    for idx in 0..trace.records.len() {
        errors.push(trace.errors_of(idx));
        tops.push(trace.topology_of(idx, &scenario.topology));
    }
    let steps: Vec<costs::IndexStep> = trace
        .records
        .iter()
        .zip(errors.iter().zip(tops.iter()))
        .map(|(rec, (errors, top))| costs::IndexStep { errors, controls: &rec.controls, top })
        .collect();
    Ok(costs::index_evaluate(owner, trace.step, &steps, &scenario.weights, &scenario.models)?)
}

/// One row of the deviation table.
#[derive(Clone, Debug, serde::Serialize)]
pub struct DeviationRow {
    pub agent: String,
    pub factor: f64,
    pub mean_index: f64,
    pub std_index: f64,
    pub rollouts: usize,
}

/// Scales one agent's actor weights by each factor and measures its own
/// realized index over seeded fixed-policy rollouts (all rollouts share
/// the seed sequence, so rows are paired across factors). A factor of 1 is
/// always evaluated as the baseline.
pub fn nash_perturbation_check(
    resolved: &Resolved,
    nets: &NetSet,
    agent: PlayerId,
    factors: &[f64],
    rollouts: usize,
) -> Result<Vec<DeviationRow>, EngineError> {
    if factors.is_empty() {
        return Err(EngineError::EmptyFactors);
    }
    let mut all_factors = vec![1.0];
    all_factors.extend(factors.iter().copied().filter(|f| *f != 1.0));
    let scenario = &resolved.scenario;

    // force fixed-policy rollouts regardless of the scenario's own mode
    let mut rollout_config = scenario.config.clone();
    rollout_config.mode = Mode::FixedPolicy;
    let rollout_resolved = config::resolve(&rollout_config)?;

    let mut rows = Vec::new();
    for &factor in &all_factors {
        let mut perturbed = nets.clone();
        perturbed.actor_mut(agent).weights *= factor;
        let indices: Vec<Result<f64, EngineError>> = parallel::map_range(rollouts, |r| {
            let options = RunOptions {
                nets: Some(perturbed.clone()),
                seed: Some(scenario.config.seed.wrapping_add(1000 + r as u64)),
            };
            let output = run(&rollout_resolved, &options)?;
            trace_index(agent, &output.trace, scenario)
        });
        let mut values = Vec::with_capacity(rollouts);
        for idx in indices {
            values.push(idx?);
        }
        let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (values.len() - 1) as f64
        } else {
            0.0
        };
        rows.push(DeviationRow {
            agent: agent.to_string(),
            factor,
            mean_index: mean,
            std_index: var.sqrt(),
            rollouts,
        });
    }
    Ok(rows)
}
