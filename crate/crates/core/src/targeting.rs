//! Rolling-horizon target selection on the game-weight layer.
//!
//! At fixed intervals each pursuer screens its neighboring evaders twice:
//! first against a reachable-domain ball over the remaining horizon
//! (guaranteed-interception test: own reach minus the evader's reach must
//! cover the propagated separation), then against the capture-condition
//! margin, keeping the largest nearest-first prefix whose margin clears
//! chi. Dropped evaders get game weight zero, permanently. A pursuer's
//! procedure halts for good once a single active evader remains.

use crate::costs::{self, WeightSet};
use crate::dynamics::{Controls, JointState, ModelSet};
use crate::linalg;
use crate::policy::PolicyError;
use crate::topology::{BiLayerTopology, TopologyError};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TargetingError {
    #[error("horizon must be nonnegative, got {0}")]
    NegativeHorizon(f64),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Ball overapproximating the states reachable within a horizon.
#[derive(Clone, Debug)]
pub struct ReachableBall {
    pub center: DVector<f64>,
    pub radius: f64,
    pub horizon: f64,
}

/// One pursuer's current target set.
#[derive(Clone, Debug)]
pub struct TargetSet {
    pub owner: usize,
    pub active_evaders: Vec<usize>,
    pub interval_index: usize,
    pub chi: f64,
}

/// Selection knobs shared by all pursuers.
#[derive(Clone, Debug)]
pub struct TargetingParams {
    /// Selection interval T.
    pub interval: f64,
    /// Capture-condition margin.
    pub chi: f64,
    pub capture_radius: f64,
    /// Quadrature step of the reachable-radius integral.
    pub quadrature_step: f64,
    /// Distances use the first `position_dim` state coordinates.
    pub position_dim: usize,
}

/// What the selection did, for the run's event stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetAction {
    ExcludeUnreachable,
    ExcludeMargin,
    HaltSingleTarget,
    EmptyTargetWarning,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetingEvent {
    pub time: f64,
    pub pursuer: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evader: Option<usize>,
    pub action: TargetAction,
}

/// Radius of the input-reach ball:
/// `bound sqrt(m) integral_0^T |exp(A tau) B|_2 dtau`
/// by composite trapezoid at `quadrature_step`.
pub fn reachable_radius(
    model: &crate::dynamics::AgentModel,
    horizon: f64,
    quadrature_step: f64,
) -> Result<f64, TargetingError> {
    if horizon < 0.0 {
        return Err(TargetingError::NegativeHorizon(horizon));
    }
    if horizon == 0.0 {
        return Ok(0.0);
    }
    let steps = (horizon / quadrature_step).ceil().max(1.0) as usize;
    let dt = horizon / steps as f64;
    let e_step = linalg::matrix_exp(&(&model.a_matrix * dt));
    let mut propagated = model.b_matrix.clone();
    let mut integral = 0.5 * linalg::spectral_norm(&propagated);
    for k in 1..=steps {
        propagated = &e_step * propagated;
        let weight = if k == steps { 0.5 } else { 1.0 };
        integral += weight * linalg::spectral_norm(&propagated);
    }
    let m = model.input_dim() as f64;
    Ok(model.input_bound * m.sqrt() * integral * dt)
}

/// Zero-input propagated center plus input-reach radius.
pub fn reachable_ball(
    model: &crate::dynamics::AgentModel,
    state: &DVector<f64>,
    horizon: f64,
    quadrature_step: f64,
) -> Result<ReachableBall, TargetingError> {
    let radius = reachable_radius(model, horizon, quadrature_step)?;
    let center = linalg::matrix_exp(&(&model.a_matrix * horizon)) * state;
    Ok(ReachableBall { center, radius, horizon })
}

fn position_distance(a: &DVector<f64>, b: &DVector<f64>, position_dim: usize) -> f64 {
    let dim = position_dim.min(a.len());
    (a.rows(0, dim) - b.rows(0, dim)).norm()
}

/// Screens pursuer `i`'s active evaders against the reachable domain over
/// the remaining horizon; unreachable evaders get game weight zero.
/// Pairs already inside the capture radius are always retained.
#[allow(clippy::too_many_arguments)]
pub fn update_evader_set(
    owner: usize,
    state: &JointState,
    top: &mut BiLayerTopology,
    models: &ModelSet,
    t_now: f64,
    t_f: f64,
    params: &TargetingParams,
    interval_index: usize,
    events: &mut Vec<TargetingEvent>,
) -> Result<TargetSet, TargetingError> {
    let remaining = (t_f - t_now).max(0.0);
    let pursuer_model = &models.pursuers[owner];
    let own_radius = reachable_radius(pursuer_model, remaining, params.quadrature_step)?;
    let flow = linalg::matrix_exp(&(&pursuer_model.a_matrix * remaining));
    let x_p = &state.pursuer_states[owner];
    let mut active = Vec::new();
    for j in top.active_opponents(owner) {
        let x_e = &state.evader_states[j];
        let within_capture =
            position_distance(x_p, x_e, params.position_dim) <= params.capture_radius;
        let evader_radius =
            reachable_radius(&models.evaders[j], remaining, params.quadrature_step)?;
        let propagated_gap = (&flow * (x_p - x_e)).norm();
        if within_capture || propagated_gap <= own_radius - evader_radius {
            active.push(j);
        } else {
            top.set_game_weight(owner, j, 0.0)?;
            events.push(TargetingEvent {
                time: t_now,
                pursuer: owner,
                evader: Some(j),
                action: TargetAction::ExcludeUnreachable,
            });
        }
    }
    Ok(TargetSet { owner, active_evaders: active, interval_index, chi: params.chi })
}

/// Capture-condition margin of pursuer `owner` against a candidate evader
/// set: own plus weighted teammate energies minus the candidates' weighted
/// energies.
pub fn margin_over(
    owner: usize,
    candidates: &[usize],
    controls: &Controls,
    top: &BiLayerTopology,
    weights: &WeightSet,
    models: &ModelSet,
) -> Result<f64, TargetingError> {
    let mut margin = costs::energy_integral(
        &controls.pursuer_inputs[owner],
        models.pursuers[owner].input_bound,
        &weights.pursuers[owner].r_diag,
    )
    .map_err(PolicyError::Cost)?;
    for k in 0..top.n_pursuers() {
        let c = top.gp.weight(owner, k);
        if k != owner && c > 0.0 {
            margin += c
                * costs::energy_integral(
                    &controls.pursuer_inputs[k],
                    models.pursuers[k].input_bound,
                    &weights.pursuers[k].r_diag,
                )
                .map_err(PolicyError::Cost)?;
        }
    }
    for &j in candidates {
        margin -= top.effective_pe_weight(owner, j)
            * costs::energy_integral(
                &controls.evader_inputs[j],
                models.evaders[j].input_bound,
                &weights.evaders[j].r_diag,
            )
            .map_err(PolicyError::Cost)?;
    }
    Ok(margin)
}

/// Keeps the largest nearest-first prefix of the target set whose margin
/// clears chi (at least the nearest evader stays); the rest get game
/// weight zero.
#[allow(clippy::too_many_arguments)]
pub fn enforce_capture_condition(
    target_set: &TargetSet,
    state: &JointState,
    controls: &Controls,
    top: &mut BiLayerTopology,
    weights: &WeightSet,
    models: &ModelSet,
    params: &TargetingParams,
    t_now: f64,
    events: &mut Vec<TargetingEvent>,
) -> Result<TargetSet, TargetingError> {
    let owner = target_set.owner;
    if target_set.active_evaders.is_empty() {
        events.push(TargetingEvent {
            time: t_now,
            pursuer: owner,
            evader: None,
            action: TargetAction::EmptyTargetWarning,
        });
        return Ok(target_set.clone());
    }
    let x_p = &state.pursuer_states[owner];
    let mut by_distance = target_set.active_evaders.clone();
    by_distance.sort_by(|&a, &b| {
        let da = position_distance(x_p, &state.evader_states[a], params.position_dim);
        let db = position_distance(x_p, &state.evader_states[b], params.position_dim);
        da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut keep = 1;
    for len in (1..=by_distance.len()).rev() {
        if margin_over(owner, &by_distance[..len], controls, top, weights, models)?
            >= target_set.chi
        {
            keep = len;
            break;
        }
    }
    for &j in &by_distance[keep..] {
        top.set_game_weight(owner, j, 0.0)?;
        events.push(TargetingEvent {
            time: t_now,
            pursuer: owner,
            evader: Some(j),
            action: TargetAction::ExcludeMargin,
        });
    }
    Ok(TargetSet {
        owner,
        active_evaders: by_distance[..keep].to_vec(),
        interval_index: target_set.interval_index,
        chi: target_set.chi,
    })
}

/// One rolling-horizon selection pass over all pursuers (ascending id).
/// Pursuers whose active set has already shrunk to one are permanently
/// halted and skipped.
#[allow(clippy::too_many_arguments)]
pub fn rolling_horizon_step(
    state: &JointState,
    top: &mut BiLayerTopology,
    models: &ModelSet,
    weights: &WeightSet,
    controls: &Controls,
    t_now: f64,
    t_f: f64,
    params: &TargetingParams,
    interval_index: usize,
    halted: &mut [bool],
    events: &mut Vec<TargetingEvent>,
) -> Result<(), TargetingError> {
    for i in 0..top.n_pursuers() {
        if halted[i] {
            continue;
        }
        if top.active_opponents(i).len() <= 1 {
            halted[i] = true;
            events.push(TargetingEvent {
                time: t_now,
                pursuer: i,
                evader: None,
                action: TargetAction::HaltSingleTarget,
            });
            continue;
        }
        let set = update_evader_set(
            i,
            state,
            top,
            models,
            t_now,
            t_f,
            params,
            interval_index,
            events,
        )?;
        let set = enforce_capture_condition(
            &set, state, controls, top, weights, models, params, t_now, events,
        )?;
        if set.active_evaders.len() == 1 {
            halted[i] = true;
            events.push(TargetingEvent {
                time: t_now,
                pursuer: i,
                evader: None,
                action: TargetAction::HaltSingleTarget,
            });
        }
    }
    Ok(())
}

/// Capture status of every pursuer: the nearest active evader within the
/// capture radius, if any.
pub fn capture_monitor(
    state: &JointState,
    top: &BiLayerTopology,
    params: &TargetingParams,
) -> Vec<Option<usize>> {
    (0..top.n_pursuers())
        .map(|i| {
            let x_p = &state.pursuer_states[i];
            let mut best: Option<(usize, f64)> = None;
            for j in top.active_opponents(i) {
                let d = position_distance(x_p, &state.evader_states[j], params.position_dim);
                if d <= params.capture_radius && best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
            best.map(|(j, _)| j)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::{AltruismParams, CostWeights};
    use crate::dynamics::AgentModel;
    use crate::topology::{CommGraph, CrossGraph};
    use crate::Side;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use std::collections::HashMap;

    fn params() -> TargetingParams {
        TargetingParams {
            interval: 1.0,
            chi: 0.05,
            capture_radius: 0.1,
            quadrature_step: 0.005,
            position_dim: 2,
        }
    }

    fn single_integrator(bound: f64, side: Side) -> AgentModel {
        AgentModel {
            a_matrix: DMatrix::zeros(2, 2),
            b_matrix: DMatrix::identity(2, 2),
            input_bound: bound,
            side,
        }
    }

    fn double_integrator(bound: f64, side: Side) -> AgentModel {
        AgentModel {
            a_matrix: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            b_matrix: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            input_bound: bound,
            side,
        }
    }

    #[test]
    fn radius_zero_horizon() {
        let model = single_integrator(1.0, Side::Pursuer);
        assert_eq!(reachable_radius(&model, 0.0, 0.01).unwrap(), 0.0);
        assert!(reachable_radius(&model, -1.0, 0.01).is_err());
    }

    #[test]
    fn radius_single_integrator_is_linear() {
        // A = 0, B = I (1x1), bound u: radius = u * T
        let model = AgentModel {
            a_matrix: DMatrix::zeros(1, 1),
            b_matrix: DMatrix::identity(1, 1),
            input_bound: 0.7,
            side: Side::Pursuer,
        };
        let r = reachable_radius(&model, 3.0, 0.01).unwrap();
        assert_relative_eq!(r, 0.7 * 3.0, epsilon = 1e-12);
    }

    #[test]
    fn radius_double_integrator_vs_extremal_controls() {
        // the ball radius must cover, and stay within 5% of, the true
        // input-reach: sup over directions of bound * int |d' exp(A tau) B|
        let bound = 1.3;
        let model = double_integrator(bound, Side::Pursuer);
        let horizon = 1.0;
        let radius = reachable_radius(&model, horizon, 0.001).unwrap();
        let mut extremal: f64 = 0.0;
        let quad_steps = 4000;
        let dt = horizon / quad_steps as f64;
        for dir in 0..720 {
            let theta = std::f64::consts::PI * dir as f64 / 360.0;
            let d = (theta.cos(), theta.sin());
            // exp(A tau) B = [tau, 1]'
            let mut integral = 0.0;
            for k in 0..=quad_steps {
                let tau = k as f64 * dt;
                let w = if k == 0 || k == quad_steps { 0.5 } else { 1.0 };
                integral += w * (d.0 * tau + d.1).abs();
            }
            extremal = extremal.max(bound * integral * dt);
        }
        assert!(radius >= extremal, "ball {radius} fails to cover reach {extremal}");
        let gap = (radius - extremal) / extremal;
        assert!(gap < 0.05, "ball is too loose: relative gap {gap}");
    }

    #[test]
    fn ball_center_is_zero_input_propagation() {
        let model = double_integrator(1.0, Side::Pursuer);
        let x = DVector::from_row_slice(&[2.0, -0.5]);
        let ball = reachable_ball(&model, &x, 3.0, 0.01).unwrap();
        // exp(A t) for the double integrator shears position by velocity
        assert_relative_eq!(ball.center[0], 2.0 + 3.0 * -0.5, epsilon = 1e-12);
        assert_relative_eq!(ball.center[1], -0.5, epsilon = 1e-12);
        assert!(ball.radius > 0.0);
        assert_eq!(ball.horizon, 3.0);
    }

    #[test]
    fn radius_monotone_in_horizon_and_bound() {
        let grid = [0.25, 0.5, 1.0, 2.0, 4.0];
        for side_bound in [0.3, 0.8, 1.5] {
            let mut last = -1.0;
            for &t in &grid {
                let model = double_integrator(side_bound, Side::Pursuer);
                let r = reachable_radius(&model, t, 0.01).unwrap();
                assert!(r > last);
                last = r;
            }
        }
        let mut last = -1.0;
        for bound in [0.1, 0.5, 1.0, 2.0] {
            let r = reachable_radius(&double_integrator(bound, Side::Pursuer), 1.0, 0.01).unwrap();
            assert!(r > last);
            last = r;
        }
    }

    fn game(
        n_p: usize,
        n_e: usize,
        p_bound: f64,
        e_bound: f64,
    ) -> (BiLayerTopology, ModelSet, WeightSet) {
        let mut gp = DMatrix::from_element(n_p, n_p, 1.0);
        gp.fill_diagonal(0.0);
        let ge = DMatrix::zeros(n_e, n_e);
        let top = BiLayerTopology::new(
            CommGraph::new(gp).unwrap(),
            CommGraph::new(ge).unwrap(),
            CrossGraph::new(
                DMatrix::from_element(n_p, n_e, 1.0),
                DMatrix::from_element(n_e, n_p, 1.0),
            )
            .unwrap(),
        )
        .unwrap();
        let models = ModelSet::new(
            (0..n_p).map(|_| single_integrator(p_bound, Side::Pursuer)).collect(),
            (0..n_e).map(|_| single_integrator(e_bound, Side::Evader)).collect(),
        )
        .unwrap();
        let mk = || CostWeights {
            lambda_team: DMatrix::identity(2, 2),
            lambda_cross: DMatrix::identity(2, 2),
            r_diag: DVector::from_element(2, 1.0),
            q_cross_team: HashMap::new(),
            q_cross_opp: HashMap::new(),
            terminal_scale: 1.0,
            altruism: AltruismParams { mu: 0.0, eta: 0.0, gamma: DMatrix::zeros(2, 2), rho: 0.0 },
        };
        let weights = WeightSet {
            pursuers: (0..n_p).map(|_| mk()).collect(),
            evaders: (0..n_e).map(|_| mk()).collect(),
        };
        (top, models, weights)
    }

    #[test]
    fn colocated_evader_is_retained() {
        let (mut top, models, _) = game(1, 1, 0.5, 1.0);
        let state = JointState {
            pursuer_states: vec![DVector::from_row_slice(&[1.0, 1.0])],
            evader_states: vec![DVector::from_row_slice(&[1.0, 1.05])],
            time: 0.0,
        };
        let mut events = Vec::new();
        let set =
            update_evader_set(0, &state, &mut top, &models, 0.0, 10.0, &params(), 0, &mut events)
                .unwrap();
        // slower pursuer, but the pair is already inside the capture radius
        assert_eq!(set.active_evaders, vec![0]);
        assert!(events.is_empty());
    }

    #[test]
    fn poor_mobility_pursuer_drops_distant_evader() {
        let (mut top, models, _) = game(1, 1, 0.5, 1.0);
        let state = JointState {
            pursuer_states: vec![DVector::zeros(2)],
            evader_states: vec![DVector::from_row_slice(&[5.0, 0.0])],
            time: 0.0,
        };
        let mut events = Vec::new();
        let set =
            update_evader_set(0, &state, &mut top, &models, 0.0, 10.0, &params(), 0, &mut events)
                .unwrap();
        assert!(set.active_evaders.is_empty());
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].action, TargetAction::ExcludeUnreachable);
        assert_eq!(top.effective_pe_weight(0, 0), 0.0);
    }

    #[test]
    fn exclusions_are_permanent_under_shrinking_horizon() {
        // fast pursuer, evader reachable at first, then excluded as the
        // remaining horizon shrinks; later calls never re-add it
        let (mut top, models, _) = game(1, 1, 1.2, 1.0);
        let state = JointState {
            pursuer_states: vec![DVector::zeros(2)],
            evader_states: vec![DVector::from_row_slice(&[1.5, 0.0])],
            time: 0.0,
        };
        let mut events = Vec::new();
        let mut excluded_at = None;
        for k in 0..10u64 {
            let t = k as f64;
            let set = update_evader_set(
                0, &state, &mut top, &models, t, 10.0, &params(), k as usize, &mut events,
            )
            .unwrap();
            if set.active_evaders.is_empty() && excluded_at.is_none() {
                excluded_at = Some(k);
            }
            if excluded_at.is_some() {
                assert!(set.active_evaders.is_empty(), "evader re-added at interval {k}");
            }
        }
        // reach slack at t: 0.2 * sqrt(2) * (10 - t) vs separation 1.5
        assert_eq!(excluded_at, Some(5));
    }

    fn controls_with_energy(top: &BiLayerTopology, pursuer_u: f64, evader_vs: &[f64]) -> Controls {
        Controls {
            pursuer_inputs: (0..top.n_pursuers())
                .map(|_| DVector::from_row_slice(&[pursuer_u, 0.0]))
                .collect(),
            evader_inputs: evader_vs
                .iter()
                .map(|&v| DVector::from_row_slice(&[v, 0.0]))
                .collect(),
        }
    }

    #[test]
    fn single_evader_always_retained() {
        let (mut top, models, weights) = game(1, 1, 1.0, 1.0);
        let state = JointState {
            pursuer_states: vec![DVector::zeros(2)],
            evader_states: vec![DVector::from_row_slice(&[1.0, 0.0])],
            time: 0.0,
        };
        // evader spends far more energy than the pursuer: margin < chi
        let controls = controls_with_energy(&top, 0.1, &[0.9]);
        let set = TargetSet { owner: 0, active_evaders: vec![0], interval_index: 0, chi: 0.05 };
        let mut events = Vec::new();
        let out = enforce_capture_condition(
            &set, &state, &controls, &mut top, &weights, &models, &params(), 0.0, &mut events,
        )
        .unwrap();
        assert_eq!(out.active_evaders, vec![0]);
        assert_eq!(top.effective_pe_weight(0, 0), 1.0);
    }

    #[test]
    fn idle_evaders_keep_full_set() {
        let (mut top, models, weights) = game(2, 3, 1.0, 1.0);
        let state = JointState {
            pursuer_states: vec![DVector::zeros(2), DVector::from_row_slice(&[0.5, 0.0])],
            evader_states: vec![
                DVector::from_row_slice(&[1.0, 0.0]),
                DVector::from_row_slice(&[2.0, 0.0]),
                DVector::from_row_slice(&[3.0, 0.0]),
            ],
            time: 0.0,
        };
        let controls = controls_with_energy(&top, 0.5, &[0.0, 0.0, 0.0]);
        let set =
            TargetSet { owner: 0, active_evaders: vec![0, 1, 2], interval_index: 0, chi: 0.05 };
        let mut events = Vec::new();
        let out = enforce_capture_condition(
            &set, &state, &controls, &mut top, &weights, &models, &params(), 0.0, &mut events,
        )
        .unwrap();
        assert_eq!(out.active_evaders.len(), 3);
        assert!(events.is_empty());
    }

    #[test]
    fn margin_prefix_selection_matches_brute_force() {
        let (mut top, models, weights) = game(1, 3, 1.0, 1.0);
        let state = JointState {
            pursuer_states: vec![DVector::zeros(2)],
            evader_states: vec![
                DVector::from_row_slice(&[1.0, 0.0]),
                DVector::from_row_slice(&[2.0, 0.0]),
                DVector::from_row_slice(&[3.0, 0.0]),
            ],
            time: 0.0,
        };
        // energies tuned so only the two nearest evaders fit the margin
        let controls = controls_with_energy(&top, 0.6, &[0.2, 0.25, 0.5]);
        let chi = 0.05;
        // brute-force prefix enumeration oracle
        let mut expected = 1;
        for len in (1..=3).rev() {
            let m =
                margin_over(0, &(0..len).collect::<Vec<_>>(), &controls, &top, &weights, &models)
                    .unwrap();
            if m >= chi {
                expected = len;
                break;
            }
        }
        assert_eq!(expected, 2, "test setup should make exactly the 2-prefix feasible");
        let set = TargetSet { owner: 0, active_evaders: vec![0, 1, 2], interval_index: 0, chi };
        let mut events = Vec::new();
        let out = enforce_capture_condition(
            &set, &state, &controls, &mut top, &weights, &models, &params(), 0.0, &mut events,
        )
        .unwrap();
        assert_eq!(out.active_evaders, vec![0, 1]);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].evader, Some(2));
        assert_eq!(events[0].action, TargetAction::ExcludeMargin);
        assert_eq!(top.effective_pe_weight(0, 2), 0.0);
    }

    #[test]
    fn empty_target_set_warns_and_keeps_topology() {
        let (mut top, models, weights) = game(1, 1, 1.0, 1.0);
        top.set_game_weight(0, 0, 0.0).unwrap();
        let state = JointState {
            pursuer_states: vec![DVector::zeros(2)],
            evader_states: vec![DVector::from_row_slice(&[1.0, 0.0])],
            time: 0.0,
        };
        let controls = controls_with_energy(&top, 0.5, &[0.0]);
        let set = TargetSet { owner: 0, active_evaders: vec![], interval_index: 0, chi: 0.05 };
        let mut events = Vec::new();
        let out = enforce_capture_condition(
            &set, &state, &controls, &mut top, &weights, &models, &params(), 2.0, &mut events,
        )
        .unwrap();
        assert!(out.active_evaders.is_empty());
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].action, TargetAction::EmptyTargetWarning);
    }

    #[test]
    fn rolling_step_halts_on_single_neighbor() {
        let (mut top, models, weights) = game(2, 1, 1.0, 1.0);
        let state = JointState {
            pursuer_states: vec![DVector::zeros(2), DVector::from_row_slice(&[1.0, 0.0])],
            evader_states: vec![DVector::from_row_slice(&[2.0, 0.0])],
            time: 0.0,
        };
        let controls = controls_with_energy(&top, 0.3, &[0.1]);
        let mut halted = vec![false, false];
        let mut events = Vec::new();
        rolling_horizon_step(
            &state, &mut top, &models, &weights, &controls, 0.0, 10.0, &params(), 0, &mut halted,
            &mut events,
        )
        .unwrap();
        assert_eq!(halted, vec![true, true]);
        assert_eq!(events.len(), 2);
        assert!(events.iter().all(|e| e.action == TargetAction::HaltSingleTarget));
        // weights untouched
        assert_eq!(top.effective_pe_weight(0, 0), 1.0);
        assert_eq!(top.effective_pe_weight(1, 0), 1.0);
    }

    #[test]
    fn staged_selection_sequence_matches_hand_computation() {
        // fast pursuer, three evaders: the far one is unreachable, the
        // energetic middle one fails the margin, the nearest is kept and
        // the procedure halts
        let (mut top, models, weights) = game(1, 3, 1.0, 0.4);
        let state = JointState {
            pursuer_states: vec![DVector::zeros(2)],
            evader_states: vec![
                DVector::from_row_slice(&[1.0, 0.0]),
                DVector::from_row_slice(&[1.5, 0.0]),
                DVector::from_row_slice(&[30.0, 0.0]),
            ],
            time: 0.0,
        };
        // evader reach: 0.4 sqrt(2) 10 = 5.66; pursuer reach: sqrt(2) 10 = 14.1
        // slack 8.49: evader 2 at distance 30 unreachable, evaders 0, 1 fine
        let controls = Controls {
            pursuer_inputs: vec![DVector::from_row_slice(&[0.35, 0.0])],
            evader_inputs: vec![
                DVector::from_row_slice(&[0.05, 0.0]),
                DVector::from_row_slice(&[0.39, 0.0]),
                DVector::from_row_slice(&[0.0, 0.0]),
            ],
        };
        let u_own = margin_over(0, &[], &controls, &top, &weights, &models).unwrap();
        let with_nearest = margin_over(0, &[0], &controls, &top, &weights, &models).unwrap();
        let with_two = margin_over(0, &[0, 1], &controls, &top, &weights, &models).unwrap();
        assert!(u_own > 0.05 && with_nearest > 0.05 && with_two < 0.05);
        let mut halted = vec![false];
        let mut events = Vec::new();
        rolling_horizon_step(
            &state, &mut top, &models, &weights, &controls, 0.0, 10.0, &params(), 0, &mut halted,
            &mut events,
        )
        .unwrap();
        let expected = vec![
            TargetingEvent {
                time: 0.0,
                pursuer: 0,
                evader: Some(2),
                action: TargetAction::ExcludeUnreachable,
            },
            TargetingEvent {
                time: 0.0,
                pursuer: 0,
                evader: Some(1),
                action: TargetAction::ExcludeMargin,
            },
            TargetingEvent {
                time: 0.0,
                pursuer: 0,
                evader: None,
                action: TargetAction::HaltSingleTarget,
            },
        ];
        assert_eq!(events, expected);
        assert_eq!(top.active_opponents(0), vec![0]);
        assert!(halted[0]);
    }

    #[test]
    fn capture_monitor_basics() {
        let (top, _, _) = game(2, 2, 1.0, 1.0);
        let p = params();
        let state = JointState {
            pursuer_states: vec![DVector::zeros(2), DVector::from_row_slice(&[5.0, 5.0])],
            evader_states: vec![
                DVector::from_row_slice(&[0.0, 0.0]),
                DVector::from_row_slice(&[5.0, 5.002]),
            ],
            time: 0.0,
        };
        let status = capture_monitor(&state, &top, &p);
        assert_eq!(status[0], Some(0)); // coincident pair captures at t = 0
        assert_eq!(status[1], Some(1));
        let mut tight = p.clone();
        tight.capture_radius = 1e-9;
        let status = capture_monitor(&state, &top, &tight);
        assert_eq!(status[0], Some(0)); // exactly coincident still counts
        assert_eq!(status[1], None); // distinct positions do not
    }
}
