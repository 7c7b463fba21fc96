//! Agent models, augmented local errors, and their exact time derivative.
//!
//! Every player runs the same-dimension linear dynamics `x' = A x + B u`
//! with a componentwise input bound. The quantity the game is played on is
//! the 2n-dimensional local error: the weighted disagreement with teammates
//! stacked over the weighted offset from neighboring opponents. Pursuers
//! see opponents through the effective (game-masked) weights; evaders
//! always see pursuers through the raw ep weights.

use crate::topology::BiLayerTopology;
use crate::{linalg, PlayerId, Side};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("state/topology dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("player {0} out of range")]
    UnknownPlayer(PlayerId),
    #[error("control of {owner} violates its bound: |{value}| > {bound}")]
    SaturationViolated { owner: PlayerId, value: f64, bound: f64 },
    #[error("(A, B) pair of {0} is not controllable")]
    NotControllable(PlayerId),
    #[error("input bound of {0} must be positive, got {1}")]
    NonPositiveBound(PlayerId, f64),
}

/// Linear dynamics of one player.
#[derive(Clone, Debug)]
pub struct AgentModel {
    pub a_matrix: DMatrix<f64>,
    pub b_matrix: DMatrix<f64>,
    pub input_bound: f64,
    pub side: Side,
}

impl AgentModel {
    pub fn new(
        a_matrix: DMatrix<f64>,
        b_matrix: DMatrix<f64>,
        input_bound: f64,
        side: Side,
        id_for_errors: PlayerId,
    ) -> Result<Self, DynamicsError> {
        if input_bound <= 0.0 {
            return Err(DynamicsError::NonPositiveBound(id_for_errors, input_bound));
        }
        if !linalg::is_controllable(&a_matrix, &b_matrix) {
            return Err(DynamicsError::NotControllable(id_for_errors));
        }
        Ok(AgentModel { a_matrix, b_matrix, input_bound, side })
    }

    pub fn state_dim(&self) -> usize {
        self.a_matrix.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b_matrix.ncols()
    }
}

/// All players' models with uniform dimensions.
#[derive(Clone, Debug)]
pub struct ModelSet {
    pub pursuers: Vec<AgentModel>,
    pub evaders: Vec<AgentModel>,
}

impl ModelSet {
    pub fn new(pursuers: Vec<AgentModel>, evaders: Vec<AgentModel>) -> Result<Self, DynamicsError> {
        let set = ModelSet { pursuers, evaders };
        let n = set.state_dim();
        let m = set.input_dim();
        for (id, model) in set.iter() {
            if model.state_dim() != n || model.input_dim() != m {
                return Err(DynamicsError::DimensionMismatch(format!(
                    "{} has dims ({}, {}), expected ({}, {})",
                    id,
                    model.state_dim(),
                    model.input_dim(),
                    n,
                    m
                )));
            }
        }
        Ok(set)
    }

    pub fn state_dim(&self) -> usize {
        self.pursuers.first().or(self.evaders.first()).map_or(0, AgentModel::state_dim)
    }

    pub fn input_dim(&self) -> usize {
        self.pursuers.first().or(self.evaders.first()).map_or(0, AgentModel::input_dim)
    }

    pub fn get(&self, id: PlayerId) -> Result<&AgentModel, DynamicsError> {
        let list = match id.side {
            Side::Pursuer => &self.pursuers,
            Side::Evader => &self.evaders,
        };
        list.get(id.index).ok_or(DynamicsError::UnknownPlayer(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (PlayerId, &AgentModel)> {
        let ps = self.pursuers.iter().enumerate().map(|(i, m)| (PlayerId::pursuer(i), m));
        let es = self.evaders.iter().enumerate().map(|(j, m)| (PlayerId::evader(j), m));
        ps.chain(es)
    }
}

/// Stacked states of all players at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct JointState {
    pub pursuer_states: Vec<DVector<f64>>,
    pub evader_states: Vec<DVector<f64>>,
    pub time: f64,
}

impl JointState {
    pub fn state(&self, id: PlayerId) -> &DVector<f64> {
        match id.side {
            Side::Pursuer => &self.pursuer_states[id.index],
            Side::Evader => &self.evader_states[id.index],
        }
    }

    pub fn all_finite(&self) -> bool {
        self.pursuer_states
            .iter()
            .chain(self.evader_states.iter())
            .all(|x| x.iter().all(|v| v.is_finite()))
    }
}

/// Augmented local error of one player: teammate block over opponent block.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalError {
    pub owner: PlayerId,
    pub teammate_block: DVector<f64>,
    pub opponent_block: DVector<f64>,
}

impl LocalError {
    pub fn stacked(&self) -> DVector<f64> {
        let n = self.teammate_block.len();
        let mut out = DVector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&self.teammate_block);
        out.rows_mut(n, n).copy_from(&self.opponent_block);
        out
    }

    pub fn from_stacked(owner: PlayerId, stacked: &DVector<f64>) -> Self {
        let n = stacked.len() / 2;
        LocalError {
            owner,
            teammate_block: stacked.rows(0, n).into_owned(),
            opponent_block: stacked.rows(n, n).into_owned(),
        }
    }
}

/// Control inputs of every player.
#[derive(Clone, Debug, PartialEq)]
pub struct Controls {
    pub pursuer_inputs: Vec<DVector<f64>>,
    pub evader_inputs: Vec<DVector<f64>>,
}

impl Controls {
    pub fn zeros(n_pursuers: usize, n_evaders: usize, m: usize) -> Self {
        Controls {
            pursuer_inputs: vec![DVector::zeros(m); n_pursuers],
            evader_inputs: vec![DVector::zeros(m); n_evaders],
        }
    }

    pub fn input(&self, id: PlayerId) -> &DVector<f64> {
        match id.side {
            Side::Pursuer => &self.pursuer_inputs[id.index],
            Side::Evader => &self.evader_inputs[id.index],
        }
    }
}

fn check_dims(state: &JointState, top: &BiLayerTopology) -> Result<(), DynamicsError> {
    if state.pursuer_states.len() != top.n_pursuers() || state.evader_states.len() != top.n_evaders()
    {
        return Err(DynamicsError::DimensionMismatch(format!(
            "state holds {}v{} players, topology expects {}v{}",
            state.pursuer_states.len(),
            state.evader_states.len(),
            top.n_pursuers(),
            top.n_evaders()
        )));
    }
    Ok(())
}

/// Local error of `owner` at `state` under the current topology.
pub fn local_error(
    owner: PlayerId,
    state: &JointState,
    top: &BiLayerTopology,
) -> Result<LocalError, DynamicsError> {
    check_dims(state, top)?;
    let x_own = state.state(owner);
    let n = x_own.len();
    let mut teammate = DVector::zeros(n);
    let mut opponent = DVector::zeros(n);
    match owner.side {
        Side::Pursuer => {
            let i = owner.index;
            if i >= top.n_pursuers() {
                return Err(DynamicsError::UnknownPlayer(owner));
            }
            for k in 0..top.n_pursuers() {
                if k != i {
                    teammate += (x_own - &state.pursuer_states[k]) * top.gp.weight(i, k);
                }
            }
            for j in 0..top.n_evaders() {
                opponent += (x_own - &state.evader_states[j]) * top.effective_pe_weight(i, j);
            }
        }
        Side::Evader => {
            let j = owner.index;
            if j >= top.n_evaders() {
                return Err(DynamicsError::UnknownPlayer(owner));
            }
            for l in 0..top.n_evaders() {
                if l != j {
                    teammate += (x_own - &state.evader_states[l]) * top.ge.weight(j, l);
                }
            }
            for i in 0..top.n_pursuers() {
                opponent += (x_own - &state.pursuer_states[i]) * top.cross.ep_weight(j, i);
            }
        }
    }
    Ok(LocalError { owner, teammate_block: teammate, opponent_block: opponent })
}

/// Local errors of every player, pursuers first.
pub fn all_local_errors(
    state: &JointState,
    top: &BiLayerTopology,
) -> Result<ErrorSet, DynamicsError> {
    let pursuers = (0..top.n_pursuers())
        .map(|i| local_error(PlayerId::pursuer(i), state, top))
        .collect::<Result<Vec<_>, _>>()?;
    let evaders = (0..top.n_evaders())
        .map(|j| local_error(PlayerId::evader(j), state, top))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ErrorSet { pursuers, evaders })
}

/// Local errors of all players.
#[derive(Clone, Debug)]
pub struct ErrorSet {
    pub pursuers: Vec<LocalError>,
    pub evaders: Vec<LocalError>,
}

impl ErrorSet {
    pub fn get(&self, id: PlayerId) -> &LocalError {
        match id.side {
            Side::Pursuer => &self.pursuers[id.index],
            Side::Evader => &self.evaders[id.index],
        }
    }
}

/// Degrees entering the lifted input matrix of `owner`: team in-degree and
/// (effective) cross in-degree.
pub fn lifted_degrees(owner: PlayerId, top: &BiLayerTopology) -> (f64, f64) {
    match owner.side {
        Side::Pursuer => (
            top.gp.in_degree(owner.index).unwrap_or(0.0),
            top.pursuer_cross_degree(owner.index, true),
        ),
        Side::Evader => {
            (top.ge.in_degree(owner.index).unwrap_or(0.0), top.evader_cross_degree(owner.index))
        }
    }
}

/// Lifted input matrix [a_team B; a_cross B] of `owner`, built with the
/// current effective degrees.
pub fn b_bar(
    owner: PlayerId,
    top: &BiLayerTopology,
    models: &ModelSet,
) -> Result<DMatrix<f64>, DynamicsError> {
    let model = models.get(owner)?;
    let (a_team, a_cross) = lifted_degrees(owner, top);
    let n = model.state_dim();
    let m = model.input_dim();
    let mut out = DMatrix::zeros(2 * n, m);
    out.view_mut((0, 0), (n, m)).copy_from(&(&model.b_matrix * a_team));
    out.view_mut((n, 0), (n, m)).copy_from(&(&model.b_matrix * a_cross));
    Ok(out)
}

fn check_saturation(
    owner: PlayerId,
    u: &DVector<f64>,
    bound: f64,
    strict: bool,
) -> Result<(), DynamicsError> {
    for &value in u.iter() {
        let violated = if strict { value.abs() >= bound } else { value.abs() > bound * (1.0 + 1e-12) };
        if violated || !value.is_finite() {
            return Err(DynamicsError::SaturationViolated { owner, value, bound });
        }
    }
    Ok(())
}

/// Checks every control against its bound (closure of the input set).
pub fn check_all_saturation(
    controls: &Controls,
    models: &ModelSet,
) -> Result<(), DynamicsError> {
    for (i, u) in controls.pursuer_inputs.iter().enumerate() {
        check_saturation(PlayerId::pursuer(i), u, models.pursuers[i].input_bound, false)?;
    }
    for (j, v) in controls.evader_inputs.iter().enumerate() {
        check_saturation(PlayerId::evader(j), v, models.evaders[j].input_bound, false)?;
    }
    Ok(())
}

/// Time derivative of `owner`'s local error given its current value.
///
/// Pursuer form: `A_bar d + B_bar u_i - sum_k c_ik E12 B_k u_k
/// - sum_j ce_ij E22 B_j v_j`; the evader form mirrors it with the roles
/// swapped and unmasked ep weights.
pub fn error_rhs_from(
    owner: PlayerId,
    delta: &LocalError,
    controls: &Controls,
    top: &BiLayerTopology,
    models: &ModelSet,
) -> Result<DVector<f64>, DynamicsError> {
    check_all_saturation(controls, models)?;
    let model = models.get(owner)?;
    let n = model.state_dim();
    let a_bar = linalg::block_diag_pair(&model.a_matrix);
    let mut rhs = &a_bar * delta.stacked();
    rhs += b_bar(owner, top, models)? * controls.input(owner);
    match owner.side {
        Side::Pursuer => {
            let i = owner.index;
            for k in 0..top.n_pursuers() {
                if k != i && top.gp.weight(i, k) > 0.0 {
                    let term = &models.pursuers[k].b_matrix * &controls.pursuer_inputs[k];
                    rhs.rows_mut(0, n).axpy(-top.gp.weight(i, k), &term, 1.0);
                }
            }
            for j in 0..top.n_evaders() {
                let w = top.effective_pe_weight(i, j);
                if w > 0.0 {
                    let term = &models.evaders[j].b_matrix * &controls.evader_inputs[j];
                    rhs.rows_mut(n, n).axpy(-w, &term, 1.0);
                }
            }
        }
        Side::Evader => {
            let j = owner.index;
            for l in 0..top.n_evaders() {
                if l != j && top.ge.weight(j, l) > 0.0 {
                    let term = &models.evaders[l].b_matrix * &controls.evader_inputs[l];
                    rhs.rows_mut(0, n).axpy(-top.ge.weight(j, l), &term, 1.0);
                }
            }
            for i in 0..top.n_pursuers() {
                let w = top.cross.ep_weight(j, i);
                if w > 0.0 {
                    let term = &models.pursuers[i].b_matrix * &controls.pursuer_inputs[i];
                    rhs.rows_mut(n, n).axpy(-w, &term, 1.0);
                }
            }
        }
    }
    Ok(rhs)
}

/// Time derivative of `owner`'s local error at `state`.
pub fn error_rhs(
    owner: PlayerId,
    state: &JointState,
    controls: &Controls,
    top: &BiLayerTopology,
    models: &ModelSet,
) -> Result<DVector<f64>, DynamicsError> {
    let delta = local_error(owner, state, top)?;
    error_rhs_from(owner, &delta, controls, top, models)
}

/// Degree-normalized average of own state with the cooperative neighbors'.
pub fn team_center(
    owner: PlayerId,
    state: &JointState,
    top: &BiLayerTopology,
) -> Result<DVector<f64>, DynamicsError> {
    check_dims(state, top)?;
    let x_own = state.state(owner);
    let mut sum = x_own.clone();
    let degree = match owner.side {
        Side::Pursuer => {
            for k in 0..top.n_pursuers() {
                if k != owner.index {
                    sum += &state.pursuer_states[k] * top.gp.weight(owner.index, k);
                }
            }
            top.gp.in_degree(owner.index).unwrap_or(0.0)
        }
        Side::Evader => {
            for l in 0..top.n_evaders() {
                if l != owner.index {
                    sum += &state.evader_states[l] * top.ge.weight(owner.index, l);
                }
            }
            top.ge.in_degree(owner.index).unwrap_or(0.0)
        }
    };
    Ok(sum / (1.0 + degree))
}

/// Degree-normalized average of own state with the adversarial neighbors'.
pub fn adversary_center(
    owner: PlayerId,
    state: &JointState,
    top: &BiLayerTopology,
) -> Result<DVector<f64>, DynamicsError> {
    check_dims(state, top)?;
    let x_own = state.state(owner);
    let mut sum = x_own.clone();
    let degree = match owner.side {
        Side::Pursuer => {
            for j in 0..top.n_evaders() {
                sum += &state.evader_states[j] * top.effective_pe_weight(owner.index, j);
            }
            top.pursuer_cross_degree(owner.index, true)
        }
        Side::Evader => {
            for i in 0..top.n_pursuers() {
                sum += &state.pursuer_states[i] * top.cross.ep_weight(owner.index, i);
            }
            top.evader_cross_degree(owner.index)
        }
    };
    Ok(sum / (1.0 + degree))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{CommGraph, CrossGraph};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_integrator(n: usize, bound: f64, side: Side) -> AgentModel {
        AgentModel {
            a_matrix: DMatrix::zeros(n, n),
            b_matrix: DMatrix::identity(n, n),
            input_bound: bound,
            side,
        }
    }

    fn topology_1v1() -> BiLayerTopology {
        BiLayerTopology::new(
            CommGraph::empty(1),
            CommGraph::empty(1),
            CrossGraph::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0))
                .unwrap(),
        )
        .unwrap()
    }

    fn random_topology_2v2(rng: &mut ChaCha8Rng) -> BiLayerTopology {
        let mut gp = DMatrix::zeros(2, 2);
        gp[(0, 1)] = rng.gen_range(0.0..2.0);
        gp[(1, 0)] = rng.gen_range(0.0..2.0);
        let mut ge = DMatrix::zeros(2, 2);
        ge[(0, 1)] = rng.gen_range(0.0..2.0);
        ge[(1, 0)] = rng.gen_range(0.0..2.0);
        let pe = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(0.0..2.0));
        let ep = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(0.0..2.0));
        BiLayerTopology::new(
            CommGraph::new(gp).unwrap(),
            CommGraph::new(ge).unwrap(),
            CrossGraph::new(pe, ep).unwrap(),
        )
        .unwrap()
    }

    fn random_state(rng: &mut ChaCha8Rng, n_p: usize, n_e: usize, n: usize) -> JointState {
        JointState {
            pursuer_states: (0..n_p)
                .map(|_| DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0)))
                .collect(),
            evader_states: (0..n_e)
                .map(|_| DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0)))
                .collect(),
            time: 0.0,
        }
    }

    #[test]
    fn local_error_single_edge() {
        let top = topology_1v1();
        let state = JointState {
            pursuer_states: vec![DVector::from_row_slice(&[1.0, 0.0])],
            evader_states: vec![DVector::from_row_slice(&[0.0, 0.0])],
            time: 0.0,
        };
        let err = local_error(PlayerId::pursuer(0), &state, &top).unwrap();
        assert_eq!(err.stacked(), DVector::from_row_slice(&[0.0, 0.0, 1.0, 0.0]));
    }

    #[test]
    fn local_error_coincident_agents_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let top = random_topology_2v2(&mut rng);
        let x = DVector::from_row_slice(&[0.4, -0.7]);
        let state = JointState {
            pursuer_states: vec![x.clone(), x.clone()],
            evader_states: vec![x.clone(), x.clone()],
            time: 0.0,
        };
        for id in [PlayerId::pursuer(0), PlayerId::pursuer(1), PlayerId::evader(1)] {
            let err = local_error(id, &state, &top).unwrap();
            assert!(err.stacked().amax() < 1e-15);
        }
    }

    #[test]
    fn local_error_matches_brute_force_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let top = random_topology_2v2(&mut rng);
            let state = random_state(&mut rng, 2, 2, 2);
            let err = local_error(PlayerId::pursuer(0), &state, &top).unwrap();
            let mut tm = DVector::zeros(2);
            tm += (&state.pursuer_states[0] - &state.pursuer_states[1]) * top.gp.weight(0, 1);
            let mut op = DVector::zeros(2);
            for j in 0..2 {
                op += (&state.pursuer_states[0] - &state.evader_states[j])
                    * top.effective_pe_weight(0, j);
            }
            assert_relative_eq!(err.teammate_block, tm, epsilon = 1e-14);
            assert_relative_eq!(err.opponent_block, op, epsilon = 1e-14);
        }
    }

    #[test]
    fn evader_error_ignores_game_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut top = random_topology_2v2(&mut rng);
        let state = random_state(&mut rng, 2, 2, 2);
        let before = local_error(PlayerId::evader(0), &state, &top).unwrap();
        top.set_game_weight(0, 0, 0.0).unwrap();
        top.set_game_weight(1, 0, 0.0).unwrap();
        let after = local_error(PlayerId::evader(0), &state, &top).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn rhs_zero_controls_zero_drift() {
        let top = topology_1v1();
        let models = ModelSet::new(
            vec![single_integrator(2, 1.0, Side::Pursuer)],
            vec![single_integrator(2, 1.0, Side::Evader)],
        )
        .unwrap();
        let state = JointState {
            pursuer_states: vec![DVector::from_row_slice(&[1.0, 2.0])],
            evader_states: vec![DVector::from_row_slice(&[-1.0, 0.5])],
            time: 0.0,
        };
        let controls = Controls::zeros(1, 1, 2);
        let rhs = error_rhs(PlayerId::pursuer(0), &state, &controls, &top, &models).unwrap();
        assert!(rhs.amax() < 1e-15);
    }

    #[test]
    fn rhs_1v1_identity_input() {
        // A = 0, B = I, unit cross weight: opponent block rate = u - v
        let top = topology_1v1();
        let models = ModelSet::new(
            vec![single_integrator(2, 5.0, Side::Pursuer)],
            vec![single_integrator(2, 5.0, Side::Evader)],
        )
        .unwrap();
        let state = JointState {
            pursuer_states: vec![DVector::zeros(2)],
            evader_states: vec![DVector::zeros(2)],
            time: 0.0,
        };
        let controls = Controls {
            pursuer_inputs: vec![DVector::from_row_slice(&[0.3, -0.2])],
            evader_inputs: vec![DVector::from_row_slice(&[0.1, 0.4])],
        };
        let rhs = error_rhs(PlayerId::pursuer(0), &state, &controls, &top, &models).unwrap();
        // teammate block: a^p = 0 so B_bar top block is zero
        assert!(rhs.rows(0, 2).amax() < 1e-15);
        let expect = &controls.pursuer_inputs[0] - &controls.evader_inputs[0];
        assert_relative_eq!(rhs.rows(2, 2).into_owned(), expect, epsilon = 1e-15);
    }

    #[test]
    fn rhs_rejects_saturation_violation() {
        let top = topology_1v1();
        let models = ModelSet::new(
            vec![single_integrator(2, 0.5, Side::Pursuer)],
            vec![single_integrator(2, 0.5, Side::Evader)],
        )
        .unwrap();
        let state = random_state(&mut ChaCha8Rng::seed_from_u64(0), 1, 1, 2);
        let controls = Controls {
            pursuer_inputs: vec![DVector::from_row_slice(&[0.6, 0.0])],
            evader_inputs: vec![DVector::zeros(2)],
        };
        assert!(matches!(
            error_rhs(PlayerId::pursuer(0), &state, &controls, &top, &models),
            Err(DynamicsError::SaturationViolated { .. })
        ));
    }

    #[test]
    fn rhs_linear_in_each_control() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let top = random_topology_2v2(&mut rng);
        let models = ModelSet::new(
            vec![single_integrator(2, 10.0, Side::Pursuer); 2],
            vec![single_integrator(2, 10.0, Side::Evader); 2],
        )
        .unwrap();
        let state = random_state(&mut rng, 2, 2, 2);
        let draw = |rng: &mut ChaCha8Rng| Controls {
            pursuer_inputs: (0..2).map(|_| DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0))).collect(),
            evader_inputs: (0..2).map(|_| DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0))).collect(),
        };
        for _ in 0..10 {
            let c1 = draw(&mut rng);
            let c2 = draw(&mut rng);
            let mixed = Controls {
                pursuer_inputs: c1
                    .pursuer_inputs
                    .iter()
                    .zip(&c2.pursuer_inputs)
                    .map(|(a, b)| a * 0.25 + b * 0.75)
                    .collect(),
                evader_inputs: c1
                    .evader_inputs
                    .iter()
                    .zip(&c2.evader_inputs)
                    .map(|(a, b)| a * 0.25 + b * 0.75)
                    .collect(),
            };
            let id = PlayerId::evader(1);
            let r1 = error_rhs(id, &state, &c1, &top, &models).unwrap();
            let r2 = error_rhs(id, &state, &c2, &top, &models).unwrap();
            let rm = error_rhs(id, &state, &mixed, &top, &models).unwrap();
            assert_relative_eq!(rm, r1 * 0.25 + r2 * 0.75, epsilon = 1e-12);
        }
    }

    #[test]
    fn centers_no_neighbors_is_own_position() {
        let top = BiLayerTopology::new(
            CommGraph::empty(2),
            CommGraph::empty(1),
            CrossGraph::new(DMatrix::zeros(2, 1), DMatrix::zeros(1, 2)).unwrap(),
        )
        .unwrap();
        let state = JointState {
            pursuer_states: vec![
                DVector::from_row_slice(&[2.0, 3.0]),
                DVector::from_row_slice(&[1.0, 1.0]),
            ],
            evader_states: vec![DVector::zeros(2)],
            time: 0.0,
        };
        let c = team_center(PlayerId::pursuer(0), &state, &top).unwrap();
        assert_eq!(c, state.pursuer_states[0]);
        let a = adversary_center(PlayerId::pursuer(0), &state, &top).unwrap();
        assert_eq!(a, state.pursuer_states[0]);
    }

    #[test]
    fn centers_unit_weight_pair_is_midpoint() {
        let top = BiLayerTopology::new(
            CommGraph::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap(),
            CommGraph::empty(1),
            CrossGraph::new(DMatrix::zeros(2, 1), DMatrix::zeros(1, 2)).unwrap(),
        )
        .unwrap();
        let state = JointState {
            pursuer_states: vec![
                DVector::from_row_slice(&[2.0, 0.0]),
                DVector::from_row_slice(&[0.0, 4.0]),
            ],
            evader_states: vec![DVector::zeros(2)],
            time: 0.0,
        };
        let c = team_center(PlayerId::pursuer(0), &state, &top).unwrap();
        assert_relative_eq!(c, DVector::from_row_slice(&[1.0, 2.0]), epsilon = 1e-15);
    }

    #[test]
    fn center_identity_from_local_error() {
        // zeta_team - zeta_cross == (E22'/(1+a_cross) - E12'/(1+a_team)) delta
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let top = random_topology_2v2(&mut rng);
            let state = random_state(&mut rng, 2, 2, 2);
            for id in [PlayerId::pursuer(0), PlayerId::pursuer(1), PlayerId::evader(0)] {
                let delta = local_error(id, &state, &top).unwrap();
                let (a_team, a_cross) = lifted_degrees(id, &top);
                let lhs = team_center(id, &state, &top).unwrap()
                    - adversary_center(id, &state, &top).unwrap();
                let rhs = &delta.opponent_block / (1.0 + a_cross)
                    - &delta.teammate_block / (1.0 + a_team);
                assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn center_identity_direct_form() {
        // zeta = x - E' delta / (1 + a), both blocks
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..30 {
            let top = random_topology_2v2(&mut rng);
            let state = random_state(&mut rng, 2, 2, 2);
            for id in [PlayerId::pursuer(1), PlayerId::evader(0), PlayerId::evader(1)] {
                let delta = local_error(id, &state, &top).unwrap();
                let (a_team, a_cross) = lifted_degrees(id, &top);
                let x = state.state(id);
                let team = team_center(id, &state, &top).unwrap();
                let cross = adversary_center(id, &state, &top).unwrap();
                assert_relative_eq!(
                    team,
                    x - &delta.teammate_block / (1.0 + a_team),
                    epsilon = 1e-12
                );
                assert_relative_eq!(
                    cross,
                    x - &delta.opponent_block / (1.0 + a_cross),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn rk4_integration_consistent_with_error_rhs() {
        // integrate joint states with RK4 and a fixed control; the local
        // error rebuilt from integrated positions matches integrating the
        // error rhs directly to fourth order
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let top = random_topology_2v2(&mut rng);
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -0.5, -0.1]);
        let model = |side| AgentModel {
            a_matrix: a.clone(),
            b_matrix: DMatrix::identity(2, 2),
            input_bound: 10.0,
            side,
        };
        let models = ModelSet::new(
            vec![model(Side::Pursuer), model(Side::Pursuer)],
            vec![model(Side::Evader), model(Side::Evader)],
        )
        .unwrap();
        let controls = Controls {
            pursuer_inputs: vec![
                DVector::from_row_slice(&[0.2, -0.1]),
                DVector::from_row_slice(&[-0.3, 0.4]),
            ],
            evader_inputs: vec![
                DVector::from_row_slice(&[0.1, 0.1]),
                DVector::from_row_slice(&[-0.2, 0.0]),
            ],
        };
        let run = |h: f64| -> f64 {
            let mut state = JointState {
                pursuer_states: vec![
                    DVector::from_row_slice(&[1.0, 0.0]),
                    DVector::from_row_slice(&[0.0, 1.0]),
                ],
                evader_states: vec![
                    DVector::from_row_slice(&[-1.0, 0.2]),
                    DVector::from_row_slice(&[0.5, -0.5]),
                ],
                time: 0.0,
            };
            let id = PlayerId::pursuer(0);
            let mut delta = local_error(id, &state, &top).unwrap().stacked();
            let steps = (1.0 / h).round() as usize;
            for _ in 0..steps {
                // advance delta by rk4 on the error rhs
                let f = |d: &DVector<f64>| {
                    error_rhs_from(
                        id,
                        &LocalError::from_stacked(id, d),
                        &controls,
                        &top,
                        &models,
                    )
                    .unwrap()
                };
                let k1 = f(&delta);
                let k2 = f(&(&delta + &k1 * (h / 2.0)));
                let k3 = f(&(&delta + &k2 * (h / 2.0)));
                let k4 = f(&(&delta + &k3 * h));
                delta += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
                // advance the joint state the same way
                let g = |s: &JointState| -> Vec<DVector<f64>> {
                    let mut rates = Vec::new();
                    for (idx, x) in s.pursuer_states.iter().enumerate() {
                        rates.push(&a * x + &controls.pursuer_inputs[idx]);
                    }
                    for (idx, x) in s.evader_states.iter().enumerate() {
                        rates.push(&a * x + &controls.evader_inputs[idx]);
                    }
                    rates
                };
                let apply = |s: &JointState, rates: &[DVector<f64>], scale: f64| -> JointState {
                    let mut out = s.clone();
                    for (idx, x) in out.pursuer_states.iter_mut().enumerate() {
                        *x += &rates[idx] * scale;
                    }
                    for (idx, x) in out.evader_states.iter_mut().enumerate() {
                        *x += &rates[2 + idx] * scale;
                    }
                    out
                };
                let k1s = g(&state);
                let k2s = g(&apply(&state, &k1s, h / 2.0));
                let k3s = g(&apply(&state, &k2s, h / 2.0));
                let k4s = g(&apply(&state, &k3s, h));
                let mut combined = Vec::new();
                for idx in 0..4 {
                    combined.push(
                        (&k1s[idx] + &k2s[idx] * 2.0 + &k3s[idx] * 2.0 + &k4s[idx]) * (1.0 / 6.0),
                    );
                }
                state = apply(&state, &combined, h);
            }
            let rebuilt = local_error(id, &state, &top).unwrap().stacked();
            (rebuilt - delta).amax()
        };
        let coarse = run(0.1);
        let fine = run(0.05);
        // both integrations follow the same linear flow; the gap is pure
        // truncation error and must shrink at least at fourth order
        assert!(coarse < 1e-5, "coarse gap {coarse}");
        assert!(fine < coarse / 8.0 + 1e-14, "order check failed: {coarse} -> {fine}");
    }
}
