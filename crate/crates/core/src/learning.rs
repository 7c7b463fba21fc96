//! Critic/actor approximators, tuning laws, and policy iteration.
//!
//! Both networks are linear in their weights over quadratic monomials of
//! the stacked local errors (own error first, then each neighbor's,
//! ordered by agent id). The critic approximates the value function, the
//! actor the saturated control; the normalized gradient tuning laws run
//! online, while the offline driver alternates batch least-squares policy
//! evaluation with the saturated policy-improvement map.

use crate::costs::{self, CostError, WeightSet};
use crate::dynamics::{self, Controls, DynamicsError, ErrorSet, ModelSet};
use crate::linalg::{self, LinalgError};
use crate::policy::{clamped_tanh, saturated_policy};
use crate::topology::BiLayerTopology;
use crate::{parallel, PlayerId, Side};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LearningError {
    #[error("non-finite {quantity} while updating {owner}; the learning run diverged")]
    Divergence { owner: PlayerId, quantity: &'static str },
    #[error("basis input dimension mismatch: expected {expected}, got {got}")]
    BadInputDim { expected: usize, got: usize },
    #[error("policy evaluation regression for {owner} is rank deficient; sample a richer state set ({source})")]
    RankDeficient { owner: PlayerId, source: LinalgError },
    #[error("policy iteration did not converge within {iterations} iterations (last sup-norm change {last_change:.3e})")]
    NonConvergence { iterations: usize, last_change: f64, residual_history: Vec<f64> },
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("weights file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("weights file malformed: {0}")]
    Parse(String),
}

// ---------------------------------------------------------------------------
// basis

/// Quadratic feature basis of one player.
///
/// `inputs` lists whose local errors feed the feature vector; the owner is
/// always first. Features are all degree-2 monomials `z_a z_b` (a <= b) of
/// the stacked input.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisSpec {
    pub owner: PlayerId,
    pub inputs: Vec<PlayerId>,
    /// Dimension of one local error (2n).
    pub block_dim: usize,
}

impl BasisSpec {
    /// Builds the basis over the owner's error plus, when
    /// `include_neighbors` is set, every communication neighbor's error
    /// (teammates first, then opponents, each ascending by index).
    pub fn quadratic(
        owner: PlayerId,
        top: &BiLayerTopology,
        state_dim: usize,
        include_neighbors: bool,
    ) -> Self {
        let mut inputs = vec![owner];
        if include_neighbors {
            match owner.side {
                Side::Pursuer => {
                    for k in top.gp.neighbors(owner.index) {
                        inputs.push(PlayerId::pursuer(k));
                    }
                    for j in top.pursuer_opponents(owner.index) {
                        inputs.push(PlayerId::evader(j));
                    }
                }
                Side::Evader => {
                    for l in top.ge.neighbors(owner.index) {
                        inputs.push(PlayerId::evader(l));
                    }
                    for i in top.evader_opponents(owner.index) {
                        inputs.push(PlayerId::pursuer(i));
                    }
                }
            }
        }
        BasisSpec { owner, inputs, block_dim: 2 * state_dim }
    }

    pub fn stacked_dim(&self) -> usize {
        self.inputs.len() * self.block_dim
    }

    pub fn feature_count(&self) -> usize {
        let d = self.stacked_dim();
        d * (d + 1) / 2
    }

    /// Index of the monomial `z_a z_b` (a <= b) in the feature vector.
    pub fn feature_index(&self, a: usize, b: usize) -> usize {
        debug_assert!(a <= b && b < self.stacked_dim());
        let d = self.stacked_dim();
        a * d - a * (a + 1) / 2 + b
    }

    /// Stacks the input errors in spec order.
    pub fn stack(&self, errors: &ErrorSet) -> DVector<f64> {
        let mut z = DVector::zeros(self.stacked_dim());
        for (slot, id) in self.inputs.iter().enumerate() {
            z.rows_mut(slot * self.block_dim, self.block_dim)
                .copy_from(&errors.get(*id).stacked());
        }
        z
    }

    /// All degree-2 monomials of `z`.
    pub fn eval(&self, z: &DVector<f64>) -> Result<DVector<f64>, LearningError> {
        let d = self.stacked_dim();
        if z.len() != d {
            return Err(LearningError::BadInputDim { expected: d, got: z.len() });
        }
        let mut phi = DVector::zeros(self.feature_count());
        let mut idx = 0;
        for a in 0..d {
            for b in a..d {
                phi[idx] = z[a] * z[b];
                idx += 1;
            }
        }
        Ok(phi)
    }

    /// Jacobian of the features with respect to the owner's error block
    /// (the first `block_dim` entries of the stack only).
    pub fn grad_own(&self, z: &DVector<f64>) -> Result<DMatrix<f64>, LearningError> {
        let d = self.stacked_dim();
        if z.len() != d {
            return Err(LearningError::BadInputDim { expected: d, got: z.len() });
        }
        let own = self.block_dim;
        let mut jac = DMatrix::zeros(self.feature_count(), own);
        let mut idx = 0;
        for a in 0..d {
            for b in a..d {
                if a < own {
                    jac[(idx, a)] += z[b];
                }
                if b < own {
                    jac[(idx, b)] += z[a];
                }
                idx += 1;
            }
        }
        Ok(jac)
    }

    /// Weight vector whose quadratic form on the owner's own block equals
    /// `delta' P delta` (neighbor monomials zero).
    pub fn encode_own_quadratic(&self, p: &DMatrix<f64>) -> DVector<f64> {
        let mut w = DVector::zeros(self.feature_count());
        for a in 0..self.block_dim {
            for b in a..self.block_dim {
                let coeff = if a == b { p[(a, a)] } else { p[(a, b)] + p[(b, a)] };
                w[self.feature_index(a, b)] = coeff;
            }
        }
        w
    }
}

// ---------------------------------------------------------------------------
// networks

/// Value-function approximator.
#[derive(Clone, Debug)]
pub struct CriticNet {
    pub spec: BasisSpec,
    pub weights: DVector<f64>,
    pub learning_rate: f64,
}

impl CriticNet {
    pub fn new(spec: BasisSpec, learning_rate: f64) -> Self {
        let h = spec.feature_count();
        CriticNet { spec, weights: DVector::zeros(h), learning_rate }
    }

    pub fn estimate(&self, z: &DVector<f64>) -> Result<f64, LearningError> {
        Ok(self.weights.dot(&self.spec.eval(z)?))
    }

    /// Value gradient with respect to the owner's own error block.
    pub fn own_gradient(&self, z: &DVector<f64>) -> Result<DVector<f64>, LearningError> {
        Ok(self.spec.grad_own(z)?.transpose() * &self.weights)
    }
}

/// Saturated-control approximator sharing the critic's basis.
#[derive(Clone, Debug)]
pub struct ActorNet {
    pub spec: BasisSpec,
    pub weights: DVector<f64>,
    pub learning_rate: f64,
    /// Scale of the stabilizing weight-decay term (Y = stabilizer * I).
    pub stabilizer: f64,
}

impl ActorNet {
    pub fn new(spec: BasisSpec, learning_rate: f64, stabilizer: f64) -> Self {
        let h = spec.feature_count();
        ActorNet { spec, weights: DVector::zeros(h), learning_rate, stabilizer }
    }

    pub fn own_gradient(&self, z: &DVector<f64>) -> Result<DVector<f64>, LearningError> {
        Ok(self.spec.grad_own(z)?.transpose() * &self.weights)
    }
}

/// Control produced by an actor at the stacked input `z`.
pub fn actor_control(
    net: &ActorNet,
    z: &DVector<f64>,
    b_bar: &DMatrix<f64>,
    r_diag: &DVector<f64>,
    bound: f64,
) -> Result<DVector<f64>, LearningError> {
    Ok(saturated_policy(&net.own_gradient(z)?, b_bar, r_diag, bound))
}

/// Every player's critic and actor.
#[derive(Clone, Debug)]
pub struct NetSet {
    pub pursuer_critics: Vec<CriticNet>,
    pub evader_critics: Vec<CriticNet>,
    pub pursuer_actors: Vec<ActorNet>,
    pub evader_actors: Vec<ActorNet>,
}

impl NetSet {
    pub fn critic(&self, id: PlayerId) -> &CriticNet {
        match id.side {
            Side::Pursuer => &self.pursuer_critics[id.index],
            Side::Evader => &self.evader_critics[id.index],
        }
    }

    pub fn critic_mut(&mut self, id: PlayerId) -> &mut CriticNet {
        match id.side {
            Side::Pursuer => &mut self.pursuer_critics[id.index],
            Side::Evader => &mut self.evader_critics[id.index],
        }
    }

    pub fn actor(&self, id: PlayerId) -> &ActorNet {
        match id.side {
            Side::Pursuer => &self.pursuer_actors[id.index],
            Side::Evader => &self.evader_actors[id.index],
        }
    }

    pub fn actor_mut(&mut self, id: PlayerId) -> &mut ActorNet {
        match id.side {
            Side::Pursuer => &mut self.pursuer_actors[id.index],
            Side::Evader => &mut self.evader_actors[id.index],
        }
    }

    pub fn players(&self) -> Vec<PlayerId> {
        let mut ids: Vec<PlayerId> =
            (0..self.pursuer_critics.len()).map(PlayerId::pursuer).collect();
        ids.extend((0..self.evader_critics.len()).map(PlayerId::evader));
        ids
    }

    /// Copies every critic's weights into its actor.
    pub fn sync_actors_to_critics(&mut self) {
        for i in 0..self.pursuer_critics.len() {
            self.pursuer_actors[i].weights = self.pursuer_critics[i].weights.clone();
        }
        for j in 0..self.evader_critics.len() {
            self.evader_actors[j].weights = self.evader_critics[j].weights.clone();
        }
    }
}

/// Controls of every player from their actors at the given errors.
pub fn all_actor_controls(
    nets: &NetSet,
    errors: &ErrorSet,
    top: &BiLayerTopology,
    weights: &WeightSet,
    models: &ModelSet,
) -> Result<Controls, LearningError> {
    let mut controls = Controls::zeros(
        nets.pursuer_actors.len(),
        nets.evader_actors.len(),
        models.input_dim(),
    );
    for id in nets.players() {
        let actor = nets.actor(id);
        let z = actor.spec.stack(errors);
        let b_bar = dynamics::b_bar(id, top, models)?;
        let u = actor_control(actor, &z, &b_bar, &weights.get(id).r_diag, models.get(id)?.input_bound)?;
        match id.side {
            Side::Pursuer => controls.pursuer_inputs[id.index] = u,
            Side::Evader => controls.evader_inputs[id.index] = u,
        }
    }
    Ok(controls)
}

// ---------------------------------------------------------------------------
// Bellman error and tuning laws

/// Bellman error of `owner` and the regressor it multiplies: the
/// approximate Hamiltonian `l + W_c' sigma` with
/// `sigma = (dphi/ddelta_own) * error_rhs` under the given controls.
pub fn bellman_parts(
    owner: PlayerId,
    critic: &CriticNet,
    controls: &Controls,
    errors: &ErrorSet,
    top: &BiLayerTopology,
    weights: &WeightSet,
    models: &ModelSet,
) -> Result<(f64, DVector<f64>), LearningError> {
    let z = critic.spec.stack(errors);
    let rhs = dynamics::error_rhs_from(owner, errors.get(owner), controls, top, models)?;
    let sigma = critic.spec.grad_own(&z)? * rhs;
    let running = costs::running_cost(owner, errors, controls, top, weights, models)?;
    Ok((running + critic.weights.dot(&sigma), sigma))
}

/// Bellman error of `owner` with every player on its actor control.
pub fn bellman_error(
    owner: PlayerId,
    nets: &NetSet,
    errors: &ErrorSet,
    top: &BiLayerTopology,
    weights: &WeightSet,
    models: &ModelSet,
) -> Result<f64, LearningError> {
    let controls = all_actor_controls(nets, errors, top, weights, models)?;
    Ok(bellman_parts(owner, nets.critic(owner), &controls, errors, top, weights, models)?.0)
}

/// One Euler step of the normalized-gradient critic law:
/// `W <- W - h alpha sigma zeta / (1 + sigma' sigma)^2`.
pub fn critic_update(
    net: &mut CriticNet,
    zeta: f64,
    sigma: &DVector<f64>,
    h_step: f64,
) -> Result<(), LearningError> {
    if !zeta.is_finite() {
        return Err(LearningError::Divergence { owner: net.spec.owner, quantity: "bellman error" });
    }
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(LearningError::Divergence { owner: net.spec.owner, quantity: "regressor" });
    }
    let norm = 1.0 + sigma.dot(sigma);
    net.weights.axpy(-h_step * net.learning_rate * zeta / (norm * norm), sigma, 1.0);
    Ok(())
}

/// One Euler step of the actor law. The coupling term drives the actor's
/// control toward the critic-induced control; the stabilizer decays the
/// weights when the two agree.
pub fn actor_update(
    net: &mut ActorNet,
    critic: &CriticNet,
    z: &DVector<f64>,
    b_bar: &DMatrix<f64>,
    r_diag: &DVector<f64>,
    bound: f64,
    h_step: f64,
) -> Result<(), LearningError> {
    let u_actor = actor_control(net, z, b_bar, r_diag, bound)?;
    let u_critic = saturated_policy(&critic.own_gradient(z)?, b_bar, r_diag, bound);
    let zeta_a = &u_actor - &u_critic;
    if zeta_a.iter().any(|v| !v.is_finite()) {
        return Err(LearningError::Divergence { owner: net.spec.owner, quantity: "actor error" });
    }
    let d_hat = crate::policy::policy_argument(&net.own_gradient(z)?, b_bar, r_diag, bound);
    let mut coupled = zeta_a.clone();
    for k in 0..coupled.len() {
        let t = clamped_tanh(d_hat[k]);
        coupled[k] += t * t * zeta_a[k];
    }
    let drift = net.spec.grad_own(z)? * b_bar * coupled;
    let beta = net.learning_rate;
    let decay = net.weights.clone();
    // contraction direction: the printed ascent sign diverges, see ledger
    net.weights.axpy(h_step * beta, &drift, 1.0);
    net.weights.axpy(-h_step * beta * net.stabilizer, &decay, 1.0);
    if net.weights.iter().any(|v| !v.is_finite()) {
        return Err(LearningError::Divergence { owner: net.spec.owner, quantity: "actor weights" });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// warm start

/// Riccati warm start of one player's decoupled regulator (cross terms
/// zeroed), solved blockwise on the reduced (A, B) pair: one regulator for
/// the teammate error block, one for the opponent block, assembled block
/// diagonally. The lifted pair (A_bar, B_bar) is structurally
/// uncontrollable, so a lifted solve would pile cost onto inert directions
/// and poison the policy whenever the effective degrees change; each
/// n-dimensional block is controllable by construction. Evaders regulate
/// the positive-semidefinite parts of their sign-flipped state weight
/// (team cohesion; flight is left for learning to build).
pub fn lq_warm_start(
    owner: PlayerId,
    top: &BiLayerTopology,
    models: &ModelSet,
    weights: &WeightSet,
    pseudo_horizon: f64,
) -> Result<DMatrix<f64>, LearningError> {
    let model = models.get(owner)?;
    let n = model.state_dim();
    let q_tilde = costs::q_tilde_for(owner, weights, top);
    let signed = match owner.side {
        Side::Pursuer => q_tilde,
        Side::Evader => -q_tilde,
    };
    let q_team = linalg::psd_clamp(&signed.view((0, 0), (n, n)).into_owned(), 1e-6);
    let q_opp = linalg::psd_clamp(&signed.view((n, n), (n, n)).into_owned(), 1e-6);
    let r_inv = DMatrix::from_diagonal(&weights.get(owner).r_diag.map(|r| 1.0 / r));
    let budget = pseudo_horizon.min(40.0);
    let p_team =
        linalg::riccati_ode(&model.a_matrix, &model.b_matrix, &q_team, &r_inv, 0.005, budget, 1e-11);
    let p_opp =
        linalg::riccati_ode(&model.a_matrix, &model.b_matrix, &q_opp, &r_inv, 0.005, budget, 1e-11);
    let mut p = DMatrix::zeros(2 * n, 2 * n);
    p.view_mut((0, 0), (n, n)).copy_from(&p_team);
    p.view_mut((n, n), (n, n)).copy_from(&p_opp);
    Ok(p)
}

/// Builds every player's nets with LQ-warm-started weights.
#[allow(clippy::too_many_arguments)]
pub fn warm_started_nets(
    top: &BiLayerTopology,
    models: &ModelSet,
    weights: &WeightSet,
    include_neighbors: bool,
    critic_rate: f64,
    actor_rate: f64,
    stabilizer: f64,
    pseudo_horizon: f64,
) -> Result<NetSet, LearningError> {
    let n = models.state_dim();
    let mut nets = NetSet {
        pursuer_critics: Vec::new(),
        evader_critics: Vec::new(),
        pursuer_actors: Vec::new(),
        evader_actors: Vec::new(),
    };
    for i in 0..top.n_pursuers() {
        let id = PlayerId::pursuer(i);
        let spec = BasisSpec::quadratic(id, top, n, include_neighbors);
        let p = lq_warm_start(id, top, models, weights, pseudo_horizon)?;
        let w0 = spec.encode_own_quadratic(&p);
        let mut critic = CriticNet::new(spec.clone(), critic_rate);
        critic.weights = w0.clone();
        let mut actor = ActorNet::new(spec, actor_rate, stabilizer);
        actor.weights = w0;
        nets.pursuer_critics.push(critic);
        nets.pursuer_actors.push(actor);
    }
    for j in 0..top.n_evaders() {
        let id = PlayerId::evader(j);
        let spec = BasisSpec::quadratic(id, top, n, include_neighbors);
        let p = lq_warm_start(id, top, models, weights, pseudo_horizon)?;
        let w0 = spec.encode_own_quadratic(&p);
        let mut critic = CriticNet::new(spec.clone(), critic_rate);
        critic.weights = w0.clone();
        let mut actor = ActorNet::new(spec, actor_rate, stabilizer);
        actor.weights = w0;
        nets.evader_critics.push(critic);
        nets.evader_actors.push(actor);
    }
    Ok(nets)
}

// ---------------------------------------------------------------------------
// policy iteration

/// Axis-aligned sampling box for positions.
#[derive(Clone, Debug)]
pub struct SampleBox {
    pub low: DVector<f64>,
    pub high: DVector<f64>,
}

impl SampleBox {
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_fn(self.low.len(), |k, _| {
            if self.high[k] > self.low[k] {
                rng.gen_range(self.low[k]..self.high[k])
            } else {
                self.low[k]
            }
        })
    }
}

#[derive(Clone, Debug)]
pub struct PiParams {
    pub samples: usize,
    /// Sup-norm value-change tolerance.
    pub tolerance: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Weight on the fresh least-squares fit; values below 1 damp the
    /// coupled fixed-point iteration between agents.
    pub relaxation: f64,
    pub pursuer_box: SampleBox,
    pub evader_box: SampleBox,
}

#[derive(Clone, Debug)]
pub struct PiResult {
    pub nets: NetSet,
    /// Mean absolute Bellman error over the sample set, per iteration.
    pub residual_history: Vec<f64>,
    /// Sup-norm value change over the sample set, per iteration.
    pub value_change_history: Vec<f64>,
    pub iterations: usize,
}

struct PiSample {
    errors: ErrorSet,
    /// Stacked basis inputs per player (players() order).
    stacks: Vec<DVector<f64>>,
    /// Own-block feature Jacobians per player.
    jacobians: Vec<DMatrix<f64>>,
    /// Feature vectors per player.
    features: Vec<DVector<f64>>,
}

/// Relative ridge of the policy-evaluation regression; damps feature
/// directions the sample set barely excites, whose unchecked coefficients
/// would otherwise saturate the improved policies.
const PI_RIDGE: f64 = 1e-4;

/// Offline policy iteration: alternates least-squares policy evaluation of
/// every player's Bellman equation over a sampled state set with the
/// saturated policy-improvement map, until the value functions stop
/// changing in sup norm over the samples.
pub fn policy_iteration(
    top: &BiLayerTopology,
    models: &ModelSet,
    weights: &WeightSet,
    mut nets: NetSet,
    params: &PiParams,
) -> Result<PiResult, LearningError> {
    let players = nets.players();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut samples = Vec::with_capacity(params.samples);
    for _ in 0..params.samples {
        let state = dynamics::JointState {
            pursuer_states: (0..top.n_pursuers()).map(|_| params.pursuer_box.draw(&mut rng)).collect(),
            evader_states: (0..top.n_evaders()).map(|_| params.evader_box.draw(&mut rng)).collect(),
            time: 0.0,
        };
        let errors = dynamics::all_local_errors(&state, top)?;
        let mut stacks = Vec::with_capacity(players.len());
        let mut jacobians = Vec::with_capacity(players.len());
        let mut features = Vec::with_capacity(players.len());
        for id in &players {
            let spec = &nets.critic(*id).spec;
            let z = spec.stack(&errors);
            jacobians.push(spec.grad_own(&z)?);
            features.push(spec.eval(&z)?);
            stacks.push(z);
        }
        samples.push(PiSample { errors, stacks, jacobians, features });
    }

    let b_bars: Vec<DMatrix<f64>> = players
        .iter()
        .map(|id| dynamics::b_bar(*id, top, models))
        .collect::<Result<_, _>>()?;

    let mut residual_history = Vec::new();
    let mut value_change_history = Vec::new();

    for iteration in 1..=params.max_iters {
        let nets_ref = &nets;
        let players_ref = &players;
        let b_bars_ref = &b_bars;
        let rows: Vec<Result<(Vec<DVector<f64>>, Vec<f64>), LearningError>> =
            parallel::map(&samples, |sample| {
                let mut controls =
                    Controls::zeros(top.n_pursuers(), top.n_evaders(), models.input_dim());
                for (slot, id) in players_ref.iter().enumerate() {
                    let grad = nets_ref.critic(*id).spec.grad_own(&sample.stacks[slot])?.transpose()
                        * &nets_ref.critic(*id).weights;
                    let u = saturated_policy(
                        &grad,
                        &b_bars_ref[slot],
                        &weights.get(*id).r_diag,
                        models.get(*id)?.input_bound,
                    );
                    match id.side {
                        Side::Pursuer => controls.pursuer_inputs[id.index] = u,
                        Side::Evader => controls.evader_inputs[id.index] = u,
                    }
                }
                let mut sigmas = Vec::with_capacity(players_ref.len());
                let mut costs_now = Vec::with_capacity(players_ref.len());
                for (slot, id) in players_ref.iter().enumerate() {
                    let rhs = dynamics::error_rhs_from(
                        *id,
                        sample.errors.get(*id),
                        &controls,
                        top,
                        models,
                    )?;
                    sigmas.push(&sample.jacobians[slot] * rhs);
                    costs_now.push(costs::running_cost(
                        *id,
                        &sample.errors,
                        &controls,
                        top,
                        weights,
                        models,
                    )?);
                }
                Ok((sigmas, costs_now))
            });
        let mut sigma_rows = Vec::with_capacity(samples.len());
        let mut cost_rows = Vec::with_capacity(samples.len());
        for row in rows {
            let (s, c) = row?;
            sigma_rows.push(s);
            cost_rows.push(c);
        }

        let mut max_change: f64 = 0.0;
        let mut residual_sum = 0.0;
        for (slot, id) in players.iter().enumerate() {
            let h = nets.critic(*id).spec.feature_count();
            let mut a = DMatrix::zeros(samples.len(), h);
            let mut rhs = DVector::zeros(samples.len());
            for (s, sigma) in sigma_rows.iter().enumerate() {
                a.row_mut(s).copy_from(&sigma[slot].transpose());
                rhs[s] = -cost_rows[s][slot];
            }
            let w_fit = linalg::least_squares_ridge(&a, &rhs, PI_RIDGE)
                .map_err(|source| LearningError::RankDeficient { owner: *id, source })?;
            if w_fit.iter().any(|v| !v.is_finite()) {
                return Err(LearningError::Divergence { owner: *id, quantity: "critic weights" });
            }
            let w_old = nets.critic(*id).weights.clone();
            let w_new = &w_old * (1.0 - params.relaxation) + w_fit * params.relaxation;
            for sample in &samples {
                let change = (&w_new - &w_old).dot(&sample.features[slot]).abs();
                max_change = max_change.max(change);
            }
            for (s, sigma) in sigma_rows.iter().enumerate() {
                residual_sum += (cost_rows[s][slot] + w_new.dot(&sigma[slot])).abs();
            }
            nets.critic_mut(*id).weights = w_new;
        }
        residual_history.push(residual_sum / (samples.len() * players.len()) as f64);
        value_change_history.push(max_change);
        if std::env::var_os("MPE_PI_DEBUG").is_some() {
            let norms: Vec<String> = players
                .iter()
                .map(|id| format!("{id}:{:.2}", nets.critic(*id).weights.norm()))
                .collect();
            eprintln!(
                "pi iter {iteration}: residual {:.4e} change {:.4e} |w| {}",
                residual_history.last().unwrap(),
                max_change,
                norms.join(" ")
            );
        }

        if max_change <= params.tolerance {
            nets.sync_actors_to_critics();
            return Ok(PiResult {
                nets,
                residual_history,
                value_change_history,
                iterations: iteration,
            });
        }
    }

    Err(LearningError::NonConvergence {
        iterations: params.max_iters,
        last_change: value_change_history.last().copied().unwrap_or(f64::NAN),
        residual_history,
    })
}

// ---------------------------------------------------------------------------
// weight serialization

const WEIGHTS_HEADER: &str = "# mpe-weights v1";

/// Writes all weights as a versioned table of (agent, layer, index, value).
pub fn save_weights(path: &Path, nets: &NetSet) -> Result<(), LearningError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{WEIGHTS_HEADER}")?;
    writeln!(out, "agent,layer,index,value")?;
    for id in nets.players() {
        for (k, v) in nets.critic(id).weights.iter().enumerate() {
            writeln!(out, "{id},critic,{k},{v}")?;
        }
        for (k, v) in nets.actor(id).weights.iter().enumerate() {
            writeln!(out, "{id},actor,{k},{v}")?;
        }
    }
    Ok(())
}

/// Loads weights saved by [`save_weights`] into an existing net set with
/// matching basis shapes.
pub fn load_weights(path: &Path, nets: &mut NetSet) -> Result<(), LearningError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut lines = file.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != WEIGHTS_HEADER {
        return Err(LearningError::Parse(format!("unexpected header {header:?}")));
    }
    let columns = lines.next().transpose()?.unwrap_or_default();
    if columns.trim() != "agent,layer,index,value" {
        return Err(LearningError::Parse(format!("unexpected column row {columns:?}")));
    }
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(LearningError::Parse(format!("line {}: expected 4 fields", lineno + 3)));
        }
        let id = parse_player(parts[0])
            .ok_or_else(|| LearningError::Parse(format!("bad agent id {:?}", parts[0])))?;
        let index: usize = parts[2]
            .parse()
            .map_err(|_| LearningError::Parse(format!("bad index {:?}", parts[2])))?;
        let value: f64 = parts[3]
            .parse()
            .map_err(|_| LearningError::Parse(format!("bad value {:?}", parts[3])))?;
        let target = match parts[1] {
            "critic" => &mut nets.critic_mut(id).weights,
            "actor" => &mut nets.actor_mut(id).weights,
            other => return Err(LearningError::Parse(format!("bad layer {other:?}"))),
        };
        if index >= target.len() {
            return Err(LearningError::Parse(format!(
                "index {index} out of range for {id} ({} features)",
                target.len()
            )));
        }
        target[index] = value;
    }
    Ok(())
}

fn parse_player(token: &str) -> Option<PlayerId> {
    let (side, rest) = match token.split_at(1) {
        ("p", rest) => (Side::Pursuer, rest),
        ("e", rest) => (Side::Evader, rest),
        _ => return None,
    };
    rest.parse().ok().map(|index| PlayerId { side, index })
}
