//! Slightly-altruistic running and terminal costs.
//!
//! Each player's integrand combines a quadratic form in its own local error
//! (self-, team- and teammates-interested terms folded into one assembled
//! matrix), bilinear cross terms against neighbors' errors, the saturated
//! energy integral of its own and its teammates' controls minus the
//! targeted opponents', and a constant time-optimality weight. Evaders
//! carry the state terms negated.

use crate::dynamics::{Controls, ErrorSet, ModelSet};
use crate::topology::BiLayerTopology;
use crate::{linalg, PlayerId, Side};
use nalgebra::{DMatrix, DVector};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("control component {value} at or beyond the saturation bound {bound}; the admissible input set is open")]
    SaturationBoundary { value: f64, bound: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("assembled state weight for {owner} is not positive definite (min eigenvalue {min_eigenvalue:.6e})")]
    NotPositiveDefinite { owner: PlayerId, min_eigenvalue: f64 },
    #[error("index evaluation needs at least one sample")]
    EmptyTrace,
}

/// Knobs of the altruism terms.
#[derive(Clone, Debug)]
pub struct AltruismParams {
    /// Teammates-cross weight.
    pub mu: f64,
    /// Opponent-cross weight.
    pub eta: f64,
    /// Team-interest matrix applied to the center error.
    pub gamma: DMatrix<f64>,
    /// Time-optimality weight.
    pub rho: f64,
}

/// All cost weights of a single player.
#[derive(Clone, Debug)]
pub struct CostWeights {
    /// Weight on the teammate error block (negative definite for evaders).
    pub lambda_team: DMatrix<f64>,
    /// Weight on the opponent error block.
    pub lambda_cross: DMatrix<f64>,
    /// Diagonal of the control energy weight.
    pub r_diag: DVector<f64>,
    /// Cross matrices against teammates' local errors, by teammate index.
    pub q_cross_team: HashMap<usize, DMatrix<f64>>,
    /// Cross matrices against opponents' local errors, by opponent index.
    pub q_cross_opp: HashMap<usize, DMatrix<f64>>,
    /// Terminal matrices are the running ones scaled by this factor.
    pub terminal_scale: f64,
    pub altruism: AltruismParams,
}

/// Cost weights of every player.
#[derive(Clone, Debug)]
pub struct WeightSet {
    pub pursuers: Vec<CostWeights>,
    pub evaders: Vec<CostWeights>,
}

impl WeightSet {
    pub fn get(&self, id: PlayerId) -> &CostWeights {
        match id.side {
            Side::Pursuer => &self.pursuers[id.index],
            Side::Evader => &self.evaders[id.index],
        }
    }
}

/// Assembles the 2n x 2n state weight from the self and team terms.
///
/// Top-left `(1+mu+eta) L_team + G/(1+a_team)^2`, bottom-right the cross
/// analog, off-diagonal blocks `-G/((1+a_team)(1+a_cross))`. Degrees are
/// the caller's choice; cost assembly uses raw communication degrees.
pub fn assemble_q_tilde(weights: &CostWeights, a_team: f64, a_cross: f64) -> DMatrix<f64> {
    let n = weights.lambda_team.nrows();
    let scale = 1.0 + weights.altruism.mu + weights.altruism.eta;
    let gamma = &weights.altruism.gamma;
    let mut q = DMatrix::zeros(2 * n, 2 * n);
    let dt = 1.0 + a_team;
    let dc = 1.0 + a_cross;
    q.view_mut((0, 0), (n, n))
        .copy_from(&(&weights.lambda_team * scale + gamma / (dt * dt)));
    q.view_mut((n, n), (n, n))
        .copy_from(&(&weights.lambda_cross * scale + gamma / (dc * dc)));
    let off = -gamma / (dt * dc);
    q.view_mut((0, n), (n, n)).copy_from(&off);
    q.view_mut((n, 0), (n, n)).copy_from(&off.transpose());
    q
}

/// Raw-degree assembled state weight of `owner` under `top`.
pub fn q_tilde_for(owner: PlayerId, weights: &WeightSet, top: &BiLayerTopology) -> DMatrix<f64> {
    let (a_team, a_cross) = match owner.side {
        Side::Pursuer => (
            top.gp.in_degree(owner.index).unwrap_or(0.0),
            top.pursuer_cross_degree(owner.index, false),
        ),
        Side::Evader => {
            (top.ge.in_degree(owner.index).unwrap_or(0.0), top.evader_cross_degree(owner.index))
        }
    };
    assemble_q_tilde(weights.get(owner), a_team, a_cross)
}

/// Positive-definiteness gate for pursuers' assembled weights.
pub fn validate_q_tilde(owner: PlayerId, q: &DMatrix<f64>) -> Result<(), CostError> {
    if owner.side == Side::Pursuer {
        let min_eigenvalue = linalg::min_symmetric_eigenvalue(q);
        if min_eigenvalue <= 0.0 {
            return Err(CostError::NotPositiveDefinite { owner, min_eigenvalue });
        }
    }
    Ok(())
}

fn check_strictly_inside(u: &DVector<f64>, bound: f64) -> Result<(), CostError> {
    for &value in u.iter() {
        if !value.is_finite() || value.abs() >= bound {
            return Err(CostError::SaturationBoundary { value, bound });
        }
    }
    Ok(())
}

/// Saturated control energy, in closed form:
/// `2 sum_k r_k bound^2 (t_k atanh t_k + ln(1 - t_k^2)/2)` with
/// `t_k = u_k / bound`. Nonnegative, zero only at u = 0, divergent at the
/// bound (rejected).
pub fn energy_integral(u: &DVector<f64>, bound: f64, r_diag: &DVector<f64>) -> Result<f64, CostError> {
    if u.len() != r_diag.len() {
        return Err(CostError::DimensionMismatch(format!(
            "control has {} components, R diagonal has {}",
            u.len(),
            r_diag.len()
        )));
    }
    check_strictly_inside(u, bound)?;
    let mut total = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        let t = uk / bound;
        total += 2.0 * r_diag[k] * bound * bound * (t * t.atanh() + 0.5 * (1.0 - t * t).ln());
    }
    Ok(total)
}

/// Gradient of [`energy_integral`]: `2 r_k bound atanh(u_k / bound)`.
pub fn energy_gradient(
    u: &DVector<f64>,
    bound: f64,
    r_diag: &DVector<f64>,
) -> Result<DVector<f64>, CostError> {
    if u.len() != r_diag.len() {
        return Err(CostError::DimensionMismatch(format!(
            "control has {} components, R diagonal has {}",
            u.len(),
            r_diag.len()
        )));
    }
    check_strictly_inside(u, bound)?;
    Ok(DVector::from_fn(u.len(), |k, _| 2.0 * r_diag[k] * bound * (u[k] / bound).atanh()))
}

fn energy_of(
    id: PlayerId,
    controls: &Controls,
    weights: &WeightSet,
    models: &ModelSet,
) -> Result<f64, CostError> {
    let bound = models
        .get(id)
        .map_err(|e| CostError::DimensionMismatch(e.to_string()))?
        .input_bound;
    energy_integral(controls.input(id), bound, &weights.get(id).r_diag)
}

/// The full energy tally of `owner`'s integrand: own energy plus weighted
/// teammate energies minus weighted (effective for pursuers) opponent
/// energies. Also the capture-condition margin for pursuers.
pub fn energy_balance(
    owner: PlayerId,
    controls: &Controls,
    top: &BiLayerTopology,
    weights: &WeightSet,
    models: &ModelSet,
) -> Result<f64, CostError> {
    let mut total = energy_of(owner, controls, weights, models)?;
    match owner.side {
        Side::Pursuer => {
            let i = owner.index;
            for k in 0..top.n_pursuers() {
                if k != i && top.gp.weight(i, k) > 0.0 {
                    total +=
                        top.gp.weight(i, k) * energy_of(PlayerId::pursuer(k), controls, weights, models)?;
                }
            }
            for j in 0..top.n_evaders() {
                let w = top.effective_pe_weight(i, j);
                if w > 0.0 {
                    total -= w * energy_of(PlayerId::evader(j), controls, weights, models)?;
                }
            }
        }
        Side::Evader => {
            let j = owner.index;
            for l in 0..top.n_evaders() {
                if l != j && top.ge.weight(j, l) > 0.0 {
                    total +=
                        top.ge.weight(j, l) * energy_of(PlayerId::evader(l), controls, weights, models)?;
                }
            }
            for i in 0..top.n_pursuers() {
                let w = top.cross.ep_weight(j, i);
                if w > 0.0 {
                    total -= w * energy_of(PlayerId::pursuer(i), controls, weights, models)?;
                }
            }
        }
    }
    Ok(total)
}

/// Quadratic state terms of `owner`'s integrand, scaled by `matrix_scale`
/// (1 for running cost, the terminal factor for terminal cost). Positive
/// orientation; the caller applies the evader sign.
fn state_terms(
    owner: PlayerId,
    errors: &ErrorSet,
    top: &BiLayerTopology,
    weights: &WeightSet,
    matrix_scale: f64,
) -> f64 {
    let own = errors.get(owner).stacked();
    let w = weights.get(owner);
    let q_tilde = q_tilde_for(owner, weights, top);
    let mut total = (own.transpose() * &q_tilde * &own)[(0, 0)] * matrix_scale;
    match owner.side {
        Side::Pursuer => {
            let i = owner.index;
            for k in 0..top.n_pursuers() {
                let c = top.gp.weight(i, k);
                if k != i && c > 0.0 {
                    if let Some(q) = w.q_cross_team.get(&k) {
                        let other = errors.pursuers[k].stacked();
                        total += c * matrix_scale * (own.transpose() * q * other)[(0, 0)];
                    }
                }
            }
            for j in 0..top.n_evaders() {
                let c = top.effective_pe_weight(i, j);
                if c > 0.0 {
                    if let Some(q) = w.q_cross_opp.get(&j) {
                        let other = errors.evaders[j].stacked();
                        total += c * matrix_scale * (own.transpose() * q * other)[(0, 0)];
                    }
                }
            }
        }
        Side::Evader => {
            let j = owner.index;
            for l in 0..top.n_evaders() {
                let c = top.ge.weight(j, l);
                if l != j && c > 0.0 {
                    if let Some(q) = w.q_cross_team.get(&l) {
                        let other = errors.evaders[l].stacked();
                        total += c * matrix_scale * (own.transpose() * q * other)[(0, 0)];
                    }
                }
            }
            for i in 0..top.n_pursuers() {
                let c = top.cross.ep_weight(j, i);
                if c > 0.0 {
                    if let Some(q) = w.q_cross_opp.get(&i) {
                        let other = errors.pursuers[i].stacked();
                        total += c * matrix_scale * (own.transpose() * q * other)[(0, 0)];
                    }
                }
            }
        }
    }
    total
}

fn side_sign(side: Side) -> f64 {
    match side {
        Side::Pursuer => 1.0,
        Side::Evader => -1.0,
    }
}

/// Instantaneous integrand of `owner`'s index.
pub fn running_cost(
    owner: PlayerId,
    errors: &ErrorSet,
    controls: &Controls,
    top: &BiLayerTopology,
    weights: &WeightSet,
    models: &ModelSet,
) -> Result<f64, CostError> {
    let state_part = side_sign(owner.side) * state_terms(owner, errors, top, weights, 1.0);
    let energy_part = energy_balance(owner, controls, top, weights, models)?;
    Ok(state_part + energy_part + weights.get(owner).altruism.rho)
}

/// Terminal payoff of `owner`'s index at the final errors.
pub fn terminal_cost(
    owner: PlayerId,
    terminal_errors: &ErrorSet,
    top: &BiLayerTopology,
    weights: &WeightSet,
) -> f64 {
    let scale = weights.get(owner).terminal_scale;
    side_sign(owner.side) * state_terms(owner, terminal_errors, top, weights, scale)
}

/// One step of recorded game history, as needed to evaluate indices.
pub struct IndexStep<'a> {
    pub errors: &'a ErrorSet,
    pub controls: &'a Controls,
    pub top: &'a BiLayerTopology,
}

/// Realized index of `owner` over a fixed-step history: trapezoidal
/// integral of the running cost plus the terminal cost at the last record.
pub fn index_evaluate(
    owner: PlayerId,
    step: f64,
    history: &[IndexStep<'_>],
    weights: &WeightSet,
    models: &ModelSet,
) -> Result<f64, CostError> {
    let last = history.last().ok_or(CostError::EmptyTrace)?;
    let mut integral = 0.0;
    if history.len() > 1 {
        let mut prev = None;
        for item in history {
            let value =
                running_cost(owner, item.errors, item.controls, item.top, weights, models)?;
            if let Some(p) = prev {
                integral += 0.5 * (p + value) * step;
            }
            prev = Some(value);
        }
    }
    Ok(integral + terminal_cost(owner, last.errors, last.top, weights))
}
