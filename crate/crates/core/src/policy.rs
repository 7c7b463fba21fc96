//! Saturated optimal control maps and the coupled stationary residuals.
//!
//! The Hamiltonian-minimizing control under a componentwise bound is
//! `-bound tanh(R^{-1} B_bar' grad / (2 bound))`; substituting it back into
//! the energy integral collapses the linear terms and leaves the log form
//! used by the stationary residual of the coupled equations.

use crate::costs::{self, CostError, WeightSet};
use crate::dynamics::{self, Controls, DynamicsError, ErrorSet, ModelSet};
use crate::topology::BiLayerTopology;
use crate::{linalg, PlayerId, Side};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("gradient for {0} missing from the frozen field")]
    MissingGradient(PlayerId),
}

/// Value gradient of one player with respect to its own local error.
#[derive(Clone, Debug)]
pub struct ValueGradient {
    pub owner: PlayerId,
    pub grad: DVector<f64>,
}

/// Frozen per-step snapshot of everyone's value gradients.
#[derive(Clone, Debug)]
pub struct GradientField {
    pub pursuers: Vec<DVector<f64>>,
    pub evaders: Vec<DVector<f64>>,
}

impl GradientField {
    pub fn get(&self, id: PlayerId) -> Result<&DVector<f64>, PolicyError> {
        let list = match id.side {
            Side::Pursuer => &self.pursuers,
            Side::Evader => &self.evaders,
        };
        list.get(id.index).ok_or(PolicyError::MissingGradient(id))
    }
}

/// Strict-interior cap on tanh outputs. f64 tanh rounds to exactly 1 for
/// arguments beyond ~19, which would put controls on the saturation
/// boundary where the energy gradient blows up; every policy output is
/// clamped to this fraction of the bound instead.
pub const TANH_CLAMP: f64 = 1.0 - 1e-6;

pub(crate) fn clamped_tanh(d: f64) -> f64 {
    d.tanh().clamp(-TANH_CLAMP, TANH_CLAMP)
}

/// The tanh argument `R^{-1} B_bar' grad / (2 bound)`.
pub fn policy_argument(
    grad: &DVector<f64>,
    b_bar: &DMatrix<f64>,
    r_diag: &DVector<f64>,
    bound: f64,
) -> DVector<f64> {
    let mut d = b_bar.transpose() * grad;
    for k in 0..d.len() {
        d[k] /= 2.0 * bound * r_diag[k];
    }
    d
}

/// Saturated minimizing control: `-bound tanh(D)`, strictly inside the
/// bound for every finite gradient.
pub fn saturated_policy(
    grad: &DVector<f64>,
    b_bar: &DMatrix<f64>,
    r_diag: &DVector<f64>,
    bound: f64,
) -> DVector<f64> {
    policy_argument(grad, b_bar, r_diag, bound).map(|d| -bound * clamped_tanh(d))
}

/// Hamiltonian of `owner`: running cost plus gradient-weighted error drift.
pub fn hamiltonian(
    owner: PlayerId,
    grad: &DVector<f64>,
    errors: &ErrorSet,
    controls: &Controls,
    top: &BiLayerTopology,
    weights: &WeightSet,
    models: &ModelSet,
) -> Result<f64, PolicyError> {
    let running = costs::running_cost(owner, errors, controls, top, weights, models)?;
    let rhs = dynamics::error_rhs_from(owner, errors.get(owner), controls, top, models)?;
    Ok(running + grad.dot(&rhs))
}

/// Log part of the optimal energy: `bound^2 sum_k r_k ln(1 - tanh^2 D_k)`,
/// evaluated on the clamped tanh so it pairs exactly with the policy map.
fn log_energy(d: &DVector<f64>, r_diag: &DVector<f64>, bound: f64) -> f64 {
    let mut total = 0.0;
    for k in 0..d.len() {
        let t = clamped_tanh(d[k]);
        total += r_diag[k] * (1.0 - t * t).ln();
    }
    bound * bound * total
}

/// Energy of the induced saturated control, in closed form:
/// `bound grad' B_bar tanh(D) + bound^2 R_bar ln(1 - tanh^2 D)`.
///
/// Where the clamp is active the linear term uses the clamped argument, so
/// this stays the exact energy of [`saturated_policy`]'s output.
pub fn optimal_energy_term(
    grad: &DVector<f64>,
    b_bar: &DMatrix<f64>,
    r_diag: &DVector<f64>,
    bound: f64,
) -> f64 {
    let d = policy_argument(grad, b_bar, r_diag, bound);
    let d_max = TANH_CLAMP.atanh();
    let mut lin = 0.0;
    for k in 0..d.len() {
        let d_eff = d[k].clamp(-d_max, d_max);
        lin += 2.0 * bound * bound * r_diag[k] * d_eff * clamped_tanh(d[k]);
    }
    lin + log_energy(&d, r_diag, bound)
}

fn argument_for(
    id: PlayerId,
    grads: &GradientField,
    top: &BiLayerTopology,
    weights: &WeightSet,
    models: &ModelSet,
) -> Result<DVector<f64>, PolicyError> {
    let model = models.get(id)?;
    let b_bar = dynamics::b_bar(id, top, models)?;
    Ok(policy_argument(grads.get(id)?, &b_bar, &weights.get(id).r_diag, model.input_bound))
}

/// Left side of the coupled stationary equation of `owner`, with every
/// player on its saturated policy. Zero at an exact solution.
pub fn hji_residual(
    owner: PlayerId,
    grads: &GradientField,
    errors: &ErrorSet,
    top: &BiLayerTopology,
    weights: &WeightSet,
    models: &ModelSet,
) -> Result<f64, PolicyError> {
    let own_grad = grads.get(owner)?;
    let delta = errors.get(owner).stacked();
    let a_bar = linalg::block_diag_pair(&models.get(owner)?.a_matrix);
    let mut residual = own_grad.dot(&(&a_bar * &delta));

    // quadratic state terms, with the evader sign
    let sign = match owner.side {
        Side::Pursuer => 1.0,
        Side::Evader => -1.0,
    };
    let q_tilde = costs::q_tilde_for(owner, weights, top);
    residual += sign * (delta.transpose() * &q_tilde * &delta)[(0, 0)];
    let w = weights.get(owner);
    match owner.side {
        Side::Pursuer => {
            let i = owner.index;
            for k in 0..top.n_pursuers() {
                let c = top.gp.weight(i, k);
                if k != i && c > 0.0 {
                    if let Some(q) = w.q_cross_team.get(&k) {
                        residual += c * (delta.transpose() * q * errors.pursuers[k].stacked())[(0, 0)];
                    }
                }
            }
            for j in 0..top.n_evaders() {
                let c = top.effective_pe_weight(i, j);
                if c > 0.0 {
                    if let Some(q) = w.q_cross_opp.get(&j) {
                        residual += c * (delta.transpose() * q * errors.evaders[j].stacked())[(0, 0)];
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
                        residual -= c * (delta.transpose() * q * errors.evaders[l].stacked())[(0, 0)];
                    }
                }
            }
            for i in 0..top.n_pursuers() {
                let c = top.cross.ep_weight(j, i);
                if c > 0.0 {
                    if let Some(q) = w.q_cross_opp.get(&i) {
                        residual -= c * (delta.transpose() * q * errors.pursuers[i].stacked())[(0, 0)];
                    }
                }
            }
        }
    }

    // energy logs: each term uses the control owner's R and bound
    let own_energy = |id: PlayerId| -> Result<f64, PolicyError> {
        let d = argument_for(id, grads, top, weights, models)?;
        Ok(log_energy(&d, &weights.get(id).r_diag, models.get(id)?.input_bound))
    };
    residual += own_energy(owner)?;
    match owner.side {
        Side::Pursuer => {
            let i = owner.index;
            for k in 0..top.n_pursuers() {
                let c = top.gp.weight(i, k);
                if k != i && c > 0.0 {
                    residual += c * own_energy(PlayerId::pursuer(k))?;
                }
            }
            for j in 0..top.n_evaders() {
                let c = top.effective_pe_weight(i, j);
                if c > 0.0 {
                    residual -= c * own_energy(PlayerId::evader(j))?;
                }
            }
        }
        Side::Evader => {
            let j = owner.index;
            for l in 0..top.n_evaders() {
                let c = top.ge.weight(j, l);
                if l != j && c > 0.0 {
                    residual += c * own_energy(PlayerId::evader(l))?;
                }
            }
            for i in 0..top.n_pursuers() {
                let c = top.cross.ep_weight(j, i);
                if c > 0.0 {
                    residual -= c * own_energy(PlayerId::pursuer(i))?;
                }
            }
        }
    }

    Ok(residual + w.altruism.rho)
}

/// Capture-condition margin of a pursuer: own plus weighted teammate
/// energies minus effectively-weighted targeted evader energies. Positive
/// margin certifies decrease of the pursuer's value along the flow.
pub fn capture_margin(
    owner: PlayerId,
    controls: &Controls,
    top: &BiLayerTopology,
    weights: &WeightSet,
    models: &ModelSet,
) -> Result<f64, PolicyError> {
    debug_assert_eq!(owner.side, Side::Pursuer);
    Ok(costs::energy_balance(owner, controls, top, weights, models)?)
}
