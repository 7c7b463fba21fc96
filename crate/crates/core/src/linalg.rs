//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("least-squares system is rank deficient (effective rank {rank} of {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },
    #[error("Riccati iteration did not reach stationarity within {0} steps")]
    RiccatiNonStationary(usize),
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
}

/// blockdiag(A, A) for the augmented-error drift.
pub fn block_diag_pair(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    out.view_mut((0, 0), (n, n)).copy_from(a);
    out.view_mut((n, n), (n, n)).copy_from(a);
    out
}

/// Matrix exponential by scaling-and-squaring with a Taylor core.
///
/// Accurate to machine precision for the small, well-scaled matrices used
/// here (agent drift matrices over sub-second quadrature steps).
pub fn matrix_exp(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), a.ncols(), "matrix_exp needs a square matrix");
    let n = a.nrows();
    let norm = a.amax();
    // scale so the Taylor series converges fast
    let mut squarings = 0u32;
    let mut scale = 1.0;
    if norm > 0.5 {
        squarings = ((norm / 0.5).log2().ceil() as u32).min(60);
        scale = 0.5f64.powi(squarings as i32);
    }
    let scaled = a * scale;
    let mut term = DMatrix::identity(n, n);
    let mut sum = DMatrix::identity(n, n);
    for k in 1..=24 {
        term = &term * &scaled / (k as f64);
        sum += &term;
        if term.amax() < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Minimum eigenvalue of a symmetric matrix.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

/// Clamp a symmetric matrix to its positive-semidefinite part with a floor.
pub fn psd_clamp(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Rank of the controllability matrix [B, AB, ..., A^{n-1}B].
pub fn controllability_rank(a: &DMatrix<f64>, b: &DMatrix<f64>) -> usize {
    let n = a.nrows();
    let m = b.ncols();
    let mut ctrb = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for k in 0..n {
        ctrb.view_mut((0, k * m), (n, m)).copy_from(&block);
        block = a * &block;
    }
    let tol = 1e-10 * ctrb.amax().max(1.0);
    ctrb.svd(false, false)
        .singular_values
        .iter()
        .filter(|s| **s > tol)
        .count()
}

pub fn is_controllable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    controllability_rank(a, b) == a.nrows()
}

/// Minimum-norm least-squares solve of `A w = rhs` via SVD.
///
/// Collinear feature columns (common on degenerate game manifolds) fall in
/// the truncated null space and receive zero weight. Errors only when no
/// direction at all is identifiable.
pub fn least_squares_min_norm(
    a: &DMatrix<f64>,
    rhs: &DVector<f64>,
) -> Result<DVector<f64>, LinalgError> {
    least_squares_ridge(a, rhs, 0.0)
}

/// Ridge-regularized least squares via SVD:
/// `w = sum_i s_i / (s_i^2 + lambda^2) (u_i' rhs) v_i` with
/// `lambda = rel_ridge * s_max`. Weakly identified directions are damped
/// toward zero instead of absorbing large parasitic coefficients.
pub fn least_squares_ridge(
    a: &DMatrix<f64>,
    rhs: &DVector<f64>,
    rel_ridge: f64,
) -> Result<DVector<f64>, LinalgError> {
    let cols = a.ncols();
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax <= 0.0 || !smax.is_finite() {
        return Err(LinalgError::RankDeficient { rank: 0, cols });
    }
    let lambda = rel_ridge * smax;
    let cutoff = smax * 1e-12 * (a.nrows().max(cols) as f64);
    let u = svd.u.as_ref().expect("svd with u");
    let vt = svd.v_t.as_ref().expect("svd with v_t");
    let mut w = DVector::zeros(cols);
    let mut rank = 0usize;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s <= cutoff {
            continue;
        }
        rank += 1;
        let coeff = s / (s * s + lambda * lambda) * u.column(i).dot(rhs);
        w.axpy(coeff, &vt.row(i).transpose(), 1.0);
    }
    if rank == 0 {
        return Err(LinalgError::RankDeficient { rank: 0, cols });
    }
    Ok(w)
}

/// Integrate the matrix Riccati ODE
/// `dP/dt = Q + A'P + PA - P B R^{-1} B' P`
/// from `P(0) = 0` until stationary or until the pseudo-horizon runs out,
/// returning the final iterate. This doubles as a finite-horizon value
/// (integration stopped at `t_max`) and as an iterative solver for the
/// algebraic equation (stationarity reached first).
pub fn riccati_ode(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r_inv: &DMatrix<f64>,
    dt: f64,
    t_max: f64,
    stat_tol: f64,
) -> DMatrix<f64> {
    let n = a.nrows();
    let at = a.transpose();
    let gain = b * r_inv * b.transpose();
    let deriv = |p: &DMatrix<f64>| -> DMatrix<f64> { q + &at * p + p * a - p * &gain * p };
    let mut p = DMatrix::zeros(n, n);
    let steps = (t_max / dt).ceil() as usize;
    for _ in 0..steps {
        let k1 = deriv(&p);
        let k2 = deriv(&(&p + &k1 * (dt / 2.0)));
        let k3 = deriv(&(&p + &k2 * (dt / 2.0)));
        let k4 = deriv(&(&p + &k3 * dt));
        let delta = (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        p += &delta;
        if delta.amax() < stat_tol * dt {
            break;
        }
    }
    // symmetrize against drift
    (&p + p.transpose()) * 0.5
}
