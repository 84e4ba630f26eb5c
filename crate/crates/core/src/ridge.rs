//! Regularized least squares with multiple target rows.
//!
//! Solves min over W of |W H - R|_F^2 + gamma |W|_F^2 through the normal
//! equations on the p x p Gram matrix H H^T + gamma I. p is far smaller than
//! k in every fit here, and the one factorization serves all q target rows,
//! which is why the Gram route wins over a k-column QR.

use nalgebra::DMatrix;

use crate::error::{QmError, Result};

/// One regularized least-squares instance.
///
/// `features` is the p x k matrix H (one lifted encoded point per column),
/// `targets` the q x k matrix R, and `gamma` the nonnegative ridge weight.
/// gamma = 0 is only solvable when the Gram matrix is nonsingular.
#[derive(Debug, Clone)]
pub struct RidgeProblem {
    pub features: DMatrix<f64>,
    pub targets: DMatrix<f64>,
    pub gamma: f64,
}

/// Minimize |W H - R|_F^2 + gamma |W|_F^2; returns W (q x p) and the
/// objective evaluated at that W.
///
/// The Gram system is solved by Cholesky; if that factorization fails the
/// solver falls back to a symmetric eigendecomposition. With gamma = 0 a
/// singular Gram matrix is an explicit error rather than a pseudo-inverse,
/// so exact-interpolation demos must pass a tiny positive gamma instead.
pub fn ridge_solve(prob: &RidgeProblem) -> Result<(DMatrix<f64>, f64)> {
    let h = &prob.features;
    let r = &prob.targets;
    let gamma = prob.gamma;
    if h.ncols() != r.ncols() {
        return Err(QmError::DimMismatch {
            context: "ridge_solve".into(),
            expected: format!("targets with {} columns", h.ncols()),
            found: format!("{} columns", r.ncols()),
        });
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(QmError::Config {
            msg: format!("gamma must be finite and nonnegative, got {gamma}"),
        });
    }
    let p = h.nrows();
    let mut gram = h * h.transpose();
    for i in 0..p {
        gram[(i, i)] += gamma;
    }
    let b = r * h.transpose(); // q x p right-hand side of W (H H^T + gamma I) = R H^T

    let w = match nalgebra::linalg::Cholesky::new(gram.clone()) {
        Some(chol) => chol.solve(&b.transpose()).transpose(),
        None => solve_by_eigen(&gram, &b, gamma)?,
    };

    let objective = (&w * h - r).norm_squared() + gamma * w.norm_squared();
    if !objective.is_finite() {
        return Err(QmError::NonFiniteObjective {
            context: "ridge_solve".into(),
        });
    }
    Ok((w, objective))
}

/// Eigendecomposition fallback for Gram matrices Cholesky rejects.
///
/// The exact eigenvalues are >= gamma, so with gamma > 0 any numerically
/// smaller eigenvalue is clamped up to gamma. With gamma = 0 a nonsingular
/// spectrum is required.
fn solve_by_eigen(gram: &DMatrix<f64>, b: &DMatrix<f64>, gamma: f64) -> Result<DMatrix<f64>> {
    let eig = nalgebra::linalg::SymmetricEigen::new(gram.clone());
    let lam_max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let p = gram.nrows();
    let floor = if gamma > 0.0 {
        gamma
    } else {
        let cutoff = f64::EPSILON * lam_max * p as f64;
        if lam_max == 0.0 || eig.eigenvalues.iter().any(|&l| l <= cutoff) {
            return Err(QmError::SingularGram);
        }
        0.0
    };
    let mut inv = eig.eigenvalues.clone();
    for l in inv.iter_mut() {
        *l = 1.0 / (*l).max(floor);
    }
    // W = B Q diag(1/lambda) Q^T
    let q = &eig.eigenvectors;
    Ok(b * q * DMatrix::from_diagonal(&inv) * q.transpose())
}
