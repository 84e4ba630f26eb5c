//! Baseline fits: leading singular vectors, and alternating minimization
//! over basis, coefficients, and states.
//!
//! The leading fit keeps the first r left-singular vectors as V and solves
//! one ridge problem for Wbar; it is the greedy fit with the scan disabled.
//!
//! Alternating minimization (AM) widens the decoder to x ~ V z + What Xi
//! h(z) with [V What] an orthonormal n x (r + qbar) frame, and cycles three
//! block updates, each optimal for its block with the others held fixed:
//!   B.1  frame update: orthogonal Procrustes against M = [Sr; Xi h(Sr)],
//!   B.2  coefficient update: ridge solve for Xi,
//!   B.3  state update: per-column Levenberg-Marquardt on Sr.
//! Each step cannot increase |S - V Sr - What Xi h(Sr)|_F^2 + gamma
//! |Xi|_F^2, so that regularized objective is tracked and must fall
//! monotonically; the stopping rule watches the unregularized fit instead,
//! which is the quantity callers care about.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{QmError, Result};
use crate::features::{quad_features, quad_jacobian, FeatureMapId};
use crate::greedy::QuadraticManifold;
use crate::matrixio::{CenteringShift, DataMatrix};
use crate::ridge::{ridge_solve, RidgeProblem};
use crate::svdcore::thin_svd;

/// Fit with V = the leading r left-singular vectors and Wbar from one ridge
/// solve on the dense residual S - V V^T S.
pub fn leading_fit(
    s_train: &DataMatrix,
    shift: &CenteringShift,
    r: usize,
    gamma: f64,
) -> Result<QuadraticManifold> {
    let n = s_train.rows();
    let ell = n.min(s_train.cols());
    if r == 0 || r > ell {
        return Err(QmError::Config {
            msg: format!("r = {r} must lie in 1..={ell} for this data"),
        });
    }
    if shift.len() != n {
        return Err(QmError::DimMismatch {
            context: "leading_fit".into(),
            expected: format!("shift of length {n}"),
            found: format!("length {}", shift.len()),
        });
    }
    let svd = thin_svd(s_train, r)?;
    let v = svd.u.clone();
    let z = v.transpose() * &s_train.matrix;
    let targets = &s_train.matrix - &v * &z;
    let (wbar, _) = ridge_solve(&RidgeProblem {
        features: quad_features(&z),
        targets,
        gamma,
    })?;
    Ok(QuadraticManifold {
        v,
        wbar,
        selected: (1..=r).collect(),
        mean: shift.clone(),
        feature: FeatureMapId::CondensedQuadratic,
        gamma,
        ell: n.min(s_train.cols()),
        am_fitted: false,
    })
}

/// Frobenius error of plain linear projection, |S - V (V^T S)|_F.
pub fn pca_error(s: &DataMatrix, v: &DMatrix<f64>) -> f64 {
    let z = v.transpose() * &s.matrix;
    (&s.matrix - v * z).norm()
}

#[derive(Debug, Clone)]
pub struct AmConfig {
    pub r: usize,
    /// Number of extra frame columns carrying the quadratic correction.
    pub qbar: usize,
    pub gamma: f64,
    pub max_outer: usize,
    /// Relative change of the unregularized fit that counts as converged.
    pub tol: f64,
    /// Residual-evaluation budget per column and outer iteration of the
    /// state update.
    pub lm_max_evals: usize,
}

impl AmConfig {
    /// Defaults: max_outer = 15 r, tol = 1e-12, lm_max_evals = 1600.
    pub fn new(r: usize, qbar: usize, gamma: f64) -> Self {
        AmConfig {
            r,
            qbar,
            gamma,
            max_outer: 15 * r,
            tol: 1e-12,
            lm_max_evals: 1600,
        }
    }

    fn validate(&self, n: usize, k: usize) -> Result<()> {
        if self.r == 0 || self.qbar == 0 {
            return Err(QmError::Config {
                msg: format!("r = {} and qbar = {} must both be at least 1", self.r, self.qbar),
            });
        }
        let ell = n.min(k);
        if self.r + self.qbar > ell {
            return Err(QmError::Config {
                msg: format!(
                    "frame width r + qbar = {} exceeds min(n, k) = {ell}",
                    self.r + self.qbar
                ),
            });
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(QmError::Config {
                msg: format!("gamma must be finite and nonnegative, got {}", self.gamma),
            });
        }
        if self.max_outer == 0 {
            return Err(QmError::Config {
                msg: "max_outer must be at least 1".into(),
            });
        }
        if self.lm_max_evals < 2 {
            return Err(QmError::Config {
                msg: "lm_max_evals must allow at least one trial step".into(),
            });
        }
        Ok(())
    }
}

/// Iterates and audit trail of an AM run.
#[derive(Debug, Clone)]
pub struct AmState {
    pub v: DMatrix<f64>,
    pub what: DMatrix<f64>,
    pub xi: DMatrix<f64>,
    pub sr: DMatrix<f64>,
    /// Regularized objective after each outer iteration (entry 0 is the
    /// starting value); nonincreasing by construction.
    pub objective_history: Vec<f64>,
    pub converged: bool,
    pub outer_iterations: usize,
}

/// Orthogonal Procrustes: the X with orthonormal columns minimizing
/// |S - X M|_F, namely A B^T from the thin SVD of S M^T = A Sigma B^T.
///
/// When S M^T is rank-deficient the optimizer is not unique; the backend's
/// completion is accepted (it is still orthonormal and still optimal).
pub fn am_procrustes_step(s: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.ncols() != s.ncols() {
        return Err(QmError::DimMismatch {
            context: "am_procrustes_step".into(),
            expected: format!("{} columns", s.ncols()),
            found: format!("{}", m.ncols()),
        });
    }
    if m.nrows() > s.nrows() {
        return Err(QmError::Config {
            msg: format!(
                "frame width {} exceeds the ambient dimension {}",
                m.nrows(),
                s.nrows()
            ),
        });
    }
    let g = s * m.transpose();
    let svd = g.svd(true, true);
    let a = svd.u.as_ref().expect("u requested");
    let bt = svd.v_t.as_ref().expect("v_t requested");
    Ok(a * bt)
}

/// Coefficient update: ridge solve for Xi in
/// min |S - V Sr - What Xi h(Sr)|_F^2 + gamma |Xi|_F^2. With What
/// orthonormal and orthogonal to V, projecting the residual onto What
/// reduces this to a q x p ridge problem.
pub fn am_xi_step(
    s: &DMatrix<f64>,
    v: &DMatrix<f64>,
    what: &DMatrix<f64>,
    sr: &DMatrix<f64>,
    gamma: f64,
) -> Result<DMatrix<f64>> {
    let features = quad_features(sr);
    let targets = what.transpose() * (s - v * sr);
    let (xi, _) = ridge_solve(&RidgeProblem {
        features,
        targets,
        gamma,
    })?;
    Ok(xi)
}

/// One column's Levenberg-Marquardt descent on
/// f(z) = |x - V z - WXi h(z)|_2^2, starting from z0. Uphill trial steps
/// are rejected (damping grows instead), so the returned cost never
/// exceeds f(z0). Stops on a small gradient, a damping blow-up, or the
/// residual-evaluation budget.
fn lm_column(
    v: &DMatrix<f64>,
    wxi: &DMatrix<f64>,
    x: &DVector<f64>,
    z0: &DVector<f64>,
    max_evals: usize,
) -> DVector<f64> {
    let r = v.ncols();
    let resid = |z: &DVector<f64>| -> DVector<f64> {
        x - v * z - wxi * quad_features(&DMatrix::from_column_slice(r, 1, z.as_slice()))
    };
    let mut z = z0.clone();
    let mut res = resid(&z);
    let mut cost = res.norm_squared();
    let mut evals = 1usize;
    let mut lambda = 1e-3;
    let grad_tol = 1e-10 * (1.0 + x.norm());
    while evals < max_evals {
        let a = v + wxi * quad_jacobian(z.as_slice());
        let grad = a.transpose() * &res;
        if grad.norm() <= grad_tol {
            break;
        }
        let mut step = None;
        while step.is_none() && lambda <= 1e12 {
            let gram = a.transpose() * &a + DMatrix::identity(r, r) * lambda;
            match nalgebra::Cholesky::new(gram) {
                Some(chol) => step = Some(chol.solve(&grad)),
                None => lambda *= 10.0,
            }
        }
        let Some(delta) = step else { break };
        let z_try = &z + delta;
        let res_try = resid(&z_try);
        evals += 1;
        let cost_try = res_try.norm_squared();
        if cost_try.is_finite() && cost_try < cost {
            z = z_try;
            res = res_try;
            cost = cost_try;
            lambda = (lambda * 0.3).max(1e-12);
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    z
}

/// State update: per-column LM on Sr with everything else fixed, started
/// from `sr_init`. Columns are independent and run in parallel.
pub fn am_state_step(
    s: &DMatrix<f64>,
    v: &DMatrix<f64>,
    what: &DMatrix<f64>,
    xi: &DMatrix<f64>,
    sr_init: &DMatrix<f64>,
    lm_max_evals: usize,
) -> Result<DMatrix<f64>> {
    if sr_init.ncols() != s.ncols() || sr_init.nrows() != v.ncols() {
        return Err(QmError::DimMismatch {
            context: "am_state_step".into(),
            expected: format!("{} x {} initial states", v.ncols(), s.ncols()),
            found: format!("{} x {}", sr_init.nrows(), sr_init.ncols()),
        });
    }
    let wxi = what * xi;
    let cols: Vec<DVector<f64>> = (0..s.ncols())
        .into_par_iter()
        .map(|j| {
            lm_column(
                v,
                &wxi,
                &s.column(j).into_owned(),
                &sr_init.column(j).into_owned(),
                lm_max_evals,
            )
        })
        .collect();
    let mut sr = DMatrix::zeros(v.ncols(), s.ncols());
    for (j, col) in cols.into_iter().enumerate() {
        sr.set_column(j, &col);
    }
    Ok(sr)
}

fn am_fit_value(
    s: &DMatrix<f64>,
    v: &DMatrix<f64>,
    what: &DMatrix<f64>,
    xi: &DMatrix<f64>,
    sr: &DMatrix<f64>,
) -> f64 {
    (s - v * sr - what * (xi * quad_features(sr))).norm_squared()
}

/// Alternating minimization. Starts from the leading r + qbar left-singular
/// vectors with Xi = 0 and Sr = V^T S, then cycles B.1 / B.2 / B.3 until
/// the unregularized fit stalls or max_outer is reached.
pub fn am_fit(
    s_train: &DataMatrix,
    shift: &CenteringShift,
    cfg: &AmConfig,
) -> Result<(QuadraticManifold, AmState)> {
    let n = s_train.rows();
    let k = s_train.cols();
    cfg.validate(n, k)?;
    if shift.len() != n {
        return Err(QmError::DimMismatch {
            context: "am_fit".into(),
            expected: format!("shift of length {n}"),
            found: format!("length {}", shift.len()),
        });
    }
    let s = &s_train.matrix;
    let d = cfg.r + cfg.qbar;
    let svd = thin_svd(s_train, d)?;
    let mut v = svd.u.columns(0, cfg.r).into_owned();
    let mut what = svd.u.columns(cfg.r, cfg.qbar).into_owned();
    let p = FeatureMapId::CondensedQuadratic.dim(cfg.r);
    let mut xi = DMatrix::zeros(cfg.qbar, p);
    let mut sr = v.transpose() * s;

    let mut fit = am_fit_value(s, &v, &what, &xi, &sr);
    let mut history = vec![fit + cfg.gamma * xi.norm_squared()];
    let mut converged = false;
    let mut outer_iterations = 0;
    for _ in 1..=cfg.max_outer {
        outer_iterations += 1;
        // B.1: frame update against the current states and coefficients.
        let mut m_mat = DMatrix::zeros(d, k);
        m_mat.rows_mut(0, cfg.r).copy_from(&sr);
        m_mat
            .rows_mut(cfg.r, cfg.qbar)
            .copy_from(&(&xi * quad_features(&sr)));
        let x_frame = am_procrustes_step(s, &m_mat)?;
        v = x_frame.columns(0, cfg.r).into_owned();
        what = x_frame.columns(cfg.r, cfg.qbar).into_owned();
        // B.2: coefficients.
        xi = am_xi_step(s, &v, &what, &sr, cfg.gamma)?;
        // B.3: states.
        sr = am_state_step(s, &v, &what, &xi, &sr, cfg.lm_max_evals)?;

        let new_fit = am_fit_value(s, &v, &what, &xi, &sr);
        let reg = new_fit + cfg.gamma * xi.norm_squared();
        if !reg.is_finite() {
            return Err(QmError::NonFiniteObjective {
                context: format!("alternating minimization outer iteration {outer_iterations}"),
            });
        }
        history.push(reg);
        let stalled = (new_fit - fit).abs() <= cfg.tol * (1.0 + fit);
        fit = new_fit;
        if stalled {
            converged = true;
            break;
        }
    }

    let manifold = QuadraticManifold {
        v: v.clone(),
        wbar: &what * &xi,
        selected: Vec::new(),
        mean: shift.clone(),
        feature: FeatureMapId::CondensedQuadratic,
        gamma: cfg.gamma,
        ell: d,
        am_fitted: true,
    };
    let state = AmState {
        v,
        what,
        xi,
        sr,
        objective_history: history,
        converged,
        outer_iterations,
    };
    Ok((manifold, state))
}
