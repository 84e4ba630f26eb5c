//! Encoding snapshots onto a fitted manifold.
//!
//! The linear encoder z = V^T x is exact for the linear part but ignores the
//! quadratic correction, so off-manifold points land at a suboptimal z. The
//! Gauss-Newton encoder refines z per snapshot by minimizing
//! |x - V z - Wbar h(z)|_2, optionally with step damping.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{QmError, Result};
use crate::features::{quad_features, quad_jacobian};
use crate::greedy::QuadraticManifold;
use crate::matrixio::DataMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GnInit {
    Zero,
    /// Start from the linear encoding V^T x.
    LinearEncode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnConfig {
    pub max_iter: usize,
    /// Stop when |e_new - e_old| <= change_tol * (1 + e_old), with e the
    /// snapshot reconstruction error norm.
    pub change_tol: f64,
    /// Tikhonov damping lambda on the step; 0 takes the minimal-norm
    /// least-squares step, which absorbs rank-deficient Jacobians.
    pub damping: f64,
    pub init: GnInit,
    /// Return the best iterate seen (initializer included) instead of the
    /// last one, so refinement never loses to its starting point.
    pub keep_best: bool,
}

impl Default for GnConfig {
    fn default() -> Self {
        GnConfig {
            max_iter: 20,
            change_tol: 1e-12,
            damping: 0.0,
            init: GnInit::LinearEncode,
            keep_best: true,
        }
    }
}

impl GnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(QmError::Config {
                msg: "max_iter must be at least 1".into(),
            });
        }
        if !(self.change_tol.is_finite() && self.change_tol >= 0.0) {
            return Err(QmError::Config {
                msg: format!("change_tol must be finite and nonnegative, got {}", self.change_tol),
            });
        }
        if !(self.damping.is_finite() && self.damping >= 0.0) {
            return Err(QmError::Config {
                msg: format!("damping must be finite and nonnegative, got {}", self.damping),
            });
        }
        Ok(())
    }
}

/// Convergence report for one encoded snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct GnColumnReport {
    pub iterations: usize,
    pub initial_error: f64,
    pub final_error: f64,
    pub converged: bool,
}

fn check_rows(mani: &QuadraticManifold, x: &DataMatrix, context: &str) -> Result<()> {
    if x.rows() != mani.n() {
        return Err(QmError::DimMismatch {
            context: context.into(),
            expected: format!("{} rows", mani.n()),
            found: format!("{}", x.rows()),
        });
    }
    Ok(())
}

/// Linear encoding Z = V^T X. `x` must already carry the manifold's shift.
pub fn encode_linear(mani: &QuadraticManifold, x: &DataMatrix) -> Result<DMatrix<f64>> {
    check_rows(mani, x, "encode_linear")?;
    Ok(mani.v.transpose() * &x.matrix)
}

/// Decode X-hat = V Z + Wbar h(Z), adding the stored mean when requested.
pub fn decode(mani: &QuadraticManifold, z: &DMatrix<f64>, add_mean: bool) -> Result<DataMatrix> {
    if z.nrows() != mani.r() {
        return Err(QmError::DimMismatch {
            context: "decode".into(),
            expected: format!("{} coordinate rows", mani.r()),
            found: format!("{}", z.nrows()),
        });
    }
    let mut out = &mani.v * z + &mani.wbar * quad_features(z);
    if add_mean {
        for mut col in out.column_iter_mut() {
            col += &mani.mean.mean;
        }
    }
    DataMatrix::new(out)
}

fn column_error(mani: &QuadraticManifold, x: &DVector<f64>, z: &DVector<f64>) -> f64 {
    let recon = &mani.v * z + &mani.wbar * quad_features(&DMatrix::from_column_slice(z.len(), 1, z.as_slice()));
    (x - recon).norm()
}

fn gn_encode_column(
    mani: &QuadraticManifold,
    x: &DVector<f64>,
    cfg: &GnConfig,
) -> Result<(DVector<f64>, GnColumnReport)> {
    let r = mani.r();
    let mut z = match cfg.init {
        GnInit::Zero => DVector::zeros(r),
        GnInit::LinearEncode => mani.v.transpose() * x,
    };
    let initial_error = column_error(mani, x, &z);
    let mut best_z = z.clone();
    let mut best_err = initial_error;
    let mut prev_err = initial_error;
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=cfg.max_iter {
        iterations = it;
        let hprime = quad_jacobian(z.as_slice());
        let jac = &mani.v + &mani.wbar * hprime;
        let resid = x
            - (&mani.v * &z
                + &mani.wbar * quad_features(&DMatrix::from_column_slice(r, 1, z.as_slice())));
        let step: DVector<f64> = if cfg.damping == 0.0 {
            let svd = jac.svd(true, true);
            let sol = svd
                .solve(&DMatrix::from_column_slice(resid.len(), 1, resid.as_slice()), 1e-14)
                .map_err(|m| QmError::NonFiniteObjective {
                    context: format!("gauss-newton step: {m}"),
                })?;
            DVector::from_column_slice(sol.as_slice())
        } else {
            let gram = jac.transpose() * &jac + DMatrix::identity(r, r) * cfg.damping;
            let rhs = jac.transpose() * &resid;
            match nalgebra::Cholesky::new(gram) {
                Some(chol) => chol.solve(&rhs),
                None => {
                    return Err(QmError::NonFiniteObjective {
                        context: "gauss-newton damped normal equations lost definiteness".into(),
                    })
                }
            }
        };
        z += step;
        let err = column_error(mani, x, &z);
        if !err.is_finite() {
            return Err(QmError::NonFiniteObjective {
                context: "gauss-newton iterate diverged".into(),
            });
        }
        if err < best_err {
            best_err = err;
            best_z = z.clone();
        }
        if (err - prev_err).abs() <= cfg.change_tol * (1.0 + prev_err) {
            prev_err = err;
            converged = true;
            break;
        }
        prev_err = err;
    }
    let (out_z, final_error) = if cfg.keep_best {
        (best_z, best_err)
    } else {
        (z, prev_err)
    };
    Ok((
        out_z,
        GnColumnReport {
            iterations,
            initial_error,
            final_error,
            converged,
        },
    ))
}

/// Gauss-Newton encoding, one independent solve per snapshot column.
pub fn encode_gauss_newton(
    mani: &QuadraticManifold,
    x: &DataMatrix,
    cfg: &GnConfig,
) -> Result<(DMatrix<f64>, Vec<GnColumnReport>)> {
    cfg.validate()?;
    check_rows(mani, x, "encode_gauss_newton")?;
    let cols: Vec<(DVector<f64>, GnColumnReport)> = (0..x.cols())
        .into_par_iter()
        .map(|j| gn_encode_column(mani, &x.matrix.column(j).into_owned(), cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut z = DMatrix::zeros(mani.r(), x.cols());
    let mut reports = Vec::with_capacity(cols.len());
    for (j, (col, report)) in cols.into_iter().enumerate() {
        z.set_column(j, &col);
        reports.push(report);
    }
    Ok((z, reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureMapId;
    use crate::matrixio::CenteringShift;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn seeded(seed: u64) -> impl FnMut() -> f64 {
        let mut state = seed | 1;
        move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
        }
    }

    /// The exact parabola manifold: V spans the x axis, Wbar maps z^2 onto
    /// the second coordinate.
    fn parabola_manifold() -> QuadraticManifold {
        QuadraticManifold {
            v: DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            wbar: DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            selected: vec![2],
            mean: CenteringShift::zero(2),
            feature: FeatureMapId::CondensedQuadratic,
            gamma: 0.0,
            ell: 2,
            am_fitted: false,
        }
    }

    fn random_manifold(n: usize, r: usize, scale: f64, seed: u64) -> QuadraticManifold {
        let mut next = seeded(seed);
        let raw = DMatrix::from_fn(n, r, |_, _| next());
        let v = raw.qr().q().columns(0, r).into_owned();
        let p = r * (r + 1) / 2;
        let wbar = DMatrix::from_fn(n, p, |_, _| scale * next());
        QuadraticManifold {
            v,
            wbar,
            selected: (1..=r).collect(),
            mean: CenteringShift::zero(n),
            feature: FeatureMapId::CondensedQuadratic,
            gamma: 0.0,
            ell: n,
            am_fitted: false,
        }
    }

    #[test]
    fn linear_encode_and_decode_reproduce_the_parabola() {
        let mani = parabola_manifold();
        let x = DataMatrix::new(DMatrix::from_fn(2, 20, |row, j| {
            let t = -2.0 + 4.0 * (j as f64) / 19.0;
            if row == 0 {
                t
            } else {
                t * t
            }
        }))
        .unwrap();
        let z = encode_linear(&mani, &x).unwrap();
        for (j, zj) in z.column_iter().enumerate() {
            assert_relative_eq!(zj[0], -2.0 + 4.0 * (j as f64) / 19.0, max_relative = 1e-14);
        }
        let recon = decode(&mani, &z, false).unwrap();
        assert!((recon.matrix - x.matrix).amax() <= 1e-12);
    }

    #[test]
    fn decode_single_point() {
        let mani = parabola_manifold();
        let z = DMatrix::from_column_slice(1, 1, &[-2.0]);
        let x = decode(&mani, &z, false).unwrap();
        assert_eq!(x.matrix.as_slice(), &[-2.0, 4.0]);
    }

    #[test]
    fn identity_basis_encodes_to_the_data_itself() {
        let mut mani = random_manifold(3, 3, 0.0, 4);
        mani.v = DMatrix::identity(3, 3);
        let x = DataMatrix::new(DMatrix::from_fn(3, 5, |i, j| (i + 2 * j) as f64 - 3.0)).unwrap();
        let z = encode_linear(&mani, &x).unwrap();
        assert_eq!(z, x.matrix);
    }

    #[test]
    fn decoding_zero_coordinates_returns_the_mean() {
        let mut mani = parabola_manifold();
        mani.mean = CenteringShift {
            mean: DVector::from_column_slice(&[5.0, -3.0]),
        };
        let z = DMatrix::zeros(1, 3);
        let x = decode(&mani, &z, true).unwrap();
        for col in x.matrix.column_iter() {
            assert_eq!(col.as_slice(), &[5.0, -3.0]);
        }
    }

    #[test]
    fn one_damped_free_step_from_zero_matches_the_linear_encoder() {
        // At z = 0 the quadratic Jacobian vanishes, so the first step solves
        // min |V dz - x|, i.e. dz = V^T x exactly.
        let mani = random_manifold(8, 3, 0.7, 11);
        let mut next = seeded(40);
        let x = DataMatrix::new(DMatrix::from_fn(8, 6, |_, _| next())).unwrap();
        let cfg = GnConfig {
            max_iter: 1,
            init: GnInit::Zero,
            damping: 0.0,
            keep_best: false,
            ..GnConfig::default()
        };
        let (z_gn, reports) = encode_gauss_newton(&mani, &x, &cfg).unwrap();
        let z_lin = encode_linear(&mani, &x).unwrap();
        assert!((z_gn - z_lin).amax() <= 1e-12);
        assert!(reports.iter().all(|r| r.iterations == 1));
    }

    #[test]
    fn zero_quadratic_part_converges_immediately_to_linear() {
        let mani = random_manifold(6, 2, 0.0, 19);
        let mut next = seeded(77);
        let x = DataMatrix::new(DMatrix::from_fn(6, 4, |_, _| next())).unwrap();
        let (z, reports) = encode_gauss_newton(&mani, &x, &GnConfig::default()).unwrap();
        let z_lin = encode_linear(&mani, &x).unwrap();
        assert!((z - z_lin).amax() <= 1e-12);
        assert!(reports.iter().all(|r| r.converged));
    }

    #[test]
    fn on_manifold_points_reach_tiny_residuals_within_five_iterations() {
        let mani = parabola_manifold();
        let x = decode(
            &mani,
            &DMatrix::from_fn(1, 9, |_, j| -2.0 + 0.5 * j as f64),
            false,
        )
        .unwrap();
        let cfg = GnConfig {
            max_iter: 5,
            init: GnInit::Zero,
            ..GnConfig::default()
        };
        let (_, reports) = encode_gauss_newton(&mani, &x, &cfg).unwrap();
        for (j, rep) in reports.iter().enumerate() {
            assert!(
                rep.final_error <= 1e-10,
                "column {j} stalled at {:.3e} after {} iterations",
                rep.final_error,
                rep.iterations
            );
        }
    }

    #[test]
    fn keep_best_never_loses_to_the_initializer() {
        let mani = random_manifold(10, 3, 1.5, 23);
        let mut next = seeded(3);
        let x = DataMatrix::new(DMatrix::from_fn(10, 12, |_, _| 2.0 * next())).unwrap();
        let (z_gn, reports) = encode_gauss_newton(&mani, &x, &GnConfig::default()).unwrap();
        let z_lin = encode_linear(&mani, &x).unwrap();
        for j in 0..x.cols() {
            let x_col = x.matrix.column(j).into_owned();
            let gn_err = column_error(&mani, &x_col, &z_gn.column(j).into_owned());
            let lin_err = column_error(&mani, &x_col, &z_lin.column(j).into_owned());
            assert!(
                gn_err <= lin_err * (1.0 + 1e-12),
                "column {j}: refined {gn_err:.6e} vs linear {lin_err:.6e}"
            );
            assert!((reports[j].final_error - gn_err).abs() <= 1e-12 * (1.0 + gn_err));
        }
    }

    #[test]
    fn converged_columns_satisfy_first_order_optimality() {
        let mani = random_manifold(7, 2, 0.3, 59);
        let mut next = seeded(31);
        // Near-manifold points: decode random coordinates, then perturb.
        let z_true = DMatrix::from_fn(2, 6, |_, _| next());
        let mut x = decode(&mani, &z_true, false).unwrap().matrix;
        for v in x.iter_mut() {
            *v += 1e-3 * next();
        }
        let x = DataMatrix::new(x).unwrap();
        let cfg = GnConfig {
            max_iter: 60,
            ..GnConfig::default()
        };
        let (z, reports) = encode_gauss_newton(&mani, &x, &cfg).unwrap();
        for j in 0..x.cols() {
            assert!(reports[j].converged, "column {j} did not converge");
            let zj = z.column(j).into_owned();
            let resid = x.matrix.column(j)
                - (&mani.v * &zj
                    + &mani.wbar
                        * quad_features(&DMatrix::from_column_slice(2, 1, zj.as_slice())));
            let jac = &mani.v + &mani.wbar * quad_jacobian(zj.as_slice());
            let grad = jac.transpose() * resid;
            let xn = x.matrix.column(j).norm();
            assert!(
                grad.norm() <= 1e-6 * (1.0 + xn),
                "column {j}: gradient norm {:.3e}",
                grad.norm()
            );
        }
    }

    #[test]
    fn damped_steps_still_descend() {
        let mani = random_manifold(9, 3, 1.0, 67);
        let mut next = seeded(5);
        let x = DataMatrix::new(DMatrix::from_fn(9, 5, |_, _| next())).unwrap();
        let cfg = GnConfig {
            damping: 1e-4,
            max_iter: 30,
            ..GnConfig::default()
        };
        let (_, reports) = encode_gauss_newton(&mani, &x, &cfg).unwrap();
        for rep in &reports {
            assert!(rep.final_error <= rep.initial_error * (1.0 + 1e-12));
        }
    }

    #[test]
    fn linear_encoding_minimizes_the_projected_linear_misfit() {
        // For the linear part alone, |V^T (V z - V V^T x)| = |z - V^T x|,
        // so any perturbation away from z = V^T x increases it.
        let mani = random_manifold(8, 3, 0.0, 83);
        let mut next = seeded(13);
        let x = DVector::from_fn(8, |_, _| next());
        let z_star = mani.v.transpose() * &x;
        let base = column_error(&mani, &x, &z_star);
        for trial in 0..10 {
            let mut pert = seeded(100 + trial);
            let dz = DVector::from_fn(3, |_, _| 0.1 * pert());
            let err = column_error(&mani, &x, &(&z_star + dz));
            assert!(err >= base - 1e-12, "trial {trial}: {err} < {base}");
        }
    }

    #[test]
    fn dimension_mismatches_are_rejected() {
        let mani = parabola_manifold();
        let x = DataMatrix::new(DMatrix::zeros_generic(
            nalgebra::Dyn(3),
            nalgebra::Dyn(2),
        ).map(|_: f64| 1.0))
        .unwrap();
        assert!(matches!(
            encode_linear(&mani, &x),
            Err(QmError::DimMismatch { .. })
        ));
        let z = DMatrix::zeros(2, 2);
        assert!(matches!(decode(&mani, &z, false), Err(QmError::DimMismatch { .. })));
    }
}
