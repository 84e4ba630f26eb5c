//! Evaluation and introspection of fitted manifolds: relative errors with
//! an information-theoretic floor, and correlation diagnostics showing
//! which discarded directions the quadratic features can still express.

use std::fmt;
use std::time::Instant;

use nalgebra::DMatrix;

use crate::encoders::{encode_gauss_newton, encode_linear, GnConfig};
use crate::error::{QmError, Result};
use crate::features::quad_features;
use crate::greedy::QuadraticManifold;
use crate::matrixio::DataMatrix;
use crate::svdcore::{thin_svd, SvdFactorization};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodId {
    Greedy,
    Leading,
    Am,
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MethodId::Greedy => "greedy",
            MethodId::Leading => "leading",
            MethodId::Am => "am",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderChoice {
    Linear,
    GaussNewton(GnConfig),
}

impl fmt::Display for EncoderChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EncoderChoice::Linear => f.write_str("linear"),
            EncoderChoice::GaussNewton(_) => f.write_str("gauss-newton"),
        }
    }
}

/// Outcome of evaluating a manifold on one data matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// |S_hat - S|_F / |S|_F.
    pub relative_error: f64,
    /// |S_hat - S|_F^2, comparable against `lower_bound`.
    pub sq_error_sum: f64,
    /// Sum of squared singular values of S beyond index p + r: no decoder
    /// of this width can do better, whatever its basis or encoder.
    pub lower_bound: f64,
    /// Wall-clock seconds spent encoding and decoding.
    pub seconds: f64,
    pub columns: usize,
}

/// Squared-error floor for an (r, p)-wide decoder against data with the
/// given singular values: the tail sum over indices p + r + 1 ..= ell
/// (1-based). Zero when p + r covers every direction.
pub fn lower_bound(sigma: &[f64], r: usize, p: usize) -> f64 {
    let skip = p + r;
    if skip >= sigma.len() {
        return 0.0;
    }
    let mut sq: Vec<f64> = sigma.iter().map(|s| s * s).collect();
    sq.sort_by(|a, b| b.partial_cmp(a).expect("finite singular values"));
    sq[skip..].iter().sum()
}

/// Encode-decode `s` (already carrying the manifold's shift) and report the
/// relative error alongside the width-(r, p) lower bound for this data.
pub fn relative_error(
    mani: &QuadraticManifold,
    s: &DataMatrix,
    encoder: &EncoderChoice,
) -> Result<EvalReport> {
    let start = Instant::now();
    let z = match encoder {
        EncoderChoice::Linear => encode_linear(mani, s)?,
        EncoderChoice::GaussNewton(cfg) => encode_gauss_newton(mani, s, cfg)?.0,
    };
    let recon = &mani.v * &z + &mani.wbar * quad_features(&z);
    let seconds = start.elapsed().as_secs_f64();
    let diff = &recon - &s.matrix;
    let sq_error_sum = diff.norm_squared();
    let data_norm = s.matrix.norm();
    let relative = if data_norm > 0.0 {
        sq_error_sum.sqrt() / data_norm
    } else {
        0.0
    };
    let ell = s.rows().min(s.cols());
    let svd = thin_svd(s, ell)?;
    let bound = lower_bound(svd.sigma.as_slice(), mani.r(), mani.p());
    if !sq_error_sum.is_finite() {
        return Err(QmError::NonFiniteObjective {
            context: "evaluation reconstruction".into(),
        });
    }
    Ok(EvalReport {
        relative_error: relative,
        sq_error_sum,
        lower_bound: bound,
        seconds,
        columns: s.cols(),
    })
}

/// Correlation diagnostics between discarded singular directions and the
/// quadratic features of the kept coordinates.
///
/// Row q holds the data seen along the discarded direction u_q (equal to
/// sigma_q times the q-th right-singular row); column b holds feature row b
/// of h(V^T S). Both matrices center the rows before taking the inner
/// product; `ctilde` divides by the uncentered row norms, `pearson` by the
/// centered ones (a true correlation coefficient). Entries whose
/// denominator vanishes are set to zero and their row or column recorded.
#[derive(Debug, Clone)]
pub struct CorrelationReport {
    /// 1-based singular indices behind the rows, ascending.
    pub row_indices: Vec<usize>,
    pub ctilde: DMatrix<f64>,
    pub pearson: DMatrix<f64>,
    /// Singular indices whose row had a vanishing (centered or uncentered)
    /// norm.
    pub zero_rows: Vec<usize>,
    /// 1-based feature rows with a vanishing norm.
    pub zero_cols: Vec<usize>,
}

fn centered(row: &[f64]) -> Vec<f64> {
    let mean = row.iter().sum::<f64>() / row.len() as f64;
    row.iter().map(|v| v - mean).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Build the correlation report from the training factorization the
/// manifold was fitted on. Rows are the unselected indices in ascending
/// order, at most `row_cap` of them. AM manifolds carry no singular-vector
/// selection, so they are not supported here.
pub fn correlation_matrix(
    mani: &QuadraticManifold,
    svd: &SvdFactorization,
    row_cap: usize,
) -> Result<CorrelationReport> {
    if mani.am_fitted {
        return Err(QmError::Unsupported {
            reason: "correlation diagnostics need a singular-vector selection; \
                     alternating-minimization bases have none"
                .into(),
        });
    }
    if row_cap == 0 {
        return Err(QmError::Config {
            msg: "row_cap must be at least 1".into(),
        });
    }
    if mani.ell != svd.ell() {
        return Err(QmError::DimMismatch {
            context: "correlation_matrix".into(),
            expected: format!("factorization with {} singular vectors", mani.ell),
            found: format!("{}", svd.ell()),
        });
    }
    for &j in &mani.selected {
        if j == 0 || j > svd.ell() {
            return Err(QmError::IndexOutOfRange {
                index: j,
                ell: svd.ell(),
            });
        }
    }
    let k = svd.k();
    // Encoded coordinates z = V^T S, one row per selected index in
    // selection order: sigma_j * (row j of Vt).
    let mut z = DMatrix::zeros(mani.r(), k);
    for (row, &j) in mani.selected.iter().enumerate() {
        for c in 0..k {
            z[(row, c)] = svd.sigma[j - 1] * svd.vt[(j - 1, c)];
        }
    }
    let features = quad_features(&z);
    let p = features.nrows();

    let mut row_indices: Vec<usize> = (1..=svd.ell())
        .filter(|j| !mani.selected.contains(j))
        .collect();
    row_indices.truncate(row_cap);

    let feat_rows: Vec<Vec<f64>> = (0..p)
        .map(|b| features.row(b).iter().cloned().collect())
        .collect();
    let feat_centered: Vec<Vec<f64>> = feat_rows.iter().map(|r| centered(r)).collect();
    let feat_norm: Vec<f64> = feat_rows.iter().map(|r| norm(r)).collect();
    let feat_cnorm: Vec<f64> = feat_centered.iter().map(|r| norm(r)).collect();

    let mut ctilde = DMatrix::zeros(row_indices.len(), p);
    let mut pearson = DMatrix::zeros(row_indices.len(), p);
    let mut zero_rows = Vec::new();
    let mut zero_cols: Vec<usize> = (0..p)
        .filter(|&b| feat_norm[b] == 0.0 || feat_cnorm[b] == 0.0)
        .map(|b| b + 1)
        .collect();
    zero_cols.dedup();

    for (i, &q) in row_indices.iter().enumerate() {
        let raw: Vec<f64> = (0..k).map(|c| svd.sigma[q - 1] * svd.vt[(q - 1, c)]).collect();
        let cen = centered(&raw);
        let rn = norm(&raw);
        let rcn = norm(&cen);
        if rn == 0.0 || rcn == 0.0 {
            zero_rows.push(q);
        }
        for b in 0..p {
            let num: f64 = cen.iter().zip(&feat_centered[b]).map(|(a, c)| a * c).sum();
            let dc = rn * feat_norm[b];
            let dp = rcn * feat_cnorm[b];
            ctilde[(i, b)] = if dc > 0.0 { num / dc } else { 0.0 };
            pearson[(i, b)] = if dp > 0.0 { num / dp } else { 0.0 };
        }
    }
    Ok(CorrelationReport {
        row_indices,
        ctilde,
        pearson,
        zero_rows,
        zero_cols,
    })
}

/// One row of the singular-value table: 1-based index, the value, and the
/// cumulative energy sum of squares up to it.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularValueRow {
    pub index: usize,
    pub sigma: f64,
    pub cumulative_energy: f64,
}

pub fn singular_value_report(sigma: &[f64]) -> Vec<SingularValueRow> {
    let mut acc = 0.0;
    sigma
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            acc += s * s;
            SingularValueRow {
                index: i + 1,
                sigma: s,
                cumulative_energy: acc,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{am_fit, leading_fit, AmConfig};
    use crate::features::FeatureMapId;
    use crate::greedy::{greedy_fit, GreedyConfig};
    use crate::matrixio::CenteringShift;
    use nalgebra::DVector;

    fn seeded(seed: u64) -> impl FnMut() -> f64 {
        let mut state = seed | 1;
        move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
        }
    }

    fn random_data(n: usize, k: usize, seed: u64) -> DataMatrix {
        let mut next = seeded(seed);
        DataMatrix::new(DMatrix::from_fn(n, k, |_, _| next())).unwrap()
    }

    fn parabola() -> DataMatrix {
        DataMatrix::new(DMatrix::from_fn(2, 20, |row, j| {
            let x = -2.0 + 4.0 * (j as f64) / 19.0;
            if row == 0 {
                x
            } else {
                x * x
            }
        }))
        .unwrap()
    }

    #[test]
    fn lower_bound_is_the_tail_energy() {
        assert_eq!(lower_bound(&[3.0, 2.0, 1.0], 1, 1), 1.0);
        assert_eq!(lower_bound(&[3.0, 2.0, 1.0], 1, 2), 0.0);
        assert_eq!(lower_bound(&[3.0, 2.0, 1.0], 2, 3), 0.0);
        let got = lower_bound(&[4.0, 3.0, 2.0, 1.0], 1, 1);
        assert!((got - 5.0).abs() <= 1e-14, "2^2 + 1^2, got {got}");
    }

    #[test]
    fn lower_bound_sorts_defensively() {
        assert_eq!(lower_bound(&[1.0, 3.0, 2.0], 1, 1), 1.0);
    }

    #[test]
    fn exact_manifolds_evaluate_to_zero_error() {
        let s = parabola();
        let cfg = GreedyConfig {
            r: 1,
            m: 2,
            grow_window: false,
            gamma: 1e-12,
            tie_tolerance: 1e-12,
        };
        let (mani, _) = greedy_fit(&s, &CenteringShift::zero(2), &cfg).unwrap();
        let report = relative_error(&mani, &s, &EncoderChoice::Linear).unwrap();
        assert!(report.relative_error <= 1e-9, "got {:.3e}", report.relative_error);
        // r + p = 2 covers both directions, so the floor is zero.
        assert_eq!(report.lower_bound, 0.0);
        assert!(report.sq_error_sum >= report.lower_bound);
        assert_eq!(report.columns, 20);
    }

    #[test]
    fn a_zero_decoder_scores_relative_error_one() {
        // Data lives along e2, the basis along e1: every encoding is 0 and
        // the reconstruction is the zero matrix.
        let mani = QuadraticManifold {
            v: DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            wbar: DMatrix::zeros(2, 1),
            selected: vec![1],
            mean: CenteringShift::zero(2),
            feature: FeatureMapId::CondensedQuadratic,
            gamma: 0.0,
            ell: 2,
            am_fitted: false,
        };
        let s = DataMatrix::new(DMatrix::from_fn(2, 5, |row, j| {
            if row == 1 {
                1.0 + j as f64
            } else {
                0.0
            }
        }))
        .unwrap();
        let report = relative_error(&mani, &s, &EncoderChoice::Linear).unwrap();
        assert!((report.relative_error - 1.0).abs() <= 1e-14);
    }

    #[test]
    fn relative_error_is_scale_invariant_for_linear_decoders() {
        let mut next = seeded(31);
        let v = DMatrix::from_fn(6, 2, |_, _| next()).qr().q().columns(0, 2).into_owned();
        let mani = QuadraticManifold {
            v,
            wbar: DMatrix::zeros(6, 3),
            selected: vec![1, 2],
            mean: CenteringShift::zero(6),
            feature: FeatureMapId::CondensedQuadratic,
            gamma: 0.0,
            ell: 6,
            am_fitted: false,
        };
        let s = random_data(6, 9, 47);
        let s_scaled = DataMatrix::new(&s.matrix * 3.0).unwrap();
        let a = relative_error(&mani, &s, &EncoderChoice::Linear).unwrap();
        let b = relative_error(&mani, &s_scaled, &EncoderChoice::Linear).unwrap();
        assert!((a.relative_error - b.relative_error).abs() <= 1e-12);
    }

    #[test]
    fn every_fit_respects_the_error_floor() {
        let s = random_data(20, 15, 67);
        let shift = CenteringShift::zero(20);
        let (greedy, _) = greedy_fit(&s, &shift, &GreedyConfig::new(2, 1e-8)).unwrap();
        let leading = leading_fit(&s, &shift, 2, 1e-8).unwrap();
        let (am, _) = am_fit(
            &s,
            &shift,
            &AmConfig {
                max_outer: 6,
                ..AmConfig::new(2, 3, 1e-8)
            },
        )
        .unwrap();
        let gn = EncoderChoice::GaussNewton(GnConfig::default());
        for (name, mani) in [("greedy", &greedy), ("leading", &leading), ("am", &am)] {
            for enc in [&EncoderChoice::Linear, &gn] {
                let report = relative_error(mani, &s, enc).unwrap();
                // The AM decoder is wider (p counts r(r+1)/2 of its own r),
                // but its floor uses its own widths, so the bound holds for
                // every fit alike.
                assert!(
                    report.sq_error_sum >= report.lower_bound * (1.0 - 1e-10),
                    "{name}/{enc}: {:.6e} under floor {:.6e}",
                    report.sq_error_sum,
                    report.lower_bound
                );
            }
        }
    }

    #[test]
    fn parabola_correlation_is_perfect_after_full_centering() {
        let s = parabola();
        let cfg = GreedyConfig {
            r: 1,
            m: 2,
            grow_window: false,
            gamma: 1e-12,
            tie_tolerance: 1e-12,
        };
        let (mani, _) = greedy_fit(&s, &CenteringShift::zero(2), &cfg).unwrap();
        let svd = thin_svd(&s, 2).unwrap();
        let report = correlation_matrix(&mani, &svd, 10).unwrap();
        assert_eq!(report.row_indices, vec![1]);
        assert_eq!(report.pearson.shape(), (1, 1));
        // The discarded direction carries x^2 and the single feature is
        // z^2 = x^2: identical up to sign after centering.
        assert!(
            report.pearson[(0, 0)].abs() >= 1.0 - 1e-10,
            "pearson {:.12}",
            report.pearson[(0, 0)]
        );
        // With uncentered denominators the same entry shrinks by exactly
        // |centered|^2 / |raw|^2 of the x^2 sequence.
        let raw: Vec<f64> = (0..20)
            .map(|j| {
                let x: f64 = -2.0 + 4.0 * (j as f64) / 19.0;
                x * x
            })
            .collect();
        let cen = centered(&raw);
        let expect = norm(&cen) * norm(&cen) / (norm(&raw) * norm(&raw));
        assert!(
            (report.ctilde[(0, 0)].abs() - expect).abs() <= 1e-10,
            "ctilde {:.12} vs oracle {:.12}",
            report.ctilde[(0, 0)].abs(),
            expect
        );
        assert!(report.zero_rows.is_empty());
        assert!(report.zero_cols.is_empty());
    }

    #[test]
    fn correlation_entries_stay_within_unit_bounds() {
        let s = random_data(12, 10, 3);
        let (mani, _) = greedy_fit(&s, &CenteringShift::zero(12), &GreedyConfig::new(2, 1e-8)).unwrap();
        let svd = thin_svd(&s, 10).unwrap();
        let report = correlation_matrix(&mani, &svd, 5).unwrap();
        assert_eq!(report.row_indices.len(), 5);
        assert_eq!(report.ctilde.ncols(), 3);
        for m in [&report.ctilde, &report.pearson] {
            for v in m.iter() {
                assert!(v.abs() <= 1.0 + 1e-12, "entry {v} out of range");
            }
        }
        // Centering only shrinks the denominator, so pearson dominates.
        for (a, b) in report.ctilde.iter().zip(report.pearson.iter()) {
            assert!(a.abs() <= b.abs() + 1e-12);
        }
    }

    #[test]
    fn constant_rows_are_flagged_and_zeroed() {
        // Hand-built factorization whose first right-singular row is
        // constant: the discarded direction q = 1 sees the same value in
        // every snapshot, so its centered norm vanishes.
        let vt = DMatrix::from_row_slice(
            3,
            4,
            &[
                0.5, 0.5, 0.5, 0.5, //
                0.5, 0.5, -0.5, -0.5, //
                0.5, -0.5, 0.5, -0.5,
            ],
        );
        let svd = SvdFactorization {
            u: DMatrix::identity(3, 3),
            sigma: DVector::from_column_slice(&[2.0, 1.0, 0.5]),
            vt,
        };
        let mani = QuadraticManifold {
            v: DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]),
            wbar: DMatrix::zeros(3, 1),
            selected: vec![2],
            mean: CenteringShift::zero(3),
            feature: FeatureMapId::CondensedQuadratic,
            gamma: 0.0,
            ell: 3,
            am_fitted: false,
        };
        let report = correlation_matrix(&mani, &svd, 10).unwrap();
        assert_eq!(report.row_indices, vec![1, 3]);
        assert_eq!(report.zero_rows, vec![1]);
        for b in 0..report.pearson.ncols() {
            assert_eq!(report.pearson[(0, b)], 0.0);
        }
    }

    #[test]
    fn am_manifolds_are_rejected() {
        let s = random_data(10, 8, 21);
        let shift = CenteringShift::zero(10);
        let (mani, _) = am_fit(
            &s,
            &shift,
            &AmConfig {
                max_outer: 2,
                ..AmConfig::new(2, 2, 1e-8)
            },
        )
        .unwrap();
        let svd = thin_svd(&s, 4).unwrap();
        assert!(matches!(
            correlation_matrix(&mani, &svd, 5),
            Err(QmError::Unsupported { .. })
        ));
    }

    #[test]
    fn singular_value_report_accumulates_energy() {
        let rows = singular_value_report(&[3.0, 2.0, 1.0]);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].index, 1);
        assert_eq!(rows[0].cumulative_energy, 9.0);
        assert_eq!(rows[1].cumulative_energy, 13.0);
        assert_eq!(rows[2].cumulative_energy, 14.0);
        let s = random_data(6, 6, 10);
        let svd = thin_svd(&s, 6).unwrap();
        let table = singular_value_report(svd.sigma.as_slice());
        let total = table.last().unwrap().cumulative_energy;
        assert!(
            (total - s.matrix.norm_squared()).abs() <= 1e-10 * (1.0 + total),
            "energies must sum to |S|_F^2"
        );
    }
}
