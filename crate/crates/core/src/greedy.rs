//! Greedy construction of quadratic manifolds.
//!
//! The fit minimizes J(V, W) = |S - V V^T S - W h(V^T S)|_F^2 + gamma |W|_F^2
//! over bases V drawn from the left-singular vectors of S. Scanning
//! candidates with the full J would cost a dense n-row solve per candidate;
//! instead, for k <= n, the residual and the encoded coordinates are
//! expressed through (sigma, Vt) alone (see [`crate::svdcore`]), giving a
//! reduced objective J' with the same minimum value. One thin SVD up front,
//! then every candidate costs a p x p ridge solve.
//!
//! Per iteration i the scan covers indices 1..=m (plus i when the window
//! grows) minus the already-selected ones; re-selecting a vector cannot
//! reduce J and would break the basis, so selected indices are excluded.
//! Ties go to the smallest index, which biases toward larger singular
//! values and keeps runs deterministic across thread counts.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{QmError, Result};
use crate::features::{quad_features, FeatureMapId};
use crate::matrixio::{CenteringShift, DataMatrix};
use crate::ridge::{ridge_solve, RidgeProblem};
use crate::svdcore::{residual_factors, thin_svd, IndexSets, SvdFactorization};

pub const MANIFOLD_MAGIC: [u8; 8] = *b"QMANIF1\0";
const AM_FITTED_BIT: u8 = 0x80;

/// A fitted quadratic manifold: decode(z) = V z + Wbar h(z) (+ mean).
///
/// `selected` holds the 1-based singular-vector indices behind V, in
/// selection order; it is empty for manifolds produced by alternating
/// minimization, whose basis is not tied to singular vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticManifold {
    pub v: DMatrix<f64>,
    pub wbar: DMatrix<f64>,
    pub selected: Vec<usize>,
    pub mean: CenteringShift,
    pub feature: FeatureMapId,
    pub gamma: f64,
    /// Ground-set size of the training factorization (indices run 1..=ell).
    pub ell: usize,
    pub am_fitted: bool,
}

impl QuadraticManifold {
    pub fn n(&self) -> usize {
        self.v.nrows()
    }

    pub fn r(&self) -> usize {
        self.v.ncols()
    }

    pub fn p(&self) -> usize {
        self.wbar.ncols()
    }
}

/// One row of the greedy fit's audit trail.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyRecord {
    pub iteration: usize,
    pub chosen: usize,
    /// Reduced objective value of the chosen candidate.
    pub objective: f64,
    /// Upper end of the scanned index window (after capping at ell).
    pub window: usize,
}

/// Per-iteration records of a greedy fit; objectives are nonincreasing.
#[derive(Debug, Clone, Default)]
pub struct GreedyTrace {
    pub records: Vec<GreedyRecord>,
}

#[derive(Debug, Clone)]
pub struct GreedyConfig {
    /// Target manifold dimension.
    pub r: usize,
    /// Base candidate count m; the scan covers 1..=m (+i with growth).
    pub m: usize,
    /// Grow the window by the iteration number, keeping the amount of new
    /// work per iteration constant.
    pub grow_window: bool,
    pub gamma: f64,
    /// Two objectives within tie_tolerance * (1 + |best|) count as tied.
    pub tie_tolerance: f64,
}

impl GreedyConfig {
    /// Defaults: m = 10 r, growing window, tie tolerance 1e-12.
    pub fn new(r: usize, gamma: f64) -> Self {
        GreedyConfig {
            r,
            m: 10 * r,
            grow_window: true,
            gamma,
            tie_tolerance: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 {
            return Err(QmError::Config {
                msg: "target dimension r must be at least 1".into(),
            });
        }
        if self.m == 0 {
            return Err(QmError::Config {
                msg: "candidate window m must be at least 1".into(),
            });
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(QmError::Config {
                msg: format!("gamma must be finite and nonnegative, got {}", self.gamma),
            });
        }
        if !(self.tie_tolerance.is_finite() && self.tie_tolerance >= 0.0) {
            return Err(QmError::Config {
                msg: format!(
                    "tie_tolerance must be finite and nonnegative, got {}",
                    self.tie_tolerance
                ),
            });
        }
        Ok(())
    }
}

/// Minimum over W' of the reduced objective J' for the basis
/// "idx.selected plus j_new".
///
/// J' = |SigmaVt_out - W' h(SigmaVt_in)|_F^2 + gamma |W'|_F^2 shares its
/// minimum value with the full objective J: splitting any W into the part
/// carried by the residual's left-singular vectors plus an orthogonal rest
/// shows the rest only adds cost. Valid for k <= n; wide matrices must use
/// the dense path in [`greedy_fit`]. W' itself is discarded here, only the
/// value matters during the scan.
pub fn candidate_objective(
    svd: &SvdFactorization,
    idx: &IndexSets,
    j_new: usize,
    gamma: f64,
) -> Result<f64> {
    if svd.k() > svd.n() {
        return Err(QmError::WideMatrix {
            n: svd.n(),
            k: svd.k(),
        });
    }
    let (sigma_vt_out, sigma_vt_in) = residual_factors(svd, idx, j_new)?;
    let features = quad_features(&sigma_vt_in);
    let (_w, objective) = ridge_solve(&RidgeProblem {
        features,
        targets: sigma_vt_out,
        gamma,
    })?;
    Ok(objective)
}

/// Full objective J for the basis "idx.selected plus j_new", evaluated with
/// dense n-row targets. The fallback for k > n, where J' is not valid;
/// costs a factor n/p more than the reduced scan.
fn dense_candidate_objective(
    s: &DataMatrix,
    svd: &SvdFactorization,
    idx: &IndexSets,
    j_new: usize,
    gamma: f64,
) -> Result<f64> {
    if j_new == 0 || j_new > svd.ell() {
        return Err(QmError::IndexOutOfRange {
            index: j_new,
            ell: svd.ell(),
        });
    }
    if idx.is_selected(j_new) {
        return Err(QmError::AlreadySelected { index: j_new });
    }
    let cols: Vec<usize> = idx
        .selected()
        .iter()
        .chain(std::iter::once(&j_new))
        .map(|q| q - 1)
        .collect();
    let v = svd.u.select_columns(cols.iter());
    let z = v.transpose() * &s.matrix;
    let targets = &s.matrix - &v * &z;
    let (_w, objective) = ridge_solve(&RidgeProblem {
        features: quad_features(&z),
        targets,
        gamma,
    })?;
    Ok(objective)
}

/// Greedy fit: r iterations of candidate scanning, then the final Wbar.
///
/// `s_train` must already be shifted; `shift` is stored on the manifold so
/// evaluation can apply the same training mean to other data.
pub fn greedy_fit(
    s_train: &DataMatrix,
    shift: &CenteringShift,
    cfg: &GreedyConfig,
) -> Result<(QuadraticManifold, GreedyTrace)> {
    let ell = s_train.rows().min(s_train.cols());
    let svd = thin_svd(s_train, ell)?;
    fit_with_svd(s_train, shift, cfg, &svd)
}

/// Fit against a precomputed factorization of `s_train` (must hold
/// ell = min(n, k) rows). Lets the gamma sweep reuse one SVD.
pub(crate) fn fit_with_svd(
    s_train: &DataMatrix,
    shift: &CenteringShift,
    cfg: &GreedyConfig,
    svd: &SvdFactorization,
) -> Result<(QuadraticManifold, GreedyTrace)> {
    cfg.validate()?;
    let n = s_train.rows();
    let k = s_train.cols();
    let ell = svd.ell();
    if shift.len() != n {
        return Err(QmError::DimMismatch {
            context: "greedy_fit".into(),
            expected: format!("shift of length {n}"),
            found: format!("length {}", shift.len()),
        });
    }
    if cfg.r > ell {
        return Err(QmError::Config {
            msg: format!("r = {} exceeds the number of singular vectors {ell}", cfg.r),
        });
    }
    if !cfg.grow_window && cfg.m < cfg.r {
        return Err(QmError::WindowTooSmall { m: cfg.m, r: cfg.r });
    }
    let reduced = k <= n;

    let mut idx = IndexSets::new(ell);
    let mut trace = GreedyTrace::default();
    for i in 1..=cfg.r {
        let grow = if cfg.grow_window { i } else { 0 };
        let window = (cfg.m + grow).min(ell);
        let candidates: Vec<usize> = (1..=window).filter(|j| !idx.is_selected(*j)).collect();
        if candidates.is_empty() {
            return Err(QmError::WindowTooSmall { m: cfg.m, r: cfg.r });
        }
        let objectives: Vec<f64> = candidates
            .par_iter()
            .map(|&j| {
                if reduced {
                    candidate_objective(svd, &idx, j, cfg.gamma)
                } else {
                    dense_candidate_objective(s_train, svd, &idx, j, cfg.gamma)
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        if objectives.iter().any(|o| !o.is_finite()) {
            return Err(QmError::NonFiniteObjective {
                context: format!("greedy iteration {i}"),
            });
        }
        let min_val = objectives.iter().cloned().fold(f64::INFINITY, f64::min);
        let tie_band = min_val + cfg.tie_tolerance * (1.0 + min_val.abs());
        // Candidates are in ascending index order, so the first one inside
        // the tie band is the smallest tied index.
        let pos = objectives
            .iter()
            .position(|&o| o <= tie_band)
            .expect("min exists");
        let chosen = candidates[pos];
        idx.select(chosen)?;
        trace.records.push(GreedyRecord {
            iteration: i,
            chosen,
            objective: objectives[pos],
            window,
        });
    }

    let sel_cols: Vec<usize> = idx.selected().iter().map(|q| q - 1).collect();
    let v = svd.u.select_columns(sel_cols.iter());
    let wbar = if reduced {
        // Reduced final solve, lifted by the residual's left-singular
        // vectors: Wbar = U_out W' reproduces the n-row optimum because
        // U_out has orthonormal columns and the target lives in its span.
        let (&last, prefix) = idx.selected().split_last().expect("r >= 1");
        let prefix_idx = IndexSets::with_selected(prefix.to_vec(), ell)?;
        let (sigma_vt_out, sigma_vt_in) = residual_factors(svd, &prefix_idx, last)?;
        let (w_prime, _) = ridge_solve(&RidgeProblem {
            features: quad_features(&sigma_vt_in),
            targets: sigma_vt_out,
            gamma: cfg.gamma,
        })?;
        let comp_cols: Vec<usize> = idx.complement().iter().map(|q| q - 1).collect();
        let u_out = svd.u.select_columns(comp_cols.iter());
        u_out * w_prime
    } else {
        let z = v.transpose() * &s_train.matrix;
        let targets = &s_train.matrix - &v * &z;
        let (w, _) = ridge_solve(&RidgeProblem {
            features: quad_features(&z),
            targets,
            gamma: cfg.gamma,
        })?;
        w
    };

    let manifold = QuadraticManifold {
        v,
        wbar,
        selected: idx.selected().to_vec(),
        mean: shift.clone(),
        feature: FeatureMapId::CondensedQuadratic,
        gamma: cfg.gamma,
        ell,
        am_fitted: false,
    };
    Ok((manifold, trace))
}

/// Fit objective |X - V Z - Wbar h(Z)|_F^2 + gamma |Wbar|_F^2 with the
/// linear encoding Z = V^T X; the validation score of the gamma sweep.
fn fit_objective(v: &DMatrix<f64>, wbar: &DMatrix<f64>, x: &DMatrix<f64>, gamma: f64) -> f64 {
    let z = v.transpose() * x;
    let recon = v * &z + wbar * quad_features(&z);
    (x - recon).norm_squared() + gamma * wbar.norm_squared()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaTrial {
    pub gamma: f64,
    /// Validation value of the fit objective, gamma term included.
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct GammaSelection {
    pub gamma: f64,
    pub trials: Vec<GammaTrial>,
}

/// Run the full greedy fit per grid value and keep the gamma whose manifold
/// scores the lowest fit objective on validation data; ties go to the
/// larger gamma.
pub fn select_gamma(
    s_train: &DataMatrix,
    s_val: &DataMatrix,
    shift: &CenteringShift,
    cfg: &GreedyConfig,
    grid: &[f64],
) -> Result<GammaSelection> {
    if grid.is_empty() {
        return Err(QmError::Config {
            msg: "gamma grid is empty".into(),
        });
    }
    if s_val.rows() != s_train.rows() {
        return Err(QmError::DimMismatch {
            context: "select_gamma".into(),
            expected: format!("validation rows {}", s_train.rows()),
            found: format!("{}", s_val.rows()),
        });
    }
    let mut grid_sorted = grid.to_vec();
    grid_sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));
    let ell = s_train.rows().min(s_train.cols());
    let svd = thin_svd(s_train, ell)?;
    let mut trials = Vec::with_capacity(grid_sorted.len());
    let mut best: Option<(f64, f64)> = None;
    for gamma in grid_sorted {
        let cfg_g = GreedyConfig {
            gamma,
            ..cfg.clone()
        };
        let (manifold, _) = fit_with_svd(s_train, shift, &cfg_g, &svd)?;
        let objective = fit_objective(&manifold.v, &manifold.wbar, &s_val.matrix, gamma);
        trials.push(GammaTrial { gamma, objective });
        if objective.is_finite() && best.map_or(true, |(_, b)| objective <= b) {
            best = Some((gamma, objective));
        }
    }
    match best {
        Some((gamma, _)) => Ok(GammaSelection { gamma, trials }),
        None => Err(QmError::NonFiniteObjective {
            context: "gamma selection: every grid value scored non-finite".into(),
        }),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> QmError {
    QmError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Serialize a manifold (QMN1, bit-exact): magic "QMANIF1\0"; u64 fields
/// n, r, p, ell; f64 gamma; one feature byte (low bits the feature id, high
/// bit set when AM-fitted); u64 count and the selected indices (1-based);
/// then mean, V, Wbar as little-endian f64, matrices column-major.
pub fn write_manifold(m: &QuadraticManifold, path: &Path) -> Result<()> {
    let n = m.n();
    let r = m.r();
    let p = m.p();
    let mut buf =
        Vec::with_capacity(8 + 4 * 8 + 8 + 1 + 8 + 8 * (m.selected.len() + n + n * r + n * p));
    buf.extend_from_slice(&MANIFOLD_MAGIC);
    for dim in [n as u64, r as u64, p as u64, m.ell as u64] {
        buf.extend_from_slice(&dim.to_le_bytes());
    }
    buf.extend_from_slice(&m.gamma.to_le_bytes());
    let feature_byte = m.feature.id_byte() | if m.am_fitted { AM_FITTED_BIT } else { 0 };
    buf.push(feature_byte);
    buf.extend_from_slice(&(m.selected.len() as u64).to_le_bytes());
    for &j in &m.selected {
        buf.extend_from_slice(&(j as u64).to_le_bytes());
    }
    for v in m.mean.mean.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in m.v.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in m.wbar.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, &buf).map_err(|e| io_err(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.offset.checked_add(len).ok_or(QmError::SizeOverflow {
            rows: self.offset as u64,
            cols: len as u64,
        })?;
        if end > self.bytes.len() {
            return Err(QmError::Truncated {
                path: self.path.to_path_buf(),
                needed: end as u64,
                got: self.bytes.len() as u64,
            });
        }
        let out = &self.bytes[self.offset..end];
        self.offset = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64_raw(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Deserialize a QMN1 file; the exact inverse of [`write_manifold`].
pub fn read_manifold(path: &Path) -> Result<QuadraticManifold> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let mut rd = Reader {
        bytes: &bytes,
        offset: 0,
        path,
    };
    let magic: [u8; 8] = rd.take(8)?.try_into().expect("8 bytes");
    if magic != MANIFOLD_MAGIC {
        return Err(QmError::BadMagic {
            path: path.to_path_buf(),
            expected: MANIFOLD_MAGIC,
            found: magic,
        });
    }
    let n = rd.u64()?;
    let r = rd.u64()?;
    let p = rd.u64()?;
    let ell = rd.u64()?;
    let gamma = rd.f64_raw()?;
    let feature_byte = rd.take(1)?[0];
    let count = rd.u64()?;
    let sizes_ok = n >= 1
        && r >= 1
        && n <= u32::MAX as u64
        && r <= u32::MAX as u64
        && p <= u32::MAX as u64
        && count <= ell;
    if !sizes_ok {
        return Err(QmError::Config {
            msg: format!("implausible manifold header: n={n} r={r} p={p} ell={ell} count={count}"),
        });
    }
    let am_fitted = feature_byte & AM_FITTED_BIT != 0;
    let feature = FeatureMapId::from_id_byte(feature_byte & !AM_FITTED_BIT)?;
    if p as usize != feature.dim(r as usize) {
        return Err(QmError::Config {
            msg: format!("feature dimension {p} does not match r = {r}"),
        });
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(QmError::Config {
            msg: format!("stored gamma {gamma} is not a nonnegative finite value"),
        });
    }
    if (am_fitted && count != 0) || (!am_fitted && count != r) {
        return Err(QmError::Config {
            msg: format!("selected-index count {count} inconsistent with r = {r}"),
        });
    }
    let mut selected = Vec::with_capacity(count as usize);
    for _ in 0..count {
        selected.push(rd.u64()? as usize);
    }
    // Validates range and distinctness.
    IndexSets::with_selected(selected.clone(), ell as usize)?;

    let (n, r, p) = (n as usize, r as usize, p as usize);
    let mut value_index = 0u64;
    let mut read_block = |rd: &mut Reader, len: usize| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let v = rd.f64_raw()?;
            if !v.is_finite() {
                return Err(QmError::NonFiniteRead {
                    path: path.to_path_buf(),
                    index: value_index,
                });
            }
            value_index += 1;
            out.push(v);
        }
        Ok(out)
    };
    let mean = read_block(&mut rd, n)?;
    let v = read_block(&mut rd, n * r)?;
    let wbar = read_block(&mut rd, n * p)?;
    Ok(QuadraticManifold {
        v: DMatrix::from_vec(n, r, v),
        wbar: DMatrix::from_vec(n, p, wbar),
        selected,
        mean: CenteringShift {
            mean: nalgebra::DVector::from_vec(mean),
        },
        feature,
        gamma,
        ell: ell as usize,
        am_fitted,
    })
}
