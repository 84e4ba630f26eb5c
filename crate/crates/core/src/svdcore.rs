//! Thin SVD of the training matrix and the index-set algebra that lets the
//! greedy loop reuse one factorization.
//!
//! The key identity: with S = U diag(sigma) Vt and a basis made of the
//! U-columns indexed by an "in" set, the projection residual S - P S equals
//! the U-columns of the complement times their (sigma, Vt) rows. Norms of the
//! residual therefore only need sigma and Vt, never U, which keeps the
//! per-candidate cost of the greedy scan independent of n.

use nalgebra::{DMatrix, DVector};

use crate::error::{QmError, Result};
use crate::matrixio::DataMatrix;

/// Thin singular value decomposition S = U diag(sigma) Vt.
///
/// U is n x ell with orthonormal columns, sigma nonincreasing and
/// nonnegative of length ell, Vt is ell x k with orthonormal rows. Zero
/// singular values are kept so index arithmetic stays 1..=ell.
#[derive(Debug, Clone)]
pub struct SvdFactorization {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub vt: DMatrix<f64>,
}

impl SvdFactorization {
    pub fn ell(&self) -> usize {
        self.sigma.len()
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn k(&self) -> usize {
        self.vt.ncols()
    }
}

/// Ordered selection I = (j_1, ..., j_i) of 1-based singular-vector indices
/// together with the ground set size ell; the complement is derived.
#[derive(Debug, Clone)]
pub struct IndexSets {
    selected: Vec<usize>,
    ell: usize,
}

impl IndexSets {
    pub fn new(ell: usize) -> Self {
        IndexSets {
            selected: Vec::new(),
            ell,
        }
    }

    pub fn with_selected(selected: Vec<usize>, ell: usize) -> Result<Self> {
        let mut sets = IndexSets::new(ell);
        for j in selected {
            sets.select(j)?;
        }
        Ok(sets)
    }

    /// Append one index to the selection, preserving selection order.
    pub fn select(&mut self, j: usize) -> Result<()> {
        if j == 0 || j > self.ell {
            return Err(QmError::IndexOutOfRange {
                index: j,
                ell: self.ell,
            });
        }
        if self.selected.contains(&j) {
            return Err(QmError::AlreadySelected { index: j });
        }
        self.selected.push(j);
        Ok(())
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn is_selected(&self, j: usize) -> bool {
        self.selected.contains(&j)
    }

    /// Unselected indices in ascending order.
    pub fn complement(&self) -> Vec<usize> {
        (1..=self.ell).filter(|j| !self.is_selected(*j)).collect()
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

/// Thin SVD truncated to the leading ell singular triplets.
pub fn thin_svd(s: &DataMatrix, ell: usize) -> Result<SvdFactorization> {
    let n = s.rows();
    let k = s.cols();
    if ell == 0 || ell > n.min(k) {
        return Err(QmError::Config {
            msg: format!("svd truncation {ell} outside 1..={}", n.min(k)),
        });
    }
    if let Some(pos) = s.matrix.iter().position(|v| !v.is_finite()) {
        return Err(QmError::NonFinite {
            context: format!("svd input entry {pos}"),
        });
    }
    let svd = s.matrix.clone().svd(true, true);
    let u_full = svd.u.ok_or_else(|| QmError::NonFinite {
        context: "svd backend returned no left factor".into(),
    })?;
    let vt_full = svd.v_t.ok_or_else(|| QmError::NonFinite {
        context: "svd backend returned no right factor".into(),
    })?;
    Ok(SvdFactorization {
        u: u_full.columns(0, ell).into_owned(),
        sigma: svd.singular_values.rows(0, ell).into_owned(),
        vt: vt_full.rows(0, ell).into_owned(),
    })
}

/// Factor rows of the projection residual and of the encoded coordinates
/// for the basis "selected plus j_new".
///
/// Returns (SigmaVt_out, SigmaVt_in): the rows sigma_q * Vt_q for q in the
/// complement of (selected + j_new) in ascending order, and for q in the
/// selection order with j_new last. Only sigma and Vt are touched, so the
/// greedy candidate scan never reads U.
pub fn residual_factors(
    svd: &SvdFactorization,
    idx: &IndexSets,
    j_new: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let ell = svd.ell();
    if idx.ell() != ell {
        return Err(QmError::DimMismatch {
            context: "residual_factors".into(),
            expected: format!("index sets over 1..={ell}"),
            found: format!("1..={}", idx.ell()),
        });
    }
    if j_new == 0 || j_new > ell {
        return Err(QmError::IndexOutOfRange { index: j_new, ell });
    }
    if idx.is_selected(j_new) {
        return Err(QmError::AlreadySelected { index: j_new });
    }
    let k = svd.k();
    let i = idx.len() + 1;

    let mut sigma_vt_in = DMatrix::zeros(i, k);
    for (row, &q) in idx.selected().iter().chain(std::iter::once(&j_new)).enumerate() {
        scaled_row(svd, q, &mut sigma_vt_in, row);
    }

    let out: Vec<usize> = (1..=ell)
        .filter(|q| *q != j_new && !idx.is_selected(*q))
        .collect();
    let mut sigma_vt_out = DMatrix::zeros(out.len(), k);
    for (row, &q) in out.iter().enumerate() {
        scaled_row(svd, q, &mut sigma_vt_out, row);
    }
    Ok((sigma_vt_out, sigma_vt_in))
}

fn scaled_row(svd: &SvdFactorization, q_1based: usize, dst: &mut DMatrix<f64>, dst_row: usize) {
    let s = svd.sigma[q_1based - 1];
    for (c, v) in svd.vt.row(q_1based - 1).iter().enumerate() {
        dst[(dst_row, c)] = s * v;
    }
}
