//! Condensed quadratic feature map h and its Jacobian h'.
//!
//! For z in R^r, h(z) collects every product z_a * z_b with a <= b, ordered
//! (1,1),(1,2),...,(1,r),(2,2),...,(r,r). The feature dimension is
//! p = r(r+1)/2. The ordering is fixed so serialized weight matrices stay
//! portable; the features of z nest inside those of [z; zeta], which the
//! greedy fit's monotonicity relies on.

use nalgebra::DMatrix;

use crate::error::{QmError, Result};

/// Identifies the feature map a manifold was fitted with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMapId {
    CondensedQuadratic,
}

impl FeatureMapId {
    /// Feature dimension for reduced dimension r.
    pub fn dim(self, r: usize) -> usize {
        match self {
            FeatureMapId::CondensedQuadratic => r * (r + 1) / 2,
        }
    }

    /// Byte tag used in the manifold file format.
    pub fn id_byte(self) -> u8 {
        match self {
            FeatureMapId::CondensedQuadratic => 1,
        }
    }

    pub fn from_id_byte(id: u8) -> Result<Self> {
        match id {
            1 => Ok(FeatureMapId::CondensedQuadratic),
            other => Err(QmError::BadFeatureId { id: other }),
        }
    }
}

/// Ordered index pairs (a, b), 1-based, a <= b, matching the feature rows.
pub fn feature_pairs(r: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(r * (r + 1) / 2);
    for a in 1..=r {
        for b in a..=r {
            pairs.push((a, b));
        }
    }
    pairs
}

/// Evaluate h column-wise: Z is r x k, the result is p x k.
pub fn quad_features(z: &DMatrix<f64>) -> DMatrix<f64> {
    let r = z.nrows();
    let k = z.ncols();
    let p = r * (r + 1) / 2;
    let mut h = DMatrix::zeros(p, k);
    for j in 0..k {
        let col = z.column(j);
        let mut row = 0;
        for a in 0..r {
            let za = col[a];
            for b in a..r {
                h[(row, j)] = za * col[b];
                row += 1;
            }
        }
    }
    h
}

/// Jacobian of h at a single point z: p x r. The row for the pair (a, b)
/// has derivative z_b w.r.t. z_a plus z_a w.r.t. z_b, so the diagonal pair
/// (a, a) differentiates to 2 z_a.
pub fn quad_jacobian(z: &[f64]) -> DMatrix<f64> {
    let r = z.len();
    let p = r * (r + 1) / 2;
    let mut jac = DMatrix::zeros(p, r);
    let mut row = 0;
    for a in 0..r {
        for b in a..r {
            jac[(row, a)] += z[b];
            jac[(row, b)] += z[a];
            row += 1;
        }
    }
    jac
}
