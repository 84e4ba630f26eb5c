//! Snapshot-matrix persistence and train-mean centering.
//!
//! The binary matrix format (QMX1) is bit-exact: an 8-byte magic
//! `"QMXMAT1\0"`, the row and column counts as little-endian u64, then
//! rows*cols IEEE-754 binary64 values in column-major order, little-endian.
//! Column-major is the layout every downstream kernel consumes (one snapshot
//! per column), so reads hand the buffer to the solvers without a transpose.
//!
//! Non-finite values are rejected at read time. A NaN that slips into a fit
//! poisons every later artifact silently, which is the costlier failure.
//!
//! CSV output here is for report tables only, never for snapshot data.

use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{QmError, Result};

pub const MATRIX_MAGIC: [u8; 8] = *b"QMXMAT1\0";

/// Dense n x k snapshot matrix, one data point per column.
///
/// Invariants: at least one row and one column, every value finite.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    pub matrix: DMatrix<f64>,
}

impl DataMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(QmError::EmptyMatrix {
                rows: matrix.nrows(),
                cols: matrix.ncols(),
            });
        }
        if let Some(pos) = matrix.iter().position(|v| !v.is_finite()) {
            return Err(QmError::NonFinite {
                context: format!("matrix entry {pos} (column-major)"),
            });
        }
        Ok(DataMatrix { matrix })
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Copy of the columns with the given 1-based positions, in order.
    pub fn select_columns(&self, cols_1based: &[usize]) -> Result<DataMatrix> {
        for &c in cols_1based {
            if c == 0 || c > self.cols() {
                return Err(QmError::IndexOutOfRange {
                    index: c,
                    ell: self.cols(),
                });
            }
        }
        let picked: Vec<usize> = cols_1based.iter().map(|&c| c - 1).collect();
        DataMatrix::new(self.matrix.select_columns(picked.iter()))
    }
}

/// Row-wise mean of a training matrix; the shared shift for val/test data.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteringShift {
    pub mean: DVector<f64>,
}

impl CenteringShift {
    /// No-op shift for fits on uncentered data.
    pub fn zero(n: usize) -> Self {
        CenteringShift {
            mean: DVector::zeros(n),
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.len() == 0
    }
}

fn io_err(path: &Path, source: std::io::Error) -> QmError {
    QmError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Serialize in the QMX1 layout described in the module docs.
pub fn write_matrix(m: &DataMatrix, path: &Path) -> Result<()> {
    let rows = m.rows() as u64;
    let cols = m.cols() as u64;
    let mut buf = Vec::with_capacity(24 + 8 * m.matrix.len());
    buf.extend_from_slice(&MATRIX_MAGIC);
    buf.extend_from_slice(&rows.to_le_bytes());
    buf.extend_from_slice(&cols.to_le_bytes());
    for v in m.matrix.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(&buf).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

/// Deserialize a QMX1 file; the exact inverse of [`write_matrix`].
pub fn read_matrix(path: &Path) -> Result<DataMatrix> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() < 24 {
        return Err(QmError::Truncated {
            path: path.to_path_buf(),
            needed: 24,
            got: bytes.len() as u64,
        });
    }
    let magic: [u8; 8] = bytes[0..8].try_into().expect("slice is 8 bytes");
    if magic != MATRIX_MAGIC {
        return Err(QmError::BadMagic {
            path: path.to_path_buf(),
            expected: MATRIX_MAGIC,
            found: magic,
        });
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().expect("slice is 8 bytes"));
    let cols = u64::from_le_bytes(bytes[16..24].try_into().expect("slice is 8 bytes"));
    let count = rows
        .checked_mul(cols)
        .filter(|&c| c <= (usize::MAX as u64) / 8)
        .ok_or(QmError::SizeOverflow { rows, cols })?;
    let needed = 24 + 8 * count;
    if (bytes.len() as u64) < needed {
        return Err(QmError::Truncated {
            path: path.to_path_buf(),
            needed,
            got: bytes.len() as u64,
        });
    }
    if rows == 0 || cols == 0 {
        return Err(QmError::EmptyMatrix {
            rows: rows as usize,
            cols: cols as usize,
        });
    }
    let mut values = Vec::with_capacity(count as usize);
    for i in 0..count {
        let off = (24 + 8 * i) as usize;
        let v = f64::from_le_bytes(bytes[off..off + 8].try_into().expect("slice is 8 bytes"));
        if !v.is_finite() {
            return Err(QmError::NonFiniteRead {
                path: path.to_path_buf(),
                index: i,
            });
        }
        values.push(v);
    }
    // Vec order is column-major, matching DMatrix's native layout.
    Ok(DataMatrix {
        matrix: DMatrix::from_vec(rows as usize, cols as usize, values),
    })
}

/// Subtract the row-wise mean from every column; the mean is returned so the
/// same shift can be applied to validation and test data.
pub fn center_columns(train: &DataMatrix) -> (DataMatrix, CenteringShift) {
    let k = train.cols() as f64;
    let mean = &train.matrix * DVector::from_element(train.cols(), 1.0 / k);
    let mut centered = train.matrix.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    (
        DataMatrix { matrix: centered },
        CenteringShift { mean },
    )
}

/// Subtract a training shift from any matrix with matching row count.
pub fn apply_shift(m: &DataMatrix, s: &CenteringShift) -> Result<DataMatrix> {
    if s.len() != m.rows() {
        return Err(QmError::DimMismatch {
            context: "apply_shift".into(),
            expected: format!("shift of length {}", m.rows()),
            found: format!("length {}", s.len()),
        });
    }
    let mut out = m.matrix.clone();
    for mut col in out.column_iter_mut() {
        col -= &s.mean;
    }
    Ok(DataMatrix { matrix: out })
}

fn csv_field(raw: &str) -> String {
    if raw.contains(',') || raw.contains('"') || raw.contains('\n') {
        format!("\"{}\"", raw.replace('"', "\"\""))
    } else {
        raw.to_string()
    }
}

/// Write a report table as plain CSV: UTF-8, '.' decimal separator, ','
/// field separator, one row per line. Pass an empty header to omit it.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut text = String::new();
    if !header.is_empty() {
        let cells: Vec<String> = header.iter().map(|h| csv_field(h)).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    for row in rows {
        let cells: Vec<String> = row.iter().map(|c| csv_field(c)).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}
