//! Feature matrices, per-example score tables, synthetic data, and the DSF1
//! binary format.

mod dsf;
mod scores;
mod synth;

pub use dsf::{load_features, read_features, save_features, write_features, DSF_MAGIC};
pub use scores::{load_scores, ScoreTable};
pub use synth::{synthesize, synthesize_labeled, SynthKind, SynthSpec};

use crate::{Error, Result};

/// Rows whose Euclidean norm is within this distance of 1 count as unit rows.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Dense N x D matrix of per-example feature vectors, stored row-major in
/// 64-bit precision.
///
/// `normalized` is derived, never asserted: it is true exactly when a full
/// pass over the rows found every row norm within [`UNIT_NORM_TOL`] of 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
    normalized: bool,
}

impl FeatureMatrix {
    pub fn new(n_rows: usize, n_cols: usize, values: Vec<f64>) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::DegenerateInput(format!(
                "feature matrix must be at least 1x1, got {n_rows}x{n_cols}"
            )));
        }
        if values.len() != n_rows * n_cols {
            return Err(Error::LengthMismatch {
                expected: n_rows * n_cols,
                found: values.len(),
                context: "feature matrix values".into(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / n_cols,
                col: pos % n_cols,
            });
        }
        let mut m = FeatureMatrix {
            n_rows,
            n_cols,
            values,
            normalized: false,
        };
        m.normalized = m.rows().all(|r| (norm(r) - 1.0).abs() <= UNIT_NORM_TOL);
        Ok(m)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n_cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * n_cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != n_cols {
                return Err(Error::LengthMismatch {
                    expected: n_cols,
                    found: r.len(),
                    context: format!("row {i}"),
                });
            }
            values.extend_from_slice(r);
        }
        Self::new(rows.len(), n_cols, values)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.n_cols)
    }

    /// Scale every row to unit Euclidean norm.
    pub fn normalize_rows(&self) -> Result<FeatureMatrix> {
        let mut values = self.values.clone();
        for (i, row) in values.chunks_exact_mut(self.n_cols).enumerate() {
            let n = norm(row);
            if n == 0.0 {
                return Err(Error::DegenerateInput(format!(
                    "row {i} is the zero vector and cannot be normalized"
                )));
            }
            for v in row.iter_mut() {
                *v /= n;
            }
        }
        Self::new(self.n_rows, self.n_cols, values)
    }

    /// New matrix made of the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<FeatureMatrix> {
        let mut values = Vec::with_capacity(indices.len() * self.n_cols);
        for &i in indices {
            if i >= self.n_rows {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.n_rows,
                });
            }
            values.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.n_cols, values)
    }
}

/// Euclidean norm.
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Inner product with a fixed summation order.
///
/// Four interleaved accumulators let the compiler vectorize while keeping the
/// result a deterministic function of the inputs. `dot(a, b)` and `dot(b, a)`
/// are bitwise equal.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
