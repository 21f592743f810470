//! Similarity kernels and quality-weighted DPP kernels.
//!
//! A [`DppKernel`] never stores the N x N matrix. Entries and rows are
//! evaluated on demand from the feature rows:
//!
//! ```text
//! L_ij = c * K_ij * exp(beta * q_i) * exp(beta * q_j),   beta = lambda / (2 (1 - lambda))
//! ```
//!
//! where `c` is the kernel scale (1 by default) and `K` is either the RBF
//! kernel `exp(-gamma |x_i - x_j|^2)` or the plain inner product.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::{dot, FeatureMatrix};
use crate::{Error, Result};

/// Largest N for which [`DppKernel::materialize`] builds the dense matrix.
pub const DEFAULT_MATERIALIZE_CAP: usize = 20_000;

/// Lower end of the min-max quality range.
pub const MIN_MAX_FLOOR: f64 = 1e-3;

const PAR_ROW_MIN: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KernelKind {
    Rbf { gamma: f64 },
    /// Only PSD-safe as a Gram matrix; rank-deficient once N exceeds D.
    /// Exposed for testing.
    InnerProduct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    #[serde(flatten)]
    pub kind: KernelKind,
    /// Use `exp(2 gamma x_i.x_j - 2 gamma)`, valid only for unit rows.
    #[serde(default)]
    pub assume_unit_rows: bool,
    /// Constant multiplier applied to every kernel entry.
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl KernelSpec {
    pub fn rbf(gamma: f64) -> Self {
        KernelSpec {
            kind: KernelKind::Rbf { gamma },
            assume_unit_rows: false,
            scale: 1.0,
        }
    }

    pub fn inner_product() -> Self {
        KernelSpec {
            kind: KernelKind::InnerProduct,
            assume_unit_rows: false,
            scale: 1.0,
        }
    }

    pub fn unit_rows(mut self, yes: bool) -> Self {
        self.assume_unit_rows = yes;
        self
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn gamma(&self) -> Option<f64> {
        match self.kind {
            KernelKind::Rbf { gamma } => Some(gamma),
            KernelKind::InnerProduct => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let KernelKind::Rbf { gamma } = self.kind {
            if !(gamma > 0.0 && gamma.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "rbf gamma must be positive and finite, got {gamma}"
                )));
            }
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "kernel scale must be positive and finite, got {}",
                self.scale
            )));
        }
        Ok(())
    }
}

/// Representation families with their default RBF bandwidth and reference
/// dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Representation {
    NormalizedGradient,
    UnnormalizedGradient,
    EncoderEmbedding,
    DecoderEmbedding,
}

impl Representation {
    pub fn default_gamma(self) -> f64 {
        match self {
            Representation::NormalizedGradient | Representation::EncoderEmbedding => 1.0,
            Representation::DecoderEmbedding => 10.0,
            Representation::UnnormalizedGradient => 0.01,
        }
    }

    pub fn default_ref_dim(self) -> usize {
        match self {
            Representation::EncoderEmbedding => 768,
            _ => 4096,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QualityTransform {
    /// Fractional rank in (0, 1]; ties share their average rank.
    #[default]
    RankNormalize,
    /// Affine map onto [1e-3, 1]; constant input maps to 1.
    MinMax,
    /// Pass-through; every entry must be positive.
    Identity,
}

/// Map raw scores onto the quality vector `q` that enters `exp(beta q)`.
pub fn quality_transform(raw: &[f64], mode: QualityTransform) -> Result<Vec<f64>> {
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("quality score {i} is not finite")));
    }
    let n = raw.len();
    match mode {
        QualityTransform::RankNormalize => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]).then(a.cmp(&b)));
            let mut out = vec![0.0; n];
            let mut start = 0;
            while start < n {
                let mut end = start + 1;
                while end < n && raw[order[end]] == raw[order[start]] {
                    end += 1;
                }
                // ranks start+1 ..= end share their mean
                let avg = (start + 1 + end) as f64 / 2.0;
                for &i in &order[start..end] {
                    out[i] = avg / n as f64;
                }
                start = end;
            }
            Ok(out)
        }
        QualityTransform::MinMax => {
            let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi == lo {
                return Ok(vec![1.0; n]);
            }
            Ok(raw
                .iter()
                .map(|v| MIN_MAX_FLOOR + (1.0 - MIN_MAX_FLOOR) * (v - lo) / (hi - lo))
                .collect())
        }
        QualityTransform::Identity => {
            if let Some(i) = raw.iter().position(|&v| v <= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "identity quality requires positive scores; entry {i} is {}",
                    raw[i]
                )));
            }
            Ok(raw.to_vec())
        }
    }
}

/// `beta = lambda / (2 (1 - lambda))`, defined for lambda in [0, 1).
pub fn beta_for_lambda(lambda: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!(
            "lambda must lie in [0, 1), got {lambda}; use the rank strategy for pure quality selection"
        )));
    }
    Ok(lambda / (2.0 * (1.0 - lambda)))
}

/// Row access to a symmetric PSD kernel matrix.
pub trait KernelMatrix: Sync {
    fn size(&self) -> usize;

    fn entry(&self, i: usize, j: usize) -> Result<f64>;

    /// Write row `i` into `out` (length `size()`).
    fn row_into(&self, i: usize, out: &mut [f64]) -> Result<()>;

    fn diagonal(&self) -> Vec<f64> {
        (0..self.size())
            .map(|i| self.entry(i, i).unwrap_or(f64::NAN))
            .collect()
    }

    fn row(&self, i: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.size()];
        self.row_into(i, &mut out)?;
        Ok(out)
    }

    /// Dense principal sub-matrix on `subset`, row-major.
    fn submatrix(&self, subset: &[usize]) -> Result<Vec<f64>> {
        let k = subset.len();
        let mut out = vec![0.0; k * k];
        for (a, &i) in subset.iter().enumerate() {
            for (b, &j) in subset.iter().enumerate().skip(a) {
                let v = self.entry(i, j)?;
                out[a * k + b] = v;
                out[b * k + a] = v;
            }
        }
        Ok(out)
    }
}

/// Quality-weighted DPP kernel over a borrowed feature matrix.
#[derive(Debug, Clone)]
pub struct DppKernel<'a> {
    features: &'a FeatureMatrix,
    spec: KernelSpec,
    quality: Option<Vec<f64>>,
    lambda: f64,
    beta: f64,
    weights: Vec<f64>,
    sq_norms: Vec<f64>,
    materialize_cap: usize,
}

impl<'a> DppKernel<'a> {
    /// Quality-free kernel (`L = K`).
    pub fn new(features: &'a FeatureMatrix, spec: KernelSpec) -> Result<Self> {
        spec.validate()?;
        if spec.assume_unit_rows && !features.is_normalized() {
            return Err(Error::InvalidParameter(
                "kernel assumes unit rows but the feature matrix is not normalized".into(),
            ));
        }
        let sq_norms: Vec<f64> = features.rows().map(|r| dot(r, r)).collect();
        if matches!(spec.kind, KernelKind::InnerProduct) {
            if let Some(i) = sq_norms.iter().position(|&s| s <= 0.0) {
                return Err(Error::DegenerateInput(format!(
                    "row {i} is zero; the inner-product kernel needs L_ii > 0"
                )));
            }
        }
        Ok(DppKernel {
            features,
            spec,
            quality: None,
            lambda: 0.0,
            beta: 0.0,
            weights: vec![1.0; features.n_rows()],
            sq_norms,
            materialize_cap: DEFAULT_MATERIALIZE_CAP,
        })
    }

    /// Fold a positive quality vector into the kernel with trade-off `lambda`.
    pub fn with_quality(mut self, quality: Vec<f64>, lambda: f64) -> Result<Self> {
        let beta = beta_for_lambda(lambda)?;
        if quality.len() != self.features.n_rows() {
            return Err(Error::LengthMismatch {
                expected: self.features.n_rows(),
                found: quality.len(),
                context: "quality vector".into(),
            });
        }
        if let Some(i) = quality.iter().position(|&q| !(q > 0.0 && q.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "quality entry {i} must be positive and finite, got {}",
                quality[i]
            )));
        }
        self.weights = quality.iter().map(|&q| (beta * q).exp()).collect();
        if let Some(i) = self.weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::Numeric(format!(
                "exp(beta * q) overflows at item {i} (beta = {beta})"
            )));
        }
        self.quality = Some(quality);
        self.lambda = lambda;
        self.beta = beta;
        Ok(self)
    }

    pub fn with_materialize_cap(mut self, cap: usize) -> Self {
        self.materialize_cap = cap;
        self
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn features(&self) -> &FeatureMatrix {
        self.features
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn quality(&self) -> Option<&[f64]> {
        self.quality.as_deref()
    }

    fn check(&self, i: usize) -> Result<()> {
        let n = self.features.n_rows();
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, len: n });
        }
        Ok(())
    }

    /// Kernel value from the inner product of rows `i` and `j`. Every input
    /// is symmetric in (i, j), so `value(i, j) == value(j, i)` bitwise.
    #[inline]
    fn value(&self, i: usize, j: usize, ip: f64) -> f64 {
        let k = match self.spec.kind {
            KernelKind::Rbf { gamma } => {
                if self.spec.assume_unit_rows {
                    (2.0 * gamma * ip - 2.0 * gamma).exp()
                } else {
                    let d2 = (self.sq_norms[i] + self.sq_norms[j] - 2.0 * ip).max(0.0);
                    (-gamma * d2).exp()
                }
            }
            KernelKind::InnerProduct => ip,
        };
        self.spec.scale * k * (self.weights[i] * self.weights[j])
    }

    /// Dense N x N matrix, refused above the materialization cap.
    pub fn materialize(&self) -> Result<DenseKernel> {
        let n = self.features.n_rows();
        if n > self.materialize_cap {
            return Err(Error::TooLarge(format!(
                "materializing a {n} x {n} kernel exceeds the cap of {}",
                self.materialize_cap
            )));
        }
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = self.value(i, j, dot(self.features.row(i), self.features.row(j)));
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        Ok(DenseKernel { n, values })
    }
}

impl KernelMatrix for DppKernel<'_> {
    fn size(&self) -> usize {
        self.features.n_rows()
    }

    fn entry(&self, i: usize, j: usize) -> Result<f64> {
        self.check(i)?;
        self.check(j)?;
        Ok(self.value(i, j, dot(self.features.row(i), self.features.row(j))))
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.size())
            .map(|i| self.value(i, i, self.sq_norms[i]))
            .collect()
    }

    fn row_into(&self, i: usize, out: &mut [f64]) -> Result<()> {
        self.check(i)?;
        let n = self.size();
        if out.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: out.len(),
                context: "kernel row buffer".into(),
            });
        }
        let xi = self.features.row(i);
        let d = self.features.n_cols();
        let fill = |(start, chunk): (usize, &mut [f64])| {
            for (off, o) in chunk.iter_mut().enumerate() {
                let j = start + off;
                *o = self.value(i, j, dot(xi, &self.features.values()[j * d..(j + 1) * d]));
            }
        };
        if n >= PAR_ROW_MIN && rayon::current_num_threads() > 1 {
            out.par_chunks_mut(PAR_ROW_MIN / 4)
                .enumerate()
                .map(|(c, chunk)| (c * (PAR_ROW_MIN / 4), chunk))
                .for_each(fill);
        } else {
            fill((0, out));
        }
        Ok(())
    }
}

/// Explicit symmetric kernel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseKernel {
    n: usize,
    values: Vec<f64>,
}

impl DenseKernel {
    /// Accepts a row-major square matrix; it must be exactly symmetric and finite.
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::DegenerateInput("empty kernel matrix".into()));
        }
        if values.len() != n * n {
            return Err(Error::LengthMismatch {
                expected: n * n,
                found: values.len(),
                context: "dense kernel".into(),
            });
        }
        for i in 0..n {
            for j in 0..n {
                let v = values[i * n + j];
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
                if v != values[j * n + i] {
                    return Err(Error::InvalidParameter(format!(
                        "kernel matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(DenseKernel { n, values })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let mut values = Vec::with_capacity(n * n);
        for r in rows {
            values.extend_from_slice(r.as_ref());
        }
        Self::new(n, values)
    }

    pub fn diag(d: &[f64]) -> Result<Self> {
        let n = d.len();
        let mut values = vec![0.0; n * n];
        for (i, &v) in d.iter().enumerate() {
            values[i * n + i] = v;
        }
        Self::new(n, values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scaled(&self, c: f64) -> DenseKernel {
        DenseKernel {
            n: self.n,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }
}

impl KernelMatrix for DenseKernel {
    fn size(&self) -> usize {
        self.n
    }

    fn entry(&self, i: usize, j: usize) -> Result<f64> {
        if i >= self.n || j >= self.n {
            return Err(Error::IndexOutOfRange {
                index: i.max(j),
                len: self.n,
            });
        }
        Ok(self.values[i * self.n + j])
    }

    fn row_into(&self, i: usize, out: &mut [f64]) -> Result<()> {
        if i >= self.n {
            return Err(Error::IndexOutOfRange { index: i, len: self.n });
        }
        out.copy_from_slice(&self.values[i * self.n..(i + 1) * self.n]);
        Ok(())
    }
}
