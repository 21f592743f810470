//! Two-stage Johnson-Lindenstrauss reduction of weight gradients.
//!
//! Stage one multiplies each layer gradient `G` (m x n) by `Aᵀ`, with `A`
//! an r x n Gaussian matrix of variance `1/r` regenerated from a per-layer
//! seed. This is the gradient a zero-initialized low-rank adapter `B` would
//! receive. Stage two flattens every projected layer row-major, concatenates
//! them in layer order and applies a sparse sign transform with `s` nonzeros
//! per input coordinate, each `±1/√s`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::{dot, FeatureMatrix};
use crate::rng::{self, derive_seed};
use crate::{Error, Result};

pub const DGF_MAGIC: &[u8; 4] = b"DGF1";
pub const DEFAULT_D_OUT: usize = 4096;
pub const DEFAULT_SPARSITY: usize = 8;

/// Gradient of one fully connected layer, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    name: String,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl LayerGradient {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!("layer {name:?} has an empty shape")));
        }
        if values.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                found: values.len(),
                context: format!("values of layer {name:?}"),
            });
        }
        if let Some(p) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: p / cols,
                col: p % cols,
            });
        }
        Ok(LayerGradient {
            name,
            rows,
            cols,
            values,
        })
    }

    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Result<Self> {
        Self::new(name, rows, cols, vec![0.0; rows * cols])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn frobenius_sq(&self) -> f64 {
        dot(&self.values, &self.values)
    }

    fn shape(&self) -> LayerShape {
        LayerShape {
            name: self.name.clone(),
            rows: self.rows,
            cols: self.cols,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchPlan {
    pub r: usize,
    pub layer_seeds: BTreeMap<String, u64>,
    #[serde(default = "default_d_out")]
    pub d_out: usize,
    #[serde(default = "default_sparsity")]
    pub s: usize,
    pub jl_seed: u64,
}

fn default_d_out() -> usize {
    DEFAULT_D_OUT
}

fn default_sparsity() -> usize {
    DEFAULT_SPARSITY
}

impl SketchPlan {
    /// Derive every layer seed and the JL seed from one master seed. Layer
    /// `k` in `layer_names` gets stream `k + 1`; the JL transform gets 0.
    pub fn from_seed<S: AsRef<str>>(
        r: usize,
        d_out: usize,
        s: usize,
        seed: u64,
        layer_names: &[S],
    ) -> Result<Self> {
        let mut layer_seeds = BTreeMap::new();
        for (k, name) in layer_names.iter().enumerate() {
            let prev = layer_seeds.insert(name.as_ref().to_string(), derive_seed(seed, k as u64 + 1));
            if prev.is_some() {
                return Err(Error::InvalidParameter(format!(
                    "duplicate layer name {:?}",
                    name.as_ref()
                )));
            }
        }
        let plan = SketchPlan {
            r,
            layer_seeds,
            d_out,
            s,
            jl_seed: derive_seed(seed, 0),
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 {
            return Err(Error::InvalidParameter("r must be >= 1".into()));
        }
        if self.d_out == 0 {
            return Err(Error::InvalidParameter("d_out must be >= 1".into()));
        }
        if self.s == 0 || self.s > self.d_out {
            return Err(Error::InvalidParameter(format!(
                "sparsity s must satisfy 1 <= s <= d_out, got s={} d_out={}",
                self.s, self.d_out
            )));
        }
        Ok(())
    }

    fn layer_seed(&self, name: &str) -> Result<u64> {
        self.layer_seeds
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidParameter(format!("sketch plan has no seed for layer {name:?}")))
    }
}

/// The r x n projection matrix for one layer, row-major, entries N(0, 1/r).
pub fn projection_matrix(seed: u64, r: usize, n: usize) -> Vec<f64> {
    let mut rng = rng::seeded(seed);
    let mut a = vec![0.0; r * n];
    rng::fill_standard_normal(&mut rng, &mut a);
    let scale = (r as f64).sqrt().recip();
    a.iter_mut().for_each(|v| *v *= scale);
    a
}

/// `G · Aᵀ`, an m x r row-major matrix.
pub fn row_project(g: &LayerGradient, plan: &SketchPlan) -> Result<Vec<f64>> {
    plan.validate()?;
    let a = projection_matrix(plan.layer_seed(&g.name)?, plan.r, g.cols);
    Ok(project_with(g, &a, plan.r))
}

fn project_with(g: &LayerGradient, a: &[f64], r: usize) -> Vec<f64> {
    let n = g.cols;
    let mut out = Vec::with_capacity(g.rows * r);
    for i in 0..g.rows {
        let gi = g.row(i);
        out.extend(a.chunks_exact(n).map(|ak| dot(gi, ak)));
    }
    out
}

/// Sparse sign transform from `input_dim` to `d_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseJl {
    input_dim: usize,
    d_out: usize,
    s: usize,
    /// `s` distinct target rows per input coordinate.
    targets: Vec<u32>,
    /// Matching `±1/√s` weights.
    weights: Vec<f64>,
}

impl SparseJl {
    pub fn new(input_dim: usize, d_out: usize, s: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || d_out == 0 {
            return Err(Error::InvalidParameter("sparse JL dimensions must be >= 1".into()));
        }
        if s == 0 || s > d_out {
            return Err(Error::InvalidParameter(format!(
                "sparsity s must satisfy 1 <= s <= d_out, got s={s} d_out={d_out}"
            )));
        }
        if d_out > u32::MAX as usize {
            return Err(Error::TooLarge(format!("d_out {d_out} exceeds u32 range")));
        }
        let mut rng = rng::seeded(seed);
        let w = (s as f64).sqrt().recip();
        let mut targets = Vec::with_capacity(input_dim * s);
        let mut weights = Vec::with_capacity(input_dim * s);
        for _ in 0..input_dim {
            for t in index::sample(&mut rng, d_out, s) {
                targets.push(t as u32);
                weights.push(if rng.random::<bool>() { w } else { -w });
            }
        }
        Ok(SparseJl {
            input_dim,
            d_out,
            s,
            targets,
            weights,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    /// Target rows and signed weights of input coordinate `j`.
    pub fn column(&self, j: usize) -> (&[u32], &[f64]) {
        let span = j * self.s..(j + 1) * self.s;
        (&self.targets[span.clone()], &self.weights[span])
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.input_dim {
            return Err(Error::LengthMismatch {
                expected: self.input_dim,
                found: v.len(),
                context: "sparse JL input".into(),
            });
        }
        let mut out = vec![0.0; self.d_out];
        for (j, &x) in v.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let (t, w) = self.column(j);
            for (&row, &wt) in t.iter().zip(w) {
                out[row as usize] += wt * x;
            }
        }
        Ok(out)
    }
}

pub fn sparse_jl(v: &[f64], d_out: usize, s: usize, seed: u64) -> Result<Vec<f64>> {
    SparseJl::new(v.len(), d_out, s, seed)?.apply(v)
}

/// A plan bound to a fixed layer layout, with projection matrices and the
/// sparse transform built once and reused across examples.
#[derive(Debug, Clone)]
pub struct Sketcher {
    plan: SketchPlan,
    layout: Vec<LayerShape>,
    projections: Vec<Vec<f64>>,
    jl: SparseJl,
}

impl Sketcher {
    pub fn new(plan: SketchPlan, layout: Vec<LayerShape>) -> Result<Self> {
        plan.validate()?;
        if layout.is_empty() {
            return Err(Error::InvalidParameter("gradient layout has no layers".into()));
        }
        let mut projections = Vec::with_capacity(layout.len());
        let mut total = 0usize;
        for shape in &layout {
            let seed = plan.layer_seed(&shape.name)?;
            projections.push(projection_matrix(seed, plan.r, shape.cols));
            total += shape.rows * plan.r;
        }
        let jl = SparseJl::new(total, plan.d_out, plan.s, plan.jl_seed)?;
        Ok(Sketcher {
            plan,
            layout,
            projections,
            jl,
        })
    }

    /// Layout taken from one example's layers.
    pub fn for_example(plan: SketchPlan, grads: &[LayerGradient]) -> Result<Self> {
        Self::new(plan, grads.iter().map(LayerGradient::shape).collect())
    }

    pub fn plan(&self) -> &SketchPlan {
        &self.plan
    }

    pub fn layout(&self) -> &[LayerShape] {
        &self.layout
    }

    pub fn sparse(&self) -> &SparseJl {
        &self.jl
    }

    /// Concatenated row-projected layers before the sparse transform.
    pub fn project(&self, grads: &[LayerGradient]) -> Result<Vec<f64>> {
        self.check_layout(grads)?;
        let mut flat = Vec::with_capacity(self.jl.input_dim());
        for (g, a) in grads.iter().zip(&self.projections) {
            flat.extend(project_with(g, a, self.plan.r));
        }
        Ok(flat)
    }

    pub fn sketch(&self, grads: &[LayerGradient]) -> Result<Vec<f64>> {
        self.jl.apply(&self.project(grads)?)
    }

    fn check_layout(&self, grads: &[LayerGradient]) -> Result<()> {
        if grads.len() != self.layout.len() {
            return Err(Error::Dimension(format!(
                "expected {} layers, found {}",
                self.layout.len(),
                grads.len()
            )));
        }
        for (k, (g, want)) in grads.iter().zip(&self.layout).enumerate() {
            if g.name != want.name || g.rows != want.rows || g.cols != want.cols {
                return Err(Error::Dimension(format!(
                    "layer {k} is {:?} {}x{}, expected {:?} {}x{}",
                    g.name, g.rows, g.cols, want.name, want.rows, want.cols
                )));
            }
        }
        Ok(())
    }
}

/// Sketch one example. For many examples build a [`Sketcher`] once.
pub fn sketch_gradients(grads: &[LayerGradient], plan: &SketchPlan) -> Result<Vec<f64>> {
    Sketcher::for_example(plan.clone(), grads)?.sketch(grads)
}

/// Sketch every example into one feature matrix, optionally normalizing
/// rows. The layout is taken from the first example; a mismatch names the
/// offending example.
pub fn sketch_dataset(examples: &[Vec<LayerGradient>], plan: &SketchPlan, normalize: bool) -> Result<FeatureMatrix> {
    let first = examples
        .first()
        .ok_or_else(|| Error::InvalidParameter("no gradient examples to sketch".into()))?;
    let sketcher = Sketcher::for_example(plan.clone(), first)?;
    let rows: Vec<Vec<f64>> = examples
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            sketcher
                .sketch(g)
                .map_err(|e| Error::Dimension(format!("example {i}: {e}")))
        })
        .collect::<Result<_>>()?;
    let m = FeatureMatrix::from_rows(&rows)?;
    if normalize {
        m.normalize_rows()
    } else {
        Ok(m)
    }
}

pub fn write_gradients<W: Write>(mut w: W, grads: &[LayerGradient]) -> std::io::Result<()> {
    w.write_all(DGF_MAGIC)?;
    w.write_all(&(grads.len() as u32).to_le_bytes())?;
    for g in grads {
        let name = g.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(g.rows as u32).to_le_bytes())?;
        w.write_all(&(g.cols as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(g.values.len() * 4);
        for &v in &g.values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn save_gradients(grads: &[LayerGradient], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_gradients(&mut buf, grads).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_gradients<R: Read>(mut r: R) -> Result<Vec<LayerGradient>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::Format(format!("reading gradient file: {e}")))?;
    parse_gradients(&bytes)
}

pub fn load_gradients(path: impl AsRef<Path>) -> Result<Vec<LayerGradient>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_gradients(&bytes)
}

fn parse_gradients(bytes: &[u8]) -> Result<Vec<LayerGradient>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != DGF_MAGIC {
        return Err(Error::Format("missing DGF1 magic".into()));
    }
    let count = cur.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| Error::Format("layer name is not UTF-8".into()))?
            .to_string();
        let rows = cur.u32()? as usize;
        let cols = cur.u32()? as usize;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format("layer shape overflows".into()))?;
        let payload = cur.take(n)?;
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        out.push(LayerGradient::new(name, rows, cols, values)?);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after last layer",
            bytes.len() - cur.pos
        )));
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("gradient file is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Empirical quantiles of a distortion sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub p50: f64,
    pub p90: f64,
    pub p95: f64,
    pub max: f64,
}

impl Quantiles {
    /// Nearest-rank quantiles.
    pub fn from_sample(mut xs: Vec<f64>) -> Self {
        assert!(!xs.is_empty());
        xs.sort_by(f64::total_cmp);
        let q = |p: f64| xs[((p * xs.len() as f64).ceil() as usize).clamp(1, xs.len()) - 1];
        Quantiles {
            p50: q(0.5),
            p90: q(0.9),
            p95: q(0.95),
            max: xs[xs.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionSummary {
    pub m: usize,
    pub n: usize,
    pub r: usize,
    pub trials: usize,
    /// `|‖G Aᵀ‖_F² − ‖G‖_F²|` for unit-Frobenius `G`, i.e. relative distortion.
    pub total: Quantiles,
    /// `max_k |‖q_k‖² − ‖p_k‖²|` over rows, same normalization.
    pub per_row_max: Quantiles,
}

/// Monte Carlo check of row-wise projection norm preservation. Each trial
/// draws a Gaussian gradient scaled to unit Frobenius norm and a fresh `A`.
pub fn lemma1_diagnostic(m: usize, n: usize, r: usize, trials: usize, seed: u64) -> Result<DistortionSummary> {
    if trials < 100 {
        return Err(Error::InvalidParameter("lemma1_diagnostic needs at least 100 trials".into()));
    }
    if m == 0 || n == 0 || r == 0 {
        return Err(Error::InvalidParameter("m, n and r must be >= 1".into()));
    }
    let results: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::seeded(derive_seed(seed, t as u64));
            let mut g = vec![0.0; m * n];
            rng::fill_standard_normal(&mut rng, &mut g);
            let scale = dot(&g, &g).sqrt().recip();
            g.iter_mut().for_each(|v| *v *= scale);
            let a = projection_matrix(rng.random(), r, n);
            let mut total_in = 0.0;
            let mut total_out = 0.0;
            let mut row_max: f64 = 0.0;
            for k in 0..m {
                let p = &g[k * n..(k + 1) * n];
                let pin = dot(p, p);
                let pout: f64 = a.chunks_exact(n).map(|ak| dot(p, ak).powi(2)).sum();
                total_in += pin;
                total_out += pout;
                row_max = row_max.max((pout - pin).abs());
            }
            ((total_out - total_in).abs(), row_max)
        })
        .collect();
    let (total, per_row): (Vec<f64>, Vec<f64>) = results.into_iter().unzip();
    Ok(DistortionSummary {
        m,
        n,
        r,
        trials,
        total: Quantiles::from_sample(total),
        per_row_max: Quantiles::from_sample(per_row),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(r: usize, d_out: usize, s: usize) -> SketchPlan {
        SketchPlan::from_seed(r, d_out, s, 42, &["W", "V"]).unwrap()
    }

    fn random_layer(name: &str, m: usize, n: usize, seed: u64) -> LayerGradient {
        let mut rng = rng::seeded(seed);
        let mut v = vec![0.0; m * n];
        rng::fill_standard_normal(&mut rng, &mut v);
        LayerGradient::new(name, m, n, v).unwrap()
    }

    #[test]
    fn zero_maps_to_zero() {
        let p = plan(4, 16, 2);
        let g = LayerGradient::zeros("W", 3, 5).unwrap();
        assert!(row_project(&g, &p).unwrap().iter().all(|&v| v == 0.0));
        assert!(sketch_gradients(&[g], &p).unwrap().iter().all(|&v| v == 0.0));
        assert!(sparse_jl(&[0.0; 10], 4, 2, 1).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn basis_row_picks_column_of_a() {
        let p = plan(3, 8, 1);
        let a = projection_matrix(p.layer_seeds["W"], 3, 4);
        for k in 0..4 {
            let mut v = vec![0.0; 4];
            v[k] = 1.0;
            let g = LayerGradient::new("W", 1, 4, v).unwrap();
            let out = row_project(&g, &p).unwrap();
            let col: Vec<f64> = (0..3).map(|i| a[i * 4 + k]).collect();
            assert_eq!(out, col);
        }
    }

    #[test]
    fn projection_entries_have_variance_one_over_r() {
        let a = projection_matrix(9, 50, 400);
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        let var = a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64;
        assert!(mean.abs() < 0.01);
        assert!((var * 50.0 - 1.0).abs() < 0.03, "{var}");
    }

    #[test]
    fn missing_seed_and_bad_plan() {
        let p = plan(2, 4, 1);
        let g = LayerGradient::zeros("X", 1, 2).unwrap();
        assert!(row_project(&g, &p).is_err());
        assert!(SketchPlan::from_seed(0, 4, 1, 1, &["W"]).is_err());
        assert!(SketchPlan::from_seed(2, 4, 5, 1, &["W"]).is_err());
        assert!(SketchPlan::from_seed(2, 4, 1, 1, &["W", "W"]).is_err());
    }

    #[test]
    fn tiny_case_is_signed_rearrangement() {
        let p = SketchPlan::from_seed(2, 2, 1, 3, &["W"]).unwrap();
        let g = LayerGradient::new("W", 1, 2, vec![0.3, -1.1]).unwrap();
        let projected = row_project(&g, &p).unwrap();
        let sk = Sketcher::for_example(p.clone(), std::slice::from_ref(&g)).unwrap();
        let mut expect = vec![0.0; 2];
        for (j, &x) in projected.iter().enumerate() {
            let (t, w) = sk.sparse().column(j);
            assert_eq!(w[0].abs(), 1.0);
            expect[t[0] as usize] += w[0] * x;
        }
        assert_eq!(sketch_gradients(&[g], &p).unwrap(), expect);
    }

    #[test]
    fn sparse_columns_hit_distinct_rows() {
        let jl = SparseJl::new(200, 32, 8, 5).unwrap();
        for j in 0..200 {
            let (t, w) = jl.column(j);
            let mut rows = t.to_vec();
            rows.sort_unstable();
            rows.dedup();
            assert_eq!(rows.len(), 8);
            assert!(w.iter().all(|&x| (x.abs() - 8f64.sqrt().recip()).abs() < 1e-15));
        }
    }

    #[test]
    fn both_stages_are_linear() {
        let p = plan(8, 64, 4);
        let u = random_layer("W", 5, 20, 1);
        let w = random_layer("W", 5, 20, 2);
        let (a, b) = (0.7, -2.5);
        let combo: Vec<f64> = u.values.iter().zip(&w.values).map(|(x, y)| a * x + b * y).collect();
        let c = LayerGradient::new("W", 5, 20, combo).unwrap();
        let su = sketch_gradients(&[u], &p).unwrap();
        let sw = sketch_gradients(&[w], &p).unwrap();
        let sc = sketch_gradients(&[c], &p).unwrap();
        for k in 0..64 {
            let lin = a * su[k] + b * sw[k];
            assert!((sc[k] - lin).abs() <= 1e-12 * (1.0 + lin.abs()));
        }
    }

    #[test]
    fn concatenation_is_row_major_in_layer_order() {
        let p = plan(3, 16, 2);
        let w = random_layer("W", 2, 5, 1);
        let v = random_layer("V", 4, 3, 2);
        let sk = Sketcher::for_example(p.clone(), &[w.clone(), v.clone()]).unwrap();
        let flat = sk.project(&[w.clone(), v.clone()]).unwrap();
        let mut expect = row_project(&w, &p).unwrap();
        expect.extend(row_project(&v, &p).unwrap());
        assert_eq!(flat, expect);
        assert_eq!(flat.len(), 2 * 3 + 4 * 3);
        // swapping layer order is a layout error
        assert!(sk.sketch(&[v, w]).is_err());
    }

    #[test]
    fn deterministic() {
        let p = plan(8, 128, 8);
        let g = random_layer("W", 6, 30, 4);
        let a = sketch_gradients(std::slice::from_ref(&g), &p).unwrap();
        let b = sketch_gradients(&[g], &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dgf_round_trip_and_errors() {
        let grads = vec![
            LayerGradient::new("W", 2, 3, vec![1.0, -2.0, 0.5, 0.25, 3.0, -0.125]).unwrap(),
            LayerGradient::new("emb.ü", 1, 1, vec![7.0]).unwrap(),
        ];
        let mut buf = Vec::new();
        write_gradients(&mut buf, &grads).unwrap();
        assert_eq!(read_gradients(&buf[..]).unwrap(), grads);
        assert!(read_gradients(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_gradients(&extra[..]).is_err());
        assert!(read_gradients(&b"DSF1\0\0\0\0"[..]).is_err());
    }

    #[test]
    fn quantiles_nearest_rank() {
        let q = Quantiles::from_sample((1..=100).map(f64::from).collect());
        assert_eq!((q.p50, q.p90, q.p95, q.max), (50.0, 90.0, 95.0, 100.0));
    }

    #[test]
    fn single_row_diagnostic_is_classical_jl() {
        let s = lemma1_diagnostic(1, 200, 64, 100, 7).unwrap();
        assert_eq!(s.total, s.per_row_max);
        // chi-square with 64 dof over 64: sd = sqrt(2/64) = 0.177
        assert!(s.total.p50 < 0.25, "{:?}", s.total);
        assert!(lemma1_diagnostic(1, 10, 4, 99, 7).is_err());
    }
}
