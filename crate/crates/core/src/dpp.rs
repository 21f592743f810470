//! Greedy MAP inference for cardinality-constrained DPPs.
//!
//! [`greedy_map`] is the fast greedy algorithm with incremental Cholesky
//! updates: every candidate keeps its conditional variance `d_i^2` given the
//! selected set together with its row of the partial Cholesky factor. Each
//! step takes the candidate with the largest variance, whose log is exactly
//! the marginal gain `log det L_{S+j} - log det L_S`, and then extends every
//! remaining candidate's factor row by one entry.
//!
//! [`brute_force_map`] and [`logdet_direct`] evaluate determinants from
//! scratch and exist to check the greedy path.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::kernels::KernelMatrix;
use crate::linalg::cholesky_logdet;
use crate::{Error, Result};

pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-12;

/// Largest number of subsets [`brute_force_map`] will enumerate.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

/// Largest subset [`logdet_direct`] will materialize.
pub const LOGDET_DIRECT_CAP: usize = 4096;

const JITTER_LADDER: [f64; 3] = [1e-12, 1e-11, 1e-10];
const PAR_UPDATE_MIN: usize = 4096;
const UPDATE_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub m: usize,
    pub variance_floor: f64,
    /// Ignore `m` and select every item.
    pub run_to_exhaustion: bool,
    /// Stop as soon as the best remaining variance is at the floor instead of
    /// clamping and continuing.
    pub stop_at_floor: bool,
}

impl Budget {
    pub fn select(m: usize) -> Self {
        Budget {
            m,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
            run_to_exhaustion: false,
            stop_at_floor: false,
        }
    }

    pub fn exhaustive() -> Self {
        Budget {
            m: 0,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
            run_to_exhaustion: true,
            stop_at_floor: false,
        }
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.variance_floor = floor;
        self
    }

    pub fn stopping_at_floor(mut self) -> Self {
        self.stop_at_floor = true;
        self
    }

    fn target(&self, n: usize) -> Result<usize> {
        if !(self.variance_floor > 0.0 && self.variance_floor.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "variance floor must be positive, got {}",
                self.variance_floor
            )));
        }
        if self.run_to_exhaustion {
            return Ok(n);
        }
        if self.m == 0 || self.m > n {
            return Err(Error::InvalidParameter(format!(
                "budget m = {} must lie in [1, {n}]",
                self.m
            )));
        }
        Ok(self.m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    BudgetReached,
    VarianceFloor,
    Exhausted,
}

/// Ordered greedy selection with per-step marginal gains (natural log).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyTrace {
    pub selected: Vec<usize>,
    pub gains: Vec<f64>,
    /// Running sum of `gains`, accumulated left to right.
    pub cum_logdet: Vec<f64>,
    /// Per step: the selected item's variance had been clamped to the floor.
    pub clamped: Vec<bool>,
    pub clamped_steps: usize,
    pub stop_reason: StopReason,
}

impl GreedyTrace {
    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn logdet(&self) -> f64 {
        self.cum_logdet.last().copied().unwrap_or(0.0)
    }

    /// CSV with columns `step,index,gain,cum_logdet,clamped`; steps are 1-based.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "step,index,gain,cum_logdet,clamped")?;
        for s in 0..self.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                s + 1,
                self.selected[s],
                self.gains[s],
                self.cum_logdet[s],
                self.clamped[s] as u8
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_csv(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

/// Greedy MAP inference with incremental Cholesky updates.
///
/// Ties in the argmax go to the lowest index. Variances that fall below the
/// budget's floor are clamped to it; the trace records which selections were
/// made at the floor, since their gains depend on the floor value.
pub fn greedy_map<K: KernelMatrix + ?Sized>(kernel: &K, budget: &Budget) -> Result<GreedyTrace> {
    let n = kernel.size();
    if n == 0 {
        return Err(Error::DegenerateInput("empty dataset".into()));
    }
    let target = budget.target(n)?;
    let floor = budget.variance_floor;

    let mut d2 = kernel.diagonal();
    for (i, &v) in d2.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("non-finite kernel entry L[{i},{i}] = {v}")));
        }
    }
    let mut floored = vec![false; n];
    for (v, f) in d2.iter_mut().zip(floored.iter_mut()) {
        if *v < floor {
            *v = floor;
            *f = true;
        }
    }

    let mut taken = vec![false; n];
    // factor[k] holds column k of the partial Cholesky factor for every item
    let mut factor: Vec<Vec<f64>> = Vec::with_capacity(target);
    let mut trace = GreedyTrace {
        selected: Vec::with_capacity(target),
        gains: Vec::with_capacity(target),
        cum_logdet: Vec::with_capacity(target),
        clamped: Vec::with_capacity(target),
        clamped_steps: 0,
        stop_reason: StopReason::BudgetReached,
    };
    let mut cum = 0.0;
    let mut row = vec![0.0; n];

    for step in 0..target {
        let j = argmax(&d2, &taken);
        let dj2 = d2[j];
        if budget.stop_at_floor && dj2 <= floor {
            trace.stop_reason = StopReason::VarianceFloor;
            return Ok(trace);
        }
        let gain = dj2.ln();
        cum += gain;
        taken[j] = true;
        trace.selected.push(j);
        trace.gains.push(gain);
        trace.cum_logdet.push(cum);
        trace.clamped.push(floored[j]);
        trace.clamped_steps += floored[j] as usize;

        if step + 1 == target {
            break;
        }

        kernel.row_into(j, &mut row)?;
        if let Some(i) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite kernel entry L[{j},{i}] = {}", row[i])));
        }
        let cj: Vec<f64> = factor.iter().map(|col| col[j]).collect();
        let dj = dj2.sqrt();
        let mut e = std::mem::take(&mut row);
        let update = |(c, chunk): (usize, &mut [f64])| {
            update_chunk(chunk, c * UPDATE_CHUNK, &factor, &cj, dj);
        };
        if n >= PAR_UPDATE_MIN && rayon::current_num_threads() > 1 {
            e.par_chunks_mut(UPDATE_CHUNK).enumerate().for_each(update);
        } else {
            e.chunks_mut(UPDATE_CHUNK).enumerate().for_each(update);
        }
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let v = d2[i] - e[i] * e[i];
            if v < floor {
                d2[i] = floor;
                floored[i] = true;
            } else {
                d2[i] = v;
            }
        }
        factor.push(e);
        row = vec![0.0; n];
    }

    trace.stop_reason = if trace.len() == n {
        StopReason::Exhausted
    } else {
        StopReason::BudgetReached
    };
    Ok(trace)
}

/// `e[i] = (e[i] - sum_k cj[k] * factor[k][start + i]) / dj` over one chunk,
/// subtracting the columns in order so results do not depend on chunking.
fn update_chunk(chunk: &mut [f64], start: usize, factor: &[Vec<f64>], cj: &[f64], dj: f64) {
    let span = start..start + chunk.len();
    let mut cols = factor.chunks_exact(4);
    let mut coefs = cj.chunks_exact(4);
    for (f, c) in (&mut cols).zip(&mut coefs) {
        let (a0, a1, a2, a3) = (&f[0][span.clone()], &f[1][span.clone()], &f[2][span.clone()], &f[3][span.clone()]);
        for ((((ei, x0), x1), x2), x3) in chunk.iter_mut().zip(a0).zip(a1).zip(a2).zip(a3) {
            *ei = (((*ei - c[0] * x0) - c[1] * x1) - c[2] * x2) - c[3] * x3;
        }
    }
    for (f, &c) in cols.remainder().iter().zip(coefs.remainder()) {
        for (ei, &a) in chunk.iter_mut().zip(&f[span.clone()]) {
            *ei -= c * a;
        }
    }
    for ei in chunk.iter_mut() {
        *ei /= dj;
    }
}

fn argmax(d2: &[f64], taken: &[bool]) -> usize {
    let mut best = usize::MAX;
    let mut best_v = f64::NEG_INFINITY;
    for (i, (&v, &t)) in d2.iter().zip(taken).enumerate() {
        if !t && v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// `log det L_S` from a direct Cholesky factorization of the sub-matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDet {
    pub value: f64,
    /// Diagonal jitter that had to be added for the factorization to succeed.
    pub jitter: f64,
}

pub fn logdet_direct<K: KernelMatrix + ?Sized>(kernel: &K, subset: &[usize]) -> Result<LogDet> {
    let k = subset.len();
    if k > LOGDET_DIRECT_CAP {
        return Err(Error::TooLarge(format!(
            "subset of {k} items exceeds the direct log-det cap of {LOGDET_DIRECT_CAP}"
        )));
    }
    if k == 0 {
        return Ok(LogDet { value: 0.0, jitter: 0.0 });
    }
    let mut a = kernel.submatrix(subset)?;
    if let Some(value) = cholesky_logdet(&a, k) {
        return Ok(LogDet { value, jitter: 0.0 });
    }
    let mut added = 0.0;
    for &jitter in &JITTER_LADDER {
        for i in 0..k {
            a[i * k + i] += jitter - added;
        }
        added = jitter;
        if let Some(value) = cholesky_logdet(&a, k) {
            return Ok(LogDet { value, jitter });
        }
    }
    Err(Error::Numeric(format!(
        "sub-matrix of size {k} is indefinite beyond jitter {}",
        JITTER_LADDER[JITTER_LADDER.len() - 1]
    )))
}

/// Exact cardinality-constrained MAP by enumerating every size-`m` subset.
///
/// Returns the maximizing index set (lexicographically smallest on ties) and
/// its log-determinant. Subsets whose sub-matrix is singular score `-inf`.
pub fn brute_force_map<K: KernelMatrix + ?Sized>(kernel: &K, m: usize) -> Result<(Vec<usize>, f64)> {
    let n = kernel.size();
    if m == 0 || m > n {
        return Err(Error::InvalidParameter(format!("m = {m} must lie in [1, {n}]")));
    }
    let count = binomial(n, m);
    if count > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge(format!(
            "C({n}, {m}) = {count} subsets exceeds the limit of {BRUTE_FORCE_LIMIT}"
        )));
    }
    let mut combo: Vec<usize> = (0..m).collect();
    let mut best = combo.clone();
    let mut best_v = f64::NEG_INFINITY;
    let mut first = true;
    loop {
        let a = kernel.submatrix(&combo)?;
        let v = cholesky_logdet(&a, m).unwrap_or(f64::NEG_INFINITY);
        if first || v > best_v {
            best_v = v;
            best.copy_from_slice(&combo);
            first = false;
        }
        // next combination in lexicographic order
        let mut i = m;
        loop {
            if i == 0 {
                return Ok((best, best_v));
            }
            i -= 1;
            if combo[i] < n - m + i {
                break;
            }
        }
        combo[i] += 1;
        for k in (i + 1)..m {
            combo[k] = combo[k - 1] + 1;
        }
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) as u128 / (i + 1) as u128;
        if r > u64::MAX as u128 {
            return r;
        }
    }
    r
}
