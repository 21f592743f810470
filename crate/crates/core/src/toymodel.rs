//! A single-layer softmax conditional model that produces exact per-example
//! weight gradients and the usual data-quality scores at desk scale.
//!
//! For response position `t` the featurizer averages a seeded embedding of
//! a BOS token with the embeddings of every preceding token (instruction,
//! then response). The model predicts `softmax(W f_t)`.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::features::ScoreTable;
use crate::rng::{self, derive_seed};
use crate::sketch::LayerGradient;
use crate::{Error, Result};

/// Vocabulary size used by [`make_toy_corpus`].
pub const TOY_VOCAB: usize = 64;

/// Default embedding dimension for corpus-scale toy models.
pub const TOY_DIM: usize = 64;

/// Name of the single gradient layer.
pub const LAYER_NAME: &str = "W";

/// Score column names emitted by [`score_table`], in order.
pub const SCORE_COLUMNS: [&str; 7] = [
    "grad_norm",
    "perplexity",
    "ifd",
    "el2n",
    "n_input_tokens",
    "n_output_tokens",
    "n_total_tokens",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyExample {
    pub instruction_tokens: Vec<usize>,
    pub response_tokens: Vec<usize>,
}

impl ToyExample {
    pub fn new(instruction_tokens: Vec<usize>, response_tokens: Vec<usize>) -> Self {
        ToyExample {
            instruction_tokens,
            response_tokens,
        }
    }

    fn validate(&self, vocab: usize) -> Result<()> {
        if self.response_tokens.is_empty() {
            return Err(Error::InvalidParameter("response must be non-empty".into()));
        }
        let bad = self
            .instruction_tokens
            .iter()
            .chain(&self.response_tokens)
            .find(|&&t| t >= vocab);
        match bad {
            Some(&t) => Err(Error::IndexOutOfRange { index: t, len: vocab }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    vocab: usize,
    dim: usize,
    /// V x F, row-major.
    weights: Vec<f64>,
    /// (V + 1) x F; the last row is BOS.
    embeddings: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityRecord {
    pub grad_norm: f64,
    pub perplexity: f64,
    pub ifd: f64,
    pub el2n: f64,
    pub n_input_tokens: usize,
    pub n_output_tokens: usize,
    pub n_total_tokens: usize,
}

impl ToyModel {
    /// Gaussian weights with standard deviation `weight_scale` and standard
    /// normal embeddings.
    pub fn random(vocab: usize, dim: usize, seed: u64, weight_scale: f64) -> Result<Self> {
        if vocab < 2 || dim == 0 {
            return Err(Error::InvalidParameter("toy model needs vocab >= 2 and dim >= 1".into()));
        }
        if !(weight_scale.is_finite() && weight_scale >= 0.0) {
            return Err(Error::InvalidParameter("weight_scale must be finite and >= 0".into()));
        }
        let mut rng = rng::seeded(seed);
        let mut embeddings = vec![0.0; (vocab + 1) * dim];
        rng::fill_standard_normal(&mut rng, &mut embeddings);
        let mut weights = vec![0.0; vocab * dim];
        rng::fill_standard_normal(&mut rng, &mut weights);
        weights.iter_mut().for_each(|w| *w *= weight_scale);
        Ok(ToyModel {
            vocab,
            dim,
            weights,
            embeddings,
        })
    }

    /// Zero weights, so every prediction is uniform.
    pub fn uniform(vocab: usize, dim: usize, seed: u64) -> Result<Self> {
        Self::random(vocab, dim, seed, 0.0)
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.vocab * self.dim {
            return Err(Error::LengthMismatch {
                expected: self.vocab * self.dim,
                found: weights.len(),
                context: "toy model weights".into(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidParameter("toy model weights must be finite".into()));
        }
        self.weights = weights;
        Ok(())
    }

    /// Per-position features and targets. With `conditioned = false` the
    /// instruction is dropped from every context.
    fn positions(&self, ex: &ToyExample, conditioned: bool) -> Vec<(Vec<f64>, usize)> {
        let f = self.dim;
        let mut sum = self.embeddings[self.vocab * f..].to_vec();
        let mut count = 1usize;
        let add = |sum: &mut Vec<f64>, tok: usize| {
            for (s, e) in sum.iter_mut().zip(&self.embeddings[tok * f..(tok + 1) * f]) {
                *s += e;
            }
        };
        if conditioned {
            for &t in &ex.instruction_tokens {
                add(&mut sum, t);
                count += 1;
            }
        }
        let mut out = Vec::with_capacity(ex.response_tokens.len());
        for &y in &ex.response_tokens {
            let inv = (count as f64).recip();
            out.push((sum.iter().map(|s| s * inv).collect(), y));
            add(&mut sum, y);
            count += 1;
        }
        out
    }

    fn probabilities(&self, feat: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = self
            .weights
            .chunks_exact(self.dim)
            .map(|w| crate::features::dot(w, feat))
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    /// Mean log-likelihood of the response.
    pub fn loss(&self, ex: &ToyExample) -> Result<f64> {
        ex.validate(self.vocab)?;
        Ok(self.mean_log_lik(ex, true))
    }

    fn target_probabilities(&self, ex: &ToyExample, conditioned: bool) -> Vec<f64> {
        self.positions(ex, conditioned)
            .iter()
            .map(|(f, y)| self.probabilities(f)[*y])
            .collect()
    }

    fn mean_log_lik(&self, ex: &ToyExample, conditioned: bool) -> f64 {
        let p = self.target_probabilities(ex, conditioned);
        p.iter().map(|q| q.ln()).sum::<f64>() / p.len() as f64
    }

    /// Mean log-likelihood and its gradient with respect to `W`.
    pub fn loss_and_grad(&self, ex: &ToyExample) -> Result<(f64, LayerGradient)> {
        ex.validate(self.vocab)?;
        let (loss, grad, _) = self.forward_backward(ex);
        Ok((loss, LayerGradient::new(LAYER_NAME, self.vocab, self.dim, grad)?))
    }

    /// Returns (loss, gradient values, el2n).
    fn forward_backward(&self, ex: &ToyExample) -> (f64, Vec<f64>, f64) {
        let (v, f) = (self.vocab, self.dim);
        let pos = self.positions(ex, true);
        let inv_t = (pos.len() as f64).recip();
        let mut grad = vec![0.0; v * f];
        let mut loss = 0.0;
        let mut el2n = 0.0;
        for (feat, y) in &pos {
            let p = self.probabilities(feat);
            loss += p[*y].ln();
            let mut err_sq = 0.0;
            for (k, &pk) in p.iter().enumerate() {
                let e = if k == *y { 1.0 - pk } else { -pk };
                err_sq += e * e;
                let c = e * inv_t;
                for (g, x) in grad[k * f..(k + 1) * f].iter_mut().zip(feat) {
                    *g += c * x;
                }
            }
            el2n += err_sq.sqrt();
        }
        (loss * inv_t, grad, el2n * inv_t)
    }

    pub fn quality_scores(&self, ex: &ToyExample) -> Result<QualityRecord> {
        ex.validate(self.vocab)?;
        let (_, grad, el2n) = self.forward_backward(ex);
        let perplexity = perplexity_of(&self.target_probabilities(ex, true));
        let unconditioned = perplexity_of(&self.target_probabilities(ex, false));
        let n_in = ex.instruction_tokens.len();
        let n_out = ex.response_tokens.len();
        Ok(QualityRecord {
            grad_norm: crate::features::norm(&grad),
            perplexity,
            ifd: perplexity / unconditioned,
            el2n,
            n_input_tokens: n_in,
            n_output_tokens: n_out,
            n_total_tokens: n_in + n_out,
        })
    }
}

/// Geometric mean of `1 / p`, taken relative to the first probability so that
/// equal probabilities give exactly `1 / p`.
fn perplexity_of(p: &[f64]) -> f64 {
    let base = p[0].ln();
    let shift = p.iter().map(|q| q.ln() - base).sum::<f64>() / p.len() as f64;
    (-shift).exp() / p[0]
}

/// Per-example gradients, one single-layer list per example.
pub fn gradients(model: &ToyModel, examples: &[ToyExample]) -> Result<Vec<Vec<LayerGradient>>> {
    use rayon::prelude::*;
    examples
        .par_iter()
        .map(|ex| model.loss_and_grad(ex).map(|(_, g)| vec![g]))
        .collect()
}

/// Score every example into a table with the [`SCORE_COLUMNS`].
pub fn score_table(model: &ToyModel, examples: &[ToyExample]) -> Result<ScoreTable> {
    use rayon::prelude::*;
    let records: Vec<QualityRecord> = examples
        .par_iter()
        .map(|ex| model.quality_scores(ex))
        .collect::<Result<_>>()?;
    let col = |f: fn(&QualityRecord) -> f64| records.iter().map(f).collect::<Vec<f64>>();
    ScoreTable::new(examples.len())
        .with_column("grad_norm", col(|r| r.grad_norm))?
        .with_column("perplexity", col(|r| r.perplexity))?
        .with_column("ifd", col(|r| r.ifd))?
        .with_column("el2n", col(|r| r.el2n))?
        .with_column("n_input_tokens", col(|r| r.n_input_tokens as f64))?
        .with_column("n_output_tokens", col(|r| r.n_output_tokens as f64))?
        .with_column("n_total_tokens", col(|r| r.n_total_tokens as f64))
}

/// Template-cluster corpus. `round(redundancy * n)` examples are
/// near-duplicates spread over `ceil(n_dup / 20)` templates (between 1 and
/// 50); each copies its template's response and replaces one instruction
/// token. Every other example has its own template. Labels are template
/// ids and the order is shuffled.
pub fn make_toy_corpus(n: usize, seed: u64, redundancy: f64) -> Result<(Vec<ToyExample>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::InvalidParameter("corpus size must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&redundancy) {
        return Err(Error::InvalidParameter("redundancy must lie in [0, 1]".into()));
    }
    let mut rng = rng::seeded(seed);
    let n_dup = (redundancy * n as f64).round() as usize;
    let n_dup_templates = if n_dup == 0 { 0 } else { n_dup.div_ceil(20).clamp(1, 50) };
    let n_templates = n_dup_templates + (n - n_dup);

    let template = |rng: &mut rng::Rng| {
        let li = rng.random_range(4..=12);
        let lr = rng.random_range(2..=24);
        ToyExample::new(
            (0..li).map(|_| rng.random_range(0..TOY_VOCAB)).collect(),
            (0..lr).map(|_| rng.random_range(0..TOY_VOCAB)).collect(),
        )
    };
    let templates: Vec<ToyExample> = (0..n_templates).map(|_| template(&mut rng)).collect();

    let mut corpus: Vec<(ToyExample, usize)> = Vec::with_capacity(n);
    for i in 0..n_dup {
        let t = i % n_dup_templates;
        let mut ex = templates[t].clone();
        let k = rng.random_range(0..ex.instruction_tokens.len());
        ex.instruction_tokens[k] = rng.random_range(0..TOY_VOCAB);
        corpus.push((ex, t));
    }
    for (t, ex) in templates.iter().enumerate().skip(n_dup_templates) {
        corpus.push((ex.clone(), t));
    }
    let mut shuffle_rng = rng::seeded(derive_seed(seed, 1));
    corpus.shuffle(&mut shuffle_rng);
    Ok(corpus.into_iter().unzip())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(inst: &[usize], resp: &[usize]) -> ToyExample {
        ToyExample::new(inst.to_vec(), resp.to_vec())
    }

    #[test]
    fn uniform_binary_model() {
        let m = ToyModel::uniform(2, 1, 3).unwrap();
        let e = ex(&[1, 0], &[0, 1, 1]);
        let (loss, g) = m.loss_and_grad(&e).unwrap();
        assert!((loss - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(g.rows(), 2);
        assert_eq!(g.values()[0] + g.values()[1], 0.0);
        let q = m.quality_scores(&e).unwrap();
        assert!((q.el2n - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn uniform_perplexity_and_ifd_are_exact() {
        let m = ToyModel::uniform(4, 3, 1).unwrap();
        let q = m.quality_scores(&ex(&[0, 1, 2], &[3, 3, 0, 1])).unwrap();
        assert_eq!(q.perplexity, 4.0);
        assert_eq!(q.ifd, 1.0);
        assert_eq!((q.n_input_tokens, q.n_output_tokens, q.n_total_tokens), (3, 4, 7));
        for v in [3, 5, 7, 10, 64] {
            let m = ToyModel::uniform(v, 3, 1).unwrap();
            let q = m.quality_scores(&ex(&[1, 2], &[0, 2, 1])).unwrap();
            assert_eq!(q.perplexity, v as f64, "V = {v}");
            assert_eq!(q.ifd, 1.0, "V = {v}");
        }
    }

    #[test]
    fn perplexity_matches_exp_of_mean_nll() {
        let m = ToyModel::random(6, 4, 2, 1.0).unwrap();
        let e = ex(&[1, 5], &[0, 2, 4, 3]);
        let q = m.quality_scores(&e).unwrap();
        let direct = (-m.loss(&e).unwrap()).exp();
        assert!((q.perplexity - direct).abs() <= 1e-12 * direct);
    }

    #[test]
    fn gradient_columns_sum_to_zero() {
        let m = ToyModel::random(7, 4, 2, 1.0).unwrap();
        let (_, g) = m.loss_and_grad(&ex(&[1, 2, 3], &[6, 0, 5, 5])).unwrap();
        for c in 0..4 {
            let s: f64 = (0..7).map(|r| g.row(r)[c]).sum();
            assert!(s.abs() < 1e-12, "{s}");
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let base = ToyModel::random(5, 3, 11, 0.8).unwrap();
        let e = ex(&[4, 1], &[2, 0, 3]);
        let (_, g) = base.loss_and_grad(&e).unwrap();
        let h = 1e-5;
        for k in 0..15 {
            let mut plus = base.clone();
            let mut w = base.weights().to_vec();
            w[k] += h;
            plus.set_weights(w.clone()).unwrap();
            let mut minus = base.clone();
            w[k] -= 2.0 * h;
            minus.set_weights(w).unwrap();
            let fd = (plus.loss(&e).unwrap() - minus.loss(&e).unwrap()) / (2.0 * h);
            assert!((fd - g.values()[k]).abs() < 1e-6, "k={k} fd={fd} g={}", g.values()[k]);
        }
    }

    #[test]
    fn consistency_between_operations() {
        let m = ToyModel::random(9, 5, 4, 1.0).unwrap();
        let e = ex(&[1, 2], &[3, 4, 5]);
        let (loss, g) = m.loss_and_grad(&e).unwrap();
        let q = m.quality_scores(&e).unwrap();
        assert_eq!(q.perplexity, (-loss).exp());
        assert_eq!(q.grad_norm, g.frobenius_sq().sqrt());
        assert!(q.ifd > 0.0 && q.ifd != 1.0);
    }

    #[test]
    fn invalid_examples() {
        let m = ToyModel::uniform(4, 2, 1).unwrap();
        assert!(m.loss(&ex(&[0], &[])).is_err());
        assert!(matches!(
            m.loss(&ex(&[9], &[0])),
            Err(Error::IndexOutOfRange { index: 9, len: 4 })
        ));
    }

    #[test]
    fn corpus_without_redundancy_is_all_distinct_templates() {
        let (examples, labels) = make_toy_corpus(200, 5, 0.0).unwrap();
        assert_eq!(examples.len(), 200);
        let mut l = labels.clone();
        l.sort_unstable();
        l.dedup();
        assert_eq!(l.len(), 200);
        for e in &examples {
            assert!((2..=24).contains(&e.response_tokens.len()));
        }
    }

    #[test]
    fn redundant_corpus_concentrates_on_few_templates() {
        let (examples, labels) = make_toy_corpus(1000, 5, 0.9).unwrap();
        let mut counts = std::collections::HashMap::new();
        for &l in &labels {
            *counts.entry(l).or_insert(0usize) += 1;
        }
        let mut shared: Vec<usize> = counts.values().copied().filter(|&c| c > 1).collect();
        shared.sort_unstable();
        assert!(shared.len() <= 50);
        assert!(shared.iter().sum::<usize>() >= 900);
        // near-duplicates share the response and differ in at most one instruction token
        let t = labels[0];
        let members: Vec<&ToyExample> = (0..1000).filter(|&i| labels[i] == t).map(|i| &examples[i]).collect();
        for pair in members.windows(2) {
            assert_eq!(pair[0].response_tokens, pair[1].response_tokens);
            let diff = pair[0]
                .instruction_tokens
                .iter()
                .zip(&pair[1].instruction_tokens)
                .filter(|(a, b)| a != b)
                .count();
            assert!(diff <= 2);
        }
    }

    #[test]
    fn score_table_has_all_columns() {
        let m = ToyModel::random(TOY_VOCAB, 8, 1, 0.5).unwrap();
        let (examples, _) = make_toy_corpus(30, 2, 0.5).unwrap();
        let t = score_table(&m, &examples).unwrap();
        assert_eq!(t.names().collect::<Vec<_>>(), SCORE_COLUMNS.to_vec());
        assert_eq!(t.n_rows(), 30);
    }
}
