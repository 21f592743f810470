//! One interface over every subset-selection strategy: DPP greedy MAP with
//! optional quality weighting, uniform random, rank-and-select on a score
//! column and greedy cosine-threshold deduplication.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dpp::{greedy_map, Budget, GreedyTrace};
use crate::features::{dot, FeatureMatrix, ScoreTable};
use crate::kernels::{beta_for_lambda, quality_transform, DppKernel, KernelSpec, QualityTransform};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Smallest values first.
    Asc,
    /// Largest values first.
    Desc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Strategy {
    Dpp {
        kernel: KernelSpec,
        lambda: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        quality_column: Option<String>,
        #[serde(default)]
        quality_transform: QualityTransform,
    },
    Random {
        seed: u64,
    },
    Rank {
        column: String,
        direction: Direction,
    },
    Dedup {
        tau: f64,
    },
}

impl Strategy {
    pub fn dpp(kernel: KernelSpec) -> Self {
        Strategy::Dpp {
            kernel,
            lambda: 0.0,
            quality_column: None,
            quality_transform: QualityTransform::default(),
        }
    }

    pub fn dpp_with_quality(kernel: KernelSpec, lambda: f64, column: impl Into<String>) -> Self {
        Strategy::Dpp {
            kernel,
            lambda,
            quality_column: Some(column.into()),
            quality_transform: QualityTransform::default(),
        }
    }

    pub fn rank(column: impl Into<String>, direction: Direction) -> Self {
        Strategy::Rank {
            column: column.into(),
            direction,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Dpp { .. } => "dpp",
            Strategy::Random { .. } => "random",
            Strategy::Rank { .. } => "rank",
            Strategy::Dedup { .. } => "dedup",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelectionRequest<'a> {
    pub features: &'a FeatureMatrix,
    pub scores: Option<&'a ScoreTable>,
    /// Ground-truth group labels; when present the result carries metrics.
    pub labels: Option<&'a [usize]>,
    pub strategy: Strategy,
    pub budget: usize,
}

impl<'a> SelectionRequest<'a> {
    pub fn new(features: &'a FeatureMatrix, strategy: Strategy, budget: usize) -> Self {
        SelectionRequest {
            features,
            scores: None,
            labels: None,
            strategy,
            budget,
        }
    }

    pub fn with_scores(mut self, scores: &'a ScoreTable) -> Self {
        self.scores = Some(scores);
        self
    }

    pub fn with_labels(mut self, labels: &'a [usize]) -> Self {
        self.labels = Some(labels);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub indices: Vec<usize>,
    pub strategy: Strategy,
    pub budget: usize,
    /// Fewer than `budget` items were returned.
    pub shortfall: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<CoverageMetrics>,
    /// Greedy trace of the dpp strategy; exported separately as CSV.
    #[serde(skip)]
    pub trace: Option<GreedyTrace>,
}

impl SelectionResult {
    pub fn write_indices<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for i in &self.indices {
            writeln!(w, "{i}")?;
        }
        Ok(())
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageMetrics {
    pub n_selected: usize,
    pub clusters_covered: usize,
    pub clusters_total: usize,
    /// Largest fraction of the selection taken from a single cluster.
    pub max_cluster_share: f64,
    /// Selected pairs that share a cluster label.
    pub duplicate_pairs: usize,
    /// Mean of each score column over the selection.
    pub mean_quality: BTreeMap<String, f64>,
}

pub fn select(req: &SelectionRequest<'_>) -> Result<SelectionResult> {
    let n = req.features.n_rows();
    if req.budget == 0 || req.budget > n {
        return Err(Error::InvalidParameter(format!(
            "budget {} must lie in [1, {n}]",
            req.budget
        )));
    }
    if let Some(s) = req.scores {
        if s.n_rows() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: s.n_rows(),
                context: "score table rows".into(),
            });
        }
    }
    let m = req.budget;
    let mut trace = None;
    let mut warning = None;
    let indices = match &req.strategy {
        Strategy::Dpp {
            kernel,
            lambda,
            quality_column,
            quality_transform: mode,
        } => {
            beta_for_lambda(*lambda)?;
            let mut k = DppKernel::new(req.features, *kernel)?;
            if *lambda > 0.0 {
                let column = quality_column.as_deref().ok_or_else(|| {
                    Error::InvalidParameter("dpp with lambda > 0 needs a quality column".into())
                })?;
                let raw = require_scores(req)?.require(column)?;
                k = k.with_quality(quality_transform(raw, *mode)?, *lambda)?;
            }
            let t = greedy_map(&k, &Budget::select(m))?;
            let idx = t.selected.clone();
            trace = Some(t);
            idx
        }
        Strategy::Random { seed } => {
            let mut r = rng::seeded(*seed);
            index::sample(&mut r, n, m).into_vec()
        }
        Strategy::Rank { column, direction } => {
            let col = require_scores(req)?.require(column)?;
            rank_order(col, *direction).into_iter().take(m).collect()
        }
        Strategy::Dedup { tau } => {
            if !tau.is_finite() {
                return Err(Error::InvalidParameter("dedup tau must be finite".into()));
            }
            let kept = dedup(req.features, *tau, m)?;
            if kept.len() < m {
                warning = Some(format!(
                    "dedup at tau={tau} kept only {} of the requested {m} items",
                    kept.len()
                ));
            }
            kept
        }
    };
    let metrics = match req.labels {
        Some(labels) => {
            if labels.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    found: labels.len(),
                    context: "cluster labels".into(),
                });
            }
            Some(coverage_metrics(&indices, labels, req.scores)?)
        }
        None => None,
    };
    Ok(SelectionResult {
        shortfall: indices.len() < m,
        indices,
        strategy: req.strategy.clone(),
        budget: m,
        warning,
        metrics,
        trace,
    })
}

fn require_scores<'a>(req: &SelectionRequest<'a>) -> Result<&'a ScoreTable> {
    req.scores.ok_or_else(|| {
        Error::InvalidParameter(format!("strategy {} needs a score table", req.strategy.name()))
    })
}

/// Indices ordered by value in the given direction; ties keep index order.
pub fn rank_order(values: &[f64], direction: Direction) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let c = values[a].total_cmp(&values[b]);
        let c = match direction {
            Direction::Asc => c,
            Direction::Desc => c.reverse(),
        };
        c.then(a.cmp(&b))
    });
    order
}

/// Index-order scan keeping an item iff its cosine similarity to every kept
/// item is below `tau`; stops once `m` items are kept.
fn dedup(features: &FeatureMatrix, tau: f64, m: usize) -> Result<Vec<usize>> {
    let unit;
    let x = if features.is_normalized() {
        features
    } else {
        unit = features.normalize_rows()?;
        &unit
    };
    let mut kept: Vec<usize> = Vec::with_capacity(m);
    for i in 0..x.n_rows() {
        if kept.len() == m {
            break;
        }
        let xi = x.row(i);
        if kept.iter().all(|&k| dot(xi, x.row(k)) < tau) {
            kept.push(i);
        }
    }
    Ok(kept)
}

pub fn coverage_metrics(
    indices: &[usize],
    labels: &[usize],
    scores: Option<&ScoreTable>,
) -> Result<CoverageMetrics> {
    if let Some(&i) = indices.iter().find(|&&i| i >= labels.len()) {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: labels.len(),
        });
    }
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for &i in indices {
        *counts.entry(labels[i]).or_default() += 1;
    }
    let clusters_total = labels.iter().collect::<std::collections::HashSet<_>>().len();
    let biggest = counts.values().copied().max().unwrap_or(0);
    let duplicate_pairs = counts.values().map(|&c| c * (c.saturating_sub(1)) / 2).sum();
    let mut mean_quality = BTreeMap::new();
    if let Some(s) = scores {
        if s.n_rows() != labels.len() {
            return Err(Error::LengthMismatch {
                expected: labels.len(),
                found: s.n_rows(),
                context: "score table rows".into(),
            });
        }
        if !indices.is_empty() {
            for name in s.names() {
                let col = s.require(name)?;
                let mean = indices.iter().map(|&i| col[i]).sum::<f64>() / indices.len() as f64;
                mean_quality.insert(name.to_string(), mean);
            }
        }
    }
    Ok(CoverageMetrics {
        n_selected: indices.len(),
        clusters_covered: counts.len(),
        clusters_total,
        max_cluster_share: if indices.is_empty() {
            0.0
        } else {
            biggest as f64 / indices.len() as f64
        },
        duplicate_pairs,
        mean_quality,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{synthesize, synthesize_labeled, SynthSpec};

    fn scores(name: &str, v: &[f64]) -> ScoreTable {
        ScoreTable::new(v.len()).with_column(name, v.to_vec()).unwrap()
    }

    fn unit_rbf() -> KernelSpec {
        KernelSpec::rbf(1.0).unit_rows(true)
    }

    #[test]
    fn rank_breaks_ties_by_index() {
        let x = synthesize(&SynthSpec::hypersphere(4, 3, 1)).unwrap();
        let s = scores("n_output_tokens", &[5.0, 9.0, 9.0, 1.0]);
        let req = SelectionRequest::new(&x, Strategy::rank("n_output_tokens", Direction::Desc), 2).with_scores(&s);
        assert_eq!(select(&req).unwrap().indices, vec![1, 2]);
        let req = SelectionRequest::new(&x, Strategy::rank("n_output_tokens", Direction::Asc), 2).with_scores(&s);
        assert_eq!(select(&req).unwrap().indices, vec![3, 0]);
    }

    #[test]
    fn missing_column_and_scores() {
        let x = synthesize(&SynthSpec::hypersphere(4, 3, 1)).unwrap();
        let s = scores("a", &[1.0, 2.0, 3.0, 4.0]);
        let req = SelectionRequest::new(&x, Strategy::rank("b", Direction::Desc), 2).with_scores(&s);
        assert!(matches!(select(&req), Err(Error::MissingColumn(_))));
        let req = SelectionRequest::new(&x, Strategy::rank("a", Direction::Desc), 2);
        assert!(select(&req).is_err());
        let req = SelectionRequest::new(&x, Strategy::dpp_with_quality(unit_rbf(), 1.0, "a"), 2).with_scores(&s);
        let err = select(&req).unwrap_err();
        assert!(err.to_string().contains("rank"), "{err}");
    }

    #[test]
    fn dedup_keeps_one_per_duplicate_group() {
        let (x, labels) = synthesize_labeled(&SynthSpec::duplicated(100, 16, 5, 3)).unwrap();
        let req = SelectionRequest::new(&x, Strategy::Dedup { tau: 0.99 }, 20).with_labels(&labels);
        let r = select(&req).unwrap();
        assert_eq!(r.indices, (0..20).map(|k| 5 * k).collect::<Vec<_>>());
        assert!(!r.shortfall);
        let m = r.metrics.unwrap();
        assert_eq!((m.clusters_covered, m.duplicate_pairs), (20, 0));
    }

    #[test]
    fn dedup_shortfall_warns() {
        let x = synthesize(&SynthSpec::duplicated(20, 8, 5, 3)).unwrap();
        let r = select(&SelectionRequest::new(&x, Strategy::Dedup { tau: 0.99 }, 10)).unwrap();
        assert_eq!(r.indices.len(), 4);
        assert!(r.shortfall);
        assert!(r.warning.is_some());
    }

    #[test]
    fn dedup_output_respects_threshold() {
        let x = synthesize(&SynthSpec::clustered(200, 8, 4, 0.3, 2)).unwrap();
        let tau = 0.8;
        let r = select(&SelectionRequest::new(&x, Strategy::Dedup { tau }, 200)).unwrap();
        for (a, &i) in r.indices.iter().enumerate() {
            for &j in &r.indices[a + 1..] {
                assert!(dot(x.row(i), x.row(j)) < tau);
            }
        }
    }

    #[test]
    fn random_is_seeded_and_distinct() {
        let x = synthesize(&SynthSpec::hypersphere(50, 3, 1)).unwrap();
        let a = select(&SelectionRequest::new(&x, Strategy::Random { seed: 4 }, 10)).unwrap();
        let b = select(&SelectionRequest::new(&x, Strategy::Random { seed: 4 }, 10)).unwrap();
        let c = select(&SelectionRequest::new(&x, Strategy::Random { seed: 5 }, 10)).unwrap();
        assert_eq!(a.indices, b.indices);
        assert_ne!(a.indices, c.indices);
        let mut s = a.indices.clone();
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 10);
    }

    #[test]
    fn dpp_lambda_zero_ignores_scores() {
        let x = synthesize(&SynthSpec::clustered(60, 8, 6, 0.2, 1)).unwrap();
        let s = scores("q", &(0..60).map(f64::from).collect::<Vec<_>>());
        let strategy = Strategy::Dpp {
            kernel: unit_rbf(),
            lambda: 0.0,
            quality_column: Some("q".into()),
            quality_transform: QualityTransform::RankNormalize,
        };
        let with = select(&SelectionRequest::new(&x, strategy.clone(), 12).with_scores(&s)).unwrap();
        let without = select(&SelectionRequest::new(&x, strategy, 12)).unwrap();
        assert_eq!(with.indices, without.indices);
        assert_eq!(with.trace.as_ref().unwrap().len(), 12);
    }

    #[test]
    fn dpp_covers_duplicate_groups() {
        let (x, labels) = synthesize_labeled(&SynthSpec::duplicated(100, 16, 5, 3)).unwrap();
        let r = select(&SelectionRequest::new(&x, Strategy::dpp(unit_rbf()), 20).with_labels(&labels)).unwrap();
        assert_eq!(r.metrics.unwrap().clusters_covered, 20);
    }

    #[test]
    fn budget_validation() {
        let x = synthesize(&SynthSpec::hypersphere(5, 3, 1)).unwrap();
        assert!(select(&SelectionRequest::new(&x, Strategy::Random { seed: 1 }, 0)).is_err());
        assert!(select(&SelectionRequest::new(&x, Strategy::Random { seed: 1 }, 6)).is_err());
    }

    #[test]
    fn metrics_by_hand() {
        let labels = [0, 0, 1, 1, 1, 2];
        let s = scores("q", &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let m = coverage_metrics(&[2, 3, 4, 0], &labels, Some(&s)).unwrap();
        assert_eq!(m.clusters_covered, 2);
        assert_eq!(m.clusters_total, 3);
        assert_eq!(m.duplicate_pairs, 3);
        assert_eq!(m.max_cluster_share, 0.75);
        assert_eq!(m.mean_quality["q"], 3.25);
        assert!(coverage_metrics(&[6], &labels, None).is_err());
    }

    #[test]
    fn result_json_shape() {
        let x = synthesize(&SynthSpec::hypersphere(10, 3, 1)).unwrap();
        let r = select(&SelectionRequest::new(&x, Strategy::dpp(unit_rbf()), 3)).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["strategy"]["kind"], "dpp");
        assert_eq!(v["strategy"]["kernel"]["kind"], "rbf");
        assert_eq!(v["shortfall"], false);
        assert_eq!(v["indices"].as_array().unwrap().len(), 3);
        let back: SelectionResult = serde_json::from_value(v).unwrap();
        assert_eq!(back.indices, r.indices);
    }
}
