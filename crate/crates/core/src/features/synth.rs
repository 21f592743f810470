use serde::{Deserialize, Serialize};

use super::{norm, FeatureMatrix};
use crate::rng::{self, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SynthKind {
    /// iid standard normal vectors scaled to unit norm.
    HypersphereUniform,
    /// Unit centroids plus isotropic Gaussian noise, re-normalized. Row `i`
    /// belongs to cluster `i % n_clusters`.
    ClusteredMixture {
        n_clusters: usize,
        intra_cluster_scale: f64,
    },
    /// `ceil(n / dup_factor)` hypersphere rows, each repeated `dup_factor`
    /// times consecutively, truncated to `n`.
    Duplicated { dup_factor: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(flatten)]
    pub kind: SynthKind,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn hypersphere(n: usize, d: usize, seed: u64) -> Self {
        SynthSpec {
            kind: SynthKind::HypersphereUniform,
            n,
            d,
            seed,
        }
    }

    pub fn clustered(n: usize, d: usize, n_clusters: usize, scale: f64, seed: u64) -> Self {
        SynthSpec {
            kind: SynthKind::ClusteredMixture {
                n_clusters,
                intra_cluster_scale: scale,
            },
            n,
            d,
            seed,
        }
    }

    pub fn duplicated(n: usize, d: usize, dup_factor: usize, seed: u64) -> Self {
        SynthSpec {
            kind: SynthKind::Duplicated { dup_factor },
            n,
            d,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::InvalidParameter("synthetic n and d must be >= 1".into()));
        }
        match self.kind {
            SynthKind::HypersphereUniform => Ok(()),
            SynthKind::ClusteredMixture {
                n_clusters,
                intra_cluster_scale,
            } => {
                if n_clusters == 0 {
                    Err(Error::InvalidParameter("n_clusters must be >= 1".into()))
                } else if !(intra_cluster_scale >= 0.0 && intra_cluster_scale.is_finite()) {
                    Err(Error::InvalidParameter(
                        "intra_cluster_scale must be finite and >= 0".into(),
                    ))
                } else {
                    Ok(())
                }
            }
            SynthKind::Duplicated { dup_factor } => {
                if dup_factor == 0 {
                    Err(Error::InvalidParameter("dup_factor must be >= 1".into()))
                } else {
                    Ok(())
                }
            }
        }
    }
}

pub fn synthesize(spec: &SynthSpec) -> Result<FeatureMatrix> {
    synthesize_labeled(spec).map(|(m, _)| m)
}

/// Like [`synthesize`], also returning the generating group of each row
/// (cluster id, or base-row id for duplicated data; row id otherwise).
pub fn synthesize_labeled(spec: &SynthSpec) -> Result<(FeatureMatrix, Vec<usize>)> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);
    let (n, d) = (spec.n, spec.d);
    let (values, labels) = match spec.kind {
        SynthKind::HypersphereUniform => (sphere_rows(&mut rng, n, d), (0..n).collect()),
        SynthKind::ClusteredMixture {
            n_clusters,
            intra_cluster_scale,
        } => {
            let centroids = sphere_rows(&mut rng, n_clusters, d);
            let mut values = Vec::with_capacity(n * d);
            let mut labels = Vec::with_capacity(n);
            let mut row = vec![0.0; d];
            for i in 0..n {
                let c = i % n_clusters;
                let centroid = &centroids[c * d..(c + 1) * d];
                loop {
                    for (r, &m) in row.iter_mut().zip(centroid) {
                        *r = m + intra_cluster_scale * rng::standard_normal(&mut rng);
                    }
                    let len = norm(&row);
                    if len > 0.0 {
                        values.extend(row.iter().map(|v| v / len));
                        break;
                    }
                }
                labels.push(c);
            }
            (values, labels)
        }
        SynthKind::Duplicated { dup_factor } => {
            let base_n = n.div_ceil(dup_factor);
            let base = sphere_rows(&mut rng, base_n, d);
            let mut values = Vec::with_capacity(n * d);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let b = i / dup_factor;
                values.extend_from_slice(&base[b * d..(b + 1) * d]);
                labels.push(b);
            }
            (values, labels)
        }
    };
    Ok((FeatureMatrix::new(n, d, values)?, labels))
}

fn sphere_rows(rng: &mut Rng, n: usize, d: usize) -> Vec<f64> {
    let mut values = Vec::with_capacity(n * d);
    let mut row = vec![0.0; d];
    for _ in 0..n {
        loop {
            rng::fill_standard_normal(rng, &mut row);
            let len = norm(&row);
            if len > 0.0 {
                values.extend(row.iter().map(|v| v / len));
                break;
            }
        }
    }
    values
}
