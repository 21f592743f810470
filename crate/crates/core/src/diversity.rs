//! Log determinant distance (LDD) between a dataset and a reference of
//! random points on the unit hypersphere.
//!
//! Both kernels are run through greedy MAP to exhaustion. With `g_L` and
//! `g_R` the per-step gains of the dataset and the reference,
//!
//! ```text
//! curve[n] = (1/n) * (sum_{k<=n} g_R[k] - sum_{k<=n} g_L[k])
//! LDD      = curve[N]
//! ```
//!
//! Smaller is more diverse. Values are only comparable under an identical
//! kernel and reference spec, so both are echoed into every report.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dpp::{greedy_map, Budget, GreedyTrace};
use crate::features::{load_features, synthesize, FeatureMatrix, SynthSpec};
use crate::kernels::{DppKernel, KernelSpec};
use crate::{rng, Error, Result};

/// Clamped-step fraction above which an LDD is flagged as floor-dependent.
pub const DEFAULT_CLAMP_FLAG_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ReferenceSource {
    Hypersphere,
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSpec {
    pub source: ReferenceSource,
    /// Must equal the dataset's row count.
    pub n: usize,
    pub d_ref: usize,
    pub seed: u64,
    /// Must equal the dataset's kernel spec.
    pub kernel: KernelSpec,
}

impl ReferenceSpec {
    pub fn hypersphere(n: usize, d_ref: usize, seed: u64, kernel: KernelSpec) -> Self {
        ReferenceSpec {
            source: ReferenceSource::Hypersphere,
            n,
            d_ref,
            seed,
            kernel,
        }
    }

    pub fn file(path: impl Into<PathBuf>, n: usize, kernel: KernelSpec) -> Self {
        ReferenceSpec {
            source: ReferenceSource::File { path: path.into() },
            n,
            d_ref: 0,
            seed: 0,
            kernel,
        }
    }
}

/// Build the reference feature matrix.
pub fn make_reference(spec: &ReferenceSpec) -> Result<FeatureMatrix> {
    match &spec.source {
        ReferenceSource::Hypersphere => {
            if spec.d_ref == 0 {
                return Err(Error::InvalidParameter("reference dimension must be >= 1".into()));
            }
            synthesize(&SynthSpec::hypersphere(spec.n, spec.d_ref, spec.seed))
        }
        ReferenceSource::File { path } => {
            let m = load_features(path)?;
            if m.n_rows() != spec.n {
                return Err(Error::LengthMismatch {
                    expected: spec.n,
                    found: m.n_rows(),
                    context: format!("reference rows in {}", path.display()),
                });
            }
            if spec.kernel.assume_unit_rows && !m.is_normalized() {
                return Err(Error::InvalidParameter(format!(
                    "reference file {} has non-unit rows but the kernel assumes unit rows",
                    path.display()
                )));
            }
            Ok(m)
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct DiversityOptions {
    /// Optional (q, lambda) folded into the dataset kernel only.
    pub quality: Option<(Vec<f64>, f64)>,
    pub budget: Option<Budget>,
    pub clamp_flag_fraction: Option<f64>,
    pub label: Option<String>,
}

/// Everything needed to plot and compare LDD curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub ldd: f64,
    pub n: usize,
    pub gamma: Option<f64>,
    pub kernel: KernelSpec,
    pub reference: ReferenceEcho,
    pub quality_lambda: Option<f64>,
    pub variance_floor: f64,
    pub clamped_steps_data: usize,
    pub clamped_steps_ref: usize,
    /// More than the flag fraction of steps in either run hit the floor.
    pub floor_dependent: bool,
    pub generator: String,
    pub curve: Vec<f64>,
    pub gains_data: Vec<f64>,
    pub gains_ref: Vec<f64>,
    pub cum_logdet_data: Vec<f64>,
    pub cum_logdet_ref: Vec<f64>,
}

/// Reference metadata carried in a report; `n` is left out because it
/// always equals the report's own `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEcho {
    pub source: ReferenceSource,
    pub d_ref: usize,
    pub seed: u64,
}

impl DiversityReport {
    /// Whether two reports were computed under the same kernel and reference.
    pub fn comparable_with(&self, other: &DiversityReport) -> bool {
        self.kernel == other.kernel && self.reference == other.reference
    }

    /// CSV with one row per greedy step:
    /// `step,gain_data,gain_ref,cum_logdet_data,cum_logdet_ref,logdet_gap,ldd_curve`.
    pub fn write_curve_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "step,gain_data,gain_ref,cum_logdet_data,cum_logdet_ref,logdet_gap,ldd_curve"
        )?;
        for s in 0..self.curve.len() {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                s + 1,
                self.gains_data[s],
                self.gains_ref[s],
                self.cum_logdet_data[s],
                self.cum_logdet_ref[s],
                self.cum_logdet_ref[s] - self.cum_logdet_data[s],
                self.curve[s]
            )?;
        }
        Ok(())
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Write the per-step curve CSV for a report.
pub fn ldd_curve_export(report: &DiversityReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    report.write_curve_csv(&mut buf).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn log_det_distance(
    data: &FeatureMatrix,
    kernel: &KernelSpec,
    reference: &ReferenceSpec,
) -> Result<DiversityReport> {
    log_det_distance_with(data, kernel, reference, &DiversityOptions::default())
}

pub fn log_det_distance_with(
    data: &FeatureMatrix,
    kernel: &KernelSpec,
    reference: &ReferenceSpec,
    opts: &DiversityOptions,
) -> Result<DiversityReport> {
    if reference.kernel != *kernel {
        return Err(Error::InvalidParameter(
            "reference kernel spec must equal the dataset kernel spec".into(),
        ));
    }
    if reference.n != data.n_rows() {
        return Err(Error::LengthMismatch {
            expected: data.n_rows(),
            found: reference.n,
            context: "reference size must match dataset size".into(),
        });
    }
    let ref_features = make_reference(reference)?;
    let mut data_kernel = DppKernel::new(data, *kernel)?;
    if let Some((q, lambda)) = &opts.quality {
        data_kernel = data_kernel.with_quality(q.clone(), *lambda)?;
    }
    let ref_kernel = DppKernel::new(&ref_features, *kernel)?;
    let budget = opts.budget.unwrap_or_else(Budget::exhaustive);
    let budget = Budget {
        run_to_exhaustion: true,
        stop_at_floor: false,
        ..budget
    };

    let (data_trace, ref_trace) = rayon::join(
        || greedy_map(&data_kernel, &budget),
        || greedy_map(&ref_kernel, &budget),
    );
    let (data_trace, ref_trace) = (data_trace?, ref_trace?);

    let mut report = assemble(data_trace, ref_trace, kernel, reference, &budget, opts)?;
    report.quality_lambda = opts.quality.as_ref().map(|(_, l)| *l);
    Ok(report)
}

/// A reference whose greedy trace has already been computed, for measuring
/// many datasets of the same size against it.
#[derive(Debug, Clone)]
pub struct Reference {
    spec: ReferenceSpec,
    budget: Budget,
    trace: GreedyTrace,
}

impl Reference {
    pub fn build(spec: ReferenceSpec) -> Result<Self> {
        Self::build_with(spec, Budget::exhaustive())
    }

    pub fn build_with(spec: ReferenceSpec, budget: Budget) -> Result<Self> {
        let features = make_reference(&spec)?;
        let kernel = DppKernel::new(&features, spec.kernel)?;
        let budget = Budget {
            run_to_exhaustion: true,
            stop_at_floor: false,
            ..budget
        };
        let trace = greedy_map(&kernel, &budget)?;
        Ok(Reference { spec, budget, trace })
    }

    pub fn spec(&self) -> &ReferenceSpec {
        &self.spec
    }

    pub fn trace(&self) -> &GreedyTrace {
        &self.trace
    }

    /// LDD of `data` under the reference's kernel spec.
    pub fn measure(&self, data: &FeatureMatrix, opts: &DiversityOptions) -> Result<DiversityReport> {
        if data.n_rows() != self.spec.n {
            return Err(Error::LengthMismatch {
                expected: data.n_rows(),
                found: self.spec.n,
                context: "reference size must match dataset size".into(),
            });
        }
        if opts.budget.is_some_and(|b| b.variance_floor != self.budget.variance_floor) {
            return Err(Error::InvalidParameter(
                "variance floor differs from the one the reference was built with".into(),
            ));
        }
        let mut kernel = DppKernel::new(data, self.spec.kernel)?;
        if let Some((q, lambda)) = &opts.quality {
            kernel = kernel.with_quality(q.clone(), *lambda)?;
        }
        let data_trace = greedy_map(&kernel, &self.budget)?;
        let mut report = assemble(
            data_trace,
            self.trace.clone(),
            &self.spec.kernel,
            &self.spec,
            &self.budget,
            opts,
        )?;
        report.quality_lambda = opts.quality.as_ref().map(|(_, l)| *l);
        Ok(report)
    }
}

fn assemble(
    data: GreedyTrace,
    reference: GreedyTrace,
    kernel: &KernelSpec,
    spec: &ReferenceSpec,
    budget: &Budget,
    opts: &DiversityOptions,
) -> Result<DiversityReport> {
    let n = data.len();
    let curve: Vec<f64> = (0..n)
        .map(|s| (reference.cum_logdet[s] - data.cum_logdet[s]) / (s + 1) as f64)
        .collect();
    if let Some(s) = curve.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("LDD curve is non-finite at step {}", s + 1)));
    }
    let frac = opts.clamp_flag_fraction.unwrap_or(DEFAULT_CLAMP_FLAG_FRACTION);
    let limit = frac * n as f64;
    let floor_dependent =
        data.clamped_steps as f64 > limit || reference.clamped_steps as f64 > limit;
    Ok(DiversityReport {
        label: opts.label.clone(),
        ldd: curve[n - 1],
        n,
        gamma: kernel.gamma(),
        kernel: *kernel,
        reference: ReferenceEcho {
            source: spec.source.clone(),
            d_ref: spec.d_ref,
            seed: spec.seed,
        },
        quality_lambda: None,
        variance_floor: budget.variance_floor,
        clamped_steps_data: data.clamped_steps,
        clamped_steps_ref: reference.clamped_steps,
        floor_dependent,
        generator: rng::GENERATOR.to_string(),
        curve,
        gains_data: data.gains,
        gains_ref: reference.gains,
        cum_logdet_data: data.cum_logdet,
        cum_logdet_ref: reference.cum_logdet,
    })
}
