use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use dppsel::diversity::{self, DiversityOptions, DiversityReport, ReferenceSpec};
use dppsel::features::{load_features, load_scores, save_features, synthesize_labeled, SynthSpec};
use dppsel::kernels::{KernelSpec, QualityTransform};
use dppsel::rng::{derive_seed, GENERATOR};
use dppsel::select::{self, Direction, SelectionRequest, Strategy};
use dppsel::sketch::{self, SketchPlan};
use dppsel::toymodel::{self, ToyModel, TOY_VOCAB};

use crate::args::*;

/// Command failure carrying its exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or invalid input; exit code 2.
    Usage(String),
    /// I/O or numeric failure; exit code 1.
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<dppsel::Error> for Failure {
    fn from(e: dppsel::Error) -> Self {
        if e.is_validation() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

pub type Outcome<T = ()> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn io_failure(path: &Path, e: impl fmt::Display) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

/// Everything written to disk besides the command's own outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub tool: String,
    pub version: String,
    pub generator: String,
    pub threads: usize,
    pub log_level: String,
    #[serde(flatten)]
    pub command: Command,
}

pub struct Context {
    pub out_dir: Option<PathBuf>,
    pub threads: usize,
    pub log_level: log::LevelFilter,
}

impl Context {
    /// Relative output paths land under `--out-dir` when it is given.
    fn out(&self, p: &Path) -> PathBuf {
        match &self.out_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn create(&self, p: &Path) -> Outcome<PathBuf> {
        let path = self.out(p);
        if let Some(parent) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| io_failure(parent, e))?;
        }
        Ok(path)
    }

    fn write(&self, p: &Path, bytes: impl AsRef<[u8]>) -> Outcome<PathBuf> {
        let path = self.create(p)?;
        fs::write(&path, bytes).map_err(|e| io_failure(&path, e))?;
        Ok(path)
    }

    /// Write `<primary>.config.json` describing this run.
    fn echo(&self, primary: &Path, command: &Command) -> Outcome {
        let echo = ConfigEcho {
            tool: "dppsel".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            generator: GENERATOR.into(),
            threads: self.threads,
            log_level: self.log_level.to_string().to_lowercase(),
            command: command.clone(),
        };
        let text = serde_json::to_string_pretty(&echo).map_err(|e| Failure::Runtime(e.to_string()))?;
        let mut name = primary.as_os_str().to_owned();
        name.push(".config.json");
        self.write(Path::new(&name), text + "\n")?;
        Ok(())
    }
}

fn absolute(p: &Path) -> Outcome<PathBuf> {
    fs::canonicalize(p).map_err(|e| io_failure(p, e))
}

fn to_json(value: &impl Serialize) -> Outcome<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Failure::Runtime(e.to_string()))
}

/// Run a command. Input paths are made absolute first so the echoed
/// config can be replayed from any working directory.
pub fn run(ctx: &Context, command: Command) -> Outcome {
    match command {
        Command::Synth(a) => synth(ctx, a),
        Command::Toy(a) => toy(ctx, a),
        Command::Sketch(a) => sketch_cmd(ctx, a),
        Command::Select(a) => select_cmd(ctx, a),
        Command::Diversity(a) => diversity_cmd(ctx, a),
        Command::Report(a) => report(ctx, a),
        Command::Replay(a) => replay(ctx, a),
    }
}

fn synth(ctx: &Context, a: SynthArgs) -> Outcome {
    let spec = match a.kind {
        SynthKindArg::Hypersphere => {
            reject(&[("--clusters", a.clusters.is_some()), ("--scale", a.scale.is_some()), ("--dup-factor", a.dup_factor.is_some())], "hypersphere")?;
            SynthSpec::hypersphere(a.n, a.d, a.seed)
        }
        SynthKindArg::Clustered => {
            reject(&[("--dup-factor", a.dup_factor.is_some())], "clustered")?;
            let k = a.clusters.ok_or_else(|| usage("--clusters is required for clustered data"))?;
            let s = a.scale.ok_or_else(|| usage("--scale is required for clustered data"))?;
            SynthSpec::clustered(a.n, a.d, k, s, a.seed)
        }
        SynthKindArg::Duplicated => {
            reject(&[("--clusters", a.clusters.is_some()), ("--scale", a.scale.is_some())], "duplicated")?;
            let f = a.dup_factor.ok_or_else(|| usage("--dup-factor is required for duplicated data"))?;
            SynthSpec::duplicated(a.n, a.d, f, a.seed)
        }
    };
    let (m, labels) = synthesize_labeled(&spec)?;
    let out = ctx.create(&a.output)?;
    save_features(&m, &out)?;
    #[derive(Serialize)]
    struct Meta<'a> {
        n_rows: usize,
        n_cols: usize,
        normalized: bool,
        generator: &'a str,
        spec: &'a SynthSpec,
    }
    let meta = Meta {
        n_rows: m.n_rows(),
        n_cols: m.n_cols(),
        normalized: m.is_normalized(),
        generator: GENERATOR,
        spec: &spec,
    };
    let mut meta_name = a.output.as_os_str().to_owned();
    meta_name.push(".meta.json");
    ctx.write(Path::new(&meta_name), to_json(&meta)?)?;
    if let Some(p) = &a.labels {
        ctx.write(p, lines(&labels))?;
    }
    info!("wrote {} x {} features to {}", m.n_rows(), m.n_cols(), out.display());
    ctx.echo(&a.output, &Command::Synth(a.clone()))
}

fn reject(flags: &[(&str, bool)], context: &str) -> Outcome {
    match flags.iter().find(|(_, present)| *present) {
        Some((name, _)) => Err(usage(format!("{name} is not valid with {context}"))),
        None => Ok(()),
    }
}

fn lines<T: fmt::Display>(items: &[T]) -> String {
    let mut s = String::new();
    for it in items {
        s.push_str(&it.to_string());
        s.push('\n');
    }
    s
}

fn toy(ctx: &Context, a: ToyArgs) -> Outcome {
    let model = ToyModel::random(TOY_VOCAB, a.dim, derive_seed(a.seed, 1), a.weight_scale)?;
    let (examples, labels) = toymodel::make_toy_corpus(a.n, a.seed, a.redundancy)?;
    let grads = toymodel::gradients(&model, &examples)?;
    let scores = toymodel::score_table(&model, &examples)?;

    let width = a.n.saturating_sub(1).to_string().len().max(5);
    let mut manifest = String::new();
    for (i, g) in grads.iter().enumerate() {
        let rel = PathBuf::from("grads").join(format!("{i:0width$}.dgf"));
        let path = ctx.create(&a.output.join(&rel))?;
        sketch::save_gradients(g, &path)?;
        manifest.push_str(&format!("{}\n", rel.display()));
    }
    ctx.write(&a.output.join("manifest.txt"), manifest)?;
    ctx.write(&a.output.join("scores.csv"), scores.to_csv_string())?;
    ctx.write(&a.output.join("labels.txt"), lines(&labels))?;
    let mut corpus = String::new();
    for ex in &examples {
        corpus.push_str(&serde_json::to_string(ex).map_err(|e| Failure::Runtime(e.to_string()))?);
        corpus.push('\n');
    }
    ctx.write(&a.output.join("corpus.jsonl"), corpus)?;
    info!("wrote {} toy examples to {}", a.n, ctx.out(&a.output).display());
    ctx.echo(&a.output.join("toy"), &Command::Toy(a.clone()))
}

/// Gradient files named by a directory (sorted `.dgf` entries) or a manifest.
/// A directory without `.dgf` entries falls back to its `manifest.txt`.
fn gradient_files(p: &Path) -> Outcome<Vec<PathBuf>> {
    if p.is_dir() && p.join("manifest.txt").is_file() && !has_dgf(p)? {
        return gradient_files(&p.join("manifest.txt"));
    }
    if p.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(p)
            .map_err(|e| io_failure(p, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|f| f.extension().is_some_and(|x| x == "dgf"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(usage(format!("{} contains no .dgf files", p.display())));
        }
        return Ok(files);
    }
    let text = fs::read_to_string(p).map_err(|e| io_failure(p, e))?;
    let base = p.parent().unwrap_or(Path::new("."));
    let files: Vec<PathBuf> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| base.join(l))
        .collect();
    if files.is_empty() {
        return Err(usage(format!("manifest {} lists no files", p.display())));
    }
    Ok(files)
}

fn has_dgf(dir: &Path) -> Outcome<bool> {
    Ok(fs::read_dir(dir)
        .map_err(|e| io_failure(dir, e))?
        .filter_map(|e| e.ok())
        .any(|e| e.path().extension().is_some_and(|x| x == "dgf")))
}

fn sketch_cmd(ctx: &Context, mut a: SketchArgs) -> Outcome {
    a.grads = absolute(&a.grads)?;
    let files = gradient_files(&a.grads)?;
    let mut examples = Vec::with_capacity(files.len());
    for f in &files {
        examples.push(sketch::load_gradients(f).map_err(|e| Failure::from(e).with_context(f))?);
    }
    let names: Vec<String> = examples[0].iter().map(|g| g.name().to_string()).collect();
    let plan = SketchPlan::from_seed(a.r, a.d_out, a.s, a.seed, &names)?;
    let features = sketch::sketch_dataset(&examples, &plan, a.normalize).map_err(|e| {
        // name the offending file rather than its position
        let msg = e.to_string();
        let file = msg
            .strip_prefix("dimension mismatch: example ")
            .and_then(|rest| rest.split(':').next())
            .and_then(|i| i.parse::<usize>().ok())
            .and_then(|i| files.get(i));
        match file {
            Some(f) => usage(format!("{}: inconsistent gradient layout: {msg}", f.display())),
            None => Failure::from(e),
        }
    })?;
    let out = ctx.create(&a.output)?;
    save_features(&features, &out)?;
    info!("sketched {} examples to {} dims", features.n_rows(), features.n_cols());
    ctx.echo(&a.output, &Command::Sketch(a.clone()))
}

impl Failure {
    fn with_context(self, path: &Path) -> Failure {
        match self {
            Failure::Usage(m) => Failure::Usage(format!("{}: {m}", path.display())),
            Failure::Runtime(m) => Failure::Runtime(format!("{}: {m}", path.display())),
        }
    }
}

fn parse_budget(s: &str, n: usize) -> Outcome<usize> {
    let s = s.trim();
    let m = if let Some(p) = s.strip_suffix('%') {
        let pct: f64 = p.trim().parse().map_err(|_| usage(format!("invalid budget {s:?}")))?;
        if !(pct > 0.0 && pct <= 100.0) {
            return Err(usage(format!("budget percentage must lie in (0, 100], got {pct}")));
        }
        ((pct / 100.0) * n as f64).round() as usize
    } else {
        s.parse().map_err(|_| usage(format!("invalid budget {s:?}")))?
    };
    if m == 0 || m > n {
        return Err(usage(format!("budget {m} must lie in [1, {n}]")));
    }
    Ok(m)
}

fn read_labels(p: &Path) -> Outcome<Vec<usize>> {
    let text = fs::read_to_string(p).map_err(|e| io_failure(p, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| usage(format!("{} line {}: invalid label {l:?}", p.display(), i + 1)))
        })
        .collect()
}

fn select_cmd(ctx: &Context, mut a: SelectArgs) -> Outcome {
    a.features = absolute(&a.features)?;
    a.scores = a.scores.as_deref().map(absolute).transpose()?;
    a.labels = a.labels.as_deref().map(absolute).transpose()?;

    let is = |s: StrategyArg| a.strategy == s;
    let flags = [
        ("--lambda", a.lambda.is_some(), is(StrategyArg::Dpp)),
        ("--gamma", a.gamma.is_some(), is(StrategyArg::Dpp)),
        ("--quality-col", a.quality_col.is_some(), is(StrategyArg::Dpp)),
        ("--quality-transform", a.quality_transform.is_some(), is(StrategyArg::Dpp)),
        ("--trace", a.trace.is_some(), is(StrategyArg::Dpp)),
        ("--rank-col", a.rank_col.is_some(), is(StrategyArg::Rank)),
        ("--direction", a.direction.is_some(), is(StrategyArg::Rank)),
        ("--tau", a.tau.is_some(), is(StrategyArg::Dedup)),
        ("--seed", a.seed.is_some(), is(StrategyArg::Random)),
    ];
    if let Some((name, _, _)) = flags.iter().find(|(_, given, ok)| *given && !*ok) {
        return Err(usage(format!(
            "{name} is not valid with --strategy {}",
            format!("{:?}", a.strategy).to_lowercase()
        )));
    }

    let features = load_features(&a.features)?;
    let n = features.n_rows();
    let budget = parse_budget(&a.budget, n)?;
    let scores = a.scores.as_deref().map(|p| load_scores(p, n)).transpose()?;
    let labels = a.labels.as_deref().map(read_labels).transpose()?;

    let strategy = match a.strategy {
        StrategyArg::Dpp => {
            let lambda = a.lambda.unwrap_or(0.0);
            let kernel = KernelSpec::rbf(a.gamma.unwrap_or(1.0)).unit_rows(features.is_normalized());
            let quality_transform = match a.quality_transform.unwrap_or(TransformArg::Rank) {
                TransformArg::Rank => QualityTransform::RankNormalize,
                TransformArg::MinMax => QualityTransform::MinMax,
                TransformArg::Identity => QualityTransform::Identity,
            };
            if lambda > 0.0 && a.quality_col.is_none() {
                return Err(usage("--lambda > 0 needs --quality-col"));
            }
            Strategy::Dpp {
                kernel,
                lambda,
                quality_column: a.quality_col.clone(),
                quality_transform,
            }
        }
        StrategyArg::Random => Strategy::Random {
            seed: a.seed.unwrap_or(0),
        },
        StrategyArg::Rank => Strategy::Rank {
            column: a.rank_col.clone().ok_or_else(|| usage("--rank-col is required for rank"))?,
            direction: match a.direction.unwrap_or(DirectionArg::Desc) {
                DirectionArg::Asc => Direction::Asc,
                DirectionArg::Desc => Direction::Desc,
            },
        },
        StrategyArg::Dedup => Strategy::Dedup {
            tau: a.tau.ok_or_else(|| usage("--tau is required for dedup"))?,
        },
    };

    let mut req = SelectionRequest::new(&features, strategy, budget);
    if let Some(s) = &scores {
        req = req.with_scores(s);
    }
    if let Some(l) = &labels {
        req = req.with_labels(l);
    }
    let result = select::select(&req)?;
    if let Some(w) = &result.warning {
        warn!("{w}");
    }
    ctx.write(&a.out, to_json(&result)?)?;
    if let Some(p) = &a.indices {
        let mut buf = Vec::new();
        result.write_indices(&mut buf).map_err(|e| io_failure(p, e))?;
        ctx.write(p, buf)?;
    }
    if let (Some(p), Some(trace)) = (&a.trace, &result.trace) {
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).map_err(|e| io_failure(p, e))?;
        ctx.write(p, buf)?;
    }
    println!("{}", result.indices.len());
    ctx.echo(&a.out, &Command::Select(a.clone()))
}

fn diversity_cmd(ctx: &Context, mut a: DiversityArgs) -> Outcome {
    a.features = absolute(&a.features)?;
    a.ref_file = a.ref_file.as_deref().map(absolute).transpose()?;
    let data = load_features(&a.features)?;
    let kernel = KernelSpec::rbf(a.gamma).unit_rows(data.is_normalized());
    let reference = match a.reference {
        RefArg::Sphere => {
            if a.ref_file.is_some() {
                return Err(usage("--ref-file is only valid with --ref file"));
            }
            ReferenceSpec::hypersphere(
                data.n_rows(),
                a.ref_dim.unwrap_or(4096),
                a.ref_seed.unwrap_or(0),
                kernel,
            )
        }
        RefArg::File => {
            reject(&[("--ref-dim", a.ref_dim.is_some()), ("--ref-seed", a.ref_seed.is_some())], "--ref file")?;
            let p = a.ref_file.clone().ok_or_else(|| usage("--ref file needs --ref-file"))?;
            ReferenceSpec::file(p, data.n_rows(), kernel)
        }
    };
    let opts = DiversityOptions {
        label: a.label.clone(),
        ..Default::default()
    };
    let rep = diversity::log_det_distance_with(&data, &kernel, &reference, &opts)?;
    if rep.floor_dependent {
        warn!(
            "LDD depends on the variance floor: {} dataset and {} reference steps were clamped",
            rep.clamped_steps_data, rep.clamped_steps_ref
        );
    }
    if let Some(p) = &a.out_report {
        ctx.write(p, to_json(&rep)?)?;
    }
    if let Some(p) = &a.out_curve {
        let mut buf = Vec::new();
        rep.write_curve_csv(&mut buf).map_err(|e| io_failure(p, e))?;
        ctx.write(p, buf)?;
    }
    println!("{:.6}", rep.ldd);
    let primary = a
        .out_report
        .clone()
        .or_else(|| a.out_curve.clone())
        .unwrap_or_else(|| PathBuf::from("diversity"));
    ctx.echo(&primary, &Command::Diversity(a.clone()))
}

fn report(ctx: &Context, mut a: ReportArgs) -> Outcome {
    if a.inputs.is_empty() {
        return Err(usage("report needs at least one input"));
    }
    a.inputs = a.inputs.iter().map(|p| absolute(p)).collect::<Outcome<_>>()?;
    let mut reports: Vec<(String, DiversityReport)> = Vec::new();
    let first = &a.inputs[0];
    for p in &a.inputs {
        let r = DiversityReport::load_json(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
        let name = r.label.clone().unwrap_or_else(|| {
            p.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        });
        if let Some((_, r0)) = reports.first() {
            if !r.comparable_with(r0) {
                return Err(usage(format!(
                    "{} and {} use different kernel or reference specs; their LDDs are not comparable",
                    p.display(),
                    first.display()
                )));
            }
        }
        reports.push((name, r));
    }
    let mut buf = Vec::new();
    let io = |e: std::io::Error| io_failure(&a.output, e);
    writeln!(buf, "dataset,step,gain,ldd_curve").map_err(io)?;
    for (name, r) in &reports {
        for (s, (g, c)) in r.gains_data.iter().zip(&r.curve).enumerate() {
            writeln!(buf, "{},{},{g},{c}", csv_field(name), s + 1).map_err(io)?;
        }
    }
    ctx.write(&a.output, buf)?;
    info!("merged {} reports", reports.len());
    ctx.echo(&a.output, &Command::Report(a.clone()))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn replay(ctx: &Context, a: ReplayArgs) -> Outcome {
    let text = fs::read_to_string(&a.config).map_err(|e| io_failure(&a.config, e))?;
    let echo: ConfigEcho =
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", a.config.display())))?;
    if matches!(echo.command, Command::Replay(_)) {
        return Err(usage("a replay config cannot itself be replayed"));
    }
    info!("replaying {} from {}", echo.command.name(), a.config.display());
    run(ctx, echo.command)
}
