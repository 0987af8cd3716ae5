//! Batch attribution over datasets and report emission.
//!
//! Every sample is analyzed independently with seeds derived from the root
//! seed and the sample id, and results are reduced in dataset order, so a
//! report depends only on its config and never on the worker count.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coalition::{bsi_all, shapley_all, AttributionResult, CoalitionError, InteractionResult};
use crate::dataset::{load_dataset, Dataset, DatasetError};
use crate::evaluators::{
    evaluate_coalition_table, Clamped, EvalError, ExternalEvaluator, ExternalOptions, GameEvaluator, MeanEcho,
    RegionMeanLinear,
};
use crate::imaging::{sample_baseline, AmplitudeImage, BaselineSpec, ImagingError, Region, RegionLabelMap};
use crate::scr::ScrTargetSpec;
use crate::seed::SeedPath;
use crate::synthetic::{apply_intervention, SyntheticError};
use crate::toy_model::{argmax, MlpModel};

pub const REPORT_SCHEMA: u32 = 1;

/// The three region pairs, in report order.
pub const PAIRS: [(Region, Region); 3] =
    [(Region::Clutter, Region::Target), (Region::Target, Region::Shadow), (Region::Shadow, Region::Clutter)];

pub fn pair_name(pair: (Region, Region)) -> String {
    format!("{}&{}", pair.0.name(), pair.1.name())
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("invalid evaluator spec {spec:?}: {reason}")]
    EvaluatorSpec { spec: String, reason: String },
    #[error("could not start evaluator: {0}")]
    EvaluatorStart(EvalError),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("all {count} samples failed; first failure: {first}")]
    AllFailed { count: usize, first: String },
    #[error("sample {id}: {source}")]
    Sample { id: String, source: Box<PipelineError> },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Coalition(#[from] CoalitionError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Synthetic(#[from] SyntheticError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// Which class's logit defines the game.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassMode {
    /// The sample's label.
    #[default]
    TrueClass,
    /// The evaluator's argmax on the unmasked image.
    Predicted,
}

impl FromStr for ClassMode {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "true" | "true_class" => Ok(ClassMode::TrueClass),
            "predicted" => Ok(ClassMode::Predicted),
            _ => Err(PipelineError::Config(format!("class mode {s:?}: expected true_class or predicted"))),
        }
    }
}

/// How to obtain an evaluator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvaluatorSpec {
    /// Mean pixel value for every class.
    Echo { classes: usize },
    /// Region-mean linear model from a JSON file.
    Linear { path: PathBuf },
    /// Toy MLP checkpoint.
    Toy { checkpoint: PathBuf },
    /// Adapter process speaking the NDJSON protocol on stdio.
    External { command: Vec<String> },
    /// Adapter listening on `host:port`.
    Tcp { addr: String },
}

impl EvaluatorSpec {
    /// Builtins are cheap and stateless; externals open a fresh connection.
    pub fn build(&self, timeout: Duration) -> Result<Box<dyn GameEvaluator>, EvalError> {
        let opts = ExternalOptions { timeout, ..Default::default() };
        Ok(match self {
            EvaluatorSpec::Echo { classes } => {
                if *classes == 0 {
                    return Err(EvalError::Model("echo evaluator needs at least one class".into()));
                }
                Box::new(MeanEcho { classes: *classes })
            }
            EvaluatorSpec::Linear { path } => Box::new(RegionMeanLinear::from_json_file(path)?),
            EvaluatorSpec::Toy { checkpoint } => {
                Box::new(MlpModel::load(checkpoint).map_err(|e| EvalError::Model(format!("{}: {e}", checkpoint.display())))?)
            }
            EvaluatorSpec::External { command } => Box::new(ExternalEvaluator::spawn(command, opts)?),
            EvaluatorSpec::Tcp { addr } => Box::new(ExternalEvaluator::connect_tcp(addr.as_str(), opts)?),
        })
    }
}

impl fmt::Display for EvaluatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvaluatorSpec::Echo { classes } => write!(f, "echo:{classes}"),
            EvaluatorSpec::Linear { path } => write!(f, "linear:{}", path.display()),
            EvaluatorSpec::Toy { checkpoint } => write!(f, "toy:{}", checkpoint.display()),
            EvaluatorSpec::External { command } => write!(f, "external:{}", command.join(" ")),
            EvaluatorSpec::Tcp { addr } => write!(f, "tcp:{addr}"),
        }
    }
}

impl FromStr for EvaluatorSpec {
    type Err = PipelineError;

    /// `echo:<classes>`, `linear:<weights.json>`, `toy:<checkpoint.json>`,
    /// `external:<command and args>` or `tcp:<host:port>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |reason: &str| PipelineError::EvaluatorSpec { spec: s.into(), reason: reason.into() };
        let (kind, rest) = s.split_once(':').ok_or_else(|| bad("expected <kind>:<argument>"))?;
        let rest = rest.trim();
        if rest.is_empty() {
            return Err(bad("missing argument"));
        }
        Ok(match kind {
            "echo" => EvaluatorSpec::Echo { classes: rest.parse().map_err(|_| bad("class count must be an integer"))? },
            "linear" => EvaluatorSpec::Linear { path: rest.into() },
            "toy" => EvaluatorSpec::Toy { checkpoint: rest.into() },
            "external" => EvaluatorSpec::External { command: rest.split_whitespace().map(String::from).collect() },
            "tcp" => EvaluatorSpec::Tcp { addr: rest.into() },
            _ => return Err(bad("unknown kind; expected echo, linear, toy, external or tcp")),
        })
    }
}

/// Makes one evaluator per worker.
pub trait EvaluatorFactory: Sync {
    fn make(&self) -> Result<Box<dyn GameEvaluator>, EvalError>;
}

/// Builds from a spec, with the config's timeout for external adapters.
pub struct SpecFactory {
    pub spec: EvaluatorSpec,
    pub timeout: Duration,
}

impl EvaluatorFactory for SpecFactory {
    fn make(&self) -> Result<Box<dyn GameEvaluator>, EvalError> {
        self.spec.build(self.timeout)
    }
}

/// Hands every worker the same thread-safe evaluator.
pub struct Shared(pub Arc<dyn GameEvaluator>);

impl EvaluatorFactory for Shared {
    fn make(&self) -> Result<Box<dyn GameEvaluator>, EvalError> {
        Ok(Box::new(self.0.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset_root: Option<PathBuf>,
    pub evaluator: Option<EvaluatorSpec>,
    pub baseline: BaselineSpec,
    /// Baseline draws per sample; results are averaged over them.
    pub replicates: usize,
    pub seed: u64,
    pub class_mode: ClassMode,
    /// Clamp game inputs to `[0, 1]` before they reach the evaluator.
    pub clamp: bool,
    /// Random SCR re-weighting applied to the dataset before analysis.
    pub intervention: Option<ScrTargetSpec>,
    pub output_dir: Option<PathBuf>,
    /// Worker threads. Not part of the report: results do not depend on it.
    #[serde(skip)]
    pub parallelism: usize,
    #[serde(skip)]
    pub timeout: Duration,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset_root: None,
            evaluator: None,
            baseline: BaselineSpec::default(),
            replicates: 5,
            seed: 0,
            class_mode: ClassMode::TrueClass,
            clamp: false,
            intervention: None,
            output_dir: None,
            parallelism: 1,
            timeout: ExternalOptions::default().timeout,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(PipelineError::Config("replicates must be at least 1".into()));
        }
        self.baseline.validate()?;
        if let Some(spec) = &self.intervention {
            spec.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Seed of replicate `rep`'s baseline field for sample `id`.
    pub fn baseline_seed(&self, id: &str, rep: usize) -> u64 {
        SeedPath::root(self.seed).child("baseline").child(id).index(rep as u64).seed()
    }

    fn intervention_seed(&self) -> u64 {
        SeedPath::root(self.seed).child("intervention").seed()
    }
}

/// Attribution of one sample under one baseline draw.
pub fn analyze_sample(
    image: &AmplitudeImage,
    labels: &RegionLabelMap,
    evaluator: &(impl GameEvaluator + ?Sized),
    baseline: BaselineSpec,
    class_index: usize,
    seed: u64,
) -> Result<(AttributionResult, InteractionResult)> {
    labels.check_shape("image", image.shape())?;
    let field = sample_baseline(baseline, image.height(), image.width(), seed)?;
    let table = evaluate_coalition_table(evaluator, image, labels, &field.image, class_index)?;
    Ok((shapley_all(&table)?, bsi_all(&table)?))
}

/// Per-sample result, averaged over replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub id: String,
    pub class_index: usize,
    /// Class whose logit defined the game.
    pub scored_class: usize,
    pub predicted: usize,
    pub shapley: [f64; 3],
    /// Mean over replicates with a defined ratio; `None` if none had one.
    pub ratio: Option<[f64; 3]>,
    pub bsi: [f64; 3],
    pub shapley_std_replicates: [f64; 3],
    pub bsi_std_replicates: [f64; 3],
    pub max_efficiency_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population std across samples.
    pub std: f64,
    /// Mean over samples of the std across replicates.
    pub std_replicates: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioStat {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Samples with a defined ratio.
    pub count: usize,
}

/// Aggregate over one class or the whole dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub scope: String,
    pub count: usize,
    pub accuracy: f64,
    /// Clutter, target, shadow.
    pub shapley: [Stat; 3],
    /// Mean of per-sample ratios.
    pub ratio: [RatioStat; 3],
    /// Ratio computed from the mean Shapley values.
    pub ratio_of_means: Option<[f64; 3]>,
    /// Clutter&target, target&shadow, shadow&clutter.
    pub bsi: [Stat; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub schema: u32,
    pub evaluator: String,
    pub config: RunConfig,
    pub classes: Vec<String>,
    pub overall: GroupStats,
    /// Classes with at least one analyzed sample, in class order.
    pub per_class: Vec<GroupStats>,
    pub failed_count: usize,
    pub failures: Vec<SampleFailure>,
    pub max_efficiency_residual: f64,
    pub samples: Vec<SampleReport>,
}

impl AggregateReport {
    /// 0 when every sample was analyzed, 2 when some failed.
    pub fn exit_code(&self) -> i32 {
        if self.failed_count == 0 {
            0
        } else {
            2
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn mean(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count();
    xs.sum::<f64>() / n as f64
}

fn pop_std(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = mean(xs.clone());
    mean(xs.map(|x| (x - m) * (x - m))).sqrt()
}

fn analyze_one(
    config: &RunConfig,
    evaluator: &dyn GameEvaluator,
    id: &str,
    class_index: usize,
    image: &AmplitudeImage,
    labels: &RegionLabelMap,
) -> Result<SampleReport> {
    let full = evaluator.scores(image, labels)?;
    if full.len() != evaluator.class_count() {
        return Err(EvalError::Arity { expected: evaluator.class_count(), got: full.len() }.into());
    }
    let predicted = argmax(&full);
    let scored_class = match config.class_mode {
        ClassMode::TrueClass => class_index,
        ClassMode::Predicted => predicted,
    };
    let mut runs = Vec::with_capacity(config.replicates);
    for rep in 0..config.replicates {
        let seed = config.baseline_seed(id, rep);
        runs.push(analyze_sample(image, labels, evaluator, config.baseline, scored_class, seed)?);
    }
    let col = |f: &dyn Fn(&(AttributionResult, InteractionResult)) -> f64| -> (f64, f64) {
        let it = runs.iter().map(f);
        (mean(it.clone()), pop_std(it))
    };
    let mut shapley = [0.0; 3];
    let mut shapley_sd = [0.0; 3];
    let mut bsi = [0.0; 3];
    let mut bsi_sd = [0.0; 3];
    for r in 0..3 {
        (shapley[r], shapley_sd[r]) = col(&|run| run.0.phi[r]);
        let (a, b) = (PAIRS[r].0.index(), PAIRS[r].1.index());
        (bsi[r], bsi_sd[r]) = col(&|run| run.1.get(a, b).expect("pair exists"));
    }
    let defined: Vec<&Vec<f64>> = runs.iter().filter_map(|run| run.0.ratio.as_ref()).collect();
    let ratio = (!defined.is_empty()).then(|| std::array::from_fn(|r| mean(defined.iter().map(|v| v[r]))));
    let max_efficiency_residual = runs.iter().map(|run| run.0.efficiency_residual.abs()).fold(0.0, f64::max);
    Ok(SampleReport {
        id: id.into(),
        class_index,
        scored_class,
        predicted,
        shapley,
        ratio,
        bsi,
        shapley_std_replicates: shapley_sd,
        bsi_std_replicates: bsi_sd,
        max_efficiency_residual,
    })
}

fn group_stats(scope: String, samples: &[&SampleReport]) -> GroupStats {
    let n = samples.len();
    let stat = |v: &dyn Fn(&SampleReport) -> f64, sd: &dyn Fn(&SampleReport) -> f64| Stat {
        mean: mean(samples.iter().map(|s| v(s))),
        std: pop_std(samples.iter().map(|s| v(s))),
        std_replicates: mean(samples.iter().map(|s| sd(s))),
    };
    let shapley = std::array::from_fn(|r| stat(&|s| s.shapley[r], &|s| s.shapley_std_replicates[r]));
    let bsi = std::array::from_fn(|r| stat(&|s| s.bsi[r], &|s| s.bsi_std_replicates[r]));
    let ratio = std::array::from_fn(|r| {
        let vals = samples.iter().filter_map(|s| s.ratio.map(|v| v[r]));
        let count = vals.clone().count();
        RatioStat {
            mean: (count > 0).then(|| mean(vals.clone())),
            std: (count > 0).then(|| pop_std(vals)),
            count,
        }
    });
    let means: [f64; 3] = std::array::from_fn(|r: usize| shapley[r].mean);
    let ratio_of_means = crate::coalition::value_ratio(&means).ok().map(|v| [v[0], v[1], v[2]]);
    let correct = samples.iter().filter(|s| s.predicted == s.class_index).count();
    GroupStats { scope, count: n, accuracy: correct as f64 / n as f64, shapley, ratio, ratio_of_means, bsi }
}

fn build_report(
    config: &RunConfig,
    evaluator: String,
    classes: &[String],
    results: Vec<(String, Result<SampleReport, String>)>,
) -> Result<AggregateReport> {
    let mut samples = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok(s) => samples.push(s),
            Err(error) => failures.push(SampleFailure { id, error }),
        }
    }
    if samples.is_empty() {
        return Err(PipelineError::AllFailed {
            count: failures.len(),
            first: failures.first().map(|f| format!("{}: {}", f.id, f.error)).unwrap_or_default(),
        });
    }
    let all: Vec<&SampleReport> = samples.iter().collect();
    let overall = group_stats("overall".into(), &all);
    let per_class = classes
        .iter()
        .enumerate()
        .filter_map(|(k, name)| {
            let members: Vec<&SampleReport> = samples.iter().filter(|s| s.class_index == k).collect();
            (!members.is_empty()).then(|| group_stats(name.clone(), &members))
        })
        .collect();
    let max_efficiency_residual = samples.iter().map(|s| s.max_efficiency_residual).fold(0.0, f64::max);
    Ok(AggregateReport {
        schema: REPORT_SCHEMA,
        evaluator,
        config: config.clone(),
        classes: classes.to_vec(),
        overall,
        per_class,
        failed_count: failures.len(),
        failures,
        max_efficiency_residual,
        samples,
    })
}

/// Analyzes every sample of `data` with one evaluator per worker.
pub fn analyze_dataset_with(config: &RunConfig, data: &Dataset, factory: &dyn EvaluatorFactory) -> Result<AggregateReport> {
    config.validate()?;
    if data.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let intervened;
    let data = match config.intervention {
        Some(spec) => {
            intervened = apply_intervention(data, spec, config.intervention_seed())?.0;
            &intervened
        }
        None => data,
    };

    let workers = config.parallelism.clamp(1, data.len());
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<SampleReport, String>>>> = Mutex::new(vec![None; data.len()]);
    let name: Mutex<Option<String>> = Mutex::new(None);
    std::thread::scope(|scope| -> Result<()> {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| -> Result<()> {
                    let base = factory.make().map_err(PipelineError::EvaluatorStart)?;
                    let evaluator: Box<dyn GameEvaluator> = if config.clamp { Box::new(Clamped(base)) } else { base };
                    name.lock().unwrap().get_or_insert_with(|| evaluator.name());
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some(s) = data.samples.get(i) else { return Ok(()) };
                        let r = analyze_one(config, evaluator.as_ref(), &s.id, s.class_index, &s.image, &s.labels)
                            .map_err(|e| e.to_string());
                        slots.lock().unwrap()[i] = Some(r);
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().expect("worker panicked")?;
        }
        Ok(())
    })?;

    let results = data
        .samples
        .iter()
        .zip(slots.into_inner().unwrap())
        .map(|(s, r)| (s.id.clone(), r.expect("every sample was visited")))
        .collect();
    let name = name.into_inner().unwrap().unwrap_or_default();
    build_report(config, name, &data.classes, results)
}

/// Loads the dataset and builds the evaluator named in the config.
pub fn analyze_dataset(config: &RunConfig) -> Result<AggregateReport> {
    let root = config.dataset_root.as_ref().ok_or_else(|| PipelineError::Config("no dataset root".into()))?;
    let spec = config.evaluator.clone().ok_or_else(|| PipelineError::Config("no evaluator".into()))?;
    let data = load_dataset(root)?;
    analyze_dataset_with(config, &data, &SpecFactory { spec, timeout: config.timeout })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub checkpoint: usize,
    pub label: String,
    pub overall: Option<GroupStats>,
    pub failed_count: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    pub schema: u32,
    pub config: RunConfig,
    pub rows: Vec<TrajectoryRow>,
}

impl TrajectoryReport {
    pub fn exit_code(&self) -> i32 {
        if self.rows.iter().all(|r| r.error.is_none() && r.failed_count == 0) {
            0
        } else {
            2
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// One checkpoint of a trajectory.
pub struct Checkpoint<'a> {
    pub index: usize,
    pub label: String,
    pub factory: &'a dyn EvaluatorFactory,
}

/// Runs the same analysis, with the same seeds, against each checkpoint.
pub fn analyze_trajectory(config: &RunConfig, data: &Dataset, checkpoints: &[Checkpoint<'_>]) -> Result<TrajectoryReport> {
    config.validate()?;
    if checkpoints.is_empty() {
        return Err(PipelineError::Config("trajectory needs at least one checkpoint".into()));
    }
    if checkpoints.windows(2).any(|w| w[0].index >= w[1].index) {
        return Err(PipelineError::Config("checkpoint indices must be strictly increasing".into()));
    }
    let rows = checkpoints
        .iter()
        .map(|c| match analyze_dataset_with(config, data, c.factory) {
            Ok(r) => TrajectoryRow {
                checkpoint: c.index,
                label: c.label.clone(),
                overall: Some(r.overall),
                failed_count: r.failed_count,
                error: None,
            },
            Err(e) => TrajectoryRow {
                checkpoint: c.index,
                label: c.label.clone(),
                overall: None,
                failed_count: data.len(),
                error: Some(e.to_string()),
            },
        })
        .collect();
    Ok(TrajectoryReport { schema: REPORT_SCHEMA, config: config.clone(), rows })
}

fn write(path: PathBuf, contents: &str) -> Result<()> {
    fs::write(&path, contents).map_err(|source| PipelineError::Io { path, source })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| PipelineError::Io { path: dir.into(), source })
}

/// Fixed-point with no sign on values that round to zero.
fn fixed(x: f64, digits: usize) -> String {
    let s = format!("{x:.digits$}");
    match s.strip_prefix('-') {
        Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => rest.to_string(),
        _ => s,
    }
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(String::new, |x| fixed(x, digits))
}

pub const AGGREGATE_CSV_HEADER: &str = "scope,region_pair,mean,std,ratio_mean,ratio_std,accuracy";

/// Aggregate table: one row per region and per pair, overall first. Shapley
/// values and BSIs use 6 decimals, ratios and accuracy 4.
pub fn aggregate_csv(report: &AggregateReport) -> String {
    let mut out = String::from(AGGREGATE_CSV_HEADER);
    out.push('\n');
    for g in std::iter::once(&report.overall).chain(&report.per_class) {
        for r in Region::ALL {
            let (s, q) = (g.shapley[r.index()], g.ratio[r.index()]);
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                g.scope,
                r.name(),
                fixed(s.mean, 6),
                fixed(s.std, 6),
                opt(q.mean, 4),
                opt(q.std, 4),
                fixed(g.accuracy, 4)
            ));
        }
        for (k, &pair) in PAIRS.iter().enumerate() {
            let s = g.bsi[k];
            out.push_str(&format!(
                "{},{},{},{},,,{}\n",
                g.scope,
                pair_name(pair),
                fixed(s.mean, 6),
                fixed(s.std, 6),
                fixed(g.accuracy, 4)
            ));
        }
    }
    out
}

/// Writes `report.json` and `aggregate.csv` under `outdir`.
pub fn emit_reports(report: &AggregateReport, outdir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(outdir)?;
    let json = outdir.join("report.json");
    write(json.clone(), &(report.to_json() + "\n"))?;
    let csv = outdir.join("aggregate.csv");
    write(csv.clone(), &aggregate_csv(report))?;
    Ok(vec![json, csv])
}

pub const TRAJECTORY_CSV_HEADER: &str = "checkpoint,label,accuracy,shapley_clutter,shapley_target,shapley_shadow,\
ratio_clutter,ratio_target,ratio_shadow,bsi_clutter_target,bsi_target_shadow,bsi_shadow_clutter";

pub fn trajectory_csv(report: &TrajectoryReport) -> String {
    let mut out = String::from(TRAJECTORY_CSV_HEADER);
    out.push('\n');
    for row in &report.rows {
        out.push_str(&format!("{},{}", row.checkpoint, row.label));
        match &row.overall {
            Some(g) => {
                out.push_str(&format!(",{}", fixed(g.accuracy, 4)));
                for s in g.shapley {
                    out.push_str(&format!(",{}", fixed(s.mean, 6)));
                }
                for q in g.ratio {
                    out.push_str(&format!(",{}", opt(q.mean, 4)));
                }
                for s in g.bsi {
                    out.push_str(&format!(",{}", fixed(s.mean, 6)));
                }
            }
            None => out.push_str(&",".repeat(10)),
        }
        out.push('\n');
    }
    out
}

/// Minimal line chart of several series against checkpoint index.
pub fn line_chart_svg(title: &str, x: &[f64], series: &[(&str, Vec<Option<f64>>)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 360.0;
    const PAD: f64 = 48.0;
    const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let ys: Vec<f64> = series.iter().flat_map(|(_, v)| v.iter().flatten().copied()).collect();
    let (mut y0, mut y1) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| (lo.min(y), hi.max(y)));
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    if y1 - y0 < 1e-12 {
        (y0, y1) = (y0 - 0.5, y1 + 0.5);
    }
    let (x0, x1) = (x.first().copied().unwrap_or(0.0), x.last().copied().unwrap_or(1.0));
    let xspan = if x1 > x0 { x1 - x0 } else { 1.0 };
    let px = |v: f64| PAD + (v - x0) / xspan * (W - 2.0 * PAD);
    let py = |v: f64| H - PAD - (v - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
<text x=\"{PAD}\" y=\"24\" font-size=\"14\">{title}</text>\n\
<line x1=\"{PAD}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
<line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{b}\" stroke=\"black\"/>\n\
<text x=\"4\" y=\"{ty}\">{y1:.3}</text>\n<text x=\"4\" y=\"{b}\">{y0:.3}</text>\n\
<text x=\"{PAD}\" y=\"{lx}\">{x0}</text>\n<text x=\"{rx}\" y=\"{lx}\">{x1}</text>\n",
        b = H - PAD,
        r = W - PAD,
        ty = PAD + 4.0,
        lx = H - PAD + 16.0,
        rx = W - PAD - 16.0,
    );
    for (k, (name, values)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let points: Vec<String> = x
            .iter()
            .zip(values)
            .filter_map(|(&xv, v)| v.map(|yv| format!("{:.2},{:.2}", px(xv), py(yv))))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{name}</text>\n",
            W - PAD - 110.0,
            PAD + 16.0 * k as f64
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `trajectory.json`, plus `trajectory.csv` and optional SVG charts
/// when there is at least one row.
pub fn emit_trajectory(report: &TrajectoryReport, outdir: &Path, svg: bool) -> Result<Vec<PathBuf>> {
    create_dir(outdir)?;
    let mut written = Vec::new();
    let json = outdir.join("trajectory.json");
    write(json.clone(), &(report.to_json() + "\n"))?;
    written.push(json);
    if report.rows.is_empty() {
        return Ok(written);
    }
    let csv = outdir.join("trajectory.csv");
    write(csv.clone(), &trajectory_csv(report))?;
    written.push(csv);
    if svg {
        let x: Vec<f64> = report.rows.iter().map(|r| r.checkpoint as f64).collect();
        let pick = |f: &dyn Fn(&GroupStats) -> Option<f64>| -> Vec<Option<f64>> {
            report.rows.iter().map(|r| r.overall.as_ref().and_then(f)).collect()
        };
        let regions = |f: &dyn Fn(&GroupStats, usize) -> Option<f64>| -> Vec<(&str, Vec<Option<f64>>)> {
            Region::ALL.iter().map(|r| (r.name(), pick(&|g| f(g, r.index())))).collect()
        };
        let pairs: Vec<(String, Vec<Option<f64>>)> =
            PAIRS.iter().enumerate().map(|(k, &p)| (pair_name(p), pick(&|g| Some(g.bsi[k].mean)))).collect();
        let pairs: Vec<(&str, Vec<Option<f64>>)> = pairs.iter().map(|(n, v)| (n.as_str(), v.clone())).collect();
        let charts = [
            ("trajectory_shapley.svg", line_chart_svg("Shapley value", &x, &regions(&|g, r| Some(g.shapley[r].mean)))),
            ("trajectory_ratio.svg", line_chart_svg("Shapley value ratio", &x, &regions(&|g, r| g.ratio[r].mean))),
            ("trajectory_bsi.svg", line_chart_svg("Bivariate Shapley interaction", &x, &pairs)),
            ("trajectory_accuracy.svg", line_chart_svg("Accuracy", &x, &[("accuracy", pick(&|g| Some(g.accuracy)))])),
        ];
        for (file, body) in charts {
            let path = outdir.join(file);
            write(path.clone(), &body)?;
            written.push(path);
        }
    }
    Ok(written)
}
