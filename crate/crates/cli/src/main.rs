use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use regionshap::dataset::load_dataset;
use regionshap::imaging::{BaselineSpec, ImageFormat};
use regionshap::pipeline::{
    analyze_dataset, analyze_trajectory, emit_reports, emit_trajectory, Checkpoint, ClassMode, EvaluatorSpec, RunConfig,
    SpecFactory,
};
use regionshap::scr::ScrTargetSpec;
use regionshap::synthetic::{apply_intervention, generate_dataset, write_synthetic, BiasConfig, Split};
use regionshap::toy_model::{accuracy, train_with_checkpoints, TrainConfig};

#[derive(Parser)]
#[command(name = "regionshap", version, about = "Region-level Shapley attribution for image classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Attribute a classifier's score to clutter, target and shadow over a dataset.
    Analyze(AnalyzeArgs),
    /// Run the same analysis against a sequence of checkpoints.
    Trajectory(TrajectoryArgs),
    /// Write a synthetic biased dataset.
    Generate(GenerateArgs),
    /// Re-weight every image's clutter to a random SCR.
    Reweight(ReweightArgs),
    /// Train the toy MLP on a dataset.
    Train(TrainArgs),
    /// Run the built-in invariant checks.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Dataset root (`<root>/<class>/<id>.{pgm,f32}` with `<id>.labels.pgm`).
    #[arg(long)]
    data: PathBuf,
    /// Baseline for absent regions: half_normal:<sigma>, constant:<value> or zero.
    #[arg(long, default_value = "half_normal:0.1")]
    baseline: BaselineSpec,
    /// Baseline draws per sample.
    #[arg(long, default_value_t = 5)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for reports.
    #[arg(long)]
    out: PathBuf,
    /// Which logit defines the game: true_class or predicted.
    #[arg(long, default_value = "true_class")]
    class_mode: ClassMode,
    /// Clamp game inputs to [0, 1].
    #[arg(long)]
    clamp: bool,
    /// Re-weight clutter before analysis: fixed:<dB> or uniform:<lo>,<hi>.
    #[arg(long)]
    intervention: Option<ScrTargetSpec>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Seconds to wait for an external evaluator reply.
    #[arg(long, default_value_t = 30.0)]
    timeout: f64,
}

impl RunArgs {
    fn config(&self, evaluator: Option<EvaluatorSpec>) -> Result<RunConfig> {
        if !(self.timeout > 0.0 && self.timeout.is_finite()) {
            bail!("--timeout must be positive");
        }
        Ok(RunConfig {
            dataset_root: Some(self.data.clone()),
            evaluator,
            baseline: self.baseline,
            replicates: self.replicates,
            seed: self.seed,
            class_mode: self.class_mode,
            clamp: self.clamp,
            intervention: self.intervention,
            output_dir: Some(self.out.clone()),
            parallelism: self.jobs,
            timeout: Duration::from_secs_f64(self.timeout),
        })
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    /// echo:<classes>, linear:<weights.json>, toy:<checkpoint.json>,
    /// external:<command>, or tcp:<host:port>.
    #[arg(long)]
    evaluator: EvaluatorSpec,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct TrajectoryArgs {
    /// Evaluator per checkpoint, in training order. Repeatable.
    #[arg(long = "evaluator")]
    evaluators: Vec<EvaluatorSpec>,
    /// Directory of toy checkpoints named `epoch-<n>.json`, used in epoch order.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Also draw SVG line charts.
    #[arg(long)]
    svg: bool,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    Both,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "both")]
    split: SplitArg,
    /// Full generator config as JSON; the flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train_per_class: Option<usize>,
    #[arg(long)]
    test_per_class: Option<usize>,
    /// Give every class the same SCR range, e.g. 11,14.
    #[arg(long, value_name = "LO,HI")]
    debiased: Option<String>,
    /// Make clutter texture class-dependent.
    #[arg(long)]
    texture_bias: bool,
    /// rawf32 keeps exact amplitudes; pgm8 quantizes to 1/255.
    #[arg(long, default_value = "rawf32")]
    format: ImageFormat,
}

#[derive(Args)]
struct ReweightArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// SCR' distribution: fixed:<dB> or uniform:<lo>,<hi>.
    #[arg(long, default_value = "uniform:11,14")]
    target: ScrTargetSpec,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "rawf32")]
    format: ImageFormat,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Where to write the final checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Also save `epoch-<n>.json` here after every epoch.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Held-out dataset to report accuracy on.
    #[arg(long)]
    test_data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 60)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 0.05)]
    init_scale: f64,
    /// Feed full-resolution pixels instead of 2x2 means.
    #[arg(long)]
    no_pool: bool,
}

#[derive(Args)]
struct SelftestArgs {
    /// Smaller sample sizes.
    #[arg(long)]
    quick: bool,
}

fn analyze(args: AnalyzeArgs) -> Result<i32> {
    let config = args.run.config(Some(args.evaluator))?;
    let report = analyze_dataset(&config)?;
    emit_reports(&report, &args.run.out)?;
    for f in &report.failures {
        eprintln!("failed: {}: {}", f.id, f.error);
    }
    eprintln!(
        "{} samples analyzed, {} failed, accuracy {:.4}; reports in {}",
        report.overall.count,
        report.failed_count,
        report.overall.accuracy,
        args.run.out.display()
    );
    Ok(report.exit_code())
}

/// `epoch-<n>.json` files sorted by `n`.
fn toy_checkpoints(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(n) = name.strip_prefix("epoch-").and_then(|s| s.strip_suffix(".json")).and_then(|s| s.parse().ok()) {
            found.push((n, path));
        }
    }
    found.sort();
    if found.is_empty() {
        bail!("no epoch-<n>.json checkpoints in {}", dir.display());
    }
    Ok(found)
}

fn trajectory(args: TrajectoryArgs) -> Result<i32> {
    let config = args.run.config(None)?;
    let mut specs: Vec<(usize, String, EvaluatorSpec)> =
        args.evaluators.iter().enumerate().map(|(k, s)| (k, s.to_string(), s.clone())).collect();
    if let Some(dir) = &args.checkpoint_dir {
        if !specs.is_empty() {
            bail!("use either --evaluator or --checkpoint-dir, not both");
        }
        specs = toy_checkpoints(dir)?
            .into_iter()
            .map(|(n, p)| (n, format!("epoch-{n}"), EvaluatorSpec::Toy { checkpoint: p }))
            .collect();
    }
    if specs.is_empty() {
        bail!("no checkpoints given");
    }
    let data = load_dataset(&args.run.data)?;
    let factories: Vec<SpecFactory> =
        specs.iter().map(|(_, _, spec)| SpecFactory { spec: spec.clone(), timeout: config.timeout }).collect();
    let checkpoints: Vec<Checkpoint> = specs
        .iter()
        .zip(&factories)
        .map(|((index, label, _), factory)| Checkpoint { index: *index, label: label.clone(), factory })
        .collect();
    let report = analyze_trajectory(&config, &data, &checkpoints)?;
    emit_trajectory(&report, &args.run.out, args.svg)?;
    for row in &report.rows {
        if let Some(e) = &row.error {
            eprintln!("checkpoint {}: {e}", row.label);
        }
    }
    eprintln!("{} checkpoints; reports in {}", report.rows.len(), args.run.out.display());
    Ok(report.exit_code())
}

fn parse_range(s: &str) -> Result<(f64, f64)> {
    let (lo, hi) = s.split_once(',').context("expected LO,HI")?;
    Ok((lo.trim().parse()?, hi.trim().parse()?))
}

fn generate(args: GenerateArgs) -> Result<i32> {
    let mut config = match &args.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)
            .with_context(|| format!("parsing {}", path.display()))?,
        None => BiasConfig::default(),
    };
    config.seed = args.seed;
    if let Some(n) = args.train_per_class {
        config.train_per_class = n;
    }
    if let Some(n) = args.test_per_class {
        config.test_per_class = n;
    }
    if let Some(range) = &args.debiased {
        let (lo, hi) = parse_range(range)?;
        config = config.debiased(lo, hi);
    }
    if args.texture_bias {
        config = config.with_texture_bias();
    }
    let splits: &[Split] = match args.split {
        SplitArg::Train => &[Split::Train],
        SplitArg::Test => &[Split::Test],
        SplitArg::Both => &[Split::Train, Split::Test],
    };
    for &split in splits {
        let samples = generate_dataset(&config, split)?;
        let dir = args.out.join(split.name());
        write_synthetic(&dir, &config, &samples, args.format)?;
        eprintln!("wrote {} {} samples to {}", samples.len(), split.name(), dir.display());
    }
    Ok(0)
}

fn reweight(args: ReweightArgs) -> Result<i32> {
    let data = load_dataset(&args.data)?;
    let (out, records) = apply_intervention(&data, args.target, args.seed)?;
    regionshap::dataset::write_dataset(&args.out, &out, args.format, |_| (None, None), None)?;
    let mut csv = String::from("id,scr_db,scr_prime_db,alpha\n");
    for r in &records {
        csv.push_str(&format!("{},{:.6},{:.6},{:.6}\n", r.id, r.scr_db, r.scr_prime_db, r.alpha));
    }
    let path = args.out.join("reweight.csv");
    fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("re-weighted {} images into {}", records.len(), args.out.display());
    Ok(0)
}

fn train_cmd(args: TrainArgs) -> Result<i32> {
    let data = load_dataset(&args.data)?;
    let config = TrainConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
        init_scale: args.init_scale,
        hidden_dim: args.hidden,
        pool: !args.no_pool,
    };
    if let Some(dir) = &args.checkpoint_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut save_error = None;
    let outcome = train_with_checkpoints(&data, &config, |epoch, model| {
        if let Some(dir) = &args.checkpoint_dir {
            if let Err(e) = model.save(&dir.join(format!("epoch-{epoch}.json"))) {
                save_error.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = save_error {
        return Err(e.into());
    }
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    outcome.model.save(&args.out)?;
    println!("epoch,loss,accuracy");
    for s in &outcome.trace {
        println!("{},{:.6},{:.4}", s.epoch, s.loss, s.accuracy);
    }
    if let Some(test) = &args.test_data {
        let acc = accuracy(&outcome.model, &load_dataset(test)?)?;
        eprintln!("test accuracy {acc:.4}");
    }
    eprintln!("saved {}", args.out.display());
    Ok(0)
}

fn selftest(args: SelftestArgs) -> Result<i32> {
    let checks = regionshap::selftest::run(args.quick);
    for c in &checks {
        println!("{} {:<28} {} ({:.2}s)", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail, c.seconds);
    }
    Ok(if checks.iter().all(|c| c.passed) { 0 } else { 1 })
}

fn main() -> ExitCode {
    // exit code 2 means partial failure here, so usage errors exit 1
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Trajectory(a) => trajectory(a),
        Command::Generate(a) => generate(a),
        Command::Reweight(a) => reweight(a),
        Command::Train(a) => train_cmd(a),
        Command::Selftest(a) => selftest(a),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
