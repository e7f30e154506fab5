//! Command-line front end.
//!
//! Every command writes a manifest holding its argument vector and fully
//! resolved configuration; `tcconf replay <manifest>` reruns it from the same
//! working directory and reproduces the outputs byte for byte.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::active::{run_active, save_stage_csv, ActiveConfig, Strategy};
use crate::checkpoint::{load_model, save_model};
use crate::consistency::SurrogateKind;
use crate::data::{self, load_csv, split_semi, DatasetManifest, SampleSet};
use crate::error::{Error, Result};
use crate::metrics::{aurc, surrogate_quality_sweep, write_sweep_csv, MetricsReport};
use crate::numerics::{Activation, LrSchedule};
use crate::pipeline::{evaluated_set, gap_experiment, train_semisupervised, write_loss_csv, TrainConfig};
use crate::theory::certification_campaign;

pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "tcconf", version, about = "Confidence estimation from training consistency")]
pub struct Cli {
    /// Worker threads for independent runs (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset as CSV plus a sidecar manifest.
    Gen {
        #[command(subcommand)]
        kind: GenKind,
    },
    /// Train one model and write a run directory.
    Train(ExperimentArgs),
    /// Evaluate a checkpoint on a labeled CSV.
    Eval(EvalArgs),
    /// Compare κ and training consistency with and without the ranking loss.
    Gap(ExperimentArgs),
    /// Score consistency-derived surrogates and max-softmax at every epoch.
    Sweep(ExperimentArgs),
    /// Staged active learning.
    Active(ActiveArgs),
    /// Random campaign checking the ranking-loss bound on the AURC gap.
    Certify(CertifyArgs),
    /// Rerun the command recorded in a manifest.
    Replay { manifest: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum GenKind {
    Blobs {
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 400)]
        per_class: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 3.0)]
        sep: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "blobs.csv")]
        out: PathBuf,
    },
    Moons {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "moons.csv")]
        out: PathBuf,
    },
    Ood {
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 6.0)]
        shift: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "ood.csv")]
        out: PathBuf,
    },
}

/// Data, split and training flags shared by train, gap, sweep and active.
#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Fully labeled CSV to split into train and test.
    #[arg(long)]
    pub data: PathBuf,
    /// JSON experiment config; explicit flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub labeled_frac: Option<f64>,
    #[arg(long)]
    pub test_frac: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_labeled: Option<usize>,
    #[arg(long)]
    pub batch_unlabeled: Option<usize>,
    /// Initial learning rate (step decay at 1/2 and 5/6 of the run).
    #[arg(long)]
    pub lr: Option<f64>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long, value_parser = parse_activation)]
    pub activation: Option<Activation>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = crate::metrics::DEFAULT_ECE_BINS)]
    pub bins: usize,
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ActiveArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    #[arg(long)]
    pub stages: Option<usize>,
    #[arg(long)]
    pub query_size: Option<usize>,
    /// One or more of least_confidence, entropy, random (comma separated).
    #[arg(long, value_delimiter = ',', value_parser = parse_strategy)]
    pub strategy: Option<Vec<Strategy>>,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[arg(long, default_value_t = 500)]
    pub instances: usize,
    #[arg(long, default_value_t = 8)]
    pub max_m: usize,
    #[arg(long, default_value_t = 3)]
    pub max_classes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "certificates.jsonl")]
    pub out: PathBuf,
}

fn parse_activation(s: &str) -> std::result::Result<Activation, String> {
    match s {
        "relu" => Ok(Activation::Relu),
        "tanh" => Ok(Activation::Tanh),
        _ => Err(format!("unknown activation `{s}` (relu, tanh)")),
    }
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Resolved data/split/training settings. One seed drives the split and the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub labeled_frac: f64,
    pub test_frac: f64,
    pub train: TrainConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            labeled_frac: 0.1,
            test_frac: 0.25,
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActiveSpec {
    pub stages: usize,
    pub query_size: usize,
    pub strategies: Vec<Strategy>,
    pub experiment: ExperimentSpec,
}

impl Default for ActiveSpec {
    fn default() -> Self {
        ActiveSpec {
            stages: 5,
            query_size: 50,
            strategies: vec![Strategy::LeastConfidence, Strategy::Random],
            experiment: ExperimentSpec {
                labeled_frac: 0.05,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub command: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

struct Ctx {
    argv: Vec<String>,
}

impl Ctx {
    fn manifest(&self, path: &Path, command: &str, config: serde_json::Value, outputs: &[&Path]) -> Result<()> {
        let m = Manifest {
            schema_version: MANIFEST_SCHEMA,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            argv: self.argv.clone(),
            config,
            outputs: outputs.iter().map(|p| file_name(p)).collect(),
        };
        write_json(path, &m)
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code; usage errors give 1.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let argv = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli, argv: Vec<String>) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Error::Config("--jobs must be >= 1".into()));
        }
        builder = builder.num_threads(j);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let ctx = Ctx { argv };
    pool.install(|| dispatch(cli.command, &ctx))
}

fn dispatch(command: Command, ctx: &Ctx) -> Result<()> {
    match command {
        Command::Gen { kind } => cmd_gen(kind, ctx),
        Command::Train(a) => cmd_train(a, ctx),
        Command::Eval(a) => cmd_eval(a, ctx),
        Command::Gap(a) => cmd_gap(a, ctx),
        Command::Sweep(a) => cmd_sweep(a, ctx),
        Command::Active(a) => cmd_active(a, ctx),
        Command::Certify(a) => cmd_certify(a, ctx),
        Command::Replay { manifest } => cmd_replay(&manifest),
    }
}

fn cmd_gen(kind: GenKind, ctx: &Ctx) -> Result<()> {
    let (set, generator, seed, params, out) = match kind {
        GenKind::Blobs {
            classes,
            per_class,
            dim,
            sep,
            seed,
            out,
        } => (
            data::make_blobs(classes, per_class, dim, sep, seed)?,
            "blobs",
            seed,
            serde_json::json!({"classes": classes, "per_class": per_class, "dim": dim, "sep": sep}),
            out,
        ),
        GenKind::Moons { n, noise, seed, out } => (
            data::make_moons(n, noise, seed)?,
            "moons",
            seed,
            serde_json::json!({"n": n, "noise": noise}),
            out,
        ),
        GenKind::Ood {
            dim,
            n,
            shift,
            seed,
            out,
        } => (
            data::make_ood(dim, n, shift, seed)?,
            "ood",
            seed,
            serde_json::json!({"dim": dim, "n": n, "shift": shift}),
            out,
        ),
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    // OOD rows carry no label; write them all as unlabeled
    set.save_csv(&out)?;
    let info = DatasetManifest {
        schema_version: MANIFEST_SCHEMA,
        generator: generator.to_string(),
        seed,
        params,
        rows: set.len(),
        n_classes: set.n_classes,
    };
    ctx.manifest(&sidecar(&out), "gen", serde_json::to_value(&info)?, &[&out])?;
    println!("wrote {} ({} rows)", out.display(), set.len());
    Ok(())
}

fn resolve_experiment(a: &ExperimentArgs) -> Result<ExperimentSpec> {
    let spec = match &a.config {
        Some(p) => read_json(p)?,
        None => ExperimentSpec::default(),
    };
    apply_overrides(a, spec)
}

fn apply_overrides(a: &ExperimentArgs, mut spec: ExperimentSpec) -> Result<ExperimentSpec> {
    let t = &mut spec.train;
    if let Some(v) = a.labeled_frac {
        spec.labeled_frac = v;
    }
    if let Some(v) = a.test_frac {
        spec.test_frac = v;
    }
    if let Some(v) = a.lambda1 {
        t.weights.lambda1 = v;
    }
    if let Some(v) = a.lambda2 {
        t.weights.lambda2 = v;
    }
    if let Some(v) = a.epochs {
        t.epochs = v;
        if a.lr.is_none() {
            let lr0 = t.optimizer.lr_schedule.steps()[0].1;
            t.optimizer.lr_schedule = LrSchedule::step_decay(lr0, v);
        }
    }
    if let Some(v) = a.lr {
        t.optimizer.lr_schedule = LrSchedule::step_decay(v, t.epochs);
    }
    if let Some(v) = a.batch_labeled {
        t.labeled_batch = v;
    }
    if let Some(v) = a.batch_unlabeled {
        t.unlabeled_batch = v;
    }
    if let Some(v) = &a.hidden {
        t.hidden = v.clone();
    }
    if let Some(v) = a.activation {
        t.activation = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    t.validate()?;
    Ok(spec)
}

fn load_split(data: &Path, spec: &ExperimentSpec) -> Result<(SampleSet, SampleSet)> {
    let set = load_csv(data, None)?;
    split_semi(&set, spec.labeled_frac, spec.test_frac, spec.train.seed)
}

fn cmd_train(a: ExperimentArgs, ctx: &Ctx) -> Result<()> {
    let spec = resolve_experiment(&a)?;
    let (train, test) = load_split(&a.data, &spec)?;
    let test_opt = (!test.is_empty()).then_some(&test);
    let record = train_semisupervised(&spec.train, &train, test_opt)?;
    let dir = a.out.join(format!("run-{}", &spec.hash()[..16]));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let p = |n: &str| dir.join(n);
    write_json(&p("config.json"), &spec)?;
    save_model(&record.model, p("model.json"))?;
    write_json(
        &p("metrics.json"),
        &serde_json::json!({
            "train_unlabeled": record.train_unlabeled_report,
            "test": record.test_report,
        }),
    )?;
    let mut buf = Vec::new();
    write_loss_csv(&record.loss_history, &mut buf)?;
    write_text(&p("loss_history.csv"), std::str::from_utf8(&buf).expect("ascii"))?;
    let mut outputs = vec![p("config.json"), p("model.json"), p("metrics.json"), p("loss_history.csv")];
    if let Some(log) = &record.log {
        log.save_csv(p("consistency.csv"))?;
        outputs.push(p("consistency.csv"));
    }
    train.save_csv(p("train.csv"))?;
    outputs.push(p("train.csv"));
    if !test.is_empty() {
        test.save_csv(p("test.csv"))?;
        outputs.push(p("test.csv"));
    }
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    ctx.manifest(&p("manifest.json"), "train", serde_json::to_value(&spec)?, &refs)?;
    if let Some(r) = &record.test_report {
        println!(
            "test accuracy {:.4} aurc {:.4} e_aurc {:.4} ece {:.4}",
            r.accuracy, r.aurc, r.e_aurc, r.ece
        );
    }
    println!("{}", dir.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs, ctx: &Ctx) -> Result<()> {
    let model = load_model(&a.model)?;
    let set = load_csv(&a.data, Some(model.n_classes()))?;
    if set.dim() != model.input_dim() {
        return Err(Error::Shape(format!(
            "data has {} features, model expects {}",
            set.dim(),
            model.input_dim()
        )));
    }
    let evaluated = evaluated_set(&model, &set)?;
    let report = MetricsReport::compute(&evaluated, a.bins)?;
    let (_, curve) = aurc(&evaluated)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let metrics = a.out.join("metrics.json");
    let curve_path = a.out.join("risk_coverage.csv");
    report.save_json(&metrics)?;
    let file = std::fs::File::create(&curve_path).map_err(|e| Error::io(&curve_path, e))?;
    curve.write_csv(std::io::BufWriter::new(file))?;
    ctx.manifest(
        &a.out.join("manifest.json"),
        "eval",
        serde_json::json!({"bins": a.bins}),
        &[&metrics, &curve_path],
    )?;
    println!("{}", report.to_json()?);
    Ok(())
}

fn cmd_gap(a: ExperimentArgs, ctx: &Ctx) -> Result<()> {
    let spec = resolve_experiment(&a)?;
    let (train, _) = load_split(&a.data, &spec)?;
    let (table, _, _) = gap_experiment(&spec.train, &train)?;
    let out = a.out.join("gap.json");
    write_json(&out, &table)?;
    ctx.manifest(&a.out.join("manifest.json"), "gap", serde_json::to_value(&spec)?, &[&out])?;
    for arm in [&table.baseline, &table.with_loss] {
        println!(
            "{:<10} e_aurc kappa {:.4} consistency {:.4} diff {:.4}",
            arm.arm, arm.e_aurc_kappa, arm.e_aurc_consistency, arm.diff_e_aurc
        );
    }
    Ok(())
}

fn cmd_sweep(a: ExperimentArgs, ctx: &Ctx) -> Result<()> {
    let mut spec = resolve_experiment(&a)?;
    spec.train.keep_history = true;
    let (train, _) = load_split(&a.data, &spec)?;
    let record = train_semisupervised(&spec.train, &train, None)?;
    let labels = train.oracle_labels(&(0..train.len()).collect::<Vec<_>>())?;
    let rows = surrogate_quality_sweep(
        record.history.as_ref().expect("history kept"),
        &SurrogateKind::ALL,
        &labels,
        train.n_classes,
        &train.unlabeled_indices(),
    )?;
    let out = a.out.join("sweep.csv");
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let file = std::fs::File::create(&out).map_err(|e| Error::io(&out, e))?;
    write_sweep_csv(&rows, std::io::BufWriter::new(file))?;
    ctx.manifest(&a.out.join("manifest.json"), "sweep", serde_json::to_value(&spec)?, &[&out])?;
    for r in rows.iter().filter(|r| r.epoch == spec.train.epochs) {
        if let Some(v) = r.aurc {
            println!("{:<12} aurc {:.4}", r.surrogate.name(), v);
        }
    }
    Ok(())
}

fn cmd_active(a: ActiveArgs, ctx: &Ctx) -> Result<()> {
    let mut spec = ActiveSpec::default();
    if let Some(p) = &a.experiment.config {
        spec = read_json(p)?;
    }
    spec.experiment = apply_overrides(&a.experiment, spec.experiment)?;
    if let Some(v) = a.stages {
        spec.stages = v;
    }
    if let Some(v) = a.query_size {
        spec.query_size = v;
    }
    if let Some(v) = &a.strategy {
        spec.strategies = v.clone();
    }
    if spec.strategies.is_empty() {
        return Err(Error::Config("no strategy given".into()));
    }
    let (train, test) = load_split(&a.experiment.data, &spec.experiment)?;
    if test.is_empty() {
        return Err(Error::Config("active learning needs test_frac > 0".into()));
    }
    let results: Vec<_> = spec
        .strategies
        .par_iter()
        .map(|&strategy| {
            let cfg = ActiveConfig {
                stages: spec.stages,
                query_size: spec.query_size,
                strategy,
                train: spec.experiment.train.clone(),
                seed: spec.experiment.train.seed,
                warm_start: false,
            };
            run_active(&cfg, &train, &test)
        })
        .collect::<Result<_>>()?;
    let rows: Vec<_> = results.into_iter().flatten().collect();
    let out = a.experiment.out.join("stages.csv");
    std::fs::create_dir_all(&a.experiment.out).map_err(|e| Error::io(&a.experiment.out, e))?;
    save_stage_csv(&rows, &out)?;
    let queried = a.experiment.out.join("queries.json");
    write_json(&queried, &rows)?;
    ctx.manifest(
        &a.experiment.out.join("manifest.json"),
        "active",
        serde_json::to_value(&spec)?,
        &[&out, &queried],
    )?;
    for r in &rows {
        println!(
            "{:<16} stage {} labeled {:>4} accuracy {:.4}",
            r.strategy.name(),
            r.stage,
            r.n_labeled,
            r.report.accuracy
        );
    }
    Ok(())
}

fn cmd_certify(a: CertifyArgs, ctx: &Ctx) -> Result<()> {
    let records = certification_campaign(a.instances, a.max_m, a.max_classes, a.seed)?;
    let mut buf = Vec::new();
    for r in &records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::File::create(&a.out)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(&a.out, e))?;
    let violations = records.iter().filter(|r| !r.certificate.holds).count();
    let vacuous = records.iter().filter(|r| r.certificate.vacuous).count();
    ctx.manifest(
        &sidecar(&a.out),
        "certify",
        serde_json::json!({
            "instances": a.instances,
            "max_m": a.max_m,
            "max_classes": a.max_classes,
            "seed": a.seed,
        }),
        &[&a.out],
    )?;
    println!(
        "instances {} violations {violations} vacuous {vacuous}",
        records.len()
    );
    if violations > 0 {
        return Err(Error::Contract(format!("{violations} bound violations")));
    }
    Ok(())
}

fn cmd_replay(path: &Path) -> Result<()> {
    let m: Manifest = read_json(path)?;
    if m.schema_version != MANIFEST_SCHEMA {
        return Err(Error::Config(format!(
            "manifest schema {} not supported",
            m.schema_version
        )));
    }
    if m.argv.first().map(String::as_str) == Some("replay") {
        return Err(Error::Config("refusing to replay a replay".into()));
    }
    let mut args = vec!["tcconf".to_string()];
    args.extend(m.argv);
    let cli = Cli::try_parse_from(&args).map_err(|e| Error::Config(e.to_string()))?;
    run(cli, args[1..].to_vec())
}
