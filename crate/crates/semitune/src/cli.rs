//! Command-line front end: `synth`, `sample`, `pseudolabel`, `train`, `eval`.

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use semitune_core::data::normalize_rows;
use semitune_core::pipeline::{self, LabelledSelection};
use semitune_core::pseudo;
use semitune_core::sampler::{ClusterAlgo, FilterStrategy, SamplerConfig};
use semitune_core::scoring::Temperature;
use semitune_core::ssl::SslConfig;
use semitune_core::synth::{self, SynthSpec};
use semitune_core::trainer::{self, Head, LabelSelection, TrainConfig};
use semitune_core::{ClassEmbeddings, EmbeddingSet};

use crate::config::Settings;
use crate::error::CliError;
use crate::format;
use crate::metrics;

/// Offsets applied to `--seed` for each random consumer.
pub const SAMPLER_SEED_OFFSET: u64 = 1;
pub const TRAIN_SEED_OFFSET: u64 = 2;

/// File names used inside a data directory.
pub const POOL_FILE: &str = "pool.emb";
pub const POOL_LABELS_FILE: &str = "pool.labels";
pub const TEST_FILE: &str = "test.emb";
pub const TEST_LABELS_FILE: &str = "test.labels";
pub const CLASSES_FILE: &str = "classes.emb";
pub const CLASS_NAMES_FILE: &str = "classes.txt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const HEAD_FILE: &str = "head.emb";

#[derive(Debug, Parser)]
#[command(
    name = "semitune",
    version,
    about = "Semi-supervised tuning of a class-embedding head over frozen embeddings"
)]
pub struct Cli {
    /// `key = value` configuration file; command-line flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads. Results are identical for any value.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: Option<u16>,
    /// Base seed; sampling and training derive their seeds from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic Gaussian-mixture benchmark with miscalibrated anchors.
    Synth(SynthArgs),
    /// Choose a labelled set from the pool.
    Sample(SampleArgs),
    /// Cluster-guided pseudo-labels around a labelled set.
    Pseudolabel(PseudoArgs),
    /// Select (optionally), pseudo-label and train the head over all sessions.
    Train(TrainArgs),
    /// Test accuracy of a saved head.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Anchor miscalibration in [0, 1].
    #[arg(long, value_parser = unit_interval)]
    pub miscal: Option<f64>,
    /// Minimum angle between class means, in degrees.
    #[arg(long)]
    pub min_angle: Option<f64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory with pool.emb, pool.labels, test.emb, test.labels and classes.emb.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub pool: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub pool_labels: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub test: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub test_labels: Option<PathBuf>,
    /// Class embeddings (EMB1, one row per class).
    #[arg(long, value_name = "FILE")]
    pub class_emb: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SamplingArgs {
    /// Number of samples to label.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Number of confidence quantiles.
    #[arg(long)]
    pub q: Option<usize>,
    /// remove-both, remove-low, remove-high, keep-high, keep-low, none or random.
    #[arg(long)]
    pub strategy: Option<Strategy>,
    /// kmeans, kmeans++ or bisecting-kmeans++.
    #[arg(long)]
    pub cluster_algo: Option<ClusterAlgo>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Independent k-means runs; the lowest inertia wins.
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Softmax temperature of the zero-shot scores.
    #[arg(long)]
    pub temperature: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// Output file of `sample class` lines.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PseudoArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Labelled set (`sample class` lines).
    #[arg(long, value_name = "FILE")]
    pub labelled: Option<PathBuf>,
    /// Pseudo-labels per labelled sample.
    #[arg(long)]
    pub p: Option<usize>,
    /// Output file of `sample class` lines.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// Labelled set (`sample class` lines); sampled from the pool when absent.
    #[arg(long, value_name = "FILE")]
    pub labelled: Option<PathBuf>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub sessions: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Output directory for metrics.jsonl and head.emb.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Head to evaluate (EMB1, one row per class).
    #[arg(long, value_name = "FILE")]
    pub head: Option<PathBuf>,
    #[arg(long)]
    pub temperature: Option<f64>,
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

/// How the labelled set is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Filter(FilterStrategy),
    Random,
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "random" {
            return Ok(Strategy::Random);
        }
        s.parse().map(Strategy::Filter).map_err(|_| {
            format!("unknown strategy {s:?} (remove-both, remove-low, remove-high, keep-high, keep-low, none, random)")
        })
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Filter(s) => s.fmt(f),
            Strategy::Random => f.write_str("random"),
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let settings = match &cli.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    let threads: Option<usize> = settings.pick_opt("threads", cli.threads.map(usize::from))?;
    let ctx = Context {
        seed: settings.pick("seed", cli.seed, 0)?,
        settings,
    };
    match threads {
        Some(0) => Err(CliError::Usage("threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Data(e.to_string()))?
            .install(|| dispatch(&cli.command, &ctx)),
        None => dispatch(&cli.command, &ctx),
    }
}

struct Context {
    settings: Settings,
    seed: u64,
}

fn dispatch(command: &Command, ctx: &Context) -> Result<(), CliError> {
    match command {
        Command::Synth(a) => cmd_synth(a, ctx),
        Command::Sample(a) => cmd_sample(a, ctx),
        Command::Pseudolabel(a) => cmd_pseudolabel(a, ctx),
        Command::Train(a) => cmd_train(a, ctx),
        Command::Eval(a) => cmd_eval(a, ctx),
    }
}

fn required(ctx: &Context, key: &str, flag: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    ctx.settings
        .path(key, flag.clone())
        .ok_or_else(|| CliError::Usage(format!("--{key} is required")))
}

/// Resolved input paths. Files named by flag or config must exist; files
/// inferred from `--data` are optional for labels.
struct DataPaths {
    dir: Option<PathBuf>,
    explicit: Vec<(&'static str, Option<PathBuf>)>,
}

impl DataPaths {
    fn new(args: &DataArgs, ctx: &Context) -> Self {
        let s = &ctx.settings;
        Self {
            dir: s.path("data", args.data.clone()),
            explicit: vec![
                ("pool", s.path("pool", args.pool.clone())),
                ("pool-labels", s.path("pool-labels", args.pool_labels.clone())),
                ("test", s.path("test", args.test.clone())),
                ("test-labels", s.path("test-labels", args.test_labels.clone())),
                ("class-emb", s.path("class-emb", args.class_emb.clone())),
            ],
        }
    }

    fn default_name(key: &str) -> &'static str {
        match key {
            "pool" => POOL_FILE,
            "pool-labels" => POOL_LABELS_FILE,
            "test" => TEST_FILE,
            "test-labels" => TEST_LABELS_FILE,
            _ => CLASSES_FILE,
        }
    }

    fn explicit(&self, key: &str) -> Option<PathBuf> {
        self.explicit.iter().find(|(k, _)| *k == key).and_then(|(_, p)| p.clone())
    }

    fn required(&self, key: &str) -> Result<PathBuf, CliError> {
        self.explicit(key)
            .or_else(|| self.dir.as_ref().map(|d| d.join(Self::default_name(key))))
            .ok_or_else(|| CliError::Usage(format!("--{key} (or --data) is required")))
    }

    fn optional(&self, key: &str) -> Option<PathBuf> {
        self.explicit(key).or_else(|| {
            let p = self.dir.as_ref()?.join(Self::default_name(key));
            p.exists().then_some(p)
        })
    }

    fn embeddings(&self, key: &str, labels_key: &str, labels_required: bool) -> Result<EmbeddingSet, CliError> {
        let set = unit_rows(format::load_embeddings(&self.required(key)?)?)?;
        let labels = if labels_required {
            Some(self.required(labels_key)?)
        } else {
            self.optional(labels_key)
        };
        Ok(match labels {
            Some(path) => format::attach_labels(set, &path)?,
            None => set,
        })
    }

    fn classes(&self) -> Result<ClassEmbeddings, CliError> {
        let classes = format::load_class_embeddings(&self.required("class-emb")?)?;
        if classes.is_normalized() {
            return Ok(classes);
        }
        let rows = normalize_rows(&classes.as_embedding_set())?;
        Ok(ClassEmbeddings::new(classes.class_count(), classes.dim(), rows.data().to_vec())?)
    }
}

/// Rows within tolerance of unit norm are kept bit-exact; others are scaled.
fn unit_rows(set: EmbeddingSet) -> Result<EmbeddingSet, CliError> {
    if set.is_normalized() {
        return Ok(set);
    }
    let labels = set.labels().map(<[_]>::to_vec);
    let unit = normalize_rows(&set)?;
    Ok(match labels {
        Some(l) => unit.with_labels(l)?,
        None => unit,
    })
}

fn check_labels(set: &EmbeddingSet, classes: &ClassEmbeddings) -> Result<(), CliError> {
    Ok(set.check_labels(classes.class_count())?)
}

fn temperature(ctx: &Context, flag: Option<f64>) -> Result<Temperature, CliError> {
    let t = ctx.settings.pick("temperature", flag, Temperature::DEFAULT)?;
    Ok(Temperature::new(t)?)
}

fn cmd_synth(a: &SynthArgs, ctx: &Context) -> Result<(), CliError> {
    let s = &ctx.settings;
    let d = SynthSpec::default();
    let spec = SynthSpec {
        class_count: s.pick("classes", a.classes, d.class_count)?,
        dim: s.pick("dim", a.dim, d.dim)?,
        per_class: s.pick("per-class", a.per_class, d.per_class)?,
        sigma: s.pick("sigma", a.sigma, d.sigma)?,
        miscalibration: s.pick("miscal", a.miscal, d.miscalibration)?,
        min_angle_deg: s.pick("min-angle", a.min_angle, d.min_angle_deg)?,
        seed: ctx.seed,
    };
    spec.validate()?;
    let out = required(ctx, "out", &a.out)?;
    std::fs::create_dir_all(&out)?;
    let bench = synth::generate(&spec)?;
    format::write_embeddings(&bench.pool, &out.join(POOL_FILE))?;
    format::write_labels(&out.join(POOL_LABELS_FILE), bench.pool.labels().unwrap_or_default())?;
    format::write_embeddings(&bench.test, &out.join(TEST_FILE))?;
    format::write_labels(&out.join(TEST_LABELS_FILE), bench.test.labels().unwrap_or_default())?;
    format::write_class_embeddings(&bench.zero_shot_anchors, &out.join(CLASSES_FILE))?;
    format::write_class_names(
        &out.join(CLASS_NAMES_FILE),
        bench.zero_shot_anchors.names().unwrap_or_default(),
    )?;
    let head = Head::from_classes(&bench.zero_shot_anchors, Temperature::default());
    let acc = trainer::evaluate(&head, &bench.test)?;
    println!("zero-shot accuracy: {acc:.4}");
    Ok(())
}

fn sampler_config(a: &SamplingArgs, ctx: &Context) -> Result<(SamplerConfig, Strategy), CliError> {
    let s = &ctx.settings;
    let d = SamplerConfig::new(20);
    let strategy = s.pick("strategy", a.strategy, Strategy::Filter(d.strategy))?;
    let config = SamplerConfig {
        budget: s.pick("budget", a.budget, d.budget)?,
        quantiles: s.pick("q", a.q, d.quantiles)?,
        strategy: match strategy {
            Strategy::Filter(f) => f,
            Strategy::Random => d.strategy,
        },
        cluster_algo: s.pick("cluster-algo", a.cluster_algo, d.cluster_algo)?,
        max_iterations: s.pick("max-iter", a.max_iter, d.max_iterations)?,
        restarts: s.pick("restarts", a.restarts, d.restarts)?,
        seed: ctx.seed.wrapping_add(SAMPLER_SEED_OFFSET),
    };
    config.validate()?;
    Ok((config, strategy))
}

fn selection_mode(strategy: Strategy) -> LabelSelection {
    match strategy {
        Strategy::Random => LabelSelection::Random,
        Strategy::Filter(_) => LabelSelection::WeaklySupervised,
    }
}

fn distinct_classes(pairs: &[(usize, usize)]) -> usize {
    let mut classes: Vec<usize> = pairs.iter().map(|&(_, c)| c).collect();
    classes.sort_unstable();
    classes.dedup();
    classes.len()
}

fn cmd_sample(a: &SampleArgs, ctx: &Context) -> Result<(), CliError> {
    let paths = DataPaths::new(&a.data, ctx);
    let (sampler, strategy) = sampler_config(&a.sampling, ctx)?;
    let out = required(ctx, "out", &a.out)?;
    let classes = paths.classes()?;
    let pool = paths.embeddings("pool", "pool-labels", true)?;
    check_labels(&pool, &classes)?;
    let config = TrainConfig {
        temperature: temperature(ctx, a.sampling.temperature)?,
        sampler,
        selection: selection_mode(strategy),
        ..TrainConfig::default()
    };
    let LabelledSelection { labelled, .. } = pipeline::select_labelled(&pool, &classes, &config)?;
    format::write_pairs(&out, &labelled)?;
    println!(
        "selected {} samples ({strategy}), {} distinct classes",
        labelled.len(),
        distinct_classes(&labelled)
    );
    Ok(())
}

fn read_labelled(path: &Path, pool: &EmbeddingSet, classes: &ClassEmbeddings) -> Result<Vec<(usize, usize)>, CliError> {
    let pairs = format::read_pairs(path)?;
    for &(i, c) in &pairs {
        if i >= pool.count() || c >= classes.class_count() {
            return Err(CliError::Data(format!(
                "{}: pair ({i}, {c}) out of range for {} samples and {} classes",
                path.display(),
                pool.count(),
                classes.class_count()
            )));
        }
    }
    Ok(pairs)
}

fn has_complete_truth(set: &EmbeddingSet) -> bool {
    set.labels().is_some_and(|l| l.iter().all(Option::is_some))
}

fn cmd_pseudolabel(a: &PseudoArgs, ctx: &Context) -> Result<(), CliError> {
    let paths = DataPaths::new(&a.data, ctx);
    let p = ctx.settings.pick("p", a.p, TrainConfig::default().pseudo_per_cluster)?;
    let out = required(ctx, "out", &a.out)?;
    let labelled_path = required(ctx, "labelled", &a.labelled)?;
    let classes = paths.classes()?;
    let pool = paths.embeddings("pool", "pool-labels", false)?;
    let labelled = read_labelled(&labelled_path, &pool, &classes)?;
    let anchors: Vec<usize> = labelled.iter().map(|&(i, _)| i).collect();
    let labels: Vec<usize> = labelled.iter().map(|&(_, c)| c).collect();
    let clusters = pseudo::assign_to_anchors(&pool, &anchors)?;
    let pseudo_labels = pseudo::cluster_pseudolabels(&clusters, &labels, p)?;
    format::write_pairs(&out, &pseudo_labels)?;
    print!("{} pseudo-labels", pseudo_labels.len());
    if has_complete_truth(&pool) {
        print!(", accuracy {:.4}", pseudo::pseudolabel_accuracy(&pseudo_labels, &pool)?);
    }
    println!();
    Ok(())
}

fn train_config(a: &TrainArgs, ctx: &Context) -> Result<(TrainConfig, Strategy), CliError> {
    let s = &ctx.settings;
    let d = TrainConfig::default();
    let (sampler, strategy) = sampler_config(&a.sampling, ctx)?;
    let config = TrainConfig {
        sessions: s.pick("sessions", a.sessions, d.sessions)?,
        epochs_per_session: s.pick("epochs", a.epochs, d.epochs_per_session)?,
        learning_rate: s.pick("lr", a.lr, d.learning_rate)?,
        batch_size: s.pick("batch", a.batch, d.batch_size)?,
        seed: ctx.seed.wrapping_add(TRAIN_SEED_OFFSET),
        temperature: temperature(ctx, a.sampling.temperature)?,
        ssl: SslConfig {
            tau: s.pick("tau", a.tau, d.ssl.tau)?,
            top_k: s.pick("top-k", a.top_k, d.ssl.top_k)?,
            lambda: s.pick("lambda", a.lambda, d.ssl.lambda)?,
        },
        sampler,
        selection: selection_mode(strategy),
        pseudo_per_cluster: s.pick("p", a.p, d.pseudo_per_cluster)?,
        components: d.components,
    };
    config.validate()?;
    Ok((config, strategy))
}

fn cmd_train(a: &TrainArgs, ctx: &Context) -> Result<(), CliError> {
    let paths = DataPaths::new(&a.data, ctx);
    let (config, _) = train_config(a, ctx)?;
    let out = required(ctx, "out", &a.out)?;
    let labelled_path = ctx.settings.path("labelled", a.labelled.clone());
    let classes = paths.classes()?;
    let pool = paths.embeddings("pool", "pool-labels", labelled_path.is_none())?;
    let test = paths.embeddings("test", "test-labels", true)?;
    check_labels(&pool, &classes)?;
    check_labels(&test, &classes)?;
    let outcome = match labelled_path {
        Some(path) => {
            let labelled = read_labelled(&path, &pool, &classes)?;
            trainer::run_sessions(&pool, &test, &classes, &labelled, &config)?
        }
        None => pipeline::run_pipeline(&pool, &test, &classes, &config)?.train,
    };
    std::fs::create_dir_all(&out)?;
    metrics::write_jsonl(&out.join(METRICS_FILE), &outcome.metrics)?;
    format::write_class_embeddings(&outcome.head.to_class_embeddings()?, &out.join(HEAD_FILE))?;
    for m in &outcome.metrics {
        let pseudo = m
            .pseudo_label_accuracy
            .map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        println!(
            "session {:>2}: test {:.4}  pseudo {pseudo}  loss {:.4}",
            m.session, m.test_accuracy, m.mean_loss
        );
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs, ctx: &Context) -> Result<(), CliError> {
    let paths = DataPaths::new(&a.data, ctx);
    let head_path = required(ctx, "head", &a.head)?;
    let temp = temperature(ctx, a.temperature)?;
    let weights = format::load_class_embeddings(&head_path)?;
    let test = paths.embeddings("test", "test-labels", true)?;
    check_labels(&test, &weights)?;
    let head = Head::from_classes(&weights, temp);
    println!("accuracy: {:.4}", trainer::evaluate(&head, &test)?);
    Ok(())
}
