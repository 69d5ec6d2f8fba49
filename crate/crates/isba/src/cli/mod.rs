//! Command-line entry point: configuration resolution, the five
//! subcommands, and run-directory persistence.
//!
//! Everything on standard output is JSON; diagnostics go to standard
//! error, gated by `ISBA_LOG` (quiet | info | debug, default quiet).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    self, generate_synthetic, load_dataset, save_dataset, save_labels, Dataset, LabelSequence,
    SynthSpec,
};
use crate::engine::{self, EngineError, RefinementConfig};
use crate::metrics::{MetricReport, MetricsError};
use crate::net::checkpoint;
use crate::net::{ModelConfig, ModelKind, NetError, OptimizerKind, Precision, TrainConfig};
use crate::targets::{BoundarySpec, SoftLabelSequence, TargetError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Missing(String),
    #[error("bad config file {path}: {reason}")]
    Config { path: PathBuf, reason: String },
    #[error("invalid {key}: {reason}")]
    Invalid { key: String, reason: String },
    #[error("bad ISBA_LOG value {0:?}: expected quiet, info, or debug")]
    BadLogLevel(String),
    #[error("{0}")]
    Runtime(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Full,
    Weak,
}

/// The resolved, effective configuration of a run: every tunable of the
/// boundary expansion, refinement loop, model, and trainer, plus the data
/// paths. Serialized verbatim as `config_resolved.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: TrainMode,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub beta: f64,
    pub soft: bool,
    pub rho: f64,
    pub theta: f64,
    pub seed: u64,
    pub align_iters: usize,
    pub patience: usize,
    pub max_iters: usize,
    pub warm_start: bool,
    pub model: ModelKind,
    pub depth: usize,
    pub conv_width: usize,
    pub encoder_filters: Vec<usize>,
    pub lateral_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub precision: Precision,
}

impl Default for RunConfig {
    fn default() -> Self {
        let boundary = BoundarySpec::default();
        let refine = RefinementConfig::default();
        let mc = ModelConfig::new(ModelKind::Tcfpn, 2, 1);
        let tc = TrainConfig::default();
        Self {
            mode: TrainMode::Weak,
            data: None,
            out: None,
            split: None,
            beta: boundary.beta,
            soft: boundary.soft,
            rho: refine.rho,
            theta: refine.theta,
            seed: refine.seed,
            align_iters: refine.align_iters,
            patience: refine.patience,
            max_iters: refine.max_iters,
            warm_start: refine.warm_start,
            model: mc.kind,
            depth: mc.depth,
            conv_width: mc.conv_width,
            encoder_filters: mc.encoder_filters,
            lateral_dim: mc.lateral_dim,
            epochs: tc.epochs,
            learning_rate: tc.learning_rate,
            optimizer: tc.optimizer,
            precision: tc.precision,
        }
    }
}

impl RunConfig {
    pub fn boundary(&self) -> BoundarySpec {
        BoundarySpec {
            beta: self.beta,
            soft: self.soft,
        }
    }

    pub fn refinement(&self) -> RefinementConfig {
        RefinementConfig {
            rho: self.rho,
            theta: self.theta,
            seed: self.seed,
            align_iters: self.align_iters,
            patience: self.patience,
            max_iters: self.max_iters,
            warm_start: self.warm_start,
        }
    }

    pub fn model_config(&self, num_classes: usize, input_dim: usize) -> ModelConfig {
        ModelConfig {
            kind: self.model,
            depth: self.depth,
            conv_width: self.conv_width,
            encoder_filters: self.encoder_filters.clone(),
            lateral_dim: self.lateral_dim,
            num_classes,
            input_dim,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            seed: self.seed,
            precision: self.precision,
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        let invalid = |key: &str, reason: String| CliError::Invalid {
            key: key.to_string(),
            reason,
        };
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(invalid("beta", format!("must be > 0, got {}", self.beta)));
        }
        self.refinement().validate().map_err(|e| match e {
            EngineError::InvalidConfig { field, reason } => invalid(field, reason),
            other => CliError::Engine(other),
        })?;
        self.train_config().validate().map_err(|e| match e {
            NetError::InvalidConfig { field, reason } => invalid(field, reason),
            other => CliError::Net(other),
        })?;
        // structural model checks that don't need the data's dimensions
        self.model_config(2, 1).validate().map_err(|e| match e {
            NetError::InvalidConfig { field, reason } => invalid(field, reason),
            other => CliError::Net(other),
        })?;
        Ok(())
    }
}

/// An unresolved configuration layer: any subset of RunConfig's keys.
/// Unknown keys are rejected by name.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigPatch {
    pub mode: Option<TrainMode>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub beta: Option<f64>,
    pub soft: Option<bool>,
    pub rho: Option<f64>,
    pub theta: Option<f64>,
    pub seed: Option<u64>,
    pub align_iters: Option<usize>,
    pub patience: Option<usize>,
    pub max_iters: Option<usize>,
    pub warm_start: Option<bool>,
    pub model: Option<ModelKind>,
    pub depth: Option<usize>,
    pub conv_width: Option<usize>,
    pub encoder_filters: Option<Vec<usize>>,
    pub lateral_dim: Option<usize>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub optimizer: Option<OptimizerKind>,
    pub precision: Option<Precision>,
}

impl ConfigPatch {
    fn apply(self, cfg: &mut RunConfig) {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        take!(
            mode, beta, soft, rho, theta, seed, align_iters, patience, max_iters, warm_start,
            model, depth, conv_width, encoder_filters, lateral_dim, epochs, learning_rate,
            optimizer, precision
        );
        if self.data.is_some() {
            cfg.data = self.data;
        }
        if self.out.is_some() {
            cfg.out = self.out;
        }
        if self.split.is_some() {
            cfg.split = self.split;
        }
    }
}

/// Layer defaults, then the optional JSON file, then flag overrides
/// (rightmost wins), and validate the result.
pub fn config_resolve(
    file: Option<&Path>,
    overrides: ConfigPatch,
) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let patch: ConfigPatch =
            serde_json::from_str(&text).map_err(|e| CliError::Config {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?;
        patch.apply(&mut cfg);
    }
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Parser)]
#[command(
    name = "isba",
    about = "Weakly-supervised temporal action segmentation and alignment",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset (manifest, features, transcripts, ground truth)
    Synth(SynthArgs),
    /// Train a model: fully supervised (--mode full) or iteratively weak (--mode weak)
    Train(TrainArgs),
    /// Align videos to their transcripts with a trained model
    Align(AlignArgs),
    /// Segment videos with a trained model (per-frame argmax)
    Segment(SegmentArgs),
    /// Evaluate predicted label files against ground truth
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory for the dataset
    #[arg(long)]
    out: PathBuf,
    /// Number of videos
    #[arg(long, default_value_t = 20)]
    videos: usize,
    /// Number of action classes (background comes on top)
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// RNG seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Feature dimension
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Shortest video length in frames
    #[arg(long, default_value_t = 150)]
    min_len: usize,
    /// Longest video length in frames
    #[arg(long, default_value_t = 250)]
    max_len: usize,
    /// Fewest action segments per video
    #[arg(long, default_value_t = 2)]
    min_segs: usize,
    /// Most action segments per video
    #[arg(long, default_value_t = 4)]
    max_segs: usize,
    /// Euclidean distance between class feature means
    #[arg(long, default_value_t = 3.0)]
    separation: f64,
    /// Omit the background class (videos become pure action runs)
    #[arg(long)]
    no_background: bool,
}

/// Flags shared by train and align: a config file plus per-key overrides.
#[derive(Debug, Args, Default)]
struct ConfigArgs {
    /// JSON config file (keys = config_resolved.json keys)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Boundary half-width scale
    #[arg(long)]
    beta: Option<f64>,
    /// Use hard (one-hot) boundary targets instead of soft ramps
    #[arg(long)]
    hard: bool,
    /// Insertion margin threshold
    #[arg(long)]
    rho: Option<f64>,
    /// Probability of inserting the lower-probability label
    #[arg(long)]
    theta: Option<f64>,
    /// Master RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Test-time refinement iterations
    #[arg(long)]
    align_iters: Option<usize>,
    /// Stop after this many iterations without loss improvement
    #[arg(long)]
    patience: Option<usize>,
    /// Hard cap on refinement iterations
    #[arg(long)]
    max_iters: Option<usize>,
    /// Continue each iteration from the previous model instead of fresh
    #[arg(long)]
    warm_start: bool,
    /// Classifier architecture
    #[arg(long)]
    model: Option<String>,
    /// Pyramid depth (number of temporal resolutions)
    #[arg(long)]
    depth: Option<usize>,
    /// Temporal convolution width
    #[arg(long)]
    conv_width: Option<usize>,
    /// Per-level encoder channel counts, comma separated
    #[arg(long, value_delimiter = ',')]
    encoder_filters: Option<Vec<usize>>,
    /// Channel count of the pyramid's lateral connections
    #[arg(long)]
    lateral_dim: Option<usize>,
    /// Training epochs per model
    #[arg(long)]
    epochs: Option<usize>,
    /// Optimizer step size
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Optimizer: adam or sgd
    #[arg(long)]
    optimizer: Option<String>,
    /// Numeric precision of persisted state: f32 or f64
    #[arg(long)]
    precision: Option<String>,
}

impl ConfigArgs {
    fn patch(&self) -> Result<ConfigPatch, CliError> {
        Ok(ConfigPatch {
            beta: self.beta,
            soft: self.hard.then_some(false),
            rho: self.rho,
            theta: self.theta,
            seed: self.seed,
            align_iters: self.align_iters,
            patience: self.patience,
            max_iters: self.max_iters,
            warm_start: self.warm_start.then_some(true),
            model: self
                .model
                .as_deref()
                .map(|s| parse_enum("model", s))
                .transpose()?,
            depth: self.depth,
            conv_width: self.conv_width,
            encoder_filters: self.encoder_filters.clone(),
            lateral_dim: self.lateral_dim,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            optimizer: self
                .optimizer
                .as_deref()
                .map(|s| parse_enum("optimizer", s))
                .transpose()?,
            precision: self
                .precision
                .as_deref()
                .map(|s| parse_enum("precision", s))
                .transpose()?,
            ..ConfigPatch::default()
        })
    }
}

/// Parse a flag value through the same serde names the config file uses.
fn parse_enum<T: serde::de::DeserializeOwned>(key: &str, value: &str) -> Result<T, CliError> {
    serde_json::from_value(serde_json::Value::String(value.to_string())).map_err(|_| {
        CliError::Invalid {
            key: key.to_string(),
            reason: format!("unrecognized value {value:?}"),
        }
    })
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// full = supervised on ground truth; weak = iterative transcript refinement
    #[arg(long)]
    mode: Option<String>,
    /// Dataset manifest to train on
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run directory to write
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional manifest evaluated after training (defaults to the training data)
    #[arg(long)]
    split: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct AlignArgs {
    /// Dataset manifest (features + transcripts)
    #[arg(long)]
    data: PathBuf,
    /// Trained model checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory for per-video label files
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for per-video inference
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct SegmentArgs {
    /// Dataset manifest (features)
    #[arg(long)]
    data: PathBuf,
    /// Trained model checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory for per-video label files
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for per-video inference
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Dataset manifest providing ground truth and the vocabulary
    #[arg(long)]
    data: PathBuf,
    /// Directory of predicted label files (<id>.labels.txt)
    #[arg(long)]
    pred: PathBuf,
    /// Where to write metrics.json (defaults to the prediction directory)
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Run the CLI on the given argv (including the program name). Returns the
/// process exit code: 0 success, 1 runtime failure, 2 usage error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = init_logging() {
        eprintln!("error: {e}");
        return 1;
    }
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Align(args) => cmd_align(args),
        Command::Segment(args) => cmd_segment(args),
        Command::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn init_logging() -> Result<(), CliError> {
    let level = match std::env::var("ISBA_LOG") {
        Ok(v) => match v.as_str() {
            "quiet" => log::LevelFilter::Warn,
            "info" => log::LevelFilter::Info,
            "debug" => log::LevelFilter::Debug,
            other => return Err(CliError::BadLogLevel(other.to_string())),
        },
        Err(_) => log::LevelFilter::Warn,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .format_target(false)
        .try_init();
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn emit(value: serde_json::Value) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(&value).expect("json");
    // tolerate a closed pipe (e.g. piping into head)
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Apply `f` to 0..count on up to `jobs` threads, preserving index order.
/// Output is independent of the thread count.
fn par_map<T, F>(count: usize, jobs: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let jobs = jobs.max(1).min(count.max(1));
    if jobs <= 1 {
        return (0..count).map(f).collect();
    }
    let mut out: Vec<Option<T>> = Vec::with_capacity(count);
    out.resize_with(count, || None);
    let chunk = count.div_ceil(jobs);
    std::thread::scope(|scope| {
        for (c, slots) in out.chunks_mut(chunk).enumerate() {
            let f = &f;
            scope.spawn(move || {
                for (off, slot) in slots.iter_mut().enumerate() {
                    *slot = Some(f(c * chunk + off));
                }
            });
        }
    });
    out.into_iter().map(|s| s.expect("every slot filled")).collect()
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let spec = SynthSpec {
        num_videos: args.videos,
        classes: args.classes,
        background: !args.no_background,
        n_range: (args.min_len, args.max_len),
        dim: args.dim,
        mean_separation: args.separation,
        segs_range: (args.min_segs, args.max_segs),
    };
    let dataset = generate_synthetic(&spec, args.seed)?;
    let manifest = save_dataset(&args.out, &dataset)?;
    log::info!(
        "wrote {} videos, {} classes to {}",
        dataset.videos.len(),
        dataset.vocab.len(),
        args.out.display()
    );
    emit(serde_json::json!({
        "manifest": manifest,
        "videos": dataset.videos.len(),
        "classes": dataset.vocab.len(),
    }));
    Ok(())
}

fn one_hot_targets(dataset: &Dataset) -> Result<Vec<(data::FeatureSequence, SoftLabelSequence)>, CliError> {
    let k = dataset.vocab.len();
    dataset
        .videos
        .iter()
        .map(|v| {
            let gt = v.ground_truth.as_ref().ok_or_else(|| {
                CliError::Runtime(format!("video {:?} has no ground truth", v.id))
            })?;
            let mut probs = ndarray::Array2::zeros((gt.0.len(), k));
            for (t, &label) in gt.0.iter().enumerate() {
                probs[[t, label]] = 1.0;
            }
            let target = SoftLabelSequence::new(probs)
                .map_err(CliError::Target)?;
            Ok((v.features.clone(), target))
        })
        .collect()
}

fn evaluate_segmentation(
    model: &crate::net::TrainedModel,
    dataset: &Dataset,
    jobs: usize,
) -> Result<MetricReport, CliError> {
    let preds: Vec<Result<LabelSequence, EngineError>> = par_map(
        dataset.videos.len(),
        jobs,
        |i| engine::segment(model, &dataset.videos[i].features),
    );
    let mut decoded = Vec::with_capacity(preds.len());
    for p in preds {
        decoded.push(p?);
    }
    let mut pairs = Vec::with_capacity(decoded.len());
    for (v, p) in dataset.videos.iter().zip(&decoded) {
        let gt = v
            .ground_truth
            .as_ref()
            .ok_or_else(|| CliError::Runtime(format!("video {:?} has no ground truth", v.id)))?;
        pairs.push((p.0.as_slice(), gt.0.as_slice()));
    }
    Ok(MetricReport::compute(&pairs, dataset.vocab.background())?)
}

fn transcripts_to_json(dataset: &Dataset, transcripts: &[data::Transcript]) -> serde_json::Value {
    let items: Vec<serde_json::Value> = dataset
        .videos
        .iter()
        .zip(transcripts)
        .map(|(v, t)| {
            let names: Vec<&str> = t.labels().iter().map(|&l| dataset.vocab.name(l)).collect();
            serde_json::json!({"id": v.id, "transcript": names})
        })
        .collect();
    serde_json::Value::Array(items)
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let mut overrides = args.config.patch()?;
    overrides.mode = args
        .mode
        .as_deref()
        .map(|s| parse_enum("mode", s))
        .transpose()?;
    overrides.data = args.data;
    overrides.out = args.out;
    overrides.split = args.split;
    let cfg = config_resolve(args.config.config.as_deref(), overrides)?;
    let data_path = cfg
        .data
        .clone()
        .ok_or_else(|| CliError::Missing("no data manifest (--data or config key \"data\")".into()))?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::Missing("no output directory (--out or config key \"out\")".into()))?;
    let dataset = load_dataset(&data_path)?;
    if dataset.videos.is_empty() {
        return Err(CliError::Runtime("dataset has no videos".into()));
    }
    ensure_dir(&out)?;
    write_json(&out.join("config_resolved.json"), &cfg)?;
    let k = dataset.vocab.len();
    let d = dataset.videos[0].features.dim();
    let mc = cfg.model_config(k, d);
    mc.validate()?;
    match cfg.mode {
        TrainMode::Full => {
            let pairs = one_hot_targets(&dataset)?;
            let model = crate::net::train(&mc, &pairs, &cfg.train_config())?;
            let checkpoint_path = out.join("model.bin");
            checkpoint::save_file(&model, &checkpoint_path)?;
            let eval_set = match &cfg.split {
                Some(path) => Some(load_dataset(path)?),
                None => None,
            };
            let report = evaluate_segmentation(&model, eval_set.as_ref().unwrap_or(&dataset), 1)?;
            write_json(&out.join("metrics.json"), &report)?;
            emit(serde_json::json!({
                "mode": "full",
                "checkpoint": checkpoint_path,
                "metrics": report,
            }));
        }
        TrainMode::Weak => {
            let result = engine::weak_train(
                &dataset,
                &mc,
                &cfg.train_config(),
                &cfg.refinement(),
                cfg.boundary(),
            )?;
            let mut iterations = Vec::with_capacity(result.records.len());
            for record in &result.records {
                let transcripts_file = format!("transcripts_{}.json", record.index);
                let checkpoint_file = format!("model_{}.bin", record.index);
                write_json(
                    &out.join(&transcripts_file),
                    &transcripts_to_json(&dataset, &record.transcripts),
                )?;
                checkpoint::save_file(&record.model, out.join(&checkpoint_file))?;
                iterations.push(serde_json::json!({
                    "index": record.index,
                    "recognition_loss": record.recognition_loss,
                    "transcripts_file": transcripts_file,
                    "checkpoint_file": checkpoint_file,
                }));
            }
            write_json(&out.join("iterations.json"), &iterations)?;
            write_json(
                &out.join("best.json"),
                &serde_json::json!({"best_index": result.best_index}),
            )?;
            emit(serde_json::json!({
                "mode": "weak",
                "iterations": result.records.len(),
                "best_index": result.best_index,
                "best_loss": result.best().recognition_loss,
            }));
        }
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<crate::net::TrainedModel, CliError> {
    Ok(checkpoint::load_file(path)?)
}

fn write_predictions(
    out: &Path,
    dataset: &Dataset,
    preds: &[LabelSequence],
) -> Result<Vec<String>, CliError> {
    let mut files = Vec::with_capacity(preds.len());
    for (v, p) in dataset.videos.iter().zip(preds) {
        let name = format!("{}.labels.txt", v.id);
        save_labels(&out.join(&name), p, &dataset.vocab)?;
        files.push(name);
    }
    Ok(files)
}

fn cmd_align(args: AlignArgs) -> Result<(), CliError> {
    let mut overrides = args.config.patch()?;
    overrides.data = Some(args.data.clone());
    overrides.out = Some(args.out.clone());
    let cfg = config_resolve(args.config.config.as_deref(), overrides)?;
    let dataset = load_dataset(&args.data)?;
    let model = load_model(&args.checkpoint)?;
    ensure_dir(&args.out)?;
    write_json(&args.out.join("config_resolved.json"), &cfg)?;
    let refine = cfg.refinement();
    let results: Vec<Result<LabelSequence, EngineError>> =
        par_map(dataset.videos.len(), args.jobs, |i| {
            let v = &dataset.videos[i];
            engine::align(&model, &v.features, &v.transcript, &refine)
        });
    let mut preds = Vec::with_capacity(results.len());
    for r in results {
        preds.push(r?);
    }
    let files = write_predictions(&args.out, &dataset, &preds)?;
    emit(serde_json::json!({"videos": files.len(), "out": args.out}));
    Ok(())
}

fn cmd_segment(args: SegmentArgs) -> Result<(), CliError> {
    let dataset = load_dataset(&args.data)?;
    let model = load_model(&args.checkpoint)?;
    ensure_dir(&args.out)?;
    let results: Vec<Result<LabelSequence, EngineError>> =
        par_map(dataset.videos.len(), args.jobs, |i| {
            engine::segment(&model, &dataset.videos[i].features)
        });
    let mut preds = Vec::with_capacity(results.len());
    for r in results {
        preds.push(r?);
    }
    let files = write_predictions(&args.out, &dataset, &preds)?;
    emit(serde_json::json!({"videos": files.len(), "out": args.out}));
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let dataset = load_dataset(&args.data)?;
    let mut preds = Vec::with_capacity(dataset.videos.len());
    for v in &dataset.videos {
        let path = args.pred.join(format!("{}.labels.txt", v.id));
        preds.push(data::load_labels(&path, &dataset.vocab)?);
    }
    let mut pairs = Vec::with_capacity(preds.len());
    for (v, p) in dataset.videos.iter().zip(&preds) {
        let gt = v
            .ground_truth
            .as_ref()
            .ok_or_else(|| CliError::Runtime(format!("video {:?} has no ground truth", v.id)))?;
        if gt.0.len() != p.0.len() {
            return Err(CliError::Runtime(format!(
                "video {:?}: prediction has {} frames, ground truth {}",
                v.id,
                p.0.len(),
                gt.0.len()
            )));
        }
        pairs.push((p.0.as_slice(), gt.0.as_slice()));
    }
    let report = MetricReport::compute(&pairs, dataset.vocab.background())?;
    let out_dir = args.out.clone().unwrap_or_else(|| args.pred.clone());
    ensure_dir(&out_dir)?;
    write_json(&out_dir.join("metrics.json"), &report)?;
    emit(serde_json::to_value(&report).expect("report serializes"));
    Ok(())
}
