//! The `forgerykit` command-line interface.
//!
//! Exit status: 0 success, 1 usage or validation error, 2 data error
//! (unreadable or malformed inputs), 3 internal error.

use std::ffi::OsString;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::calibration::{self, CalibrationError, ThresholdCalibration};
use crate::codec::{ChromaSubsampling, CodecError, InputMode, PreprocessConfig};
use crate::dataset::{self, DatasetError, Layout, Manifest, Split, SplitPlan, SynthConfig};
use crate::metrics::{self, Averaging, MetricsError};
use crate::nn::{
    self, ConvSpec, ModelConfig, NnError, TrainingConfig, DEFAULT_DROPOUT, DEFAULT_HIDDEN_UNITS, DEFAULT_STEM,
};
use crate::report::{self, Column, EvaluationReport, ReportError};
use crate::util::{atomic_write, format_real};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

/// Environment variable consulted for the seed when neither `--seed` nor
/// the config file sets one.
pub const SEED_ENV: &str = "FORGERYKIT_SEED";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }

    fn usage(msg: impl Display) -> Self {
        CliError::Usage(msg.to_string())
    }

    fn data(msg: impl Display) -> Self {
        CliError::Data(msg.to_string())
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl From<CodecError> for CliError {
    fn from(e: CodecError) -> Self {
        let msg = e.to_string();
        match e {
            CodecError::InvalidConfig(_) => CliError::Usage(msg),
            CodecError::EncodeFailure(_) => CliError::Internal(msg),
            _ => CliError::Data(msg),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        let msg = e.to_string();
        match e {
            DatasetError::InvalidRatio(_) | DatasetError::InvalidRequest(_) | DatasetError::DegenerateClass { .. } => {
                CliError::Usage(msg)
            }
            DatasetError::Codec(c) => c.into(),
            _ => CliError::Data(msg),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        let msg = e.to_string();
        match e {
            NnError::InvalidConfig(_) | NnError::ShapeMismatch { .. } => CliError::Usage(msg),
            NnError::Codec(c) => c.into(),
            _ => CliError::Data(msg),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CalibrationError> for CliError {
    fn from(e: CalibrationError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::Data(e.to_string())
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

/// Train/validation/test proportions for `prepare`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub train: Option<f64>,
    pub val: Option<f64>,
    /// Two-way split whose test part also serves as the validation set.
    pub replication: bool,
}

impl SplitSettings {
    pub fn plan(&self) -> SplitPlan {
        if self.replication {
            SplitPlan::two_way(self.train.unwrap_or(0.8))
        } else {
            SplitPlan::three_way(self.train.unwrap_or(0.7), self.val.unwrap_or(0.1))
        }
    }
}

/// Architecture knobs; input shape follows the preprocessing settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub stem: Vec<ConvSpec>,
    pub hidden_units: usize,
    pub dropout: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            stem: DEFAULT_STEM.to_vec(),
            hidden_units: DEFAULT_HIDDEN_UNITS,
            dropout: DEFAULT_DROPOUT,
        }
    }
}

/// Everything a run needs, loadable from a TOML file:
///
/// ```toml
/// seed = 7
/// averaging = "weighted"
///
/// [layout]
/// authentic_dir = "Au"
/// tampered_dir = "Tp"
///
/// [split]
/// train = 0.7
/// val = 0.1
/// replication = false
///
/// [preprocess]
/// target_width = 64
/// target_height = 64
/// jpeg_quality = 90
/// input_mode = "hybrid"
///
/// [model]
/// hidden_units = 512
/// dropout = 0.5
///
/// [training]
/// learning_rate = 1e-3
/// max_epochs = 50
/// patience = 10
/// batch_size = 32
/// ```
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub averaging: Averaging,
    pub layout: Layout,
    pub split: SplitSettings,
    pub preprocess: PreprocessConfig,
    pub model: ModelSettings,
    pub training: TrainingConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {}", path.display(), e.message())))
    }

    fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut cfg = ModelConfig::new(self.preprocess.input_mode.channels(), self.preprocess.target_width);
        cfg.stem.clone_from(&self.model.stem);
        cfg.hidden_units = self.model.hidden_units;
        cfg.dropout = self.model.dropout;
        cfg
    }

    /// Checks every section against its owning type's rules.
    pub fn validate(&self) -> CliResult {
        self.preprocess.validate()?;
        if self.preprocess.target_width != self.preprocess.target_height {
            return Err(CliError::usage(
                "the classifier needs a square input (target_width = target_height)",
            ));
        }
        self.model_config().validate()?;
        self.training.validate()?;
        self.split.plan().validate()?;
        Ok(())
    }
}

fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> CliResult<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(0),
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "forgerykit",
    version,
    about = "Compression-difference image forgery detection"
)]
pub struct Cli {
    /// Worker threads for image preprocessing (default: logical cores).
    /// Never changes any output.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic splice dataset with Au/ and Tp/ class directories.
    Synth(SynthArgs),
    /// Scan a dataset directory and write a stratified split manifest.
    Prepare(PrepareArgs),
    /// Train a classifier on a manifest's train split.
    Train(TrainArgs),
    /// Write a score CSV for one split of a manifest.
    Score(ScoreArgs),
    /// Choose the Youden-optimal threshold from a score CSV.
    Calibrate(CalibrateArgs),
    /// Build an evaluation report from scores and a threshold.
    Evaluate(EvaluateArgs),
    /// Tabulate several evaluation reports side by side.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Number of authentic images.
    #[arg(long, default_value_t = 100)]
    pub n_authentic: usize,
    /// Number of tampered images.
    #[arg(long, default_value_t = 100)]
    pub n_tampered: usize,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Generator seed (falls back to $FORGERYKIT_SEED, then 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    /// Dataset root holding the class directories.
    #[arg(long)]
    pub root: PathBuf,
    /// Run configuration file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Authentic class directory name under the root [default: Au].
    #[arg(long)]
    pub authentic_dir: Option<String>,
    /// Tampered class directory name under the root [default: Tp].
    #[arg(long)]
    pub tampered_dir: Option<String>,
    /// Training proportion [default: 0.7, or 0.8 with --replication-split].
    #[arg(long)]
    pub train_ratio: Option<f64>,
    /// Validation proportion [default: 0.1]; the remainder is the test split.
    #[arg(long, conflicts_with = "replication_split")]
    pub val_ratio: Option<f64>,
    /// Two-way train/test split; training then monitors the test split.
    #[arg(long)]
    pub replication_split: bool,
    /// Split seed (falls back to the config file, $FORGERYKIT_SEED, then 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output manifest (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
}

/// Flags that override the `[preprocess]`, `[model]` and `[training]` sections.
#[derive(Args, Debug, Default)]
pub struct RunOverrides {
    /// Run configuration file (TOML); flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Square input size in pixels [default: 224].
    #[arg(long)]
    pub size: Option<usize>,
    /// Network input representation [default: hybrid].
    #[arg(long, value_enum)]
    pub input_mode: Option<InputMode>,
    /// Recompression quality, 1 to 100 [default: 90].
    #[arg(long)]
    pub jpeg_quality: Option<u8>,
    /// Recompression chroma subsampling [default: 420].
    #[arg(long, value_enum)]
    pub subsampling: Option<ChromaSubsampling>,
    /// Adam learning rate [default: 1e-5].
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Epoch limit [default: 100].
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Epochs without validation improvement before stopping [default: 10].
    #[arg(long)]
    pub patience: Option<usize>,
    /// Mini-batch size [default: 32].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Units in the dense head layer [default: 512].
    #[arg(long)]
    pub hidden_units: Option<usize>,
    /// Dropout probability in the head [default: 0.5].
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Training seed (falls back to the config file, $FORGERYKIT_SEED, then 0).
    #[arg(long)]
    pub seed: Option<u64>,
}

impl RunOverrides {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::load_or_default(self.config.as_deref())?;
        if let Some(s) = self.size {
            cfg.preprocess.target_width = s;
            cfg.preprocess.target_height = s;
        }
        if let Some(m) = self.input_mode {
            cfg.preprocess.input_mode = m;
        }
        if let Some(q) = self.jpeg_quality {
            cfg.preprocess.jpeg_quality = q;
        }
        if let Some(s) = self.subsampling {
            cfg.preprocess.subsampling = s;
        }
        if let Some(v) = self.learning_rate {
            cfg.training.learning_rate = v;
        }
        if let Some(v) = self.max_epochs {
            cfg.training.max_epochs = v;
        }
        if let Some(v) = self.patience {
            cfg.training.patience = v;
        }
        if let Some(v) = self.batch_size {
            cfg.training.batch_size = v;
        }
        if let Some(v) = self.hidden_units {
            cfg.model.hidden_units = v;
        }
        if let Some(v) = self.dropout {
            cfg.model.dropout = v;
        }
        let seed = resolve_seed(self.seed, cfg.seed)?;
        cfg.seed = Some(seed);
        cfg.training.seed = seed;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Split manifest from `prepare`.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Dataset root the manifest ids are relative to [default: the manifest's directory].
    #[arg(long)]
    pub root: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunOverrides,
    /// Output checkpoint.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Split manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Dataset root the manifest ids are relative to [default: the manifest's directory].
    #[arg(long)]
    pub root: Option<PathBuf>,
    /// Which split to score.
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
    /// Preprocessing for checkpoints that do not record their own (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output score CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// Score CSV (id,label,score).
    #[arg(long)]
    pub scores: PathBuf,
    /// Model identifier stored with the threshold.
    #[arg(long, default_value = "model")]
    pub model_id: String,
    /// Use this threshold instead of searching for the optimum.
    #[arg(long)]
    pub fixed_threshold: Option<f64>,
    /// Output calibration JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Score CSV (id,label,score).
    #[arg(long)]
    pub scores: PathBuf,
    /// Calibration JSON from `calibrate`.
    #[arg(
        long,
        required_unless_present = "fixed_threshold",
        conflicts_with = "fixed_threshold"
    )]
    pub calibration: Option<PathBuf>,
    /// Evaluate at this threshold instead of a calibrated one.
    #[arg(long)]
    pub fixed_threshold: Option<f64>,
    /// Model identifier for --fixed-threshold reports.
    #[arg(long, default_value = "model")]
    pub model_id: String,
    /// Precision/recall/F1 averaging [default: weighted, or the config file's].
    #[arg(long, value_enum)]
    pub averaging: Option<Averaging>,
    /// Run configuration to echo into the report (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint whose recorded preprocessing is echoed into the report.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Also write the ROC curve as CSV.
    #[arg(long)]
    pub roc_csv: Option<PathBuf>,
    /// Also write the confusion matrix as CSV.
    #[arg(long)]
    pub confusion_csv: Option<PathBuf>,
    /// Output report JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Report JSON files.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Also write the table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult {
    atomic_write(path, bytes).map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))
}

fn manifest_root(manifest: &Path, root: Option<&Path>) -> PathBuf {
    match root {
        Some(r) => r.to_path_buf(),
        None => manifest
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    }
}

fn cmd_synth(a: &SynthArgs) -> CliResult {
    let seed = resolve_seed(a.seed, None)?;
    let ds = dataset::generate_synthetic_dataset(&SynthConfig::new(a.n_authentic, a.n_tampered, a.size, seed), &a.out)?;
    println!("wrote {} images to {}", ds.manifest.len(), a.out.display());
    Ok(())
}

fn cmd_prepare(a: &PrepareArgs) -> CliResult {
    let mut cfg = RunConfig::load_or_default(a.config.as_deref())?;
    if let Some(d) = &a.authentic_dir {
        cfg.layout.authentic_dir.clone_from(d);
    }
    if let Some(d) = &a.tampered_dir {
        cfg.layout.tampered_dir.clone_from(d);
    }
    if a.replication_split {
        cfg.split.replication = true;
    }
    if a.train_ratio.is_some() {
        cfg.split.train = a.train_ratio;
    }
    if a.val_ratio.is_some() {
        cfg.split.val = a.val_ratio;
    }
    let plan = cfg.split.plan();
    plan.validate()?;
    let seed = resolve_seed(a.seed, cfg.seed)?;
    let scanned = dataset::scan_dataset(&a.root, &cfg.layout)?;
    let split = dataset::stratified_split(&scanned, plan, seed)?;
    split.save(&a.out)?;
    for s in [Split::Train, Split::Val, Split::Test] {
        println!(
            "{:<5} authentic={} tampered={}",
            format!("{s:?}").to_lowercase(),
            split.count(s, dataset::Label::Authentic),
            split.count(s, dataset::Label::Tampered)
        );
    }
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> CliResult {
    let cfg = a.run.resolve()?;
    let manifest = Manifest::load(&a.manifest)?;
    let root = manifest_root(&a.manifest, a.root.as_deref());
    let model = nn::train(
        &manifest,
        &root,
        &cfg.preprocess,
        &cfg.model_config(),
        &cfg.training,
        |s| {
            println!(
                "epoch={} train_loss={} val_loss={} improved={}",
                s.epoch,
                format_real(s.train_loss),
                format_real(s.val_loss),
                s.improved
            );
        },
    )?;
    nn::save_checkpoint(&model, &a.out)?;
    println!(
        "done epochs={} best_val_loss={}",
        model.epochs_run,
        format_real(model.best_val_loss)
    );
    Ok(())
}

fn cmd_score(a: &ScoreArgs) -> CliResult {
    let model = nn::load_checkpoint(&a.model)?;
    let preprocess = match (&model.preprocess, &a.config) {
        (Some(p), _) => p.clone(),
        (None, Some(path)) => RunConfig::load(path)?.preprocess,
        (None, None) => {
            return Err(CliError::usage(
                "checkpoint does not record its preprocessing; pass --config",
            ))
        }
    };
    let manifest = Manifest::load(&a.manifest)?;
    let records: Vec<_> = manifest.in_split(a.split).cloned().collect();
    if records.is_empty() {
        return Err(CliError::data(format!("the {:?} split is empty", a.split)));
    }
    let root = manifest_root(&a.manifest, a.root.as_deref());
    let scores = nn::predict_scores(&model, &records, &root, &preprocess)?;
    write_file(&a.out, &calibration::export_scores(&scores))?;
    println!("scored {} samples", scores.len());
    Ok(())
}

fn threshold_arg(t: f64) -> CliResult<f64> {
    if (0.0..=1.0).contains(&t) {
        Ok(t)
    } else {
        Err(CliError::usage(format!("--fixed-threshold must be in [0, 1], got {t}")))
    }
}

fn cmd_calibrate(a: &CalibrateArgs) -> CliResult {
    let scores = calibration::read_scores(&a.scores)?;
    let cal = match a.fixed_threshold {
        Some(t) => calibration::fixed_threshold(&scores, &a.model_id, threshold_arg(t)?)?,
        None => calibration::youden_optimal_threshold(&scores, &a.model_id)?,
    };
    write_file(&a.out, &cal.to_json())?;
    println!(
        "threshold={} youden_j={} tpr={} fpr={}",
        format_real(cal.threshold),
        format_real(cal.youden_j),
        format_real(cal.tpr_at_opt),
        format_real(cal.fpr_at_opt)
    );
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs) -> CliResult {
    let scores = calibration::read_scores(&a.scores)?;
    let cal: ThresholdCalibration = match (&a.calibration, a.fixed_threshold) {
        (Some(path), _) => calibration::load_calibration(path)?,
        (None, Some(t)) => calibration::fixed_threshold(&scores, &a.model_id, threshold_arg(t)?)?,
        (None, None) => return Err(CliError::usage("pass --calibration or --fixed-threshold")),
    };
    let cfg = match &a.config {
        Some(path) => Some(RunConfig::load(path)?),
        None => None,
    };
    let averaging = a.averaging.or(cfg.as_ref().map(|c| c.averaging)).unwrap_or_default();
    let preprocess = match &a.model {
        Some(path) => nn::load_checkpoint(path)?.preprocess,
        None => cfg.map(|c| c.preprocess),
    };
    let rep = report::evaluate(&scores, &cal, averaging, preprocess.as_ref())?;
    if let Some(path) = &a.roc_csv {
        write_file(path, metrics::roc_curve(&scores)?.to_csv().as_bytes())?;
    }
    if let Some(path) = &a.confusion_csv {
        write_file(path, report::export_confusion(&rep.confusion).as_bytes())?;
    }
    write_file(&a.out, &rep.to_json())?;
    let m = &rep.metrics;
    println!(
        "accuracy={} precision={} recall={} f1={} mcc={} auc={} threshold={}",
        format_real(m.accuracy),
        format_real(m.precision),
        format_real(m.recall),
        format_real(m.f1),
        format_real(m.mcc),
        format_real(m.auc),
        format_real(m.threshold)
    );
    Ok(())
}

fn cmd_compare(a: &CompareArgs) -> CliResult {
    let reports = a
        .reports
        .iter()
        .map(|p| EvaluationReport::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    let table = report::compare_models(&reports);
    print!("{}", table.to_text());
    for col in [Column::Accuracy, Column::Mcc, Column::Auc] {
        let winners = table.winners(col);
        let value = table
            .rows
            .iter()
            .find(|r| r.model_id == winners[0])
            .map(|r| col.value(&r.metrics))
            .unwrap_or(f64::NAN);
        println!("best {}: {} ({value:.3})", col.name(), winners.join(", "));
    }
    if let Some((lo, hi)) = table.threshold_range() {
        println!("threshold range: [{lo:.3}, {hi:.3}]");
    }
    if let Some(path) = &a.csv {
        write_file(path, table.to_csv().as_bytes())?;
    }
    Ok(())
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .try_init();
}

/// Executes a parsed command line.
pub fn execute(cli: &Cli) -> CliResult {
    init_logging(cli.verbose);
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::usage("--jobs must be at least 1"));
        }
        // A second call in the same process is harmless; the first pool stays.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Prepare(a) => cmd_prepare(a),
        Command::Train(a) => cmd_train(a),
        Command::Score(a) => cmd_score(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Compare(a) => cmd_compare(a),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit status. Diagnostics go to stderr as one line.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match std::panic::catch_unwind(|| execute(&cli)) {
        Ok(Ok(())) => EXIT_OK,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
        Err(_) => {
            eprintln!("error: internal failure");
            EXIT_INTERNAL
        }
    }
}
