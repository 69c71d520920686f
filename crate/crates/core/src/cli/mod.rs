//! The `dmh` command line: dataset synthesis, training, evaluation, retrieval
//! and the gradient self-check.

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::checkpoint::Checkpoint;
use crate::data::{generate_synthetic, load_manifest, Dataset, FieldMask, Split, SplitSizes, SynthSpec};
use crate::disentangle::{DisentangleConfig, Selection};
use crate::fusion::ScaleMode;
use crate::gradsuite::run_suite;
use crate::metrics::MetricsReport;
use crate::model::{prepare_all, vocab_from_samples, Model, ModelConfig, PreparedSample};
use crate::trainer::{evaluate, DatasetTag, EpochLog, TrainConfig, Trainer};

pub const EXIT_OK: u8 = 0;
pub const EXIT_VERIFY: u8 = 1;
pub const EXIT_IO: u8 = 2;
pub const EXIT_USAGE: u8 = 64;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Verify(String),
    #[error(transparent)]
    Lib(#[from] crate::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use crate::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Verify(_) => EXIT_VERIFY,
            CliError::Lib(e) => match e {
                E::Path { .. }
                | E::Io(_)
                | E::Json(_)
                | E::Format { .. }
                | E::Manifest { .. }
                | E::MissingField { .. }
                | E::DuplicateId(_) => EXIT_IO,
                _ => EXIT_VERIFY,
            },
        }
    }

    /// The text written to stderr; clap renders its own usage errors.
    pub fn message(&self) -> String {
        match self {
            CliError::Usage(m) => m.trim_end().to_string(),
            other => format!("error: {other}"),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Lib(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Contract violations found while assembling a configuration are usage errors.
fn config_check(r: crate::Result<()>) -> CliResult<()> {
    r.map_err(|e| match e {
        crate::Error::Contract(m) => CliError::Usage(m),
        other => other.into(),
    })
}

#[derive(Debug, Parser)]
#[command(name = "dmh", version, about = "Disentangled multimodal hateful-meme classifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset with planted target categories.
    Synth(SynthArgs),
    /// Train a model; checkpoints, logs and reports go under --out.
    Train(Box<TrainArgs>),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Rank memes by similarity of their visual latent to a text query.
    Retrieve(RetrieveArgs),
    /// Check every gradient against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Table,
    Json,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of planted categories.
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    /// Train samples per label class.
    #[arg(long, default_value_t = 32)]
    pub per_class: usize,
    /// Validation samples per label class (default: half of --per-class).
    #[arg(long)]
    pub val_per_class: Option<usize>,
    /// Test samples per label class (default: half of --per-class).
    #[arg(long)]
    pub test_per_class: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub cue_tokens: usize,
    #[arg(long, default_value_t = 2)]
    pub noise_tokens: usize,
    #[arg(long, default_value_t = 8)]
    pub visual_dim: usize,
    #[arg(long, default_value_t = 4)]
    pub regions: usize,
    /// Standard deviation of the region-feature noise.
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

impl SynthArgs {
    pub fn spec(&self) -> SynthSpec {
        let half = (self.per_class / 2).max(1);
        SynthSpec {
            categories: self.k,
            per_class: SplitSizes {
                train: self.per_class,
                validation: self.val_per_class.unwrap_or(half),
                test: self.test_per_class.unwrap_or(half),
            },
            cue_tokens: self.cue_tokens,
            noise_tokens: self.noise_tokens,
            visual_dim: self.visual_dim,
            regions: self.regions,
            sigma: self.sigma,
            seed: self.seed,
        }
    }
}

/// Architecture overrides; unset fields keep the defaults of [`ModelConfig::new`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    /// Text encoder hidden size (also the fusion width).
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub text_heads: Option<usize>,
    #[arg(long)]
    pub fusion_heads: Option<usize>,
    /// Number of disentangled latent units (default 4 for synthetic data, 6 otherwise).
    #[arg(long)]
    pub latent: Option<usize>,
    /// Gumbel-Softmax temperature.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Decision threshold on the hateful score.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<ScaleArg>,
    #[arg(skip)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection: Option<Selection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleArg {
    HeadDim,
    HeadCount,
}

impl From<ScaleArg> for ScaleMode {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::HeadDim => ScaleMode::HeadDim,
            ScaleArg::HeadCount => ScaleMode::HeadCount,
        }
    }
}

impl ModelOverrides {
    /// Fields set in `other` win.
    fn merge(self, other: ModelOverrides) -> Self {
        Self {
            hidden: other.hidden.or(self.hidden),
            layers: other.layers.or(self.layers),
            text_heads: other.text_heads.or(self.text_heads),
            fusion_heads: other.fusion_heads.or(self.fusion_heads),
            latent: other.latent.or(self.latent),
            temperature: other.temperature.or(self.temperature),
            threshold: other.threshold.or(self.threshold),
            scale: other.scale.or(self.scale),
            selection: other.selection.or(self.selection),
        }
    }

    pub fn apply(&self, mut cfg: ModelConfig) -> ModelConfig {
        if let Some(h) = self.hidden {
            cfg.text.hidden = h;
            cfg.fusion.text_dim = h;
        }
        if let Some(l) = self.layers {
            cfg.text.layers = l;
        }
        if let Some(h) = self.text_heads {
            cfg.text.heads = h;
        }
        if let Some(h) = self.fusion_heads {
            cfg.fusion.heads = h;
        }
        if let Some(k) = self.latent {
            cfg.disentangle.latent = k;
        }
        if let Some(t) = self.temperature {
            cfg.disentangle.temperature = t;
        }
        if let Some(t) = self.threshold {
            cfg.threshold = t;
        }
        if let Some(s) = self.scale {
            cfg.fusion.scale = s.into();
        }
        if let Some(s) = self.selection {
            cfg.disentangle.selection = s;
        }
        cfg
    }
}

/// Contents of a `--config` file. Relative paths resolve against the file's
/// directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: ModelOverrides,
    pub train: TrainConfig,
    pub mask: FieldMask,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| crate::Error::Path {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.manifest, &mut cfg.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Matching-loss weight; 0 trains without the disentangling objective.
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long, value_enum)]
    pub dataset: Option<DatasetArg>,
    /// Drop the entity field from every sample.
    #[arg(long)]
    pub mask_entities: bool,
    /// Drop the demographic field from every sample.
    #[arg(long)]
    pub mask_demographics: bool,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Write a checkpoint every N epochs (the last epoch is always written).
    #[arg(long, default_value_t = 1)]
    pub checkpoint_every: usize,
    #[command(flatten)]
    pub model: ModelOverrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetArg {
    FhmLike,
    MultioffLike,
    Synthetic,
}

impl From<DatasetArg> for DatasetTag {
    fn from(d: DatasetArg) -> Self {
        match d {
            DatasetArg::FhmLike => DatasetTag::FhmLike,
            DatasetArg::MultioffLike => DatasetTag::MultioffLike,
            DatasetArg::Synthetic => DatasetTag::Synthetic,
        }
    }
}

impl TrainArgs {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if self.manifest.is_some() {
            cfg.manifest.clone_from(&self.manifest);
        }
        if self.out.is_some() {
            cfg.out.clone_from(&self.out);
        }
        let t = &mut cfg.train;
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.lr {
            t.lr = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if self.mu.is_some() {
            t.mu = self.mu;
        }
        if let Some(v) = self.seed {
            t.seed = v;
        }
        if let Some(v) = self.weight_decay {
            t.weight_decay = v;
        }
        if let Some(d) = self.dataset {
            t.dataset = d.into();
        }
        if self.mask_entities {
            cfg.mask.use_entities = false;
        }
        if self.mask_demographics {
            cfg.mask.use_demographics = false;
        }
        cfg.model = cfg.model.merge(self.model);
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    /// Drop the entity field (match the mask used in training).
    #[arg(long)]
    pub mask_entities: bool,
    /// Drop the demographic field (match the mask used in training).
    #[arg(long)]
    pub mask_demographics: bool,
}

impl MaskArgs {
    fn mask(&self) -> FieldMask {
        FieldMask {
            use_entities: !self.mask_entities,
            use_demographics: !self.mask_demographics,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// One of train, validation, test.
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Decision threshold; defaults to the one stored in the checkpoint.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Also write the report to <out>/reports/eval-<split>.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub mask: MaskArgs,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Free-text query.
    #[arg(long)]
    pub query: String,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Search one split only; all samples by default.
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    #[command(flatten)]
    pub mask: MaskArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Seed for the probe inputs; drawn from the clock when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Test hook: negate every analytic gradient so the check must fail.
    #[arg(long)]
    pub inject_sign_flip: bool,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

/// Parses `args` and runs the command, writing results to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    use clap::error::ErrorKind;
    match Cli::try_parse_from(args) {
        Ok(cli) => dispatch(cli.command, out),
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            write!(out, "{e}")?;
            Ok(())
        }
        Err(e) => Err(CliError::Usage(e.render().to_string())),
    }
}

pub fn dispatch(command: Command, out: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Retrieve(a) => cmd_retrieve(&a, out),
        Command::Gradcheck(a) => cmd_gradcheck(&a, out),
    }
}

pub fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> CliResult<()> {
    let spec = args.spec();
    config_check(spec.validate())?;
    let written = generate_synthetic(&spec, &args.out)?;
    writeln!(out, "manifest {}", written.manifest.display())?;
    writeln!(out, "truth    {}", written.truth.display())?;
    writeln!(out, "spec     {}", written.spec.display())?;
    writeln!(out, "features {}", args.out.join("features").display())?;
    writeln!(out, "samples  {}", written.records.len())?;
    Ok(())
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(crate::Error::Path {
            path: path.to_path_buf(),
            source: io::Error::new(io::ErrorKind::NotFound, format!("{what} not found")),
        }
        .into())
    }
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| crate::Error::Path {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| crate::Error::Path {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn split_samples(model: &Model<f64>, data: &Dataset, split: Split) -> Vec<PreparedSample<f64>> {
    prepare_all(&data.split(split), &model.vocab)
}

/// Subdirectories of a training run's `--out`.
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const LOG_DIR: &str = "logs";
pub const REPORT_DIR: &str = "reports";

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch-{epoch:04}.ckpt")
}

#[derive(Debug, Serialize)]
struct TrainReport<'a> {
    epochs_done: usize,
    mu: f64,
    last_epoch: Option<&'a EpochLog>,
    validation: Option<MetricsReport>,
    final_checkpoint: String,
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = args.resolve()?;
    let manifest = cfg
        .manifest
        .clone()
        .ok_or_else(|| usage("no manifest given (use --manifest or set it in --config)"))?;
    let out_dir = cfg
        .out
        .clone()
        .ok_or_else(|| usage("no output directory given (use --out or set it in --config)"))?;
    if args.checkpoint_every == 0 {
        return Err(usage("--checkpoint-every must be ≥ 1"));
    }
    config_check(cfg.train.validate())?;
    require_file(&manifest, "manifest")?;
    if let Some(r) = &args.resume {
        require_file(r, "checkpoint")?;
    }

    let data = load_manifest(&manifest, cfg.mask)?;
    let train_refs = data.split(Split::Train);
    if train_refs.is_empty() {
        return Err(usage(format!("{} has no train split", manifest.display())));
    }

    let mut trainer = match &args.resume {
        Some(path) => {
            // the stored training configuration wins, except for the epoch target
            let ckpt = Checkpoint::<f64>::load(path)?;
            Trainer::resume(ckpt, Some(cfg.train.epochs))?
        }
        None => {
            let vocab = vocab_from_samples(&train_refs);
            let visual_dim = train_refs[0].features.d;
            let mut base = ModelConfig::new(vocab.len(), visual_dim);
            if cfg.train.dataset != DatasetTag::Synthetic {
                base.disentangle.latent = DisentangleConfig::default().latent;
            }
            let model_cfg = cfg.model.apply(base);
            config_check(model_cfg.validate())?;
            let model = Model::init(model_cfg, vocab, cfg.train.seed)?;
            Trainer::new(model, cfg.train)?
        }
    };

    // the record omits `out`, which is where it lives
    let mut cfg = cfg;
    cfg.train = trainer.config;
    cfg.out = None;
    let ckpt_dir = out_dir.join(CHECKPOINT_DIR);
    let log_dir = out_dir.join(LOG_DIR);
    let report_dir = out_dir.join(REPORT_DIR);
    for d in [&ckpt_dir, &log_dir, &report_dir] {
        create_dir(d)?;
    }
    write_file(
        &report_dir.join("run_config.json"),
        &(serde_json::to_string_pretty(&cfg).map_err(crate::Error::from)? + "\n"),
    )?;

    let log_path = log_dir.join("train.jsonl");
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(args.resume.is_some())
        .truncate(args.resume.is_none())
        .open(&log_path)
        .map_err(|e| crate::Error::Path {
            path: log_path.clone(),
            source: e,
        })?;

    let train = split_samples(&trainer.model, &data, Split::Train);
    let total = trainer.config.epochs;
    let every = args.checkpoint_every;
    let mut last = None;
    let started = Instant::now();
    let mut epoch_start = Instant::now();
    let mut latest = ckpt_dir.join(checkpoint_name(trainer.epochs_done));
    if trainer.epochs_done >= total {
        trainer.checkpoint().save(&latest)?;
    }
    let logs = trainer.run(&train, |t, entry| {
        let e = entry.epoch;
        if e % every == 0 || e == total {
            t.checkpoint().save(ckpt_dir.join(checkpoint_name(e)))?;
        }
        let mut record = serde_json::to_value(entry)?;
        record["timing"] = json!({
            "epoch_seconds": epoch_start.elapsed().as_secs_f64(),
            "elapsed_seconds": started.elapsed().as_secs_f64(),
        });
        writeln!(log, "{record}")?;
        eprintln!(
            "epoch {e:>4}/{total}  pred {:.4}  match {:.4}  train_acc {:.4}",
            entry.mean_pred_loss, entry.mean_match_loss, entry.train_accuracy
        );
        epoch_start = Instant::now();
        Ok(())
    })?;
    if let Some(l) = logs.last() {
        last = Some(*l);
        latest = ckpt_dir.join(checkpoint_name(l.epoch));
    }

    let val = split_samples(&trainer.model, &data, Split::Validation);
    let validation = if val.is_empty() {
        None
    } else {
        Some(evaluate(&trainer.model, &val, trainer.model.config.threshold)?)
    };
    let report = TrainReport {
        epochs_done: trainer.epochs_done,
        mu: trainer.model.config.mu,
        last_epoch: last.as_ref(),
        validation: validation.clone(),
        final_checkpoint: format!("{CHECKPOINT_DIR}/{}", checkpoint_name(trainer.epochs_done)),
    };
    write_file(
        &report_dir.join("train.json"),
        &(serde_json::to_string_pretty(&report).map_err(crate::Error::from)? + "\n"),
    )?;

    let mut line = format!("final epoch {}", trainer.epochs_done);
    if let Some(l) = &last {
        line += &format!(
            "  pred_loss {:.4}  match_loss {:.4}  train_acc {:.4}",
            l.mean_pred_loss, l.mean_match_loss, l.train_accuracy
        );
    }
    if let Some(v) = &validation {
        line += &format!("  val_acc {:.4}", v.accuracy);
        if let Some(a) = v.auroc {
            line += &format!("  val_auroc {a:.4}");
        }
        line += &format!("  val_wf1 {:.4}", v.weighted_f1);
    }
    writeln!(out, "{line}")?;
    writeln!(out, "checkpoint {}", latest.display())?;
    Ok(())
}

fn load_for_inference(checkpoint: &Path, manifest: &Path, mask: FieldMask) -> CliResult<(Model<f64>, Dataset)> {
    require_file(checkpoint, "checkpoint")?;
    require_file(manifest, "manifest")?;
    let model = Checkpoint::<f64>::load(checkpoint)?.model;
    let data = load_manifest(manifest, mask)?;
    Ok((model, data))
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let (model, data) = load_for_inference(&args.checkpoint, &args.manifest, args.mask.mask())?;
    let threshold = args.threshold.unwrap_or(model.config.threshold);
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(usage(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    let samples = split_samples(&model, &data, args.split);
    if samples.is_empty() {
        return Err(usage(format!("split `{}` is empty in {}", args.split, args.manifest.display())));
    }
    let report = evaluate(&model, &samples, threshold)?;
    let doc = json!({ "split": args.split.as_str(), "threshold": threshold, "metrics": report });
    let text = serde_json::to_string_pretty(&doc).map_err(crate::Error::from)? + "\n";
    if let Some(dir) = &args.out {
        let reports = dir.join(REPORT_DIR);
        create_dir(&reports)?;
        write_file(&reports.join(format!("eval-{}.json", args.split)), &text)?;
    }
    match args.format {
        Format::Json => write!(out, "{text}")?,
        Format::Table => {
            writeln!(out, "split      {}", args.split)?;
            writeln!(out, "threshold  {threshold}")?;
            write!(out, "{}", report.to_table())?;
        }
    }
    Ok(())
}

pub fn cmd_retrieve(args: &RetrieveArgs, out: &mut dyn Write) -> CliResult<()> {
    if args.k == 0 {
        return Err(usage("--k must be ≥ 1"));
    }
    let (model, data) = load_for_inference(&args.checkpoint, &args.manifest, args.mask.mask())?;
    let refs = match args.split {
        Some(s) => data.split(s),
        None => data.samples.iter().collect(),
    };
    let samples: Vec<PreparedSample<f64>> = prepare_all(&refs, &model.vocab);
    let hits = model.retrieve(&args.query, &samples, args.k)?;
    match args.format {
        Format::Json => {
            let rows: Vec<_> = hits
                .iter()
                .enumerate()
                .map(|(i, h)| {
                    json!({ "rank": i + 1, "id": h.id, "similarity": h.similarity, "score": h.y, "label": h.label })
                })
                .collect();
            writeln!(out, "{}", serde_json::to_string_pretty(&rows).map_err(crate::Error::from)?)?;
        }
        Format::Table => {
            let width = hits.iter().map(|h| h.id.len()).max().unwrap_or(2).max(2);
            writeln!(out, "{:>4}  {:<width$}  {:>10}  label", "rank", "id", "similarity")?;
            for (i, h) in hits.iter().enumerate() {
                writeln!(out, "{:>4}  {:<width$}  {:>10.6}  {}", i + 1, h.id, h.similarity, h.label)?;
            }
        }
    }
    Ok(())
}

pub fn cmd_gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> CliResult<()> {
    let seed = args.seed.unwrap_or_else(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_nanos() as u64)
    });
    let report = run_suite(seed, args.inject_sign_flip)?;
    match args.format {
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&report).map_err(crate::Error::from)?)?,
        Format::Table => {
            writeln!(out, "seed {seed}  h {:e}  tol {:e}", crate::gradsuite::STEP, report.tolerance)?;
            write!(out, "{}", report.to_table())?;
        }
    }
    if report.passed() {
        writeln!(out, "gradcheck passed: max relative error {:.3e}", report.max_rel_error())?;
        Ok(())
    } else {
        let failed: Vec<&str> = report.entries.iter().filter(|e| !e.passed).map(|e| e.name.as_str()).collect();
        Err(CliError::Verify(format!("gradcheck failed for: {}", failed.join(", "))))
    }
}

#[cfg(test)]
mod tests;
