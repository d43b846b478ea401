//! The `ocrxfer` command line.
//!
//! Every subcommand takes its settings from flags, optionally layered over a
//! JSON file given with `--config` (flags win). Runs that produce an output
//! directory record the resolved settings there as `config.json`.
//!
//! Exit status: 0 on success, 1 on domain errors, 2 on usage errors.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::codec::{default_whitelist, normalize_text, BLANK};
use crate::dataset::{self, Sample};
use crate::evalkit::{self, CellRunner, CorpusData, ExperimentConfig, InitKind, ModeSpec, StubRunner, TrainingRunner};
use crate::linenet::Network;
use crate::modelstore::{self, Provenance};
use crate::synthgen::{self, derive_seed, CorpusManifest, DegradeParams, FontId};
use crate::trainer::{self, InitMode, TrainingConfig};

pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Parser)]
#[command(name = "ocrxfer", version, about = "Line OCR training with codec transfer")]
struct Cli {
    /// JSON file with default values for the subcommand's flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic corpus.
    Synth(SynthFlags),
    /// Train a model from scratch.
    Train(TrainFlags),
    /// Train starting from an existing model, reconciling its codec.
    Finetune(TrainFlags),
    /// Recognize line images and print `<id>\t<text>`.
    Predict(PredictFlags),
    /// Score a model on a dataset.
    Eval(EvalFlags),
    /// Inspect, compare or resize codecs.
    #[command(subcommand)]
    Codec(CodecCommand),
    /// Order models by raw CER on a GT sample.
    RankModels(RankFlags),
    /// Run the fold/budget transfer experiment.
    Experiment(ExperimentFlags),
    /// Model file information.
    #[command(subcommand)]
    Model(ModelCommand),
}

#[derive(Debug, Subcommand)]
enum CodecCommand {
    Inspect(ModelOnly),
    Diff(DiffFlags),
    Resize(ResizeFlags),
}

#[derive(Debug, Subcommand)]
enum ModelCommand {
    Info(ModelOnly),
}

#[derive(Debug, Args, Serialize)]
struct SynthFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    font: Option<FontId>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lines: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    height: Option<usize>,
    /// Target characters per line.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    line_length: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    spacing_scale: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    noise: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    blur: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    jitter: Option<usize>,
    /// Letters to sample words from instead of the font's letters.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    alphabet: Option<String>,
    /// Regenerate the corpus described by this directory's manifest.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    from_manifest: Option<PathBuf>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct SynthConfig {
    #[serde(default)]
    font: Option<FontId>,
    #[serde(default)]
    lines: Option<usize>,
    #[serde(default)]
    seed: u64,
    out: PathBuf,
    #[serde(default = "default_synth_height")]
    height: usize,
    #[serde(default = "default_line_length")]
    line_length: usize,
    #[serde(default = "one")]
    spacing_scale: f64,
    #[serde(default)]
    noise: f64,
    #[serde(default)]
    blur: usize,
    #[serde(default)]
    jitter: usize,
    #[serde(default)]
    alphabet: Option<String>,
    #[serde(default)]
    from_manifest: Option<PathBuf>,
}

fn default_synth_height() -> usize {
    32
}

fn default_line_length() -> usize {
    12
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Args, Serialize)]
struct TrainFlags {
    /// Base model (finetune only).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    train: Option<PathBuf>,
    /// Test set; without it a share of the training lines is held out.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    test: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    learning_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    momentum: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden_size: Option<usize>,
    /// Input height for fresh models; defaults to the first training image.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    height: Option<usize>,
    /// `default`, `none` or `file:<path>`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    whitelist: Option<String>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct TrainConfig {
    #[serde(default)]
    model: Option<PathBuf>,
    train: PathBuf,
    #[serde(default)]
    test: Option<PathBuf>,
    out: PathBuf,
    #[serde(default = "defaults::iterations")]
    iterations: u64,
    #[serde(default = "defaults::learning_rate")]
    learning_rate: f64,
    #[serde(default = "defaults::momentum")]
    momentum: f64,
    #[serde(default = "defaults::checkpoint_every")]
    checkpoint_every: u64,
    #[serde(default)]
    seed: u64,
    #[serde(default = "defaults::hidden_size")]
    hidden_size: usize,
    #[serde(default)]
    height: Option<usize>,
    whitelist: String,
}

mod defaults {
    use crate::trainer::TrainingConfig;

    pub fn iterations() -> u64 {
        TrainingConfig::default().iterations
    }
    pub fn learning_rate() -> f64 {
        TrainingConfig::default().learning_rate
    }
    pub fn momentum() -> f64 {
        TrainingConfig::default().momentum
    }
    pub fn checkpoint_every() -> u64 {
        TrainingConfig::default().checkpoint_every
    }
    pub fn hidden_size() -> usize {
        TrainingConfig::default().hidden_size
    }
    pub fn eval_fraction() -> f64 {
        0.5
    }
}

#[derive(Debug, Args, Serialize)]
struct PredictFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    /// A dataset directory or a single image.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    input: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictConfig {
    model: PathBuf,
    input: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct EvalFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<PathBuf>,
    /// Also write the report as JSON.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    json: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalConfig {
    model: PathBuf,
    data: PathBuf,
    #[serde(default)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ModelOnly {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelOnlyConfig {
    model: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct DiffFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    other: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiffConfig {
    model: PathBuf,
    other: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ResizeFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    /// Characters to add.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    add: Option<String>,
    /// Characters to remove unless immune or whitelisted.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    remove: Option<String>,
    /// Reconcile with the transcriptions of this dataset instead.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    gt: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    whitelist: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResizeConfig {
    model: PathBuf,
    #[serde(default)]
    add: String,
    #[serde(default)]
    remove: String,
    #[serde(default)]
    gt: Option<PathBuf>,
    #[serde(default = "none_spec")]
    whitelist: String,
    #[serde(default)]
    seed: u64,
    out: PathBuf,
}

fn none_spec() -> String {
    "none".into()
}

#[derive(Debug, Args, Serialize)]
struct RankFlags {
    #[arg(long, num_args = 1..)]
    #[serde(skip_serializing_if = "Option::is_none")]
    models: Option<Vec<PathBuf>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<PathBuf>,
    /// Number of lines to use, taken in file order.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    sample: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RankConfig {
    models: Vec<PathBuf>,
    data: PathBuf,
    #[serde(default)]
    sample: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
struct ExperimentFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    /// Worker threads for independent cells.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    jobs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// `train` or `stub` (hash-derived CERs, no training).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    runner: Option<String>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct CorpusEntry {
    name: String,
    dir: PathBuf,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct ModeEntry {
    name: String,
    init: InitKind,
    #[serde(default)]
    model: Option<PathBuf>,
    #[serde(default = "none_spec")]
    whitelist: String,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct TrainingEntry {
    #[serde(default = "defaults::iterations")]
    iterations: u64,
    #[serde(default = "defaults::learning_rate")]
    learning_rate: f64,
    #[serde(default = "defaults::momentum")]
    momentum: f64,
    #[serde(default = "defaults::checkpoint_every")]
    checkpoint_every: u64,
    #[serde(default = "defaults::hidden_size")]
    hidden_size: usize,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct ExperimentFile {
    corpora: Vec<CorpusEntry>,
    budgets: Vec<usize>,
    folds: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "defaults::eval_fraction")]
    eval_fraction: f64,
    modes: Vec<ModeEntry>,
    #[serde(default)]
    training: Option<TrainingEntry>,
    #[serde(default = "train_runner")]
    runner: String,
    #[serde(default)]
    height: Option<usize>,
    out: PathBuf,
    #[serde(default)]
    jobs: Option<usize>,
}

fn train_runner() -> String {
    "train".into()
}

enum Failure {
    Usage(String),
    Domain(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Domain(e)
    }
}

type CmdResult = Result<(), Failure>;

/// Parse `argv` (including the program name) and run the subcommand.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error: {}", chain_message(&e));
            1
        }
    }
}

/// The error chain joined with `: `, leaving out causes whose text the
/// outer message already contains.
fn chain_message(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

/// Layer explicit flags over the config file, then fill defaults.
fn resolve<F: Serialize, C: DeserializeOwned>(config: Option<&Path>, flags: &F) -> Result<C, Failure> {
    let mut merged = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
            let value: Value = serde_json::from_str(&text)
                .map_err(|e| Failure::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
            if !value.is_object() {
                return Err(Failure::Usage(format!("config {} must be a JSON object", path.display())));
            }
            value
        }
        None => Value::Object(Default::default()),
    };
    let flags = serde_json::to_value(flags).expect("flags serialize");
    if let (Value::Object(base), Value::Object(over)) = (&mut merged, flags) {
        base.extend(over);
    }
    serde_json::from_value(merged).map_err(|e| Failure::Usage(e.to_string()))
}

fn write_config<C: Serialize>(dir: &Path, config: &C) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let json = serde_json::to_string_pretty(config)?;
    std::fs::write(dir.join(CONFIG_FILE), json + "\n")?;
    Ok(())
}

/// `default` (a-z, A-Z, 0-9), `none`, or `file:<path>` (every non-whitespace
/// character of the file).
pub fn parse_whitelist(spec: &str) -> anyhow::Result<BTreeSet<char>> {
    match spec {
        "default" => Ok(default_whitelist()),
        "none" => Ok(BTreeSet::new()),
        other => match other.strip_prefix("file:") {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading whitelist {path}"))?;
                Ok(normalize_text(&text).chars().filter(|c| !c.is_whitespace()).collect())
            }
            None => bail!("unknown whitelist {other:?}, expected default, none or file:<path>"),
        },
    }
}

fn dispatch(cli: Cli) -> CmdResult {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Synth(f) => synth(resolve(config, &f)?),
        Command::Train(f) => {
            let mut c: Value = resolve(config, &f)?;
            if c.get("whitelist").is_none() {
                c["whitelist"] = "none".into();
            }
            let c: TrainConfig = serde_json::from_value(c).map_err(|e| Failure::Usage(e.to_string()))?;
            if c.model.is_some() {
                return Err(Failure::Usage("train starts from scratch; use finetune with --model".into()));
            }
            train(c)
        }
        Command::Finetune(f) => {
            let mut c: Value = resolve(config, &f)?;
            if c.get("whitelist").is_none() {
                c["whitelist"] = "default".into();
            }
            let c: TrainConfig = serde_json::from_value(c).map_err(|e| Failure::Usage(e.to_string()))?;
            if c.model.is_none() {
                return Err(Failure::Usage("finetune needs --model".into()));
            }
            train(c)
        }
        Command::Predict(f) => predict(resolve(config, &f)?),
        Command::Eval(f) => eval(resolve(config, &f)?),
        Command::Codec(CodecCommand::Inspect(f)) => codec_inspect(resolve(config, &f)?),
        Command::Codec(CodecCommand::Diff(f)) => codec_diff(resolve(config, &f)?),
        Command::Codec(CodecCommand::Resize(f)) => codec_resize(resolve(config, &f)?),
        Command::RankModels(f) => rank(resolve(config, &f)?),
        Command::Experiment(f) => {
            let base = config.map(|p| p.parent().unwrap_or(Path::new("")).to_path_buf());
            experiment(resolve(config, &f)?, base.unwrap_or_default())
        }
        Command::Model(ModelCommand::Info(f)) => model_info(resolve(config, &f)?),
    }
}

fn synth(c: SynthConfig) -> CmdResult {
    let manifest = match &c.from_manifest {
        Some(src) => {
            let m = synthgen::regenerate(src, &c.out).map_err(anyhow::Error::from)?;
            eprintln!("regenerated {} lines into {}", m.n_lines, c.out.display());
            m
        }
        None => {
            let font = c.font.ok_or_else(|| Failure::Usage("synth needs --font".into()))?;
            let lines = c.lines.ok_or_else(|| Failure::Usage("synth needs --lines".into()))?;
            let manifest = CorpusManifest {
                height: c.height,
                line_length: c.line_length,
                alphabet: c.alphabet.clone(),
                spacing_scale: c.spacing_scale,
                degrade: DegradeParams {
                    pixel_noise_std: c.noise,
                    blur_radius: c.blur,
                    jitter: c.jitter,
                    seed: 0,
                },
                ..CorpusManifest::new(font, lines, c.seed)
            };
            synthgen::generate_corpus(&manifest, &c.out).map_err(anyhow::Error::from)?
        }
    };
    write_config(&c.out, &c)?;
    eprintln!("wrote {} lines (font {}) to {}", manifest.n_lines, manifest.font, c.out.display());
    Ok(())
}

/// Hold out `test_split_size(n)` lines chosen with `seed`.
fn hold_out(mut samples: Vec<Sample>, seed: u64) -> anyhow::Result<(Vec<Sample>, Vec<Sample>)> {
    if samples.len() < 2 {
        bail!("need at least two training lines to hold out a test set");
    }
    let k = trainer::test_split_size(samples.len());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[3])));
    let test_idx: BTreeSet<usize> = order[..k].iter().copied().collect();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, s) in samples.drain(..).enumerate() {
        if test_idx.contains(&i) {
            test.push(s);
        } else {
            train.push(s);
        }
    }
    Ok((train, test))
}

fn train(c: TrainConfig) -> CmdResult {
    let whitelist = parse_whitelist(&c.whitelist)?;
    let height = match &c.model {
        Some(m) => modelstore::load(m).with_context(|| format!("loading {}", m.display()))?.input_height(),
        None => match c.height {
            Some(h) => h,
            None => dataset::probe_height(&c.train).map_err(anyhow::Error::from)?,
        },
    };
    let samples = dataset::load_dataset(&c.train, height).map_err(anyhow::Error::from)?;
    let (train_set, test_set) = match &c.test {
        Some(dir) => (samples, dataset::load_dataset(dir, height).map_err(anyhow::Error::from)?),
        None => hold_out(samples, c.seed)?,
    };
    let config = TrainingConfig {
        iterations: c.iterations,
        learning_rate: c.learning_rate,
        momentum: c.momentum,
        checkpoint_every: c.checkpoint_every,
        seed: c.seed,
        whitelist,
        init_mode: match &c.model {
            Some(m) => InitMode::Pretrained(m.clone()),
            None => InitMode::Fresh,
        },
        hidden_size: c.hidden_size,
    };
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    write_config(&c.out, &c)?;
    let series = trainer::train(&train_set, &test_set, &config, &c.out).map_err(anyhow::Error::from)?;
    let best = trainer::best_checkpoint(&series).map_err(anyhow::Error::from)?;
    println!(
        "best checkpoint: iteration {} test CER {:.2}% ({})",
        best.iteration,
        best.test_cer * 100.0,
        c.out.join(trainer::BEST_MODEL).display()
    );
    Ok(())
}

fn load_model(path: &Path) -> anyhow::Result<Network> {
    modelstore::load(path).with_context(|| format!("loading {}", path.display()))
}

fn predict(c: PredictConfig) -> CmdResult {
    let net = load_model(&c.model)?;
    let items: Vec<(String, PathBuf)> = if c.input.is_dir() {
        dataset::list_pairs(&c.input)
            .map_err(anyhow::Error::from)?
            .into_iter()
            .map(|(id, png, _)| (id, png))
            .collect()
    } else {
        let id = c
            .input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        vec![(id, c.input.clone())]
    };
    for (id, png) in items {
        let line = dataset::read_line(&png, net.input_height()).map_err(anyhow::Error::from)?;
        let text = evalkit::Recognizer::recognize(&net, &line).with_context(|| format!("line {id}"))?;
        println!("{id}\t{text}");
    }
    Ok(())
}

fn eval(c: EvalConfig) -> CmdResult {
    let net = load_model(&c.model)?;
    let set = dataset::load_dataset(&c.data, net.input_height()).map_err(anyhow::Error::from)?;
    let report = evalkit::evaluate_model(&net, &set).map_err(anyhow::Error::from)?;
    print!("{}", report.to_text());
    if let Some(path) = &c.json {
        let json = serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?;
        std::fs::write(path, json + "\n").map_err(anyhow::Error::from)?;
    }
    Ok(())
}

fn show_char(c: char) -> String {
    match c {
        BLANK => "<blank>".into(),
        ' ' => "<space>".into(),
        c => c.to_string(),
    }
}

fn codec_inspect(c: ModelOnlyConfig) -> CmdResult {
    let net = load_model(&c.model)?;
    let codec = net.codec();
    println!("index\tchar\tcode\timmune");
    for (i, &ch) in codec.symbols().iter().enumerate() {
        println!(
            "{i}\t{}\tU+{:04X}\t{}",
            show_char(ch),
            ch as u32,
            if codec.immune().contains(&ch) { "yes" } else { "no" }
        );
    }
    Ok(())
}

fn codec_diff(c: DiffConfig) -> CmdResult {
    let a = load_model(&c.model)?;
    let b = load_model(&c.other)?;
    let delta = a.codec().diff(b.codec());
    println!("retained\t{}", delta.retained.len());
    for (ch, i) in &delta.added {
        println!("added\t{}\t{i}", show_char(*ch));
    }
    for (ch, i) in &delta.removed {
        println!("removed\t{}\t{i}", show_char(*ch));
    }
    Ok(())
}

fn codec_resize(c: ResizeConfig) -> CmdResult {
    let net = load_model(&c.model)?;
    let whitelist = parse_whitelist(&c.whitelist)?;
    let resized = match &c.gt {
        Some(dir) => {
            let texts = dataset::list_pairs(dir)
                .map_err(anyhow::Error::from)?
                .into_iter()
                .map(|(_, _, gt)| dataset::read_text(&gt))
                .collect::<Result<Vec<_>, _>>()
                .map_err(anyhow::Error::from)?;
            trainer::reconcile_codec(&net, &texts, &whitelist, c.seed).map_err(anyhow::Error::from)?
        }
        None => {
            let add: BTreeSet<char> = normalize_text(&c.add).chars().collect();
            let (_, grow) = net.codec().extend(&add).map_err(anyhow::Error::from)?;
            let grown = net.resize_output(&grow, c.seed).map_err(anyhow::Error::from)?;
            let remove: BTreeSet<char> = normalize_text(&c.remove).chars().collect();
            let keep: BTreeSet<char> = grown
                .codec()
                .charset()
                .into_iter()
                .filter(|ch| !remove.contains(ch) || whitelist.contains(ch))
                .collect();
            let (_, shrink) = grown.codec().reduce(&keep);
            grown.resize_output(&shrink, c.seed).map_err(anyhow::Error::from)?
        }
    };
    let (_, header) = modelstore::load_with_header(&c.model).map_err(anyhow::Error::from)?;
    modelstore::save(&resized, &header.provenance, &c.out).map_err(anyhow::Error::from)?;
    let delta = net.codec().diff(resized.codec());
    eprintln!(
        "{} symbols -> {} (+{} -{}), wrote {}",
        net.codec().len(),
        resized.codec().len(),
        delta.added.len(),
        delta.removed.len(),
        c.out.display()
    );
    Ok(())
}

fn rank(c: RankConfig) -> CmdResult {
    if c.models.is_empty() {
        return Err(Failure::Usage("rank-models needs at least one model".into()));
    }
    let models = c
        .models
        .iter()
        .map(|p| load_model(p))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let height = models[0].input_height();
    if models.iter().any(|m| m.input_height() != height) {
        return Err(anyhow::anyhow!("models have different input heights").into());
    }
    let mut sample = dataset::load_dataset(&c.data, height).map_err(anyhow::Error::from)?;
    if let Some(n) = c.sample {
        sample.truncate(n);
    }
    let ranked = evalkit::rank_models(&models, &sample).map_err(anyhow::Error::from)?;
    println!("rank\tcer\tmodel");
    for (rank, (i, cer)) in ranked.into_iter().enumerate() {
        println!("{}\t{:.2}\t{}", rank + 1, cer * 100.0, c.models[i].display());
    }
    Ok(())
}

fn experiment(mut c: ExperimentFile, base: PathBuf) -> CmdResult {
    let rel = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    for corpus in &mut c.corpora {
        corpus.dir = rel(&corpus.dir);
    }
    for mode in &mut c.modes {
        if let Some(m) = &mode.model {
            mode.model = Some(rel(m));
        }
    }
    let modes = c
        .modes
        .iter()
        .map(|m| {
            if m.init == InitKind::Pretrained && m.model.is_none() {
                bail!("mode {} is pretrained but names no model", m.name);
            }
            Ok(ModeSpec {
                name: m.name.clone(),
                init: m.init,
                model: m.model.clone(),
                whitelist: parse_whitelist(&m.whitelist)?,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut pretrained = BTreeMap::new();
    if c.runner == "train" {
        for m in &modes {
            if let Some(path) = &m.model {
                if !pretrained.contains_key(path) {
                    pretrained.insert(path.clone(), load_model(path)?);
                }
            }
        }
    }
    let height = match (c.height, pretrained.values().next()) {
        (Some(h), _) => h,
        (None, Some(net)) => net.input_height(),
        (None, None) => {
            let first = c.corpora.first().ok_or_else(|| Failure::Usage("no corpora configured".into()))?;
            dataset::probe_height(&first.dir).map_err(anyhow::Error::from)?
        }
    };
    let corpora = c
        .corpora
        .iter()
        .map(|e| {
            Ok(CorpusData {
                name: e.name.clone(),
                samples: dataset::load_dataset(&e.dir, height)?,
            })
        })
        .collect::<Result<Vec<_>, dataset::DatasetError>>()
        .map_err(anyhow::Error::from)?;
    let training = c.training.as_ref();
    let runner: Box<dyn CellRunner> = match c.runner.as_str() {
        "stub" => Box::new(StubRunner),
        "train" => Box::new(TrainingRunner {
            training: TrainingConfig {
                iterations: training.map_or_else(defaults::iterations, |t| t.iterations),
                learning_rate: training.map_or_else(defaults::learning_rate, |t| t.learning_rate),
                momentum: training.map_or_else(defaults::momentum, |t| t.momentum),
                checkpoint_every: training.map_or_else(defaults::checkpoint_every, |t| t.checkpoint_every),
                hidden_size: training.map_or_else(defaults::hidden_size, |t| t.hidden_size),
                ..Default::default()
            },
            pretrained,
        }),
        other => return Err(Failure::Usage(format!("unknown runner {other:?}, expected train or stub"))),
    };
    let config = ExperimentConfig {
        budgets: c.budgets.clone(),
        folds: c.folds,
        seed: c.seed,
        eval_fraction: c.eval_fraction,
        modes,
    };
    write_config(&c.out, &c)?;
    let run = || evalkit::run_experiment(&corpora, &config, runner.as_ref());
    let report = match c.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(anyhow::Error::from)?
            .install(run),
        None => run(),
    }
    .map_err(anyhow::Error::from)?;
    report.write_csvs(&c.out).map_err(anyhow::Error::from)?;
    print!("{}", report.to_text());
    Ok(())
}

fn model_info(c: ModelOnlyConfig) -> CmdResult {
    let (net, header) = modelstore::load_with_header(&c.model).map_err(anyhow::Error::from)?;
    let p: &Provenance = &header.provenance;
    println!("format version: {}", modelstore::FORMAT_VERSION);
    println!("input height: {}", net.input_height());
    println!("hidden size: {}", net.hidden_size());
    println!("parameters: {}", net.param_count());
    println!(
        "codec ({}): {}",
        net.codec().len(),
        net.codec().symbols().iter().map(|&ch| show_char(ch)).collect::<Vec<_>>().join(" ")
    );
    println!(
        "immune: {}",
        net.codec().immune().iter().map(|&ch| show_char(ch)).collect::<Vec<_>>().join(" ")
    );
    println!("seed lineage: {:?}", net.seed_lineage());
    println!(
        "provenance: init={} base={} iteration={} seed={}",
        if p.init.is_empty() { "-" } else { &p.init },
        p.base_model.as_deref().unwrap_or("-"),
        p.iteration,
        p.training_seed
    );
    for b in &header.blocks {
        println!("block {}: {:?}", b.name, b.shape);
    }
    Ok(())
}
