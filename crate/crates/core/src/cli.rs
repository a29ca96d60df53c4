//! Command-line front end.
//!
//! Machine-readable JSON goes to stdout, human logs to stderr. Option values
//! resolve as: command-line flag, then `--config` file, then the
//! `FLOWGUARD_SEED` environment variable (seed only), then built-in defaults.
//! The config file is a JSON object keyed by long flag names; arrays become
//! comma-separated values and `true` switches a flag on.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use crate::detector::{
    make_default_plan, train_curriculum, Classifier, FeatureExtractor, FeatureSet, LrSchedule,
    OptimizerKind,
};
use crate::diffusion::{build_synthetic_dataset, reference_decoder_for, DatasetConfig, ReferenceDecoderConfig};
use crate::error::{Error, Result};
use crate::freq::{LowPassFilter, DEFAULT_CUTOFF_RATIO};
use crate::guard::{
    bench_decoders, evaluate, run_guard, BenchOptions, GuardConfig, DEFAULT_THRESHOLD,
};
use crate::linear::{
    fit_closed_form, fit_gradient, AffineDecoder, GradientFitOptions, DEFAULT_BATCH, DEFAULT_EPOCHS,
    DEFAULT_LR, DEFAULT_PAIRS_PER_MODEL, DEFAULT_RIDGE,
};
use crate::rng::{DEFAULT_SEED, SEED_ENV};
use crate::tensorio::{read_manifest, read_tensor, resolve, write_tensor, DatasetManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_IO: i32 = 2;

/// `C,H,W` on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims3(pub [usize; 3]);

impl FromStr for Dims3 {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let v = parse_list::<usize>(s)?;
        let arr: [usize; 3] = v.try_into().map_err(|_| format!("expected C,H,W, got `{s}`"))?;
        if arr.contains(&0) {
            return Err(format!("dims must be positive, got `{s}`"));
        }
        Ok(Dims3(arr))
    }
}

/// Comma-separated list given as one value.
#[derive(Clone, Debug, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: std::fmt::Display,
{
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        parse_list(s).map(List)
    }
}

fn parse_list<T: FromStr>(s: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<T>().map_err(|e| format!("`{p}`: {e}")))
        .collect()
}

/// Curriculum stages as `49,45,40;40,35,30`.
#[derive(Clone, Debug, PartialEq)]
pub struct Stages(pub Vec<Vec<usize>>);

impl FromStr for Stages {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(';').map(parse_list::<usize>).collect::<std::result::Result<_, _>>().map(Stages)
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "flowguard",
    version,
    about = "Early-exit content guard for latent diffusion trajectories",
    args_override_self = true
)]
pub struct Cli {
    /// JSON file of option defaults, keyed by long flag name.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Progress logs on stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct SeedArg {
    #[arg(long, env = SEED_ENV, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a seeded synthetic trajectory dataset.
    Synth(SynthArgs),
    /// Fit affine decoders from a dataset's latent/reconstruction pairs.
    FitDecoder(FitArgs),
    /// Decode one latent tensor with an affine decoder.
    Decode(DecodeArgs),
    /// Low-pass filter one image tensor.
    Filter(FilterArgs),
    /// Curriculum-train the classifier.
    Train(TrainArgs),
    /// Run the early-exit guard on one trajectory.
    Guard(GuardArgs),
    /// Evaluate the guard on a dataset.
    Eval(EvalArgs),
    /// Time affine against reference decoding.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub n_per_model: usize,
    #[arg(long, default_value = "m0")]
    pub models: List<String>,
    /// Generation steps to store; defaults to every step of the default curriculum.
    #[arg(long)]
    pub steps: Option<List<usize>>,
    #[arg(long, default_value_t = crate::diffusion::DEFAULT_TOTAL_STEPS)]
    pub total_steps: usize,
    #[arg(long, default_value_t = crate::diffusion::DEFAULT_BETA_MIN)]
    pub beta_min: f64,
    #[arg(long, default_value_t = crate::diffusion::DEFAULT_BETA_MAX)]
    pub beta_max: f64,
    #[arg(long, default_value = "4,8,8")]
    pub latent_dims: Dims3,
    #[arg(long, default_value = "3,32,32")]
    pub image_dims: Dims3,
    #[arg(long, default_value_t = 8)]
    pub hidden_channels: usize,
    #[arg(long, default_value_t = 0.15)]
    pub heterogeneity: f64,
    /// Independent instance split under the same decoders.
    #[arg(long, default_value_t = 0)]
    pub split: u64,
    /// Skip writing reference reconstructions.
    #[arg(long)]
    pub no_recon: bool,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FitMethodArg {
    #[value(alias = "closed-form")]
    Closed,
    Gradient,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Dataset directory with reconstructions.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Output directory; one subdirectory per model id.
    #[arg(long)]
    pub out: PathBuf,
    /// Fit only this model id.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, value_enum, default_value = "closed")]
    pub method: FitMethodArg,
    /// Pairs used per model.
    #[arg(long, default_value_t = DEFAULT_PAIRS_PER_MODEL)]
    pub count: usize,
    #[arg(long, default_value_t = DEFAULT_RIDGE)]
    pub ridge: f64,
    #[arg(long, default_value_t = DEFAULT_LR)]
    pub lr: f64,
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    pub epochs: usize,
    #[arg(long, default_value_t = DEFAULT_BATCH)]
    pub batch: usize,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    #[arg(long)]
    pub decoder: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Args, Debug)]
pub struct FilterArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CUTOFF_RATIO)]
    pub r: f64,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adamw,
    Sgd,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Directory of per-model affine decoders.
    #[arg(long)]
    pub decoders: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Held-out dataset for per-step accuracy.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_CUTOFF_RATIO)]
    pub lpf_r: f64,
    /// Stages as `49,45,40;40,35,30`.
    #[arg(long)]
    pub stages: Option<Stages>,
    #[arg(long)]
    pub epochs_per_stage: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Cosine decay with this warmup fraction instead of a fixed rate.
    #[arg(long)]
    pub cosine_warmup: Option<f64>,
    /// Uniform shuffling instead of (model, class) balanced resampling.
    #[arg(long)]
    pub unbalanced: bool,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Args, Debug, Clone)]
pub struct GuardOpts {
    #[arg(long)]
    pub classifier: PathBuf,
    #[arg(long)]
    pub decoders: PathBuf,
    /// Selected generation steps.
    #[arg(long, default_value = "20")]
    pub steps: List<usize>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = DEFAULT_CUTOFF_RATIO)]
    pub lpf_r: f64,
}

#[derive(Args, Debug)]
pub struct GuardArgs {
    #[command(flatten)]
    pub opts: GuardOpts,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Record index in the manifest.
    #[arg(long, default_value_t = 0)]
    pub record: usize,
    /// Where to write the final image on a safe verdict.
    #[arg(long)]
    pub final_image: Option<PathBuf>,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub opts: GuardOpts,
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value = "4,8,8")]
    pub latent_dims: Dims3,
    #[arg(long, default_value = "3,128,128")]
    pub image_dims: Dims3,
    #[arg(long, default_value_t = 48)]
    pub hidden_channels: usize,
    #[arg(long, default_value = "1,10,50")]
    pub batch_sizes: List<usize>,
    #[arg(long, default_value_t = 3)]
    pub repetitions: usize,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub seed: SeedArg,
}

/// Turns a JSON object into `--key value` tokens.
fn config_tokens(path: &Path) -> Result<Vec<OsString>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text)?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::invalid("config file must hold a JSON object"))?;
    let scalar = |v: &Value| -> Result<String> {
        match v {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            Value::Bool(b) => Ok(b.to_string()),
            _ => Err(Error::invalid(format!("unsupported config value {v}"))),
        }
    };
    let mut out = Vec::new();
    for (key, v) in obj {
        let flag = format!("--{}", key.replace('_', "-"));
        match v {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => out.push(flag.into()),
            Value::Array(items) => {
                let joined = if items.iter().any(Value::is_array) {
                    items
                        .iter()
                        .map(|row| match row {
                            Value::Array(inner) => {
                                Ok(inner.iter().map(scalar).collect::<Result<Vec<_>>>()?.join(","))
                            }
                            other => scalar(other),
                        })
                        .collect::<Result<Vec<_>>>()?
                        .join(";")
                } else {
                    items.iter().map(scalar).collect::<Result<Vec<_>>>()?.join(",")
                };
                out.push(flag.into());
                out.push(joined.into());
            }
            other => {
                out.push(flag.into());
                out.push(scalar(other)?.into());
            }
        }
    }
    Ok(out)
}

/// Splices config-file tokens in front of the user's own flags so that the
/// latter win.
fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut config = None;
    let mut it = argv.into_iter();
    let bin = it.next();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            config = Some(PathBuf::from(
                it.next().ok_or_else(|| Error::invalid("--config needs a path"))?,
            ));
        } else if let Some(p) = s.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        } else {
            rest.push(a);
        }
    }
    let mut out: Vec<OsString> = bin.into_iter().collect();
    let Some(path) = config else {
        out.extend(rest);
        return Ok(out);
    };
    let tokens = config_tokens(&path)?;
    // insert right after the subcommand name
    let sub = rest.iter().position(|a| !a.to_string_lossy().starts_with('-'));
    match sub {
        Some(i) => {
            out.extend(rest.drain(..=i));
            out.extend(tokens);
            out.extend(rest);
        }
        None => {
            out.extend(rest);
            out.extend(tokens);
        }
    }
    Ok(out)
}

fn emit<T: Serialize>(value: &T) -> Result<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        // a closed reader is not our failure
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => r.map_err(|e| Error::io("<stdout>", e)),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_dataset(dir: &Path) -> Result<DatasetManifest> {
    read_manifest(dir.join("manifest.json"))
}

fn load_decoders(dir: &Path, models: &[String]) -> Result<BTreeMap<String, AffineDecoder>> {
    let mut out = BTreeMap::new();
    for m in models {
        let d = dir.join(m);
        if !d.join("decoder.json").exists() {
            return Err(Error::MissingDecoder(m.clone()));
        }
        out.insert(m.clone(), AffineDecoder::load(&d)?);
    }
    Ok(out)
}

fn guard_configs(opts: &GuardOpts, manifest: &DatasetManifest) -> Result<BTreeMap<String, GuardConfig>> {
    let classifier = Classifier::load(&opts.classifier)?;
    load_decoders(&opts.decoders, &manifest.model_ids())?
        .into_iter()
        .map(|(m, dec)| {
            GuardConfig::new(&opts.steps.0, opts.threshold, dec, opts.lpf_r, classifier.clone()).map(|g| (m, g))
        })
        .collect()
}

struct Log(bool);

impl Log {
    fn say(&self, msg: impl AsRef<str>) {
        if self.0 {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn cmd_synth(a: SynthArgs, log: &Log) -> Result<()> {
    let steps = match a.steps {
        Some(s) => s.0,
        None => make_default_plan(a.total_steps)?.union_steps(),
    };
    let cfg = DatasetConfig {
        n_per_model: a.n_per_model,
        models: a.models.0,
        total_steps: a.total_steps,
        beta_min: a.beta_min,
        beta_max: a.beta_max,
        steps,
        seed: a.seed.seed,
        split: a.split,
        decoder: ReferenceDecoderConfig {
            latent_dims: a.latent_dims.0,
            image_dims: a.image_dims.0,
            hidden_channels: a.hidden_channels,
            heterogeneity: a.heterogeneity,
        },
        ..DatasetConfig::default()
    };
    log.say(format!("writing {} trajectories to {}", cfg.record_count(), a.out.display()));
    let manifest = build_synthetic_dataset(&cfg, &a.out, !a.no_recon)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        records: usize,
        models: Vec<String>,
        steps: &'a [usize],
        manifest: String,
    }
    emit(&Summary {
        records: manifest.records.len(),
        models: manifest.model_ids(),
        steps: &cfg.steps,
        manifest: a.out.join("manifest.json").display().to_string(),
    })
}

fn cmd_fit(a: FitArgs, log: &Log) -> Result<()> {
    let manifest = load_dataset(&a.pairs)?;
    let models = match &a.model {
        Some(m) if !manifest.model_ids().contains(m) => return Err(Error::MissingDecoder(m.clone())),
        Some(m) => vec![m.clone()],
        None => manifest.model_ids(),
    };
    #[derive(Serialize)]
    struct Fitted {
        model: String,
        samples: usize,
        parameter_count: usize,
        final_loss: Option<f64>,
    }
    let mut report = Vec::new();
    for m in models {
        let mut pairs = Vec::new();
        'records: for r in manifest.records.iter().filter(|r| r.model_id == m) {
            let recon = r.recon_paths.as_ref().ok_or_else(|| {
                Error::Manifest("dataset has no reconstructions; rebuild it without --no-recon".into())
            })?;
            for (z, x) in r.latent_paths.iter().zip(recon) {
                if pairs.len() == a.count {
                    break 'records;
                }
                pairs.push((read_tensor(resolve(&a.pairs, z))?, read_tensor(resolve(&a.pairs, x))?));
            }
        }
        log.say(format!("fitting {m} on {} pairs", pairs.len()));
        let dec = match a.method {
            FitMethodArg::Closed => fit_closed_form(&pairs, a.ridge)?,
            FitMethodArg::Gradient => fit_gradient(
                &pairs,
                &GradientFitOptions {
                    lr: a.lr,
                    epochs: a.epochs,
                    batch: a.batch,
                    ridge: a.ridge,
                    seed: a.seed.seed,
                },
            )?,
        };
        dec.save(&a.out.join(&m))?;
        report.push(Fitted {
            model: m,
            samples: dec.fit_info().samples,
            parameter_count: dec.parameter_count(),
            final_loss: dec.fit_info().final_loss,
        });
    }
    emit(&report)
}

fn cmd_decode(a: DecodeArgs) -> Result<()> {
    let dec = AffineDecoder::load(&a.decoder)?;
    let x = dec.decode(&read_tensor(&a.input)?)?;
    write_tensor(&x, &a.output)?;
    emit(&serde_json::json!({ "output": a.output.display().to_string(), "dims": x.dims() }))
}

fn cmd_filter(a: FilterArgs) -> Result<()> {
    let x = read_tensor(&a.input)?;
    let d = x.dims();
    let (h, w) = match d.len() {
        2 => (d[0], d[1]),
        3 => (d[1], d[2]),
        _ => return Err(Error::invalid(format!("filter input must be [H, W] or [C, H, W], got {d:?}"))),
    };
    let (y, residue) = LowPassFilter::new(h, w, a.r)?.apply_with_residue(&x)?;
    write_tensor(&y, &a.output)?;
    emit(&serde_json::json!({
        "output": a.output.display().to_string(),
        "r": a.r,
        "max_imaginary_residue": residue,
    }))
}

fn cmd_train(a: TrainArgs, log: &Log) -> Result<()> {
    let manifest = load_dataset(&a.dataset)?;
    let mut plan = make_default_plan(manifest.total_steps)?;
    plan.seed = a.seed.seed;
    if let Some(s) = a.stages {
        plan.stages = s.0;
    }
    if let Some(v) = a.epochs_per_stage {
        plan.epochs_per_stage = v;
    }
    if let Some(v) = a.lr {
        plan.lr = v;
    }
    if let Some(v) = a.lambda {
        plan.lambda = v;
    }
    if let Some(v) = a.batch_size {
        plan.batch_size = v;
    }
    if let Some(v) = a.optimizer {
        plan.optimizer = match v {
            OptimizerArg::Adamw => OptimizerKind::Adamw,
            OptimizerArg::Sgd => OptimizerKind::Sgd,
        };
    }
    if let Some(v) = a.weight_decay {
        plan.weight_decay = v;
    }
    if let Some(w) = a.cosine_warmup {
        plan.schedule = LrSchedule::CosineWarmup { warmup_fraction: w };
    }
    plan.balanced_sampling = !a.unbalanced;
    plan.validate(manifest.total_steps)?;

    let decoders = load_decoders(&a.decoders, &manifest.model_ids())?;
    let image = decoders
        .values()
        .next()
        .ok_or_else(|| Error::invalid("dataset has no records"))?
        .image_dims_array()?;
    let extractor = FeatureExtractor::new(image, Some(a.lpf_r))?;
    let steps = plan.union_steps();
    log.say(format!("extracting features at steps {steps:?}"));
    let train = FeatureSet::from_manifest(&manifest, &a.dataset, &decoders, &extractor, &steps)?;
    let validation = match &a.validation {
        Some(dir) => {
            let vm = load_dataset(dir)?;
            let vd = load_decoders(&a.decoders, &vm.model_ids())?;
            Some(FeatureSet::from_manifest(&vm, dir, &vd, &extractor, &steps)?)
        }
        None => None,
    };
    log.say(format!("training on {} trajectories", train.len()));
    let init = Classifier::new(image, plan.seed)?;
    let (clf, report) = train_curriculum(&train, &plan, init, validation.as_ref())?;
    clf.save(&a.out, Some(report.plan_hash.clone()))?;
    write_json(&a.out.join("plan.json"), &plan)?;
    write_json(&a.out.join("train_report.json"), &report)?;
    emit(&report)
}

fn cmd_guard(a: GuardArgs) -> Result<()> {
    let manifest = load_dataset(&a.dataset)?;
    manifest.validate()?;
    let record = manifest
        .records
        .get(a.record)
        .ok_or_else(|| Error::invalid(format!("record {} out of range", a.record)))?;
    let configs = guard_configs(&a.opts, &manifest)?;
    let cfg = &configs[&record.model_id];
    let reference = match &manifest.generator {
        Some(info) => Some(reference_decoder_for(info, &record.model_id)?),
        None => None,
    };
    let stream = record
        .steps
        .iter()
        .zip(&record.latent_paths)
        .map(|(&s, p)| read_tensor(resolve(&a.dataset, p)).map(|z| (s, z)));
    let decision = run_guard(cfg, stream, reference.as_ref())?;
    let mut final_image_path = None;
    if let (Some(img), Some(path)) = (&decision.final_image, &a.final_image) {
        write_tensor(img, path)?;
        final_image_path = Some(path.display().to_string());
    }
    let mut json = serde_json::to_value(&decision)?;
    json["model_id"] = Value::from(record.model_id.clone());
    json["final_image_path"] = final_image_path.map(Value::from).unwrap_or(Value::Null);
    emit(&json)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let manifest = load_dataset(&a.dataset)?;
    let configs = guard_configs(&a.opts, &manifest)?;
    emit(&evaluate(&configs, &manifest, &a.dataset)?)
}

fn cmd_bench(a: BenchArgs, log: &Log) -> Result<()> {
    let opts = BenchOptions {
        latent_dims: a.latent_dims.0,
        image_dims: a.image_dims.0,
        hidden_channels: a.hidden_channels,
        batch_sizes: a.batch_sizes.0,
        repetitions: a.repetitions,
        seed: a.seed.seed,
    };
    log.say("building decoders and timing");
    let report = bench_decoders(&opts)?;
    if let Some(p) = &a.out {
        write_json(p, &report)?;
    }
    emit(&report)
}

fn dispatch(cli: Cli) -> Result<()> {
    let log = Log(cli.verbose);
    match cli.command {
        Command::Synth(a) => cmd_synth(a, &log),
        Command::FitDecoder(a) => cmd_fit(a, &log),
        Command::Decode(a) => cmd_decode(a),
        Command::Filter(a) => cmd_filter(a),
        Command::Train(a) => cmd_train(a, &log),
        Command::Guard(a) => cmd_guard(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a, &log),
    }
}

fn exit_code(e: &Error) -> i32 {
    if e.is_io() {
        EXIT_IO
    } else {
        EXIT_INVALID
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run(argv: Vec<OsString>) -> i32 {
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
