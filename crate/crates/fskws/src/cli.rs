//! The `fskws` command line: `synth`, `train`, `eval` and `classify`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fskws_core::features::{FeatureMatrix, Mfcc};
use fskws_core::nets::ArchKind;
use fskws_core::protonet::{compute_prototypes, episode_log_probs, squared_euclidean};
use fskws_core::tensor::{Mode, Tape};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::{synthesize_manifest, Manifest, ManifestSource, SynthConfig};
use crate::trainer::{evaluate, results_csv, sweep_shots, train, Case, Checkpoint, Profile, ResultRow, TrainConfig, TrainError};
use crate::wav;

pub const DATA_DIR_ENV: &str = "FSKWS_DATA_DIR";

#[derive(Debug, Parser)]
#[command(name = "fskws", version, about = "Few-shot keyword spotting with prototypical networks")]
pub struct Cli {
    /// TOML file with [synth], [train] and [features] tables; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Log more (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the few-shot dataset manifest from a Speech Commands root.
    Synth(SynthArgs),
    /// Train an embedding network episodically.
    Train(TrainArgs),
    /// Evaluate a checkpoint on test episodes, optionally sweeping the shot count.
    Eval(EvalArgs),
    /// Classify one clip against user-provided keyword examples.
    Classify(ClassifyArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Speech Commands root [default: $FSKWS_DATA_DIR]
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output folder for manifest, report and silence clips [default: $FSKWS_DATA_DIR]
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

const ARCH_NAMES: [&str; 4] = ["td-resnet7", "tc-resnet8", "cnn-trad-fpool3", "c64"];
const CASE_NAMES: [&str; 5] = ["a", "b", "c-unknown", "c-silence", "d"];

fn arch_parser() -> impl clap::builder::TypedValueParser<Value = ArchKind> {
    PossibleValuesParser::new(ARCH_NAMES).map(|s| s.parse::<ArchKind>().expect("listed names parse"))
}

fn case_parser() -> impl clap::builder::TypedValueParser<Value = Case> {
    PossibleValuesParser::new(CASE_NAMES).map(|s| s.parse::<Case>().expect("listed names parse"))
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProfileArg {
    Full,
    Desk,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Manifest file [default: $FSKWS_DATA_DIR/manifest.jsonl]
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_parser = arch_parser())]
    pub arch: Option<ArchKind>,
    #[arg(long, value_parser = case_parser())]
    pub case: Option<Case>,
    #[arg(long)]
    pub n_way: Option<usize>,
    #[arg(long)]
    pub k_shot: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "full")]
    pub profile: ProfileArg,
    /// Where to write the best-validation checkpoint.
    #[arg(long, default_value = "fskws.ckpt")]
    pub checkpoint: PathBuf,
    /// Training log (JSON lines) [default: <checkpoint>.log.jsonl]
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest file [default: $FSKWS_DATA_DIR/manifest.jsonl]
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Comma-separated support sizes to evaluate, e.g. 1,2,3,4,5
    #[arg(long, value_delimiter = ',')]
    pub k_shot_sweep: Option<Vec<usize>>,
    #[arg(long)]
    pub n_way: Option<usize>,
    #[arg(long)]
    pub k_shot: Option<usize>,
    #[arg(long, value_parser = case_parser())]
    pub case: Option<Case>,
    /// Evaluation seed [default: the training seed]
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Folder with one subfolder of one-second WAV examples per keyword.
    #[arg(long)]
    pub support: PathBuf,
    /// One-second WAV to classify.
    #[arg(long)]
    pub query: PathBuf,
}

/// Parsed `--config` file. Each table is merged over the command's defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    synth: Option<toml::Table>,
    train: Option<toml::Table>,
    features: Option<toml::Table>,
}

fn read_config(path: Option<&Path>) -> Result<ConfigFile> {
    let Some(path) = path else { return Ok(ConfigFile::default()) };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn merge(base: &mut toml::Table, patch: &toml::Table) {
    for (k, v) in patch {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(p)) => merge(b, p),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

/// `base` with `patch` laid over it; keys unknown to `T` are rejected.
fn overlay<T: Serialize + DeserializeOwned>(base: &T, patch: Option<&toml::Table>) -> Result<T> {
    let Some(patch) = patch else { return Ok(toml::Value::try_from(base)?.try_into()?) };
    let mut table = toml::Table::try_from(base).context("serializing defaults")?;
    merge(&mut table, patch);
    toml::Value::Table(table).try_into().context("invalid configuration value")
}

fn data_dir() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)
}

fn or_data_dir(arg: Option<PathBuf>, file: Option<&str>, what: &str) -> Result<PathBuf> {
    arg.or_else(|| data_dir().map(|d| file.map_or(d.clone(), |f| d.join(f))))
        .ok_or_else(|| anyhow!("no {what} given and {DATA_DIR_ENV} is not set"))
}

/// Process exit code for an error: 3 for numeric failures, 2 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let numeric = err.chain().any(|e| matches!(e.downcast_ref::<TrainError>(), Some(TrainError::NanLoss { .. })));
    if numeric {
        3
    } else {
        2
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let file = read_config(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(args) => cmd_synth(args, &file, out),
        Command::Train(args) => cmd_train(args, &file, out),
        Command::Eval(args) => cmd_eval(args, &file, out),
        Command::Classify(args) => cmd_classify(args, out),
    }
}

fn cmd_synth(args: SynthArgs, file: &ConfigFile, out: &mut dyn Write) -> Result<()> {
    let input = or_data_dir(args.input, None, "--input")?;
    let output = or_data_dir(args.output, None, "--output")?;
    let cfg: SynthConfig = overlay(&SynthConfig::default(), file.synth.as_ref())?;
    let result = synthesize_manifest(&input, &output, args.seed, &cfg)?;
    write!(out, "{}", result.report.table())?;
    writeln!(out, "manifest: {}", result.manifest_path.display())?;
    writeln!(out, "report: {}", result.report_path.display())?;
    Ok(())
}

fn train_config(file: &ConfigFile, base: TrainConfig) -> Result<TrainConfig> {
    let mut cfg = overlay(&base, file.train.as_ref())?;
    cfg.features = overlay(&cfg.features, file.features.as_ref())?;
    Ok(cfg)
}

fn cmd_train(args: TrainArgs, file: &ConfigFile, out: &mut dyn Write) -> Result<()> {
    let profile = match args.profile {
        ProfileArg::Full => Profile::Full,
        ProfileArg::Desk => Profile::Desk,
    };
    let mut cfg = train_config(file, TrainConfig::for_profile(profile))?;
    cfg.arch = args.arch.unwrap_or(cfg.arch);
    cfg.case = args.case.unwrap_or(cfg.case);
    cfg.n_way = args.n_way.unwrap_or(cfg.n_way);
    cfg.k_shot = args.k_shot.unwrap_or(cfg.k_shot);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.validate().map_err(|e| anyhow!("invalid configuration: {e}"))?;

    let manifest_path = or_data_dir(args.manifest, Some("manifest.jsonl"), "--manifest")?;
    let manifest = Manifest::load(&manifest_path)?;
    let source = ManifestSource::new(&manifest, cfg.features.clone())?;

    let log_path = args.log.unwrap_or_else(|| {
        let mut p = args.checkpoint.clone().into_os_string();
        p.push(".log.jsonl");
        p.into()
    });
    let mut log = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let provenance = serde_json::json!({
        "tool_version": env!("CARGO_PKG_VERSION"),
        "command": "train",
        "seed": cfg.seed,
        "manifest_synthesis_seed": manifest.header.synthesis_seed,
        "config": cfg,
    });
    writeln!(log, "{provenance}")?;
    let mut write_err = None;
    let outcome = train(&source, &cfg, &mut |record| {
        if let Err(e) = writeln!(log, "{}", serde_json::to_string(record).expect("log record serializes")) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e).with_context(|| format!("writing {}", log_path.display()));
    }
    outcome.best.save(&args.checkpoint)?;
    writeln!(
        out,
        "best epoch {} val acc {:.4}; checkpoint {}; log {}",
        outcome.best.epoch,
        outcome.best.val_accuracy,
        args.checkpoint.display(),
        log_path.display()
    )?;
    Ok(())
}

fn cmd_eval(args: EvalArgs, file: &ConfigFile, out: &mut dyn Write) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let mut cfg = train_config(file, ckpt.train_config.clone())?;
    cfg.arch = ckpt.network.kind();
    cfg.n_way = args.n_way.unwrap_or(cfg.n_way);
    cfg.k_shot = args.k_shot.unwrap_or(cfg.k_shot);
    cfg.case = args.case.unwrap_or(cfg.case);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.test_episodes = args.episodes.unwrap_or(cfg.test_episodes);
    cfg.validate().map_err(|e| anyhow!("invalid configuration: {e}"))?;

    let manifest_path = or_data_dir(args.manifest, Some("manifest.jsonl"), "--manifest")?;
    let manifest = Manifest::load(&manifest_path)?;
    let source = ManifestSource::new(&manifest, cfg.features.clone())?;
    let results = match &args.k_shot_sweep {
        Some(shots) => {
            let mut shots = shots.clone();
            shots.sort_unstable();
            shots.dedup();
            sweep_shots(&ckpt.network, &source, &cfg, &shots)?
        }
        None => vec![(cfg.k_shot, evaluate(&ckpt.network, &source, &cfg)?)],
    };
    let rows: Vec<ResultRow> =
        results.iter().map(|(k, r)| ResultRow::new(&TrainConfig { k_shot: *k, ..cfg.clone() }, r)).collect();
    let provenance = serde_json::json!({
        "tool_version": env!("CARGO_PKG_VERSION"),
        "command": "eval",
        "seed": cfg.seed,
        "manifest_synthesis_seed": manifest.header.synthesis_seed,
        "checkpoint_epoch": ckpt.epoch,
        "checkpoint_val_accuracy": ckpt.val_accuracy,
        "config": cfg,
    });
    let csv = results_csv(&provenance, &rows);
    let summary: String = rows
        .iter()
        .map(|r| format!("{}-way {}-shot: {:.4} ± {:.4} (core only {:.4})\n", r.n_way, r.k_shot, r.mean_acc, r.ci95, r.core_only_acc))
        .collect();
    match &args.output {
        Some(path) => {
            fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
            write!(out, "{summary}")?;
        }
        None => {
            write!(out, "{csv}")?;
            eprint!("{summary}");
        }
    }
    Ok(())
}

fn load_one_second(path: &Path, mfcc: &Mfcc) -> Result<FeatureMatrix> {
    let clip = wav::load_clip(path)?;
    if clip.len() < fskws_core::audio::CLIP_LEN {
        bail!("{}: {} samples, need a one-second clip", path.display(), clip.len());
    }
    Ok(mfcc.compute(&clip.truncated_to_one_second())?)
}

fn cmd_classify(args: ClassifyArgs, out: &mut dyn Write) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let mfcc = Mfcc::new(ckpt.train_config.features.clone())?;
    let layout = ckpt.network.layout();

    let mut names = Vec::new();
    let mut support = Vec::new();
    let mut labels = Vec::new();
    let mut dirs: Vec<PathBuf> = fs::read_dir(&args.support)
        .with_context(|| format!("reading {}", args.support.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for dir in dirs {
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        if files.is_empty() {
            bail!("support folder {} has no WAV files", dir.display());
        }
        files.sort();
        for f in files {
            support.push(load_one_second(&f, &mfcc)?.with_layout(layout));
            labels.push(names.len());
        }
        names.push(dir.file_name().unwrap_or_default().to_string_lossy().into_owned());
    }
    if names.is_empty() {
        bail!("{} has no keyword subfolders", args.support.display());
    }
    let query = load_one_second(&args.query, &mfcc)?.with_layout(layout);

    let mut net = ckpt.network.clone();
    let mut tape = Tape::new();
    let x = tape.constant(net.input_tensor(support.iter().chain(std::iter::once(&query)))?);
    let emb = net.forward(&mut tape, x, Mode::Eval)?;
    let s_rows: Vec<usize> = (0..support.len()).collect();
    let s = tape.select_rows(emb, &s_rows)?;
    let q = tape.select_rows(emb, &[support.len()])?;
    let protos = compute_prototypes(&mut tape, s, &labels, names.len())?;
    let d = squared_euclidean(&mut tape, q, protos)?;
    let lp = episode_log_probs(&mut tape, d)?;
    let mut ranked: Vec<(f64, &str)> =
        tape.value(lp).data().iter().zip(&names).map(|(l, n)| (l.exp() as f64, n.as_str())).collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    writeln!(out, "prediction: {}", ranked[0].1)?;
    for (p, name) in ranked {
        writeln!(out, "{name}\t{p:.4}")?;
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
