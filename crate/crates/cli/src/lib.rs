//! The `fcanet` command line: `prepare`, `train`, `eval`, `count` and
//! `gradcheck`.
//!
//! Exit codes: 0 success, 1 verification failure, 2 configuration or input
//! error, 3 numeric abort.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fcanet::config::{RunConfig, Settings};
use fcanet::data::{build_eval_sets, load_split, read_eval_sets, Manifest, NoisePool, Split, MANIFEST_FILE, NOISE_FILE};
use fcanet::gradsuite::{corrupted_case, model_cases, primitive_cases, run_suite, TOLERANCE};
use fcanet::model::{AttentionKind, FcaNet, ModelConfig, Placement};
use fcanet::seed::sha256_hex;
use fcanet::train::{accuracy, clean_features, extractor_for, fit, history_csv, TrainData, Trainer};
use fcanet::Error;

mod report;

pub use report::{footprint_csv, EvalReport, EvalRow, FOOTPRINT_HEADER};

pub const CHECKPOINT_FILE: &str = "checkpoint.fcan";
pub const HISTORY_FILE: &str = "history.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const FOOTPRINT_FILE: &str = "footprint.csv";
pub const GRADCHECK_FILE: &str = "gradcheck.csv";
/// Copy of the effective configuration written next to training artifacts.
pub const RUN_CONFIG_FILE: &str = "run.cfg";

#[derive(Debug, Parser)]
#[command(name = "fcanet", version, about = "Small-footprint keyword spotting")]
pub struct Cli {
    /// Flat `key = value` configuration file; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan the corpora, write the manifest and the five evaluation sets.
    Prepare,
    /// Train on the prepared manifest; writes the best checkpoint and the
    /// per-epoch history.
    Train {
        /// Start from these weights instead of a fresh initialization.
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
    },
    /// Top-1 accuracy of a checkpoint under every test condition.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Directory holding the evaluation sets; defaults to `data_dir`.
        #[arg(long, value_name = "DIR")]
        eval_dir: Option<PathBuf>,
    },
    /// Parameter and MAC counts without training.
    Count {
        /// Report the baseline and every attention/placement variant.
        #[arg(long)]
        all: bool,
    },
    /// Finite-difference check of every primitive and every tiny variant.
    Gradcheck {
        /// Add a case with a deliberately broken backward pass.
        #[arg(long, hide = true)]
        corrupt: bool,
    },
}

/// Why a command did not succeed.
#[derive(Debug)]
pub enum Failure {
    /// The command ran but its checks did not hold.
    Verification(String),
    Run(Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Verification(_) => 1,
            Failure::Run(Error::Numeric(_)) => 3,
            Failure::Run(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Verification(m) => write!(f, "verification failed: {m}"),
            Failure::Run(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Run(Error::Io(e))
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Parses `args`, runs the command and maps the result to an exit code.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let stdout = io::stdout();
    match run(&cli, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Outcome {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out_dir = |fallback: &Path| cli.out.clone().unwrap_or_else(|| fallback.to_path_buf());
    match &cli.command {
        Command::Prepare => prepare(&cfg, &out_dir(&cfg.data_dir), out),
        Command::Train { resume } => train(&cfg, resume.as_deref(), &out_dir(Path::new("out")), out),
        Command::Eval { checkpoint, eval_dir } => {
            let explicit = cli.config.is_some().then_some(&cfg.model);
            let dir = eval_dir.clone().unwrap_or_else(|| cfg.data_dir.clone());
            evaluate(&cfg, explicit, checkpoint, &dir, &out_dir(Path::new("out")), out)
        }
        Command::Count { all } => count(&cfg.model, *all, &out_dir(Path::new("out")), out),
        Command::Gradcheck { corrupt } => gradcheck(cfg.seed, *corrupt, cli.out.as_deref(), out),
    }
}

fn create_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())).into())
}

pub fn prepare(cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> Outcome {
    let manifest = Manifest::scan(&cfg.speech_dir, &cfg.noise_dir)?;
    create_dir(dir)?;
    manifest.write(dir)?;
    let noise = NoisePool::load(&manifest, &cfg.noise_dir)?;
    for split in Split::ALL {
        writeln!(out, "{split:<6} {} clips", manifest.split(split).count())?;
    }
    writeln!(out, "noise  {} files", manifest.noise.len())?;
    for file in [MANIFEST_FILE, NOISE_FILE] {
        writeln!(out, "{}  {file}", sha256_hex(&fs::read(dir.join(file))?))?;
    }
    let test = load_split(&manifest, &cfg.speech_dir, Split::Test, &noise, cfg.silence_fraction, cfg.seed)?;
    for set in build_eval_sets(&test, &noise, cfg.seed)? {
        let digest = set.write(dir)?;
        writeln!(out, "{digest}  {}.bin", set.file_stem())?;
    }
    Ok(())
}

/// Names the keys on which two model configurations differ.
fn config_diff(expected: &ModelConfig, found: &ModelConfig) -> Vec<String> {
    expected
        .pairs()
        .into_iter()
        .zip(found.pairs())
        .filter(|(a, b)| a.1 != b.1)
        .map(|((key, a), (_, b))| format!("{key} ({a} vs {b})"))
        .collect()
}

fn check_matches(cfg: &ModelConfig, net: &FcaNet, checkpoint: &Path) -> Outcome {
    let diff = config_diff(cfg, net.config());
    if diff.is_empty() {
        return Ok(());
    }
    Err(Error::Config(format!(
        "checkpoint {} does not match the configured model: {}",
        checkpoint.display(),
        diff.join(", ")
    ))
    .into())
}

pub fn train(cfg: &RunConfig, resume: Option<&Path>, dir: &Path, out: &mut dyn Write) -> Outcome {
    let manifest = Manifest::read(&cfg.data_dir)?;
    manifest.validate(Some(&cfg.speech_dir), Some(&cfg.noise_dir))?;
    let noise = NoisePool::load(&manifest, &cfg.noise_dir)?;
    let load = |split| load_split(&manifest, &cfg.speech_dir, split, &noise, cfg.silence_fraction, cfg.seed);
    let (train, val) = (load(Split::Train)?, load(Split::Val)?);
    let net = match resume {
        Some(path) => {
            let net = FcaNet::load(path)?;
            check_matches(&cfg.model, &net, path)?;
            net
        }
        None => FcaNet::build(&cfg.model, cfg.seed)?,
    };
    writeln!(out, "{}: {}", cfg.model.variant_name(), net.footprint())?;
    writeln!(out, "{} training clips, {} validation clips", train.len(), val.len())?;
    let data = TrainData { train, val, noise };
    let mut trainer = Trainer::new(net, &cfg.train, &data, cfg.seed)?;
    let outcome = fit(&mut trainer, &cfg.train, |r| {
        let _ = writeln!(
            out,
            "epoch {:>3}  stage {}  lr {:.6}  loss {:.4}  train {:.2}%  val {:.2}%",
            r.epoch,
            r.stage,
            r.lr,
            r.train_loss,
            100.0 * r.train_acc,
            100.0 * r.val_acc
        );
    })?;
    create_dir(dir)?;
    fs::write(dir.join(CHECKPOINT_FILE), &outcome.best)?;
    fs::write(dir.join(HISTORY_FILE), history_csv(&outcome.history))?;
    fs::write(dir.join(RUN_CONFIG_FILE), cfg.to_text())?;
    writeln!(out, "best epoch {} with val {:.2}%", outcome.best_epoch, 100.0 * outcome.best_val)?;
    Ok(())
}

pub fn evaluate(
    cfg: &RunConfig,
    expected: Option<&ModelConfig>,
    checkpoint: &Path,
    eval_dir: &Path,
    dir: &Path,
    out: &mut dyn Write,
) -> Outcome {
    let net = FcaNet::load(checkpoint)?;
    if let Some(model) = expected {
        check_matches(model, &net, checkpoint)?;
    }
    let sets = read_eval_sets(eval_dir)?;
    let extractor = extractor_for(&net)?;
    let footprint = net.footprint();
    let mut report = EvalReport::default();
    for set in &sets {
        let features = clean_features(&extractor, &set.clips)?;
        let labels: Vec<usize> = set.clips.iter().map(|c| c.label).collect();
        let acc = accuracy(&net, &features, &labels, cfg.eval_batch)?;
        report.push(net.config(), footprint, set.condition.label(), acc);
    }
    create_dir(dir)?;
    fs::write(dir.join(EVAL_FILE), report.to_csv())?;
    write!(out, "{}", report.render())?;
    Ok(())
}

/// The configured variant, or the baseline and every attention/placement
/// combination built on the same backbone.
pub fn variants(model: &ModelConfig, all: bool) -> Vec<ModelConfig> {
    if !all {
        return vec![model.clone()];
    }
    let mut out = vec![model.with_attention(AttentionKind::None, Placement::None)];
    for kind in AttentionKind::MODULES {
        out.extend(Placement::INSERTING.iter().map(|&p| model.with_attention(kind, p)));
    }
    out
}

pub fn count(model: &ModelConfig, all: bool, dir: &Path, out: &mut dyn Write) -> Outcome {
    let mut rows = Vec::new();
    for cfg in variants(model, all) {
        let footprint = FcaNet::build(&cfg, 0)?.footprint();
        rows.push((cfg, footprint));
    }
    for (cfg, f) in &rows {
        writeln!(out, "{:<20} {f}", cfg.variant_name())?;
    }
    create_dir(dir)?;
    fs::write(dir.join(FOOTPRINT_FILE), footprint_csv(&rows))?;
    Ok(())
}

pub fn gradcheck(seed: u64, corrupt: bool, dir: Option<&Path>, out: &mut dyn Write) -> Outcome {
    let mut cases = primitive_cases();
    cases.extend(model_cases(seed));
    if corrupt {
        cases.push(corrupted_case());
    }
    let results = run_suite(&cases)?;
    let mut csv = String::from("case,seeds,coords,max_rel_error,passed\n");
    for r in &results {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        writeln!(out, "{:<24} seeds {:>2}  coords {:>5}  max rel err {:.3e}  {verdict}", r.name, r.seeds, r.coords, r.max_rel_error)?;
        csv.push_str(&format!("{},{},{},{:e},{}\n", r.name, r.seeds, r.coords, r.max_rel_error, r.passed()));
    }
    if let Some(dir) = dir {
        create_dir(dir)?;
        fs::write(dir.join(GRADCHECK_FILE), csv)?;
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    writeln!(out, "{} cases, {} above {TOLERANCE:e}", results.len(), failed.len())?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verification(format!("gradient mismatch in {}", failed.join(", "))))
    }
}
