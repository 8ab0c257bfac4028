//! The `dialopre` pipeline: corpus ingestion through pretraining, task
//! generation, evaluation and the numeric self-checks.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod report;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{resolve, RunConfig, SEED_ENV};
pub use crate::error::CliError;
use crate::manifest::{sha256_file, Manifest, Stage};

#[derive(Parser, Debug)]
#[command(name = "dialopre", version, about = "Multilingual dialog pretraining pipeline")]
pub struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Directory holding earlier stages' outputs (defaults to --out).
    #[arg(long, global = true, value_name = "DIR")]
    pub input: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Default)]
pub struct CorpusArg {
    /// Directory of `<movie>.<lang>.jsonl` and `<movie>.<a>-<b>.align.jsonl` files.
    #[arg(long, value_name = "DIR")]
    pub corpus: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic English/French corpus.
    Synth {
        #[arg(long)]
        movies: Option<usize>,
    },
    /// Parse subtitle streams.
    Ingest {
        #[command(flatten)]
        corpus: CorpusArg,
    },
    /// Split streams into conversations at long silences.
    Segment {
        #[arg(long)]
        delta_t_ms: Option<i64>,
    },
    /// Build the word vocabulary.
    Vocab {
        #[arg(long)]
        max_vocab: Option<usize>,
    },
    /// Window contexts, join alignments and split movies.
    Align {
        #[command(flatten)]
        corpus: CorpusArg,
        #[arg(long)]
        min_conf: Option<f64>,
        #[arg(long)]
        context_size: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Pretrain the hierarchical encoder.
    Pretrain {
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        warmup: Option<u64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Comma-separated subset of MUG, TMUG, MMUG.
        #[arg(long)]
        modes: Option<String>,
    },
    /// Generate ii, mii, nur or mnur instances from held-out movies.
    MakeTasks {
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        p_lprime: Option<f64>,
        #[arg(long)]
        distractors: Option<usize>,
    },
    /// Score task instances and write a metrics file.
    Evaluate {
        #[arg(long)]
        task: Option<String>,
        /// `model` or `random`.
        #[arg(long)]
        scorer: Option<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        finetune_steps: Option<u64>,
    },
    /// Check InfoNCE bounds against exact MI on random joints.
    MiCheck {
        #[arg(long)]
        joints: Option<usize>,
    },
    /// Compare analytic gradients with finite differences.
    GradCheck {
        #[arg(long)]
        coordinates: Option<usize>,
        /// Inject a known backward bug.
        #[arg(long)]
        fault: bool,
    },
    /// Summary tables over metrics files.
    Report {
        files: Vec<PathBuf>,
    },
    /// Re-run a stage from its manifest into --out and compare outputs.
    Replay {
        manifest: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Ingest { .. } => "ingest",
            Command::Segment { .. } => "segment",
            Command::Vocab { .. } => "vocab",
            Command::Align { .. } => "align",
            Command::Pretrain { .. } => "pretrain",
            Command::MakeTasks { .. } => "make-tasks",
            Command::Evaluate { .. } => "evaluate",
            Command::MiCheck { .. } => "mi-check",
            Command::GradCheck { .. } => "grad-check",
            Command::Report { .. } => "report",
            Command::Replay { .. } => "replay",
        }
    }

    /// Typed flags as config overrides.
    fn overrides(&self) -> Vec<(String, String)> {
        let mut o = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push((k.to_string(), v));
            }
        };
        let s = |v: &Option<PathBuf>| v.as_ref().map(|p| p.display().to_string());
        match self {
            Command::Synth { movies } => put("synth_movies", movies.map(|v| v.to_string())),
            Command::Ingest { corpus } => put("corpus_dir", s(&corpus.corpus)),
            Command::Segment { delta_t_ms } => put("delta_t_ms", delta_t_ms.map(|v| v.to_string())),
            Command::Vocab { max_vocab } => put("max_vocab", max_vocab.map(|v| v.to_string())),
            Command::Align { corpus, min_conf, context_size, stride } => {
                put("corpus_dir", s(&corpus.corpus));
                put("min_conf", min_conf.map(|v| v.to_string()));
                put("context_size", context_size.map(|v| v.to_string()));
                put("stride", stride.map(|v| v.to_string()));
            }
            Command::Pretrain { steps, lr, warmup, batch_size, modes } => {
                put("steps", steps.map(|v| v.to_string()));
                put("lr", lr.map(|v| v.to_string()));
                put("warmup", warmup.map(|v| v.to_string()));
                put("batch_size", batch_size.map(|v| v.to_string()));
                put("modes", modes.clone());
            }
            Command::MakeTasks { task, count, p_lprime, distractors } => {
                put("task", task.clone());
                put("task_count", count.map(|v| v.to_string()));
                put("p_lprime", p_lprime.map(|v| v.to_string()));
                put("distractors", distractors.map(|v| v.to_string()));
            }
            Command::Evaluate { task, scorer, checkpoint, label, finetune_steps } => {
                put("task", task.clone());
                put("scorer", scorer.clone());
                put("checkpoint", s(checkpoint));
                put("label", label.clone());
                put("finetune_steps", finetune_steps.map(|v| v.to_string()));
            }
            Command::MiCheck { joints } => put("joints", joints.map(|v| v.to_string())),
            Command::GradCheck { coordinates, fault } => {
                put("coordinates", coordinates.map(|v| v.to_string()));
                put("fault", fault.then(|| "true".to_string()));
            }
            Command::Report { .. } | Command::Replay { .. } => {}
        }
        o
    }
}

fn absolute(p: &str) -> Result<String, CliError> {
    if p.is_empty() {
        return Ok(String::new());
    }
    let path = Path::new(p);
    let abs = if path.is_absolute() { path.to_path_buf() } else { std::env::current_dir()?.join(path) };
    Ok(abs.display().to_string())
}

/// Absolute paths, so that the manifest's config snapshot can be replayed
/// from any working directory.
fn absolutize(cfg: &mut RunConfig) -> Result<(), CliError> {
    cfg.corpus_dir = absolute(&cfg.corpus_dir)?;
    cfg.out_dir = absolute(&cfg.out_dir)?;
    cfg.input_dir = absolute(&cfg.input_dir)?;
    cfg.checkpoint = absolute(&cfg.checkpoint)?;
    Ok(())
}

fn dispatch(name: &str, cfg: RunConfig, files: &[PathBuf]) -> Result<Manifest, CliError> {
    let stage = Stage::begin(name, cfg)?;
    match name {
        "synth" => commands::synth(stage),
        "ingest" => commands::ingest(stage),
        "segment" => commands::segment(stage),
        "vocab" => commands::vocab(stage),
        "align" => commands::align(stage),
        "pretrain" => commands::pretrain_cmd(stage),
        "make-tasks" => commands::make_tasks(stage),
        "evaluate" => commands::evaluate(stage),
        "mi-check" => commands::mi_check(stage),
        "grad-check" => commands::grad_check(stage),
        "report" => commands::report(stage, files),
        other => Err(CliError::Usage(format!("cannot replay `{other}`"))),
    }
}

/// Re-run the manifest's stage with its recorded config, reading inputs
/// from their original place and writing into `out`, then compare every
/// output hash.
pub fn replay(manifest_path: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let recorded = Manifest::read(manifest_path)?;
    let changed = recorded.changed_inputs();
    if !changed.is_empty() {
        return Err(CliError::data(format!("inputs changed since the manifest was written: {}", changed.join(", "))));
    }
    let out = out.ok_or_else(|| CliError::Usage("replay needs --out for the fresh outputs".into()))?;
    let mut cfg = recorded.config.clone();
    if cfg.input_dir.is_empty() {
        cfg.input_dir = cfg.out_dir.clone();
    }
    cfg.out_dir = absolute(&out.display().to_string())?;
    if cfg.out_dir == cfg.input_dir {
        return Err(CliError::Usage("replay must write to a directory other than the original".into()));
    }
    let files: Vec<PathBuf> = recorded.inputs.iter().map(|f| PathBuf::from(&f.path)).collect();
    dispatch(&recorded.command, cfg, &files)?;
    for f in &recorded.outputs {
        let fresh = Path::new(out).join(&f.path);
        let hash = sha256_file(&fresh).map_err(|e| CliError::data(format!("{}: {e}", fresh.display())))?;
        if hash != f.sha256 {
            return Err(CliError::data(format!("replay of `{}` diverged at {}", recorded.command, f.path)));
        }
    }
    println!("replay of `{}`: {} outputs byte-identical", recorded.command, recorded.outputs.len());
    Ok(())
}

pub fn run_cli(cli: Cli) -> Result<(), CliError> {
    if let Command::Replay { manifest } = &cli.command {
        return replay(manifest, cli.out.as_deref());
    }
    let mut overrides = Vec::new();
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = cli.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(out) = &cli.out {
        overrides.push(("out_dir".into(), out.display().to_string()));
    }
    if let Some(input) = &cli.input {
        overrides.push(("input_dir".into(), input.display().to_string()));
    }
    overrides.extend(cli.command.overrides());
    let env_seed = std::env::var(SEED_ENV).ok();
    let mut cfg = resolve(cli.config.as_deref(), env_seed.as_deref(), &overrides)?;
    absolutize(&mut cfg)?;
    let files = match &cli.command {
        Command::Report { files } => files.clone(),
        _ => Vec::new(),
    };
    dispatch(cli.command.name(), cfg, &files).map(|_| ())
}

/// Parse arguments, run, and map the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run_cli(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
