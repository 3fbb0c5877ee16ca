use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sparse_meta::experiment::{
    checkpoint_path, evaluate_checkpoint, load_checkpoint, parse_config, resume_experiment, run_experiment, ExperimentConfig,
    RunSummary,
};

/// Meta-learned sparse gradient masks: few-shot, continual and online experiments.
#[derive(Parser)]
#[command(name = "sparse-meta", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Few-shot meta-training of the initialization and the mask.
    Fewshot(RunArgs),
    /// A task-incremental stream with replay and look-ahead updates.
    Continual(RunArgs),
    /// An online stream with unannounced task switches.
    Online(RunArgs),
    /// Mask-only meta-training on top of a pretrained few-shot initialization.
    Twophase(TwophaseArgs),
    /// Evaluate a saved checkpoint.
    Eval(EvalArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML config file; every key has a default.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set fewshot.alpha=0.05`. Repeatable.
    #[arg(short, long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (overrides `output.dir`).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Sets the model, task and stream seeds to this value plus 0, 1 and 2.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Meta-iterations (overrides `fewshot.iterations`).
    #[arg(long)]
    iterations: Option<u64>,
    /// Continue from a checkpoint; without a path, the output directory's checkpoint.
    #[arg(long, value_name = "CHECKPOINT")]
    resume: Option<Option<PathBuf>>,
}

#[derive(Args)]
struct TwophaseArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Few-shot checkpoint supplying the fixed initialization (overrides `output.pretrained`).
    #[arg(long)]
    pretrained: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint to evaluate.
    #[arg(long)]
    checkpoint: PathBuf,
}

fn quoted(path: &Path) -> Result<String> {
    let s = path.to_str().context("path is not valid UTF-8")?;
    Ok(serde_json::to_string(s)?)
}

fn load(common: &CommonArgs, regime: &str, mut extra: Vec<String>) -> Result<ExperimentConfig> {
    let text = match &common.config {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    let mut overrides = vec![format!("regime={regime}")];
    if let Some(seed) = common.seed {
        for (i, key) in ["model", "tasks", "stream"].iter().enumerate() {
            overrides.push(format!("seeds.{key}={}", seed.wrapping_add(i as u64)));
        }
    }
    overrides.extend(common.set.iter().cloned());
    overrides.append(&mut extra);
    if let Some(out) = &common.out {
        overrides.push(format!("output.dir={}", quoted(out)?));
    }
    let cfg = parse_config(&text, &overrides).with_context(|| match &common.config {
        Some(p) => format!("invalid configuration in {}", p.display()),
        None => "invalid configuration".to_owned(),
    })?;
    if cfg.regime.name() != regime {
        bail!("`regime` cannot be overridden for the `{regime}` subcommand");
    }
    Ok(cfg)
}

fn run(args: &RunArgs, regime: &str, mut extra: Vec<String>) -> Result<RunSummary> {
    if let Some(n) = args.iterations {
        extra.push(format!("fewshot.iterations={n}"));
    }
    let cfg = load(&args.common, regime, extra)?;
    let summary = match &args.resume {
        None => run_experiment(&cfg)?,
        Some(p) => {
            let path = p.clone().unwrap_or_else(|| checkpoint_path(&cfg));
            resume_experiment(&cfg, &path)?
        }
    };
    Ok(summary)
}

fn dispatch(cli: Cli) -> Result<RunSummary> {
    match cli.command {
        Command::Fewshot(a) => run(&a, "fewshot", vec![]),
        Command::Continual(a) => run(&a, "continual", vec![]),
        Command::Online(a) => run(&a, "online", vec![]),
        Command::Twophase(a) => {
            let extra = match &a.pretrained {
                Some(p) => vec![format!("output.pretrained={}", quoted(p)?)],
                None => vec![],
            };
            run(&a.run, "twophase", extra)
        }
        Command::Eval(a) => {
            let ckpt = load_checkpoint(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
            let cfg = load(&a.common, ckpt.regime.name(), vec![])?;
            Ok(evaluate_checkpoint(&cfg, &a.checkpoint)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
