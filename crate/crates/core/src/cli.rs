//! Command-line front end: train, train-selector, eval and replay.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use crate::config::{RunConfig, LAYOUT_FILE, OUT_ROOT_ENV, SNAPSHOT_FILE};
use crate::env::{ObservationLayout, TaskKind};
use crate::eval::{evaluate, write_eval, EvalOptions, EvalSetup, TrajectoryLog};
use crate::replay::{self, LogKind};

/// Tolerance for replayed cost terms against the logged values.
pub const REPLAY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Parser)]
#[command(name = "quadrl", version, about = "Quadruped locomotion RL: train, evaluate and replay")]
pub struct Cli {
    /// Root for relative output directories.
    #[arg(long, global = true, env = OUT_ROOT_ENV)]
    pub out_root: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Commands,
}

#[derive(Debug, Subcommand)]
pub enum Commands {
    /// Train a behavior policy with PPO.
    Train(TrainArgs),
    /// Train the behavior selector and the height estimator.
    TrainSelector(TrainArgs),
    /// Run a checkpoint deterministically and log trajectories.
    Eval(EvalArgs),
    /// Tabulate a trajectory log or turn a metrics file into plot series.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Resume from this checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Run config; defaults to the setup stored with the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub episodes: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Hold a 1.6 m/s forward command for 10 s.
    #[arg(long)]
    pub stress: bool,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Trajectory log or metrics file.
    pub file: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let root = cli.out_root.as_deref();
    match cli.command {
        Commands::Train(args) => cmd_train(&args, root, false),
        Commands::TrainSelector(args) => cmd_train(&args, root, true),
        Commands::Eval(args) => cmd_eval(&args, root),
        Commands::Replay(args) => cmd_replay(&args, root),
    }
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    match workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

fn same_file(a: &Path, b: &Path) -> bool {
    matches!((a.canonicalize(), b.canonicalize()), (Ok(x), Ok(y)) if x == y)
}

/// Writes the config snapshot and layout manifest that make a run
/// directory self-describing. The input config is never overwritten.
fn write_run_files(config: &RunConfig, config_path: &Path, out: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let snapshot = out.join(SNAPSHOT_FILE);
    if !same_file(&snapshot, config_path) {
        std::fs::write(&snapshot, config.snapshot().to_toml()?)
            .with_context(|| format!("writing {}", snapshot.display()))?;
    }
    let layout = out.join(LAYOUT_FILE);
    let manifest = ObservationLayout::manifest(config.env.history_len);
    std::fs::write(&layout, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("writing {}", layout.display()))?;
    Ok(())
}

fn cmd_train(args: &TrainArgs, root: Option<&Path>, selector: bool) -> anyhow::Result<()> {
    let mut config = RunConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    match (selector, config.task == TaskKind::Selector) {
        (true, false) => bail!("train-selector needs task = \"selector\", config has \"{}\"", config.task),
        (false, true) => bail!("the selector task is trained with train-selector"),
        _ => {}
    }
    let out = config.output_dir(args.out.as_deref(), root);
    let resume = args.checkpoint.as_deref();
    if selector {
        let setup = config.selector_setup()?;
        write_run_files(&config, &args.config, &out)?;
        let summary = with_workers(config.workers, || crate::selector::train_selector(&setup, &out, resume))??;
        if let Some(last) = summary.metrics.last() {
            println!(
                "iteration {}: reward {:.4}, estimator holdout mse {:.3e}",
                last.iteration, last.average_ll_reward, last.estimator_holdout_mse
            );
        }
    } else {
        let setup = config.train_setup()?;
        write_run_files(&config, &args.config, &out)?;
        let summary = with_workers(config.workers, || crate::ppo::train(&setup, &out, resume))??;
        if let Some(last) = summary.metrics.last() {
            println!(
                "iteration {}: reward {:.4}, surrogate loss {:.4}, value loss {:.4}",
                last.iteration, last.average_ll_reward, last.surrogate_loss, last.value_loss
            );
        }
    }
    println!("run directory: {}", out.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs, root: Option<&Path>) -> anyhow::Result<()> {
    let (setup, config_seed, workers) = match &args.config {
        Some(path) => {
            let config = RunConfig::from_file(path)?;
            let setup = if config.task == TaskKind::Selector {
                EvalSetup::Selector(config.selector_setup()?)
            } else {
                EvalSetup::Behavior(config.train_setup()?)
            };
            (setup, config.seed, config.workers)
        }
        None => (EvalSetup::from_checkpoint(&args.checkpoint)?, 0, None),
    };
    let options = EvalOptions {
        episodes: args.episodes,
        seed: args.seed.unwrap_or(config_seed),
        stress: args.stress,
    };
    let (summary, logs) = with_workers(workers, || evaluate(&args.checkpoint, setup, &options))??;
    let out = match &args.out {
        Some(p) => p.clone(),
        None => {
            let stem = args.checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
            let kind = if options.stress { "stress" } else { "eval" };
            let dir = PathBuf::from(format!("runs/{kind}-{stem}-seed{}", options.seed));
            root.map_or(dir.clone(), |r| r.join(dir))
        }
    };
    write_eval(&out, &summary, &logs)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    println!("eval directory: {}", out.display());
    Ok(())
}

fn cmd_replay(args: &ReplayArgs, root: Option<&Path>) -> anyhow::Result<()> {
    let out = args.out.clone().unwrap_or_else(|| {
        let stem = args.file.file_stem().and_then(|s| s.to_str()).unwrap_or("log");
        let dir = PathBuf::from(format!("replay-{stem}"));
        root.map_or(dir.clone(), |r| r.join(dir))
    });
    match replay::detect(&args.file)? {
        LogKind::Empty => {}
        LogKind::Trajectory => {
            let log = TrajectoryLog::read(&args.file)?;
            let deviation = replay::recompute_deviation(&log)?;
            if deviation > REPLAY_TOLERANCE {
                bail!("recomputed costs differ from the log by {deviation:.3e}");
            }
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let path = out.join("steps.tsv");
            std::fs::write(&path, replay::step_table(&log)).with_context(|| format!("writing {}", path.display()))?;
            println!("{} steps, max cost deviation {deviation:.3e}", log.records.len());
            println!("wrote {}", path.display());
        }
        LogKind::Metrics => {
            for path in replay::metric_series(&args.file, &out)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}
