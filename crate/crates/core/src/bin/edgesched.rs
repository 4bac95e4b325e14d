use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use edgesched::experiment::{
    prepare_run_dir, run_eval, run_suite, run_training, write_eval, write_training, Agents, ExperimentConfig,
    SuiteName,
};
use edgesched::workload::PatternKind;
use edgesched::{Error, Result};

/// Edge-cloud scheduling simulator: train, evaluate and sweep dispatch and
/// orchestration policies.
#[derive(Parser)]
#[command(name = "edgesched", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Curriculum training; writes the learning curve and checkpoints.
    Train(Common),
    /// Greedy-mode evaluation; writes per-sequence summaries and frames.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory from a training run; fresh networks if absent.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Runs an experiment grid: patterns, dequeue, load_balance,
    /// hyper_sweep or baselines.
    Suite {
        name: String,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// TOML config; defaults to the desk topology.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the 5 x 8 node, 30-service preset instead of the desk one.
    #[arg(long)]
    large: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
    /// p1, p2, p3, p4 or file.
    #[arg(long)]
    pattern: Option<String>,
    /// Trace CSV replayed with `--pattern file`.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Mean arrivals per slot at full rate.
    #[arg(long)]
    base_rate: Option<f64>,
    #[arg(long)]
    episodes: Option<usize>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None if self.large => ExperimentConfig::large(),
            None => ExperimentConfig::desk(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(p) = &self.pattern {
            cfg.workload.pattern = p.parse::<PatternKind>()?;
        }
        if let Some(t) = &self.trace {
            cfg.workload.trace = Some(t.clone());
        }
        if let Some(r) = self.base_rate {
            cfg.workload.base_rate = r;
        }
        if let Some(e) = self.episodes {
            cfg.training.episodes = e;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn train(common: &Common) -> Result<()> {
    let cfg = common.config()?;
    prepare_run_dir(&common.out, &cfg)?;
    let outcome = run_training(&cfg)?;
    write_training(&common.out, &outcome)?;
    let last = outcome.curve.last().map_or(0.0, |r| r.mean_phi_f);
    println!("trained {} episodes; last mean phi_f {last:.4}; wrote {}", outcome.curve.len(), common.out.display());
    Ok(())
}

fn eval(common: &Common, checkpoints: Option<&Path>) -> Result<()> {
    let cfg = common.config()?;
    let mut agents = Agents::new(&cfg)?;
    if let Some(dir) = checkpoints {
        agents.load(dir)?;
    }
    prepare_run_dir(&common.out, &cfg)?;
    let outcome = run_eval(&cfg, &mut agents)?;
    write_eval(&common.out, &outcome)?;
    println!("mean phi_f {:.4} over {} sequences; wrote {}", outcome.mean_phi_f(), outcome.sequences.len(), common.out.display());
    Ok(())
}

fn suite(name: &str, common: &Common) -> Result<()> {
    let suite: SuiteName = name.parse()?;
    let cfg = common.config()?;
    let rows = run_suite(suite, &cfg, &common.out)?;
    for r in &rows {
        println!("{:<28} seed {:<4} mean phi_f {:.4}", r.cell, r.seed, r.mean_phi_f);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(common) => train(common),
        Command::Eval { common, checkpoints } => eval(common, checkpoints.as_deref()),
        Command::Suite { name, common } => suite(name, common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } | Error::Validation(_) | Error::Parse { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
