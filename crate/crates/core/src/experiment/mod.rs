//! Training and evaluation driver: configuration, the two-time-scale
//! loop, curriculum training, run directories and experiment suites.
//!
//! A run directory holds `config.toml` (the full effective configuration;
//! rerunning from it reproduces every CSV bit for bit), `seed.txt`,
//! `git_describe.txt` and the CSVs of the run: `learning_curve.csv`
//! (`episode, mean_phi_f, stage, frames, rate_scale, arrived, phi_prime,
//! cost_kb, critic_loss`), `summary.csv` (one row per evaluation sequence)
//! and `frames/seq_NNN.csv` in the per-frame metrics schema. Trained
//! networks go to `checkpoints/`.

mod config;
mod runner;
mod suite;

use std::path::Path;

use serde::Serialize;

pub use config::{
    derive_seed, CurriculumStage, DispatchPolicy, EvalConfig, ExperimentConfig, OrchestrationPolicy, PolicyConfig,
    SuiteConfig, TrainingConfig, WorkloadConfig,
};
pub use runner::{
    curriculum_schedule, run_episode, run_eval, run_training, workload, Agents, CurveRow, EpisodeOptions,
    EpisodeResult, EvalOutcome, LoopEvent, Simulation, TrainingOutcome,
};
pub use suite::{run_suite, suite_cells, Cell, SuiteName, SuiteRow};

use crate::error::Result;
use crate::metrics::write_frames;

/// Writes the config echo, seed and source revision.
pub fn prepare_run_dir(out: &Path, cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    std::fs::write(out.join("seed.txt"), format!("{}\n", cfg.seed))?;
    std::fs::write(out.join("git_describe.txt"), format!("{}\n", git_describe()))?;
    Ok(())
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_string())
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// `learning_curve.csv` and `checkpoints/`. An empty curve still gets
/// its header.
pub fn write_training(out: &Path, outcome: &TrainingOutcome) -> Result<()> {
    std::fs::create_dir_all(out)?;
    if outcome.curve.is_empty() {
        std::fs::write(
            out.join("learning_curve.csv"),
            "episode,mean_phi_f,stage,frames,rate_scale,arrived,phi_prime,cost_kb,critic_loss\n",
        )?;
    } else {
        write_rows(&out.join("learning_curve.csv"), &outcome.curve)?;
    }
    outcome.agents.save(&out.join("checkpoints"))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SequenceSummary {
    pub sequence: usize,
    pub mean_phi_f: f64,
    pub arrived: u64,
    pub completed: u64,
    pub dropped: u64,
    pub phi_prime: f64,
    pub cost_kb: u64,
    pub image_mb: f64,
    pub frames: u64,
}

pub fn summarize(outcome: &EvalOutcome) -> Vec<SequenceSummary> {
    outcome
        .sequences
        .iter()
        .enumerate()
        .map(|(k, s)| SequenceSummary {
            sequence: k,
            mean_phi_f: s.mean_phi_f(),
            arrived: s.run.arrived,
            completed: s.run.completed,
            dropped: s.run.dropped,
            phi_prime: s.run.phi_prime,
            cost_kb: s.run.cost_kb,
            image_mb: s.run.image_mb,
            frames: s.run.frames,
        })
        .collect()
}

/// `summary.csv` and `frames/seq_NNN.csv`.
pub fn write_eval(out: &Path, outcome: &EvalOutcome) -> Result<()> {
    let frames_dir = out.join("frames");
    std::fs::create_dir_all(&frames_dir)?;
    write_rows(&out.join("summary.csv"), &summarize(outcome))?;
    for (k, s) in outcome.sequences.iter().enumerate() {
        let file = std::fs::File::create(frames_dir.join(format!("seq_{k:03}.csv")))?;
        write_frames(std::io::BufWriter::new(file), &s.frames)?;
    }
    Ok(())
}

/// One-sided sign test that the paired differences are positive: the
/// probability of at least that many positive signs among the non-zero
/// differences under a fair coin.
pub fn sign_test_p(differences: &[f64]) -> f64 {
    let n = differences.iter().filter(|d| **d != 0.0).count() as u64;
    let wins = differences.iter().filter(|d| **d > 0.0).count() as u64;
    if n == 0 {
        return 1.0;
    }
    let mut tail = 0.0;
    for k in wins..=n {
        tail += binomial(n, k);
    }
    tail / 2f64.powi(n as i32)
}

fn binomial(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_test_values() {
        assert_eq!(sign_test_p(&[1.0; 10]), 1.0 / 1024.0);
        assert!((sign_test_p(&[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, -1.0]) - 11.0 / 1024.0).abs() < 1e-15);
        assert!(sign_test_p(&[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, -1.0, -1.0]) > 0.05);
        assert_eq!(sign_test_p(&[0.0, 0.0]), 1.0);
        assert_eq!(sign_test_p(&[1.0, 0.0]), 0.5);
    }

    #[test]
    fn run_dir_contents() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::desk();
        prepare_run_dir(dir.path(), &cfg).unwrap();
        let echoed = ExperimentConfig::load(&dir.path().join("config.toml")).unwrap();
        assert_eq!(echoed, cfg);
        assert_eq!(std::fs::read_to_string(dir.path().join("seed.txt")).unwrap(), "0\n");
        assert!(dir.path().join("git_describe.txt").exists());
    }
}
