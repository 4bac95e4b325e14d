use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use super::config::{DispatchPolicy, ExperimentConfig, OrchestrationPolicy};
use super::runner::{run_eval, run_training};
use super::{prepare_run_dir, write_eval, write_rows, write_training};
use crate::dequeue::Strategy;
use crate::error::{Error, Result};
use crate::workload::PatternKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SuiteName {
    /// P1-P4 under KaiS and Greedy+native.
    Patterns,
    /// FIFO, latency-greedy and discounted dequeue under Greedy+native.
    Dequeue,
    /// Load-balance weight epsilon in {0, 1, 4}.
    LoadBalance,
    /// Slot length x frame length x H, 27 cells.
    HyperSweep,
    /// {cmmac, greedy} x {gpg, native_threshold}.
    Baselines,
}

impl FromStr for SuiteName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "patterns" => Ok(Self::Patterns),
            "dequeue" => Ok(Self::Dequeue),
            "load_balance" => Ok(Self::LoadBalance),
            "hyper_sweep" => Ok(Self::HyperSweep),
            "baselines" => Ok(Self::Baselines),
            other => Err(Error::config("suite", format!("unknown suite `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Cell {
    pub name: String,
    pub config: ExperimentConfig,
}

fn with_policy(base: &ExperimentConfig, dispatch: DispatchPolicy, orchestrate: OrchestrationPolicy) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.policy.dispatch = dispatch;
    cfg.policy.orchestrate = orchestrate;
    cfg
}

fn policy_label(cfg: &ExperimentConfig) -> String {
    let d = match cfg.policy.dispatch {
        DispatchPolicy::Cmmac => "cmmac",
        DispatchPolicy::Greedy => "greedy",
    };
    let o = match cfg.policy.orchestrate {
        OrchestrationPolicy::Gpg => "gpg",
        OrchestrationPolicy::NativeThreshold => "native",
        OrchestrationPolicy::Fixed => "fixed",
    };
    format!("{d}-{o}")
}

/// The grid of a suite. Policies not varied by the suite come from `base`.
/// Sweeping the slot length rescales `base_rate` so arrivals per second
/// stay constant.
pub fn suite_cells(name: SuiteName, base: &ExperimentConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    match name {
        SuiteName::Patterns => {
            let patterns = [
                ("p1", PatternKind::PeriodicCpu),
                ("p2", PatternKind::PeriodicMem),
                ("p3", PatternKind::PeriodicCpu2x),
                ("p4", PatternKind::Raw),
            ];
            for (label, kind) in patterns {
                for (d, o) in [
                    (DispatchPolicy::Cmmac, OrchestrationPolicy::Gpg),
                    (DispatchPolicy::Greedy, OrchestrationPolicy::NativeThreshold),
                ] {
                    let mut cfg = with_policy(base, d, o);
                    cfg.workload.pattern = kind;
                    cells.push(Cell {
                        name: format!("{label}_{}", policy_label(&cfg)),
                        config: cfg,
                    });
                }
            }
        }
        SuiteName::Dequeue => {
            for (label, strategy) in [
                ("fifo", Strategy::Fifo),
                ("latency_greedy", Strategy::LatencyGreedy),
                ("discounted", Strategy::Discounted),
            ] {
                let mut cfg = with_policy(base, DispatchPolicy::Greedy, OrchestrationPolicy::NativeThreshold);
                cfg.cluster.dequeue.eap = strategy;
                cfg.cluster.dequeue.executor = strategy;
                cells.push(Cell { name: label.to_string(), config: cfg });
            }
        }
        SuiteName::LoadBalance => {
            for epsilon in [0.0, 1.0, 4.0] {
                let mut cfg = base.clone();
                cfg.cmmac.epsilon = epsilon;
                cells.push(Cell {
                    name: format!("eps_{epsilon}"),
                    config: cfg,
                });
            }
        }
        SuiteName::HyperSweep => {
            for slot_ms in [100.0, 250.0, 500.0] {
                for slots_per_frame in [50, 100, 200] {
                    for h in [1, 2, 4] {
                        let mut cfg = base.clone();
                        cfg.workload.base_rate *= slot_ms / base.cluster.clock.slot_ms;
                        cfg.cluster.clock.slot_ms = slot_ms;
                        cfg.cluster.clock.slots_per_frame = slots_per_frame;
                        cfg.gpg.h = h.min(cfg.cluster.topology.node_count());
                        cells.push(Cell {
                            name: format!("slot{slot_ms}_frame{slots_per_frame}_h{h}"),
                            config: cfg,
                        });
                    }
                }
            }
        }
        SuiteName::Baselines => {
            for d in [DispatchPolicy::Cmmac, DispatchPolicy::Greedy] {
                for o in [OrchestrationPolicy::Gpg, OrchestrationPolicy::NativeThreshold] {
                    let cfg = with_policy(base, d, o);
                    cells.push(Cell {
                        name: policy_label(&cfg),
                        config: cfg,
                    });
                }
            }
        }
    }
    cells
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteRow {
    pub cell: String,
    pub seed: u64,
    pub mean_phi_f: f64,
    pub phi_prime: f64,
    pub arrived: u64,
    pub completed: u64,
    pub dropped: u64,
    pub cost_kb: u64,
    pub image_mb: f64,
}

/// Trains (where a learned policy is configured) and evaluates every cell
/// for `suite.seeds` paired seeds. Writes a run directory per cell and
/// seed under `out/<cell>/seed_<s>/`, one `out/<cell>.csv` per cell and
/// `out/suite.csv` with all rows.
pub fn run_suite(name: SuiteName, base: &ExperimentConfig, out: &Path) -> Result<Vec<SuiteRow>> {
    base.validate()?;
    std::fs::create_dir_all(out)?;
    let mut all = Vec::new();
    for cell in suite_cells(name, base) {
        let mut rows = Vec::new();
        for s in 0..base.suite.seeds {
            let mut cfg = cell.config.clone();
            cfg.seed = base.seed + s;
            let dir = out.join(&cell.name).join(format!("seed_{}", cfg.seed));
            prepare_run_dir(&dir, &cfg)?;
            let mut trained = run_training(&cfg)?;
            write_training(&dir, &trained)?;
            let eval = run_eval(&cfg, &mut trained.agents)?;
            write_eval(&dir, &eval)?;
            let n = eval.sequences.len().max(1) as f64;
            let sum = |f: &dyn Fn(&super::EpisodeResult) -> f64| eval.sequences.iter().map(f).sum::<f64>();
            rows.push(SuiteRow {
                cell: cell.name.clone(),
                seed: cfg.seed,
                mean_phi_f: eval.mean_phi_f(),
                phi_prime: sum(&|e| e.run.phi_prime) / n,
                arrived: eval.sequences.iter().map(|e| e.run.arrived).sum(),
                completed: eval.sequences.iter().map(|e| e.run.completed).sum(),
                dropped: eval.sequences.iter().map(|e| e.run.dropped).sum(),
                cost_kb: eval.sequences.iter().map(|e| e.run.cost_kb).sum(),
                image_mb: sum(&|e| e.run.image_mb),
            });
        }
        write_rows(&out.join(format!("{}.csv", cell.name)), &rows)?;
        all.extend(rows);
    }
    write_rows(&out.join("suite.csv"), &all)?;
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_sizes() {
        let base = ExperimentConfig::desk();
        assert_eq!(suite_cells(SuiteName::HyperSweep, &base).len(), 27);
        assert_eq!(suite_cells(SuiteName::Dequeue, &base).len(), 3);
        assert_eq!(suite_cells(SuiteName::Baselines, &base).len(), 4);
        assert_eq!(suite_cells(SuiteName::LoadBalance, &base).len(), 3);
        assert_eq!(suite_cells(SuiteName::Patterns, &base).len(), 8);
        for name in ["patterns", "dequeue", "load_balance", "hyper_sweep", "baselines"] {
            let cells = suite_cells(name.parse().unwrap(), &base);
            for c in &cells {
                c.config.validate().unwrap();
            }
            let mut names: Vec<_> = cells.iter().map(|c| c.name.clone()).collect();
            names.dedup();
            assert_eq!(names.len(), cells.len());
        }
        assert!("nope".parse::<SuiteName>().is_err());
    }

    #[test]
    fn dequeue_cells_share_the_policy() {
        let cells = suite_cells(SuiteName::Dequeue, &ExperimentConfig::desk());
        for c in &cells {
            assert_eq!(c.config.policy.dispatch, DispatchPolicy::Greedy);
            assert_eq!(c.config.policy.orchestrate, OrchestrationPolicy::NativeThreshold);
            assert_eq!(c.config.cluster.dequeue.eap, c.config.cluster.dequeue.executor);
        }
    }

    #[test]
    fn hyper_sweep_keeps_arrivals_per_second() {
        let base = ExperimentConfig::desk();
        for c in suite_cells(SuiteName::HyperSweep, &base) {
            let per_second = c.config.workload.base_rate / c.config.cluster.clock.slot_ms;
            assert!((per_second - base.workload.base_rate / base.cluster.clock.slot_ms).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_suite_writes_one_csv_per_cell() {
        let mut base = ExperimentConfig::desk();
        base.cluster.clock.slots_per_frame = 5;
        base.training.episodes = 0;
        base.eval.sequences = 1;
        base.eval.frames = 2;
        base.training.drain_frames = 1;
        let dir = tempfile::tempdir().unwrap();
        let rows = run_suite(SuiteName::Dequeue, &base, dir.path()).unwrap();
        assert_eq!(rows.len(), 3);
        for name in ["fifo", "latency_greedy", "discounted"] {
            assert!(dir.path().join(format!("{name}.csv")).exists());
            assert!(dir.path().join(name).join("seed_0").join("summary.csv").exists());
        }
    }
}
