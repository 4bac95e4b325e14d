use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::ThresholdConfig;
use crate::cluster::{ClusterConfig, ServiceCatalog, TopologyConfig};
use crate::cmmac::CmmacConfig;
use crate::error::{Error, Result};
use crate::gpg::GpgConfig;
use crate::workload::{ArrivalPattern, PatternKind, SynthesisParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispatchPolicy {
    Cmmac,
    Greedy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrchestrationPolicy {
    Gpg,
    NativeThreshold,
    /// Replicas stay where they were initially placed.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub dispatch: DispatchPolicy,
    pub orchestrate: OrchestrationPolicy,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            dispatch: DispatchPolicy::Cmmac,
            orchestrate: OrchestrationPolicy::Gpg,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    pub pattern: PatternKind,
    /// Envelope period of the periodic patterns, in frames.
    pub period_frames: u32,
    pub amplitude: f64,
    /// Mean arrivals per slot, cluster-wide, at full rate.
    pub base_rate: f64,
    /// Trace replayed when `pattern = "file"`.
    pub trace: Option<PathBuf>,
    /// Generation knobs; eAP count and slot geometry are taken from the
    /// cluster section.
    pub synthesis: SynthesisParams,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            pattern: PatternKind::Raw,
            period_frames: 20,
            amplitude: 0.5,
            base_rate: 1.4,
            trace: None,
            synthesis: SynthesisParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumStage {
    /// Sequence length in frames; absent means `training.frames`.
    pub frames: Option<u64>,
    /// Multiplier on `workload.base_rate`.
    pub rate_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub episodes: usize,
    /// Full sequence length in frames.
    pub frames: u64,
    /// Stages in order; episodes are split evenly between them.
    pub curriculum: Vec<CurriculumStage>,
    /// Frames simulated after arrivals stop so every request resolves.
    pub drain_frames: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            episodes: 21,
            frames: 40,
            curriculum: vec![
                CurriculumStage { frames: Some(10), rate_scale: 0.25 },
                CurriculumStage { frames: Some(50), rate_scale: 0.5 },
                CurriculumStage { frames: None, rate_scale: 1.0 },
            ],
            drain_frames: 5,
        }
    }
}

impl Default for CurriculumStage {
    fn default() -> Self {
        Self { frames: None, rate_scale: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Independent arrival sequences per evaluation.
    pub sequences: usize,
    /// Length of each sequence in frames.
    pub frames: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { sequences: 5, frames: 40 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    /// Paired seeds per cell, counting up from `seed`.
    pub seeds: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { seeds: 1 }
    }
}

/// Everything one run needs. Serialized as TOML with the sections
/// `cluster`, `workload`, `policy`, `cmmac`, `gpg`, `native`, `training`,
/// `eval` and `suite`; every field has a default, so a file only needs the
/// values it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub cluster: ClusterConfig,
    pub workload: WorkloadConfig,
    pub policy: PolicyConfig,
    pub cmmac: CmmacConfig,
    pub gpg: GpgConfig,
    pub native: ThresholdConfig,
    pub training: TrainingConfig,
    pub eval: EvalConfig,
    pub suite: SuiteConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// 2 eAPs with 3 nodes each and 6 services.
    pub fn desk() -> Self {
        Self {
            seed: 0,
            cluster: ClusterConfig::default(),
            workload: WorkloadConfig::default(),
            policy: PolicyConfig::default(),
            cmmac: CmmacConfig::default(),
            gpg: GpgConfig::default(),
            native: ThresholdConfig::default(),
            training: TrainingConfig::default(),
            eval: EvalConfig::default(),
            suite: SuiteConfig::default(),
        }
    }

    /// 5 eAPs with 8 nodes each and 30 services.
    pub fn large() -> Self {
        let mut cfg = Self::desk();
        cfg.cluster.catalog = ServiceCatalog::generated(30);
        cfg.cluster.topology = TopologyConfig::uniform(5, 8);
        cfg.workload.base_rate = 3.5;
        cfg
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.cluster.validate()?;
        self.cmmac.validate()?;
        self.gpg.validate()?;
        self.native.validate()?;
        if self.gpg.h > self.cluster.topology.node_count() {
            return Err(Error::config("gpg.h", "exceeds the number of edge nodes"));
        }
        let w = &self.workload;
        self.pattern(0).validate().map_err(|e| Error::config("workload", e.to_string()))?;
        if !(w.base_rate > 0.0) {
            return Err(Error::config("workload.base_rate", "must be positive"));
        }
        if w.pattern == PatternKind::File && w.trace.is_none() {
            return Err(Error::config("workload.trace", "required when pattern = \"file\""));
        }
        let (lo, hi) = w.synthesis.demand_fraction;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::config("workload.synthesis.demand_fraction", "need 0 < lo <= hi <= 1"));
        }
        if w.synthesis.input_size_kb.0 > w.synthesis.input_size_kb.1 {
            return Err(Error::config("workload.synthesis.input_size_kb", "need lo <= hi"));
        }
        if self.training.frames == 0 {
            return Err(Error::config("training.frames", "must be positive"));
        }
        if self.training.curriculum.is_empty() {
            return Err(Error::config("training.curriculum", "needs at least one stage"));
        }
        for (i, stage) in self.training.curriculum.iter().enumerate() {
            if stage.frames == Some(0) {
                return Err(Error::config(format!("training.curriculum[{i}].frames"), "must be positive"));
            }
            if !(stage.rate_scale > 0.0) {
                return Err(Error::config(format!("training.curriculum[{i}].rate_scale"), "must be positive"));
            }
        }
        if self.eval.frames == 0 {
            return Err(Error::config("eval.frames", "must be positive"));
        }
        if self.suite.seeds == 0 {
            return Err(Error::config("suite.seeds", "must be positive"));
        }
        Ok(())
    }

    pub fn pattern(&self, seed: u64) -> ArrivalPattern {
        ArrivalPattern {
            kind: self.workload.pattern,
            period_frames: self.workload.period_frames,
            amplitude: self.workload.amplitude,
            seed,
        }
    }

    /// Synthesis parameters with the cluster's eAP count and slot geometry.
    pub fn synthesis(&self) -> SynthesisParams {
        SynthesisParams {
            eap_count: self.cluster.topology.eaps.len(),
            slot_ms: self.cluster.clock.slot_ms,
            slots_per_frame: self.cluster.clock.slots_per_frame,
            ..self.workload.synthesis.clone()
        }
    }
}

/// Independent stream seed for `(seed, stream, index)` (SplitMix64 mixing).
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9))
        .wrapping_add(0x94d0_49bb_1331_11eb);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
