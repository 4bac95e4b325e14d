use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{derive_seed, DispatchPolicy, ExperimentConfig, OrchestrationPolicy};
use crate::baselines::{greedy_dispatch, threshold_autoscale};
use crate::cluster::{ClusterState, DispatchAction, OrchestrationAction};
use crate::cmmac::{self, compute_reward, Cmmac};
use crate::error::{Error, Result};
use crate::gpg::{self, Gpg};
use crate::metrics::{mean_phi_f, orchestration_reward, FrameMetrics, MetricsRecorder, RunMetrics};
use crate::nn::checkpoint;
use crate::workload::{load_trace, synthesize, PatternKind, Request};

const STREAM_AGENTS: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_EVAL: u64 = 3;
const STREAM_THIN: u64 = 4;

/// The learned components a config asks for.
#[derive(Clone, Debug)]
pub struct Agents {
    pub cmmac: Option<Cmmac>,
    pub gpg: Option<Gpg>,
}

impl Agents {
    /// Freshly initialized networks sized for the configured topology.
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let probe = ClusterState::new(cfg.cluster.clone(), Vec::new())?;
        let cmmac = match cfg.policy.dispatch {
            DispatchPolicy::Cmmac => Some(Cmmac::for_cluster(
                cfg.cmmac.clone(),
                &probe,
                derive_seed(cfg.seed, STREAM_AGENTS, 0),
            )?),
            DispatchPolicy::Greedy => None,
        };
        let gpg = match cfg.policy.orchestrate {
            OrchestrationPolicy::Gpg => Some(Gpg::new(
                cfg.gpg.clone(),
                cfg.cluster.catalog.len(),
                derive_seed(cfg.seed, STREAM_AGENTS, 1),
            )?),
            _ => None,
        };
        Ok(Self { cmmac, gpg })
    }

    /// Writes `actor.bin`, `critic.bin`, `target.bin` and `gpg_*.bin` for
    /// the components present.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        if let Some(c) = &self.cmmac {
            checkpoint::save(&dir.join("actor.bin"), c.actor())?;
            checkpoint::save(&dir.join("critic.bin"), c.critic())?;
            checkpoint::save(&dir.join("target.bin"), c.target())?;
        }
        if let Some(g) = &self.gpg {
            g.nets().save(dir)?;
        }
        Ok(())
    }

    /// Replaces the networks with checkpoints from `dir`, which must match
    /// the configured shapes.
    pub fn load(&mut self, dir: &Path) -> Result<()> {
        if let Some(c) = &mut self.cmmac {
            let actor = checkpoint::load_like(&dir.join("actor.bin"), c.actor())?;
            let critic = checkpoint::load_like(&dir.join("critic.bin"), c.critic())?;
            let target = checkpoint::load_like(&dir.join("target.bin"), c.target())?;
            c.load_networks(actor, critic, target)?;
        }
        if let Some(g) = &mut self.gpg {
            let nets = g.nets().load_like(dir)?;
            g.set_nets(nets)?;
        }
        Ok(())
    }
}

/// One step of the per-slot loop, in the order it happened.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoopEvent {
    Orchestrate { slot: u64 },
    Dispatch { slot: u64, decisions: usize },
    Step { slot: u64 },
    Update { slot: u64 },
}

#[derive(Clone, Debug)]
pub struct EpisodeOptions {
    /// Frames with arrivals.
    pub frames: u64,
    /// Extra frames after arrivals stop.
    pub drain_frames: u64,
    /// Sample actions and update parameters; otherwise act greedily.
    pub learn: bool,
    pub record_events: bool,
}

#[derive(Clone, Debug)]
pub struct EpisodeResult {
    pub frames: Vec<FrameMetrics>,
    pub run: RunMetrics,
    pub events: Vec<LoopEvent>,
    pub mean_critic_loss: f64,
}

impl EpisodeResult {
    pub fn mean_phi_f(&self) -> f64 {
        mean_phi_f(&self.frames)
    }
}

/// Request stream of `frames` frames at `rate_scale` times the base rate.
/// Trace replays keep arrivals inside the window and thin them to the
/// rate.
pub fn workload(cfg: &ExperimentConfig, frames: u64, rate_scale: f64, seed: u64) -> Result<Vec<Request>> {
    let params = cfg.synthesis();
    if cfg.workload.pattern == PatternKind::File {
        let path = cfg
            .workload
            .trace
            .as_ref()
            .ok_or_else(|| Error::config("workload.trace", "required when pattern = \"file\""))?;
        let horizon = frames as f64 * params.slots_per_frame as f64 * params.slot_ms;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_THIN, 0));
        let mut kept: Vec<Request> = load_trace(path, params.eap_count, cfg.cluster.catalog.len(), seed)?
            .into_iter()
            .filter(|r| (r.record.arrival_ms as f64) < horizon)
            .filter(|_| rate_scale >= 1.0 || rng.gen_bool(rate_scale))
            .collect();
        for (i, r) in kept.iter_mut().enumerate() {
            r.id = i as u64;
        }
        return Ok(kept);
    }
    synthesize(
        &cfg.pattern(seed),
        frames,
        cfg.workload.base_rate * rate_scale,
        &cfg.cluster.catalog,
        &params,
    )
}

/// The two-time-scale loop over one request sequence, advanced a frame at
/// a time. At every frame boundary the orchestrator acts first (crediting
/// the previous frame's reward), then in every slot each eAP dispatches its
/// head request, the cluster advances one slot, and the dispatch learner
/// updates.
#[derive(Debug)]
pub struct Simulation {
    cfg: ExperimentConfig,
    state: ClusterState,
    agents: Agents,
    metrics: MetricsRecorder,
    learn: bool,
    record_events: bool,
    events: Vec<LoopEvent>,
    frame: u64,
    loss_sum: f64,
    loss_count: u64,
}

impl Simulation {
    /// `planned_frames` sizes the orchestrator's training episodes.
    pub fn new(
        cfg: &ExperimentConfig,
        requests: Vec<Request>,
        mut agents: Agents,
        planned_frames: u64,
        learn: bool,
        record_events: bool,
    ) -> Result<Self> {
        let state = ClusterState::new(cfg.cluster.clone(), requests)?;
        if let Some(g) = &mut agents.gpg {
            if learn {
                g.begin_run(planned_frames as usize);
            } else {
                g.reset_episode();
            }
        }
        Ok(Self {
            metrics: MetricsRecorder::new(cfg.cluster.clock.slots_per_frame),
            cfg: cfg.clone(),
            state,
            agents,
            learn,
            record_events,
            events: Vec::new(),
            frame: 0,
            loss_sum: 0.0,
            loss_count: 0,
        })
    }

    pub fn state(&self) -> &ClusterState {
        &self.state
    }

    pub fn frames_done(&self) -> u64 {
        self.frame
    }

    pub fn agents_mut(&mut self) -> &mut Agents {
        &mut self.agents
    }

    /// Totals over the frames closed so far.
    pub fn run_metrics(&self) -> &RunMetrics {
        self.metrics.run()
    }

    pub fn step_frame(&mut self) -> Result<FrameMetrics> {
        let cfg = &self.cfg;
        let cmmac_mode = if self.learn { cmmac::Mode::Sample } else { cmmac::Mode::Greedy };
        let gpg_mode = if self.learn { gpg::Mode::Sample } else { gpg::Mode::Greedy };
        let slot = self.state.clock().slot();
        let reward = (self.frame > 0).then(|| orchestration_reward(self.state.edge_backlog()));
        let action = match (&mut self.agents.gpg, cfg.policy.orchestrate) {
            (Some(g), _) => g.act(&self.state, reward, gpg_mode, self.learn)?,
            (None, OrchestrationPolicy::NativeThreshold) => threshold_autoscale(&self.state, &cfg.native),
            (None, _) => OrchestrationAction::default(),
        };
        let report = self.state.apply_scaling(&action)?;
        self.metrics.record_image_pull(report.image_pull_mb());
        if self.record_events {
            self.events.push(LoopEvent::Orchestrate { slot });
        }

        for _ in 0..cfg.cluster.clock.slots_per_frame {
            let slot = self.state.clock().slot();
            let decisions = match &mut self.agents.cmmac {
                Some(c) => Some(c.decide(&self.state, cmmac_mode)?),
                None => None,
            };
            let actions: Vec<DispatchAction> = match &decisions {
                Some(d) => d.iter().map(|d| d.action).collect(),
                None => (0..self.state.eap_count())
                    .filter_map(|b| greedy_dispatch(&self.state, b))
                    .collect(),
            };
            if self.record_events {
                self.events.push(LoopEvent::Dispatch {
                    slot,
                    decisions: actions.len(),
                });
            }
            let outcome = self.state.step_slot(&actions)?;
            if self.record_events {
                self.events.push(LoopEvent::Step { slot });
            }
            self.metrics.record_slot(&outcome);
            if !actions.is_empty() {
                self.metrics.record_reward(compute_reward(&outcome, cfg.cmmac.epsilon).value);
            }
            if let (Some(c), Some(decisions), true) = (&mut self.agents.cmmac, decisions, self.learn) {
                let reward = compute_reward(&outcome, c.config.epsilon).value;
                let records = c.records(decisions, reward, &self.state);
                let stats = c.train_slot(&records)?;
                if stats.records > 0 {
                    self.loss_sum += stats.critic_loss;
                    self.loss_count += 1;
                }
                if self.record_events {
                    self.events.push(LoopEvent::Update { slot });
                }
            }
        }
        let frame = self.metrics.close_frame()?;
        if self.learn {
            if let Some(c) = &mut self.agents.cmmac {
                c.end_episode();
            }
        }
        self.frame += 1;
        Ok(frame)
    }

    /// Credits the orchestrator's last action and hands back the agents
    /// with the run's results.
    pub fn finish(mut self) -> Result<(Agents, EpisodeResult)> {
        if let Some(g) = &mut self.agents.gpg {
            if self.learn {
                g.finish(orchestration_reward(self.state.edge_backlog()))?;
            }
            g.reset_episode();
        }
        let result = EpisodeResult {
            frames: self.metrics.frames().to_vec(),
            run: self.metrics.run().clone(),
            events: self.events,
            mean_critic_loss: if self.loss_count > 0 {
                self.loss_sum / self.loss_count as f64
            } else {
                0.0
            },
        };
        Ok((self.agents, result))
    }
}

/// Runs a whole sequence: `frames` frames with arrivals plus the drain.
pub fn run_episode(
    cfg: &ExperimentConfig,
    requests: Vec<Request>,
    agents: &mut Agents,
    opts: &EpisodeOptions,
) -> Result<EpisodeResult> {
    let total = opts.frames + opts.drain_frames;
    let owned = std::mem::replace(agents, Agents { cmmac: None, gpg: None });
    let mut sim = Simulation::new(cfg, requests, owned, total, opts.learn, opts.record_events)?;
    for _ in 0..total {
        sim.step_frame()?;
    }
    let (back, result) = sim.finish()?;
    *agents = back;
    Ok(result)
}

/// One row of the learning curve.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct CurveRow {
    pub episode: usize,
    pub mean_phi_f: f64,
    pub stage: usize,
    pub frames: u64,
    pub rate_scale: f64,
    pub arrived: u64,
    pub phi_prime: f64,
    pub cost_kb: u64,
    pub critic_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainingOutcome {
    pub agents: Agents,
    pub curve: Vec<CurveRow>,
}

/// Stage index of each training episode: stage `k` of `S` gets episodes
/// `[floor(E k / S), floor(E (k + 1) / S))`.
pub fn curriculum_schedule(episodes: usize, stages: usize) -> Vec<usize> {
    (0..episodes)
        .map(|e| (0..stages).find(|&k| e < episodes * (k + 1) / stages).unwrap_or(stages - 1))
        .collect()
}

/// Curriculum training from fresh networks.
pub fn run_training(cfg: &ExperimentConfig) -> Result<TrainingOutcome> {
    cfg.validate()?;
    let mut agents = Agents::new(cfg)?;
    let mut curve = Vec::new();
    if agents.cmmac.is_none() && agents.gpg.is_none() {
        return Ok(TrainingOutcome { agents, curve });
    }
    let t = &cfg.training;
    for (episode, stage) in curriculum_schedule(t.episodes, t.curriculum.len()).into_iter().enumerate() {
        let s = &t.curriculum[stage];
        let frames = s.frames.unwrap_or(t.frames);
        let requests = workload(cfg, frames, s.rate_scale, derive_seed(cfg.seed, STREAM_TRAIN, episode as u64))?;
        let opts = EpisodeOptions {
            frames,
            drain_frames: t.drain_frames,
            learn: true,
            record_events: false,
        };
        let result = run_episode(cfg, requests, &mut agents, &opts)?;
        curve.push(CurveRow {
            episode,
            mean_phi_f: result.mean_phi_f(),
            stage,
            frames,
            rate_scale: s.rate_scale,
            arrived: result.run.arrived,
            phi_prime: result.run.phi_prime,
            cost_kb: result.run.cost_kb,
            critic_loss: result.mean_critic_loss,
        });
    }
    Ok(TrainingOutcome { agents, curve })
}

#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub sequences: Vec<EpisodeResult>,
}

impl EvalOutcome {
    /// Mean over sequences of each sequence's mean frame throughput rate.
    pub fn mean_phi_f(&self) -> f64 {
        if self.sequences.is_empty() {
            return 0.0;
        }
        self.sequences.iter().map(|s| s.mean_phi_f()).sum::<f64>() / self.sequences.len() as f64
    }
}

/// Greedy-mode evaluation without parameter updates on
/// `eval.sequences` arrival sequences that depend only on the seed, so
/// different policies with the same seed see the same traffic.
pub fn run_eval(cfg: &ExperimentConfig, agents: &mut Agents) -> Result<EvalOutcome> {
    cfg.validate()?;
    let mut sequences = Vec::with_capacity(cfg.eval.sequences);
    for k in 0..cfg.eval.sequences {
        let requests = workload(cfg, cfg.eval.frames, 1.0, derive_seed(cfg.seed, STREAM_EVAL, k as u64))?;
        let opts = EpisodeOptions {
            frames: cfg.eval.frames,
            drain_frames: cfg.training.drain_frames,
            learn: false,
            record_events: false,
        };
        sequences.push(run_episode(cfg, requests, agents, &opts)?);
    }
    Ok(EvalOutcome { sequences })
}
