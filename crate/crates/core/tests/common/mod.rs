#![allow(dead_code)]

use edgesched::cluster::{
    ClusterConfig, ClusterState, EapSpec, NodeSpec, OrchestrationAction, ServiceCatalog, ServiceSpec, TopologyConfig,
};
use edgesched::cmmac::{compute_reward, Cmmac, CmmacConfig, Mode};
use edgesched::gpg::{Gpg, GpgConfig, GraphInput};
use edgesched::cluster::DispatchAction;
use edgesched::experiment::{workload, ExperimentConfig};
use edgesched::metrics::orchestration_reward;
use edgesched::workload::{Request, TraceRecord};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn service(proc_ms: f64, cpu: u32, deadline_ms: u64) -> ServiceSpec {
    ServiceSpec {
        nominal_proc_ms: proc_ms,
        replicate_cpu: cpu,
        replicate_mem: 256,
        image_size_mb: 100.0,
        deadline_min_ms: deadline_ms,
        deadline_max_ms: deadline_ms,
    }
}

pub fn node(cpu: u32, speed: f64) -> NodeSpec {
    NodeSpec {
        cpu,
        mem: 4096,
        storage: 300.0,
        speed,
    }
}

pub fn record(arrival_ms: u64, service_type: u32, deadline_ms: u64) -> TraceRecord {
    TraceRecord {
        arrival_ms,
        service_type,
        deadline_ms,
        cpu_demand: 100,
        mem_demand: 100,
        input_size_kb: 10,
    }
}

/// One eAP with a fast (10x) and a slow node, both hosting the only
/// service; the fast node sits at `fast_slot` (0 or 1). One request per
/// slot whose deadline only the fast node can meet.
pub struct DispatchToy {
    pub config: ClusterConfig,
    pub slots: u64,
    /// Action index of the fast node (1 + its attachment position).
    pub fast_action: usize,
}

impl DispatchToy {
    pub fn new(fast_slot: usize, slots: u64) -> Self {
        let mut nodes = vec![node(2000, 1.0), node(2000, 1.0)];
        nodes[fast_slot].speed = 10.0;
        let mut config = ClusterConfig {
            catalog: ServiceCatalog::new(vec![service(500.0, 500, 200)]).unwrap(),
            topology: TopologyConfig {
                eaps: vec![EapSpec { nodes }],
                initial_replicas_per_node: 2,
                ..TopologyConfig::default()
            },
            ..ClusterConfig::default()
        };
        config.clock.slots_per_frame = slots;
        Self {
            config,
            slots,
            fast_action: 1 + fast_slot,
        }
    }

    pub fn requests(&self) -> Vec<Request> {
        let slot_ms = self.config.clock.slot_ms as u64;
        (0..self.slots)
            .map(|k| Request::new(k, record(k * slot_ms + slot_ms - 40, 1, 200), 0))
            .collect()
    }

    pub fn state(&self) -> ClusterState {
        ClusterState::new(self.config.clone(), self.requests()).unwrap()
    }

    /// Trains one episode; returns the learner's mean probability of the
    /// fast node over the episode's decisions.
    pub fn train_episode(&self, agent: &mut Cmmac) -> f64 {
        let mut state = self.state();
        let mut fast = Vec::new();
        for _ in 0..self.slots + 2 {
            let decisions = agent.decide(&state, Mode::Sample).unwrap();
            let actions: Vec<_> = decisions.iter().map(|d| d.action).collect();
            let outcome = state.step_slot(&actions).unwrap();
            let reward = compute_reward(&outcome, agent.config.epsilon).value;
            let records = agent.records(decisions, reward, &state);
            for r in &records {
                fast.push(agent.learner_probabilities(&r.local, &r.mask).unwrap()[self.fast_action]);
            }
            agent.train_slot(&records).unwrap();
        }
        agent.end_episode();
        let probs: Vec<f64> = fast;
        probs.iter().sum::<f64>() / probs.len().max(1) as f64
    }
}

/// Episodes until the learner puts at least `threshold` on the fast node,
/// or `None` within `budget` episodes.
pub fn dispatch_toy_episodes(seed: u64, budget: usize, threshold: f64) -> Option<usize> {
    let toy = DispatchToy::new(seed as usize % 2, 20);
    let mut agent = Cmmac::for_cluster(CmmacConfig::default(), &toy.state(), seed).unwrap();
    (1..=budget).find(|_| toy.train_episode(&mut agent) >= threshold)
}

/// Two nodes in one eAP. Node 0 is full; node 1 has room but does not host
/// service 2, and a backlog of service-2 requests waits in its executor
/// queue. Only adding service 2 on node 1 clears it within the frame.
pub struct PlacementToy {
    pub config: ClusterConfig,
    pub backlog: u64,
}

impl PlacementToy {
    pub fn new() -> Self {
        let mut config = ClusterConfig {
            catalog: ServiceCatalog::new(vec![service(100.0, 500, 60_000), service(100.0, 500, 60_000)]).unwrap(),
            topology: TopologyConfig {
                eaps: vec![EapSpec {
                    nodes: vec![node(500, 1.0), node(2000, 1.0)],
                }],
                initial_replicas_per_node: 0,
                ..TopologyConfig::default()
            },
            ..ClusterConfig::default()
        };
        config.clock.slots_per_frame = 4;
        Self { config, backlog: 3 }
    }

    pub fn state(&self) -> ClusterState {
        let mut state = ClusterState::new(self.config.clone(), Vec::new()).unwrap();
        state
            .apply_scaling(&OrchestrationAction {
                selected_nodes: vec![0, 1],
                deltas: vec![1, 1],
            })
            .unwrap();
        for k in 0..self.backlog {
            state
                .enqueue_at_executor(1, Request::new(k, record(0, 2, 60_000), 0))
                .unwrap();
        }
        state
    }

    pub fn gpg_config() -> GpgConfig {
        GpgConfig {
            h: 1,
            episode_frames: 1,
            ..GpgConfig::default()
        }
    }

    /// Probability of selecting node 1 and adding service 2 there.
    pub fn placement_probability(&self, gpg: &Gpg) -> f64 {
        let input = GraphInput::of(&self.state());
        let nets = gpg.nets();
        let e = nets.embed(&input, gpg.config.aggregation).unwrap();
        let sigma = nets.selection_probs(&input, &e).unwrap();
        let w = self.config.catalog.len();
        sigma[1] * nets.scaling_probs(&input, &e, 1).unwrap()[w + 2]
    }

    /// One single-frame episode; returns the reward.
    pub fn train_episode(&self, gpg: &mut Gpg) -> f64 {
        let mut state = self.state();
        gpg.begin_run(1);
        let action = gpg.act(&state, None, edgesched::gpg::Mode::Sample, true).unwrap();
        state.apply_scaling(&action).unwrap();
        for _ in 0..self.config.clock.slots_per_frame {
            state.step_slot(&[]).unwrap();
        }
        let reward = orchestration_reward(state.edge_backlog());
        gpg.finish(reward).unwrap();
        reward
    }
}

/// Episodes until the needed placement has probability at least
/// `threshold`, or `None` within `budget` episodes.
pub fn placement_toy_episodes(seed: u64, budget: usize, threshold: f64) -> Option<usize> {
    let toy = PlacementToy::new();
    let mut gpg = Gpg::new(PlacementToy::gpg_config(), toy.config.catalog.len(), seed).unwrap();
    (1..=budget).find(|_| {
        toy.train_episode(&mut gpg);
        toy.placement_probability(&gpg) >= threshold
    })
}

/// Up to every node with a uniformly drawn delta in `[-W, W]`.
pub fn random_orchestration(state: &ClusterState, rng: &mut ChaCha8Rng) -> OrchestrationAction {
    let w = state.catalog().len() as i32;
    let mut nodes: Vec<usize> = (0..state.nodes().len()).collect();
    nodes.shuffle(rng);
    nodes.truncate(rng.gen_range(0..=nodes.len()));
    OrchestrationAction {
        deltas: nodes.iter().map(|_| rng.gen_range(-w..=w)).collect(),
        selected_nodes: nodes,
    }
}

/// For each eAP with a waiting request, a uniformly drawn valid target;
/// eAPs sit out a slot with probability `idle`.
pub fn random_dispatch(state: &ClusterState, rng: &mut ChaCha8Rng, idle: f64) -> Vec<DispatchAction> {
    let mut actions = Vec::new();
    for b in 0..state.eap_count() {
        let (Some(head), Some(mask)) = (state.head_request(b), state.mask(b)) else { continue };
        if rng.gen_bool(idle) {
            continue;
        }
        let valid: Vec<usize> = (0..mask.len()).filter(|&j| mask[j]).collect();
        actions.push(DispatchAction {
            eap_id: b,
            target: *valid.choose(rng).unwrap(),
            request_id: head.id,
        });
    }
    actions
}

/// Desk topology under synthesized traffic at `rate` arrivals per slot.
pub fn desk_state(frames: u64, rate: f64, seed: u64) -> ClusterState {
    let mut cfg = ExperimentConfig::desk();
    cfg.workload.base_rate = rate;
    cfg.cluster.seed = seed;
    cfg.cluster.network.jitter = 0.2;
    ClusterState::new(cfg.cluster.clone(), workload(&cfg, frames, 1.0, seed).unwrap()).unwrap()
}

/// Every conservation, capacity and exclusivity invariant of `state`;
/// the first broken one as an error.
pub fn check_invariants(state: &ClusterState) -> Result<(), String> {
    let arrived = state.arrived_total();
    let resolved = state.on_time_total() + state.violated_total();
    let in_flight = state.in_flight_count();
    if arrived != resolved + in_flight {
        return Err(format!("arrived {arrived} != resolved {resolved} + in flight {in_flight}"));
    }
    let mut running = std::collections::BTreeSet::new();
    for node in state.nodes() {
        let (cpu, mem) = node.reserved(state.catalog());
        if cpu > node.spec.cpu as u64 || mem > node.spec.mem as u64 {
            return Err(format!("node {} over capacity: {cpu} mcpu, {mem} MB", node.id));
        }
        for r in &node.replicas {
            if let Some((id, _)) = r.busy {
                if !running.insert(id) {
                    return Err(format!("request {id} runs on two replicas"));
                }
                let request = state.request(id).ok_or("busy replica runs an unknown request")?;
                if request.service() != r.service {
                    return Err(format!("request {id} runs on a replica of another service"));
                }
            }
        }
    }
    Ok(())
}
