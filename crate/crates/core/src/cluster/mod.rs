//! Discrete-event model of the edge-cloud system.
//!
//! Decisions happen at slot boundaries (dispatch) and frame boundaries
//! (orchestration); transport, queueing and execution run in continuous
//! time through an event list inside each slot.

mod scaling;
mod snapshot;
mod state;

pub use scaling::{OrchestrationAction, ScalingReport, ScalingStep};
pub use snapshot::{global_state_len, local_state_len, Normalization};
pub use state::{
    load_std, ClusterState, Completion, DispatchAction, Dispatched, EdgeNode, Executor, Replica, ReplicaUsage, SlotOutcome,
};

use serde::{Deserialize, Serialize};

use crate::dequeue::Strategy;
use crate::error::{Error, Result};
use crate::ServiceId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceSpec {
    /// Processing time of one request on a speed-1.0 executor.
    pub nominal_proc_ms: f64,
    /// Millicores reserved by one replicate.
    pub replicate_cpu: u32,
    /// MB reserved by one replicate.
    pub replicate_mem: u32,
    pub image_size_mb: f64,
    /// Synthetic requests draw their deadline budget uniformly from
    /// `[deadline_min_ms, deadline_max_ms]`.
    pub deadline_min_ms: u64,
    pub deadline_max_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ServiceCatalog {
    services: Vec<ServiceSpec>,
}

impl ServiceCatalog {
    pub fn new(services: Vec<ServiceSpec>) -> Result<Self> {
        let catalog = Self { services };
        catalog.validate()?;
        Ok(catalog)
    }

    /// Deterministic heterogeneous catalog of `count` services.
    pub fn generated(count: usize) -> Self {
        let services = (0..count)
            .map(|k| {
                let proc_ms = 150.0 + 100.0 * ((3 * k) % 7) as f64;
                ServiceSpec {
                    nominal_proc_ms: proc_ms,
                    replicate_cpu: 250 * (1 + (k % 3) as u32),
                    replicate_mem: 256 * (1 + ((k + 1) % 3) as u32),
                    image_size_mb: 100.0 + 50.0 * (k % 5) as f64,
                    deadline_min_ms: (1.5 * proc_ms) as u64 + 200,
                    deadline_max_ms: (4.0 * proc_ms) as u64 + 1000,
                }
            })
            .collect();
        Self { services }
    }

    pub fn validate(&self) -> Result<()> {
        if self.services.is_empty() {
            return Err(Error::config("catalog", "at least one service type is required"));
        }
        for (k, s) in self.services.iter().enumerate() {
            let field = |name: &str| format!("catalog[{k}].{name}");
            if !(s.nominal_proc_ms > 0.0) {
                return Err(Error::config(field("nominal_proc_ms"), "must be positive"));
            }
            if s.replicate_cpu == 0 || s.replicate_mem == 0 {
                return Err(Error::config(field("replicate_cpu"), "reservations must be positive"));
            }
            if !(s.image_size_mb > 0.0) {
                return Err(Error::config(field("image_size_mb"), "must be positive"));
            }
            if s.deadline_min_ms == 0 || s.deadline_min_ms > s.deadline_max_ms {
                return Err(Error::config(field("deadline_min_ms"), "need 0 < min <= max"));
            }
        }
        Ok(())
    }

    /// `W`.
    pub fn len(&self) -> usize {
        self.services.len()
    }

    pub fn is_empty(&self) -> bool {
        self.services.is_empty()
    }

    pub fn service(&self, w: ServiceId) -> &ServiceSpec {
        &self.services[w as usize - 1]
    }

    pub fn services(&self) -> impl Iterator<Item = (ServiceId, &ServiceSpec)> {
        self.services.iter().enumerate().map(|(k, s)| (k as ServiceId + 1, s))
    }

    pub fn max_deadline_ms(&self) -> u64 {
        self.services.iter().map(|s| s.deadline_max_ms).max().unwrap_or(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    /// Millicores.
    pub cpu: u32,
    /// MB.
    pub mem: u32,
    /// GB.
    pub storage: f64,
    pub speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EapSpec {
    pub nodes: Vec<NodeSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CloudSpec {
    pub parallelism: usize,
    pub speed: f64,
}

impl Default for CloudSpec {
    fn default() -> Self {
        Self {
            parallelism: 60,
            speed: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopologyConfig {
    pub eaps: Vec<EapSpec>,
    pub cloud: CloudSpec,
    /// Replicates placed on each node before the first frame, cycling
    /// through service types starting at an offset given by the node index.
    pub initial_replicas_per_node: usize,
}

impl TopologyConfig {
    /// `eaps` access points with `nodes_per_eap` nodes each; node speeds
    /// cycle through 1.0, 0.5 and 2.0 by attachment position.
    pub fn uniform(eaps: usize, nodes_per_eap: usize) -> Self {
        let speeds = [1.0, 0.5, 2.0];
        Self {
            eaps: (0..eaps)
                .map(|_| EapSpec {
                    nodes: (0..nodes_per_eap)
                        .map(|i| NodeSpec {
                            cpu: 2000,
                            mem: 4096,
                            storage: 300.0,
                            speed: speeds[i % speeds.len()],
                        })
                        .collect(),
                })
                .collect(),
            cloud: CloudSpec::default(),
            initial_replicas_per_node: 2,
        }
    }

    pub fn node_count(&self) -> usize {
        self.eaps.iter().map(|e| e.nodes.len()).sum()
    }

    pub fn max_nodes_per_eap(&self) -> usize {
        self.eaps.iter().map(|e| e.nodes.len()).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eaps.is_empty() {
            return Err(Error::config("topology.eaps", "at least one eAP is required"));
        }
        for (b, e) in self.eaps.iter().enumerate() {
            for (i, n) in e.nodes.iter().enumerate() {
                let field = format!("topology.eaps[{b}].nodes[{i}]");
                if n.cpu == 0 || n.mem == 0 || !(n.speed > 0.0) || !(n.storage >= 0.0) {
                    return Err(Error::config(field, "capacities and speed must be positive"));
                }
            }
        }
        if self.cloud.parallelism == 0 || !(self.cloud.speed > 0.0) {
            return Err(Error::config("topology.cloud", "parallelism and speed must be positive"));
        }
        Ok(())
    }
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self::uniform(2, 3)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub latency_ms: f64,
    pub bw_mbps: f64,
}

impl Link {
    /// Latency plus serialization of `size_kb` kilobytes at the link
    /// bandwidth: `latency + 8 size_kb / (bw_mbps 1000) 1000` ms.
    pub fn delay_ms(&self, size_kb: f64) -> f64 {
        self.latency_ms + 8.0 * size_kb / (self.bw_mbps * 1000.0) * 1000.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkModel {
    pub device_edge: Link,
    pub intra_edge_lan: Link,
    pub edge_cloud_wan: Link,
    /// Each transfer is scaled by `1 + U(-jitter, jitter)`; 0 disables.
    pub jitter: f64,
}

impl Default for NetworkModel {
    fn default() -> Self {
        Self {
            device_edge: Link { latency_ms: 20.0, bw_mbps: 50.0 },
            intra_edge_lan: Link { latency_ms: 10.0, bw_mbps: 1000.0 },
            edge_cloud_wan: Link { latency_ms: 100.0, bw_mbps: 100.0 },
            jitter: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Location {
    Device,
    Eap(usize),
    Node(usize),
    Cloud,
}

impl NetworkModel {
    pub fn validate(&self) -> Result<()> {
        for (name, link) in [
            ("device_edge", self.device_edge),
            ("intra_edge_lan", self.intra_edge_lan),
            ("edge_cloud_wan", self.edge_cloud_wan),
        ] {
            if !(link.latency_ms >= 0.0) || !(link.bw_mbps > 0.0) {
                return Err(Error::config(format!("network.{name}"), "latency >= 0 and bandwidth > 0 required"));
            }
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::config("network.jitter", "must lie in [0, 1)"));
        }
        Ok(())
    }

    fn link(&self, src: Location, dst: Location, node_eap: &[usize]) -> Result<Option<Link>> {
        use Location::*;
        let eap_of = |n: usize| {
            node_eap
                .get(n)
                .copied()
                .ok_or_else(|| Error::contract(format!("unknown node {n}")))
        };
        if src == dst {
            return Ok(None);
        }
        let link = match (src, dst) {
            (Device, Eap(_)) | (Eap(_), Device) => self.device_edge,
            (Eap(b), Node(n)) | (Node(n), Eap(b)) => {
                if eap_of(n)? != b {
                    return Err(Error::contract(format!("node {n} is not attached to eap {b}")));
                }
                self.intra_edge_lan
            }
            (Node(a), Node(c)) => {
                if eap_of(a)? != eap_of(c)? {
                    return Err(Error::contract(format!("nodes {a} and {c} are in different clusters")));
                }
                self.intra_edge_lan
            }
            (Eap(_), Cloud) | (Cloud, Eap(_)) => self.edge_cloud_wan,
            (Node(n), Cloud) | (Cloud, Node(n)) => {
                eap_of(n)?;
                self.edge_cloud_wan
            }
            (src, dst) => {
                return Err(Error::contract(format!("no link between {src:?} and {dst:?}")));
            }
        };
        Ok(Some(link))
    }

    /// Nominal (jitter-free) transfer time of `size_kb` from `src` to `dst`.
    /// `node_eap[n]` is the eAP that node `n` is attached to.
    pub fn transport_delay(&self, src: Location, dst: Location, size_kb: f64, node_eap: &[usize]) -> Result<f64> {
        Ok(self.link(src, dst, node_eap)?.map_or(0.0, |l| l.delay_ms(size_kb)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClockConfig {
    pub slot_ms: f64,
    pub slots_per_frame: u64,
}

impl Default for ClockConfig {
    fn default() -> Self {
        Self {
            slot_ms: 250.0,
            slots_per_frame: 100,
        }
    }
}

/// Two-time-scale clock. Slot `t` spans `[t * slot_ms, (t + 1) * slot_ms)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Clock {
    pub slot_ms: f64,
    pub slots_per_frame: u64,
    slot: u64,
}

impl Clock {
    pub fn new(config: &ClockConfig) -> Result<Self> {
        if !(config.slot_ms > 0.0) || config.slots_per_frame == 0 {
            return Err(Error::config("clock", "slot_ms and slots_per_frame must be positive"));
        }
        Ok(Self {
            slot_ms: config.slot_ms,
            slots_per_frame: config.slots_per_frame,
            slot: 0,
        })
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn frame(&self) -> u64 {
        self.slot / self.slots_per_frame
    }

    pub fn now_ms(&self) -> f64 {
        self.slot as f64 * self.slot_ms
    }

    pub fn frame_ms(&self) -> f64 {
        self.slot_ms * self.slots_per_frame as f64
    }

    pub fn is_frame_boundary(&self) -> bool {
        self.slot % self.slots_per_frame == 0
    }

    pub(crate) fn tick(&mut self) {
        self.slot += 1;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DequeueConfig {
    pub eap: Strategy,
    pub executor: Strategy,
    pub lambda_e: f64,
    pub lambda_prime: f64,
}

impl Default for DequeueConfig {
    fn default() -> Self {
        Self {
            eap: Strategy::Discounted,
            executor: Strategy::Discounted,
            lambda_e: 0.9,
            lambda_prime: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub catalog: ServiceCatalog,
    pub topology: TopologyConfig,
    pub network: NetworkModel,
    pub clock: ClockConfig,
    pub dequeue: DequeueConfig,
    /// A node with this many waiting requests is no longer a valid
    /// dispatch target.
    pub executor_queue_cap: usize,
    /// Seeds network jitter.
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            catalog: ServiceCatalog::generated(6),
            topology: TopologyConfig::default(),
            network: NetworkModel::default(),
            clock: ClockConfig::default(),
            dequeue: DequeueConfig::default(),
            executor_queue_cap: 50,
            seed: 0,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        self.catalog.validate()?;
        self.topology.validate()?;
        self.network.validate()?;
        Clock::new(&self.clock)?;
        crate::dequeue::PriorityParams::new(self.dequeue.lambda_prime)
            .map_err(|e| Error::config("dequeue.lambda_prime", e.to_string()))?;
        if !(self.dequeue.lambda_e > 0.0 && self.dequeue.lambda_e < 1.0) {
            return Err(Error::config("dequeue.lambda_e", "must lie in (0, 1)"));
        }
        if self.executor_queue_cap == 0 {
            return Err(Error::config("executor_queue_cap", "must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transport_examples() {
        let net = NetworkModel::default();
        let node_eap = [0, 0, 1];
        assert_eq!(net.transport_delay(Location::Eap(0), Location::Node(1), 0.0, &node_eap).unwrap(), 10.0);
        let cloud = net.transport_delay(Location::Eap(0), Location::Cloud, 1000.0, &node_eap).unwrap();
        assert!((cloud - 180.0).abs() < 1e-12);
        assert_eq!(net.transport_delay(Location::Node(2), Location::Node(2), 500.0, &node_eap).unwrap(), 0.0);
        assert_eq!(net.transport_delay(Location::Device, Location::Eap(1), 0.0, &node_eap).unwrap(), 20.0);
    }

    #[test]
    fn unknown_pairs_are_contract_errors() {
        let net = NetworkModel::default();
        let node_eap = [0, 1];
        assert!(net.transport_delay(Location::Eap(0), Location::Node(1), 1.0, &node_eap).is_err());
        assert!(net.transport_delay(Location::Device, Location::Cloud, 1.0, &node_eap).is_err());
        assert!(net.transport_delay(Location::Eap(0), Location::Node(9), 1.0, &node_eap).is_err());
    }

    #[test]
    fn clock_boundaries() {
        let mut clock = Clock::new(&ClockConfig { slot_ms: 250.0, slots_per_frame: 4 }).unwrap();
        assert!(clock.is_frame_boundary());
        for _ in 0..4 {
            clock.tick();
        }
        assert!(clock.is_frame_boundary());
        assert_eq!(clock.frame(), 1);
        assert_eq!(clock.now_ms(), 1000.0);
    }

    #[test]
    fn default_config_is_valid() {
        ClusterConfig::default().validate().unwrap();
        assert!(ClusterConfig { executor_queue_cap: 0, ..ClusterConfig::default() }.validate().is_err());
    }
}
