//! Fixed-length state vectors for the learning agents.

use std::collections::BTreeSet;

use super::{ClusterState, Location};
use crate::ServiceId;

/// Scales that map raw quantities into roughly `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub queue_len: f64,
    pub deadline_ms: f64,
    pub latency_ms: f64,
    pub replicas: f64,
}

impl Normalization {
    pub fn of(state: &ClusterState) -> Self {
        Self {
            queue_len: state.config.executor_queue_cap as f64,
            deadline_ms: state.config.catalog.max_deadline_ms() as f64,
            latency_ms: 1000.0,
            replicas: 8.0,
        }
    }
}

/// `W` head-request one-hot, remaining deadline, eAP queue length, four
/// features per node slot, node count, cloud latency, empty flag.
pub fn local_state_len(service_count: usize, max_nodes: usize) -> usize {
    service_count + 2 + 4 * max_nodes + 3
}

pub fn global_state_len(service_count: usize, max_nodes: usize, eaps: usize) -> usize {
    eaps * local_state_len(service_count, max_nodes) + 1
}

impl ClusterState {
    pub fn max_nodes_per_eap(&self) -> usize {
        self.config.topology.max_nodes_per_eap()
    }

    pub fn local_state_len(&self) -> usize {
        local_state_len(self.config.catalog.len(), self.max_nodes_per_eap())
    }

    pub fn global_state_len(&self) -> usize {
        global_state_len(self.config.catalog.len(), self.max_nodes_per_eap(), self.eap_count())
    }

    /// Local observation of eAP `b`. Padding node slots are zero.
    pub fn local_state(&self, b: usize) -> Vec<f64> {
        let norm = Normalization::of(self);
        let w_count = self.config.catalog.len();
        let max_nodes = self.max_nodes_per_eap();
        let mut v = Vec::with_capacity(self.local_state_len());

        let head = self.head_request(b);
        let mut onehot = vec![0.0; w_count];
        let mut remaining = 0.0;
        if let Some(h) = head {
            onehot[h.service as usize - 1] = 1.0;
            remaining = (h.remaining_ms(self.now_ms()) / norm.deadline_ms).clamp(-1.0, 1.0);
        }
        v.extend(onehot);
        v.push(remaining);
        v.push(self.eap_queue(b).len() as f64 / norm.queue_len);

        let util = self.node_utilization();
        let attached = self.eap_nodes(b);
        for slot in 0..max_nodes {
            match attached.get(slot) {
                Some(&n) => {
                    let (cpu, mem) = util[n];
                    v.push(self.nodes[n].executor.queue.len() as f64 / norm.queue_len);
                    v.push((1.0 - cpu).max(0.0));
                    v.push((1.0 - mem).max(0.0));
                    v.push(self.free_storage(n));
                }
                None => v.extend([0.0; 4]),
            }
        }
        v.push(attached.len() as f64 / max_nodes.max(1) as f64);
        v.push(self.config.network.edge_cloud_wan.latency_ms / norm.latency_ms);
        v.push(if head.is_none() { 1.0 } else { 0.0 });
        v
    }

    /// All local states followed by the cloud queue length.
    pub fn global_state(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.global_state_len());
        for b in 0..self.eap_count() {
            v.extend(self.local_state(b));
        }
        v.push(self.cloud_queue().len() as f64 / Normalization::of(self).queue_len);
        v
    }

    /// Fraction of node storage not taken by the images of deployed
    /// services. Storage never constrains placement.
    pub fn free_storage(&self, n: usize) -> f64 {
        let node = &self.nodes[n];
        if node.spec.storage <= 0.0 {
            return 0.0;
        }
        let images: BTreeSet<ServiceId> = node.replicas.iter().map(|r| r.service).collect();
        let used_gb: f64 = images
            .iter()
            .map(|&w| self.config.catalog.service(w).image_size_mb / 1000.0)
            .sum();
        (1.0 - used_gb / node.spec.storage).max(0.0)
    }

    /// Orchestration features of node `n`: free reserved CPU and memory,
    /// free storage, latency to its eAP and to the cloud, executor queue
    /// length, then per service a deployed indicator and the replica count.
    /// Length `6 + 2W`.
    pub fn node_features(&self, n: usize) -> Vec<f64> {
        let norm = Normalization::of(self);
        let node = &self.nodes[n];
        let w_count = self.config.catalog.len();
        let (cpu, mem) = node.reserved(&self.config.catalog);
        let net = &self.config.network;
        let to_eap = net
            .transport_delay(Location::Eap(node.eap_id), Location::Node(n), 0.0, self.node_eap())
            .unwrap_or(0.0);
        let to_cloud = net
            .transport_delay(Location::Node(n), Location::Cloud, 0.0, self.node_eap())
            .unwrap_or(0.0);
        let mut v = Vec::with_capacity(6 + 2 * w_count);
        v.push(1.0 - cpu as f64 / node.spec.cpu as f64);
        v.push(1.0 - mem as f64 / node.spec.mem as f64);
        v.push(self.free_storage(n));
        v.push(to_eap / norm.latency_ms);
        v.push(to_cloud / norm.latency_ms);
        v.push(node.executor.queue.len() as f64 / norm.queue_len);
        let counts: Vec<usize> = (1..=w_count as ServiceId).map(|w| node.deployed(w)).collect();
        v.extend(counts.iter().map(|&c| if c > 0 { 1.0 } else { 0.0 }));
        v.extend(counts.iter().map(|&c| c as f64 / norm.replicas));
        v
    }
}
