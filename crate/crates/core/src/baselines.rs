//! Non-learning reference policies: utilization-greedy dispatch and a
//! threshold autoscaler in the style of a horizontal pod autoscaler.

use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterState, DispatchAction, OrchestrationAction};
use crate::error::{Error, Result};
use crate::ServiceId;

/// Sends eAP `b`'s head request to the valid attached node with the lowest
/// mean of CPU and memory utilization (lowest index on ties), or to the
/// cloud when no node is valid. `None` when the queue is empty.
pub fn greedy_dispatch(state: &ClusterState, b: usize) -> Option<DispatchAction> {
    let head = state.head_request(b)?;
    let util = state.node_utilization();
    let mut best: Option<(usize, f64)> = None;
    for (j, &n) in state.eap_nodes(b).iter().enumerate() {
        if !state.node_available(n, head.service) {
            continue;
        }
        let load = (util[n].0 + util[n].1) / 2.0;
        if best.map_or(true, |(_, l)| load < l) {
            best = Some((j + 1, load));
        }
    }
    Some(DispatchAction {
        eap_id: b,
        target: best.map_or(0, |(j, _)| j),
        request_id: head.id,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdConfig {
    pub target_utilization: f64,
    pub scale_up_threshold: f64,
    pub scale_down_threshold: f64,
    pub min_replicas: usize,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            target_utilization: 0.5,
            scale_up_threshold: 0.8,
            scale_down_threshold: 0.2,
            min_replicas: 1,
        }
    }
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<()> {
        let (down, up) = (self.scale_down_threshold, self.scale_up_threshold);
        if !(0.0 < down && down < up && up < 1.0) {
            return Err(Error::config("native", "need 0 < scale_down_threshold < scale_up_threshold < 1"));
        }
        if !(self.target_utilization > 0.0 && self.target_utilization <= 1.0) {
            return Err(Error::config("native.target_utilization", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Per service, compares last frame's busy fraction `u` of its replicas
/// with the thresholds. Above the upper one the service grows towards
/// `ceil(total * u / target_utilization)` replicates, one per node, on the
/// nodes with the most free CPU that can host it; below the lower one a
/// replicate is removed from the node where `w`'s replicas were least busy.
/// Services without usage history are left alone, except that a service
/// below `min_replicas` cluster-wide is brought up to it. Each node receives
/// at most one delta per frame; a service whose preferred node is taken
/// falls back to the next best.
pub fn threshold_autoscale(state: &ClusterState, config: &ThresholdConfig) -> OrchestrationAction {
    let usage = state.last_frame_usage();
    let nodes = state.nodes();
    let catalog = state.catalog();
    let mut action = OrchestrationAction::default();

    for w in 1..=catalog.len() as ServiceId {
        let k = w as usize - 1;
        let total: usize = nodes.iter().map(|n| n.deployed(w)).sum();
        let util = usage.service_utilization(w);
        let mut wanted = config.min_replicas.saturating_sub(total);
        if let Some(u) = util.filter(|&u| u > config.scale_up_threshold) {
            let desired = (total as f64 * u / config.target_utilization).ceil() as usize;
            wanted = wanted.max(desired.saturating_sub(total)).max(1);
        }
        if wanted > 0 {
            let mut candidates: Vec<(usize, u64)> = (0..nodes.len())
                .filter(|&n| !action.selected_nodes.contains(&n) && state.can_host(n, w))
                .map(|n| (n, (nodes[n].spec.cpu as u64).saturating_sub(nodes[n].reserved(catalog).0)))
                .collect();
            candidates.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            for (n, _) in candidates.into_iter().take(wanted) {
                action.selected_nodes.push(n);
                action.deltas.push(w as i32);
            }
        } else if total > config.min_replicas && util.is_some_and(|u| u < config.scale_down_threshold) {
            let target = (0..nodes.len())
                .filter(|&n| !action.selected_nodes.contains(&n) && nodes[n].serves(w))
                .map(|n| {
                    let deployed = usage.deployed_ms[n][k];
                    let busy = if deployed > 0.0 { usage.busy_ms[n][k] / deployed } else { 0.0 };
                    (n, busy)
                })
                .fold(None, |best: Option<(usize, f64)>, (n, busy)| match best {
                    Some((_, b)) if b <= busy => best,
                    _ => Some((n, busy)),
                });
            if let Some((n, _)) = target {
                action.selected_nodes.push(n);
                action.deltas.push(-(w as i32));
            }
        }
    }
    action
}
