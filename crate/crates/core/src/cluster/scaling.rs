use super::ClusterState;
use crate::error::{Error, Result};
use crate::ServiceId;

/// Frame-scale decision: for each selected node, a delta `l` in `[-W, W]`.
/// `l = w` adds a replicate of service `w`, `l = -w` removes one, `0` is a
/// no-op.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OrchestrationAction {
    pub selected_nodes: Vec<usize>,
    pub deltas: Vec<i32>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingStep {
    pub node: usize,
    pub requested: i32,
    /// What actually happened: the requested delta, or 0 when coerced.
    /// Deferred deletions report the requested delta.
    pub realized: i32,
    /// Deletion postponed until the busy replica finishes.
    pub deferred: bool,
    pub image_pull_mb: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScalingReport {
    pub steps: Vec<ScalingStep>,
}

impl ScalingReport {
    pub fn image_pull_mb(&self) -> f64 {
        self.steps.iter().map(|s| s.image_pull_mb).sum()
    }
}

impl ClusterState {
    /// Applies replica additions and deletions. Additions that would break
    /// a capacity bound and deletions of absent services become no-ops;
    /// deleting a busy replica only flags it. A new replica starts on
    /// matching requests already waiting in its node's queue.
    pub fn apply_scaling(&mut self, action: &OrchestrationAction) -> Result<ScalingReport> {
        if action.selected_nodes.len() != action.deltas.len() {
            return Err(Error::contract("one delta per selected node is required"));
        }
        let w_count = self.config.catalog.len() as i32;
        for (k, (&n, &l)) in action.selected_nodes.iter().zip(&action.deltas).enumerate() {
            if n >= self.nodes.len() {
                return Err(Error::contract(format!("unknown node {n}")));
            }
            if l.abs() > w_count {
                return Err(Error::contract(format!("delta {l} outside [-{w_count}, {w_count}]")));
            }
            if action.selected_nodes[..k].contains(&n) {
                return Err(Error::contract(format!("node {n} selected twice")));
            }
        }

        let mut report = ScalingReport::default();
        for (&n, &l) in action.selected_nodes.iter().zip(&action.deltas) {
            let w = l.unsigned_abs() as ServiceId;
            let mut step = ScalingStep {
                node: n,
                requested: l,
                realized: 0,
                deferred: false,
                image_pull_mb: 0.0,
            };
            if l > 0 && self.fits(n, w) {
                if self.nodes[n].deployed(w) == 0 {
                    step.image_pull_mb = self.config.catalog.service(w).image_size_mb;
                }
                self.add_replica(n, w);
                self.drain_node(n, self.now_ms())?;
                step.realized = l;
            } else if l < 0 {
                let replicas = &mut self.nodes[n].replicas;
                let active = |r: &super::Replica| r.service == w && !r.pending_deletion;
                if let Some(pos) = replicas.iter().position(|r| active(r) && r.busy.is_none()) {
                    replicas.remove(pos);
                    step.realized = l;
                } else if let Some(r) = replicas.iter_mut().find(|r| active(r)) {
                    r.pending_deletion = true;
                    step.realized = l;
                    step.deferred = true;
                }
            }
            report.steps.push(step);
        }
        Ok(report)
    }
}
