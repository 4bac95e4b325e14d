use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Clock, ClusterConfig, Location, NodeSpec, ServiceCatalog};
use crate::dequeue::{CompletionEstimator, Discipline, EstimatorScope, PriorityParams, QueueEntry, Strategy};
use crate::error::{Error, Result};
use crate::workload::{Request, RequestStatus};
use crate::ServiceId;

/// One deployed instance of a service on an edge node.
#[derive(Clone, Debug, PartialEq)]
pub struct Replica {
    pub uid: u64,
    pub service: ServiceId,
    /// `(request id, finish time)` while processing.
    pub busy: Option<(u64, f64)>,
    /// Removed as soon as the current request finishes.
    pub pending_deletion: bool,
}

/// A queue plus the completion estimator its discipline ranks with.
#[derive(Clone, Debug)]
pub struct Executor {
    pub queue: Vec<QueueEntry>,
    pub estimator: CompletionEstimator,
}

#[derive(Clone, Debug)]
pub struct EdgeNode {
    pub id: usize,
    pub eap_id: usize,
    pub spec: NodeSpec,
    pub replicas: Vec<Replica>,
    pub executor: Executor,
}

impl EdgeNode {
    /// `d(w, n)`, counting replicas awaiting deletion.
    pub fn deployed(&self, w: ServiceId) -> usize {
        self.replicas.iter().filter(|r| r.service == w).count()
    }

    /// Has a replica of `w` that will keep serving.
    pub fn serves(&self, w: ServiceId) -> bool {
        self.replicas.iter().any(|r| r.service == w && !r.pending_deletion)
    }

    pub fn reserved(&self, catalog: &ServiceCatalog) -> (u64, u64) {
        self.replicas.iter().fold((0, 0), |(c, m), r| {
            let s = catalog.service(r.service);
            (c + s.replicate_cpu as u64, m + s.replicate_mem as u64)
        })
    }

    fn idle_by_service(&self) -> BTreeMap<ServiceId, usize> {
        let mut idle = BTreeMap::new();
        for r in &self.replicas {
            if r.busy.is_none() && !r.pending_deletion {
                *idle.entry(r.service).or_insert(0) += 1;
            }
        }
        idle
    }
}

#[derive(Clone, Debug)]
struct Eap {
    queue: Vec<QueueEntry>,
    estimator: CompletionEstimator,
    nodes: Vec<usize>,
}

#[derive(Clone, Debug)]
struct Cloud {
    executor: Executor,
    /// Request id -> finish time.
    running: BTreeMap<u64, f64>,
}

/// Slot-scale decision of one eAP: send the head request to the cloud
/// (`target == 0`) or to the `target`-th node attached to the eAP.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DispatchAction {
    pub eap_id: usize,
    pub target: usize,
    pub request_id: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dispatched {
    pub eap_id: usize,
    pub request_id: u64,
    pub destination: Location,
    pub input_size_kb: u32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Completion {
    pub request_id: u64,
    pub eap_id: usize,
    pub service: ServiceId,
    pub on_time: bool,
    pub at_ms: f64,
    /// `None` for requests dropped before finishing.
    pub executed_at: Option<Location>,
}

/// Everything that happened during one slot.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SlotOutcome {
    pub slot: u64,
    pub start_ms: f64,
    pub end_ms: f64,
    /// Requests that reached their eAP during the slot.
    pub arrived: u64,
    pub dispatched: Vec<Dispatched>,
    pub completed_edge: u64,
    pub completed_cloud: u64,
    /// Late completions plus requests dropped at slot end.
    pub violations: u64,
    pub completions: Vec<Completion>,
    /// Input bytes sent over the WAN by cloud dispatches.
    pub forwarded_kb: u64,
    /// Per node `(cpu, mem)` utilization at slot end.
    pub node_utilization: Vec<(f64, f64)>,
    /// Population std of the 2N utilization fractions.
    pub load_std: f64,
    pub in_flight: u64,
}

impl SlotOutcome {
    pub fn completed(&self) -> u64 {
        self.completed_edge + self.completed_cloud
    }

    /// Fraction of requests resolved this slot that missed their deadline;
    /// 0 when nothing was resolved.
    pub fn violation_ratio(&self) -> f64 {
        let resolved = self.violations + self.completed();
        if resolved == 0 {
            0.0
        } else {
            self.violations as f64 / resolved as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum EventKind {
    Arrive(usize),
    Deliver { request: usize, to: Location },
    NodeFinish { node: usize, uid: u64, request: u64 },
    CloudFinish { request: u64 },
}

#[derive(Clone, Copy, Debug)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time.total_cmp(&other.time).then(self.seq.cmp(&other.seq))
    }
}

/// Per node and service busy/deployed replica-milliseconds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReplicaUsage {
    pub busy_ms: Vec<Vec<f64>>,
    pub deployed_ms: Vec<Vec<f64>>,
}

impl ReplicaUsage {
    fn new(nodes: usize, services: usize) -> Self {
        Self {
            busy_ms: vec![vec![0.0; services]; nodes],
            deployed_ms: vec![vec![0.0; services]; nodes],
        }
    }

    /// Busy fraction of all replica time of service `w` cluster-wide;
    /// `None` if `w` was not deployed.
    pub fn service_utilization(&self, w: ServiceId) -> Option<f64> {
        let k = w as usize - 1;
        let deployed: f64 = self.deployed_ms.iter().map(|n| n[k]).sum();
        let busy: f64 = self.busy_ms.iter().map(|n| n[k]).sum();
        (deployed > 0.0).then(|| busy / deployed)
    }
}

/// The simulated edge-cloud system. All mutation goes through
/// [`ClusterState::step_slot`] and [`ClusterState::apply_scaling`].
#[derive(Clone, Debug)]
pub struct ClusterState {
    pub(super) config: ClusterConfig,
    pub(super) clock: Clock,
    pub(super) nodes: Vec<EdgeNode>,
    eaps: Vec<Eap>,
    cloud: Cloud,
    node_eap: Vec<usize>,
    requests: Vec<Request>,
    index: HashMap<u64, usize>,
    /// Ledger positions not yet arrived, in arrival order.
    upcoming: std::collections::VecDeque<usize>,
    in_transit: BTreeSet<u64>,
    events: BinaryHeap<Reverse<Event>>,
    seq: u64,
    pub(super) next_uid: u64,
    rng: ChaCha8Rng,
    usage_time: f64,
    usage: ReplicaUsage,
    last_frame_usage: ReplicaUsage,
    arrived_total: u64,
    on_time_total: u64,
    violated_total: u64,
    observations: BTreeMap<(Location, ServiceId), (f64, u64)>,
    outcome: SlotOutcome,
}

fn entry_of(r: &Request) -> QueueEntry {
    QueueEntry {
        id: r.id,
        service: r.service(),
        arrival_ms: r.record.arrival_ms as f64,
        deadline_ms: r.deadline_at(),
    }
}

impl ClusterState {
    /// Builds the cluster with its initial replica placement and the
    /// request stream to replay. Requests need unique ids.
    pub fn new(config: ClusterConfig, mut requests: Vec<Request>) -> Result<Self> {
        config.validate()?;
        let catalog = &config.catalog;
        let w_count = catalog.len();
        let lambda_e = config.dequeue.lambda_e;
        let nominal: Vec<f64> = catalog.services().map(|(_, s)| s.nominal_proc_ms).collect();
        let lan = config.network.intra_edge_lan.latency_ms;

        let mut nodes = Vec::new();
        let mut eaps = Vec::new();
        let mut node_eap = Vec::new();
        for (b, spec) in config.topology.eaps.iter().enumerate() {
            let mut attached = Vec::new();
            for ns in &spec.nodes {
                let id = nodes.len();
                attached.push(id);
                node_eap.push(b);
                nodes.push(EdgeNode {
                    id,
                    eap_id: b,
                    spec: ns.clone(),
                    replicas: Vec::new(),
                    executor: Executor {
                        queue: Vec::new(),
                        estimator: CompletionEstimator::new(nominal.clone(), lambda_e, EstimatorScope::Executor)?,
                    },
                });
            }
            eaps.push(Eap {
                queue: Vec::new(),
                estimator: CompletionEstimator::new(
                    nominal.iter().map(|p| p + lan).collect(),
                    lambda_e,
                    EstimatorScope::Eap,
                )?,
                nodes: attached,
            });
        }

        let mut index = HashMap::with_capacity(requests.len());
        for (i, r) in requests.iter().enumerate() {
            r.record.validate(w_count)?;
            if r.eap_id >= eaps.len() {
                return Err(Error::Validation(format!("request {} bound to unknown eap {}", r.id, r.eap_id)));
            }
            if index.insert(r.id, i).is_some() {
                return Err(Error::Validation(format!("duplicate request id {}", r.id)));
            }
        }
        for r in &mut requests {
            *r = Request::new(r.id, r.record, r.eap_id);
        }
        let mut upcoming: Vec<usize> = (0..requests.len()).collect();
        upcoming.sort_by_key(|&i| (requests[i].record.arrival_ms, requests[i].id));

        let node_count = nodes.len();
        let mut state = Self {
            clock: Clock::new(&config.clock)?,
            cloud: Cloud {
                executor: Executor {
                    queue: Vec::new(),
                    estimator: CompletionEstimator::new(nominal, lambda_e, EstimatorScope::Executor)?,
                },
                running: BTreeMap::new(),
            },
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            nodes,
            eaps,
            node_eap,
            requests,
            index,
            upcoming: upcoming.into(),
            in_transit: BTreeSet::new(),
            events: BinaryHeap::new(),
            seq: 0,
            next_uid: 0,
            usage_time: 0.0,
            usage: ReplicaUsage::new(node_count, w_count),
            last_frame_usage: ReplicaUsage::new(node_count, w_count),
            arrived_total: 0,
            on_time_total: 0,
            violated_total: 0,
            observations: BTreeMap::new(),
            outcome: SlotOutcome::default(),
            config,
        };
        state.place_initial_replicas();
        Ok(state)
    }

    fn place_initial_replicas(&mut self) {
        let w_count = self.config.catalog.len();
        let per_node = self.config.topology.initial_replicas_per_node;
        for n in 0..self.nodes.len() {
            let mut placed = 0;
            for k in 0..w_count {
                if placed == per_node {
                    break;
                }
                let w = ((n + k) % w_count) as ServiceId + 1;
                if self.fits(n, w) {
                    self.add_replica(n, w);
                    placed += 1;
                }
            }
        }
    }

    /// Whether one more replicate of `w` fits node `n`'s CPU and memory.
    pub fn can_host(&self, n: usize, w: ServiceId) -> bool {
        self.fits(n, w)
    }

    pub(super) fn fits(&self, n: usize, w: ServiceId) -> bool {
        let node = &self.nodes[n];
        let (cpu, mem) = node.reserved(&self.config.catalog);
        let s = self.config.catalog.service(w);
        cpu + s.replicate_cpu as u64 <= node.spec.cpu as u64 && mem + s.replicate_mem as u64 <= node.spec.mem as u64
    }

    pub(super) fn add_replica(&mut self, n: usize, w: ServiceId) {
        let uid = self.next_uid;
        self.next_uid += 1;
        self.nodes[n].replicas.push(Replica {
            uid,
            service: w,
            busy: None,
            pending_deletion: false,
        });
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.config
    }

    pub fn catalog(&self) -> &ServiceCatalog {
        &self.config.catalog
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    pub fn now_ms(&self) -> f64 {
        self.clock.now_ms()
    }

    pub fn nodes(&self) -> &[EdgeNode] {
        &self.nodes
    }

    pub fn eap_count(&self) -> usize {
        self.eaps.len()
    }

    /// Global ids of the nodes attached to eAP `b`, in dispatch-target order.
    pub fn eap_nodes(&self, b: usize) -> &[usize] {
        &self.eaps[b].nodes
    }

    pub fn node_eap(&self) -> &[usize] {
        &self.node_eap
    }

    pub fn eap_queue(&self, b: usize) -> &[QueueEntry] {
        &self.eaps[b].queue
    }

    pub fn eap_estimator(&self, b: usize) -> &CompletionEstimator {
        &self.eaps[b].estimator
    }

    pub fn cloud_queue(&self) -> &[QueueEntry] {
        &self.cloud.executor.queue
    }

    pub fn cloud_running(&self) -> usize {
        self.cloud.running.len()
    }

    pub fn request(&self, id: u64) -> Option<&Request> {
        self.index.get(&id).map(|&i| &self.requests[i])
    }

    /// Every request handed to the simulator, arrived or not.
    pub fn requests(&self) -> &[Request] {
        &self.requests
    }

    pub fn arrived_total(&self) -> u64 {
        self.arrived_total
    }

    pub fn on_time_total(&self) -> u64 {
        self.on_time_total
    }

    pub fn violated_total(&self) -> u64 {
        self.violated_total
    }

    /// True once every request has arrived and been resolved.
    pub fn is_idle(&self) -> bool {
        self.upcoming.is_empty() && self.in_flight_count() == 0
    }

    /// Requests that arrived and are not yet terminal, counted from the
    /// queues, links and executors themselves.
    pub fn in_flight_count(&self) -> u64 {
        let queued: usize = self.eaps.iter().map(|e| e.queue.len()).sum::<usize>()
            + self.nodes.iter().map(|n| n.executor.queue.len()).sum::<usize>()
            + self.cloud.executor.queue.len();
        let processing = self
            .nodes
            .iter()
            .flat_map(|n| &n.replicas)
            .filter(|r| r.busy.is_some())
            .count()
            + self.cloud.running.len();
        (queued + processing + self.in_transit.len()) as u64
    }

    /// Replica usage accumulated over the previous full frame.
    pub fn last_frame_usage(&self) -> &ReplicaUsage {
        &self.last_frame_usage
    }

    fn discipline<'a>(&self, strategy: Strategy, estimator: &'a CompletionEstimator, now: f64) -> Discipline<'a> {
        Discipline {
            strategy,
            estimator,
            params: PriorityParams {
                lambda_prime: self.config.dequeue.lambda_prime,
            },
            now_ms: now,
        }
    }

    /// The request eAP `b` would dispatch now.
    pub fn head_request(&self, b: usize) -> Option<QueueEntry> {
        let eap = &self.eaps[b];
        let d = self.discipline(self.config.dequeue.eap, &eap.estimator, self.now_ms());
        d.select(&eap.queue).map(|i| eap.queue[i])
    }

    /// Whether node `n` may receive a request of service `w`.
    pub fn node_available(&self, n: usize, w: ServiceId) -> bool {
        let node = &self.nodes[n];
        node.serves(w) && node.executor.queue.len() < self.config.executor_queue_cap
    }

    /// Resource context of eAP `b` for its head request: index 0 is the
    /// cloud (always valid), index `j` the `j`-th attached node. `None` when
    /// the queue is empty.
    pub fn mask(&self, b: usize) -> Option<Vec<bool>> {
        let head = self.head_request(b)?;
        Some(self.mask_for(b, head.service))
    }

    pub fn mask_for(&self, b: usize, w: ServiceId) -> Vec<bool> {
        std::iter::once(true)
            .chain(self.eaps[b].nodes.iter().map(|&n| self.node_available(n, w)))
            .collect()
    }

    /// Per node `(cpu, mem)` fraction in use by requests being processed.
    pub fn node_utilization(&self) -> Vec<(f64, f64)> {
        self.nodes
            .iter()
            .map(|node| {
                let (mut cpu, mut mem) = (0.0, 0.0);
                for r in &node.replicas {
                    if let Some((id, _)) = r.busy {
                        let req = &self.requests[self.index[&id]].record;
                        let s = self.config.catalog.service(r.service);
                        cpu += req.cpu_demand.min(s.replicate_cpu) as f64;
                        mem += req.mem_demand.min(s.replicate_mem) as f64;
                    }
                }
                (cpu / node.spec.cpu as f64, mem / node.spec.mem as f64)
            })
            .collect()
    }

    /// Population std of the per-node CPU and memory utilizations.
    pub fn load_std(&self) -> f64 {
        load_std(&self.node_utilization())
    }

    /// Total requests waiting in executor queues across edge nodes.
    pub fn edge_backlog(&self) -> usize {
        self.nodes.iter().map(|n| n.executor.queue.len()).sum()
    }

    fn push_event(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.events.push(Reverse(Event { time, seq: self.seq, kind }));
    }

    fn transfer_ms(&mut self, src: Location, dst: Location, size_kb: f64) -> Result<f64> {
        let nominal = self.config.network.transport_delay(src, dst, size_kb, &self.node_eap)?;
        let jitter = self.config.network.jitter;
        Ok(if jitter > 0.0 {
            nominal * (1.0 + self.rng.gen_range(-jitter..jitter))
        } else {
            nominal
        })
    }

    fn accumulate_usage(&mut self, to: f64) {
        let dt = to - self.usage_time;
        if dt <= 0.0 {
            return;
        }
        for (n, node) in self.nodes.iter().enumerate() {
            for r in &node.replicas {
                let k = r.service as usize - 1;
                self.usage.deployed_ms[n][k] += dt;
                if r.busy.is_some() {
                    self.usage.busy_ms[n][k] += dt;
                }
            }
        }
        self.usage_time = to;
    }

    /// Places `request` directly into the executor queue of node `n`,
    /// bypassing eAP dispatch and masking. It counts as arrived now.
    pub fn enqueue_at_executor(&mut self, n: usize, mut request: Request) -> Result<()> {
        if n >= self.nodes.len() {
            return Err(Error::contract(format!("unknown node {n}")));
        }
        request.record.validate(self.config.catalog.len())?;
        if self.index.contains_key(&request.id) {
            return Err(Error::contract(format!("duplicate request id {}", request.id)));
        }
        request = Request::new(request.id, request.record, self.node_eap[n]);
        request.advance(RequestStatus::QueuedAtExecutor)?;
        self.nodes[n].executor.queue.push(entry_of(&request));
        self.index.insert(request.id, self.requests.len());
        self.requests.push(request);
        self.arrived_total += 1;
        self.outcome.arrived += 1;
        let now = self.now_ms();
        self.drain_node(n, now)
    }

    fn validate_action(&self, action: &DispatchAction) -> Result<Location> {
        let invalid = |reason: String| Error::InvalidAction {
            eap: action.eap_id,
            reason,
        };
        let eap = self
            .eaps
            .get(action.eap_id)
            .ok_or_else(|| invalid("unknown eap".into()))?;
        let head = self
            .head_request(action.eap_id)
            .ok_or_else(|| invalid("dispatch queue is empty".into()))?;
        if head.id != action.request_id {
            return Err(invalid(format!(
                "request {} is not the head request {}",
                action.request_id, head.id
            )));
        }
        if action.target == 0 {
            return Ok(Location::Cloud);
        }
        let n = *eap
            .nodes
            .get(action.target - 1)
            .ok_or_else(|| invalid(format!("target {} beyond {} attached nodes", action.target, eap.nodes.len())))?;
        if !self.node_available(n, head.service) {
            return Err(invalid(format!(
                "node {n} cannot accept service {} (no active replica or queue full)",
                head.service
            )));
        }
        Ok(Location::Node(n))
    }

    /// Advances one slot: applies the dispatch decisions, replays arrivals,
    /// transfers and executions inside the slot, then drops every request
    /// whose deadline passed unfinished.
    ///
    /// All actions are validated before any takes effect; an invalid one
    /// leaves the state untouched.
    pub fn step_slot(&mut self, actions: &[DispatchAction]) -> Result<SlotOutcome> {
        let mut seen = BTreeSet::new();
        let mut targets = Vec::with_capacity(actions.len());
        for a in actions {
            if !seen.insert(a.eap_id) {
                return Err(Error::InvalidAction {
                    eap: a.eap_id,
                    reason: "more than one dispatch in a slot".into(),
                });
            }
            targets.push(self.validate_action(a)?);
        }

        let start = self.now_ms();
        let end = start + self.clock.slot_ms;
        self.outcome = SlotOutcome {
            slot: self.clock.slot(),
            start_ms: start,
            end_ms: end,
            ..SlotOutcome::default()
        };

        for (a, dst) in actions.iter().zip(targets) {
            self.dispatch(a, dst, start)?;
        }

        let device_delay = self.config.network.device_edge.latency_ms;
        while let Some(&i) = self.upcoming.front() {
            let at = self.requests[i].record.arrival_ms as f64 + device_delay;
            if at >= end {
                break;
            }
            self.upcoming.pop_front();
            self.push_event(at.max(start), EventKind::Arrive(i));
        }

        while let Some(Reverse(ev)) = self.events.peek().copied() {
            if ev.time >= end {
                break;
            }
            self.events.pop();
            self.accumulate_usage(ev.time);
            self.handle(ev)?;
        }

        self.accumulate_usage(end);
        self.drop_expired(end)?;
        self.apply_observations()?;

        self.clock.tick();
        if self.clock.is_frame_boundary() {
            let fresh = ReplicaUsage::new(self.nodes.len(), self.config.catalog.len());
            self.last_frame_usage = std::mem::replace(&mut self.usage, fresh);
        }

        let mut outcome = std::mem::take(&mut self.outcome);
        outcome.node_utilization = self.node_utilization();
        outcome.load_std = load_std(&outcome.node_utilization);
        outcome.in_flight = self.in_flight_count();
        Ok(outcome)
    }

    fn dispatch(&mut self, action: &DispatchAction, dst: Location, now: f64) -> Result<()> {
        let b = action.eap_id;
        let pos = self.eaps[b]
            .queue
            .iter()
            .position(|e| e.id == action.request_id)
            .ok_or_else(|| Error::contract("validated request vanished from its queue"))?;
        self.eaps[b].queue.remove(pos);
        let i = self.index[&action.request_id];
        let size = self.requests[i].record.input_size_kb;
        {
            let r = &mut self.requests[i];
            r.advance(RequestStatus::InTransit)?;
            r.dequeue_time_ms = Some(now);
        }
        self.in_transit.insert(action.request_id);
        let delay = self.transfer_ms(Location::Eap(b), dst, size as f64)?;
        self.push_event(now + delay, EventKind::Deliver { request: i, to: dst });
        if dst == Location::Cloud {
            self.outcome.forwarded_kb += size as u64;
        }
        self.outcome.dispatched.push(Dispatched {
            eap_id: b,
            request_id: action.request_id,
            destination: dst,
            input_size_kb: size,
        });
        Ok(())
    }

    fn handle(&mut self, ev: Event) -> Result<()> {
        match ev.kind {
            EventKind::Arrive(i) => {
                let r = &self.requests[i];
                self.eaps[r.eap_id].queue.push(entry_of(r));
                self.arrived_total += 1;
                self.outcome.arrived += 1;
            }
            EventKind::Deliver { request: i, to } => {
                let id = self.requests[i].id;
                if !self.in_transit.remove(&id) {
                    return Ok(()); // dropped on the way
                }
                self.requests[i].advance(RequestStatus::QueuedAtExecutor)?;
                let entry = entry_of(&self.requests[i]);
                match to {
                    Location::Node(n) => {
                        self.nodes[n].executor.queue.push(entry);
                        self.drain_node(n, ev.time)?;
                    }
                    Location::Cloud => {
                        self.cloud.executor.queue.push(entry);
                        self.drain_cloud(ev.time)?;
                    }
                    other => return Err(Error::contract(format!("cannot deliver to {other:?}"))),
                }
            }
            EventKind::NodeFinish { node, uid, request } => {
                let Some(pos) = self.nodes[node]
                    .replicas
                    .iter()
                    .position(|r| r.uid == uid && r.busy.map(|(id, _)| id) == Some(request))
                else {
                    return Ok(()); // request was dropped while processing
                };
                self.release_replica(node, pos);
                self.complete(request, ev.time, Location::Node(node))?;
                self.drain_node(node, ev.time)?;
            }
            EventKind::CloudFinish { request } => {
                if self.cloud.running.remove(&request).is_none() {
                    return Ok(());
                }
                self.complete(request, ev.time, Location::Cloud)?;
                self.drain_cloud(ev.time)?;
            }
        }
        Ok(())
    }

    fn release_replica(&mut self, n: usize, pos: usize) {
        let replica = &mut self.nodes[n].replicas[pos];
        replica.busy = None;
        if replica.pending_deletion {
            self.nodes[n].replicas.remove(pos);
        }
    }

    fn complete(&mut self, id: u64, at: f64, loc: Location) -> Result<()> {
        let i = self.index[&id];
        let r = &mut self.requests[i];
        let on_time = at <= r.deadline_at();
        r.finish(on_time, at)?;
        let (service, eap_id) = (r.service(), r.eap_id);
        let eap_obs = at - r.dequeue_time_ms.unwrap_or(at);
        let exec_obs = at - r.start_time_ms.unwrap_or(at);
        self.record_terminal(id, eap_id, service, on_time, at, Some(loc));
        if on_time {
            match loc {
                Location::Cloud => self.outcome.completed_cloud += 1,
                _ => self.outcome.completed_edge += 1,
            }
        }
        if eap_obs > 0.0 && self.requests[i].dequeue_time_ms.is_some() {
            observe(&mut self.observations, Location::Eap(eap_id), service, eap_obs);
        }
        if exec_obs > 0.0 {
            observe(&mut self.observations, loc, service, exec_obs);
        }
        Ok(())
    }

    fn record_terminal(&mut self, id: u64, eap_id: usize, service: ServiceId, on_time: bool, at: f64, loc: Option<Location>) {
        if on_time {
            self.on_time_total += 1;
        } else {
            self.violated_total += 1;
            self.outcome.violations += 1;
        }
        self.outcome.completions.push(Completion {
            request_id: id,
            eap_id,
            service,
            on_time,
            at_ms: at,
            executed_at: loc,
        });
    }

    fn start(&mut self, entry: &QueueEntry, now: f64, proc_ms: f64) -> Result<f64> {
        let i = self.index[&entry.id];
        let r = &mut self.requests[i];
        r.advance(RequestStatus::Processing)?;
        r.start_time_ms = Some(now);
        Ok(now + proc_ms)
    }

    pub(super) fn drain_node(&mut self, n: usize, now: f64) -> Result<()> {
        let mut idle = self.nodes[n].idle_by_service();
        let mut queue = std::mem::take(&mut self.nodes[n].executor.queue);
        let taken = {
            let d = self.discipline(self.config.dequeue.executor, &self.nodes[n].executor.estimator, now);
            d.drain(&mut queue, &mut idle)
        };
        self.nodes[n].executor.queue = queue;
        let speed = self.nodes[n].spec.speed;
        for entry in taken {
            let proc_ms = self.config.catalog.service(entry.service).nominal_proc_ms / speed;
            let finish = self.start(&entry, now, proc_ms)?;
            let replica = self.nodes[n]
                .replicas
                .iter_mut()
                .find(|r| r.service == entry.service && r.busy.is_none() && !r.pending_deletion)
                .ok_or_else(|| Error::contract("drain took a request without an idle replica"))?;
            replica.busy = Some((entry.id, finish));
            let uid = replica.uid;
            self.push_event(
                finish,
                EventKind::NodeFinish {
                    node: n,
                    uid,
                    request: entry.id,
                },
            );
        }
        Ok(())
    }

    fn drain_cloud(&mut self, now: f64) -> Result<()> {
        let free = self.config.topology.cloud.parallelism - self.cloud.running.len();
        if free == 0 || self.cloud.executor.queue.is_empty() {
            return Ok(());
        }
        let mut queue = std::mem::take(&mut self.cloud.executor.queue);
        let mut taken = Vec::new();
        {
            let d = self.discipline(self.config.dequeue.executor, &self.cloud.executor.estimator, now);
            for _ in 0..free {
                match d.dequeue(&mut queue) {
                    Some(e) => taken.push(e),
                    None => break,
                }
            }
        }
        self.cloud.executor.queue = queue;
        let speed = self.config.topology.cloud.speed;
        for entry in taken {
            let proc_ms = self.config.catalog.service(entry.service).nominal_proc_ms / speed;
            let finish = self.start(&entry, now, proc_ms)?;
            self.cloud.running.insert(entry.id, finish);
            self.push_event(finish, EventKind::CloudFinish { request: entry.id });
        }
        Ok(())
    }

    /// Drops every unfinished request whose deadline lies before `end`,
    /// then lets freed replicas pick up queued work.
    fn drop_expired(&mut self, end: f64) -> Result<()> {
        let mut expired: Vec<u64> = Vec::new();
        let late = |e: &QueueEntry| e.deadline_ms < end;
        for eap in &mut self.eaps {
            expired.extend(eap.queue.iter().filter(|e| late(e)).map(|e| e.id));
            eap.queue.retain(|e| !late(e));
        }
        for node in &mut self.nodes {
            expired.extend(node.executor.queue.iter().filter(|e| late(e)).map(|e| e.id));
            node.executor.queue.retain(|e| !late(e));
        }
        expired.extend(self.cloud.executor.queue.iter().filter(|e| late(e)).map(|e| e.id));
        self.cloud.executor.queue.retain(|e| !late(e));

        let requests = &self.requests;
        let index = &self.index;
        let deadline = |id: &u64| requests[index[id]].deadline_at();
        let transit: Vec<u64> = self.in_transit.iter().copied().filter(|id| deadline(id) < end).collect();
        for id in &transit {
            self.in_transit.remove(id);
        }
        expired.extend(transit);

        let mut touched = BTreeSet::new();
        for n in 0..self.nodes.len() {
            let mut pos = 0;
            while pos < self.nodes[n].replicas.len() {
                let busy = self.nodes[n].replicas[pos].busy;
                match busy {
                    Some((id, _)) if self.requests[self.index[&id]].deadline_at() < end => {
                        expired.push(id);
                        touched.insert(n);
                        let before = self.nodes[n].replicas.len();
                        self.release_replica(n, pos);
                        if self.nodes[n].replicas.len() == before {
                            pos += 1;
                        }
                    }
                    _ => pos += 1,
                }
            }
        }
        let requests = &self.requests;
        let index = &self.index;
        let deadline = |id: &u64| requests[index[id]].deadline_at();
        let cloud_late: Vec<u64> = self.cloud.running.keys().copied().filter(|id| deadline(id) < end).collect();
        for id in &cloud_late {
            self.cloud.running.remove(id);
        }
        let cloud_touched = !cloud_late.is_empty();
        expired.extend(cloud_late);

        expired.sort_unstable();
        for id in expired {
            let i = self.index[&id];
            let r = &mut self.requests[i];
            r.finish(false, end)?;
            let (eap_id, service) = (r.eap_id, r.service());
            self.record_terminal(id, eap_id, service, false, end, None);
        }
        for n in touched {
            self.drain_node(n, end)?;
        }
        if cloud_touched {
            self.drain_cloud(end)?;
        }
        Ok(())
    }

    fn apply_observations(&mut self) -> Result<()> {
        for ((loc, w), (sum, count)) in std::mem::take(&mut self.observations) {
            let mean = sum / count as f64;
            match loc {
                Location::Eap(b) => self.eaps[b].estimator.update(w, mean)?,
                Location::Node(n) => self.nodes[n].executor.estimator.update(w, mean)?,
                Location::Cloud => self.cloud.executor.estimator.update(w, mean)?,
                Location::Device => {}
            }
        }
        Ok(())
    }
}

fn observe(obs: &mut BTreeMap<(Location, ServiceId), (f64, u64)>, loc: Location, w: ServiceId, ms: f64) {
    let e = obs.entry((loc, w)).or_insert((0.0, 0));
    e.0 += ms;
    e.1 += 1;
}

/// Population std of the concatenated CPU and memory utilizations.
pub fn load_std(utilization: &[(f64, f64)]) -> f64 {
    if utilization.is_empty() {
        return 0.0;
    }
    let values: Vec<f64> = utilization.iter().flat_map(|&(c, m)| [c, m]).collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}
