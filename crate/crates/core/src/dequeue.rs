//! Queue disciplines for eAP dispatch queues and executor queues.
//!
//! The discounted-experience strategy keeps an exponentially discounted
//! estimate of how long a request of each service type takes to complete,
//! and ranks queued requests by comparing that estimate with their remaining
//! time budget.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ServiceId;

/// Gap below which remaining time and estimate count as equal, in ms.
pub const TIE_EPSILON_MS: f64 = 1.0;
/// Priority assigned to exact ties: the feasible branch evaluated at the tie
/// resolution, expressed per second.
pub const TIE_PRIORITY: f64 = 1000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Fifo,
    LatencyGreedy,
    Discounted,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fifo" => Ok(Strategy::Fifo),
            "latency_greedy" => Ok(Strategy::LatencyGreedy),
            "discounted" => Ok(Strategy::Discounted),
            other => Err(Error::config("dequeue", format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorScope {
    /// Dequeue at the eAP until completion: transport, executor queueing
    /// and execution.
    Eap,
    /// Executor dequeue until completion; transport is not included.
    Executor,
}

/// Per-service discounted completion-time estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct CompletionEstimator {
    estimates: Vec<f64>,
    pub lambda_e: f64,
    pub scope: EstimatorScope,
}

impl CompletionEstimator {
    /// `initial[w - 1]` seeds the estimate for service `w`.
    pub fn new(initial: Vec<f64>, lambda_e: f64, scope: EstimatorScope) -> Result<Self> {
        if !(lambda_e > 0.0 && lambda_e < 1.0) {
            return Err(Error::contract(format!("lambda_e must lie in (0, 1), got {lambda_e}")));
        }
        if initial.iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::contract("initial estimates must be non-negative"));
        }
        Ok(Self {
            estimates: initial,
            lambda_e,
            scope,
        })
    }

    pub fn service_count(&self) -> usize {
        self.estimates.len()
    }

    pub fn estimate(&self, service: ServiceId) -> f64 {
        self.estimates[service as usize - 1]
    }

    pub fn estimates(&self) -> &[f64] {
        &self.estimates
    }

    /// `E[w] <- lambda_e E[w] + (1 - lambda_e) observed`. A zero observation
    /// means nothing completed this slot and leaves the estimate alone.
    pub fn update(&mut self, service: ServiceId, observed_ms: f64) -> Result<()> {
        let slot = (service as usize)
            .checked_sub(1)
            .and_then(|i| self.estimates.get_mut(i))
            .ok_or_else(|| Error::contract(format!("unknown service type {service}")))?;
        if observed_ms == 0.0 {
            return Ok(());
        }
        if !(observed_ms > 0.0) || !observed_ms.is_finite() {
            return Err(Error::contract(format!("observation {observed_ms} must be positive")));
        }
        *slot = self.lambda_e * *slot + (1.0 - self.lambda_e) * observed_ms;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorityParams {
    pub lambda_prime: f64,
}

impl PriorityParams {
    pub fn new(lambda_prime: f64) -> Result<Self> {
        if !(lambda_prime > 0.0 && lambda_prime < 1.0) {
            return Err(Error::contract(format!("lambda_prime must lie in (0, 1), got {lambda_prime}")));
        }
        Ok(Self { lambda_prime })
    }
}

/// Dequeue priority of a request with `remaining_ms` left before its
/// deadline when completion is expected to take `estimate_ms`.
///
/// Feasible requests score `1 / slack`, infeasible ones
/// `lambda_prime / deficit`; gaps under [`TIE_EPSILON_MS`] score
/// [`TIE_PRIORITY`].
pub fn priority(remaining_ms: f64, estimate_ms: f64, params: PriorityParams) -> f64 {
    let gap = remaining_ms - estimate_ms;
    if gap.abs() < TIE_EPSILON_MS {
        TIE_PRIORITY
    } else if gap > 0.0 {
        1.0 / gap
    } else {
        params.lambda_prime / -gap
    }
}

/// The fields of a queued request that queue disciplines look at.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueueEntry {
    pub id: u64,
    pub service: ServiceId,
    pub arrival_ms: f64,
    /// Absolute deadline.
    pub deadline_ms: f64,
}

impl QueueEntry {
    pub fn remaining_ms(&self, now_ms: f64) -> f64 {
        self.deadline_ms - now_ms
    }
}

/// Ordering parameters shared by both queue levels.
#[derive(Clone, Copy, Debug)]
pub struct Discipline<'a> {
    pub strategy: Strategy,
    pub estimator: &'a CompletionEstimator,
    pub params: PriorityParams,
    pub now_ms: f64,
}

impl Discipline<'_> {
    /// `Less` means `a` is served before `b`.
    pub fn compare(&self, a: &QueueEntry, b: &QueueEntry) -> Ordering {
        let primary = match self.strategy {
            Strategy::Fifo => Ordering::Equal,
            Strategy::LatencyGreedy => a.remaining_ms(self.now_ms).total_cmp(&b.remaining_ms(self.now_ms)),
            Strategy::Discounted => {
                let pa = self.priority_of(a);
                let pb = self.priority_of(b);
                pb.total_cmp(&pa)
            }
        };
        primary
            .then_with(|| a.arrival_ms.total_cmp(&b.arrival_ms))
            .then_with(|| a.id.cmp(&b.id))
    }

    pub fn priority_of(&self, entry: &QueueEntry) -> f64 {
        priority(
            entry.remaining_ms(self.now_ms),
            self.estimator.estimate(entry.service),
            self.params,
        )
    }

    /// Position of the request that would be dequeued next.
    pub fn select(&self, queue: &[QueueEntry]) -> Option<usize> {
        (0..queue.len()).min_by(|&i, &j| self.compare(&queue[i], &queue[j]))
    }

    /// Removes and returns the highest-ranked request.
    pub fn dequeue(&self, queue: &mut Vec<QueueEntry>) -> Option<QueueEntry> {
        self.select(queue).map(|i| queue.remove(i))
    }

    /// Scans the queue from highest to lowest rank and takes every request
    /// whose service still has an idle replicate, consuming one replicate
    /// per request taken. Returned in scan order.
    pub fn drain(&self, queue: &mut Vec<QueueEntry>, idle: &mut BTreeMap<ServiceId, usize>) -> Vec<QueueEntry> {
        if idle.values().all(|&n| n == 0) {
            return Vec::new();
        }
        let mut order: Vec<usize> = (0..queue.len()).collect();
        order.sort_by(|&i, &j| self.compare(&queue[i], &queue[j]));
        let mut taken = vec![false; queue.len()];
        let mut out = Vec::new();
        for i in order {
            if let Some(free) = idle.get_mut(&queue[i].service) {
                if *free > 0 {
                    *free -= 1;
                    taken[i] = true;
                    out.push(queue[i]);
                }
            }
        }
        let mut k = 0;
        queue.retain(|_| {
            let keep = !taken[k];
            k += 1;
            keep
        });
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::Strategy;
    use proptest::prelude::*;

    fn entry(id: u64, service: ServiceId, arrival: f64, deadline: f64) -> QueueEntry {
        QueueEntry {
            id,
            service,
            arrival_ms: arrival,
            deadline_ms: deadline,
        }
    }

    fn estimator(values: Vec<f64>) -> CompletionEstimator {
        CompletionEstimator::new(values, 0.9, EstimatorScope::Eap).unwrap()
    }

    fn params() -> PriorityParams {
        PriorityParams::new(0.5).unwrap()
    }

    #[test]
    fn estimator_update_arithmetic() {
        let mut e = estimator(vec![10.0, 3.0]);
        e.update(1, 20.0).unwrap();
        assert!((e.estimate(1) - 11.0).abs() < 1e-12);
        assert_eq!(e.estimate(2), 3.0);
    }

    #[test]
    fn zero_observation_is_skipped() {
        let mut e = estimator(vec![10.0]);
        e.update(1, 0.0).unwrap();
        assert_eq!(e.estimate(1), 10.0);
    }

    #[test]
    fn unknown_service_is_a_contract_error() {
        let mut e = estimator(vec![10.0]);
        assert!(e.update(2, 5.0).is_err());
        assert!(e.update(0, 5.0).is_err());
    }

    #[test]
    fn constant_observations_converge() {
        let mut e = estimator(vec![500.0]);
        for _ in 0..300 {
            e.update(1, 42.0).unwrap();
        }
        assert!((e.estimate(1) - 42.0).abs() < 1e-6);
    }

    #[test]
    fn priority_spot_values() {
        assert!((priority(10.0, 5.0, params()) - 0.2).abs() < 1e-15);
        assert!((priority(5.0, 10.0, params()) - 0.1).abs() < 1e-15);
        assert_eq!(priority(7.0, 7.0, params()), 1000.0);
        assert_eq!(priority(7.4, 7.0, params()), 1000.0);
    }

    #[test]
    fn fifo_takes_earliest_arrival() {
        let est = estimator(vec![1.0]);
        let d = Discipline { strategy: Strategy::Fifo, estimator: &est, params: params(), now_ms: 0.0 };
        let mut q = vec![entry(1, 1, 5.0, 100.0), entry(0, 1, 0.0, 900.0)];
        assert_eq!(d.dequeue(&mut q).unwrap().id, 0);
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn latency_greedy_takes_least_remaining() {
        let est = estimator(vec![1.0]);
        let d = Discipline { strategy: Strategy::LatencyGreedy, estimator: &est, params: params(), now_ms: 0.0 };
        let q = vec![entry(0, 1, 0.0, 100.0), entry(1, 1, 1.0, 50.0)];
        assert_eq!(d.select(&q), Some(1));
    }

    #[test]
    fn empty_queue_yields_nothing() {
        let est = estimator(vec![1.0]);
        let d = Discipline { strategy: Strategy::Discounted, estimator: &est, params: params(), now_ms: 0.0 };
        assert_eq!(d.dequeue(&mut Vec::new()), None);
    }

    #[test]
    fn drain_with_no_idle_replicates_is_empty() {
        let est = estimator(vec![1.0, 1.0]);
        let d = Discipline { strategy: Strategy::Fifo, estimator: &est, params: params(), now_ms: 0.0 };
        let mut q = vec![entry(0, 1, 0.0, 10.0)];
        let mut idle = BTreeMap::from([(1, 0), (2, 0)]);
        assert!(d.drain(&mut q, &mut idle).is_empty());
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn drain_skips_to_lower_priority_types() {
        // Equal priorities: arrival order decides, the second w1 finds no replicate.
        let est = estimator(vec![10.0, 10.0]);
        let d = Discipline { strategy: Strategy::Discounted, estimator: &est, params: params(), now_ms: 0.0 };
        let mut q = vec![entry(0, 1, 0.0, 100.0), entry(1, 1, 1.0, 100.0), entry(2, 2, 2.0, 100.0)];
        let mut idle = BTreeMap::from([(1, 1), (2, 1)]);
        let out = d.drain(&mut q, &mut idle);
        assert_eq!(out.iter().map(|e| e.id).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(q.iter().map(|e| e.id).collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn drain_single_matching_request() {
        let est = estimator(vec![10.0]);
        let d = Discipline { strategy: Strategy::Fifo, estimator: &est, params: params(), now_ms: 0.0 };
        let mut q = vec![entry(4, 1, 0.0, 100.0)];
        let mut idle = BTreeMap::from([(1, 1)]);
        assert_eq!(d.drain(&mut q, &mut idle).len(), 1);
        assert!(q.is_empty());
    }

    fn brute_force_argmax(q: &[QueueEntry], est: &CompletionEstimator, p: PriorityParams, now: f64) -> usize {
        let mut best = 0;
        for i in 1..q.len() {
            let (a, b) = (&q[i], &q[best]);
            let pa = priority(a.deadline_ms - now, est.estimate(a.service), p);
            let pb = priority(b.deadline_ms - now, est.estimate(b.service), p);
            let better = pa > pb
                || (pa == pb && (a.arrival_ms < b.arrival_ms || (a.arrival_ms == b.arrival_ms && a.id < b.id)));
            if better {
                best = i;
            }
        }
        best
    }

    proptest! {
        #[test]
        fn discounted_matches_brute_force(
            raw in prop::collection::vec((1u32..4, 0u32..50, 0u32..400), 1..20),
            now in 0u32..100,
        ) {
            let est = estimator(vec![30.0, 80.0, 150.0]);
            let q: Vec<QueueEntry> = raw.iter().enumerate()
                .map(|(i, &(w, a, d))| entry(i as u64, w, a as f64, (a + d) as f64))
                .collect();
            let d = Discipline { strategy: Strategy::Discounted, estimator: &est, params: params(), now_ms: now as f64 };
            prop_assert_eq!(d.select(&q), Some(brute_force_argmax(&q, &est, params(), now as f64)));
        }

        #[test]
        fn feasible_branch_decreases_with_slack(est in 0.0f64..1e4, s1 in 1.0f64..1e4, s2 in 1.0f64..1e4) {
            prop_assume!(s1 < s2);
            prop_assert!(priority(est + s1, est, params()) > priority(est + s2, est, params()));
        }

        #[test]
        fn infeasible_branch_decreases_with_deficit(est in 0.0f64..1e4, d1 in 1.0f64..1e4, d2 in 1.0f64..1e4) {
            prop_assume!(d1 < d2);
            prop_assert!(priority(est - d1, est, params()) > priority(est - d2, est, params()));
        }

        #[test]
        fn priority_matches_piecewise_formula(rem in -1e4f64..1e4, est in 0.0f64..1e4, lp in 0.01f64..0.99) {
            let p = PriorityParams::new(lp).unwrap();
            let expected = if (rem - est).abs() < 1.0 { 1000.0 }
                else if rem > est { 1.0 / (rem - est) } else { lp / (est - rem) };
            prop_assert_eq!(priority(rem, est, p), expected);
        }

        #[test]
        fn tiny_penalty_prefers_any_feasible_request(
            slacks in prop::collection::vec(1.0f64..5000.0, 1..8),
            deficits in prop::collection::vec(1.0f64..5000.0, 1..8),
        ) {
            let est = estimator(vec![100.0]);
            let p = PriorityParams::new(1e-9).unwrap();
            let mut q = Vec::new();
            for (i, s) in slacks.iter().enumerate() {
                q.push(entry(i as u64, 1, 0.0, 100.0 + s));
            }
            let base = q.len() as u64;
            for (i, dfc) in deficits.iter().enumerate() {
                q.push(entry(base + i as u64, 1, 0.0, 100.0 - dfc));
            }
            let d = Discipline { strategy: Strategy::Discounted, estimator: &est, params: p, now_ms: 0.0 };
            let chosen = d.select(&q).unwrap();
            prop_assert!((chosen as u64) < base);
        }

        #[test]
        fn update_contracts_toward_observation(e0 in 0.0f64..1e4, obs in 0.001f64..1e4, lam in 0.01f64..0.99) {
            let mut e = CompletionEstimator::new(vec![e0], lam, EstimatorScope::Executor).unwrap();
            e.update(1, obs).unwrap();
            let lhs = (e.estimate(1) - obs).abs();
            let rhs = lam * (e0 - obs).abs();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs));
        }

        #[test]
        fn drain_respects_replicate_availability(
            raw in prop::collection::vec((1u32..4, 0u32..50, 0u32..400), 0..20),
            idle_counts in prop::collection::vec(0usize..3, 3),
            strategy in prop::sample::select(vec![Strategy::Fifo, Strategy::LatencyGreedy, Strategy::Discounted]),
        ) {
            let est = estimator(vec![30.0, 80.0, 150.0]);
            let mut q: Vec<QueueEntry> = raw.iter().enumerate()
                .map(|(i, &(w, a, d))| entry(i as u64, w, a as f64, (a + d) as f64))
                .collect();
            let mut idle: BTreeMap<ServiceId, usize> = (1..=3).zip(idle_counts.iter().copied()).collect();
            let before = idle.clone();
            let d = Discipline { strategy, estimator: &est, params: params(), now_ms: 0.0 };
            let out = d.drain(&mut q, &mut idle);
            for w in 1..=3u32 {
                let taken = out.iter().filter(|e| e.service == w).count();
                prop_assert_eq!(taken + idle[&w], before[&w]);
                if idle[&w] > 0 {
                    prop_assert!(q.iter().all(|e| e.service != w));
                }
            }
        }
    }
}
