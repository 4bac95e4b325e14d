//! Per-frame and whole-run accounting.
//!
//! Frame CSV columns, in order: `frame, arrived, completed_edge,
//! completed_cloud, dropped, phi_f, cost_kb, image_mb, util_mean, util_std,
//! reward_mean`. Values are raw; no plot normalization is applied.

use std::io::Write;

use serde::Serialize;

use crate::cluster::SlotOutcome;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FrameMetrics {
    pub frame: u64,
    pub arrived: u64,
    pub completed_edge: u64,
    pub completed_cloud: u64,
    /// Requests that ended without meeting their deadline.
    pub dropped: u64,
    /// On-time completions over arrivals in this frame; completions of
    /// backlog from earlier frames can push it above 1. A frame without
    /// arrivals divides by 1.
    pub phi_f: f64,
    pub cost_kb: u64,
    pub image_mb: f64,
    pub util_mean: f64,
    pub util_std: f64,
    pub reward_mean: f64,
}

impl FrameMetrics {
    pub fn completed(&self) -> u64 {
        self.completed_edge + self.completed_cloud
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunMetrics {
    pub arrived: u64,
    pub completed: u64,
    pub dropped: u64,
    /// Long-term throughput rate: on-time completions over arrivals.
    pub phi_prime: f64,
    pub cost_kb: u64,
    pub image_mb: f64,
    pub frames: u64,
}

/// Single-writer accumulator fed once per slot and closed once per frame.
#[derive(Clone, Debug)]
pub struct MetricsRecorder {
    slots_per_frame: u64,
    slots_in_frame: u64,
    frame: u64,
    current: FrameMetrics,
    util_sum: f64,
    util_std_sum: f64,
    reward_sum: f64,
    reward_count: u64,
    run: RunMetrics,
    frames: Vec<FrameMetrics>,
}

impl MetricsRecorder {
    pub fn new(slots_per_frame: u64) -> Self {
        Self {
            slots_per_frame,
            slots_in_frame: 0,
            frame: 0,
            current: FrameMetrics::default(),
            util_sum: 0.0,
            util_std_sum: 0.0,
            reward_sum: 0.0,
            reward_count: 0,
            run: RunMetrics::default(),
            frames: Vec::new(),
        }
    }

    pub fn record_slot(&mut self, outcome: &SlotOutcome) {
        let f = &mut self.current;
        f.arrived += outcome.arrived;
        f.completed_edge += outcome.completed_edge;
        f.completed_cloud += outcome.completed_cloud;
        f.dropped += outcome.violations;
        f.cost_kb += outcome.forwarded_kb;
        let values: Vec<f64> = outcome.node_utilization.iter().flat_map(|&(c, m)| [c, m]).collect();
        if !values.is_empty() {
            self.util_sum += values.iter().sum::<f64>() / values.len() as f64;
        }
        self.util_std_sum += outcome.load_std;
        self.slots_in_frame += 1;
    }

    /// Dispatch reward earned in a slot, averaged into `reward_mean`.
    pub fn record_reward(&mut self, reward: f64) {
        self.reward_sum += reward;
        self.reward_count += 1;
    }

    pub fn record_image_pull(&mut self, mb: f64) {
        self.current.image_mb += mb;
    }

    pub fn slots_in_frame(&self) -> u64 {
        self.slots_in_frame
    }

    /// Emits the finished frame and resets the per-frame counters.
    pub fn close_frame(&mut self) -> Result<FrameMetrics> {
        if self.slots_in_frame != self.slots_per_frame {
            return Err(Error::contract(format!(
                "frame closed after {} of {} slots",
                self.slots_in_frame, self.slots_per_frame
            )));
        }
        let mut f = std::mem::take(&mut self.current);
        f.frame = self.frame;
        f.phi_f = f.completed() as f64 / f.arrived.max(1) as f64;
        let slots = self.slots_in_frame as f64;
        f.util_mean = self.util_sum / slots;
        f.util_std = self.util_std_sum / slots;
        f.reward_mean = if self.reward_count > 0 {
            self.reward_sum / self.reward_count as f64
        } else {
            0.0
        };

        self.run.arrived += f.arrived;
        self.run.completed += f.completed();
        self.run.dropped += f.dropped;
        self.run.cost_kb += f.cost_kb;
        self.run.image_mb += f.image_mb;
        self.run.frames += 1;
        self.run.phi_prime = self.run.completed as f64 / self.run.arrived.max(1) as f64;

        self.frame += 1;
        self.slots_in_frame = 0;
        self.util_sum = 0.0;
        self.util_std_sum = 0.0;
        self.reward_sum = 0.0;
        self.reward_count = 0;
        self.frames.push(f.clone());
        Ok(f)
    }

    pub fn frames(&self) -> &[FrameMetrics] {
        &self.frames
    }

    pub fn run(&self) -> &RunMetrics {
        &self.run
    }
}

/// Mean `phi_f` over frames that had arrivals.
pub fn mean_phi_f(frames: &[FrameMetrics]) -> f64 {
    let active: Vec<f64> = frames.iter().filter(|f| f.arrived > 0).map(|f| f.phi_f).collect();
    if active.is_empty() {
        0.0
    } else {
        active.iter().sum::<f64>() / active.len() as f64
    }
}

pub fn write_frames<W: Write>(out: W, frames: &[FrameMetrics]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for f in frames {
        writer.serialize(f)?;
    }
    writer.flush()?;
    Ok(())
}

/// `exp(-sum of executor backlog)`: the orchestration reward.
pub fn orchestration_reward(backlog: usize) -> f64 {
    (-(backlog as f64)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slot(arrived: u64, edge: u64, cloud: u64, violations: u64) -> SlotOutcome {
        SlotOutcome {
            arrived,
            completed_edge: edge,
            completed_cloud: cloud,
            violations,
            node_utilization: vec![(0.5, 0.5)],
            ..SlotOutcome::default()
        }
    }

    #[test]
    fn phi_f_is_completed_over_arrived() {
        let mut m = MetricsRecorder::new(2);
        m.record_slot(&slot(6, 3, 1, 0));
        m.record_slot(&slot(4, 4, 0, 1));
        let f = m.close_frame().unwrap();
        assert_eq!(f.arrived, 10);
        assert!((f.phi_f - 0.8).abs() < 1e-15);
        assert_eq!(f.dropped, 1);
        assert_eq!(f.util_mean, 0.5);
    }

    #[test]
    fn empty_frame_divides_by_one() {
        let mut m = MetricsRecorder::new(1);
        m.record_slot(&slot(0, 2, 0, 0));
        assert_eq!(m.close_frame().unwrap().phi_f, 2.0);
        let mut idle = MetricsRecorder::new(1);
        idle.record_slot(&SlotOutcome::default());
        let f = idle.close_frame().unwrap();
        assert_eq!((f.arrived, f.completed(), f.dropped), (0, 0, 0));
    }

    #[test]
    fn image_pull_cost() {
        let mut m = MetricsRecorder::new(1);
        m.record_image_pull(200.0);
        m.record_slot(&SlotOutcome::default());
        assert_eq!(m.close_frame().unwrap().image_mb, 200.0);
    }

    #[test]
    fn closing_off_boundary_is_an_error() {
        let mut m = MetricsRecorder::new(3);
        m.record_slot(&SlotOutcome::default());
        assert!(m.close_frame().is_err());
    }

    #[test]
    fn run_totals_sum_frames() {
        let mut m = MetricsRecorder::new(1);
        for k in 0..5 {
            m.record_slot(&slot(3, k % 2, 1, 1));
            m.close_frame().unwrap();
        }
        let total: u64 = m.frames().iter().map(|f| f.completed()).sum();
        assert_eq!(total, m.run().completed);
        assert!((m.run().phi_prime - total as f64 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn orchestration_reward_values() {
        assert_eq!(orchestration_reward(0), 1.0);
        assert!((orchestration_reward(3) - (-3.0f64).exp()).abs() < 1e-12);
        assert!(orchestration_reward(4) < orchestration_reward(3));
    }

    #[test]
    fn csv_header_order() {
        let mut buf = Vec::new();
        write_frames(&mut buf, &[FrameMetrics::default()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "frame,arrived,completed_edge,completed_cloud,dropped,phi_f,cost_kb,image_mb,util_mean,util_std,reward_mean"
        );
    }
}
