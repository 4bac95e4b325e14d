//! Trace-driven edge-cloud scheduling simulator.
//!
//! Requests arrive at edge access points (eAPs), are dispatched once per
//! slot to an attached edge node or the cloud, and are executed by service
//! replicates whose placement is re-orchestrated once per frame. Dispatch is
//! learned by a coordinated multi-agent actor-critic ([`cmmac`]), placement by
//! a GNN-encoded policy gradient ([`gpg`]); [`baselines`] holds the
//! non-learning reference policies.

pub mod baselines;
pub mod cluster;
pub mod cmmac;
pub mod dequeue;
pub mod error;
pub mod experiment;
pub mod gpg;
pub mod metrics;
pub mod nn;
pub mod workload;

pub use error::{Error, Result};

/// 1-based service type index `w` in `[1, W]`.
pub type ServiceId = u32;
