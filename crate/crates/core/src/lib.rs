#![cfg_attr(not(test), no_std)]

//! Simulation and analysis core for bandwidth-scanner inflation experiments.
//!
//! Everything in this crate is allocation-only: no IO, no clocks, no threads.
//! Randomness is always threaded through explicit seeds so every result is
//! reproducible bit-for-bit. File formats, configuration loading and the
//! command-line front end live in the `bwscan` companion crate.
//!
//! Module map:
//!
//! - [`types`]: topology and measurement value objects.
//! - [`consensus`]: vote aggregation and selection probability.
//! - [`scanner`]: round planning, byte-range adaptation, timed downloads.
//! - [`fairshare`]: max-min (progressive filling) bandwidth allocation.
//! - [`netsim`]: adversarial resource policies and the event-driven simulator.
//! - [`timeline`]: thread inference and duration estimation from end timestamps.
//! - [`coincidence`]: co-measurement event counting and expected inflation.
//! - [`estimator`]: the fitted inflation curve and attack-resource arithmetic.
//! - [`defense`]: co-measurement drop scoring and active co-probing.

// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod coincidence;
pub mod consensus;
pub mod defense;
pub mod error;
pub mod estimator;
pub mod fairshare;
pub mod netsim;
pub mod scanner;
pub mod scenarios;
pub mod timeline;
pub mod types;
pub mod units;

mod util;

pub use error::{Error, Result};
pub use types::{
    BaId, Cluster, ClusterTopology, ConsensusSnapshot, HostId, HostKind, HostSpec,
    MeasurementRecord, Policy, RelayId, RelaySpec, Role,
};
