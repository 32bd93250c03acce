//! Host, relay and user-traffic model under adversarial resource policies.
//!
//! [`Network`] turns a [`FlowState`] snapshot into per-flow rates with
//! max-min fair sharing on every host; the adversarial policies decide which
//! flows exist and which host they consume. [`run_simulation`] drives scanner
//! threads through that model on a single deterministic timeline.

mod engine;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::fairshare::{max_min_allocate, FlowDemand};
use crate::scanner::ScannerConfig;
use crate::types::{BaId, HostId, Policy, RelayId, Topology};
use crate::{Error, Result};

pub use engine::{baseline_bw, inflation_factor, run_simulation, SimResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorMode {
    /// Measurement traffic is recognised by the scanner's public address.
    IpFilter,
    /// A traffic classifier with a packet window and error rates.
    Parametric,
}

/// How an adversarial relay recognises measurement traffic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorModel {
    pub mode: DetectorMode,
    pub detection_delay_packets: u32,
    pub false_negative_rate: f64,
    pub false_positive_rate: f64,
    /// Seconds of classifier latency per packet.
    pub per_packet_latency: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        DetectorModel {
            mode: DetectorMode::IpFilter,
            detection_delay_packets: 0,
            false_negative_rate: 0.0,
            false_positive_rate: 0.0,
            per_packet_latency: 0.0005,
        }
    }
}

impl DetectorModel {
    pub fn parametric() -> Self {
        DetectorModel {
            mode: DetectorMode::Parametric,
            detection_delay_packets: 5,
            ..Default::default()
        }
    }

    /// Seconds between a measurement starting and the relay reacting to it.
    pub fn detection_delay(&self) -> f64 {
        f64::from(self.detection_delay_packets) * self.per_packet_latency
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("false_negative_rate", self.false_negative_rate),
            ("false_positive_rate", self.false_positive_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::OutOfRange { name, value: v, min: 0.0, max: 1.0 });
            }
        }
        if !(self.per_packet_latency >= 0.0) {
            return Err(Error::Config("per_packet_latency must be >= 0".into()));
        }
        Ok(())
    }
}

/// A scheduled simultaneous measurement of two relays by a probing authority.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    pub pair: (RelayId, RelayId),
    pub time: f64,
}

pub const PROBE_BA: &str = "probe";

fn default_interval() -> f64 {
    3600.0
}

fn default_compression() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub topology: Topology,
    pub scanners: Vec<ScannerConfig>,
    /// Offered user traffic per relay, bytes/second.
    #[serde(default)]
    pub user_load: BTreeMap<RelayId, f64>,
    #[serde(default)]
    pub detector: DetectorModel,
    /// Simulated seconds.
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_interval")]
    pub consensus_interval: f64,
    /// Join time per relay in uncompressed seconds; absent relays join at 0.
    #[serde(default)]
    pub activation: BTreeMap<RelayId, f64>,
    /// Divides every activation time (hours-to-days staggering at desk scale).
    #[serde(default = "default_compression")]
    pub time_compression: f64,
    #[serde(default)]
    pub probes: Vec<ProbeSpec>,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        if self.scanners.is_empty() {
            return Err(Error::NothingToMeasure);
        }
        let mut bas = BTreeSet::new();
        for s in &self.scanners {
            s.validate()?;
            if s.ba_id.as_str() == PROBE_BA || !bas.insert(&s.ba_id) {
                return Err(Error::Config(format!("scanner id {} is reserved or duplicated", s.ba_id)));
            }
        }
        self.detector.validate()?;
        if !(self.consensus_interval > 0.0) || !(self.duration >= self.consensus_interval) {
            return Err(Error::Config("duration must cover at least one consensus interval".into()));
        }
        if !(self.time_compression > 0.0) {
            return Err(Error::Config("time_compression must be positive".into()));
        }
        let known = |r: &RelayId| {
            self.topology
                .relay(r.as_str())
                .map(|_| ())
                .ok_or_else(|| Error::UnknownRelay(r.0.clone()))
        };
        for (r, load) in &self.user_load {
            known(r)?;
            if !(*load >= 0.0) || !load.is_finite() {
                return Err(Error::Config(format!("user_load for {r} must be >= 0")));
            }
        }
        for (r, t) in &self.activation {
            known(r)?;
            if !(*t >= 0.0) {
                return Err(Error::Config(format!("activation for {r} must be >= 0")));
            }
        }
        for p in &self.probes {
            known(&p.pair.0)?;
            known(&p.pair.1)?;
            if !(p.time >= 0.0) {
                return Err(Error::Config("probe time must be >= 0".into()));
            }
        }
        Ok(())
    }

    /// Compressed join time of `relay`.
    pub fn join_time(&self, relay: &RelayId) -> f64 {
        self.activation.get(relay).map_or(0.0, |t| t / self.time_compression)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementFlow {
    pub target: RelayId,
    pub exit: Option<RelayId>,
    pub ba_id: BaId,
    /// Whether the target's detector has flagged this flow.
    pub detected: bool,
}

/// Snapshot of every active flow at one instant.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowState {
    pub measurements: Vec<MeasurementFlow>,
    /// Offered user load of each active relay, bytes/second.
    pub user_load: BTreeMap<RelayId, f64>,
    /// Relays whose user traffic is currently misclassified as measurement.
    pub misflagged: BTreeSet<RelayId>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Allocation {
    /// Rate of each entry of `FlowState::measurements`, same order.
    pub measurement: Vec<f64>,
    /// Admitted user traffic per relay (0 when dropped).
    pub user: BTreeMap<RelayId, f64>,
    pub host_load: BTreeMap<HostId, f64>,
}

/// Validated topology with lookup indices.
#[derive(Debug, Clone)]
pub struct Network {
    topology: Topology,
    relay_idx: BTreeMap<RelayId, usize>,
    host_idx: BTreeMap<HostId, usize>,
    dedicated: Option<usize>,
}

impl Network {
    pub fn new(topology: Topology) -> Result<Self> {
        topology.validate()?;
        let relay_idx = topology
            .relays
            .iter()
            .enumerate()
            .map(|(i, r)| (r.relay_id.clone(), i))
            .collect();
        let host_idx: BTreeMap<HostId, usize> = topology
            .hosts
            .iter()
            .enumerate()
            .map(|(i, h)| (h.host_id.clone(), i))
            .collect();
        let dedicated = topology
            .clusters
            .dedicated_server
            .as_ref()
            .map(|h| host_idx[h]);
        Ok(Network {
            topology,
            relay_idx,
            host_idx,
            dedicated,
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    fn relay(&self, id: &RelayId) -> Result<(usize, &crate::types::RelaySpec)> {
        let i = *self
            .relay_idx
            .get(id)
            .ok_or_else(|| Error::UnknownRelay(id.0.clone()))?;
        Ok((i, &self.topology.relays[i]))
    }

    fn host_of(&self, relay: &crate::types::RelaySpec) -> usize {
        self.host_idx[&relay.host_id]
    }

    /// Resource set and rate cap of a flagged flow on an adversarial relay.
    fn flagged_route(&self, policy: Policy, host: usize, advertised: f64) -> (Vec<usize>, f64) {
        match policy {
            Policy::CotormultMember => (alloc::vec![host], f64::INFINITY),
            Policy::DetormultMember => (
                alloc::vec![self.dedicated.expect("validated: dedicated server exists")],
                f64::INFINITY,
            ),
            Policy::DropOnMeasure | Policy::Honest => (alloc::vec![host], advertised),
        }
    }

    /// Computes per-flow rates for `state` and checks host capacity conservation.
    pub fn allocate(&self, state: &FlowState) -> Result<Allocation> {
        let hosts = &self.topology.hosts;
        let capacities: Vec<f64> = hosts.iter().map(|h| h.effective_capacity()).collect();
        let mut flows: Vec<FlowDemand> = Vec::new();

        // hosts where a cluster member is (believed to be) under measurement
        let mut hot_hosts = BTreeSet::new();
        let mut flagged_relays = BTreeSet::new();
        for m in &state.measurements {
            let (_, spec) = self.relay(&m.target)?;
            if m.detected && spec.policy.is_adversarial() {
                flagged_relays.insert(spec.relay_id.clone());
                if spec.policy == Policy::CotormultMember {
                    hot_hosts.insert(self.host_of(spec));
                }
            }
        }
        for r in &state.misflagged {
            let (_, spec) = self.relay(r)?;
            if spec.policy.is_adversarial() {
                flagged_relays.insert(spec.relay_id.clone());
                if spec.policy == Policy::CotormultMember {
                    hot_hosts.insert(self.host_of(spec));
                }
            }
        }

        for m in &state.measurements {
            let (_, spec) = self.relay(&m.target)?;
            let host = self.host_of(spec);
            let (mut resources, mut cap) = if m.detected && spec.policy.is_adversarial() {
                self.flagged_route(spec.policy, host, spec.advertised_bw)
            } else {
                (alloc::vec![host], spec.advertised_bw)
            };
            if let Some(exit) = &m.exit {
                let (_, exit_spec) = self.relay(exit)?;
                let exit_host = self.host_of(exit_spec);
                if !resources.contains(&exit_host) {
                    resources.push(exit_host);
                }
                cap = cap.min(exit_spec.advertised_bw);
            }
            flows.push(FlowDemand { resources, cap });
        }
        let n_measurements = flows.len();

        let mut user_index: Vec<(RelayId, Option<usize>)> = Vec::new();
        for (relay, load) in &state.user_load {
            let (_, spec) = self.relay(relay)?;
            let host = self.host_of(spec);
            let demand = load.min(spec.advertised_bw);
            if !(demand > 0.0) {
                user_index.push((relay.clone(), None));
                continue;
            }
            let misflagged = state.misflagged.contains(relay) && spec.policy.is_adversarial();
            if misflagged {
                // user traffic takes the measurement route
                let (resources, cap) = self.flagged_route(spec.policy, host, spec.advertised_bw);
                user_index.push((relay.clone(), Some(flows.len())));
                flows.push(FlowDemand { resources, cap: cap.min(demand) });
                continue;
            }
            let dropped = match spec.policy {
                Policy::DropOnMeasure => flagged_relays.contains(relay),
                Policy::CotormultMember => hot_hosts.contains(&host),
                Policy::Honest | Policy::DetormultMember => false,
            };
            if dropped {
                user_index.push((relay.clone(), None));
            } else {
                user_index.push((relay.clone(), Some(flows.len())));
                flows.push(FlowDemand { resources: alloc::vec![host], cap: demand });
            }
        }

        let rates = max_min_allocate(&capacities, &flows);

        let mut load = alloc::vec![0.0; hosts.len()];
        for (f, r) in flows.iter().zip(&rates) {
            for &h in &f.resources {
                load[h] += r;
            }
        }
        for (h, (used, cap)) in load.iter().zip(&capacities).enumerate() {
            if *used > cap * (1.0 + 1e-9) {
                return Err(Error::CapacityExceeded {
                    host: hosts[h].host_id.0.clone(),
                    allocated: *used,
                    capacity: *cap,
                });
            }
        }

        Ok(Allocation {
            measurement: rates[..n_measurements].to_vec(),
            user: user_index
                .into_iter()
                .map(|(r, i)| (r, i.map_or(0.0, |i| rates[i])))
                .collect(),
            host_load: hosts
                .iter()
                .zip(load)
                .map(|(h, l)| (h.host_id.clone(), l))
                .collect(),
        })
    }

    /// Bandwidth a scanner sees through `relay` in `state`.
    ///
    /// If the relay already carries a measurement flow its allocated rate is
    /// returned; otherwise the rate a new, detected measurement would receive.
    pub fn available_bandwidth(&self, state: &FlowState, relay: &RelayId) -> Result<f64> {
        self.relay(relay)?;
        if let Some(i) = state.measurements.iter().position(|m| &m.target == relay) {
            return Ok(self.allocate(state)?.measurement[i]);
        }
        let mut probe = state.clone();
        probe.measurements.push(MeasurementFlow {
            target: relay.clone(),
            exit: None,
            ba_id: BaId::from(PROBE_BA),
            detected: true,
        });
        let alloc = self.allocate(&probe)?;
        Ok(*alloc.measurement.last().expect("probe flow"))
    }
}

#[cfg(test)]
mod tests;
