//! Domain value objects shared by every module.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::borrow::Borrow;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.into())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(
    /// Relay fingerprint (40 hex characters for real relays).
    RelayId
);
string_id!(HostId);
string_id!(
    /// Bandwidth authority (scanner) identity.
    BaId
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Guard,
    Middle,
    Exit,
}

/// How a relay reacts when it recognises measurement traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Honest,
    /// Drops its own user traffic while measured.
    DropOnMeasure,
    /// Co-resident cluster: drops all user traffic on the host while any member is measured.
    CotormultMember,
    /// Reroutes measurement traffic to a shared dedicated server.
    DetormultMember,
}

impl Policy {
    pub fn is_adversarial(self) -> bool {
        self != Policy::Honest
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HostKind {
    RelayHost,
    DedicatedServer,
    WebServer,
    ScannerHost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaySpec {
    pub relay_id: RelayId,
    pub host_id: HostId,
    /// Self-reported bandwidth, bytes/second.
    pub advertised_bw: f64,
    pub role: Role,
    #[serde(default = "default_policy")]
    pub policy: Policy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family_id: Option<String>,
}

fn default_policy() -> Policy {
    Policy::Honest
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostSpec {
    pub host_id: HostId,
    /// Link capacity, bytes/second.
    pub capacity: f64,
    pub kind: HostKind,
    /// Fraction of `capacity` usable by relayed flows, in (0, 1].
    #[serde(default = "default_efficiency")]
    pub efficiency: f64,
}

fn default_efficiency() -> f64 {
    1.0
}

impl HostSpec {
    /// Capacity available to relayed flows after overhead.
    pub fn effective_capacity(&self) -> f64 {
        self.capacity * self.efficiency
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.capacity > 0.0 && self.capacity.is_finite()) {
            return Err(Error::Topology(format!(
                "host {} capacity must be positive",
                self.host_id
            )));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::Topology(format!(
                "host {} efficiency must be in (0, 1]",
                self.host_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cluster {
    pub cluster_id: String,
    pub members: Vec<RelayId>,
    pub host_id: HostId,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterTopology {
    #[serde(default)]
    pub clusters: Vec<Cluster>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dedicated_server: Option<HostId>,
    /// Members per cluster; 0 in a config means "derive it".
    #[serde(default)]
    pub n_per_cluster: usize,
    /// Distinct cluster hosts; 0 in a config means "derive it".
    #[serde(default)]
    pub num_servers: usize,
}

impl ClusterTopology {
    pub fn new(clusters: Vec<Cluster>, dedicated_server: Option<HostId>) -> Self {
        let mut topo = ClusterTopology {
            clusters,
            dedicated_server,
            n_per_cluster: 0,
            num_servers: 0,
        };
        topo.fill_derived();
        topo
    }

    /// Fills `n_per_cluster` and `num_servers` when left at zero.
    pub fn fill_derived(&mut self) {
        if self.n_per_cluster == 0 {
            self.n_per_cluster = self.uniform_size().unwrap_or(0);
        }
        if self.num_servers == 0 {
            self.num_servers = self.distinct_hosts();
        }
    }

    fn uniform_size(&self) -> Option<usize> {
        let first = self.clusters.first()?.members.len();
        self.clusters
            .iter()
            .all(|c| c.members.len() == first)
            .then_some(first)
    }

    fn distinct_hosts(&self) -> usize {
        self.clusters
            .iter()
            .map(|c| &c.host_id)
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub fn cluster_of(&self, relay: &RelayId) -> Option<&Cluster> {
        self.clusters.iter().find(|c| c.members.contains(relay))
    }

    pub fn all_members(&self) -> BTreeSet<RelayId> {
        self.clusters
            .iter()
            .flat_map(|c| c.members.iter().cloned())
            .collect()
    }
}

/// Static topology: relays, the hosts they run on, and adversarial clusters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub relays: Vec<RelaySpec>,
    pub hosts: Vec<HostSpec>,
    #[serde(default)]
    pub clusters: ClusterTopology,
}

impl Topology {
    pub fn relay(&self, id: &str) -> Option<&RelaySpec> {
        self.relays.iter().find(|r| r.relay_id.as_str() == id)
    }

    pub fn host(&self, id: &str) -> Option<&HostSpec> {
        self.hosts.iter().find(|h| h.host_id.as_str() == id)
    }

    pub fn validate(&self) -> Result<()> {
        let mut hosts = BTreeMap::new();
        for h in &self.hosts {
            h.validate()?;
            if hosts.insert(&h.host_id, h).is_some() {
                return Err(Error::Topology(format!("duplicate host {}", h.host_id)));
            }
        }
        let mut relays = BTreeSet::new();
        for r in &self.relays {
            if !(r.advertised_bw > 0.0 && r.advertised_bw.is_finite()) {
                return Err(Error::Topology(format!(
                    "relay {} advertised_bw must be positive",
                    r.relay_id
                )));
            }
            if !relays.insert(&r.relay_id) {
                return Err(Error::Topology(format!("duplicate relay {}", r.relay_id)));
            }
            if !hosts.contains_key(&r.host_id) {
                return Err(Error::UnknownHost(r.host_id.0.clone()));
            }
        }

        let ct = &self.clusters;
        for c in &ct.clusters {
            if !hosts.contains_key(&c.host_id) {
                return Err(Error::UnknownHost(c.host_id.0.clone()));
            }
            for m in &c.members {
                let relay = self
                    .relay(m.as_str())
                    .ok_or_else(|| Error::UnknownRelay(m.0.clone()))?;
                if relay.host_id != c.host_id {
                    return Err(Error::Topology(format!(
                        "relay {} is listed in cluster {} but runs on host {}",
                        m, c.cluster_id, relay.host_id
                    )));
                }
            }
        }
        if let Some(n) = ct.uniform_size() {
            if ct.n_per_cluster != n {
                return Err(Error::Topology(format!(
                    "n_per_cluster = {} but clusters have {} members",
                    ct.n_per_cluster, n
                )));
            }
        }
        if ct.num_servers != ct.distinct_hosts() {
            return Err(Error::Topology(format!(
                "num_servers = {} but clusters use {} hosts",
                ct.num_servers,
                ct.distinct_hosts()
            )));
        }
        if let Some(ded) = &ct.dedicated_server {
            match hosts.get(ded) {
                Some(h) if h.kind == HostKind::DedicatedServer => {}
                Some(_) => {
                    return Err(Error::Topology(format!(
                        "dedicated server {} is not of kind dedicated_server",
                        ded
                    )))
                }
                None => return Err(Error::UnknownHost(ded.0.clone())),
            }
        }

        for r in &self.relays {
            match r.policy {
                Policy::CotormultMember | Policy::DetormultMember
                    if ct.cluster_of(&r.relay_id).is_none() =>
                {
                    return Err(Error::Topology(format!(
                        "relay {} is a cluster member but belongs to no cluster",
                        r.relay_id
                    )));
                }
                Policy::DetormultMember if ct.dedicated_server.is_none() => {
                    return Err(Error::Topology(format!(
                        "relay {} reroutes to a dedicated server but none is configured",
                        r.relay_id
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// One completed (or failed) scanner measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub relay_id: RelayId,
    pub ba_id: BaId,
    pub thread_id: u32,
    #[serde(rename = "start")]
    pub start_time: Option<f64>,
    #[serde(rename = "end")]
    pub end_time: f64,
    /// Bytes/second; mean of per-download throughputs.
    #[serde(rename = "bw")]
    pub measured_bw: f64,
    #[serde(rename = "bytes")]
    pub bytes_total: u64,
    pub downloads: u32,
    pub ok: bool,
}

impl MeasurementRecord {
    pub fn duration(&self) -> Option<f64> {
        self.start_time.map(|s| self.end_time - s)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsensusSnapshot {
    pub epoch: u64,
    pub weights: BTreeMap<RelayId, f64>,
    pub total_weight: f64,
}

impl ConsensusSnapshot {
    pub fn from_weights(epoch: u64, weights: BTreeMap<RelayId, f64>) -> Self {
        let total_weight = weights.values().sum();
        ConsensusSnapshot {
            epoch,
            weights,
            total_weight,
        }
    }

    pub fn weight(&self, relay: &str) -> f64 {
        self.weights.get(relay).copied().unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn host(id: &str, kind: HostKind) -> HostSpec {
        HostSpec {
            host_id: id.into(),
            capacity: 50e6,
            kind,
            efficiency: 1.0,
        }
    }

    fn relay(id: &str, host: &str, policy: Policy) -> RelaySpec {
        RelaySpec {
            relay_id: id.into(),
            host_id: host.into(),
            advertised_bw: 10e6,
            role: Role::Middle,
            policy,
            family_id: None,
        }
    }

    #[test]
    fn cluster_member_without_cluster_is_rejected() {
        let topo = Topology {
            relays: vec![relay("a", "h", Policy::CotormultMember)],
            hosts: vec![host("h", HostKind::RelayHost)],
            clusters: ClusterTopology::default(),
        };
        assert!(matches!(topo.validate(), Err(Error::Topology(_))));
    }

    #[test]
    fn derived_cluster_counts() {
        let clusters = vec![
            Cluster {
                cluster_id: "c1".into(),
                members: vec!["a".into(), "b".into()],
                host_id: "h1".into(),
            },
            Cluster {
                cluster_id: "c2".into(),
                members: vec!["c".into(), "d".into()],
                host_id: "h2".into(),
            },
        ];
        let ct = ClusterTopology::new(clusters, Some("ded".into()));
        assert_eq!(ct.n_per_cluster, 2);
        assert_eq!(ct.num_servers, 2);
        let topo = Topology {
            relays: vec![
                relay("a", "h1", Policy::DetormultMember),
                relay("b", "h1", Policy::DetormultMember),
                relay("c", "h2", Policy::DetormultMember),
                relay("d", "h2", Policy::DetormultMember),
            ],
            hosts: vec![
                host("h1", HostKind::RelayHost),
                host("h2", HostKind::RelayHost),
                host("ded", HostKind::DedicatedServer),
            ],
            clusters: ct,
        };
        topo.validate().unwrap();

        let mut bad = topo.clone();
        bad.hosts[2].kind = HostKind::RelayHost;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn host_invariants() {
        let mut h = host("h", HostKind::RelayHost);
        h.efficiency = 0.0;
        assert!(h.validate().is_err());
        h.efficiency = 1.2;
        assert!(h.validate().is_err());
        h.efficiency = 1.0;
        h.capacity = 0.0;
        assert!(h.validate().is_err());
    }
}
