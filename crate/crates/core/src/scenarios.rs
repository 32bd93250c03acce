//! Programmatic builders for the testbed-scale scenarios.
//!
//! The defaults reproduce a small private-network testbed: relay VMs limited
//! to 50 MB/s whose relayed throughput is roughly half of that after
//! virtualisation and onion-routing overhead, fast exits that never
//! bottleneck a measurement, and light user traffic on every relay.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::netsim::{DetectorModel, ProbeSpec, SimConfig};
use crate::scanner::ScannerConfig;
use crate::types::{
    Cluster, ClusterTopology, HostId, HostKind, HostSpec, Policy, RelayId, RelaySpec, Role, Topology,
};
use crate::units::MB;
use crate::util::mix_seed;

pub const RELAY_VM_CAPACITY: f64 = 50.0 * MB;
/// Relayed share of a testbed VM's link (25 MB/s of 50 MB/s).
pub const RELAY_VM_EFFICIENCY: f64 = 0.5;
pub const EXIT_CAPACITY: f64 = 200.0 * MB;
pub const HONEST_USER_LOAD: f64 = 1.0 * MB;
pub const CLUSTER_USER_LOAD: f64 = 10.0 * MB;
pub const DEDICATED_CAPACITY: f64 = 50.0 * MB;
/// Relayed share of the dedicated server after VPN and routing overhead.
pub const DEDICATED_EFFICIENCY: f64 = 0.22;
pub const CLUSTER_VM_CAPACITY: f64 = 25.0 * MB;
pub const DETORMULT_USER_LOAD: f64 = 3.0 * MB;

const HOUR: f64 = 3600.0;

/// Offset into each hour after which a testbed round has finished.
pub const PROBE_OFFSET: f64 = 1500.0;
/// Gap between consecutive probes; longer than any testbed measurement.
pub const PROBE_SPACING: f64 = 90.0;

/// 40-hex fingerprint derived from a readable label.
pub fn fingerprint(label: &str) -> RelayId {
    let mut h1 = 0xCBF2_9CE4_8422_2325u64;
    let mut h2 = 0x8422_2325_CBF2_9CE4u64;
    for b in label.bytes() {
        h1 = (h1 ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3);
        h2 = (h2 ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3).rotate_left(7);
    }
    let h3 = crate::util::mix_seed(h1, h2);
    RelayId::new(format!("{h1:016X}{h2:016X}{:08X}", h3 >> 32))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Testbed {
    pub honest_relays: usize,
    pub exits: usize,
    pub scanners: usize,
    pub threads: u32,
    pub duration: f64,
    pub seed: u64,
}

impl Default for Testbed {
    fn default() -> Self {
        Testbed {
            honest_relays: 5,
            exits: 5,
            scanners: 1,
            threads: 4,
            duration: 24.0 * HOUR,
            seed: 1,
        }
    }
}

impl Testbed {
    /// All-honest network: `honest_relays` relays each on its own VM.
    pub fn build(&self) -> SimConfig {
        let mut hosts = Vec::new();
        let mut relays = Vec::new();
        let mut user_load = BTreeMap::new();
        for i in 0..self.exits {
            let host = format!("exit-vm-{i}");
            hosts.push(host_spec(&host, EXIT_CAPACITY, HostKind::RelayHost, 1.0));
            relays.push(relay(fingerprint(&format!("exit-{i}")), &host, EXIT_CAPACITY, Role::Exit, Policy::Honest));
        }
        for i in 0..self.honest_relays {
            let host = format!("relay-vm-{i}");
            hosts.push(host_spec(&host, RELAY_VM_CAPACITY, HostKind::RelayHost, RELAY_VM_EFFICIENCY));
            let id = fingerprint(&format!("relay-{i}"));
            user_load.insert(id.clone(), HONEST_USER_LOAD);
            relays.push(relay(id, &host, RELAY_VM_CAPACITY, Role::Middle, Policy::Honest));
        }
        SimConfig {
            topology: Topology {
                relays,
                hosts,
                clusters: ClusterTopology::default(),
            },
            scanners: (0..self.scanners)
                .map(|i| ScannerConfig {
                    threads: self.threads,
                    ..ScannerConfig::with_ba(format!("ba{i}"))
                })
                .collect(),
            user_load,
            detector: DetectorModel::default(),
            duration: self.duration,
            seed: self.seed,
            consensus_interval: HOUR,
            activation: BTreeMap::new(),
            time_compression: 1.0,
            probes: Vec::new(),
        }
    }
}

fn host_spec(id: &str, capacity: f64, kind: HostKind, efficiency: f64) -> HostSpec {
    HostSpec {
        host_id: id.into(),
        capacity,
        kind,
        efficiency,
    }
}

fn relay(id: RelayId, host: &str, bw: f64, role: Role, policy: Policy) -> RelaySpec {
    RelaySpec {
        relay_id: id,
        host_id: host.into(),
        advertised_bw: bw,
        role,
        policy,
        family_id: None,
    }
}

/// Adds a co-resident cluster of `n` relays on one testbed VM.
///
/// Members join `stagger_hours` apart (uncompressed) and the config's
/// `time_compression` is set so they are compressed to one hour apart.
pub fn add_cotormult_cluster(cfg: &mut SimConfig, cluster_id: &str, n: usize, stagger_hours: f64) -> Vec<RelayId> {
    let host = format!("{cluster_id}-vm");
    cfg.topology
        .hosts
        .push(host_spec(&host, RELAY_VM_CAPACITY, HostKind::RelayHost, RELAY_VM_EFFICIENCY));
    let members: Vec<RelayId> = (0..n).map(|i| fingerprint(&format!("{cluster_id}-member-{i}"))).collect();
    for (i, id) in members.iter().enumerate() {
        cfg.topology.relays.push(RelaySpec {
            family_id: Some(cluster_id.into()),
            ..relay(id.clone(), &host, RELAY_VM_CAPACITY, Role::Middle, Policy::CotormultMember)
        });
        cfg.user_load.insert(id.clone(), CLUSTER_USER_LOAD);
        if stagger_hours > 0.0 {
            cfg.activation.insert(id.clone(), i as f64 * stagger_hours * HOUR);
        }
    }
    if stagger_hours > 0.0 {
        cfg.time_compression = stagger_hours;
    }
    cfg.topology.clusters.clusters.push(Cluster {
        cluster_id: cluster_id.into(),
        members: members.clone(),
        host_id: host.into(),
    });
    cfg.topology.clusters.n_per_cluster = 0;
    cfg.topology.clusters.num_servers = 0;
    cfg.topology.clusters.fill_derived();
    members
}

/// Adds `clusters` relay clusters of `n` members rerouting measurements to
/// one dedicated server of `dedicated_capacity` bytes/second.
pub fn add_detormult_clusters(cfg: &mut SimConfig, clusters: usize, n: usize, dedicated_capacity: f64) -> Vec<Vec<RelayId>> {
    cfg.topology.hosts.push(host_spec(
        "dedicated",
        dedicated_capacity,
        HostKind::DedicatedServer,
        DEDICATED_EFFICIENCY,
    ));
    cfg.topology.clusters.dedicated_server = Some("dedicated".into());
    let mut out = Vec::new();
    for c in 0..clusters {
        let cluster_id = format!("cluster-{}", c + 1);
        let host = format!("{cluster_id}-vm");
        cfg.topology
            .hosts
            .push(host_spec(&host, CLUSTER_VM_CAPACITY, HostKind::RelayHost, 1.0));
        let members: Vec<RelayId> = (0..n).map(|i| fingerprint(&format!("{cluster_id}-member-{i}"))).collect();
        for id in &members {
            cfg.topology.relays.push(RelaySpec {
                family_id: Some("detormult".into()),
                ..relay(id.clone(), &host, CLUSTER_VM_CAPACITY, Role::Middle, Policy::DetormultMember)
            });
            cfg.user_load.insert(id.clone(), DETORMULT_USER_LOAD);
        }
        cfg.topology.clusters.clusters.push(Cluster {
            cluster_id,
            members: members.clone(),
            host_id: host.into(),
        });
        out.push(members);
    }
    cfg.topology.clusters.n_per_cluster = 0;
    cfg.topology.clusters.num_servers = 0;
    cfg.topology.clusters.fill_derived();
    out
}

/// Sequential single-thread scanner: no two measurements ever overlap.
pub fn single_thread(cfg: &mut SimConfig) {
    for s in &mut cfg.scanners {
        s.threads = 1;
    }
}

/// One probe per pair, placed in the idle tail of each hour from
/// `first_hour` on, so probes overlap neither each other nor the regular
/// scanner's rounds.
pub fn schedule_probes(pairs: &[(RelayId, RelayId)], first_hour: u32) -> Vec<ProbeSpec> {
    let per_hour = ((HOUR - PROBE_OFFSET) / PROBE_SPACING) as usize;
    pairs
        .iter()
        .enumerate()
        .map(|(i, pair)| {
            let hour = f64::from(first_hour) + (i / per_hour) as f64;
            let slot = (i % per_hour) as f64;
            ProbeSpec { pair: pair.clone(), time: hour * HOUR + PROBE_OFFSET + slot * PROBE_SPACING }
        })
        .collect()
}

/// Every unordered pair of non-exit relays, in topology order.
pub fn all_pairs(cfg: &SimConfig) -> Vec<(RelayId, RelayId)> {
    let ids: Vec<&RelayId> =
        cfg.topology.relays.iter().filter(|r| r.role != Role::Exit).map(|r| &r.relay_id).collect();
    let mut pairs = Vec::new();
    for (i, a) in ids.iter().enumerate() {
        for b in &ids[i + 1..] {
            pairs.push(((*a).clone(), (*b).clone()));
        }
    }
    pairs
}

/// Honest relays whose host capacities are drawn uniformly from
/// `[min, max]` bytes/second, so measurement durations vary.
pub fn heterogeneous(relays: usize, threads: u32, duration: f64, range: (f64, f64), seed: u64) -> SimConfig {
    let mut cfg = Testbed { honest_relays: relays, threads, duration, seed, ..Default::default() }.build();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x4845_5445));
    let ids: BTreeMap<HostId, RelayId> = cfg
        .topology
        .relays
        .iter()
        .filter(|r| r.role != Role::Exit)
        .map(|r| (r.host_id.clone(), r.relay_id.clone()))
        .collect();
    for host in cfg.topology.hosts.iter_mut().filter(|h| ids.contains_key(&h.host_id)) {
        host.capacity = rng.gen_range(range.0..=range.1);
        host.efficiency = 1.0;
    }
    for relay in cfg.topology.relays.iter_mut().filter(|r| r.role != Role::Exit) {
        relay.advertised_bw = cfg.topology.hosts.iter().find(|h| h.host_id == relay.host_id).map_or(0.0, |h| h.capacity);
    }
    cfg
}

/// The all-honest testbed.
pub fn all_honest() -> SimConfig {
    Testbed::default().build()
}

/// Five co-resident relays joining one (compressed) hour apart, measured by
/// a sequential scanner so no two members are ever co-measured.
pub fn cotormult_n5() -> SimConfig {
    let mut cfg = Testbed::default().build();
    add_cotormult_cluster(&mut cfg, "cluster-1", 5, 6.0);
    single_thread(&mut cfg);
    cfg
}

/// Three clusters of six relays sharing one 50 MB/s dedicated server.
pub fn detormult_3x6() -> SimConfig {
    let mut cfg = Testbed::default().build();
    add_detormult_clusters(&mut cfg, 3, 6, DEDICATED_CAPACITY);
    single_thread(&mut cfg);
    cfg
}

/// A five-relay co-resident cluster among `honest` honest relays, a
/// sequential regular scanner, and a co-probe of every relay pair.
pub fn cotormult_probed(honest: usize, seed: u64) -> SimConfig {
    let mut cfg = Testbed { honest_relays: honest, threads: 1, seed, ..Default::default() }.build();
    add_cotormult_cluster(&mut cfg, "cluster-1", 5, 0.0);
    cfg.probes = schedule_probes(&all_pairs(&cfg), 1);
    cfg
}
