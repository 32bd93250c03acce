use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::scenarios::{self, Testbed};
use crate::types::{Cluster, ClusterTopology, HostKind, HostSpec, MeasurementRecord, RelaySpec, Role};
use crate::units::MB;

fn host(id: &str, capacity: f64, kind: HostKind, efficiency: f64) -> HostSpec {
    HostSpec { host_id: id.into(), capacity, kind, efficiency }
}

fn relay(id: &str, host: &str, bw: f64, policy: Policy) -> RelaySpec {
    RelaySpec {
        relay_id: id.into(),
        host_id: host.into(),
        advertised_bw: bw,
        role: Role::Middle,
        policy,
        family_id: None,
    }
}

fn measure(target: &str, detected: bool) -> MeasurementFlow {
    MeasurementFlow { target: target.into(), exit: None, ba_id: "ba".into(), detected }
}

fn cluster_net(policy: Policy, n: usize, efficiency: f64) -> Network {
    let mut relays: Vec<RelaySpec> = (0..n).map(|i| relay(&format!("m{i}"), "vm", 50.0 * MB, policy)).collect();
    relays.push(relay("honest", "other", 50.0 * MB, Policy::Honest));
    let clusters = ClusterTopology::new(
        vec![Cluster {
            cluster_id: "c".into(),
            members: (0..n).map(|i| format!("m{i}").into()).collect(),
            host_id: "vm".into(),
        }],
        Some("ded".into()),
    );
    Network::new(Topology {
        relays,
        hosts: vec![
            host("vm", 50.0 * MB, HostKind::RelayHost, efficiency),
            host("other", 50.0 * MB, HostKind::RelayHost, 1.0),
            host("ded", 50.0 * MB, HostKind::DedicatedServer, 0.22),
        ],
        clusters,
    })
    .unwrap()
}

#[test]
fn honest_alone_gets_host() {
    let net = cluster_net(Policy::CotormultMember, 1, 1.0);
    let bw = net.available_bandwidth(&FlowState::default(), &"honest".into()).unwrap();
    assert_eq!(bw, 50.0 * MB);
}

#[test]
fn cotormult_measured_member_takes_everything() {
    let eff = 0.95;
    let net = cluster_net(Policy::CotormultMember, 5, eff);
    let state = FlowState {
        measurements: vec![measure("m0", true)],
        user_load: (0..5).map(|i| (RelayId::new(format!("m{i}")), 40.0 * MB)).collect(),
        misflagged: BTreeSet::new(),
    };
    let alloc = net.allocate(&state).unwrap();
    assert!((alloc.measurement[0] - 50.0 * MB * eff).abs() < 1e-3);
    assert!(alloc.user.values().all(|u| *u == 0.0));
    assert_eq!(net.available_bandwidth(&state, &"m0".into()).unwrap(), alloc.measurement[0]);
}

#[test]
fn cotormult_co_measured_members_split() {
    let net = cluster_net(Policy::CotormultMember, 5, 0.95);
    let state = FlowState {
        measurements: vec![measure("m0", true), measure("m3", true)],
        ..Default::default()
    };
    let alloc = net.allocate(&state).unwrap();
    for r in &alloc.measurement {
        assert!((r - 50.0 * MB * 0.95 / 2.0).abs() < 1e-3);
    }
}

#[test]
fn detormult_co_measured_split_dedicated() {
    let net = cluster_net(Policy::DetormultMember, 6, 1.0);
    let state = FlowState {
        measurements: vec![measure("m0", true), measure("m1", true)],
        user_load: (0..6).map(|i| (RelayId::new(format!("m{i}")), 5.0 * MB)).collect(),
        misflagged: BTreeSet::new(),
    };
    let alloc = net.allocate(&state).unwrap();
    assert!((alloc.measurement[0] - 5.5 * MB).abs() < 1e-3);
    assert!((alloc.measurement[1] - 5.5 * MB).abs() < 1e-3);
    // user flows continue on the cluster host
    assert!(alloc.user.values().all(|u| (*u - 5.0 * MB).abs() < 1e-3));
}

#[test]
fn drop_on_measure_claims_min_of_host_and_advertised() {
    let mut net_topo = cluster_net(Policy::CotormultMember, 1, 1.0).topology().clone();
    net_topo.relays.push(relay("dropper", "dvm", 30.0 * MB, Policy::DropOnMeasure));
    net_topo.hosts.push(host("dvm", 50.0 * MB, HostKind::RelayHost, 1.0));
    let net = Network::new(net_topo).unwrap();
    let state = FlowState {
        measurements: vec![measure("dropper", true)],
        user_load: [(RelayId::from("dropper"), 20.0 * MB)].into(),
        misflagged: BTreeSet::new(),
    };
    let alloc = net.allocate(&state).unwrap();
    assert_eq!(alloc.measurement[0], 30.0 * MB);
    assert_eq!(alloc.user[&RelayId::from("dropper")], 0.0);
}

#[test]
fn undetected_measurement_shares_like_user_traffic() {
    let net = cluster_net(Policy::CotormultMember, 2, 1.0);
    let state = FlowState {
        measurements: vec![measure("m0", false)],
        user_load: [(RelayId::from("m0"), 40.0 * MB), (RelayId::from("m1"), 40.0 * MB)].into(),
        misflagged: BTreeSet::new(),
    };
    let alloc = net.allocate(&state).unwrap();
    assert!((alloc.measurement[0] - 50.0 * MB / 3.0).abs() < 1e-3);
}

#[test]
fn misflagged_user_traffic_triggers_cluster_drop() {
    let net = cluster_net(Policy::CotormultMember, 3, 1.0);
    let state = FlowState {
        measurements: vec![],
        user_load: (0..3).map(|i| (RelayId::new(format!("m{i}")), 10.0 * MB)).collect(),
        misflagged: ["m1".into()].into(),
    };
    let alloc = net.allocate(&state).unwrap();
    assert_eq!(alloc.user[&RelayId::from("m0")], 0.0);
    assert_eq!(alloc.user[&RelayId::from("m1")], 10.0 * MB);
    assert_eq!(alloc.user[&RelayId::from("m2")], 0.0);
}

#[test]
fn unknown_relay_is_an_error() {
    let net = cluster_net(Policy::CotormultMember, 1, 1.0);
    assert!(matches!(
        net.available_bandwidth(&FlowState::default(), &"nope".into()),
        Err(Error::UnknownRelay(_))
    ));
}

#[test]
fn zero_scanners_is_nothing_to_measure() {
    let mut cfg = scenarios::all_honest();
    cfg.scanners.clear();
    assert_eq!(run_simulation(&cfg), Err(Error::NothingToMeasure));
}

fn mean_per_relay(result: &SimResult) -> BTreeMap<RelayId, f64> {
    let mut acc: BTreeMap<RelayId, (f64, u32)> = BTreeMap::new();
    for r in result.records.iter().filter(|r| r.ok) {
        let e = acc.entry(r.relay_id.clone()).or_default();
        e.0 += r.measured_bw;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / f64::from(n))).collect()
}

#[test]
fn all_honest_measures_twenty_five() {
    let cfg = scenarios::all_honest();
    let result = run_simulation(&cfg).unwrap();
    let means = mean_per_relay(&result);
    assert_eq!(means.len(), 5);
    for (relay, bw) in &means {
        assert!((bw / (25.0 * MB) - 1.0).abs() <= 0.10, "{relay}: {bw}");
    }
    let honest: BTreeSet<RelayId> = [means.keys().next().unwrap().clone()].into();
    let f = inflation_factor(&result, &honest).unwrap();
    assert!((f - 1.0).abs() < 0.05, "{f}");
    assert_eq!(result.consensus.len(), 24);
}

#[test]
fn thread_spacing_and_determinism() {
    let cfg = Testbed { honest_relays: 30, threads: 4, duration: 6.0 * 3600.0, ..Default::default() }.build();
    let a = run_simulation(&cfg).unwrap();
    assert_eq!(a, run_simulation(&cfg).unwrap());
    let mut last: BTreeMap<(BaId, u32), f64> = BTreeMap::new();
    for r in &a.records {
        assert!(r.ok);
        let d = r.duration().unwrap();
        assert!(d >= 25.0, "duration {d}");
        if let Some(prev) = last.insert((r.ba_id.clone(), r.thread_id), r.end_time) {
            assert!(r.end_time - prev >= 25.0);
        }
    }
    let threads: BTreeSet<u32> = a.records.iter().map(|r| r.thread_id).collect();
    assert_eq!(threads.len(), 4);
}

#[test]
fn cotormult_cluster_total_is_n_baselines() {
    let cfg = scenarios::cotormult_n5();
    let result = run_simulation(&cfg).unwrap();
    let members = cfg.topology.clusters.all_members();
    let f = inflation_factor(&result, &members).unwrap();
    assert!((4.5..=5.5).contains(&f), "{f}");
    let means = mean_per_relay(&result);
    for m in &members {
        assert!((means[m] - 25.0 * MB).abs() < 0.01 * MB);
    }
}

#[test]
fn blind_detector_degenerates_to_fair_sharing() {
    for n in [1, 2, 5, 8] {
        let mut cfg = Testbed::default().build();
        scenarios::add_cotormult_cluster(&mut cfg, "c", n, 0.0);
        cfg.detector.false_negative_rate = 1.0;
        let result = run_simulation(&cfg).unwrap();
        let f = inflation_factor(&result, &cfg.topology.clusters.all_members()).unwrap();
        assert!(f <= 1.2, "n = {n}: {f}");
    }
}

#[test]
fn honest_relays_unaffected_by_remote_clusters() {
    let base = Testbed { honest_relays: 8, threads: 4, ..Default::default() };
    let plain = run_simulation(&base.build()).unwrap();
    let mut with = base.build();
    scenarios::add_cotormult_cluster(&mut with, "c", 5, 0.0);
    scenarios::add_detormult_clusters(&mut with, 2, 3, 50.0 * MB);
    let attacked = run_simulation(&with).unwrap();
    let a = mean_per_relay(&plain);
    let b = mean_per_relay(&attacked);
    for (relay, bw) in &a {
        assert!((b[relay] / bw - 1.0).abs() <= 0.01, "{relay}");
    }
}

#[test]
fn detormult_monotone_in_dedicated_capacity() {
    let mut last = 0.0;
    for cap in [20.0, 35.0, 50.0, 80.0] {
        let mut cfg = Testbed { duration: 6.0 * 3600.0, ..Default::default() }.build();
        scenarios::add_detormult_clusters(&mut cfg, 2, 3, cap * MB);
        let result = run_simulation(&cfg).unwrap();
        let f = inflation_factor(&result, &cfg.topology.clusters.all_members()).unwrap();
        assert!(f >= last, "{cap}: {f} < {last}");
        last = f;
    }
}

#[test]
fn parametric_detector_with_delay_still_inflates() {
    let mut cfg = scenarios::cotormult_n5();
    cfg.detector = DetectorModel::parametric();
    let result = run_simulation(&cfg).unwrap();
    let f = inflation_factor(&result, &cfg.topology.clusters.all_members()).unwrap();
    assert!(f > 4.4, "{f}");
}

#[test]
fn false_positives_do_not_break_capacity() {
    let mut cfg = Testbed { threads: 4, duration: 4.0 * 3600.0, ..Default::default() }.build();
    scenarios::add_cotormult_cluster(&mut cfg, "c", 4, 0.0);
    cfg.detector.false_positive_rate = 0.3;
    let result = run_simulation(&cfg).unwrap();
    assert!(!result.records.is_empty());
}

#[test]
fn probes_measure_pairs_simultaneously() {
    let mut cfg = scenarios::cotormult_n5();
    let m = cfg.topology.clusters.clusters[0].members.clone();
    cfg.probes.push(ProbeSpec { pair: (m[0].clone(), m[1].clone()), time: 20.0 * 3600.0 });
    let result = run_simulation(&cfg).unwrap();
    let probes: Vec<&MeasurementRecord> = result.records.iter().filter(|r| r.ba_id.as_str() == PROBE_BA).collect();
    assert_eq!(probes.len(), 2);
    for p in &probes {
        assert_eq!(p.start_time, Some(20.0 * 3600.0));
        assert!(p.measured_bw < 0.6 * 25.0 * MB, "{}", p.measured_bw);
    }
}
