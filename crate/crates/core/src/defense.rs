//! Co-measurement anomaly detection.
//!
//! Relays that share a physical resource lose bandwidth when measured at the
//! same time. For an ordered pair `(r1, r2)` the drop is
//! `1 - mean(r1 while overlapping r2) / mean(r1 while not overlapping r2)`,
//! clamped to `[0, 1]`. Clean samples are preferred on both sides: records
//! of `r1` overlapping `r2` and nothing else, and records overlapping no
//! other relay at all. The looser sets are used only when no clean sample
//! exists. A pair's symmetric drop is the smaller of its two
//! directions: shared capacity lowers both relays, while an independent
//! relay that merely overlaps a busy one shows no drop itself.
//!
//! Overlap here is strict (positive length), so a measurement that starts
//! the instant another ends on the same scanner thread is not co-measured.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netsim::{ProbeSpec, PROBE_BA};
use crate::timeline::DEFAULT_DURATION;
use crate::types::{MeasurementRecord, RelayId};
use crate::util::mean;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DefenseConfig {
    /// Minimum symmetric drop for an edge between two suspects.
    pub threshold: f64,
    /// Assumed duration for records without a start time.
    pub fallback_duration: f64,
    /// Co-measured sum at most this times the larger solo means shared.
    pub shared_band: f64,
    /// Co-measured sum at least this times the solo sum means independent.
    pub independent_band: f64,
    /// Required overlap as a fraction of each probe's duration.
    pub min_overlap: f64,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self {
            threshold: 0.3,
            fallback_duration: DEFAULT_DURATION,
            shared_band: 1.25,
            independent_band: 0.8,
            min_overlap: 0.5,
        }
    }
}

impl DefenseConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |name, v: f64, min: f64, max: f64| {
            if (min..=max).contains(&v) {
                Ok(())
            } else {
                Err(Error::OutOfRange { name, value: v, min, max })
            }
        };
        check("threshold", self.threshold, 0.0, 1.0)?;
        check("fallback_duration", self.fallback_duration, f64::MIN_POSITIVE, f64::MAX)?;
        check("shared_band", self.shared_band, 0.0, f64::MAX)?;
        check("independent_band", self.independent_band, 0.0, f64::MAX)?;
        check("min_overlap", self.min_overlap, 0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaySuspicion {
    /// Largest symmetric drop over partners; `None` when the relay was
    /// co-measured but no partner left it a solo sample to compare with.
    pub score: Option<f64>,
    pub records: usize,
    /// Records overlapping no other relay's record.
    pub solo_records: usize,
    pub solo_mean: Option<f64>,
}

impl RelaySuspicion {
    pub fn insufficient(&self) -> bool {
        self.score.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDrop {
    pub a: RelayId,
    pub b: RelayId,
    /// Drop of `a` while co-measured with `b`.
    pub drop_ab: f64,
    pub drop_ba: f64,
    pub symmetric: f64,
    pub co_samples_a: usize,
    pub co_samples_b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspicionReport {
    pub threshold: f64,
    pub relays: BTreeMap<RelayId, RelaySuspicion>,
    /// Sorted by `(a, b)` with `a < b`.
    pub pairs: Vec<PairDrop>,
    /// Disjoint sets of two or more relays, ordered by smallest member.
    pub groups: Vec<BTreeSet<RelayId>>,
}

impl SuspicionReport {
    pub fn pair(&self, a: &RelayId, b: &RelayId) -> Option<&PairDrop> {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        self.pairs.iter().find(|p| &p.a == a && &p.b == b)
    }

    pub fn suspected(&self) -> BTreeSet<RelayId> {
        self.groups.iter().flatten().cloned().collect()
    }
}

struct Span<'a> {
    relay: &'a RelayId,
    start: f64,
    end: f64,
    bw: f64,
}

fn span<'a>(r: &'a MeasurementRecord, fallback: f64) -> Span<'a> {
    Span {
        relay: &r.relay_id,
        start: r.start_time.unwrap_or(r.end_time - fallback),
        end: r.end_time,
        bw: r.measured_bw,
    }
}

fn strictly_overlap(a: &Span, b: &Span) -> bool {
    a.start < b.end && b.start < a.end
}

/// Relays each span overlaps, found by one sweep over start times.
fn overlap_partners<'a>(spans: &[Span<'a>]) -> Vec<BTreeSet<&'a RelayId>> {
    let mut partners = alloc::vec![BTreeSet::new(); spans.len()];
    let mut active: Vec<usize> = Vec::new();
    for i in 0..spans.len() {
        active.retain(|&j| spans[j].end > spans[i].start);
        for &j in &active {
            if spans[i].relay != spans[j].relay && strictly_overlap(&spans[i], &spans[j]) {
                partners[i].insert(spans[j].relay);
                partners[j].insert(spans[i].relay);
            }
        }
        active.push(i);
    }
    partners
}

fn drop_ratio(co: f64, solo: f64) -> f64 {
    if solo <= 0.0 {
        return 0.0;
    }
    (1.0 - co / solo).clamp(0.0, 1.0)
}

/// Scores every relay from its measurements with and without each partner.
///
/// Only successful records count. Records are put in a canonical order
/// first, so the report does not depend on input order.
pub fn score_suspects(records: &[MeasurementRecord], cfg: &DefenseConfig) -> Result<SuspicionReport> {
    cfg.validate()?;
    let mut spans: Vec<Span> = records.iter().filter(|r| r.ok).map(|r| span(r, cfg.fallback_duration)).collect();
    spans.sort_by(|a, b| {
        a.start
            .total_cmp(&b.start)
            .then(a.relay.cmp(b.relay))
            .then(a.end.total_cmp(&b.end))
            .then(a.bw.total_cmp(&b.bw))
    });
    let relay_ids: BTreeSet<&RelayId> = spans.iter().map(|s| s.relay).collect();
    if relay_ids.len() < 2 {
        return Err(Error::Config("at least two relays with successful measurements are required".into()));
    }
    let partners = overlap_partners(&spans);

    let mut by_relay: BTreeMap<&RelayId, Vec<usize>> = BTreeMap::new();
    for (i, s) in spans.iter().enumerate() {
        by_relay.entry(s.relay).or_default().push(i);
    }

    // drop of `a` against `b`, with the number of co-measured samples
    let directed = |a: &RelayId, b: &RelayId| -> Option<(f64, usize)> {
        let idx = &by_relay[a];
        let pick = |strict: &dyn Fn(usize) -> bool, loose: &dyn Fn(usize) -> bool| -> Vec<usize> {
            let clean: Vec<usize> = idx.iter().copied().filter(|&i| strict(i)).collect();
            if clean.is_empty() {
                idx.iter().copied().filter(|&i| loose(i)).collect()
            } else {
                clean
            }
        };
        let co = pick(&|i| partners[i].len() == 1 && partners[i].contains(b), &|i| partners[i].contains(b));
        let solo = pick(&|i| partners[i].is_empty(), &|i| !partners[i].contains(b));
        let co_mean = mean(co.iter().map(|&i| spans[i].bw))?;
        let solo_mean = mean(solo.iter().map(|&i| spans[i].bw))?;
        Some((drop_ratio(co_mean, solo_mean), co.len()))
    };

    let mut pair_set: BTreeSet<(&RelayId, &RelayId)> = BTreeSet::new();
    for (i, ps) in partners.iter().enumerate() {
        for &p in ps {
            let me = spans[i].relay;
            pair_set.insert(if me < p { (me, p) } else { (p, me) });
        }
    }
    let pairs: Vec<PairDrop> = pair_set
        .iter()
        .filter_map(|&(a, b)| {
            let (drop_ab, co_a) = directed(a, b)?;
            let (drop_ba, co_b) = directed(b, a)?;
            Some(PairDrop {
                a: a.clone(),
                b: b.clone(),
                drop_ab,
                drop_ba,
                symmetric: drop_ab.min(drop_ba),
                co_samples_a: co_a,
                co_samples_b: co_b,
            })
        })
        .collect();

    let mut relays = BTreeMap::new();
    for (&id, idx) in &by_relay {
        let solo: Vec<usize> = idx.iter().copied().filter(|&i| partners[i].is_empty()).collect();
        let has_partner = idx.iter().any(|&i| !partners[i].is_empty());
        let scores = pairs.iter().filter(|p| &p.a == id || &p.b == id).map(|p| p.symmetric);
        let score = match scores.reduce(f64::max) {
            Some(s) => Some(s),
            None if has_partner => None,
            None => Some(0.0),
        };
        relays.insert(
            id.clone(),
            RelaySuspicion {
                score,
                records: idx.len(),
                solo_records: solo.len(),
                solo_mean: mean(solo.iter().map(|&i| spans[i].bw)),
            },
        );
    }

    let groups = components(&pairs, cfg.threshold);
    Ok(SuspicionReport { threshold: cfg.threshold, relays, pairs, groups })
}

/// Connected components of the graph of pairs at or above the threshold.
fn components(pairs: &[PairDrop], threshold: f64) -> Vec<BTreeSet<RelayId>> {
    let mut adj: BTreeMap<&RelayId, Vec<&RelayId>> = BTreeMap::new();
    for p in pairs.iter().filter(|p| p.symmetric >= threshold) {
        adj.entry(&p.a).or_default().push(&p.b);
        adj.entry(&p.b).or_default().push(&p.a);
    }
    let mut seen: BTreeSet<&RelayId> = BTreeSet::new();
    let mut groups = Vec::new();
    for &start in adj.keys() {
        if !seen.insert(start) {
            continue;
        }
        let mut group = BTreeSet::new();
        let mut stack = alloc::vec![start];
        while let Some(r) = stack.pop() {
            group.insert(r.clone());
            for &n in &adj[r] {
                if seen.insert(n) {
                    stack.push(n);
                }
            }
        }
        groups.push(group);
    }
    groups
}

/// Simultaneous probes for the most suspicious pairs, highest drop first,
/// ties broken by relay ids. Probe `i` is scheduled at `start + i * spacing`.
pub fn plan_probes(report: &SuspicionReport, budget: usize, start: f64, spacing: f64) -> Result<Vec<ProbeSpec>> {
    if budget == 0 {
        return Err(Error::Config("probe budget must be at least 1".into()));
    }
    let mut ranked: Vec<&PairDrop> = report.pairs.iter().filter(|p| p.symmetric >= report.threshold).collect();
    ranked.sort_by(|x, y| y.symmetric.total_cmp(&x.symmetric).then_with(|| (&x.a, &x.b).cmp(&(&y.a, &y.b))));
    Ok(ranked
        .into_iter()
        .take(budget)
        .enumerate()
        .map(|(i, p)| ProbeSpec { pair: (p.a.clone(), p.b.clone()), time: start + i as f64 * spacing })
        .collect())
}

/// Every probe pair in the records: two probe records with the same start
/// time on threads 0 and 1.
pub fn probe_pairs(records: &[MeasurementRecord]) -> Vec<(&MeasurementRecord, &MeasurementRecord)> {
    let probes: Vec<&MeasurementRecord> = records.iter().filter(|r| r.ba_id.as_str() == PROBE_BA).collect();
    let mut out = Vec::new();
    for a in probes.iter().filter(|r| r.thread_id == 0) {
        let twin = probes
            .iter()
            .find(|b| b.thread_id == 1 && b.start_time.is_some() && b.start_time == a.start_time);
        if let Some(b) = twin {
            out.push((*a, *b));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Shared,
    Independent,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub verdict: Verdict,
    pub co_sum: f64,
    /// Overlap as a fraction of the shorter probe.
    pub overlap: f64,
    pub caveat: String,
}

/// Decides from one simultaneous probe whether two relays share capacity.
///
/// The bands can overlap when one solo rate is much smaller than the other;
/// `shared` then takes precedence over `independent`.
pub fn verify_shared_resource(
    a: &MeasurementRecord,
    b: &MeasurementRecord,
    solo_a: Option<f64>,
    solo_b: Option<f64>,
    cfg: &DefenseConfig,
) -> Verification {
    let (sa, sb) = (span(a, cfg.fallback_duration), span(b, cfg.fallback_duration));
    let shared_len = (sa.end.min(sb.end) - sa.start.max(sb.start)).max(0.0);
    let shorter = (sa.end - sa.start).min(sb.end - sb.start);
    let overlap = if shorter > 0.0 { shared_len / shorter } else { 0.0 };
    let long_enough = |s: &Span| s.end - s.start > 0.0 && shared_len >= cfg.min_overlap * (s.end - s.start);
    let co_sum = a.measured_bw + b.measured_bw;
    let single = "verdict from a single probe pair";

    let result = |verdict, caveat: &str| Verification { verdict, co_sum, overlap, caveat: caveat.into() };
    if !(long_enough(&sa) && long_enough(&sb)) {
        return result(Verdict::Inconclusive, "probes overlap for less than the required fraction");
    }
    let (Some(s1), Some(s2)) = (solo_a, solo_b) else {
        return result(Verdict::Inconclusive, "missing solo baseline");
    };
    if !(s1 > 0.0 && s2 > 0.0) {
        return result(Verdict::Inconclusive, "missing solo baseline");
    }
    let verdict = if co_sum <= cfg.shared_band * s1.max(s2) {
        Verdict::Shared
    } else if co_sum >= cfg.independent_band * (s1 + s2) {
        Verdict::Independent
    } else {
        Verdict::Inconclusive
    };
    result(verdict, single)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::run_simulation;
    use crate::scenarios::{self, Testbed};
    use alloc::format;
    use alloc::vec;
    use proptest::prelude::*;

    fn rec(relay: &str, start: f64, end: f64, bw: f64) -> MeasurementRecord {
        MeasurementRecord {
            relay_id: relay.into(),
            ba_id: "ba".into(),
            thread_id: 0,
            start_time: Some(start),
            end_time: end,
            measured_bw: bw,
            bytes_total: 0,
            downloads: 5,
            ok: true,
        }
    }

    fn cfg() -> DefenseConfig {
        DefenseConfig::default()
    }

    #[test]
    fn shared_pair_halves() {
        let records = vec![
            rec("a", 0.0, 40.0, 25.0),
            rec("b", 100.0, 140.0, 25.0),
            rec("a", 200.0, 240.0, 12.5),
            rec("b", 200.0, 240.0, 12.5),
        ];
        let r = score_suspects(&records, &cfg()).unwrap();
        let p = r.pair(&"b".into(), &"a".into()).unwrap();
        assert!((p.symmetric - 0.5).abs() < 1e-12);
        assert_eq!(r.groups, vec![["a".into(), "b".into()].into()]);
        assert_eq!(r.relays[&RelayId::from("a")].score, Some(0.5));
        assert_eq!(r.relays[&RelayId::from("a")].solo_mean, Some(25.0));
    }

    #[test]
    fn independent_pair_does_not_drop() {
        let records = vec![
            rec("a", 0.0, 40.0, 25.0),
            rec("b", 100.0, 140.0, 20.0),
            rec("a", 200.0, 240.0, 25.0),
            rec("b", 200.0, 240.0, 20.0),
        ];
        let r = score_suspects(&records, &cfg()).unwrap();
        assert_eq!(r.pair(&"a".into(), &"b".into()).unwrap().symmetric, 0.0);
        assert!(r.groups.is_empty());
    }

    #[test]
    fn one_sided_drop_is_not_suspicious() {
        // b is busy with something else while a is unaffected
        let records = vec![
            rec("a", 0.0, 40.0, 25.0),
            rec("b", 100.0, 140.0, 20.0),
            rec("a", 200.0, 240.0, 25.0),
            rec("b", 200.0, 240.0, 5.0),
        ];
        let r = score_suspects(&records, &cfg()).unwrap();
        let p = r.pair(&"a".into(), &"b".into()).unwrap();
        assert_eq!((p.drop_ab, p.drop_ba, p.symmetric), (0.0, 0.75, 0.0));
    }

    #[test]
    fn touching_is_not_overlap() {
        let records = vec![rec("a", 0.0, 40.0, 25.0), rec("b", 40.0, 80.0, 10.0)];
        let r = score_suspects(&records, &cfg()).unwrap();
        assert!(r.pairs.is_empty());
        assert_eq!(r.relays[&RelayId::from("b")].score, Some(0.0));
    }

    #[test]
    fn never_solo_is_insufficient() {
        let records = vec![rec("a", 0.0, 40.0, 25.0), rec("b", 10.0, 50.0, 10.0)];
        let r = score_suspects(&records, &cfg()).unwrap();
        assert!(r.relays.values().all(RelaySuspicion::insufficient));
        assert!(r.groups.is_empty());
    }

    #[test]
    fn fallback_duration_fills_missing_starts() {
        let mut records = vec![
            rec("a", 0.0, 40.0, 25.0),
            rec("b", 100.0, 140.0, 25.0),
            rec("a", 200.0, 239.0, 12.5),
            rec("b", 200.0, 239.0, 12.5),
        ];
        for r in &mut records {
            r.start_time = None;
        }
        let r = score_suspects(&records, &cfg()).unwrap();
        assert_eq!(r.groups.len(), 1);
    }

    #[test]
    fn fewer_than_two_relays_is_an_error() {
        assert!(score_suspects(&[rec("a", 0.0, 1.0, 1.0)], &cfg()).is_err());
        let bad = DefenseConfig { threshold: 2.0, ..cfg() };
        assert!(score_suspects(&[], &bad).is_err());
    }

    fn report_with(drops: &[(&str, &str, f64)]) -> SuspicionReport {
        SuspicionReport {
            threshold: 0.3,
            relays: BTreeMap::new(),
            pairs: drops
                .iter()
                .map(|&(a, b, d)| PairDrop {
                    a: a.into(),
                    b: b.into(),
                    drop_ab: d,
                    drop_ba: d,
                    symmetric: d,
                    co_samples_a: 1,
                    co_samples_b: 1,
                })
                .collect(),
            groups: vec![],
        }
    }

    #[test]
    fn probe_planning() {
        let one = report_with(&[("a", "b", 0.5)]);
        assert_eq!(plan_probes(&one, 3, 0.0, 60.0).unwrap().len(), 1);
        let five = report_with(&[("a", "b", 0.4), ("a", "c", 0.9), ("b", "c", 0.6), ("c", "d", 0.6), ("d", "e", 0.1)]);
        let plan = plan_probes(&five, 2, 100.0, 60.0).unwrap();
        assert_eq!(plan[0].pair, ("a".into(), "c".into()));
        assert_eq!(plan[1].pair, ("b".into(), "c".into()));
        assert_eq!((plan[0].time, plan[1].time), (100.0, 160.0));
        assert!(plan_probes(&report_with(&[]), 4, 0.0, 1.0).unwrap().is_empty());
        assert!(plan_probes(&one, 0, 0.0, 1.0).is_err());
    }

    #[test]
    fn verdict_bands() {
        let c = cfg();
        let v = |b1: f64, b2: f64, s1: f64, s2: f64| {
            verify_shared_resource(&rec("a", 0.0, 40.0, b1), &rec("b", 0.0, 40.0, b2), Some(s1), Some(s2), &c).verdict
        };
        assert_eq!(v(12.5, 12.5, 25.0, 25.0), Verdict::Shared);
        assert_eq!(v(25.0, 24.0, 25.0, 24.0), Verdict::Independent);
        // 1.5x the larger solo: 30 > 1.25 * 20 = 25 and 30 >= 0.8 * 30 = 24
        assert_eq!(v(20.0, 10.0, 20.0, 10.0), Verdict::Independent);
        // equal solos: 30 > 25 and 30 < 0.8 * 40 = 32
        assert_eq!(v(15.0, 15.0, 20.0, 20.0), Verdict::Inconclusive);
        // bands overlap for lopsided solos; shared wins
        assert_eq!(v(12.0, 0.0, 10.0, 4.0), Verdict::Shared);
    }

    #[test]
    fn verification_needs_overlap_and_baselines() {
        let c = cfg();
        let a = rec("a", 0.0, 40.0, 10.0);
        let late = rec("b", 30.0, 70.0, 10.0);
        assert_eq!(verify_shared_resource(&a, &late, Some(20.0), Some(20.0), &c).verdict, Verdict::Inconclusive);
        let b = rec("b", 5.0, 45.0, 10.0);
        assert_eq!(verify_shared_resource(&a, &b, None, Some(20.0), &c).verdict, Verdict::Inconclusive);
        let ok = verify_shared_resource(&a, &b, Some(20.0), Some(20.0), &c);
        assert_eq!(ok.verdict, Verdict::Shared);
        assert!((ok.overlap - 35.0 / 40.0).abs() < 1e-12);
        assert!(!ok.caveat.is_empty());
    }

    #[test]
    fn simulated_cluster_is_recovered() {
        let cfg_sim = scenarios::cotormult_probed(6, 3);
        let result = run_simulation(&cfg_sim).unwrap();
        let report = score_suspects(&result.records, &cfg()).unwrap();
        let members = cfg_sim.topology.clusters.all_members();
        assert_eq!(report.groups, vec![members.clone()]);
        let a = members.iter().next().unwrap();
        let b = members.iter().nth(1).unwrap();
        assert!((report.pair(a, b).unwrap().symmetric - 0.5).abs() < 0.05);

        let probes = probe_pairs(&result.records);
        assert_eq!(probes.len(), 55);
        for (x, y) in probes {
            let solo = |r: &RelayId| report.relays[r].solo_mean;
            let v = verify_shared_resource(x, y, solo(&x.relay_id), solo(&y.relay_id), &cfg());
            let both = members.contains(&x.relay_id) && members.contains(&y.relay_id);
            let expected = if both { Verdict::Shared } else { Verdict::Independent };
            assert_eq!(v.verdict, expected, "{} {}", x.relay_id, y.relay_id);
        }
    }

    #[test]
    fn planned_probes_reproduce_the_score() {
        let first = scenarios::cotormult_probed(3, 4);
        let result = run_simulation(&first).unwrap();
        let report = score_suspects(&result.records, &cfg()).unwrap();
        let plan = plan_probes(&report, 4, 3600.0 + scenarios::PROBE_OFFSET, scenarios::PROBE_SPACING).unwrap();
        assert_eq!(plan.len(), 4);

        let mut second = Testbed { honest_relays: 3, threads: 1, duration: 6.0 * 3600.0, seed: 5, ..Default::default() }
            .build();
        scenarios::add_cotormult_cluster(&mut second, "cluster-1", 5, 0.0);
        second.probes = plan;
        let rerun = run_simulation(&second).unwrap();
        let pairs = probe_pairs(&rerun.records);
        assert_eq!(pairs.len(), 4);
        for (x, y) in pairs {
            let score = report.pair(&x.relay_id, &y.relay_id).unwrap().symmetric;
            for r in [x, y] {
                let solo = report.relays[&r.relay_id].solo_mean.unwrap();
                let observed = drop_ratio(r.measured_bw, solo);
                assert!((observed - score).abs() <= 0.1 * score, "{observed} vs {score}");
            }
        }
    }

    #[test]
    fn all_honest_has_no_groups() {
        for seed in 0..3 {
            let sim = Testbed { honest_relays: 12, threads: 4, duration: 12.0 * 3600.0, seed, ..Default::default() }
                .build();
            let result = run_simulation(&sim).unwrap();
            let report = score_suspects(&result.records, &cfg()).unwrap();
            assert!(report.groups.is_empty(), "seed {seed}: {:?}", report.groups);
        }
    }

    fn records_strategy() -> impl Strategy<Value = Vec<MeasurementRecord>> {
        prop::collection::vec((0usize..5, 0u32..2000, 25u32..60, 1u32..50), 2..60).prop_map(|v| {
            v.into_iter()
                .map(|(r, s, d, bw)| rec(&format!("r{r}"), f64::from(s), f64::from(s + d), f64::from(bw)))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn record_order_does_not_matter(records in records_strategy()) {
            let a = score_suspects(&records, &cfg());
            let mut rev = records.clone();
            rev.reverse();
            prop_assert_eq!(a, score_suspects(&rev, &cfg()));
        }

        #[test]
        fn report_invariants(records in records_strategy()) {
            if let Ok(r) = score_suspects(&records, &cfg()) {
                let mut seen = BTreeSet::new();
                for g in &r.groups {
                    prop_assert!(g.len() >= 2);
                    for m in g {
                        prop_assert!(seen.insert(m.clone()));
                    }
                }
                for (id, s) in &r.relays {
                    if let Some(score) = s.score {
                        prop_assert!((0.0..=1.0).contains(&score));
                        let best = r.pairs.iter().filter(|p| &p.a == id || &p.b == id).map(|p| p.symmetric).fold(0.0, f64::max);
                        prop_assert_eq!(score, best);
                    }
                }
            }
        }

        #[test]
        fn verdicts_follow_precedence(
            b1 in 0.0f64..50.0, b2 in 0.0f64..50.0, s1 in 0.1f64..50.0, s2 in 0.1f64..50.0,
        ) {
            let c = cfg();
            let v = verify_shared_resource(&rec("a", 0.0, 40.0, b1), &rec("b", 0.0, 40.0, b2), Some(s1), Some(s2), &c);
            let sum = b1 + b2;
            let expected = if sum <= 1.25 * s1.max(s2) {
                Verdict::Shared
            } else if sum >= 0.8 * (s1 + s2) {
                Verdict::Independent
            } else {
                Verdict::Inconclusive
            };
            prop_assert_eq!(v.verdict, expected);
        }
    }
}
