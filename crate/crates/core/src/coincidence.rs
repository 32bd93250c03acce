//! Co-measurement events over a relay set.
//!
//! Two measurements overlap when their closed intervals intersect, including
//! a single shared instant. An event is a connected component of the overlap
//! graph, so chained overlaps join one event even when the ends of the chain
//! never meet. Each measurement is labelled with the size of its event.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeline::{Interval, TimelineEstimate};
use crate::types::RelayId;

/// Closed time range `[start, end]` used to select measurements by end time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub const ALL: Window = Window { start: f64::NEG_INFINITY, end: f64::INFINITY };

    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceDistribution {
    /// Size of the relay set, not the number of relays actually seen.
    pub relay_set_size: usize,
    /// Event size k to the fraction of measurements in size-k events.
    pub probabilities: BTreeMap<usize, f64>,
    /// Event size k to the number of measurements in size-k events.
    pub counts: BTreeMap<usize, u64>,
    pub total_measurements: u64,
    pub window: Window,
}

impl CoincidenceDistribution {
    pub fn probability(&self, k: usize) -> f64 {
        self.probabilities.get(&k).copied().unwrap_or(0.0)
    }

    /// Builds a distribution from event-size counts.
    pub fn from_counts(relay_set_size: usize, counts: BTreeMap<usize, u64>, window: Window) -> Result<Self> {
        let total: u64 = counts.values().sum();
        if total == 0 {
            return Err(Error::EmptyWindow);
        }
        let probabilities = counts.iter().map(|(&k, &c)| (k, c as f64 / total as f64)).collect();
        Ok(Self { relay_set_size, probabilities, counts, total_measurements: total, window })
    }
}

/// Event size of each interval, by index, using a sweep over start times.
pub fn component_sizes(intervals: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..intervals.len()).collect();
    order.sort_by(|&a, &b| {
        intervals[a].0.total_cmp(&intervals[b].0).then(intervals[a].1.total_cmp(&intervals[b].1))
    });
    let mut sizes = alloc::vec![0usize; intervals.len()];
    let mut group: Vec<usize> = Vec::new();
    let mut reach = f64::NEG_INFINITY;
    let flush = |group: &mut Vec<usize>, sizes: &mut [usize]| {
        for &i in group.iter() {
            sizes[i] = group.len();
        }
        group.clear();
    };
    for i in order {
        let (start, end) = intervals[i];
        if !group.is_empty() && start > reach {
            flush(&mut group, &mut sizes);
        }
        if group.is_empty() {
            reach = end;
        } else {
            reach = reach.max(end);
        }
        group.push(i);
    }
    flush(&mut group, &mut sizes);
    sizes
}

fn selected<'a>(
    timeline: &'a TimelineEstimate,
    relay_set: &'a BTreeSet<RelayId>,
    window: Window,
) -> impl Iterator<Item = &'a Interval> + 'a {
    timeline
        .intervals
        .iter()
        .filter(move |iv| relay_set.contains(&iv.relay_id) && window.contains(iv.end))
}

/// k-way coincidence distribution of the relay set within the window.
pub fn count_events(
    timeline: &TimelineEstimate,
    relay_set: &BTreeSet<RelayId>,
    window: Window,
) -> Result<CoincidenceDistribution> {
    if relay_set.is_empty() {
        return Err(Error::Config("relay set is empty".into()));
    }
    let spans: Vec<(f64, f64)> = selected(timeline, relay_set, window).map(|iv| (iv.start, iv.end)).collect();
    let mut counts = BTreeMap::new();
    for k in component_sizes(&spans) {
        *counts.entry(k).or_insert(0u64) += 1;
    }
    CoincidenceDistribution::from_counts(relay_set.len(), counts, window)
}

/// `n * sum_k P(k) / k`: each measurement in a k-way event contributes 1/k.
pub fn expected_inflation(dist: &CoincidenceDistribution) -> f64 {
    let weighted: f64 = dist.probabilities.iter().map(|(&k, &p)| p / k as f64).sum();
    dist.relay_set_size as f64 * weighted
}

/// P(2) for windows of increasing length anchored at the earliest end time
/// in the relay set. Windows without measurements report `None`.
pub fn coincidence_vs_window(
    timeline: &TimelineEstimate,
    relay_set: &BTreeSet<RelayId>,
    windows: &[f64],
) -> Result<Vec<(f64, Option<f64>)>> {
    if windows.is_empty() {
        return Err(Error::Config("no windows given".into()));
    }
    let anchor = selected(timeline, relay_set, Window::ALL).map(|iv| iv.end).min_by(f64::total_cmp);
    windows
        .iter()
        .map(|&len| {
            let Some(anchor) = anchor else { return Ok((len, None)) };
            match count_events(timeline, relay_set, Window { start: anchor, end: anchor + len }) {
                Ok(d) => Ok((len, Some(d.probability(2)))),
                Err(Error::EmptyWindow) => Ok((len, None)),
                Err(e) => Err(e),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Quadratic oracle: union-find over every overlapping pair.
    fn brute_force(intervals: &[(f64, f64)]) -> Vec<usize> {
        let n = intervals.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (intervals[i], intervals[j]);
                if a.0 <= b.1 && b.0 <= a.1 {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    parent[ri] = rj;
                }
            }
        }
        let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
        roots.iter().map(|r| roots.iter().filter(|x| *x == r).count()).collect()
    }

    fn iv(relay: &str, start: f64, end: f64) -> Interval {
        Interval { relay_id: relay.into(), ba_id: "ba".into(), start, end }
    }

    fn set(ids: &[&str]) -> BTreeSet<RelayId> {
        ids.iter().map(|s| RelayId::from(*s)).collect()
    }

    /// Relay 4 alone; relays 1 and 3 together; relays 1, 3 and 5 chained.
    pub(crate) fn example_timeline() -> TimelineEstimate {
        TimelineEstimate {
            intervals: vec![
                iv("relay4", 0.0, 39.0),
                iv("relay1", 100.0, 139.0),
                iv("relay3", 120.0, 159.0),
                iv("relay3", 300.0, 339.0),
                iv("relay1", 330.0, 369.0),
                iv("relay5", 360.0, 399.0),
            ],
            assumed_duration: 39.0,
        }
    }

    #[test]
    fn example_events() {
        let t = example_timeline();
        let d = count_events(&t, &set(&["relay1", "relay2", "relay3", "relay4", "relay5"]), Window::ALL).unwrap();
        assert_eq!(d.total_measurements, 6);
        assert_eq!(d.probability(1), 1.0 / 6.0);
        assert_eq!(d.probability(2), 2.0 / 6.0);
        assert_eq!(d.probability(3), 3.0 / 6.0);
        assert_eq!(d.counts, [(1, 1), (2, 2), (3, 3)].into());
    }

    #[test]
    fn chained_overlap_is_one_event() {
        let sizes = component_sizes(&[(0.0, 10.0), (9.0, 20.0), (19.0, 30.0)]);
        assert_eq!(sizes, vec![3, 3, 3]);
    }

    #[test]
    fn touching_intervals_overlap() {
        assert_eq!(component_sizes(&[(0.0, 10.0), (10.0, 20.0)]), vec![2, 2]);
        assert_eq!(component_sizes(&[(0.0, 10.0), (10.5, 20.0)]), vec![1, 1]);
    }

    #[test]
    fn disjoint_intervals_are_solo() {
        let t = TimelineEstimate {
            intervals: (0..10).map(|i| iv("r", i as f64 * 50.0, i as f64 * 50.0 + 39.0)).collect(),
            assumed_duration: 39.0,
        };
        let d = count_events(&t, &set(&["r"]), Window::ALL).unwrap();
        assert_eq!(d.probabilities, [(1, 1.0)].into());
    }

    #[test]
    fn empty_selection_is_an_error() {
        let t = example_timeline();
        assert_eq!(count_events(&t, &set(&["nobody"]), Window::ALL), Err(Error::EmptyWindow));
        assert!(count_events(&t, &BTreeSet::new(), Window::ALL).is_err());
    }

    #[test]
    fn expected_inflation_examples() {
        let w = Window::ALL;
        let solo = CoincidenceDistribution::from_counts(10, [(1, 7)].into(), w).unwrap();
        assert_eq!(expected_inflation(&solo), 10.0);
        let half = CoincidenceDistribution::from_counts(2, [(1, 1), (2, 1)].into(), w).unwrap();
        assert_eq!(expected_inflation(&half), 1.5);
    }

    #[test]
    fn window_sweep() {
        let t = example_timeline();
        let s = set(&["relay1", "relay3"]);
        let rows = coincidence_vs_window(&t, &s, &[10.0, 50.0, 1000.0]).unwrap();
        assert_eq!(rows[0], (10.0, Some(0.0)));
        assert_eq!(rows[1], (50.0, Some(1.0)));
        assert_eq!(rows[2], (1000.0, Some(1.0)));
        assert!(coincidence_vs_window(&t, &s, &[]).is_err());
        assert_eq!(coincidence_vs_window(&t, &set(&["zz"]), &[5.0]).unwrap(), vec![(5.0, None)]);
    }

    #[test]
    fn sweep_matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let m = rng.gen_range(0..=200);
            let spans: Vec<(f64, f64)> = (0..m)
                .map(|_| {
                    let s = f64::from(rng.gen_range(0..2000u32));
                    (s, s + f64::from(rng.gen_range(0..60u32)))
                })
                .collect();
            assert_eq!(component_sizes(&spans), brute_force(&spans));
        }
    }

    fn spans() -> impl Strategy<Value = Vec<(f64, f64, usize)>> {
        prop::collection::vec((0u32..1000, 0u32..60, 0usize..8), 1..80)
            .prop_map(|v| v.into_iter().map(|(s, l, r)| (f64::from(s), f64::from(s + l), r)).collect())
    }

    fn timeline_of(v: &[(f64, f64, usize)]) -> TimelineEstimate {
        TimelineEstimate {
            intervals: v.iter().map(|&(s, e, r)| iv(&format!("r{r}"), s, e)).collect(),
            assumed_duration: 39.0,
        }
    }

    proptest! {
        #[test]
        fn sweep_equals_oracle(v in spans()) {
            let s: Vec<(f64, f64)> = v.iter().map(|&(a, b, _)| (a, b)).collect();
            prop_assert_eq!(component_sizes(&s), brute_force(&s));
        }

        #[test]
        fn distribution_sums_to_one_and_bounds_inflation(v in spans()) {
            let t = timeline_of(&v);
            let all: BTreeSet<RelayId> = (0..8).map(|r| RelayId::new(format!("r{r}"))).collect();
            let d = count_events(&t, &all, Window::ALL).unwrap();
            let sum: f64 = d.probabilities.values().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
            let f = expected_inflation(&d);
            prop_assert!(f <= 8.0 + 1e-9);
            prop_assert_eq!(f == 8.0, d.probability(1) == 1.0);
        }

        #[test]
        fn insertion_order_does_not_matter(v in spans()) {
            let all: BTreeSet<RelayId> = (0..8).map(|r| RelayId::new(format!("r{r}"))).collect();
            let a = count_events(&timeline_of(&v), &all, Window::ALL).unwrap();
            let mut rev = v.clone();
            rev.reverse();
            let b = count_events(&timeline_of(&rev), &all, Window::ALL).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn dropping_a_relay_never_grows_events(v in spans(), drop in 0usize..8) {
            let t = timeline_of(&v);
            let keep: Vec<usize> = (0..v.len()).filter(|&i| v[i].2 != drop).collect();
            let full: Vec<(f64, f64)> = v.iter().map(|&(a, b, _)| (a, b)).collect();
            let sub: Vec<(f64, f64)> = keep.iter().map(|&i| full[i]).collect();
            let before = component_sizes(&full);
            let after = component_sizes(&sub);
            for (j, &i) in keep.iter().enumerate() {
                prop_assert!(after[j] <= before[i]);
            }
            prop_assert_eq!(t.intervals.len(), v.len());
        }

        #[test]
        fn longer_windows_hold_more_measurements(v in spans(), a in 1.0f64..500.0, b in 1.0f64..500.0) {
            let t = timeline_of(&v);
            let all: BTreeSet<RelayId> = (0..8).map(|r| RelayId::new(format!("r{r}"))).collect();
            let anchor = t.intervals.iter().map(|i| i.end).fold(f64::INFINITY, f64::min);
            let count = |len: f64| count_events(&t, &all, Window { start: anchor, end: anchor + len })
                .map(|d| d.total_measurements).unwrap_or(0);
            let (short, long) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(count(short) <= count(long));
        }
    }
}
