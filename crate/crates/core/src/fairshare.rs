//! Max-min fair allocation by progressive filling.
//!
//! Every flow crosses a set of capacity-limited resources and may carry its
//! own rate cap. All unfrozen flows are raised together until a resource
//! saturates or a flow reaches its cap; saturated flows are frozen and the
//! remaining capacity is redistributed among the rest.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowDemand {
    /// Indices into the capacity vector.
    pub resources: Vec<usize>,
    /// Per-flow rate cap; `f64::INFINITY` for none.
    pub cap: f64,
}

const EPS: f64 = 1e-9;

/// Returns the max-min fair rate of every flow.
///
/// # Panics
///
/// If a flow has neither a resource nor a finite cap (its rate would be unbounded).
pub fn max_min_allocate(capacities: &[f64], flows: &[FlowDemand]) -> Vec<f64> {
    let mut rates = vec![0.0; flows.len()];
    let mut remaining: Vec<f64> = capacities.iter().map(|c| c.max(0.0)).collect();
    let mut frozen: Vec<bool> = flows.iter().map(|f| !(f.cap > 0.0)).collect();
    for f in flows {
        assert!(
            !f.resources.is_empty() || f.cap.is_finite(),
            "flow without resources needs a finite cap"
        );
    }

    loop {
        let mut users = vec![0usize; capacities.len()];
        for (i, f) in flows.iter().enumerate() {
            if !frozen[i] {
                for &r in &f.resources {
                    users[r] += 1;
                }
            }
        }
        if frozen.iter().all(|f| *f) {
            break;
        }

        let mut delta = f64::INFINITY;
        for (r, &n) in users.iter().enumerate() {
            if n > 0 {
                delta = delta.min(remaining[r] / n as f64);
            }
        }
        for (i, f) in flows.iter().enumerate() {
            if !frozen[i] {
                delta = delta.min(f.cap - rates[i]);
            }
        }
        let delta = delta.max(0.0);

        for (rate, _) in rates.iter_mut().zip(&frozen).filter(|(_, f)| !**f) {
            *rate += delta;
        }
        for (r, &n) in users.iter().enumerate() {
            remaining[r] -= delta * n as f64;
        }

        let mut progressed = false;
        for (i, f) in flows.iter().enumerate() {
            if frozen[i] {
                continue;
            }
            let capped = f.cap.is_finite() && f.cap - rates[i] <= EPS * f.cap.max(1.0);
            let saturated = f
                .resources
                .iter()
                .any(|&r| remaining[r] <= EPS * capacities[r].abs().max(1.0));
            if capped || saturated {
                frozen[i] = true;
                progressed = true;
            }
        }
        if !progressed {
            // numerically stuck; nothing left to hand out
            break;
        }
    }
    rates
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flow(resources: &[usize], cap: f64) -> FlowDemand {
        FlowDemand {
            resources: resources.to_vec(),
            cap,
        }
    }

    #[test]
    fn equal_split() {
        let r = max_min_allocate(&[30.0], &vec![flow(&[0], f64::INFINITY); 3]);
        assert_eq!(r, vec![10.0, 10.0, 10.0]);
    }

    #[test]
    fn unused_share_is_redistributed() {
        let r = max_min_allocate(&[30.0], &[flow(&[0], 4.0), flow(&[0], f64::INFINITY), flow(&[0], f64::INFINITY)]);
        assert!((r[0] - 4.0).abs() < 1e-9);
        assert!((r[1] - 13.0).abs() < 1e-9);
        assert!((r[2] - 13.0).abs() < 1e-9);
    }

    #[test]
    fn two_resource_path() {
        // flow 0 crosses both; resource 1 is the bottleneck shared with flow 1
        let r = max_min_allocate(
            &[100.0, 10.0],
            &[flow(&[0, 1], f64::INFINITY), flow(&[1], f64::INFINITY), flow(&[0], f64::INFINITY)],
        );
        assert!((r[0] - 5.0).abs() < 1e-9);
        assert!((r[1] - 5.0).abs() < 1e-9);
        assert!((r[2] - 95.0).abs() < 1e-9);
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<FlowDemand>)> {
        (1usize..5).prop_flat_map(|nres| {
            (
                prop::collection::vec(1.0f64..100.0, nres),
                prop::collection::vec(
                    (
                        prop::collection::btree_set(0..nres, 1..=nres),
                        prop_oneof![Just(f64::INFINITY), 0.5f64..80.0],
                    )
                        .prop_map(|(rs, cap)| FlowDemand { resources: rs.into_iter().collect(), cap }),
                    1..8,
                ),
            )
        })
    }

    proptest! {
        #[test]
        fn feasible_and_max_min((caps, flows) in instance()) {
            let rates = max_min_allocate(&caps, &flows);
            // capacity conservation
            for (r, c) in caps.iter().enumerate() {
                let used: f64 = flows.iter().zip(&rates).filter(|(f, _)| f.resources.contains(&r)).map(|(_, x)| x).sum();
                prop_assert!(used <= c * (1.0 + 1e-9));
            }
            // every flow is either capped or crosses a saturated resource on which it
            // has the maximal rate (the bottleneck characterisation of max-min fairness)
            for (i, f) in flows.iter().enumerate() {
                prop_assert!(rates[i] <= f.cap * (1.0 + 1e-9));
                if rates[i] >= f.cap * (1.0 - 1e-6) { continue; }
                let has_bottleneck = f.resources.iter().any(|&r| {
                    let used: f64 = flows.iter().zip(&rates).filter(|(g, _)| g.resources.contains(&r)).map(|(_, x)| x).sum();
                    let saturated = used >= caps[r] * (1.0 - 1e-6);
                    let maximal = flows.iter().zip(&rates).filter(|(g, _)| g.resources.contains(&r)).all(|(_, x)| *x <= rates[i] * (1.0 + 1e-6) + 1e-9);
                    saturated && maximal
                });
                prop_assert!(has_bottleneck, "flow {} rate {} lacks a bottleneck", i, rates[i]);
            }
        }
    }
}
