//! Consensus-weight aggregation over bandwidth-authority votes.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::types::{BaId, ConsensusSnapshot, RelayId};
use crate::util::median;
use crate::{Error, Result};

/// One authority's vote: measured bandwidth per relay, bytes/second.
pub type Vote = (BaId, BTreeMap<RelayId, f64>);

/// Combines votes into a consensus snapshot.
///
/// Each relay's weight is the median of the values reported for it by the
/// authorities that measured it. Relays absent from every vote keep their
/// weight from `prior` (so a relay that drops out of one round does not lose
/// its weight immediately).
pub fn aggregate_consensus(
    votes: &[Vote],
    prior: Option<&ConsensusSnapshot>,
) -> Result<ConsensusSnapshot> {
    if votes.is_empty() {
        return Err(Error::NoVotes);
    }
    let mut per_relay: BTreeMap<&RelayId, Vec<f64>> = BTreeMap::new();
    for (ba, vote) in votes {
        if vote.is_empty() {
            return Err(Error::EmptyVote(ba.0.clone()));
        }
        for (relay, bw) in vote {
            per_relay.entry(relay).or_default().push(*bw);
        }
    }

    let mut weights: BTreeMap<RelayId, f64> = per_relay
        .into_iter()
        .map(|(relay, values)| (relay.clone(), median(&values).unwrap_or(0.0).max(0.0)))
        .collect();
    if let Some(prior) = prior {
        for (relay, w) in &prior.weights {
            weights.entry(relay.clone()).or_insert(*w);
        }
    }
    let epoch = prior.map_or(0, |p| p.epoch + 1);
    Ok(ConsensusSnapshot::from_weights(epoch, weights))
}

/// Fraction of total consensus weight held by `relays`.
pub fn selection_probability(snapshot: &ConsensusSnapshot, relays: &BTreeSet<RelayId>) -> Result<f64> {
    if !(snapshot.total_weight > 0.0) {
        return Err(Error::DegenerateConsensus);
    }
    let held: f64 = relays.iter().map(|r| snapshot.weight(r.as_str())).sum();
    Ok((held / snapshot.total_weight).clamp(0.0, 1.0))
}
