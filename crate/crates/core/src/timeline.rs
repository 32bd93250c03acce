//! Measurement timelines reconstructed from end timestamps.
//!
//! Bandwidth files carry one timestamp per measurement: when it finished.
//! Thread inference assigns each entry to a scanner thread such that no
//! thread finishes two measurements less than `min_gap` apart, and gaps
//! between consecutive measurements on a thread become duration samples.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BaId, MeasurementRecord, RelayId};
use crate::util::{fnv1a, median, mix_seed, FNV_OFFSET};

/// Lower bound on one measurement: five downloads of at least five seconds.
pub const MIN_GAP: f64 = 25.0;
/// Consecutive ends on a thread closer than this count as back-to-back.
pub const SEQUENTIAL_GAP: f64 = 50.0;
pub const DEFAULT_ITERATIONS: usize = 120;
pub const DEFAULT_DURATION: f64 = 39.0;

/// One relay line of a bandwidth file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BwEntry {
    /// 40 uppercase hex characters, without the `$` wire prefix.
    pub node_id: RelayId,
    pub bw: u64,
    /// Unix seconds.
    pub end_time: i64,
    /// Keys other than `bw`, `node_id` and `time`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

/// One bandwidth authority's output for one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandwidthFile {
    pub header_timestamp: i64,
    pub ba_id: BaId,
    /// Header `key=value` lines in file order.
    #[serde(default)]
    pub header: Vec<(String, String)>,
    /// Sorted by `(end_time, node_id)`.
    pub entries: Vec<BwEntry>,
}

impl BandwidthFile {
    pub fn new(header_timestamp: i64, ba_id: BaId, mut entries: Vec<BwEntry>) -> Self {
        sort_entries(&mut entries);
        Self { header_timestamp, ba_id, header: Vec::new(), entries }
    }

    /// Restores the entry ordering invariant.
    pub fn normalize(&mut self) {
        sort_entries(&mut self.entries);
    }

    pub fn end_times(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.end_time as f64).collect()
    }

    /// Content hash independent of entry order among equal end times.
    fn content_hash(&self) -> u64 {
        let mut entries: Vec<&BwEntry> = self.entries.iter().collect();
        entries.sort_by(|a, b| (a.end_time, &a.node_id, a.bw).cmp(&(b.end_time, &b.node_id, b.bw)));
        let mut h = fnv1a(self.ba_id.as_str().as_bytes(), FNV_OFFSET);
        h = fnv1a(&self.header_timestamp.to_le_bytes(), h);
        for e in entries {
            h = fnv1a(e.node_id.as_str().as_bytes(), h);
            h = fnv1a(&e.end_time.to_le_bytes(), h);
            h = fnv1a(&e.bw.to_le_bytes(), h);
        }
        h
    }
}

fn sort_entries(entries: &mut [BwEntry]) {
    entries.sort_by(|a, b| (a.end_time, &a.node_id).cmp(&(b.end_time, &b.node_id)));
}

/// One file per authority holding every successful measurement, with
/// bandwidth in KB/s and end times truncated to whole seconds.
pub fn files_from_records(records: &[MeasurementRecord]) -> Vec<BandwidthFile> {
    let mut by_ba: BTreeMap<&BaId, Vec<BwEntry>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.ok) {
        by_ba.entry(&r.ba_id).or_default().push(BwEntry {
            node_id: r.relay_id.clone(),
            bw: libm::round(r.measured_bw / crate::units::KB) as u64,
            end_time: libm::floor(r.end_time) as i64,
            extra: BTreeMap::new(),
        });
    }
    by_ba
        .into_iter()
        .map(|(ba, entries)| {
            let ts = entries.iter().map(|e| e.end_time).max().unwrap_or(0);
            BandwidthFile::new(ts, ba.clone(), entries)
        })
        .collect()
}

/// How a feasible thread is picked when several qualify.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThreadChoice {
    /// Uniform among feasible threads.
    #[default]
    Random,
    /// Lowest-numbered feasible thread.
    FirstFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreadAssignment {
    /// `assignment[i]` is the thread of the i-th end time.
    pub assignment: Vec<u32>,
    pub num_threads: u32,
    /// Gaps below [`SEQUENTIAL_GAP`] between consecutive ends on one thread.
    pub durations: Vec<f64>,
}

/// Assigns end times to threads in end-time order; ties keep input order.
pub fn infer_threads(ends: &[f64], choice: ThreadChoice, seed: u64, min_gap: f64) -> ThreadAssignment {
    let mut order: Vec<usize> = (0..ends.len()).collect();
    order.sort_by(|&a, &b| ends[a].total_cmp(&ends[b]).then(a.cmp(&b)));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last: Vec<f64> = Vec::new();
    let mut assignment = alloc::vec![0u32; ends.len()];
    let mut durations = Vec::new();
    let mut feasible: Vec<usize> = Vec::new();

    for idx in order {
        let end = ends[idx];
        feasible.clear();
        feasible.extend((0..last.len()).filter(|&t| end - last[t] >= min_gap));
        let thread = match choice {
            _ if feasible.is_empty() => {
                last.push(end);
                last.len() - 1
            }
            ThreadChoice::FirstFit => feasible[0],
            ThreadChoice::Random => *feasible.choose(&mut rng).expect("nonempty"),
        };
        let gap = end - last[thread];
        if gap > 0.0 && gap < SEQUENTIAL_GAP {
            durations.push(gap);
        }
        last[thread] = end;
        assignment[idx] = thread as u32;
    }
    ThreadAssignment { assignment, num_threads: last.len() as u32, durations }
}

/// Thread inference applied to one bandwidth file.
pub fn infer_file_threads(file: &BandwidthFile, choice: ThreadChoice, seed: u64, min_gap: f64) -> ThreadAssignment {
    infer_threads(&file.end_times(), choice, seed, min_gap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationEstimate {
    pub median: f64,
    /// Number of (iteration, file) inferences that produced each thread count.
    pub thread_counts: BTreeMap<u32, u32>,
    pub samples: usize,
    pub iterations: usize,
}

/// Repeats random thread inference and pools every duration sample.
///
/// Each file's sub-seed depends on the seed, the iteration and the file's
/// content, so the result does not depend on the order files are given in.
pub fn estimate_duration(files: &[BandwidthFile], iterations: usize, seed: u64) -> Result<DurationEstimate> {
    if files.is_empty() {
        return Err(Error::Config("at least one bandwidth file is required".into()));
    }
    if iterations == 0 {
        return Err(Error::Config("iterations must be at least 1".into()));
    }
    let prepared: Vec<(u64, Vec<f64>)> = files
        .iter()
        .map(|f| {
            let mut ends = f.end_times();
            ends.sort_by(f64::total_cmp);
            (f.content_hash(), ends)
        })
        .collect();

    let mut pooled = Vec::new();
    let mut thread_counts = BTreeMap::new();
    for it in 0..iterations {
        let iter_seed = mix_seed(seed, it as u64);
        for (hash, ends) in &prepared {
            let a = infer_threads(ends, ThreadChoice::Random, mix_seed(iter_seed, *hash), MIN_GAP);
            *thread_counts.entry(a.num_threads).or_insert(0) += 1;
            pooled.extend(a.durations);
        }
    }
    let median = median(&pooled).ok_or(Error::InsufficientSequential)?;
    Ok(DurationEstimate { median, thread_counts, samples: pooled.len(), iterations })
}

/// One measurement placed on the time axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub relay_id: RelayId,
    pub ba_id: BaId,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEstimate {
    pub intervals: Vec<Interval>,
    pub assumed_duration: f64,
}

/// Every entry becomes `[end - duration, end]`.
pub fn build_timeline(files: &[BandwidthFile], duration: f64) -> Result<TimelineEstimate> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::OutOfRange { name: "duration", value: duration, min: 0.0, max: f64::INFINITY });
    }
    let intervals = files
        .iter()
        .flat_map(|f| {
            f.entries.iter().map(move |e| {
                let end = e.end_time as f64;
                Interval { relay_id: e.node_id.clone(), ba_id: f.ba_id.clone(), start: end - duration, end }
            })
        })
        .collect();
    Ok(TimelineEstimate { intervals, assumed_duration: duration })
}
