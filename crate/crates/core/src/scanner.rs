//! Two-hop bandwidth scanner model.
//!
//! A measurement builds a circuit through the target and a faster exit,
//! adapts a download size until one download lands inside the
//! `[min_duration, max_duration]` band, then performs a fixed number of timed
//! downloads. The measured bandwidth is the mean of the per-download
//! throughputs.
//!
//! [`MeasurementRun`] is the shared state machine: [`execute_measurement`]
//! drives it against a bandwidth callback, the simulator drives it against
//! fluid max-min rates.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::types::{BaId, MeasurementRecord, RelayId, RelaySpec, Role};
use crate::units::{GIB, MIB};
use crate::{Error, Result};

/// Adaptation steps allowed before a measurement is declared failed.
pub const MAX_ADAPTATION_STEPS: u32 = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScannerConfig {
    pub ba_id: BaId,
    pub threads: u32,
    pub min_duration_per_download: f64,
    pub max_duration_per_download: f64,
    pub downloads_per_measurement: u32,
    pub range_increment: u64,
    pub max_file: u64,
    pub exit_speed_factor: f64,
    pub round_budget: f64,
}

impl Default for ScannerConfig {
    fn default() -> Self {
        ScannerConfig {
            ba_id: BaId::from("ba0"),
            threads: 4,
            min_duration_per_download: 5.0,
            max_duration_per_download: 10.0,
            downloads_per_measurement: 5,
            range_increment: 16 * MIB,
            max_file: GIB,
            exit_speed_factor: 2.0,
            round_budget: 3600.0,
        }
    }
}

impl ScannerConfig {
    pub fn with_ba(ba_id: impl Into<BaId>) -> Self {
        ScannerConfig {
            ba_id: ba_id.into(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(alloc::format!("scanner {}: {msg}", self.ba_id)));
        if !(1..=8).contains(&self.threads) {
            return bad("threads must be in [1, 8]");
        }
        if !(self.min_duration_per_download > 0.0
            && self.min_duration_per_download < self.max_duration_per_download)
        {
            return bad("min download duration must be positive and below max");
        }
        if self.downloads_per_measurement == 0 {
            return bad("downloads_per_measurement must be >= 1");
        }
        if self.range_increment == 0 || self.max_file < self.range_increment {
            return bad("range_increment must be positive and <= max_file");
        }
        if !(self.exit_speed_factor > 0.0) || !(self.round_budget > 0.0) {
            return bad("exit_speed_factor and round_budget must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementPlan {
    pub target: RelayId,
    pub exit: RelayId,
    pub order: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundPlan {
    pub plans: Vec<MeasurementPlan>,
    /// Targets dropped because no exit passed the speed rule.
    pub skipped: Vec<RelayId>,
    pub warnings: Vec<String>,
}

/// Plans one measurement round: every non-exit relay once, each paired with
/// an exit chosen uniformly among those at least `exit_speed_factor` times
/// faster, in a uniformly shuffled order.
pub fn plan_round(cfg: &ScannerConfig, relays: &[RelaySpec], seed: u64) -> RoundPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exits: Vec<&RelaySpec> = relays.iter().filter(|r| r.role == Role::Exit).collect();
    let mut round = RoundPlan::default();
    let mut candidates: Vec<&RelaySpec> = Vec::with_capacity(exits.len());
    for target in relays.iter().filter(|r| r.role != Role::Exit) {
        candidates.clear();
        candidates.extend(exits.iter().copied().filter(|e| {
            e.relay_id != target.relay_id
                && e.advertised_bw >= cfg.exit_speed_factor * target.advertised_bw
        }));
        if candidates.is_empty() {
            round.skipped.push(target.relay_id.clone());
            continue;
        }
        let exit = candidates[rng.gen_range(0..candidates.len())];
        round.plans.push(MeasurementPlan {
            target: target.relay_id.clone(),
            exit: exit.relay_id.clone(),
            order: 0,
        });
    }
    round.plans.shuffle(&mut rng);
    for (i, p) in round.plans.iter_mut().enumerate() {
        p.order = i;
    }
    if round.plans.is_empty() {
        round
            .warnings
            .push(alloc::format!("{}: no relay has a qualifying exit; round is empty", cfg.ba_id));
    } else if !round.skipped.is_empty() {
        round.warnings.push(alloc::format!(
            "{}: {} relay(s) skipped without a qualifying exit",
            cfg.ba_id,
            round.skipped.len()
        ));
    }
    round
}

/// Next download size after observing `observed_duration` for `initial` bytes.
///
/// Too fast doubles, too slow halves, in-band keeps the size. The result is
/// clamped to `[range_increment, max_file]` and rounded up to a multiple of
/// `range_increment`.
pub fn adapt_range(initial: u64, observed_duration: f64, cfg: &ScannerConfig) -> u64 {
    let next = if observed_duration < cfg.min_duration_per_download {
        initial.saturating_mul(2)
    } else if observed_duration > cfg.max_duration_per_download {
        initial / 2
    } else {
        initial
    };
    let inc = cfg.range_increment;
    let clamped = next.clamp(inc, cfg.max_file);
    let rounded = clamped.div_ceil(inc) * inc;
    if rounded > cfg.max_file {
        // max_file itself is not a multiple of the increment
        (cfg.max_file / inc) * inc
    } else {
        rounded
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Adapting,
    Timed,
    Done,
}

/// Outcome of feeding one download into a [`MeasurementRun`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    /// Another download of the given size is required.
    Download(u64),
    Finished,
}

/// Scanner state machine for one measurement.
#[derive(Debug, Clone)]
pub struct MeasurementRun {
    cfg: ScannerConfig,
    pub plan: MeasurementPlan,
    pub thread_id: u32,
    pub start_time: f64,
    size: u64,
    phase: Phase,
    adaptation_steps: u32,
    samples: Vec<(u64, f64)>,
    failed: bool,
}

impl MeasurementRun {
    pub fn new(cfg: &ScannerConfig, plan: MeasurementPlan, thread_id: u32, start_time: f64) -> Self {
        MeasurementRun {
            cfg: cfg.clone(),
            plan,
            thread_id,
            start_time,
            size: cfg.range_increment,
            phase: Phase::Adapting,
            adaptation_steps: 0,
            samples: Vec::new(),
            failed: false,
        }
    }

    /// Size of the download to perform next, or `None` once finished.
    pub fn pending_download(&self) -> Option<u64> {
        (self.phase != Phase::Done).then_some(self.size)
    }

    pub fn is_timed(&self) -> bool {
        self.phase == Phase::Timed
    }

    /// Records a completed download of the pending size that took `duration` seconds.
    pub fn complete_download(&mut self, duration: f64) -> Step {
        match self.phase {
            Phase::Done => return Step::Finished,
            Phase::Adapting => {
                let cfg = &self.cfg;
                let in_band = duration >= cfg.min_duration_per_download
                    && duration <= cfg.max_duration_per_download;
                if in_band {
                    self.phase = Phase::Timed;
                } else {
                    let next = adapt_range(self.size, duration, cfg);
                    if next == self.size {
                        // pinned at a clamp bound: accept the size as is
                        self.phase = Phase::Timed;
                    } else {
                        self.adaptation_steps += 1;
                        self.size = next;
                        if self.adaptation_steps > MAX_ADAPTATION_STEPS {
                            self.fail();
                        }
                    }
                }
            }
            Phase::Timed => {
                self.samples.push((self.size, duration));
                if self.samples.len() as u32 >= self.cfg.downloads_per_measurement {
                    self.phase = Phase::Done;
                }
            }
        }
        match self.pending_download() {
            Some(size) => Step::Download(size),
            None => Step::Finished,
        }
    }

    /// Aborts the measurement (path bandwidth vanished or adaptation diverged).
    pub fn fail(&mut self) {
        self.failed = true;
        self.phase = Phase::Done;
    }

    pub fn finish(&self, end_time: f64) -> MeasurementRecord {
        let throughputs = self.samples.iter().map(|(b, d)| *b as f64 / *d);
        let measured_bw = crate::util::mean(throughputs).unwrap_or(0.0);
        let ok = !self.failed && self.phase == Phase::Done && measured_bw > 0.0;
        MeasurementRecord {
            relay_id: self.plan.target.clone(),
            ba_id: self.cfg.ba_id.clone(),
            thread_id: self.thread_id,
            start_time: Some(self.start_time),
            end_time,
            measured_bw,
            bytes_total: self.samples.iter().map(|(b, _)| *b).sum(),
            downloads: self.samples.len() as u32,
            ok,
        }
    }
}

/// Runs one measurement against `bandwidth_fn(relay, time)`.
///
/// The path rate of each download is the minimum of the target's and the
/// exit's bandwidth at the download's start, held for the whole download.
pub fn execute_measurement<F>(
    plan: &MeasurementPlan,
    mut bandwidth_fn: F,
    start_time: f64,
    cfg: &ScannerConfig,
) -> MeasurementRecord
where
    F: FnMut(&RelayId, f64) -> f64,
{
    let mut run = MeasurementRun::new(cfg, plan.clone(), 0, start_time);
    let mut now = start_time;
    while let Some(size) = run.pending_download() {
        let rate = bandwidth_fn(&plan.target, now).min(bandwidth_fn(&plan.exit, now));
        if !(rate > 0.0) || !rate.is_finite() {
            run.fail();
            break;
        }
        let duration = size as f64 / rate;
        now += duration;
        run.complete_download(duration);
    }
    run.finish(now)
}
