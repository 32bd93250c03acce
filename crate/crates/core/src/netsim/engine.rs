//! Single-threaded fluid event loop.
//!
//! Downloads are fluid flows: at every event the max-min allocation is
//! recomputed, and the next event is the earliest of a download completing,
//! a thread waking, a relay joining, a detector firing, a probe starting or a
//! consensus epoch.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FlowState, MeasurementFlow, Network, SimConfig, PROBE_BA};
use crate::consensus::{aggregate_consensus, Vote};
use crate::scanner::{plan_round, MeasurementPlan, MeasurementRun, ScannerConfig, Step};
use crate::types::{
    BaId, ConsensusSnapshot, HostKind, MeasurementRecord, Policy, RelayId, RelaySpec, Role,
};
use crate::util::{mean, mix_seed};
use crate::{Error, Result};

const DETECT_STREAM: u64 = 0xD37E_C700;
const MISFLAG_STREAM: u64 = 0xFA15_E000;
const PROBE_STREAM: u64 = 0x9A0B_E000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub records: Vec<MeasurementRecord>,
    pub consensus: Vec<ConsensusSnapshot>,
    /// Mean measured bandwidth of honest non-exit relays on relay hosts.
    pub baseline_bw: f64,
}

impl SimResult {
    pub fn final_consensus(&self) -> Option<&ConsensusSnapshot> {
        self.consensus.last()
    }
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Busy,
    Idle { wake: f64 },
}

struct Authority {
    cfg: ScannerConfig,
    index: u64,
    queue: VecDeque<MeasurementPlan>,
    round: u64,
    round_start: Option<f64>,
    slots: Vec<Slot>,
}

struct Active {
    run: MeasurementRun,
    /// `None` for probe measurements.
    authority: Option<usize>,
    bytes: u64,
    remaining: f64,
    download_start: f64,
    detect_at: Option<f64>,
    detected: bool,
}

struct Engine<'a> {
    cfg: &'a SimConfig,
    net: Network,
    authorities: Vec<Authority>,
    active: Vec<Active>,
    records: Vec<MeasurementRecord>,
    consensus: Vec<ConsensusSnapshot>,
    votes: Vec<BTreeMap<RelayId, (f64, u32)>>,
    detect_rng: ChaCha8Rng,
    misflag_rng: ChaCha8Rng,
    probe_cfg: ScannerConfig,
    probes: Vec<(f64, usize)>,
    next_probe: usize,
    join_times: Vec<f64>,
    misflagged: BTreeSet<RelayId>,
}

/// Runs the scanner/relay simulation described by `cfg`.
pub fn run_simulation(cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let mut engine = Engine::new(cfg)?;
    engine.run()?;
    let baseline = baseline_bw(&cfg.topology, &engine.records);
    Ok(SimResult {
        records: engine.records,
        consensus: engine.consensus,
        baseline_bw: baseline,
    })
}

/// Mean over honest non-exit relays on relay hosts of their mean measured bandwidth.
/// Probe measurements are excluded.
pub fn baseline_bw(topology: &crate::types::Topology, records: &[MeasurementRecord]) -> f64 {
    let honest: BTreeSet<&RelayId> = topology
        .relays
        .iter()
        .filter(|r| {
            r.policy == Policy::Honest
                && r.role != Role::Exit
                && topology
                    .host(r.host_id.as_str())
                    .is_some_and(|h| h.kind == HostKind::RelayHost)
        })
        .map(|r| &r.relay_id)
        .collect();
    let mut per_relay: BTreeMap<&RelayId, Vec<f64>> = BTreeMap::new();
    for rec in records {
        if rec.ok && rec.ba_id.as_str() != PROBE_BA && honest.contains(&rec.relay_id) {
            per_relay.entry(&rec.relay_id).or_default().push(rec.measured_bw);
        }
    }
    mean(per_relay.values().filter_map(|v| mean(v.iter().copied()))).unwrap_or(0.0)
}

/// Attackers' combined final consensus weight in units of the honest baseline.
pub fn inflation_factor(result: &SimResult, attackers: &BTreeSet<RelayId>) -> Result<f64> {
    if attackers.is_empty() {
        return Ok(0.0);
    }
    if !(result.baseline_bw > 0.0) {
        return Err(Error::NoBaseline);
    }
    let total: f64 = result
        .final_consensus()
        .map(|s| attackers.iter().map(|r| s.weight(r.as_str())).sum())
        .unwrap_or(0.0);
    Ok(total / result.baseline_bw)
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a SimConfig) -> Result<Self> {
        let net = Network::new(cfg.topology.clone())?;
        let authorities = cfg
            .scanners
            .iter()
            .enumerate()
            .map(|(i, s)| Authority {
                cfg: s.clone(),
                index: i as u64,
                queue: VecDeque::new(),
                round: 0,
                round_start: None,
                slots: alloc::vec![Slot::Idle { wake: 0.0 }; s.threads as usize],
            })
            .collect();
        let mut probes: Vec<(f64, usize)> = cfg.probes.iter().enumerate().map(|(i, p)| (p.time, i)).collect();
        probes.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let probe_cfg = ScannerConfig {
            ba_id: BaId::from(PROBE_BA),
            threads: 2,
            ..cfg.scanners[0].clone()
        };
        let join_times = cfg.topology.relays.iter().map(|r| cfg.join_time(&r.relay_id)).collect();
        Ok(Engine {
            cfg,
            net,
            votes: alloc::vec![BTreeMap::new(); cfg.scanners.len()],
            authorities,
            active: Vec::new(),
            records: Vec::new(),
            consensus: Vec::new(),
            detect_rng: ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, DETECT_STREAM)),
            misflag_rng: ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, MISFLAG_STREAM)),
            probe_cfg,
            probes,
            next_probe: 0,
            join_times,
            misflagged: BTreeSet::new(),
        })
    }

    fn active_relays(&self, t: f64) -> Vec<RelaySpec> {
        self.cfg
            .topology
            .relays
            .iter()
            .zip(&self.join_times)
            .filter(|(_, j)| **j <= t)
            .map(|(r, _)| r.clone())
            .collect()
    }

    fn run(&mut self) -> Result<()> {
        let end = self.cfg.duration;
        let interval = self.cfg.consensus_interval;
        let mut t = 0.0;
        let mut epoch_k: u64 = 1;
        loop {
            self.start_due_measurements(t);
            self.start_due_probes(t);
            self.update_detection(t);
            self.redraw_misflags(t);

            let state = self.flow_state(t);
            let alloc = self.net.allocate(&state)?;
            let rates = &alloc.measurement;

            let mut next = end.min(epoch_k as f64 * interval);
            let mut finish = alloc::vec![f64::INFINITY; self.active.len()];
            for (i, a) in self.active.iter().enumerate() {
                if rates[i] > 0.0 {
                    finish[i] = t + a.remaining / rates[i];
                    next = next.min(finish[i]);
                }
                if let Some(d) = a.detect_at {
                    if d > t {
                        next = next.min(d);
                    }
                }
            }
            for auth in &self.authorities {
                for slot in &auth.slots {
                    if let Slot::Idle { wake } = slot {
                        if *wake > t {
                            next = next.min(*wake);
                        }
                    }
                }
            }
            for j in &self.join_times {
                if *j > t {
                    next = next.min(*j);
                }
            }
            if let Some((pt, _)) = self.probes.get(self.next_probe) {
                next = next.min(pt.max(t));
            }

            let dt = next - t;
            for (a, r) in self.active.iter_mut().zip(rates) {
                a.remaining -= r * dt;
            }
            t = next;

            let tol = 1e-9 * t.abs().max(1.0);
            let done: Vec<usize> = (0..self.active.len())
                .filter(|&i| finish[i] <= t + tol)
                .collect();
            for &i in done.iter().rev() {
                self.complete_download(i, t);
            }

            while epoch_k as f64 * interval <= t + tol {
                self.emit_consensus(epoch_k)?;
                epoch_k += 1;
            }
            if t >= end - tol {
                break;
            }
        }
        self.records.sort_by(|a, b| {
            a.end_time
                .total_cmp(&b.end_time)
                .then_with(|| a.ba_id.cmp(&b.ba_id))
                .then_with(|| a.thread_id.cmp(&b.thread_id))
        });
        Ok(())
    }

    fn flow_state(&self, t: f64) -> FlowState {
        let measurements = self
            .active
            .iter()
            .map(|a| MeasurementFlow {
                target: a.run.plan.target.clone(),
                exit: Some(a.run.plan.exit.clone()),
                ba_id: match a.authority {
                    Some(i) => self.authorities[i].cfg.ba_id.clone(),
                    None => BaId::from(PROBE_BA),
                },
                detected: a.detected,
            })
            .collect();
        let user_load = self
            .cfg
            .topology
            .relays
            .iter()
            .zip(&self.join_times)
            .filter(|(_, j)| **j <= t)
            .filter_map(|(r, _)| {
                self.cfg
                    .user_load
                    .get(&r.relay_id)
                    .map(|l| (r.relay_id.clone(), *l))
            })
            .collect();
        FlowState {
            measurements,
            user_load,
            misflagged: self.misflagged.clone(),
        }
    }

    fn next_plan(&mut self, ai: usize, t: f64) -> Option<MeasurementPlan> {
        if let Some(p) = self.authorities[ai].queue.pop_front() {
            return Some(p);
        }
        let auth = &self.authorities[ai];
        let due = auth
            .round_start
            .is_none_or(|s| t >= s + auth.cfg.round_budget);
        if !due {
            return None;
        }
        let relays = self.active_relays(t);
        let auth = &mut self.authorities[ai];
        let seed = mix_seed(self.cfg.seed, (auth.index << 32) | auth.round);
        let round = plan_round(&auth.cfg, &relays, seed);
        auth.round += 1;
        auth.round_start = Some(t);
        auth.queue.extend(round.plans);
        auth.queue.pop_front()
    }

    fn start_due_measurements(&mut self, t: f64) {
        for ai in 0..self.authorities.len() {
            for ti in 0..self.authorities[ai].slots.len() {
                let Slot::Idle { wake } = self.authorities[ai].slots[ti] else {
                    continue;
                };
                if wake > t {
                    continue;
                }
                match self.next_plan(ai, t) {
                    Some(plan) => {
                        let cfg = self.authorities[ai].cfg.clone();
                        self.begin(plan, &cfg, Some(ai), ti as u32, t);
                        self.authorities[ai].slots[ti] = Slot::Busy;
                    }
                    None => {
                        let auth = &self.authorities[ai];
                        let wake = auth.round_start.map_or(t, |s| s + auth.cfg.round_budget).max(t);
                        // an empty round retries after one budget
                        let wake = if wake <= t { t + auth.cfg.round_budget } else { wake };
                        self.authorities[ai].slots[ti] = Slot::Idle { wake };
                    }
                }
            }
        }
    }

    fn start_due_probes(&mut self, t: f64) {
        while let Some(&(pt, pi)) = self.probes.get(self.next_probe) {
            if pt > t {
                break;
            }
            self.next_probe += 1;
            let (a, b) = self.cfg.probes[pi].pair.clone();
            let relays = self.active_relays(t);
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.cfg.seed, PROBE_STREAM + pi as u64));
            let probe_cfg = self.probe_cfg.clone();
            for (thread, target) in [a, b].into_iter().enumerate() {
                let Some(spec) = relays.iter().find(|r| r.relay_id == target) else {
                    continue;
                };
                let exits: Vec<&RelaySpec> = relays
                    .iter()
                    .filter(|e| {
                        e.role == Role::Exit
                            && e.relay_id != target
                            && e.advertised_bw >= probe_cfg.exit_speed_factor * spec.advertised_bw
                    })
                    .collect();
                if exits.is_empty() {
                    continue;
                }
                let exit = exits[rng.gen_range(0..exits.len())].relay_id.clone();
                let plan = MeasurementPlan { target, exit, order: pi };
                self.begin(plan, &probe_cfg, None, thread as u32, t);
            }
        }
    }

    fn begin(&mut self, plan: MeasurementPlan, cfg: &ScannerConfig, authority: Option<usize>, thread: u32, t: f64) {
        let adversarial = self
            .cfg
            .topology
            .relay(plan.target.as_str())
            .is_some_and(|r| r.policy.is_adversarial());
        let detector = &self.cfg.detector;
        // draw for every measurement so the stream does not depend on policies
        let missed = self.detect_rng.gen::<f64>() < detector.false_negative_rate;
        let will_detect = adversarial && !missed;
        let delay = detector.detection_delay();
        let (detected, detect_at) = match (will_detect, delay > 0.0) {
            (false, _) => (false, None),
            (true, false) => (true, None),
            (true, true) => (false, Some(t + delay)),
        };
        let run = MeasurementRun::new(cfg, plan, thread, t);
        let bytes = run.pending_download().expect("fresh run has a download");
        self.active.push(Active {
            run,
            authority,
            bytes,
            remaining: bytes as f64,
            download_start: t,
            detect_at,
            detected,
        });
    }

    fn update_detection(&mut self, t: f64) {
        for a in &mut self.active {
            if let Some(d) = a.detect_at {
                if d <= t {
                    a.detected = true;
                    a.detect_at = None;
                }
            }
        }
    }

    fn redraw_misflags(&mut self, t: f64) {
        let fp = self.cfg.detector.false_positive_rate;
        if fp <= 0.0 {
            return;
        }
        let measured: BTreeSet<&RelayId> = self.active.iter().map(|a| &a.run.plan.target).collect();
        let mut flagged = BTreeSet::new();
        for (r, j) in self.cfg.topology.relays.iter().zip(&self.join_times) {
            if *j > t || !r.policy.is_adversarial() || measured.contains(&r.relay_id) {
                continue;
            }
            if self.cfg.user_load.get(&r.relay_id).copied().unwrap_or(0.0) <= 0.0 {
                continue;
            }
            if self.misflag_rng.gen::<f64>() < fp {
                flagged.insert(r.relay_id.clone());
            }
        }
        self.misflagged = flagged;
    }

    fn complete_download(&mut self, i: usize, t: f64) {
        let a = &mut self.active[i];
        let duration = t - a.download_start;
        match a.run.complete_download(duration) {
            Step::Download(size) => {
                a.bytes = size;
                a.remaining = size as f64;
                a.download_start = t;
            }
            Step::Finished => {
                let a = self.active.swap_remove(i);
                let record = a.run.finish(t);
                if let Some(ai) = a.authority {
                    if record.ok {
                        let e = self.votes[ai].entry(record.relay_id.clone()).or_insert((0.0, 0));
                        e.0 += record.measured_bw;
                        e.1 += 1;
                    }
                    self.authorities[ai].slots[a.run.thread_id as usize] = Slot::Idle { wake: t };
                }
                self.records.push(record);
            }
        }
    }

    fn emit_consensus(&mut self, epoch: u64) -> Result<()> {
        let votes: Vec<Vote> = self
            .authorities
            .iter()
            .zip(&self.votes)
            .filter(|(_, v)| !v.is_empty())
            .map(|(auth, v)| {
                (
                    auth.cfg.ba_id.clone(),
                    v.iter().map(|(r, (s, n))| (r.clone(), s / f64::from(*n))).collect(),
                )
            })
            .collect();
        if votes.is_empty() {
            return Ok(());
        }
        let mut snap = aggregate_consensus(&votes, self.consensus.last())?;
        snap.epoch = epoch;
        self.consensus.push(snap);
        Ok(())
    }
}
