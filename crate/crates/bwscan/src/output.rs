//! Result files and the per-directory run manifest.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use bwscan_core::netsim::{inflation_factor, SimConfig, SimResult};
use bwscan_core::{ConsensusSnapshot, MeasurementRecord, RelayId};
use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";

/// Writes through a temporary file in the same directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

/// One record per line.
pub fn records_jsonl(records: &[MeasurementRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Reads records back; errors carry the 1-based line number.
pub fn parse_records_jsonl(text: &str) -> Result<Vec<MeasurementRecord>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

/// `csv::Writer` into memory; rows are plain structs.
pub fn csv_string<T: Serialize>(rows: impl IntoIterator<Item = T>, header: &[&str]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.serialize(row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is UTF-8")
}

/// Every relay's weight and selection probability per consensus epoch.
pub fn consensus_csv(snapshots: &[ConsensusSnapshot]) -> String {
    let rows = snapshots.iter().flat_map(|s| {
        s.weights.iter().map(move |(relay, &w)| {
            let p = if s.total_weight > 0.0 { w / s.total_weight } else { 0.0 };
            (s.epoch, relay.as_str(), w, p)
        })
    });
    csv_string(rows, &["epoch", "relay_id", "weight", "probability"])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupInflation {
    pub cluster_id: String,
    pub relays: Vec<RelayId>,
    pub inflation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Mean measured bandwidth of one honest relay, bytes/s.
    pub baseline: f64,
    pub inflation: f64,
    /// `attackers`: all adversarial relays' combined final weight over the
    /// baseline. `single_honest_relay`: no adversaries, so the mean over
    /// honest relays of each relay's final weight over the baseline.
    pub basis: String,
    pub groups: Vec<GroupInflation>,
    pub records: usize,
    pub failed_records: usize,
    pub epochs: usize,
}

pub fn summarize(cfg: &SimConfig, result: &SimResult) -> CliResult<Summary> {
    let attackers: BTreeSet<RelayId> =
        cfg.topology.relays.iter().filter(|r| r.policy.is_adversarial()).map(|r| r.relay_id.clone()).collect();
    let factor = |set: &BTreeSet<RelayId>| inflation_factor(result, set).map_err(CliError::Simulation);
    let (inflation, basis) = if attackers.is_empty() {
        (honest_inflation(cfg, result)?, "single_honest_relay")
    } else {
        (factor(&attackers)?, "attackers")
    };
    let groups = cfg
        .topology
        .clusters
        .clusters
        .iter()
        .map(|c| {
            let set: BTreeSet<RelayId> = c.members.iter().cloned().collect();
            Ok(GroupInflation { cluster_id: c.cluster_id.clone(), relays: c.members.clone(), inflation: factor(&set)? })
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(Summary {
        baseline: result.baseline_bw,
        inflation,
        basis: basis.to_string(),
        groups,
        records: result.records.len(),
        failed_records: result.records.iter().filter(|r| !r.ok).count(),
        epochs: result.consensus.len(),
    })
}

fn honest_inflation(cfg: &SimConfig, result: &SimResult) -> CliResult<f64> {
    let baseline_relays: Vec<&RelayId> = cfg
        .topology
        .relays
        .iter()
        .filter(|r| {
            r.role != bwscan_core::Role::Exit
                && cfg.topology.host(r.host_id.as_str()).is_some_and(|h| h.kind == bwscan_core::HostKind::RelayHost)
        })
        .map(|r| &r.relay_id)
        .collect();
    let factors = baseline_relays
        .iter()
        .map(|r| inflation_factor(result, &BTreeSet::from([(*r).clone()])))
        .collect::<Result<Vec<f64>, _>>()
        .map_err(CliError::Simulation)?;
    if factors.is_empty() {
        return Err(CliError::Simulation(bwscan_core::Error::NoBaseline));
    }
    Ok(factors.iter().sum::<f64>() / factors.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command_line: Vec<String>,
    /// SHA-256 of the config or input bytes the run consumed.
    pub config_digest: Option<String>,
    pub seed: Option<u64>,
    pub version: String,
    pub started_at: String,
    pub finished_at: String,
    /// Output files, relative to the manifest's directory.
    pub outputs: Vec<PathBuf>,
}

pub fn rfc3339(t: SystemTime) -> String {
    DateTime::<Utc>::from(t).to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Collects outputs for one directory and writes the manifest last.
pub struct OutputDir {
    dir: PathBuf,
    command_line: Vec<String>,
    started: SystemTime,
    written: BTreeSet<PathBuf>,
}

impl OutputDir {
    pub fn create(dir: &Path, command_line: Vec<String>) -> CliResult<Self> {
        ensure_dir(dir)?;
        Ok(OutputDir { dir: dir.to_path_buf(), command_line, started: SystemTime::now(), written: BTreeSet::new() })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        write_atomic(&self.dir.join(name), contents.as_bytes())?;
        self.written.insert(PathBuf::from(name));
        Ok(())
    }

    pub fn finish(self, config_digest: Option<String>, seed: Option<u64>) -> CliResult<Manifest> {
        let manifest = Manifest {
            command_line: self.command_line,
            config_digest,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: rfc3339(self.started),
            finished_at: rfc3339(SystemTime::now()),
            outputs: self.written.into_iter().collect(),
        };
        write_atomic(&self.dir.join(MANIFEST), json_pretty(&manifest).as_bytes())?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use bwscan_core::BaId;
    use std::collections::BTreeMap;

    fn record(relay: &str, end: f64) -> MeasurementRecord {
        MeasurementRecord {
            relay_id: RelayId::new(relay),
            ba_id: BaId::new("ba0"),
            thread_id: 1,
            start_time: Some(end - 30.0),
            end_time: end,
            measured_bw: 25e6,
            bytes_total: 1 << 20,
            downloads: 5,
            ok: true,
        }
    }

    #[test]
    fn jsonl_keys_and_round_trip() {
        let recs = vec![record("A", 100.0), record("B", 130.5)];
        let text = records_jsonl(&recs);
        assert_eq!(text.lines().count(), 2);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        let keys: BTreeSet<&str> = first.as_object().unwrap().keys().map(String::as_str).collect();
        let expected = ["relay_id", "ba_id", "thread_id", "start", "end", "bw", "bytes", "downloads", "ok"];
        assert_eq!(keys, expected.into_iter().collect());
        assert_eq!(parse_records_jsonl(&text).unwrap(), recs);
        assert!(parse_records_jsonl("{}\n").unwrap_err().starts_with("line 1"));
    }

    #[test]
    fn consensus_rows() {
        let snap = ConsensusSnapshot::from_weights(3, BTreeMap::from([(RelayId::new("A"), 1.0), (RelayId::new("B"), 3.0)]));
        let csv = consensus_csv(&[snap]);
        assert_eq!(csv, "epoch,relay_id,weight,probability\n3,A,1.0,0.25\n3,B,3.0,0.75\n");
    }

    #[test]
    fn manifest_lists_outputs_and_is_written_last() {
        let tmp = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(tmp.path(), vec!["bwscan".into()]).unwrap();
        out.write("b.txt", "b").unwrap();
        out.write("a.txt", "a").unwrap();
        let m = out.finish(Some("00".into()), Some(7)).unwrap();
        assert_eq!(m.outputs, vec![PathBuf::from("a.txt"), PathBuf::from("b.txt")]);
        let on_disk: Manifest = serde_json::from_str(&fs::read_to_string(tmp.path().join(MANIFEST)).unwrap()).unwrap();
        assert_eq!(on_disk, m);
        let names: BTreeSet<String> =
            fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
        assert_eq!(names, BTreeSet::from(["a.txt".into(), "b.txt".into(), MANIFEST.into()]));
    }
}
