//! Bandwidth-file text format.
//!
//! ```text
//! 1700000000
//! software=bwscan
//! =====
//! bw=24000 node_id=$0123...CDEF time=2023-11-14T22:13:20
//! ```
//!
//! The first line is a unix timestamp. Header `key=value` lines follow until
//! a line of five `=`. Each remaining line is one relay: space-separated
//! `key=value` pairs with at least `bw`, `node_id` and `time`, in any order.
//! `time` is either `YYYY-MM-DDTHH:MM:SS` (UTC) or unix seconds. Files
//! without the terminator are accepted when the entries start right after
//! the timestamp.
//!
//! The serializer writes `bw`, `node_id`, `time` first and any other keys
//! after them in sorted order, so its output is the normal form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use bwscan_core::timeline::{BandwidthFile, BwEntry};
use bwscan_core::{BaId, RelayId};
use chrono::{DateTime, NaiveDateTime};
use serde::Serialize;
use walkdir::WalkDir;

pub const TERMINATOR: &str = "=====";
const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum BwFileError {
    #[error("missing or malformed timestamp on the first line")]
    MissingTimestamp,
    #[error("empty bandwidth file")]
    Empty,
}

/// A skipped line, numbered from 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parsed {
    pub file: BandwidthFile,
    pub diagnostics: Vec<Diagnostic>,
}

pub fn format_time(unix: i64) -> String {
    match DateTime::from_timestamp(unix, 0) {
        Some(t) => t.format(TIME_FORMAT).to_string(),
        None => unix.to_string(),
    }
}

pub fn parse_time(s: &str) -> Option<i64> {
    if let Ok(t) = s.parse::<i64>() {
        return Some(t);
    }
    NaiveDateTime::parse_from_str(s, TIME_FORMAT).ok().map(|t| t.and_utc().timestamp())
}

/// Uppercase 40-hex fingerprint, with or without the `$` prefix.
pub fn parse_node_id(s: &str) -> Option<RelayId> {
    let hex = s.strip_prefix('$').unwrap_or(s);
    (hex.len() == 40 && hex.bytes().all(|b| b.is_ascii_hexdigit())).then(|| RelayId::new(hex.to_ascii_uppercase()))
}

fn parse_entry(line: &str) -> Result<BwEntry, String> {
    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    for token in line.split_whitespace() {
        let (k, v) = token.split_once('=').ok_or_else(|| format!("token without '=': {token}"))?;
        if k.is_empty() {
            return Err(format!("empty key in {token}"));
        }
        if fields.insert(k.to_string(), v.to_string()).is_some() {
            return Err(format!("duplicate key {k}"));
        }
    }
    let node = fields.remove("node_id").ok_or("missing node_id")?;
    let node_id = parse_node_id(&node).ok_or_else(|| format!("bad node_id {node}"))?;
    let bw = fields.remove("bw").ok_or("missing bw")?;
    let bw = bw.parse::<u64>().map_err(|_| format!("bad bw {bw}"))?;
    let time = fields.remove("time").ok_or("missing time")?;
    let end_time = parse_time(&time).ok_or_else(|| format!("bad time {time}"))?;
    Ok(BwEntry { node_id, bw, end_time, extra: fields })
}

/// Parses one file. `ba_id` names the authority the file came from.
pub fn parse_bandwidth_file(text: &str, ba_id: BaId) -> Result<Parsed, BwFileError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let header_timestamp = lines
        .next()
        .and_then(|(_, l)| l.trim().parse::<i64>().ok())
        .ok_or(BwFileError::MissingTimestamp)?;

    let mut header = Vec::new();
    let mut entries = Vec::new();
    let mut diagnostics = Vec::new();
    let mut in_header = text.lines().any(|l| l.trim() == TERMINATOR);
    for (n, line) in lines {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if in_header {
            if trimmed == TERMINATOR {
                in_header = false;
            } else if let Some((k, v)) = trimmed.split_once('=') {
                header.push((k.to_string(), v.to_string()));
            } else {
                diagnostics.push(Diagnostic { line: n, reason: "header line without '='".into() });
            }
            continue;
        }
        match parse_entry(trimmed) {
            Ok(e) => entries.push(e),
            Err(reason) => diagnostics.push(Diagnostic { line: n, reason }),
        }
    }
    if entries.is_empty() {
        return Err(BwFileError::Empty);
    }
    let mut file = BandwidthFile::new(header_timestamp, ba_id, entries);
    file.header = header;
    Ok(Parsed { file, diagnostics })
}

pub fn serialize_bandwidth_file(file: &BandwidthFile) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", file.header_timestamp);
    for (k, v) in &file.header {
        let _ = writeln!(out, "{k}={v}");
    }
    out.push_str(TERMINATOR);
    out.push('\n');
    let mut entries: Vec<&BwEntry> = file.entries.iter().collect();
    entries.sort_by(|a, b| (a.end_time, &a.node_id).cmp(&(b.end_time, &b.node_id)));
    for e in entries {
        let _ = write!(out, "bw={} node_id=${} time={}", e.bw, e.node_id, format_time(e.end_time));
        for (k, v) in &e.extra {
            let _ = write!(out, " {k}={v}");
        }
        out.push('\n');
    }
    out
}

/// Authority name for a file: its parent directory when the file sits in a
/// subdirectory of the input root, otherwise the file stem.
pub fn ba_id_for(root: &Path, path: &Path) -> BaId {
    let parent = path.parent().filter(|p| *p != root);
    let name = match parent.and_then(Path::file_name) {
        Some(dir) => dir.to_string_lossy().into_owned(),
        None => path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
    };
    BaId::new(name)
}

#[derive(Debug)]
pub struct LoadedFile {
    pub path: PathBuf,
    pub parsed: Parsed,
}

#[derive(Debug, Default)]
pub struct DirLoad {
    pub files: Vec<LoadedFile>,
    /// Files that failed to parse, with the reason.
    pub rejected: Vec<(PathBuf, String)>,
}

impl DirLoad {
    pub fn bandwidth_files(&self) -> Vec<BandwidthFile> {
        self.files.iter().map(|f| f.parsed.file.clone()).collect()
    }
}

fn hidden(entry: &walkdir::DirEntry) -> bool {
    entry.depth() > 0 && entry.file_name().to_string_lossy().starts_with('.')
}

/// Parses every regular file under `dir`, recursively, in path order.
/// Dotfiles and dot-directories are skipped.
pub fn load_dir(dir: &Path) -> std::io::Result<DirLoad> {
    let mut paths = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name().into_iter().filter_entry(|e| !hidden(e)) {
        let entry = entry?;
        if entry.file_type().is_file() {
            paths.push(entry.into_path());
        }
    }
    let mut load = DirLoad::default();
    for path in paths {
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) => {
                load.rejected.push((path, e.to_string()));
                continue;
            }
        };
        match parse_bandwidth_file(&text, ba_id_for(dir, &path)) {
            Ok(parsed) => load.files.push(LoadedFile { path, parsed }),
            Err(e) => load.rejected.push((path, e.to_string())),
        }
    }
    Ok(load)
}
