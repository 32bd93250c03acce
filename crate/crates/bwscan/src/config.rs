//! Simulation configs: JSON documents that mirror `SimConfig` field for
//! field, plus the checked-in presets.

use std::fs;
use std::path::Path;

use bwscan_core::netsim::SimConfig;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Preset name and its JSON text, embedded at build time.
pub const PRESETS: &[(&str, &str)] = &[
    ("all-honest", include_str!("../presets/all-honest.json")),
    ("cotormult-n5", include_str!("../presets/cotormult-n5.json")),
    ("detormult-3x6", include_str!("../presets/detormult-3x6.json")),
    ("cotormult-probed", include_str!("../presets/cotormult-probed.json")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

/// Parses and validates a config. `origin` names the source in messages.
///
/// Syntax and type errors report the line, column and field path; semantic
/// errors report what `SimConfig::validate` rejected.
pub fn parse_config(text: &str, origin: &str) -> CliResult<SimConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut cfg: SimConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner();
        let field = e.path().to_string();
        let message = if field.is_empty() || field == "." {
            format!("line {} column {}: {inner}", inner.line(), inner.column())
        } else {
            format!("line {} column {}: field `{field}`: {inner}", inner.line(), inner.column())
        };
        CliError::Config { path: origin.to_string(), message }
    })?;
    cfg.topology.clusters.fill_derived();
    cfg.validate().map_err(|e| CliError::Config { path: origin.to_string(), message: e.to_string() })?;
    Ok(cfg)
}

/// The raw bytes are returned too so callers can digest exactly what was read.
pub fn load_config(path: &Path) -> CliResult<(SimConfig, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::Config { path: path.display().to_string(), message: "not UTF-8".into() })?;
    let cfg = parse_config(&text, &path.display().to_string())?;
    Ok((cfg, bytes))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Pretty JSON with a trailing newline, the form presets are stored in.
pub fn to_json(cfg: &SimConfig) -> String {
    let mut s = serde_json::to_string_pretty(cfg).expect("configs serialize");
    s.push('\n');
    s
}
