//! Bandwidth unit parsing. Internally every rate is bytes per second.
//!
//! Accepted suffixes (optionally followed by `/s` or `ps`): `B`, `KB`, `MB`,
//! `GB` (decimal bytes) and `Kbit`, `Mbit`, `Gbit` (decimal bits). A bare
//! number is rejected so a caller can never silently mix MB/s and Gbit/s.

use alloc::string::ToString;

use crate::{Error, Result};

pub const KB: f64 = 1e3;
pub const MB: f64 = 1e6;
pub const GB: f64 = 1e9;
pub const MIB: u64 = 1 << 20;
pub const GIB: u64 = 1 << 30;

const SUFFIXES: &[(&str, f64)] = &[
    ("Gbit", GB / 8.0),
    ("Mbit", MB / 8.0),
    ("Kbit", KB / 8.0),
    ("GB", GB),
    ("MB", MB),
    ("KB", KB),
    ("B", 1.0),
];

/// Parses a rate such as `100MB`, `678Gbit`, `25MBps` or `1.5 GB/s` into bytes/second.
pub fn parse_bandwidth(input: &str) -> Result<f64> {
    let err = || Error::Bandwidth(input.to_string());
    let s = input.trim();
    let s = s
        .strip_suffix("/s")
        .or_else(|| s.strip_suffix("ps"))
        .unwrap_or(s)
        .trim_end();
    let (number, factor) = SUFFIXES
        .iter()
        .find_map(|(suffix, factor)| s.strip_suffix(suffix).map(|n| (n, *factor)))
        .ok_or_else(err)?;
    let value: f64 = number.trim().parse().map_err(|_| err())?;
    if !value.is_finite() || value < 0.0 {
        return Err(err());
    }
    Ok(value * factor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffixes() {
        assert_eq!(parse_bandwidth("100MB").unwrap(), 100e6);
        assert_eq!(parse_bandwidth("100MB/s").unwrap(), 100e6);
        assert_eq!(parse_bandwidth("25MBps").unwrap(), 25e6);
        assert_eq!(parse_bandwidth("678Gbit").unwrap(), 84.75e9);
        assert_eq!(parse_bandwidth("0.8Gbit").unwrap(), 100e6);
        assert_eq!(parse_bandwidth("8Kbit").unwrap(), 1000.0);
        assert_eq!(parse_bandwidth("1 GB/s").unwrap(), 1e9);
        assert_eq!(parse_bandwidth("12B").unwrap(), 12.0);
    }

    #[test]
    fn bare_numbers_rejected() {
        assert!(parse_bandwidth("100").is_err());
        assert!(parse_bandwidth("MB").is_err());
        assert!(parse_bandwidth("-3MB").is_err());
        assert!(parse_bandwidth("12 parsecs").is_err());
    }
}
