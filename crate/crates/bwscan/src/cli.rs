//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage, config, IO or domain error, 3 simulation
//! failure, 4 insufficient data.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use bwscan_core::coincidence::{coincidence_vs_window, count_events, expected_inflation, Window};
use bwscan_core::defense::{plan_probes, probe_pairs, score_suspects, verify_shared_resource, DefenseConfig, Verification};
use bwscan_core::estimator::{cluster_grid, inflation_curve, optimize_cluster, refit_curve, ClusterPlan};
use bwscan_core::netsim::run_simulation;
use bwscan_core::scenarios::{PROBE_OFFSET, PROBE_SPACING};
use bwscan_core::timeline::{build_timeline, estimate_duration, BandwidthFile, DEFAULT_DURATION, DEFAULT_ITERATIONS};
use bwscan_core::units::parse_bandwidth;
use bwscan_core::{MeasurementRecord, RelayId};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::bwfile::{self, parse_node_id, parse_time, DirLoad};
use crate::config::{self, load_config, parse_config, sha256_hex};
use crate::error::{exit, CliError, CliResult};
use crate::output::{csv_string, json_pretty, parse_records_jsonl, records_jsonl, summarize, OutputDir};

#[derive(Debug, Parser)]
#[command(name = "bwscan", version, about = "Bandwidth-scanner inflation simulator and analysis toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a simulation and write records, consensus and summary.
    Simulate(SimulateArgs),
    /// Analyze a directory of bandwidth files.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Inflation curve and attack-resource arithmetic.
    #[command(subcommand)]
    Estimate(EstimateCommand),
    /// Score relays for shared capacity and plan co-probes.
    Detect(DetectArgs),
    /// Print a preset config, or list presets when no name is given.
    Preset { name: Option<String> },
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true))]
pub struct SimulateArgs {
    /// JSON config file.
    #[arg(long, group = "source")]
    pub config: Option<PathBuf>,
    /// Built-in config: all-honest, cotormult-n5, detormult-3x6, cotormult-probed.
    #[arg(long, group = "source")]
    pub preset: Option<String>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Directory of bandwidth files; subdirectory names become authority ids.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RelaySetArgs {
    /// One fingerprint per line; `#` starts a comment.
    #[arg(long)]
    pub relays: PathBuf,
    /// Assumed measurement duration: seconds, or a number with s, m, h, d or w.
    #[arg(long, default_value_t = DEFAULT_DURATION, value_parser = parse_duration)]
    pub duration: f64,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Infer scanner threads and estimate the measurement duration.
    Durations {
        #[command(flatten)]
        io: InputArgs,
        #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// k-way coincidence distribution of a relay set.
    Coincidence {
        #[command(flatten)]
        io: InputArgs,
        #[command(flatten)]
        set: RelaySetArgs,
        /// `START..END`, each unix seconds or YYYY-MM-DDTHH:MM:SS.
        #[arg(long, value_parser = parse_window)]
        window: Option<Window>,
    },
    /// Two-way coincidence probability against window length.
    WindowSweep {
        #[command(flatten)]
        io: InputArgs,
        #[command(flatten)]
        set: RelaySetArgs,
        /// Comma-separated window lengths.
        #[arg(long, default_value = "1h,6h,12h,1d,2d,1w", value_delimiter = ',', value_parser = parse_duration)]
        windows: Vec<f64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum EstimateCommand {
    /// Inflation factor of a cluster of x relays.
    Inflation {
        #[arg(long, allow_negative_numbers = true)]
        x: i64,
    },
    /// Dedicated servers needed for a traffic share.
    Servers {
        #[arg(long, allow_negative_numbers = true)]
        x: i64,
        #[command(flatten)]
        target: Target,
    },
    /// Cluster size minimizing relays plus servers.
    Optimize {
        #[command(flatten)]
        target: Target,
        /// Also write the full grid as CSV.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Refit the curve to `x,i` samples from a CSV file with a header row.
    Refit {
        #[arg(long)]
        samples: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct Target {
    /// Network bandwidth, with a unit such as 678Gbit or 84GB.
    #[arg(long, value_parser = parse_rate)]
    pub b: f64,
    /// Targeted share of traffic, percent.
    #[arg(long)]
    pub p: f64,
    /// Dedicated server bandwidth, with a unit such as 100MB.
    #[arg(long, value_parser = parse_rate)]
    pub d: f64,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// records.jsonl from `simulate`, or a directory of bandwidth files.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    pub threshold: f64,
    /// Maximum number of co-probes to plan.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub probe_budget: u64,
    /// Duration assumed for records without a start time.
    #[arg(long, default_value_t = DEFAULT_DURATION, value_parser = parse_duration)]
    pub duration: f64,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_rate(s: &str) -> Result<f64, String> {
    parse_bandwidth(s).map_err(|_| format!("'{s}' needs a unit: B, KB, MB, GB, Kbit, Mbit or Gbit (per second)"))
}

/// Seconds, or a number followed by s, m, h, d or w.
pub fn parse_duration(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let (num, factor) = match s.char_indices().last() {
        Some((i, c)) if c.is_ascii_alphabetic() => {
            let factor = match c {
                's' => 1.0,
                'm' => 60.0,
                'h' => 3600.0,
                'd' => 86_400.0,
                'w' => 604_800.0,
                _ => return Err(format!("unknown duration unit in '{s}'")),
            };
            (&s[..i], factor)
        }
        _ => (s, 1.0),
    };
    match num.trim().parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v * factor),
        _ => Err(format!("'{s}' is not a positive duration")),
    }
}

fn parse_window(s: &str) -> Result<Window, String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("window '{s}' must be START..END"))?;
    let start = parse_time(a).ok_or_else(|| format!("bad window start '{a}'"))? as f64;
    let end = parse_time(b).ok_or_else(|| format!("bad window end '{b}'"))? as f64;
    if end < start {
        return Err(format!("window '{s}' ends before it starts"));
    }
    Ok(Window { start, end })
}

/// Entry point for the binary.
pub fn main() -> i32 {
    let args: Vec<OsString> = std::env::args_os().collect();
    let stdout = std::io::stdout();
    match run(args, &mut stdout.lock()) {
        Ok(()) => exit::SUCCESS,
        Err(e) => {
            eprintln!("bwscan: {e}");
            e.exit_code()
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            write!(stdout, "{e}").map_err(|e| CliError::io(Path::new("<stdout>"), e))?;
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.to_string().trim_end().to_string())),
    };
    let command_line: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match cli.command {
        Command::Simulate(a) => simulate(a, command_line, stdout),
        Command::Analyze(a) => analyze(a, command_line, stdout),
        Command::Estimate(e) => estimate(e, stdout),
        Command::Detect(d) => detect(d, command_line, stdout),
        Command::Preset { name } => preset(name.as_deref(), stdout),
    }
}

fn print(stdout: &mut dyn Write, text: &str) -> CliResult<()> {
    stdout.write_all(text.as_bytes()).map_err(|e| CliError::io(Path::new("<stdout>"), e))
}

fn preset(name: Option<&str>, stdout: &mut dyn Write) -> CliResult<()> {
    match name {
        None => print(stdout, &(config::preset_names().join("\n") + "\n")),
        Some(n) => {
            let text = config::preset(n).ok_or_else(|| unknown_preset(n))?;
            print(stdout, text)
        }
    }
}

fn unknown_preset(name: &str) -> CliError {
    CliError::Usage(format!("unknown preset '{name}'; choose one of {}", config::preset_names().join(", ")))
}

fn simulate(a: SimulateArgs, command_line: Vec<String>, stdout: &mut dyn Write) -> CliResult<()> {
    let (mut cfg, bytes) = match (&a.config, &a.preset) {
        (Some(path), _) => load_config(path)?,
        (None, Some(name)) => {
            let text = config::preset(name).ok_or_else(|| unknown_preset(name))?;
            (parse_config(text, name)?, text.as_bytes().to_vec())
        }
        (None, None) => return Err(CliError::Usage("one of --config or --preset is required".into())),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let mut out = OutputDir::create(&a.out, command_line)?;
    let result = run_simulation(&cfg).map_err(CliError::Simulation)?;
    let summary = summarize(&cfg, &result)?;
    out.write("records.jsonl", &records_jsonl(&result.records))?;
    out.write("consensus.csv", &crate::output::consensus_csv(&result.consensus))?;
    let summary_json = json_pretty(&summary);
    out.write("summary.json", &summary_json)?;
    out.finish(Some(sha256_hex(&bytes)), Some(cfg.seed))?;
    print(stdout, &summary_json)
}

/// Loads a bandwidth-file directory; no parsable file is a usage error.
fn load_input(dir: &Path) -> CliResult<(DirLoad, String)> {
    if !dir.exists() {
        return Err(CliError::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory")));
    }
    let load = bwfile::load_dir(dir).map_err(|e| CliError::io(dir, e))?;
    for (path, reason) in &load.rejected {
        eprintln!("bwscan: skipping {}: {reason}", path.display());
    }
    if load.files.is_empty() {
        return Err(CliError::Usage(format!("{}: no parsable bandwidth files", dir.display())));
    }
    let digest = input_digest(&load);
    Ok((load, digest))
}

/// Digest over every accepted file in path order, so the manifest pins the input.
fn input_digest(load: &DirLoad) -> String {
    let mut all = Vec::new();
    for f in &load.files {
        all.extend_from_slice(bwfile::serialize_bandwidth_file(&f.parsed.file).as_bytes());
    }
    sha256_hex(&all)
}

/// Relay fingerprints, one per line. Empty sets are rejected.
pub fn read_relay_set(path: &Path) -> CliResult<BTreeSet<RelayId>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut set = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let id = parse_node_id(line).ok_or_else(|| CliError::Config {
            path: path.display().to_string(),
            message: format!("line {}: '{line}' is not a 40-hex fingerprint", i + 1),
        })?;
        set.insert(id);
    }
    if set.is_empty() {
        return Err(CliError::Config { path: path.display().to_string(), message: "relay set is empty".into() });
    }
    Ok(set)
}

#[derive(Serialize)]
struct DurationReport<'a> {
    median: f64,
    thread_counts: &'a BTreeMap<u32, u32>,
    samples: usize,
    iterations: usize,
    seed: u64,
    files: usize,
    entries: usize,
    skipped_lines: usize,
}

#[derive(Serialize)]
struct CoincidenceReport {
    relay_set_size: usize,
    total_measurements: u64,
    expected_inflation: f64,
    assumed_duration: f64,
}

fn analyze(cmd: AnalyzeCommand, command_line: Vec<String>, stdout: &mut dyn Write) -> CliResult<()> {
    match cmd {
        AnalyzeCommand::Durations { io, iterations, seed } => {
            let (load, digest) = load_input(&io.input)?;
            let files = load.bandwidth_files();
            let est = estimate_duration(&files, iterations, seed).map_err(insufficient_or_domain)?;
            let report = DurationReport {
                median: est.median,
                thread_counts: &est.thread_counts,
                samples: est.samples,
                iterations: est.iterations,
                seed,
                files: files.len(),
                entries: files.iter().map(|f| f.entries.len()).sum(),
                skipped_lines: load.files.iter().map(|f| f.parsed.diagnostics.len()).sum(),
            };
            let json = json_pretty(&report);
            let mut out = OutputDir::create(&io.out, command_line)?;
            out.write("durations.json", &json)?;
            out.finish(Some(digest), Some(seed))?;
            print(stdout, &json)
        }
        AnalyzeCommand::Coincidence { io, set, window } => {
            let relays = read_relay_set(&set.relays)?;
            let (load, digest) = load_input(&io.input)?;
            let timeline = build_timeline(&load.bandwidth_files(), set.duration)?;
            let dist = count_events(&timeline, &relays, window.unwrap_or(Window::ALL)).map_err(insufficient_or_domain)?;
            let rows = (1..=dist.relay_set_size).map(|k| (k, dist.counts.get(&k).copied().unwrap_or(0), dist.probability(k)));
            let mut out = OutputDir::create(&io.out, command_line)?;
            out.write("distribution.csv", &csv_string(rows, &["k", "measurements", "probability"]))?;
            out.finish(Some(digest), None)?;
            let report = CoincidenceReport {
                relay_set_size: dist.relay_set_size,
                total_measurements: dist.total_measurements,
                expected_inflation: expected_inflation(&dist),
                assumed_duration: set.duration,
            };
            print(stdout, &json_pretty(&report))
        }
        AnalyzeCommand::WindowSweep { io, set, windows } => {
            let relays = read_relay_set(&set.relays)?;
            let (load, digest) = load_input(&io.input)?;
            let timeline = build_timeline(&load.bandwidth_files(), set.duration)?;
            let sweep = coincidence_vs_window(&timeline, &relays, &windows).map_err(insufficient_or_domain)?;
            let csv = csv_string(sweep.iter().map(|(w, p)| (w, p.map(|p| p.to_string()).unwrap_or_default())), &["window_seconds", "p2"]);
            let mut out = OutputDir::create(&io.out, command_line)?;
            out.write("window_sweep.csv", &csv)?;
            out.finish(Some(digest), None)?;
            print(stdout, &csv)
        }
    }
}

fn insufficient_or_domain(e: bwscan_core::Error) -> CliError {
    match e {
        bwscan_core::Error::InsufficientSequential | bwscan_core::Error::EmptyWindow => CliError::InsufficientData(e.to_string()),
        other => CliError::Domain(other),
    }
}

fn cluster_size(x: i64) -> CliResult<u32> {
    u32::try_from(x).ok().filter(|&x| x >= 1).ok_or(CliError::Domain(bwscan_core::Error::ClusterSizeDomain(x)))
}

#[derive(Serialize)]
struct Rate {
    value: f64,
    unit: &'static str,
}

fn rate(value: f64) -> Rate {
    Rate { value, unit: "B/s" }
}

#[derive(Serialize)]
struct PlanReport {
    x: u32,
    i: f64,
    b: Rate,
    p: f64,
    d: Rate,
    servers: u64,
    total_relays: u64,
    objective: u64,
}

fn plan_report(plan: &ClusterPlan, t: &Target) -> CliResult<PlanReport> {
    Ok(PlanReport {
        x: plan.x,
        i: inflation_curve(plan.x)?,
        b: rate(t.b),
        p: t.p,
        d: rate(t.d),
        servers: plan.servers,
        total_relays: plan.total_relays,
        objective: plan.objective,
    })
}

fn estimate(cmd: EstimateCommand, stdout: &mut dyn Write) -> CliResult<()> {
    let json = match cmd {
        EstimateCommand::Inflation { x } => {
            let x = cluster_size(x)?;
            json_pretty(&serde_json::json!({ "x": x, "i": inflation_curve(x)? }))
        }
        EstimateCommand::Servers { x, target } => {
            let plan = ClusterPlan::at(cluster_size(x)?, target.b, target.p, target.d)?;
            json_pretty(&plan_report(&plan, &target)?)
        }
        EstimateCommand::Optimize { target, table } => {
            let best = optimize_cluster(target.b, target.p, target.d)?;
            if let Some(path) = table {
                let grid = cluster_grid(target.b, target.p, target.d)?;
                let rows = grid
                    .iter()
                    .map(|g| Ok((g.x, inflation_curve(g.x)?, g.servers, g.total_relays, g.objective)))
                    .collect::<CliResult<Vec<_>>>()?;
                let csv = csv_string(rows, &["x", "i", "servers", "total_relays", "objective"]);
                crate::output::write_atomic(&path, csv.as_bytes())?;
            }
            json_pretty(&plan_report(&best, &target)?)
        }
        EstimateCommand::Refit { samples } => {
            let points = read_samples(&samples)?;
            json_pretty(&refit_curve(&points)?)
        }
    };
    print(stdout, &json)
}

fn read_samples(path: &Path) -> CliResult<Vec<(f64, f64)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    reader
        .deserialize::<(f64, f64)>()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Config { path: path.display().to_string(), message: format!("{other:?}") },
    }
}

/// Records from `simulate`'s JSON lines, or synthesized from bandwidth
/// files: end times only, rates converted from KB/s.
fn detect_records(input: &Path) -> CliResult<(Vec<MeasurementRecord>, String)> {
    if input.is_dir() {
        let (load, digest) = load_input(input)?;
        let records = load.bandwidth_files().iter().flat_map(file_records).collect();
        return Ok((records, digest));
    }
    let bytes = fs::read(input).map_err(|e| CliError::io(input, e))?;
    let text = String::from_utf8_lossy(&bytes);
    let records = parse_records_jsonl(&text)
        .map_err(|message| CliError::Config { path: input.display().to_string(), message })?;
    Ok((records, sha256_hex(&bytes)))
}

fn file_records(file: &BandwidthFile) -> Vec<MeasurementRecord> {
    file.entries
        .iter()
        .map(|e| MeasurementRecord {
            relay_id: e.node_id.clone(),
            ba_id: file.ba_id.clone(),
            thread_id: 0,
            start_time: None,
            end_time: e.end_time as f64,
            measured_bw: e.bw as f64 * bwscan_core::units::KB,
            bytes_total: 0,
            downloads: 0,
            ok: true,
        })
        .collect()
}

#[derive(Serialize)]
struct ProbeVerdict {
    a: RelayId,
    b: RelayId,
    start: Option<f64>,
    #[serde(flatten)]
    verification: Verification,
}

#[derive(Serialize)]
struct DetectReport<'a> {
    #[serde(flatten)]
    report: &'a bwscan_core::defense::SuspicionReport,
    insufficient: Vec<&'a RelayId>,
    verifications: Vec<ProbeVerdict>,
}

#[derive(Serialize)]
struct ProbeRow<'a> {
    relay_a: &'a str,
    relay_b: &'a str,
    time: f64,
}

fn detect(a: DetectArgs, command_line: Vec<String>, stdout: &mut dyn Write) -> CliResult<()> {
    let cfg = DefenseConfig { threshold: a.threshold, fallback_duration: a.duration, ..Default::default() };
    cfg.validate()?;
    let (records, digest) = detect_records(&a.input)?;
    let mut counts: BTreeMap<&RelayId, usize> = BTreeMap::new();
    for r in records.iter().filter(|r| r.ok) {
        *counts.entry(&r.relay_id).or_default() += 1;
    }
    let report = match score_suspects(&records, &cfg) {
        Ok(report) => report,
        Err(bwscan_core::Error::Config(reason)) if counts.len() < 2 => {
            return Err(CliError::InsufficientData(format!("{reason}; successful records per relay: {}", describe(&counts))));
        }
        Err(e) => return Err(e.into()),
    };
    let insufficient: Vec<&RelayId> = report.relays.iter().filter(|(_, s)| s.insufficient()).map(|(r, _)| r).collect();
    if insufficient.len() == report.relays.len() {
        let detail: BTreeMap<&RelayId, usize> = report.relays.iter().map(|(r, s)| (r, s.solo_records)).collect();
        return Err(CliError::InsufficientData(format!(
            "no relay has a solo sample to compare with; solo records per relay: {}",
            describe(&detail)
        )));
    }

    let verifications = probe_pairs(&records)
        .into_iter()
        .map(|(x, y)| {
            let solo = |r: &RelayId| report.relays.get(r).and_then(|s| s.solo_mean);
            ProbeVerdict {
                a: x.relay_id.clone(),
                b: y.relay_id.clone(),
                start: x.start_time,
                verification: verify_shared_resource(x, y, solo(&x.relay_id), solo(&y.relay_id), &cfg),
            }
        })
        .collect();
    let last_end = records.iter().map(|r| r.end_time).fold(0.0, f64::max);
    let probe_start = (last_end / 3600.0).ceil() * 3600.0 + PROBE_OFFSET;
    let probes = plan_probes(&report, a.probe_budget as usize, probe_start, PROBE_SPACING)?;
    let rows = probes.iter().map(|p| ProbeRow { relay_a: p.pair.0.as_str(), relay_b: p.pair.1.as_str(), time: p.time });

    let json = json_pretty(&DetectReport { report: &report, insufficient, verifications });
    let mut out = OutputDir::create(&a.out, command_line)?;
    out.write("suspicion.json", &json)?;
    out.write("probes.csv", &csv_string(rows, &["relay_a", "relay_b", "time"]))?;
    out.finish(Some(digest), None)?;
    let groups: Vec<&BTreeSet<RelayId>> = report.groups.iter().collect();
    print(stdout, &json_pretty(&serde_json::json!({ "groups": groups, "probes": probes.len() })))
}

fn describe(counts: &BTreeMap<&RelayId, usize>) -> String {
    if counts.is_empty() {
        return "none".into();
    }
    counts.iter().map(|(r, n)| format!("{r}={n}")).collect::<Vec<_>>().join(", ")
}
