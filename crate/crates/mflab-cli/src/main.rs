//! Command-line front end: runs experiments from TOML configurations,
//! writes the manifest before any results, and inspects finished runs.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical or input-output
//! failure during a run, 4 run finished but was statistically inconclusive.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mflab::estimators::{write_records_csv, RECORD_HEADER};
use mflab::experiments::{
    exp_case2_large_kappa, exp_chaos_scaling, exp_cross_error, exp_gibbs_relaxation, Case2Config,
    ChaosConfig, CrossConfig, FitLine, Outcome, RelaxationConfig, EXPERIMENT_NAMES,
};

const MANIFEST_FORMAT: &str = "mflab-manifest v1";
const SUMMARY_FORMAT: &str = "mflab-summary v1";
const RECORDS_FORMAT: &str = "mflab-records v1";
const PLOT_FORMAT: &str = "mflab-plot v1";

#[derive(Parser)]
#[command(name = "mflab", version, about = "mean-field particle laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a name, a config file, or a manifest.
    Run(RunArgs),
    /// Parse a configuration and echo the fully resolved form.
    Validate(ValidateArgs),
    /// Summarize a finished run directory and verify its checksums.
    Inspect(InspectArgs),
    /// List the available experiments.
    ListExperiments,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment name, configuration file, or manifest from an earlier run.
    target: String,
    /// Output directory (default `mflab_runs/<experiment>_seed<seed>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted-path override, e.g. `seed=7` or `chaos.n_sweep=[32,64]`.
    /// Plain keys fall through to the section of the chosen experiment.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the resolved configuration and write nothing.
    #[arg(long)]
    dry_run: bool,
    /// Worker threads (0 picks the hardware default). Results do not
    /// depend on this.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct ValidateArgs {
    target: String,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct InspectArgs {
    /// Run directory or path to its manifest.
    path: PathBuf,
    /// Print every n-th record row.
    #[arg(long, default_value_t = 20)]
    every: usize,
}

/// Errors carry the exit code of the phase they belong to.
enum CliError {
    Config(String),
    Run(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Run(m) => m,
        }
    }
}

/// Resolved run configuration; exactly the section of the chosen experiment
/// is present after resolution.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    experiment: String,
    #[serde(default)]
    seed: u64,
    /// Worker threads; zero means the hardware default. Never affects
    /// results, only wall time.
    #[serde(default)]
    threads: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    chaos: Option<ChaosConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    relaxation: Option<RelaxationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cross: Option<CrossConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    case2: Option<Case2Config>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    meta: Meta,
    config: RunConfig,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    format: String,
    created_unix: u64,
    invocation: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Summary {
    format: String,
    /// `ok` or `inconclusive`.
    status: String,
    experiment: String,
    seed: u64,
    wall_seconds: f64,
    records: usize,
    fits: Vec<FitLine>,
    notes: Vec<String>,
    /// File name to hex digest of everything written after the manifest.
    checksums: BTreeMap<String, String>,
}

fn main() -> ExitCode {
    // Die quietly when the reading end of a pipe closes, like the standard
    // line tools; Rust ignores SIGPIPE by default and println panics instead.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Inspect(args) => cmd_inspect(args),
        Command::ListExperiments => cmd_list(),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn section_key(experiment: &str) -> Option<&'static str> {
    match experiment {
        "exp_chaos_scaling" => Some("chaos"),
        "exp_gibbs_relaxation" => Some("relaxation"),
        "exp_cross_error" => Some("cross"),
        "exp_case2_large_kappa" => Some("case2"),
        _ => None,
    }
}

const TOP_LEVEL_KEYS: [&str; 7] =
    ["experiment", "seed", "threads", "chaos", "relaxation", "cross", "case2"];

/// Loads the raw TOML table for a run target: an experiment name, a bare
/// configuration, or a manifest (whose `[config]` table is extracted).
fn load_table(target: &str) -> Result<toml::Table, CliError> {
    if EXPERIMENT_NAMES.contains(&target) {
        let mut table = toml::Table::new();
        table.insert("experiment".into(), toml::Value::String(target.into()));
        return Ok(table);
    }
    let text = fs::read_to_string(target)
        .map_err(|e| CliError::Config(format!("cannot read {target}: {e}")))?;
    let table: toml::Table = toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("{target}: {e}")))?;
    if table.contains_key("meta") {
        match table.get("config") {
            Some(toml::Value::Table(config)) => Ok(config.clone()),
            _ => Err(CliError::Config(format!("{target}: manifest has no [config] table"))),
        }
    } else {
        Ok(table)
    }
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a plain string for bare words.
fn parse_override_value(text: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

fn apply_overrides(table: &mut toml::Table, sets: &[String]) -> Result<(), CliError> {
    for item in sets {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override `{item}` is not KEY=VALUE")))?;
        let mut path: Vec<&str> = key.split('.').collect();
        if path.iter().any(|s| s.is_empty()) {
            return Err(CliError::Config(format!("override key `{key}` has empty segments")));
        }
        // Plain keys that are not top-level fall through to the section of
        // the experiment chosen so far.
        if path.len() == 1 && !TOP_LEVEL_KEYS.contains(&path[0]) {
            let experiment = table
                .get("experiment")
                .and_then(|v| v.as_str())
                .ok_or_else(|| {
                    CliError::Config(format!("override `{key}` needs an experiment to scope it"))
                })?;
            let section = section_key(experiment).ok_or_else(|| {
                CliError::Config(format!("unknown experiment `{experiment}`"))
            })?;
            path.insert(0, section);
        }
        let mut cursor: &mut toml::Table = &mut *table;
        for segment in &path[..path.len() - 1] {
            let entry = cursor
                .entry(segment.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            cursor = entry.as_table_mut().ok_or_else(|| {
                CliError::Config(format!("override `{key}` descends into a non-table"))
            })?;
        }
        cursor.insert(path[path.len() - 1].to_string(), parse_override_value(value));
    }
    Ok(())
}

/// Full resolution: parse the typed configuration, reject sections that do
/// not belong to the experiment, and fill the matching section with defaults.
fn resolve_config(target: &str, sets: &[String]) -> Result<RunConfig, CliError> {
    let mut table = load_table(target)?;
    apply_overrides(&mut table, sets)?;
    let mut cfg: RunConfig = table
        .try_into()
        .map_err(|e| CliError::Config(format!("configuration: {e}")))?;
    let section = section_key(&cfg.experiment).ok_or_else(|| {
        CliError::Config(format!(
            "unknown experiment `{}`; valid names: {}",
            cfg.experiment,
            EXPERIMENT_NAMES.join(", ")
        ))
    })?;
    let mut foreign = Vec::new();
    if cfg.chaos.is_some() && section != "chaos" {
        foreign.push("chaos");
    }
    if cfg.relaxation.is_some() && section != "relaxation" {
        foreign.push("relaxation");
    }
    if cfg.cross.is_some() && section != "cross" {
        foreign.push("cross");
    }
    if cfg.case2.is_some() && section != "case2" {
        foreign.push("case2");
    }
    if !foreign.is_empty() {
        return Err(CliError::Config(format!(
            "sections [{}] do not belong to {}",
            foreign.join(", "),
            cfg.experiment
        )));
    }
    match section {
        "chaos" => {
            cfg.chaos.get_or_insert_with(ChaosConfig::default);
        }
        "relaxation" => {
            cfg.relaxation.get_or_insert_with(RelaxationConfig::default);
        }
        "cross" => {
            cfg.cross.get_or_insert_with(CrossConfig::default);
        }
        _ => {
            cfg.case2.get_or_insert_with(Case2Config::default);
        }
    }
    Ok(cfg)
}

fn dispatch(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let run = |r: mflab::error::Result<Outcome>| r.map_err(|e| CliError::Run(e.to_string()));
    match cfg.experiment.as_str() {
        "exp_chaos_scaling" => run(exp_chaos_scaling(cfg.chaos.as_ref().unwrap(), cfg.seed)),
        "exp_gibbs_relaxation" => {
            run(exp_gibbs_relaxation(cfg.relaxation.as_ref().unwrap(), cfg.seed))
        }
        "exp_cross_error" => run(exp_cross_error(cfg.cross.as_ref().unwrap(), cfg.seed)),
        "exp_case2_large_kappa" => {
            run(exp_case2_large_kappa(cfg.case2.as_ref().unwrap(), cfg.seed))
        }
        other => Err(CliError::Config(format!("unknown experiment `{other}`"))),
    }
}

fn to_toml<T: Serialize>(value: &T, what: &str) -> Result<String, CliError> {
    toml::to_string(value).map_err(|e| CliError::Run(format!("serializing {what}: {e}")))
}

fn write_file(path: &Path, bytes: &[u8], what: &str) -> Result<(), CliError> {
    fs::write(path, bytes)
        .map_err(|e| CliError::Run(format!("writing {what} to {}: {e}", path.display())))
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn cmd_run(args: RunArgs) -> Result<u8, CliError> {
    let mut cfg = resolve_config(&args.target, &args.set)?;
    if let Some(threads) = args.threads {
        cfg.threads = threads;
    }
    if args.dry_run {
        print!("{}", to_toml(&cfg, "configuration")?);
        return Ok(0);
    }
    if cfg.threads > 0 {
        // Only wall time depends on this; results are identical at any count.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    let out_dir = args
        .out
        .unwrap_or_else(|| PathBuf::from(format!("mflab_runs/{}_seed{}", cfg.experiment, cfg.seed)));
    fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Run(format!("creating {}: {e}", out_dir.display())))?;

    // The manifest goes first so an interrupted run can still be reproduced.
    let manifest = Manifest {
        meta: Meta {
            format: MANIFEST_FORMAT.into(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            invocation: std::env::args().collect(),
        },
        config: cfg.clone(),
    };
    write_file(
        &out_dir.join("manifest.toml"),
        to_toml(&manifest, "manifest")?.as_bytes(),
        "manifest",
    )?;

    let started = Instant::now();
    let outcome = dispatch(&cfg)?;
    let wall_seconds = started.elapsed().as_secs_f64();

    let mut checksums = BTreeMap::new();
    let mut records_bytes = Vec::new();
    writeln!(records_bytes, "# format: {RECORDS_FORMAT}")
        .map_err(|e| CliError::Run(e.to_string()))?;
    write_records_csv(&mut records_bytes, &outcome.records)
        .map_err(|e| CliError::Run(format!("records: {e}")))?;
    checksums.insert("records.csv".to_string(), sha256_hex(&records_bytes));
    write_file(&out_dir.join("records.csv"), &records_bytes, "records")?;

    for (name, content) in &outcome.plots {
        let mut bytes = format!("# format: {PLOT_FORMAT}\n").into_bytes();
        bytes.extend_from_slice(content.as_bytes());
        checksums.insert(name.clone(), sha256_hex(&bytes));
        write_file(&out_dir.join(name), &bytes, "plot table")?;
    }

    let status = if outcome.inconclusive { "inconclusive" } else { "ok" };
    let summary = Summary {
        format: SUMMARY_FORMAT.into(),
        status: status.into(),
        experiment: cfg.experiment.clone(),
        seed: cfg.seed,
        wall_seconds,
        records: outcome.records.len(),
        fits: outcome.fits.clone(),
        notes: outcome.notes.clone(),
        checksums,
    };
    write_file(
        &out_dir.join("run_summary.toml"),
        to_toml(&summary, "summary")?.as_bytes(),
        "summary",
    )?;

    println!(
        "{}: {} records, {} fits, {:.1}s, status {status}",
        cfg.experiment,
        outcome.records.len(),
        outcome.fits.len(),
        wall_seconds
    );
    for fit in &outcome.fits {
        println!("  {} = {:.6} +- {:.6} ({})", fit.label, fit.value, fit.se, fit.detail);
    }
    for note in &outcome.notes {
        println!("  note: {note}");
    }
    println!("wrote {}", out_dir.display());
    Ok(if outcome.inconclusive { 4 } else { 0 })
}

fn cmd_validate(args: ValidateArgs) -> Result<u8, CliError> {
    let cfg = resolve_config(&args.target, &args.set)?;
    print!("{}", to_toml(&cfg, "configuration")?);
    Ok(0)
}

fn cmd_list() -> Result<u8, CliError> {
    println!("exp_chaos_scaling      size scaling of the marginal distance to the mean-field law");
    println!("exp_gibbs_relaxation   decay toward the sampled equilibrium marginal at matched size");
    println!("exp_cross_error        joint size-time model of the marginal distance");
    println!("exp_case2_large_kappa  strong-coupling flattening for the smoothed periodic repulsion");
    Ok(0)
}

fn cmd_inspect(args: InspectArgs) -> Result<u8, CliError> {
    let dir = if args.path.is_dir() {
        args.path.clone()
    } else {
        args.path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
    };
    let manifest_path = dir.join("manifest.toml");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", manifest_path.display())))?;
    let manifest: Manifest = toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", manifest_path.display())))?;
    println!("experiment: {}", manifest.config.experiment);
    println!("seed:       {}", manifest.config.seed);
    println!("created:    {} (unix)", manifest.meta.created_unix);
    let section = to_toml(&manifest.config, "configuration")?;
    println!("--- configuration ---\n{section}");

    let summary_path = dir.join("run_summary.toml");
    let summary: Option<Summary> = match fs::read_to_string(&summary_path) {
        Ok(text) => Some(
            toml::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", summary_path.display())))?,
        ),
        Err(_) => None,
    };
    match &summary {
        None => {
            println!("warning: no run summary; the run is incomplete or still going");
        }
        Some(s) => {
            println!("status: {} after {:.1}s, {} records", s.status, s.wall_seconds, s.records);
            for fit in &s.fits {
                println!("  {} = {:.6} +- {:.6} ({})", fit.label, fit.value, fit.se, fit.detail);
            }
            for note in &s.notes {
                println!("  note: {note}");
            }
            for (name, recorded) in &s.checksums {
                match fs::read(dir.join(name)) {
                    Ok(bytes) if &sha256_hex(&bytes) == recorded => {
                        println!("  checksum ok: {name}");
                    }
                    Ok(_) => println!("  integrity warning: {name} does not match its checksum"),
                    Err(_) => println!("  integrity warning: {name} is missing"),
                }
            }
        }
    }

    let records_path = dir.join("records.csv");
    if let Ok(text) = fs::read_to_string(&records_path) {
        let every = args.every.max(1);
        println!("--- records (every {every}) ---");
        println!("{RECORD_HEADER}");
        for (i, line) in text
            .lines()
            .filter(|l| !l.starts_with('#') && *l != RECORD_HEADER)
            .enumerate()
        {
            if i % every == 0 {
                println!("{line}");
            }
        }
    }
    Ok(0)
}
