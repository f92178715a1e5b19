//! Command-line entry point.
//!
//! Exit codes: `0` success, `1` I/O failure, `2` malformed config or arguments,
//! `3` numeric failure. Every failure writes one JSON line
//! `{"error": <kind>, "message": <text>}` to the error stream.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use super::{export, optimize, run_experiment, run_sweep, sweep_rows, EvaluatorMode, ExperimentConfig};
use crate::error::{Error, Result};
use crate::oracle;
use crate::sim;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "gossip-fair", version, about = "Fair gossip-rate allocation for version-age networks")]
struct Cli {
    /// JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed(s).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for output files; stdout when omitted (required by `experiment`).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Age evaluator: `simulate` or `oracle`.
    #[arg(long, global = true)]
    mode: Option<EvaluatorMode>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a topology and print its network JSON.
    Generate,
    /// Simulate one allocation and print the age report.
    Simulate {
        /// Also dump `time,node,delta` rows to this CSV file.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Compute exact ages for one allocation.
    Oracle,
    /// Run the learning loop once and print its trace as JSONL.
    Optimize,
    /// Compare uniform and learned allocations over all seeds and write the CSV bundle.
    Experiment,
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    message: String,
}

#[derive(Serialize)]
struct ExactAges {
    per_node: Vec<f64>,
    worst: f64,
    unbounded: Vec<usize>,
}

fn exit_code(e: &Error) -> (i32, &'static str) {
    if e.is_config() {
        (EXIT_CONFIG, "config")
    } else {
        match e {
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => (EXIT_IO, "io"),
            _ => (EXIT_NUMERIC, "numeric"),
        }
    }
}

fn report(err: &mut dyn Write, kind: &str, message: String) {
    let line = serde_json::to_string(&ErrorLine { error: kind, message }).unwrap_or_default();
    let _ = writeln!(err, "{line}");
}

/// Parses `argv` (including the program name), runs the subcommand and returns the exit code.
pub fn cli<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let parsed = match Cli::try_parse_from(argv) {
        Ok(p) => p,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return EXIT_OK;
            }
            report(err, "config", e.to_string().trim().to_string());
            return EXIT_CONFIG;
        }
    };
    match execute(&parsed, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let (code, kind) = exit_code(&e);
            report(err, kind, e.to_string());
            code
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config: required".into()))?;
    let mut cfg = match ExperimentConfig::load(path) {
        Err(Error::Io(e)) => return Err(Error::Config(format!("--config {}: {e}", path.display()))),
        other => other?,
    };
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(mode) = cli.mode {
        cfg.mode = mode;
    }
    if cli.out_dir.is_some() {
        cfg.outputs = cli.out_dir.clone();
    }
    Ok(cfg)
}

/// Writes to `<out_dir>/<name>` when an output directory is set, else to `out`.
fn emit(cfg: &ExperimentConfig, name: &str, out: &mut dyn Write, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match &cfg.outputs {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut w = BufWriter::new(File::create(dir.join(name))?);
            body(&mut w)?;
            w.flush()?;
            Ok(())
        }
        None => body(out),
    }
}

fn json_line<V: Serialize>(w: &mut dyn Write, value: &V) -> Result<()> {
    serde_json::to_writer_pretty(&mut *w, value)?;
    writeln!(w)?;
    Ok(())
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(cli)?;
    let seed = cfg.seeds[0];
    match &cli.command {
        Command::Generate => {
            let net = cfg.network_for(seed, None)?;
            emit(&cfg, "network.json", out, |w| json_line(w, &net))
        }
        Command::Simulate { trajectory } => {
            let net = cfg.network_for(seed, None)?;
            let sim_cfg = cfg.sim_config(cfg.allocation_for(net.n())?, seed);
            let report = match trajectory {
                Some(path) => write_trajectory(&net, &sim_cfg, path)?,
                None => sim::simulate_replicated(&net, &sim_cfg, cfg.sim.replications)?,
            };
            emit(&cfg, "age_report.json", out, |w| json_line(w, &report))
        }
        Command::Oracle => {
            let net = cfg.network_for(seed, None)?;
            let allocation = cfg.allocation_for(net.n())?;
            let per_node = oracle::exact_ages(&net, &allocation, cfg.lambda_e)?;
            let report = sim::AgeReport::from_ages(per_node);
            let exact = ExactAges { per_node: report.per_node, worst: report.worst, unbounded: report.unbounded };
            emit(&cfg, "oracle.json", out, |w| json_line(w, &exact))
        }
        Command::Optimize => {
            let net = cfg.network_for(seed, None)?;
            let trace = optimize(&cfg, &net, seed)?;
            emit(&cfg, "trace.jsonl", out, |w| trace.write_jsonl(w))?;
            match trace.failure {
                Some(message) => Err(Error::Evaluator { iteration: trace.iterations.len() + 1, message }),
                None => Ok(()),
            }
        }
        Command::Experiment => {
            let dir = cfg
                .outputs
                .clone()
                .ok_or_else(|| Error::Config("--out-dir: required for `experiment` (or set `outputs`)".into()))?;
            let failures = if cfg.n_values.is_some() {
                let sweep = run_sweep(&cfg)?;
                let rows = sweep_rows(&cfg, &sweep)?;
                export::write_sweep(&dir, &cfg, &sweep, &rows)?;
                sweep.iter().flat_map(|(_, r)| r.failures.clone()).collect::<Vec<_>>()
            } else {
                let result = run_experiment(&cfg)?;
                export::write_experiment(&dir, &result, cfg.histogram_bins)?;
                let s = (result.uniform_summary(), result.optimized_summary());
                writeln!(
                    out,
                    "seeds={} uniform_worst_mean={:.6} optimized_worst_mean={:.6}",
                    s.0.count, s.0.mean, s.1.mean
                )?;
                result.failures
            };
            match failures.first() {
                Some(f) => Err(Error::Evaluator {
                    iteration: 0,
                    message: format!("{} seed(s) failed, first seed {}: {}", failures.len(), f.seed, f.message),
                }),
                None => Ok(()),
            }
        }
    }
}

fn write_trajectory(net: &crate::GossipNetwork, cfg: &sim::SimConfig<f64>, path: &Path) -> Result<sim::AgeReport<f64>> {
    let mut w = BufWriter::new(File::create(path)?);
    let report = sim::simulate_traced(net, cfg, &mut w)?;
    w.flush()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let argv = std::iter::once("gossip-fair").chain(args.iter().copied());
        let code = cli(argv, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn missing_config_is_exit_two() {
        let (code, _, err) = run(&["oracle"]);
        assert_eq!(code, EXIT_CONFIG);
        let line: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
        assert_eq!(line["error"], "config");
    }

    #[test]
    fn unknown_subcommand_is_exit_two() {
        let (code, _, err) = run(&["frobnicate"]);
        assert_eq!(code, EXIT_CONFIG);
        assert!(err.starts_with("{\"error\":\"config\""));
    }

    #[test]
    fn help_goes_to_stdout() {
        let (code, out, _) = run(&["--help"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("experiment"));
    }

    #[test]
    fn degenerate_rates_map_to_numeric() {
        assert_eq!(exit_code(&Error::DegenerateRates), (EXIT_NUMERIC, "numeric"));
        assert_eq!(exit_code(&Error::Singular { jitter: 1.0 }).0, EXIT_NUMERIC);
        assert_eq!(exit_code(&Error::Config("x".into())).0, EXIT_CONFIG);
    }
}
