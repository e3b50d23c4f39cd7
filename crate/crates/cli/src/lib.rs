//! Plumbing behind the `ct` binary: argument types, dispatch and report
//! files.
//!
//! Every run writes `report.json` into the output directory together with
//! command-specific CSV files. Reports echo the resolved configuration and
//! the SHA-256 of every input, and are byte-stable for equal inputs except
//! for the `timing_seconds` field.

mod commands;
mod selftest;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

pub use commands::{BeckmannArgs, CityArgs, HotellingArgs, OtArgs, WardropArgs};

/// Exit status for a run that converged.
pub const EXIT_OK: i32 = 0;
/// Exit status for bad input or a failed self test.
pub const EXIT_INPUT: i32 = 1;
/// Exit status when a solver stopped before convergence; the best iterate is
/// still reported.
pub const EXIT_NO_CONVERGENCE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ct", version, about = "Congested transport solvers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Traffic equilibrium on a network.
    Wardrop(WardropArgs),
    /// Discrete optimal transport between two point sets.
    Ot(OtArgs),
    /// Minimal flow between two grid densities.
    Beckmann(BeckmannArgs),
    /// Urban planning problems from a JSON config.
    City(CityArgs),
    /// Influence regions and prices of competing firms.
    Hotelling(HotellingArgs),
    /// Runs the embedded oracle checks.
    Selftest(Common),
}

/// Options shared by every command.
#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// Solver tolerance.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long = "max-iter", default_value_t = 20_000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving `report.json` and the CSV files.
    #[arg(long = "out", default_value = "ct-out")]
    pub output_dir: PathBuf,
}

/// The resolved run configuration.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: &'static str,
    pub inputs: Vec<PathBuf>,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Internal thread cap from `CT_THREADS`.
    pub threads: usize,
    /// Command-specific options with defaults filled in.
    pub options: Value,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            bail!("tol must be positive, got {}", self.tol);
        }
        if self.max_iter == 0 {
            bail!("max-iter must be at least 1");
        }
        for p in &self.inputs {
            if !p.is_file() {
                bail!("input {} does not exist", p.display());
            }
        }
        Ok(())
    }
}

/// Whether the solver met its tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Converged,
    NotConverged,
}

impl Outcome {
    pub fn from_flag(converged: bool) -> Self {
        if converged {
            Outcome::Converged
        } else {
            Outcome::NotConverged
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Converged => EXIT_OK,
            Outcome::NotConverged => EXIT_NO_CONVERGENCE,
        }
    }
}

/// What a command hands back for the report.
pub(crate) struct Produced {
    pub outcome: Outcome,
    pub results: Value,
    /// `(file name, contents)` written next to the report.
    pub files: Vec<(String, String)>,
}

/// Internal parallelism from `CT_THREADS`, default 1.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var("CT_THREADS") {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => bail!("CT_THREADS must be a positive integer, got '{s}'"),
        },
        Err(_) => Ok(1),
    }
}

pub(crate) fn read_input(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

impl Command {
    fn config(&self, threads: usize) -> RunConfig {
        let (name, common, inputs, options) = match self {
            Command::Wardrop(a) => ("wardrop", &a.common, a.inputs(), json!(a)),
            Command::Ot(a) => ("ot", &a.common, a.inputs(), json!(a)),
            Command::Beckmann(a) => ("beckmann", &a.common, a.inputs(), json!(a)),
            Command::City(a) => ("city", &a.common, a.inputs(), json!(a)),
            Command::Hotelling(a) => ("hotelling", &a.common, a.inputs(), json!(a)),
            Command::Selftest(c) => ("selftest", c, Vec::new(), json!({})),
        };
        let mut options = options;
        if let Value::Object(m) = &mut options {
            m.remove("common");
        }
        RunConfig {
            command: name,
            inputs,
            tol: common.tol,
            max_iter: common.max_iter,
            seed: common.seed,
            output_dir: common.output_dir.clone(),
            threads,
            options,
        }
    }
}

/// Runs one command and writes its report. Input and I/O problems come back
/// as errors.
pub fn run(cli: &Cli) -> Result<Outcome> {
    let threads = threads_from_env()?;
    let config = cli.command.config(threads);
    config.validate()?;
    let start = Instant::now();
    let produced = match &cli.command {
        Command::Wardrop(a) => commands::wardrop(a)?,
        Command::Ot(a) => commands::ot(a)?,
        Command::Beckmann(a) => commands::beckmann(a, threads)?,
        Command::City(a) => commands::city(a, threads)?,
        Command::Hotelling(a) => commands::hotelling(a)?,
        Command::Selftest(_) => selftest::run()?,
    };
    let elapsed = start.elapsed().as_secs_f64();

    let mut inputs = Vec::new();
    for p in &config.inputs {
        inputs.push(json!({ "path": p, "sha256": digest(p)? }));
    }
    let mut report = Map::new();
    report.insert("command".into(), json!(config.command));
    report.insert("config".into(), serde_json::to_value(&config)?);
    report.insert("converged".into(), json!(produced.outcome == Outcome::Converged));
    report.insert("inputs".into(), Value::Array(inputs));
    report.insert("results".into(), produced.results);
    report.insert("timing_seconds".into(), json!(elapsed));

    let dir = &config.output_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut text = serde_json::to_string_pretty(&Value::Object(report))?;
    text.push('\n');
    fs::write(dir.join("report.json"), text)?;
    for (name, body) in &produced.files {
        fs::write(dir.join(name), body).with_context(|| format!("writing {name}"))?;
    }
    Ok(produced.outcome)
}

/// Report text with the timing line removed, for determinism checks.
pub fn strip_timing(report: &str) -> String {
    report
        .lines()
        .filter(|l| !l.trim_start().starts_with("\"timing_seconds\""))
        .collect::<Vec<_>>()
        .join("\n")
}
