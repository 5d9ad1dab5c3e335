//! `excursion-kit`: faces, analytic levels, Monte Carlo and self-checks from
//! one JSON configuration.

mod commands;
mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use excursion_core::Error;

use crate::config::{Levels, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "excursion-kit", version, about = "Excursion probabilities and mean Euler characteristics of Gaussian fields")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone)]
enum Command {
    /// List the faces of the domain with their sign data.
    Faces(Common),
    /// Analytic approximations at each level, one CSV row per level.
    Compute(Common),
    /// Monte Carlo estimates at each level.
    Mc(Common),
    /// Run the self-check suites; exit code 5 on failure.
    Validate(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Faces(c) | Command::Compute(c) | Command::Mc(c) | Command::Validate(c) => c,
        }
    }
}

#[derive(clap::Args, Debug, Clone)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// START:STOP:STEP, stop inclusive.
    #[arg(long)]
    levels: Option<String>,
    /// mu_approx, mean_ec, laplace or mc.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (falls back to EXK_THREADS).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON report mirroring the CSV.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Monte Carlo grid points per axis.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    quad_order: Option<usize>,
    #[arg(long)]
    rel_tol: Option<f64>,
}

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Io(io::Error),
    Csv(csv::Error),
    /// Validation ran and at least one suite failed.
    Validation(usize),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Csv(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(Error::Config(_) | Error::Domain(_)) => 2,
            CliError::Core(Error::Capability(_) | Error::Ambiguous(_)) => 3,
            CliError::Core(Error::Numeric(_) | Error::Degenerate(_) | Error::ModelInconsistency(_)) => 4,
            CliError::Validation(_) => 5,
            CliError::Io(_) | CliError::Csv(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
            CliError::Csv(e) => write!(f, "csv error: {e}"),
            CliError::Validation(n) => write!(f, "validation failed: {n} check(s)"),
        }
    }
}

fn apply_overrides(cfg: &mut RunConfig, c: &Common) -> Result<(), Error> {
    if let Some(l) = &c.levels {
        cfg.levels = Some(Levels::parse_range(l)?);
    }
    if let Some(m) = &c.method {
        cfg.method = Some(m.clone());
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(g) = c.grid {
        cfg.mc.grid = g;
    }
    if let Some(r) = c.reps {
        cfg.mc.reps = r;
    }
    if let Some(q) = c.quad_order {
        cfg.quad.order = Some(q);
    }
    if let Some(t) = c.rel_tol {
        cfg.quad.rel_tol = Some(t);
    }
    if let Some(o) = &c.out {
        cfg.output = Some(o.clone());
    }
    let env = std::env::var("EXK_THREADS").ok();
    let threads = match (c.threads, env) {
        (Some(t), _) => Some(t),
        (None, Some(s)) => Some(
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("EXK_THREADS must be a positive integer, got '{s}'")))?,
        ),
        (None, None) => cfg.threads,
    };
    cfg.threads = threads;
    // validated early so a bad method fails before any work
    cfg.method()?;
    Ok(())
}

fn init_threads(threads: Option<usize>) -> Result<(), Error> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(Error::Config("thread count must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot start {n} worker threads: {e}")))
}

fn run(args: Args) -> Result<(), CliError> {
    let common = args.command.common();
    let mut cfg = RunConfig::load(&common.config)?;
    apply_overrides(&mut cfg, common)?;
    init_threads(cfg.threads)?;
    let output = cfg.output.clone();
    let run = commands::Run::new(cfg)?;

    let mut sink: Box<dyn Write> = match &output {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let mut report = match &common.report {
        Some(p) => Some(BufWriter::new(File::create(p)?)),
        None => None,
    };
    let report_ref = report.as_mut().map(|r| r as &mut dyn Write);
    let result = match args.command {
        Command::Faces(_) => commands::faces(&run.domain, &mut sink),
        Command::Compute(_) => commands::compute(&run, &mut sink, report_ref),
        Command::Mc(_) => commands::mc(&run, &mut sink, report_ref),
        Command::Validate(_) => match commands::validate_cmd(&run, &mut sink) {
            Ok(r) if r.passed() => Ok(()),
            Ok(r) => Err(CliError::Validation(r.failures().count())),
            Err(e) => Err(e),
        },
    };
    sink.flush()?;
    if let Some(r) = report.as_mut() {
        r.flush()?;
    }
    result
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("excursion-kit: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
