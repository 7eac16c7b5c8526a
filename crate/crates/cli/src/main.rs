//! `cutform` batch driver: verification tables, Hessian check, isolated
//! volumes, reinitialisation, transport and optimisation demos.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};

/// Why a run did not succeed; each maps to an exit code.
#[derive(Debug)]
pub enum Failure {
    /// Results were written but a check failed (exit 2).
    Tolerance(String),
    /// Bad configuration, flags or output location (exit 3).
    Config(String),
    /// Solver or geometry failure (exit 4).
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Tolerance(_) => 2,
            Failure::Config(_) => 3,
            Failure::Numerical(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Tolerance(m) => write!(f, "tolerance breach: {m}"),
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<cutform::Error> for Failure {
    fn from(e: cutform::Error) -> Self {
        match e {
            cutform::Error::InvalidArgument(_) | cutform::Error::Io(_) => Failure::Config(e.to_string()),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cutform", version, about = "Unfitted level-set shape calculus and topology optimisation")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Mesh size (cells per side; for the cantilever, cells across the height).
    #[arg(long, global = true)]
    mesh: Option<usize>,

    /// Geometry or problem id of the command.
    #[arg(long, global = true)]
    geometry: Option<String>,

    /// Output directory. CUTFORM_OUT takes precedence.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for gradient seeds.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Finite-difference step.
    #[arg(long, global = true)]
    fd_step: Option<f64>,

    /// Write a VTK snapshot every N steps (evolve) or iterations (optimize).
    #[arg(long, global = true)]
    snapshot_every: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// AD, closed-form and finite-difference shape derivatives.
    Verify,
    /// AD Hessian against finite differences of the AD gradient.
    HessianCheck,
    /// Isolated-volume colouring, serial and partitioned.
    Isovol,
    /// Reinitialisation towards a signed distance.
    Reinit,
    /// Transport towards a non-designable region, with and without facet weighting.
    Evolve,
    /// Augmented-Lagrangian optimisation (cantilever compliance or pure volume).
    Optimize,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Verify => "verify",
            Command::HessianCheck => "hessian-check",
            Command::Isovol => "isovol",
            Command::Reinit => "reinit",
            Command::Evolve => "evolve",
            Command::Optimize => "optimize",
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    let overrides = Overrides {
        command: cli.command.name().to_string(),
        mesh: cli.mesh,
        geometry: cli.geometry,
        out: cli.out,
        threads: cli.threads,
        fd_step: cli.fd_step,
        snapshot_every: cli.snapshot_every,
    };
    let env_out = std::env::var_os("CUTFORM_OUT").filter(|s| !s.is_empty()).map(PathBuf::from);
    cfg.apply(&overrides, env_out)?;

    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global()
        .map_err(|e| Failure::Config(format!("thread pool: {e}")))?;

    let out = cfg.out.clone();
    std::fs::create_dir_all(&out).map_err(|e| Failure::Config(format!("cannot create {}: {e}", out.display())))?;
    let resolved = toml::to_string(&cfg).map_err(|e| Failure::Config(e.to_string()))?;
    std::fs::write(out.join("config.toml"), resolved)
        .map_err(|e| Failure::Config(format!("cannot write resolved config: {e}")))?;
    log::info!("{} -> {}", cli.command.name(), out.display());

    match cli.command {
        Command::Verify => commands::verify(&cfg, &out),
        Command::HessianCheck => commands::hessian_check(&cfg, &out),
        Command::Isovol => commands::isovol(&cfg, &out),
        Command::Reinit => commands::reinit(&cfg, &out),
        Command::Evolve => commands::evolve_cmd(&cfg, &out),
        Command::Optimize => commands::optimize(&cfg, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let help = matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion);
            let _ = e.print();
            return ExitCode::from(if help { 0 } else { 3 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
