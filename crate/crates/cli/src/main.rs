//! `ymglue`: identity checks, ε-sweeps and the end-to-end solve.

mod commands;
mod config;
mod svg;

use clap::{Parser, Subcommand};
use commands::{CmdError, SweepKind};
use config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "ymglue", version, about = "Numerics for gluing instantons along minimal submanifolds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for CSV and SVG files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Single-threaded reductions for byte-identical output.
    #[arg(long, global = true)]
    deterministic: bool,
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form identities, energy quantum and kernel orders.
    Verify,
    /// ε-sweep with a fitted log-log slope.
    Sweep {
        #[arg(value_enum)]
        kind: SweepKind,
    },
    /// Contraction, projected residual and balancing solve.
    Solve,
}

const EXIT_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => match RunConfig::load(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_USAGE);
            }
        },
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    cfg.deterministic |= cli.deterministic;
    let out = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let threads = if cfg.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    if let Err(e) = std::fs::create_dir_all(&out) {
        eprintln!("error: cannot create {}: {e}", out.display());
        return ExitCode::from(EXIT_USAGE);
    }
    let res = match cli.command {
        Command::Verify => commands::cmd_verify(&cfg, &out),
        Command::Sweep { kind } => commands::cmd_sweep(&cfg, kind, &out),
        Command::Solve => commands::cmd_solve(&cfg, &out),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more checks failed; see {}", out.display());
            ExitCode::from(EXIT_FAILED)
        }
        Err(e @ CmdError::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_NUMERIC)
        }
    }
}
