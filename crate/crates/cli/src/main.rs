//! `semilin`: solve and verify semilinear problems described in TOML.

mod config;
mod report;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use run::CliError;

#[derive(Parser)]
#[command(name = "semilin", version, about = "Monte Carlo solver for semilinear elliptic problems with measure data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML problem description.
    config: PathBuf,
    /// Exit with status 4 when any verification fails.
    #[arg(long)]
    strict: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve, write solution.csv, report.txt and paths_meta.txt, then run the enabled checks.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Only validate the config and sample the structural conditions.
        #[arg(long)]
        check_only: bool,
    },
    /// Run the enabled checks against an existing solution.csv.
    Verify {
        #[command(flatten)]
        common: Common,
        solution: PathBuf,
    },
    /// Sample the structural conditions on f.
    Check {
        #[command(flatten)]
        common: Common,
    },
    /// Compute the deterministic reference solution on the configured grid.
    Oracle {
        #[command(flatten)]
        common: Common,
    },
}

fn prepare(common: &Common) -> Result<(RunConfig, PathBuf), CliError> {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation(format!("--threads: {e}")))?;
    }
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.solver.seed = s;
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output.clone());
    Ok((cfg, out))
}

fn execute(cli: &Cli) -> Result<(bool, report::Report), CliError> {
    match &cli.command {
        Command::Solve { common, check_only } => {
            let (cfg, out) = prepare(common)?;
            let r = if *check_only { run::check(&cfg)? } else { run::solve(&cfg, &out)? };
            Ok((common.strict, r))
        }
        Command::Verify { common, solution } => {
            let (cfg, out) = prepare(common)?;
            Ok((common.strict, run::verify(&cfg, solution, &out)?))
        }
        Command::Check { common } => {
            let (cfg, _) = prepare(common)?;
            Ok((common.strict, run::check(&cfg)?))
        }
        Command::Oracle { common } => {
            let (cfg, out) = prepare(common)?;
            Ok((common.strict, run::oracle(&cfg, &out)?))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok((strict, report)) => {
            print!("{}", report.render());
            if report.any_failed() {
                eprintln!("verification failed");
                if strict {
                    return ExitCode::from(4);
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
