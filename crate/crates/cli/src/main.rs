use std::path::PathBuf;
use std::process::ExitCode;

use bspde_cli::manifest;
use bspde_cli::run::{run, write_diagnostics};
use bspde_cli::{CliError, Command, Overrides, RunConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bspde", version, about = "Monte Carlo solvers for backward SPDE boundary problems")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Terminal-value problem on a space-time grid.
    Solve(RunArgs),
    /// Non-local terminal condition by fixed-point iteration.
    Nonlocal(RunArgs),
    /// Monte Carlo field against the finite-difference solution.
    OracleCompare(RunArgs),
    /// Survival probabilities and exit-time distances.
    ExitStats(RunArgs),
    /// Barrier-portfolio hedge and its replication error.
    Replicate(RunArgs),
    /// Recomputes the checksums listed in a run's manifest.
    Verify {
        /// Directory holding manifest.ini.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides [sim] seed (and [hedge] seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides [output] dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn execute(command: Command, args: RunArgs) -> ExitCode {
    if let Some(k) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let overrides = Overrides { seed: args.seed, out: args.out.clone() };
    let (result, dir) = match RunConfig::from_file(command, &args.config, &overrides) {
        Ok(cfg) => (run(&cfg), cfg.out_dir.clone()),
        Err(e) => (Err(e), args.out.unwrap_or_else(|| PathBuf::from("out"))),
    };
    match result {
        Ok(names) => {
            println!("wrote {} and {} to {}", names.join(", "), manifest::MANIFEST_NAME, dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(command.name(), &dir, e),
    }
}

fn fail(command: &str, dir: &std::path::Path, e: CliError) -> ExitCode {
    eprintln!("error: {e}");
    if let Err(io) = write_diagnostics(dir, command, &e) {
        eprintln!("error: cannot write diagnostics: {io}");
    }
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let dir = match cli.command {
        Cmd::Solve(a) => return execute(Command::Solve, a),
        Cmd::Nonlocal(a) => return execute(Command::Nonlocal, a),
        Cmd::OracleCompare(a) => return execute(Command::OracleCompare, a),
        Cmd::ExitStats(a) => return execute(Command::ExitStats, a),
        Cmd::Replicate(a) => return execute(Command::Replicate, a),
        Cmd::Verify { out } => out,
    };
    match manifest::verify(&dir) {
        Ok(v) if v.ok() => {
            println!("{} artifacts verified", v.checked);
            ExitCode::SUCCESS
        }
        Ok(v) => {
            for (name, why) in &v.failures {
                eprintln!("{name}: {why}");
            }
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
