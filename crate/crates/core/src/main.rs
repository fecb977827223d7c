use std::path::PathBuf;

use clap::{Parser, Subcommand};
use optstop::cli::{self, Command, Options};
use optstop::scalar::Arithmetic;

/// Discrete-time optimal stopping: Snell envelopes, optimal stopping
/// rules, an exhaustive oracle and regression Monte Carlo.
///
/// Exit codes: 0 pass, 1 invariant failure, 2 config error, 3 engine error.
#[derive(Parser)]
#[command(name = "optstop", version)]
struct Args {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory [default: $OPTSTOP_OUT_DIR, else ./optstop-out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// rational | float
    #[arg(long, global = true)]
    arithmetic: Option<Arithmetic>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only errors on stderr, nothing on stdout.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Envelope, θ* and θ̌ with their stopping-time distributions.
    Price,
    /// Full invariant suite on a configured model or the random corpus.
    Verify,
    /// Exhaustive rule enumeration on a small exact tree.
    Oracle,
    /// USC vs LSC digitals under grid refinement.
    Converge,
    /// ε-optimal rules versus ε.
    Epsilon,
    /// Regression Monte Carlo policy against the lattice.
    Lsmc,
    /// Exercise region {v = φ}.
    Region,
}

fn main() {
    let args = Args::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(if args.quiet { tracing::Level::ERROR } else { tracing::Level::WARN })
        .without_time()
        .init();
    let command = match args.command {
        Cmd::Price => Command::Price,
        Cmd::Verify => Command::Verify,
        Cmd::Oracle => Command::Oracle,
        Cmd::Converge => Command::Converge,
        Cmd::Epsilon => Command::Epsilon,
        Cmd::Lsmc => Command::Lsmc,
        Cmd::Region => Command::Region,
    };
    let options = Options {
        config: args.config,
        out: args.out,
        arithmetic: args.arithmetic,
        seed: args.seed,
        quiet: args.quiet,
    };
    std::process::exit(cli::run(command, &options).code());
}
