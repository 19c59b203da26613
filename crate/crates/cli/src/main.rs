//! `kmem`: command-line front end for the K-memory solvers.
//!
//! Exit codes: 0 on success, 2 when an input fails validation, 3 when an
//! enumeration outgrows its cap (`KMEM_STATE_CAP` overrides the
//! augmented-state cap), 1 otherwise.

mod commands;
mod input;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{BrArgs, DecomposeArgs, MixedArgs, NeArgs, NfArgs, PhaseArgs, QlearnArgs};
use output::{FormatArg, Sink};

#[derive(Parser, Debug)]
#[command(name = "kmem", version, about = "Exact solvers for stochastic games under K-memory strategies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[arg(long, value_enum, default_value = "table", global = true)]
    format: FormatArg,
    /// Write the main output here instead of stdout.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Best response against fixed opponents.
    Br(BrArgs),
    /// Nash equilibrium search with certification.
    Ne(NeArgs),
    /// Mixed-strategy evaluation and the belief-based best response.
    Mixed(MixedArgs),
    /// Matrix decomposition and the CMDP-to-game reduction.
    Decompose(DecomposeArgs),
    /// Phase diagram of best responses against N-Tits-for-M-Tats.
    Phase(PhaseArgs),
    /// Tabular Q-learning against a fixed opponent.
    Qlearn(QlearnArgs),
    /// Normal-form reduction over finite strategy supports.
    Nf(NfArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<kmem::Error>() {
            return match e {
                kmem::Error::Spec { .. } | kmem::Error::Json(_) | kmem::Error::Io(_) => 2,
                kmem::Error::SizeCap { .. } => 3,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut sink = Sink::new(cli.format, cli.output);
    let result = match &cli.command {
        Command::Br(a) => commands::br(a, &mut sink),
        Command::Ne(a) => commands::ne(a, &mut sink),
        Command::Mixed(a) => commands::mixed(a, &mut sink),
        Command::Decompose(a) => commands::decompose(a, &mut sink),
        Command::Phase(a) => commands::phase(a, &mut sink),
        Command::Qlearn(a) => commands::qlearn(a, &mut sink),
        Command::Nf(a) => commands::nf(a, &mut sink),
    }
    .and_then(|()| sink.finish());
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
