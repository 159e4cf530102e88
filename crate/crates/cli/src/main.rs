use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod failure;
mod output;

use commands::Common;
use failure::{Failure, EXIT_CONFIG};

/// Phonon hopping and blockade in trapped-ion chains.
#[derive(Parser)]
#[command(name = "ionhop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Where outputs go; overrides `output.dir`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Phonon cutoff per site; overrides `simulation.n_max`.
    #[arg(long)]
    nmax: Option<usize>,
}

impl From<CommonArgs> for Common {
    fn from(a: CommonArgs) -> Self {
        Common { config: a.config, out_dir: a.out_dir, nmax: a.nmax }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every `[[sequence]]` and write `<name>.csv` and `<name>.json`.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Window durations as `start:stop:step` in μs.
        #[arg(long)]
        time_grid: Option<String>,
    },
    /// Fit the model to traces; each file is matched to the sequence named by its stem.
    Fit {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long = "data", required = true)]
        data: Vec<PathBuf>,
        /// Restart jitter seed; overrides `fit.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Solve for `n̄` and `ε_e′` from the two readout plateaus.
    CharacterizeSpam {
        #[command(flatten)]
        common: CommonArgs,
        /// Bright probability after preparing one phonon.
        #[arg(long)]
        p_one: Option<f64>,
        /// Bright probability without a phonon.
        #[arg(long)]
        p_zero: Option<f64>,
    },
    /// Sideband spectrum described by `[scan]`, written to `scan.csv`.
    Scan {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { common, time_grid } => commands::simulate(&common.into(), time_grid.as_deref()),
        Command::Fit { common, data, seed } => commands::fit_data(&common.into(), &data, seed),
        Command::CharacterizeSpam { common, p_one, p_zero } => commands::characterize_spam(&common.into(), p_one, p_zero),
        Command::Scan { common } => commands::scan(&common.into()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
