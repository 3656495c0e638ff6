//! Command-line front end: parse flags, load the config, hand off to the
//! library runner. Exit codes: 0 success, 1 invalid invocation or config,
//! 2 runtime abort or a run that measured a failure.

use cascade_lab::config::ExperimentConfig;
use cascade_lab::runner::{
    configure_threads, run_acceptance, run_cancellation, run_corrector_limit, run_hypotheses,
    run_shell, run_spde, CommandOutcome, RunContext, RunnerError,
};
use clap::{error::ErrorKind, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cascade-lab", version, about = "Cascade and transport-noise experiments")]
struct Cli {
    /// Experiment config (JSON); defaults apply when absent.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides the config's `out_dir`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed (overrides the config's `master_seed`).
    #[arg(long, global = true, value_name = "U64")]
    master_seed: Option<u64>,
    /// Worker threads; falls back to `CASCADE_THREADS`, then the default pool.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the dyadic shell model and record energy and proxy series.
    ShellRun,
    /// Integrate seeded trajectories of the stochastic spectral system.
    SpdeRun,
    /// Sweep shell counts and report the corrector's distance from its limit.
    CorrectorLimit,
    /// Decide the exponent inequality systems in exact arithmetic.
    Hypotheses {
        /// Systems to check (comma separated: H1,H2p,H3p,H4,NSE).
        #[arg(long, value_delimiter = ',', value_name = "NAMES")]
        which: Option<Vec<String>>,
        /// Grid `start..end:step` or a single decimal.
        #[arg(long, value_name = "GRID")]
        rho: Option<String>,
    },
    /// Random span fields against the flux and symmetry identities.
    CancellationTest,
    /// Run the acceptance criteria suite.
    Acceptance {
        /// `fast` or `full`.
        #[arg(long, value_name = "SUITE")]
        suite: Option<String>,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<ExperimentConfig, RunnerError> {
    match path {
        Some(p) => Ok(ExperimentConfig::load(p)?),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(cli: Cli) -> Result<CommandOutcome, RunnerError> {
    configure_threads(cli.threads)?;
    let mut config = load_config(cli.config.as_ref())?;

    // Fold subcommand flags into the config before the manifest hashes it,
    // so reruns from the recorded config reproduce the same outputs.
    match &cli.command {
        Command::Hypotheses { which, rho } => {
            let mut block = config.hypotheses();
            if let Some(which) = which {
                block.which = which.clone();
            }
            if let Some(rho) = rho {
                block.rho = rho.clone();
            }
            config.hypotheses = Some(block);
        }
        Command::Acceptance { suite } => {
            if let Some(suite) = suite {
                let mut block = config.acceptance();
                block.suite = suite.clone();
                config.acceptance = Some(block);
            }
        }
        _ => {}
    }

    let ctx = RunContext::new(config, cli.out, cli.master_seed);
    match cli.command {
        Command::ShellRun => run_shell(&ctx),
        Command::SpdeRun => run_spde(&ctx),
        Command::CorrectorLimit => run_corrector_limit(&ctx),
        Command::Hypotheses { .. } => run_hypotheses(&ctx),
        Command::CancellationTest => run_cancellation(&ctx),
        Command::Acceptance { .. } => run_acceptance(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            _ => {
                let _ = e.print();
                return ExitCode::from(1);
            }
        },
    };
    match run(cli) {
        Ok(outcome) => {
            println!("manifest: {}", outcome.manifest_path.display());
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
