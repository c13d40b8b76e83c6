use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use mfg_cli::config::load_config;
use mfg_cli::runner::{self, CheckKind};

/// Stationary mean-field games on the periodic torus: gradient and
/// monotone flow solvers, refinement studies, operator self-checks.
#[derive(Parser)]
#[command(name = "mfg", version, disable_help_subcommand = true)]
struct Cli {
    /// Output directory (overrides the config's output_dir)
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,
    /// Suppress progress lines; errors still go to stderr
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one solve from a JSON config and write its output files
    Solve {
        /// Path to the run configuration (JSON)
        config: PathBuf,
    },
    /// Parameter studies over a config
    Study {
        #[command(subcommand)]
        what: StudyCmd,
    },
    /// Self-checks of the discrete operators on seeded random data
    Check {
        which: CheckName,
        /// RNG seed shared by all cases
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Grid sizes, comma separated (each check has its own default)
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
    },
}

#[derive(Subcommand)]
enum StudyCmd {
    /// Solve the config on a ladder of grid sizes and report errors
    /// against the closed-form solution
    Refinement {
        /// Path to the run configuration (JSON)
        config: PathBuf,
        /// Grid sizes, comma separated
        #[arg(long, value_delimiter = ',', default_value = "25,50,100,200")]
        sizes: Vec<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CheckName {
    /// Transport operator vs its adjoint on random triples
    Adjoint,
    /// Nonnegative operator pairing on random pairs
    Monotonicity,
    /// Distance decay between two monotone-flow runs
    Contraction,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are not errors; anything else is a bad
            // invocation and lands in the configuration exit class.
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            return ExitCode::from(1);
        }
    };

    let result = match cli.cmd {
        Cmd::Solve { config } => {
            load_config(&config).and_then(|spec| runner::solve(&spec, cli.output.as_deref(), cli.quiet))
        }
        Cmd::Study { what: StudyCmd::Refinement { config, sizes } } => load_config(&config)
            .and_then(|spec| {
                runner::study_refinement(&spec, &sizes, cli.output.as_deref(), cli.quiet)
            }),
        Cmd::Check { which, seed, sizes } => {
            let kind = match which {
                CheckName::Adjoint => CheckKind::Adjoint,
                CheckName::Monotonicity => CheckKind::Monotonicity,
                CheckName::Contraction => CheckKind::Contraction,
            };
            runner::check(kind, seed, &sizes, cli.output.as_deref(), cli.quiet)
        }
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
