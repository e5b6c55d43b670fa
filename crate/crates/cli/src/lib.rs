//! Command-line driver: instance generation, oracle probes, property
//! suites, hybrid games, optimizer benchmarks and reports.

pub mod commands;
pub mod config;
pub mod verify;

use std::io::Write;

use clap::Parser;

use clb_core::ClbError;
use config::{Cli, Command, RunConfig};

/// Exit status when every checked property holds.
pub const EXIT_OK: i32 = 0;
/// Exit status when a verified property fails.
pub const EXIT_PROPERTY: i32 = 1;
/// Exit status for invalid configurations and unusable inputs.
pub const EXIT_CONFIG: i32 = 2;

pub fn dispatch(cfg: &RunConfig) -> Result<commands::Outcome, ClbError> {
    match cfg.command {
        Command::Gen => commands::cmd_gen(cfg),
        Command::Probe => commands::cmd_probe(cfg),
        Command::Verify => commands::cmd_verify(cfg),
        Command::Game => commands::cmd_game(cfg),
        Command::Bench => commands::cmd_bench(cfg),
        Command::Report => commands::cmd_report(cfg),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let (command, flags) = cli.command.split();
    let result = flags.resolve(command).and_then(|cfg| dispatch(&cfg));
    match result {
        Ok(outcome) => {
            // A closed stdout (for example `clb probe | head`) is not an error of the command.
            let _ = writeln!(std::io::stdout().lock(), "{}", outcome.summary.trim_end());
            if outcome.pass {
                EXIT_OK
            } else {
                EXIT_PROPERTY
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}
