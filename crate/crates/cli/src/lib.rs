//! Command-line front end: simulate panels, run the three tests on a CSV
//! panel, and drive experiment grids.

mod args;
mod commands;

use std::ffi::OsString;

use clap::Parser;

pub use args::Cli;

/// Parses `args` (including the program name) and runs the command.
///
/// Returns the process exit code: 0 when the command completed, whatever
/// the test decided; 1 on an operational error; 2 on a usage error.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 2 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    match commands::run(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            1
        }
    }
}
