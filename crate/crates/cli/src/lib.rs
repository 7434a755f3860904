//! Command-line driver: `gen-data`, `train`, `eval` and `compare`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (unreadable or
//! inconsistent files), 3 numeric failure (non-finite loss or gradient).

mod args;
mod commands;
mod compare;

pub use args::{Cli, Command, CompareArgs, EvalArgs, GenDataArgs, ModeArg, RunOverrides, TrainArgs};
pub use commands::{cmd_eval, cmd_gen_data, cmd_train};
pub use compare::{cmd_compare, CompareReport, CompareRun, SummaryRow, COMPARE_CSV, COMPARE_JSON, COMPARE_TABLE};

use std::ffi::OsString;

use clap::Parser;
use crossalign::Error;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Exit code for a failed command, from the innermost toolkit error.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::InvalidArgument(_)) => EXIT_USAGE,
        Some(Error::Numeric(_)) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

/// The error chain joined with `: `, skipping causes already quoted by
/// their parent's message.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain().map(|c| c.to_string()) {
        if !out.ends_with(&cause) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&cause);
        }
    }
    out
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

/// Runs a parsed command and prints its summary to stdout.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    init_logging(cli.verbose);
    match cli.command {
        Command::GenData(a) => println!("{}", commands::gen_data_summary(&a, &cmd_gen_data(&a)?)),
        Command::Train(a) => println!("{}", commands::train_summary(&a, &cmd_train(&a)?)),
        Command::Eval(a) => println!("{}", commands::eval_summary(&cmd_eval(&a)?)),
        Command::Compare(a) => print!("{}", cmd_compare(&a)?.table()),
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            exit_code(&e)
        }
    }
}
