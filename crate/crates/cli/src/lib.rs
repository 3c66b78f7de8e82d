//! Command-line front end for the `robodet` library.

mod args;
mod commands;
pub mod overlay;

use std::ffi::OsString;

use clap::Parser;
use robodet::Error;

use args::{Cli, Command};
use commands::Globals;

/// Exit code for invalid input: bad flags, malformed files, impossible settings.
pub const EXIT_USAGE: i32 = 1;
/// Exit code for runtime failures such as I/O errors or diverging training.
pub const EXIT_RUNTIME: i32 = 2;

fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<Error>() {
        Some(
            Error::Validation(_)
            | Error::Parse { .. }
            | Error::Spec(_)
            | Error::EmptyClass(_)
            | Error::TransferRange { .. },
        ) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                eprint!("{e}");
                return EXIT_USAGE;
            }
            let text = e.to_string();
            let msg: Vec<&str> = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with("Usage:") && !l.starts_with("For more information"))
                .collect();
            eprintln!("{}", msg.join(" "));
            return EXIT_USAGE;
        }
    };
    let g = Globals {
        seed: cli.seed,
        config: cli.config,
    };
    let result = match &cli.command {
        Command::GenData(a) => commands::gen_data(&g, a),
        Command::Anchors(a) => commands::anchors(&g, a),
        Command::Train(a) => commands::train_cmd(&g, a),
        Command::Transfer(a) => commands::transfer(&g, a),
        Command::Prune(a) => commands::prune_cmd(&g, a),
        Command::Detect(a) => commands::detect(&g, a),
        Command::Eval(a) => commands::eval_cmd(&g, a),
        Command::Ops(a) => commands::ops(&g, a),
        Command::Bench(a) => commands::bench(&g, a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
