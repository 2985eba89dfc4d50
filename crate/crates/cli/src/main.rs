use std::ffi::OsString;

use clap::Parser;

use mvopr_cli::{cmd_evaluate, cmd_fit, cmd_simulate, Cli, CliError, Command};

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(args) => {
            let out = cmd_simulate(&args)?;
            for f in &out.failures {
                eprintln!("warning: {f}");
            }
            eprintln!("wrote {}", args.out.display());
        }
        Command::Fit(args) => {
            cmd_fit(&args)?;
        }
        Command::Evaluate(args) => {
            cmd_evaluate(&args)?;
            eprintln!("wrote {}", args.out.display());
        }
    }
    Ok(())
}

/// Parses `argv`, runs the command and returns the process exit code.
fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn main() {
    std::process::exit(dispatch(std::env::args_os()));
}
