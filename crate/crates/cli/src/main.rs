mod args;
mod commands;
mod error;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use error::{CliError, Result};
use manifest::Run;

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Invalid("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    let cmd = &cli.command;
    let mut run = Run::new(cmd.out_dir())?;
    let seed = match cmd {
        Command::Chrf(a) => commands::chrf(a, &mut run)?,
        Command::Featurize(a) => commands::featurize(a, &mut run)?,
        Command::Train(a) => commands::train(a, &mut run)?,
        Command::Predict(a) => commands::predict(a, &mut run)?,
        Command::Evaluate(a) => commands::evaluate(a, &mut run)?,
        Command::Importance(a) => commands::importance(a, &mut run)?,
        Command::Marginals(a) => commands::marginals(a, &mut run)?,
        Command::Synth(a) => commands::synth(a, &mut run)?,
    };
    // The subcommand's own flags; the enum tag is the subcommand name. The
    // output directory is left out so runs into different directories compare equal.
    let mut config = match serde_json::to_value(cmd).map_err(|e| CliError::Internal(e.to_string()))? {
        serde_json::Value::Object(mut o) => o.remove(cmd.name()).unwrap_or_default(),
        other => other,
    };
    if let Some(o) = config.as_object_mut() {
        o.remove("out");
    }
    run.finish(cmd.name(), seed, &config)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
