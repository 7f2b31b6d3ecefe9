mod args;
mod commands;
mod data;

use std::process::ExitCode;

use clap::Parser;
use mtl_core::Error;

use args::{Cli, Command};

/// 1: usage or argument error, 2: data error, 3: solver failure.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Aborted { .. } => 3,
        e if e.is_numerical() => 3,
        Error::Argument(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    log::info!(
        "config {}",
        serde_json::to_string(&cli).expect("plain data")
    );

    let result = match &cli.command {
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Eval(a) => commands::eval(a),
        Command::Baseline(a) => commands::baseline(a),
        Command::Synth(a) => commands::synth(a),
        Command::Cv(a) => commands::cv(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(exit_code(&Error::Argument("bad".into())), 1);
        let format = Error::Format {
            path: PathBuf::from("x"),
            message: "bad magic".into(),
        };
        assert_eq!(exit_code(&format), 2);
        assert_eq!(exit_code(&Error::Diverged { iteration: 3 }), 3);
        let wrapped = Error::Task {
            task: "a".into(),
            source: Box::new(Error::StepUnderflow {
                backtracks: 60,
                objective: 1.0,
            }),
        };
        assert_eq!(exit_code(&wrapped), 3);
    }
}
