//! Command-line entry point.
//!
//! Commands: synth, train, eval, predict, gradcheck. Exit codes: 0 success,
//! 1 usage error, 2 data error, 3 numeric error. Failures print one
//! machine-parsable JSON record on stderr.

// `as Real` casts are f64 no-ops in the default build but required for the
// real32 feature.
#![allow(clippy::unnecessary_cast)]

mod args;
mod commands;

use glossnet_core::Error;

/// Failure category carrying the process exit code.
pub enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn kind(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Data(_) => "data",
            Failure::Numeric(_) => "numeric",
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => m,
        }
    }

    fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        let msg = e.to_string();
        match e {
            Error::Invalid(_) => Failure::Usage(msg),
            Error::NonFinite(_) => Failure::Numeric(msg),
            Error::Shape(_) | Error::Format(_) | Error::Io(_) | Error::Checkpoint(_) => {
                Failure::Data(msg)
            }
        }
    }
}

const USAGE: &str = "\
usage: glossnet <command> [options]

commands:
  synth      generate a synthetic pose dataset
             --out DIR [--classes N] [--per-class N] [--frames N]
             [--sigma F] [--seed N]
  train      train a classifier
             --data DIR|MANIFEST --out DIR [--config FILE] [--seed N]
             [--threads N]
  eval       evaluate a checkpoint on a split
             --checkpoint FILE --data DIR|MANIFEST [--split NAME] [--out DIR]
  predict    rank glosses for one clip
             --checkpoint FILE --clip FILE [--k N] [--width F] [--height F]
  gradcheck  verify analytic gradients against finite differences
             [--threshold F]
";

fn main() {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    match run(&argv) {
        Ok(()) => {}
        Err(failure) => {
            let record = serde_json::json!({
                "error": { "kind": failure.kind(), "message": failure.message() }
            });
            eprintln!("{record}");
            std::process::exit(failure.exit_code());
        }
    }
}

fn run(argv: &[String]) -> Result<(), Failure> {
    let Some(command) = argv.first() else {
        print!("{USAGE}");
        return Err(Failure::Usage("no command given".into()));
    };
    let rest = &argv[1..];
    match command.as_str() {
        "synth" => commands::cmd_synth(rest),
        "train" => commands::cmd_train(rest),
        "eval" => commands::cmd_eval(rest),
        "predict" => commands::cmd_predict(rest),
        "gradcheck" => commands::cmd_gradcheck(rest),
        "help" | "--help" | "-h" => {
            print!("{USAGE}");
            Ok(())
        }
        other => Err(Failure::Usage(format!("unknown command {other:?}"))),
    }
}
