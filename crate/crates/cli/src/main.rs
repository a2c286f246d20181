//! `ispsearch` command-line tool.

mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;
use ispsearch::Error;

use args::{Cli, Command};

/// 2 for configuration problems (bad flags, plans, missing inputs), 3 for
/// failures while reading data or computing.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::UnknownModule(_)
        | Error::Domain { .. }
        | Error::MissingFile(_)
        | Error::MissingWeights(_) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let result = match &cli.command {
        Command::ProxyTrain(a) => commands::proxy_train(a),
        Command::LearnedTrain(a) => commands::learned_train(a),
        Command::Search(a) => commands::search(a),
        Command::Finetune(a) => commands::finetune(a),
        Command::Run(a) => commands::run(a),
        Command::Eval(a) => commands::eval(a),
        Command::Synth(a) => commands::synth(a),
        Command::Latency(a) => commands::latency(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
