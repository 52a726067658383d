mod args;
mod commands;
mod config;
mod manifest;
mod table;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// Exit status for each error category.
fn exit_code(category: &str) -> u8 {
    match category {
        "usage" => 2,
        "io" => 3,
        "numeric" => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(f) => commands::gen(f),
        Command::TrainVae(f) => commands::train_vae_cmd(f),
        Command::TrainWren(f) => commands::train_wren_cmd(f),
        Command::Eval(f) => commands::eval_cmd(f),
        Command::Traverse(f) => commands::traverse(f),
        Command::Probe(f) => commands::probe(f),
        Command::Report(f) => commands::report(f),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {line}", e.category());
            ExitCode::from(exit_code(e.category()))
        }
    }
}
