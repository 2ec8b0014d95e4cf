mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use anyhow::Result;
use clap::error::ErrorKind;
use clap::Parser;

use args::{argv_from_manifest, Cli, Command};
use manifest::Manifest;

const EXIT_PARSE: u8 = 1;
const EXIT_DEGENERATE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_USAGE: u8 = 64;

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<adv_sdf::Error>()) {
        Some(e) if e.is_degenerate() => EXIT_DEGENERATE,
        Some(e) if e.is_numeric() => EXIT_NUMERIC,
        Some(adv_sdf::Error::InvalidArgument(_)) => EXIT_USAGE,
        _ => EXIT_PARSE,
    }
}

fn configure_threads() {
    let Ok(v) = std::env::var("ADV_SDF_THREADS") else {
        return;
    };
    match v.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("could not size thread pool: {e}");
            }
        }
        _ => log::warn!("ignoring ADV_SDF_THREADS={v}: expected a positive integer"),
    }
}

fn run(command: &Command) -> Result<()> {
    match command {
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::AblateRadius(a) => commands::ablate_radius(a),
        Command::Curves(a) => commands::curves(a),
        Command::Replay(a) => {
            let m = Manifest::read(&a.manifest)?;
            let argv = argv_from_manifest(&m, a.out.as_deref())?;
            log::info!("replaying: {}", argv[1..].join(" "));
            let cli = Cli::try_parse_from(&argv)
                .map_err(|e| anyhow::anyhow!("manifest does not describe a valid command:\n{e}"))?;
            run(&cli.command)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    configure_threads();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error ({}): {e:#}", cli.command.name());
            ExitCode::from(exit_code(&e))
        }
    }
}
