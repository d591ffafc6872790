//! Command-line driver: corpus generation, model training, evolution runs
//! and reporting, each leaving a `manifest.json` that can be replayed.

pub mod args;
pub mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;

use clap::{CommandFactory, FromArgMatches};
use thiserror::Error;

use args::{Cli, Command, ReplayArgs};
use manifest::{sha256_file, RunManifest};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "AXCGP_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

fn parse(argv: Vec<OsString>) -> Result<Cli, clap::Error> {
    let mut cmd = Cli::command();
    // Later occurrences of a flag replace earlier ones, which lets explicit
    // flags override values spliced in from the config file.
    for name in ["evolve", "gen-dataset", "train", "report", "batch", "replay"] {
        cmd = cmd.mut_subcommand(name, |c| c.args_override_self(true));
    }
    let matches = cmd.try_get_matches_from(argv)?;
    Cli::from_arg_matches(&matches)
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV}={v:?}: expected a positive integer")))?;
    // A second call within one process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs one command and returns its manifest.
pub fn execute(command: &Command) -> Result<RunManifest, CliError> {
    match command {
        Command::Evolve(a) => commands::evolve_cmd(a),
        Command::GenDataset(a) => commands::gen_dataset_cmd(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Report(a) => commands::report_cmd(a),
        Command::Batch(a) => commands::batch_cmd(a),
        Command::Replay(a) => replay(a),
    }
}

fn replay(a: &ReplayArgs) -> Result<RunManifest, CliError> {
    let recorded = RunManifest::read(&a.manifest)?;
    if recorded.version != env!("CARGO_PKG_VERSION") {
        log::warn!("manifest written by version {}", recorded.version);
    }
    for input in &recorded.inputs {
        let now = sha256_file(std::path::Path::new(&input.path))?;
        if now != input.sha256 {
            return Err(CliError::Data(format!("{}: contents changed since the recorded run", input.path)));
        }
    }
    if recorded.command == "replay" {
        return Err(CliError::Usage("cannot replay a replay".into()));
    }
    let mut argv: Vec<OsString> = vec!["axcgp".into(), recorded.command.clone().into()];
    argv.extend(config::flags_from_map(&recorded.config)?.into_iter().map(OsString::from));
    argv.push("--out".into());
    argv.push(a.out.clone().into());
    let cli = parse(argv).map_err(|e| CliError::Usage(format!("manifest config: {e}")))?;
    let fresh = execute(&cli.command)?;
    if a.verify && fresh.outputs != recorded.outputs {
        let differing: Vec<&str> = fresh
            .outputs
            .iter()
            .filter(|f| !recorded.outputs.contains(f))
            .map(|f| f.path.as_str())
            .collect();
        return Err(CliError::Data(format!(
            "outputs differ from the recorded run: {}",
            differing.join(", ")
        )));
    }
    Ok(fresh)
}

/// Entry point behind the binary; returns the process exit code.
pub fn run<I: IntoIterator<Item = OsString>>(argv: I) -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let argv = match config::expand_argv(argv.into_iter().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match parse(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = configure_threads().and_then(|_| execute(&cli.command));
    match result {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
