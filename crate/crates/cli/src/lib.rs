//! Command-line driver: config layering, run manifests and the stage
//! commands.

pub mod cli;
pub mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;

use anyhow::Result;
use clap::Parser;

use crate::cli::{Cli, Command};
use crate::config::{read_config_file, resolve, DATA_DIR_ENV};
use crate::manifest::RunManifest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// 2 for usage and configuration problems, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<gendistill::Error>() {
            return match e {
                gendistill::Error::Config { .. }
                | gendistill::Error::Usage(_)
                | gendistill::Error::UnsupportedArch(_)
                | gendistill::Error::UnsupportedDataset(_) => EXIT_USAGE,
                _ => EXIT_RUNTIME,
            };
        }
    }
    EXIT_RUNTIME
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(Command::Run { from_manifest, out }) = &cli.command {
        let recorded = RunManifest::load(from_manifest)?;
        let cmd = match out {
            Some(o) => recorded.command.clone().with_out(o.clone()),
            None => recorded.command.clone(),
        };
        if matches!(cmd, Command::Run { .. }) {
            return Err(gendistill::Error::Usage("a manifest cannot replay another replay".into()).into());
        }
        recorded.config.validate()?;
        if cli.show_config {
            print!("{}", recorded.config.to_toml());
            return Ok(());
        }
        for input in &recorded.inputs {
            let now = manifest::sha256_file(&input.path)?;
            if now != input.sha256 {
                log::warn!("input {} changed since the recorded run", input.path.display());
            }
        }
        log::info!("replaying {} from {}", cmd.name(), from_manifest.display());
        commands::execute(&cmd, &recorded.config, recorded.budget)?;
        return Ok(());
    }

    let file = cli.config.as_deref().map(read_config_file).transpose()?;
    let resolved = resolve(cli.budget, file.as_ref(), std::env::var(DATA_DIR_ENV).ok(), &cli.flags.to_table())?;
    for w in &resolved.warnings {
        log::warn!("{}", w);
    }
    if cli.show_config {
        print!("{}", resolved.config.to_toml());
        return Ok(());
    }
    let Some(cmd) = cli.command else {
        return Err(gendistill::Error::Usage("no command given (see --help)".into()).into());
    };
    commands::execute(&cmd, &resolved.config, resolved.budget)?;
    Ok(())
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {:#}", e);
            exit_code(&e)
        }
    }
}
