//! `crseg`: reproducible experiment runner for certified-radius-guided
//! attacks on the toy segmentation model.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, ValueEnum};

use config::{ExperimentConfig, KeySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Cmd {
    GenData,
    Train,
    Certify,
    Attack,
    Defend,
    RegretLab,
    Report,
}

#[derive(Debug, Parser)]
#[command(name = "crseg", version, about = "Certified-radius-guided attacks on pixel classifiers")]
struct Cli {
    command: Cmd,
    /// key = value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Print the accepted keys with their defaults and exit
    #[arg(long)]
    list_keys: bool,
}

fn schema(cmd: Cmd) -> Vec<KeySpec> {
    match cmd {
        Cmd::GenData => commands::GEN_DATA_KEYS.to_vec(),
        Cmd::Train => commands::train_schema(),
        Cmd::Certify => commands::certify_schema(),
        Cmd::Attack => commands::attack_schema(),
        Cmd::Defend => commands::defend_schema(),
        Cmd::RegretLab => commands::REGRET_KEYS.to_vec(),
        Cmd::Report => commands::REPORT_KEYS.to_vec(),
    }
}

fn name(cmd: Cmd) -> String {
    cmd.to_possible_value().expect("no skipped variants").get_name().to_string()
}

fn run(cli: &Cli) -> Result<()> {
    let keys = schema(cli.command);
    if cli.list_keys {
        for (k, d, help) in &keys {
            println!("{k:<18}{:<24}{help}", if d.is_empty() { "(unset)" } else { d });
        }
        return Ok(());
    }
    let cfg = ExperimentConfig::resolve(&name(cli.command), &keys, cli.config.as_deref(), &cli.set)?;
    commands::prepare_out(&cli.out, &cfg)?;
    match cli.command {
        Cmd::GenData => commands::gen_data(&cfg, &cli.out),
        Cmd::Train => commands::train_cmd(&cfg, &cli.out),
        Cmd::Certify => commands::certify_cmd(&cfg, &cli.out),
        Cmd::Attack => commands::attack_cmd(&cfg, &cli.out),
        Cmd::Defend => commands::defend_cmd(&cfg, &cli.out),
        Cmd::RegretLab => commands::regret_cmd(&cfg, &cli.out),
        Cmd::Report => commands::report_cmd(&cfg, &cli.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
