use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;
use dyweight_lab::{emit_report, load_config, run, Command, ExperimentConfig, Overrides};

/// Runs one experiment family and writes its reports.
#[derive(Debug, Parser)]
#[command(name = "dyweight-lab", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// TOML (or .json) experiment config; defaults apply to anything not given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
    /// Exit with status 1 unless every embedded acceptance check passes.
    #[arg(long)]
    check: bool,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write SVG charts.
    #[arg(long)]
    svg: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn execute(cli: &Cli) -> Result<bool> {
    let mut config = match &cli.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    config.apply(&Overrides {
        command: Some(cli.command),
        seed: cli.seed,
        workers: cli.workers,
        output_dir: cli.out.clone(),
    })?;
    config.svg |= cli.svg;
    let report = run(&config)?;
    emit_report(&report, &config, &config.output_dir, config.svg)?;
    for c in &report.checks {
        println!("{}", c.line());
    }
    println!(
        "wrote {} ({:.1}s)",
        config.output_dir.display(),
        report.elapsed_seconds
    );
    Ok(!cli.check || report.passed())
}
