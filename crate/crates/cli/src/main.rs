use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mmprofile_cli::{report_run, run_pipeline, stages, CliError, PipelineConfig, Stage};

/// Environment variable naming the compute device for model stages.
const DEVICE_VAR: &str = "PIPELINE_DEVICE";

#[derive(Parser)]
#[command(name = "pipeline", version, about = "Multimodal gender profiling pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config file without running anything.
    Validate {
        config: PathBuf,
        /// Override a config key, e.g. `--set stacking.hard_labels=true`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run pipeline stages.
    Run {
        config: PathBuf,
        /// Comma-separated stages; all by default.
        #[arg(long)]
        stages: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Write the synthetic corpus described by the config.
    Synth {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Render tables and plots for a finished run directory.
    Report { run_dir: PathBuf },
}

fn load(config: &PathBuf, set: &[String], seed: Option<u64>) -> Result<PipelineConfig, CliError> {
    let mut overrides = set.to_vec();
    if let Some(s) = seed {
        overrides.push(format!("seed={s}"));
    }
    PipelineConfig::load(config, &overrides)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    if let Ok(device) = std::env::var(DEVICE_VAR) {
        if !device.eq_ignore_ascii_case("cpu") {
            eprintln!("warning: {DEVICE_VAR}={device} ignored; the built-in backbones run on the CPU");
        }
    }
    match cli.command {
        Command::Validate { config, set } => {
            let cfg = load(&config, &set, None)?;
            cfg.validate()?;
            println!("ok: {} (config hash {})", config.display(), cfg.hash());
        }
        Command::Run { config, stages, seed, set } => {
            let cfg = load(&config, &set, seed)?;
            let list = match stages {
                Some(s) => Stage::parse_list(&s)?,
                None => Stage::ALL.to_vec(),
            };
            let layout = run_pipeline(&cfg, &list)?;
            let names: Vec<&str> = list.iter().map(|s| s.as_str()).collect();
            println!("ran {} in {}", names.join(", "), layout.root.display());
            if list.contains(&Stage::Report) {
                print_summary(&layout);
            }
        }
        Command::Synth { config, set } => {
            let cfg = load(&config, &set, None)?;
            cfg.validate()?;
            let (pan, images) = stages::synthesize(&cfg)?;
            println!("pan corpus: {}\nlabeled images: {}", pan.display(), images.display());
        }
        Command::Report { run_dir } => {
            let layout = report_run(&run_dir)?;
            print_summary(&layout);
        }
    }
    Ok(())
}

fn print_summary(layout: &mmprofile_cli::RunLayout) {
    if let Ok(text) = std::fs::read_to_string(layout.reports().join("summary.txt")) {
        print!("{text}");
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
