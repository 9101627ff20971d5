use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fpm_adaptive::config::ExperimentConfig;
use fpm_adaptive::pipeline::{cmd_acquire, cmd_reconstruct, cmd_report, cmd_simulate};
use fpm_adaptive::Result;

#[derive(Parser)]
#[command(name = "fpm", version, about = "Virtual Fourier ptychographic microscope")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Frame directory, defaults to `<out>/frames`.
    #[arg(long, global = true)]
    frames: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Fixed PSNR threshold instead of the automatic one.
    #[arg(long, global = true, allow_hyphen_values = true)]
    threshold_db: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render one noisy frame per LED plus calibration frames.
    Simulate,
    /// Score frames and decide which LEDs to keep.
    Acquire,
    /// EPRY reconstruction from the kept frames.
    Reconstruct,
    /// Consolidated table of the previous stages.
    Report,
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.paths.out = o.clone();
    }
    if let Some(f) = &cli.frames {
        cfg.paths.frames = Some(f.clone());
    }
    if let Some(t) = cli.threshold_db {
        cfg.acquisition.threshold_db = Some(t);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load(cli)?;
    match cli.command {
        Command::Simulate => {
            let out = cmd_simulate(&cfg)?;
            println!("wrote {} frames to {}", out.frames_written, out.dir.display());
        }
        Command::Acquire => {
            let out = cmd_acquire(&cfg)?;
            for (k, v) in &out.summary {
                println!("{k}={v}");
            }
        }
        Command::Reconstruct => {
            let out = cmd_reconstruct(&cfg)?;
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            println!("iterations={} final_error={:.6e}", out.result.iterations_run, out.result.final_error());
            if let Some(e) = out.amplitude_rmse {
                println!("amplitude_rmse={e:.6}");
            }
        }
        Command::Report => print!("{}", cmd_report(&cfg)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
