//! The whole experiment from a TOML config: simulate, acquire, reconstruct
//! and report, all in-process.
//!
//!     cargo run --release --example end_to_end -- configs/quick.toml [out_dir]

use std::path::{Path, PathBuf};

use fpm_adaptive::config::ExperimentConfig;
use fpm_adaptive::pipeline::run_all;

fn main() {
    let mut args = std::env::args().skip(1);
    let config = args.next().map(PathBuf::from);
    let mut cfg = match &config {
        Some(p) => ExperimentConfig::load(Path::new(p)),
        None => Ok(ExperimentConfig::default()),
    }
    .unwrap_or_else(|e| {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    });
    if let Some(out) = args.next() {
        cfg.paths.out = out.into();
    }
    match run_all(&cfg) {
        Ok(report) => {
            print!("{report}");
            println!("outputs in {}", cfg.paths.out.display());
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
