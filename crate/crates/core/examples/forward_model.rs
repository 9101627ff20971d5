//! Renders noiseless and noisy low-resolution frames of the bar chart and
//! writes them as PGM.
//!
//!     cargo run --example forward_model -- [out_dir]

use std::path::PathBuf;

use fpm_adaptive::io::{frame_file_name, write_pgm};
use fpm_adaptive::optics::{illumination_na, Led, LedGrid, OpticalConfig};
use fpm_adaptive::sim::{capture, ForwardModel, NoiseModel};
use fpm_adaptive::target::BarTarget;

fn main() -> fpm_adaptive::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("fpm_forward_model"));
    std::fs::create_dir_all(&out)?;

    let cfg = OpticalConfig::default();
    let grid = LedGrid::new(15, 15, 4.0, 67.5)?;
    let object = BarTarget::default().field(cfg.hr_pitch())?;
    let model = ForwardModel::new(&object, &cfg)?;
    let noise = NoiseModel::poisson16(101.0, 52_000.0);

    for led in [Led::CENTER, Led::new(1, 0), Led::new(2, 2), Led::new(5, 0), Led::new(7, 7)] {
        let clean = model.frame(led, &grid)?;
        let noisy = capture(&model, led, &grid, &noise, 1)?;
        let mean = clean.pixels.mean().unwrap_or(0.0);
        let peak = noisy.pixels.iter().copied().fold(0.0, f64::max);
        println!(
            "{:>12}  NA {:.3}  mean intensity {:.4}  peak counts {:>6.0}",
            frame_file_name(led),
            illumination_na(led, &grid),
            mean,
            peak
        );
        write_pgm(&out.join(frame_file_name(led)), &noisy.pixels, noise.bit_depth)?;
    }
    println!("frames in {}", out.display());
    Ok(())
}
