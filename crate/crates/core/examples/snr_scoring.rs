//! Dark-level calibration and PSNR scoring of frames along one LED row,
//! for a 16-bit Poisson sensor and an 8-bit Gaussian one.
//!
//!     cargo run --example snr_scoring

use fpm_adaptive::noise::{estimate_dark, gaussian_sigma, MlePath, ScorerOptions, SnrScorer};
use fpm_adaptive::optics::{illumination_na, Led, LedGrid, OpticalConfig};
use fpm_adaptive::sim::{capture, capture_dark_frames, capture_flat_frames, ForwardModel, NoiseModel};
use fpm_adaptive::target::BarTarget;

fn main() -> fpm_adaptive::Result<()> {
    let cfg = OpticalConfig::default();
    let grid = LedGrid::new(19, 19, 4.0, 67.5)?;
    // Opaque surround so the background boxes see dark sensor area.
    let chart = BarTarget { bar_amplitude: 1.0, background_amplitude: 0.0, ..BarTarget::default() };
    let model = ForwardModel::new(&chart.field(cfg.hr_pitch())?, &cfg)?;
    let lr = cfg.lr_size();

    let mut gauss = NoiseModel::gaussian8(4.0, 2.0, 200.0);
    gauss.stray_level = 1.0;
    let mut poisson = NoiseModel::poisson16(101.0, 52_000.0);
    poisson.stray_level = 5.0;

    for noise in [poisson, gauss] {
        let dark = estimate_dark(&capture_dark_frames(&noise, lr, 8, 3)?)?;
        let sigma = match noise.kind {
            fpm_adaptive::sim::NoiseKind::Gaussian8 => Some(gaussian_sigma(&capture_flat_frames(&noise, lr, 0.5, 16, 3)?, dark)?.sigma),
            _ => None,
        };
        let scorer = SnrScorer::new(MlePath::for_kind(noise.kind, sigma), dark, (lr, lr), &ScorerOptions::default())?;
        println!("{:?}: dark {dark:.2}{}", noise.kind, sigma.map(|s| format!(", sigma_G {s:.3}")).unwrap_or_default());
        for row in 0..=9 {
            let led = Led::new(row, 0);
            let rec = scorer.score(&capture(&model, led, &grid, &noise, 3)?, &grid)?;
            println!(
                "  row {row:>2}  NA {:.3}  PSNR {:>8.2} dB  I_n {:>9.2} ({})",
                illumination_na(led, &grid),
                rec.psnr.display_value(),
                rec.estimate.chosen,
                rec.estimate.method
            );
        }
    }
    Ok(())
}
