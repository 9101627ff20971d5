//! EPRY reconstruction of a 9x9 noiseless data set, with and without pupil
//! recovery, against a defocused true pupil.
//!
//!     cargo run --release --example epry_reconstruction

use num_complex::Complex64;

use fpm_adaptive::fft::signed_freq;
use fpm_adaptive::optics::{make_pupil, LedGrid, OpticalConfig};
use fpm_adaptive::recon::{amplitude_rmse, coverage_map, epry_reconstruct, ReconConfig, ReconFrame};
use fpm_adaptive::sim::ForwardModel;
use fpm_adaptive::target::{band_limit, BarTarget};

fn main() -> fpm_adaptive::Result<()> {
    let cfg = OpticalConfig::default();
    let grid = LedGrid::new(9, 9, 4.0, 67.5)?;
    let leds: Vec<_> = grid.lit().iter().copied().collect();

    // Keep only what the 9x9 set can measure, so the truth is recoverable.
    let covered = coverage_map(&leds, &grid, &cfg)?.mapv(|c| c > 0);
    let object = band_limit(&BarTarget::default().field(cfg.hr_pitch())?, &covered)?;

    // Mild defocus: quadratic phase over the pupil support.
    let mut pupil = make_pupil(&cfg)?;
    let support = pupil.support();
    let n = pupil.size();
    for ((r, c), z) in pupil.field.data.indexed_iter_mut() {
        if support[[r, c]] {
            let (y, x) = (signed_freq(r, n) as f64, signed_freq(c, n) as f64);
            *z *= Complex64::from_polar(1.0, 0.004 * (x * x + y * y));
        }
    }
    let model = ForwardModel::with_pupil(&object, &cfg, pupil)?;
    let frames: Vec<ReconFrame> = leds
        .iter()
        .map(|&led| Ok(ReconFrame { led, intensity: model.frame(led, &grid)?.pixels }))
        .collect::<fpm_adaptive::Result<_>>()?;

    for beta in [0.0, 1.0] {
        let rc = ReconConfig { beta, max_iterations: 100, ..ReconConfig::default() };
        let res = epry_reconstruct(&frames, &grid, &cfg, &rc)?;
        println!("beta {beta}: amplitude RMSE {:.4}", amplitude_rmse(&res.object, &object)?);
        for (i, e) in res.per_iteration_error.iter().enumerate().step_by(20) {
            println!("  iteration {:>2}  error {e:.4e}", i + 1);
        }
    }
    Ok(())
}

