//! Center-to-edge acquisition with an automatic PSNR threshold and trend
//! stop, printed as a map of LED decisions.
//!
//!     cargo run --release --example adaptive_acquisition

use fpm_adaptive::acquisition::{adaptive_acquire, auto_threshold, CachingSource, Decision, SimulatedSource};
use fpm_adaptive::noise::{estimate_dark, MlePath, ScorerOptions, SnrScorer};
use fpm_adaptive::optics::{synthetic_na, Led, LedGrid, OpticalConfig};
use fpm_adaptive::sim::{capture_dark_frames, ForwardModel, NoiseModel};
use fpm_adaptive::target::BarTarget;

fn main() -> fpm_adaptive::Result<()> {
    let cfg = OpticalConfig::default();
    let grid = LedGrid::new(19, 19, 4.0, 67.5)?;
    let chart = BarTarget { bar_amplitude: 1.0, background_amplitude: 0.0, ..BarTarget::default() };
    let model = ForwardModel::new(&chart.field(cfg.hr_pitch())?, &cfg)?;
    let mut noise = NoiseModel::poisson16(101.0, 52_000.0);
    noise.stray_level = 5.0;

    let lr = cfg.lr_size();
    let dark = estimate_dark(&capture_dark_frames(&noise, lr, 8, 1)?)?;
    let scorer = SnrScorer::new(MlePath::Poisson, dark, (lr, lr), &ScorerOptions::default())?;
    let mut source = CachingSource::new(SimulatedSource { model, grid: grid.clone(), noise, seed: 1 });

    let auto = auto_threshold(&mut source, &grid, &scorer)?;
    let acq = adaptive_acquire(&mut source, &grid, &scorer, auto.threshold_db, true)?;

    // # kept, . low SNR, - skipped by trend
    for row in -grid.half_rows()..=grid.half_rows() {
        let line: String = (-grid.half_cols()..=grid.half_cols())
            .map(|col| match acq.plan.decision(Led::new(row, col)) {
                Some(Decision::Kept) => '#',
                Some(Decision::SkippedLowSnr) => '.',
                Some(Decision::SkippedByTrend) => '-',
                None => ' ',
            })
            .collect();
        println!("{line}");
    }
    let kept: Vec<Led> = acq.plan.kept().collect();
    println!("threshold {:.2} dB", auto.threshold_db);
    println!("kept {} of {} (reduction {:.1}%)", kept.len(), acq.plan.frames_total, 100.0 * acq.plan.reduction_ratio());
    println!("exposures taken {}", source.exposures());
    println!("synthetic NA {:.3}", synthetic_na(kept.iter(), &grid, &cfg)?);
    Ok(())
}
