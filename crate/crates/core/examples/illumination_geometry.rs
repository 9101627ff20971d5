//! Illumination angles, synthetic NA and neighbor overlap for an LED array.
//!
//!     cargo run --example illumination_geometry

use fpm_adaptive::optics::{center_overlap, illumination_na, overlap_rate, synthetic_na, Led, LedGrid, OpticalConfig};
use fpm_adaptive::sim::falloff_factor;

fn main() -> fpm_adaptive::Result<()> {
    let cfg = OpticalConfig::default();
    let grid = LedGrid::new(19, 19, 4.0, 67.5)?;

    println!("{:>8} {:>8} {:>10} {:>8}", "led", "NA", "cos^4", "field");
    for k in [0, 1, 2, 4, 6, 9] {
        let led = Led::new(k, k);
        let na = illumination_na(led, &grid);
        let field = if na < cfg.objective_na { "bright" } else { "dark" };
        println!("{:>8} {:>8.4} {:>10.4} {:>8}", format!("({k},{k})"), na, falloff_factor(led, &grid), field);
    }

    let all: Vec<Led> = grid.lit().iter().copied().collect();
    println!("synthetic NA of the full array: {:.4}", synthetic_na(all.iter(), &grid, &cfg)?);
    println!("overlap of adjacent pupils:     {:.4}", center_overlap(&grid, &cfg)?);
    println!("overlap at one pupil radius:    {:.4}", overlap_rate(cfg.objective_na, cfg.objective_na)?);
    Ok(())
}
