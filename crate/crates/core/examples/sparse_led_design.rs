//! Sparsest LED decimation that keeps a minimum pupil overlap, across
//! array heights and overlap limits.
//!
//!     cargo run --example sparse_led_design

use fpm_adaptive::acquisition::design_sparse_grid;
use fpm_adaptive::optics::{center_overlap, LedGrid, OpticalConfig};

fn main() -> fpm_adaptive::Result<()> {
    let cfg = OpticalConfig::default();
    println!("{:>8} {:>8} {:>6} {:>8} {:>8}", "height", "limit", "step", "pitch", "LEDs");
    for height in [60.0, 67.5, 70.0, 80.0] {
        let dense = LedGrid::new(19, 19, 4.0, height)?;
        for limit in [0.25, 0.3181, 0.40] {
            match design_sparse_grid(&dense, &cfg, limit) {
                Ok(sparse) => println!(
                    "{height:>8.1} {limit:>8.4} {:>6} {:>6.0}mm {:>8}   overlap {:.4}",
                    sparse.step,
                    sparse.step as f64 * dense.pitch,
                    sparse.lit().len(),
                    center_overlap(&sparse, &cfg)?
                ),
                Err(e) => println!("{height:>8.1} {limit:>8.4}   {e}"),
            }
        }
    }
    Ok(())
}
