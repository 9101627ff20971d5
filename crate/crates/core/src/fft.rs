//! Square 2D FFTs over `ndarray` buffers.
//!
//! Spectra are kept in natural (unshifted) DFT order; frequency `u` lives at
//! index `u mod n`. Neither direction is normalized.

use std::sync::Arc;

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Planned forward/inverse transforms for one square size.
#[derive(Clone)]
pub struct Fft2 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("n", &self.n).finish()
    }
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn forward(&self, data: &mut Array2<Complex64>) {
        self.process(data, &self.forward);
    }

    pub fn inverse(&self, data: &mut Array2<Complex64>) {
        self.process(data, &self.inverse);
    }

    fn process(&self, data: &mut Array2<Complex64>, plan: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.dim(), (self.n, self.n), "fft size mismatch");
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        let mut line = vec![Complex64::default(); self.n];
        for axis in [Axis(1), Axis(0)] {
            for mut lane in data.lanes_mut(axis) {
                for (dst, src) in line.iter_mut().zip(lane.iter()) {
                    *dst = *src;
                }
                plan.process_with_scratch(&mut line, &mut scratch);
                for (dst, src) in lane.iter_mut().zip(line.iter()) {
                    *dst = *src;
                }
            }
        }
    }
}

/// Signed frequency index of DFT bin `k` in an `n`-point transform.
pub fn signed_freq(k: usize, n: usize) -> i64 {
    let k = k as i64;
    let n = n as i64;
    if k < (n + 1) / 2 {
        k
    } else {
        k - n
    }
}

/// DFT bin holding signed frequency `f` in an `n`-point transform.
pub fn bin_of(f: i64, n: usize) -> usize {
    f.rem_euclid(n as i64) as usize
}

/// Moves DC to the array center, for display.
pub fn fftshift<T: Clone>(a: &Array2<T>) -> Array2<T> {
    let (h, w) = a.dim();
    Array2::from_shape_fn((h, w), |(r, c)| a[[(r + (h + 1) / 2) % h, (c + (w + 1) / 2) % w]].clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(a: &Array2<Complex64>) -> Array2<Complex64> {
        let n = a.nrows();
        let tau = std::f64::consts::TAU;
        Array2::from_shape_fn((n, n), |(u, v)| {
            let mut acc = Complex64::default();
            for ((r, c), x) in a.indexed_iter() {
                let ph = -tau * ((u * r + v * c) as f64) / n as f64;
                acc += x * Complex64::from_polar(1.0, ph);
            }
            acc
        })
    }

    #[test]
    fn matches_naive_dft() {
        let n = 6;
        let a = Array2::from_shape_fn((n, n), |(r, c)| Complex64::new((r * 7 + c) as f64 % 5.0, (r as f64 - c as f64) * 0.3));
        let mut b = a.clone();
        Fft2::new(n).forward(&mut b);
        let want = naive_dft(&a);
        for (x, y) in b.iter().zip(want.iter()) {
            assert!((x - y).norm() < 1e-9);
        }
    }

    #[test]
    fn inverse_roundtrip_scales_by_n_squared() {
        let n = 8;
        let a = Array2::from_shape_fn((n, n), |(r, c)| Complex64::new(r as f64, c as f64));
        let fft = Fft2::new(n);
        let mut b = a.clone();
        fft.forward(&mut b);
        fft.inverse(&mut b);
        for (x, y) in b.iter().zip(a.iter()) {
            assert!((x / (n * n) as f64 - y).norm() < 1e-12);
        }
    }

    #[test]
    fn frequency_indexing() {
        assert_eq!(signed_freq(0, 8), 0);
        assert_eq!(signed_freq(3, 8), 3);
        assert_eq!(signed_freq(4, 8), -4);
        assert_eq!(signed_freq(7, 8), -1);
        for f in -4..4 {
            assert_eq!(signed_freq(bin_of(f, 8), 8), f);
        }
    }
}
