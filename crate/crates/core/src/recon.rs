//! EPRY reconstruction of the high-resolution object and pupil, plus the
//! metrics used to judge it.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::acquisition::order_center_to_edge;
use crate::error::{FpmError, Result};
use crate::fft::{bin_of, signed_freq, Fft2};
use crate::noise::compensate_illumination;
use crate::optics::{make_pupil, synthetic_na, ComplexField, Led, LedGrid, OpticalConfig, Pupil, SpectrumShift};
use crate::sim::RawFrame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ReconInit {
    #[default]
    UpsampledCenterFrame,
    Flat,
}

/// Order of frames inside one sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SweepOrder {
    #[default]
    CenterToEdge,
    AsGiven,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    pub max_iterations: usize,
    /// Object step α.
    pub alpha: f64,
    /// Pupil step β; zero freezes the pupil.
    pub beta: f64,
    pub init: ReconInit,
    pub order: SweepOrder,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            alpha: 1.0,
            beta: 1.0,
            init: ReconInit::UpsampledCenterFrame,
            order: SweepOrder::CenterToEdge,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 2.0) {
            return Err(FpmError::InvalidConfig(format!("alpha must lie in (0, 2], got {}", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta <= 2.0) {
            return Err(FpmError::InvalidConfig(format!("beta must lie in [0, 2], got {}", self.beta)));
        }
        if self.max_iterations == 0 {
            return Err(FpmError::InvalidConfig("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// One preprocessed intensity image and its LED.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconFrame {
    pub led: Led,
    pub intensity: Array2<f64>,
}

/// Dark subtraction, flooring at zero, cos⁴θ compensation and division by
/// the sensor gain, giving intensities in object units.
pub fn prepare_frame(raw: &RawFrame, grid: &LedGrid, dark: f64, gain: f64) -> Result<ReconFrame> {
    if !(gain > 0.0) {
        return Err(FpmError::InvalidConfig(format!("gain must be positive, got {gain}")));
    }
    let mut f = raw.clone();
    f.pixels.mapv_inplace(|v| (v - dark).max(0.0));
    let f = compensate_illumination(f, grid)?;
    Ok(ReconFrame {
        led: f.led,
        intensity: f.pixels.mapv(|v| v / gain),
    })
}

#[derive(Debug, Clone)]
pub struct ReconResult {
    pub object: ComplexField,
    pub pupil: Pupil,
    pub iterations_run: usize,
    /// Summed modulus mismatch of each sweep, measured before each update.
    pub per_iteration_error: Vec<f64>,
    pub synthetic_na_used: f64,
    /// Integer spectrum placements with their sub-bin rounding residue.
    pub shifts: Vec<SpectrumShift>,
}

impl ReconResult {
    pub fn initial_error(&self) -> f64 {
        self.per_iteration_error[0]
    }

    pub fn final_error(&self) -> f64 {
        *self.per_iteration_error.last().expect("at least one iteration")
    }
}

fn validate_frames(frames: &[ReconFrame], grid: &LedGrid, config: &OpticalConfig) -> Result<()> {
    if frames.is_empty() {
        return Err(FpmError::Empty("reconstruction needs at least one frame"));
    }
    let n = config.lr_size();
    let mut seen = std::collections::BTreeSet::new();
    for f in frames {
        if !grid.contains(f.led) {
            return Err(FpmError::LedOutsideGrid(f.led));
        }
        if f.intensity.dim() != (n, n) {
            return Err(FpmError::DataMismatch(format!(
                "frame for LED {} is {:?}, expected {n}x{n}",
                f.led,
                f.intensity.dim()
            )));
        }
        if !seen.insert(f.led) {
            return Err(FpmError::DataMismatch(format!("LED {} appears twice", f.led)));
        }
        if f.intensity.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(FpmError::DataMismatch(format!("frame for LED {} has negative or non-finite pixels", f.led)));
        }
    }
    Ok(())
}

/// HR spectrum of the upsampled amplitude of `frame`, zero phase.
fn upsampled_spectrum(frame: &ReconFrame, config: &OpticalConfig) -> Array2<Complex64> {
    let n = config.lr_size();
    let big = config.hr_size;
    let mut lr = frame.intensity.mapv(|v| Complex64::new(v.sqrt(), 0.0));
    Fft2::new(n).forward(&mut lr);
    let scale = (big * big) as f64 / (n * n) as f64;
    let mut hr = Array2::<Complex64>::zeros((big, big));
    for ((r, c), z) in lr.indexed_iter() {
        let fy = signed_freq(r, n);
        let fx = signed_freq(c, n);
        hr[[bin_of(fy, big), bin_of(fx, big)]] = z * scale;
    }
    hr
}

fn flat_spectrum(frame: &ReconFrame, config: &OpticalConfig) -> Array2<Complex64> {
    let big = config.hr_size;
    let mean_amp = frame.intensity.iter().map(|v| v.sqrt()).sum::<f64>() / frame.intensity.len() as f64;
    let mut hr = Array2::<Complex64>::zeros((big, big));
    hr[[0, 0]] = Complex64::new(mean_amp * (big * big) as f64, 0.0);
    hr
}

/// Embedded pupil recovery with the ideal pupil of `config` as the start.
pub fn epry_reconstruct(frames: &[ReconFrame], grid: &LedGrid, config: &OpticalConfig, rcfg: &ReconConfig) -> Result<ReconResult> {
    epry_reconstruct_with_pupil(frames, grid, config, rcfg, make_pupil(config)?)
}

pub fn epry_reconstruct_with_pupil(
    frames: &[ReconFrame],
    grid: &LedGrid,
    config: &OpticalConfig,
    rcfg: &ReconConfig,
    mut pupil: Pupil,
) -> Result<ReconResult> {
    config.validate()?;
    rcfg.validate()?;
    validate_frames(frames, grid, config)?;
    let n = config.lr_size();
    let big = config.hr_size;
    if pupil.size() != n {
        return Err(FpmError::ShapeMismatch(pupil.field.data.dim(), (n, n)));
    }

    let order: Vec<&ReconFrame> = match rcfg.order {
        SweepOrder::AsGiven => frames.iter().collect(),
        SweepOrder::CenterToEdge => {
            let sub = grid.clone().with_lit(frames.iter().map(|f| f.led))?;
            order_center_to_edge(&sub)?
                .into_iter()
                .map(|led| frames.iter().find(|f| f.led == led).expect("led came from frames"))
                .collect()
        }
    };

    let shifts: Vec<SpectrumShift> = order.iter().map(|f| SpectrumShift::new(f.led, grid, config)).collect();
    for s in &shifts {
        s.check_band(&pupil, big)?;
    }
    let support = pupil.support();
    let bins: Vec<(usize, usize, i64, i64)> = support
        .indexed_iter()
        .filter(|(_, &s)| s)
        .map(|((r, c), _)| (r, c, signed_freq(r, n), signed_freq(c, n)))
        .collect();
    let amplitudes: Vec<Array2<f64>> = order.iter().map(|f| f.intensity.mapv(f64::sqrt)).collect();

    let reference = order
        .iter()
        .min_by(|a, b| {
            let na = |f: &ReconFrame| crate::optics::illumination_na(f.led, grid);
            na(a).total_cmp(&na(b))
        })
        .expect("non-empty");
    let mut spectrum = match rcfg.init {
        ReconInit::UpsampledCenterFrame => upsampled_spectrum(reference, config),
        ReconInit::Flat => flat_spectrum(reference, config),
    };

    let fft = Fft2::new(n);
    let to_lr = 1.0 / (big * big) as f64;
    let to_hr = (big * big) as f64 / (n * n) as f64;
    let mut sub = Array2::<Complex64>::zeros((n, n));
    let mut psi = Array2::<Complex64>::zeros((n, n));
    let mut per_iteration_error = Vec::with_capacity(rcfg.max_iterations);

    for _ in 0..rcfg.max_iterations {
        let mut err = 0.0;
        // whole-spectrum maximum: weak dark-field regions must not inflate pupil steps
        let o_max = spectrum.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
        for (k, shift) in shifts.iter().enumerate() {
            // φ = S at the shifted support, ψ = φ·P
            sub.fill(Complex64::default());
            psi.fill(Complex64::default());
            for &(r, c, fy, fx) in &bins {
                let s = spectrum[shift.hr_index(fy, fx, big)];
                sub[[r, c]] = s;
                psi[[r, c]] = s * pupil.field.data[[r, c]];
            }
            let mut field = psi.clone();
            fft.inverse(&mut field);
            let meas = &amplitudes[k];
            for (z, &a) in field.iter_mut().zip(meas.iter()) {
                let v = *z * to_lr;
                let m = v.norm();
                err += (m - a) * (m - a);
                *z = if m > 0.0 { v * (a / m) } else { Complex64::new(a, 0.0) };
            }
            fft.forward(&mut field);

            let p_max = bins.iter().map(|&(r, c, _, _)| pupil.field.data[[r, c]].norm_sqr()).fold(0.0, f64::max);
            for &(r, c, fy, fx) in &bins {
                let diff = field[[r, c]] * to_hr - psi[[r, c]];
                let p = pupil.field.data[[r, c]];
                let o = sub[[r, c]];
                if p_max > 0.0 {
                    spectrum[shift.hr_index(fy, fx, big)] += p.conj() * diff * (rcfg.alpha / p_max);
                }
                if rcfg.beta > 0.0 && o_max > 0.0 {
                    pupil.field.data[[r, c]] += o.conj() * diff * (rcfg.beta / o_max);
                }
            }
        }
        per_iteration_error.push(err);

        // P·S is all the data constrains; pin the pupil to unit mean modulus
        if rcfg.beta > 0.0 {
            let m = bins.iter().map(|&(r, c, _, _)| pupil.field.data[[r, c]].norm()).sum::<f64>() / bins.len() as f64;
            if m > 0.0 {
                pupil.field.data.mapv_inplace(|z| z / m);
                spectrum.mapv_inplace(|z| z * m);
            }
        }
    }

    let mut object = spectrum;
    Fft2::new(big).inverse(&mut object);
    object.mapv_inplace(|z| z * (1.0 / (big * big) as f64));
    let leds: Vec<Led> = frames.iter().map(|f| f.led).collect();
    Ok(ReconResult {
        object: ComplexField::new(object, config.hr_pitch())?,
        pupil,
        iterations_run: rcfg.max_iterations,
        per_iteration_error,
        synthetic_na_used: synthetic_na(leds.iter(), grid, config)?,
        shifts,
    })
}

/// Number of shifted pupil disks covering each HR spectrum bin (natural
/// DFT order). Bins that fall outside the HR band are dropped.
pub fn coverage_map(kept: &[Led], grid: &LedGrid, config: &OpticalConfig) -> Result<Array2<u32>> {
    let pupil = make_pupil(config)?;
    let big = config.hr_size as i64;
    let half = big / 2;
    let freqs = pupil.support_freqs();
    let mut map = Array2::<u32>::zeros((config.hr_size, config.hr_size));
    for &led in kept {
        let s = SpectrumShift::new(led, grid, config);
        for &(fy, fx) in &freqs {
            let (y, x) = (fy + s.row, fx + s.col);
            if y > -half && y < half && x > -half && x < half {
                map[s.hr_index(fy, fx, config.hr_size)] += 1;
            }
        }
    }
    Ok(map)
}

/// A straight pixel line, endpoints as `(row, col)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: (f64, f64),
    pub end: (f64, f64),
}

impl Segment {
    pub fn new(start: (f64, f64), end: (f64, f64)) -> Self {
        Self { start, end }
    }
}

/// Bilinear samples along `segment`, one per pixel of length.
pub fn line_profile(image: &Array2<f64>, segment: Segment) -> Result<Vec<f64>> {
    let (h, w) = image.dim();
    let inside = |(r, c): (f64, f64)| r >= 0.0 && c >= 0.0 && r <= (h - 1) as f64 && c <= (w - 1) as f64;
    if h == 0 || w == 0 || !inside(segment.start) || !inside(segment.end) {
        return Err(FpmError::SegmentOutOfBounds(segment.start, segment.end, h, w));
    }
    let (dr, dc) = (segment.end.0 - segment.start.0, segment.end.1 - segment.start.1);
    let steps = dr.hypot(dc).ceil().max(1.0) as usize;
    Ok((0..=steps)
        .map(|i| {
            let t = i as f64 / steps as f64;
            let (r, c) = (segment.start.0 + t * dr, segment.start.1 + t * dc);
            let (r0, c0) = (r.floor() as usize, c.floor() as usize);
            let (r1, c1) = ((r0 + 1).min(h - 1), (c0 + 1).min(w - 1));
            let (fr, fc) = (r - r0 as f64, c - c0 as f64);
            let top = image[[r0, c0]] * (1.0 - fc) + image[[r0, c1]] * fc;
            let bottom = image[[r1, c0]] * (1.0 - fc) + image[[r1, c1]] * fc;
            top * (1.0 - fr) + bottom * fr
        })
        .collect())
}

/// Michelson contrast of the profile; 0 when max + min is 0.
pub fn line_profile_contrast(image: &Array2<f64>, segment: Segment) -> Result<f64> {
    let p = line_profile(image, segment)?;
    let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = p.iter().copied().fold(f64::INFINITY, f64::min);
    if max + min == 0.0 {
        return Ok(0.0);
    }
    Ok((max - min) / (max + min))
}

/// Root-mean-square difference; with `normalize`, divided by the RMS of `b`.
pub fn rmse(a: &Array2<f64>, b: &Array2<f64>, normalize: bool) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(FpmError::ShapeMismatch(a.dim(), b.dim()));
    }
    if a.is_empty() {
        return Err(FpmError::Empty("rmse of empty arrays"));
    }
    let n = a.len() as f64;
    let mse = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    if !normalize {
        return Ok(mse.sqrt());
    }
    let rms_b = (b.iter().map(|y| y * y).sum::<f64>() / n).sqrt();
    Ok(mse.sqrt() / rms_b)
}

/// Least-squares global phase that maps `estimate` onto `reference`.
pub fn global_phase_offset(estimate: &Array2<Complex64>, reference: &Array2<Complex64>) -> Result<f64> {
    if estimate.dim() != reference.dim() {
        return Err(FpmError::ShapeMismatch(estimate.dim(), reference.dim()));
    }
    let inner: Complex64 = reference.iter().zip(estimate.iter()).map(|(r, e)| r * e.conj()).sum();
    Ok(inner.arg())
}

/// `estimate` rotated by its best-fit global phase against `reference`.
pub fn remove_global_phase(estimate: &ComplexField, reference: &ComplexField) -> Result<ComplexField> {
    let phi = global_phase_offset(&estimate.data, &reference.data)?;
    let rot = Complex64::from_polar(1.0, phi);
    ComplexField::new(estimate.data.mapv(|z| z * rot), estimate.pitch)
}

/// Normalized amplitude RMSE of a reconstruction against ground truth.
pub fn amplitude_rmse(estimate: &ComplexField, truth: &ComplexField) -> Result<f64> {
    rmse(&estimate.amplitude(), &truth.amplitude(), true)
}

/// Phase of `estimate` after removing the global phase offset, wrapped to `[−π, π]`.
pub fn aligned_phase(estimate: &ComplexField, truth: &ComplexField) -> Result<Array2<f64>> {
    Ok(remove_global_phase(estimate, truth)?.phase())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::ForwardModel;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> OpticalConfig {
        OpticalConfig {
            hr_size: 64,
            upsample_factor: 4,
            ..OpticalConfig::default()
        }
    }

    fn smooth_object(cfg: &OpticalConfig, seed: u64) -> ComplexField {
        let n = cfg.hr_size;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, c): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
        let tau = std::f64::consts::TAU;
        let amp = Array2::from_shape_fn((n, n), |(r, col)| {
            1.0 - 0.3 * (0.5 + 0.5 * (tau * (2.0 * r as f64 / n as f64 + a)).cos()) * (0.5 + 0.5 * (tau * (3.0 * col as f64 / n as f64 + b)).sin())
        });
        let ph = Array2::from_shape_fn((n, n), |(r, col)| 0.5 * (tau * (r as f64 + 2.0 * col as f64) / n as f64 + c).sin());
        ComplexField::from_amplitude_phase(&amp, Some(&ph), cfg.hr_pitch()).unwrap()
    }

    fn frames_for(object: &ComplexField, grid: &LedGrid, cfg: &OpticalConfig) -> Vec<ReconFrame> {
        let model = ForwardModel::new(object, cfg).unwrap();
        grid.lit()
            .iter()
            .map(|&led| ReconFrame {
                led,
                intensity: model.frame(led, grid).unwrap().pixels,
            })
            .collect()
    }

    #[test]
    fn single_center_frame_is_a_fixpoint() {
        let cfg = small_config();
        let grid = LedGrid::new(1, 1, 4.0, 67.5).unwrap();
        let flat_once = ReconConfig {
            beta: 0.0,
            init: ReconInit::Flat,
            max_iterations: 1,
            ..ReconConfig::default()
        };

        // one sweep from a flat start puts the passband of √frame into the spectrum
        let obj = smooth_object(&cfg, 1);
        let frames = frames_for(&obj, &grid, &cfg);
        let res = epry_reconstruct(&frames, &grid, &cfg, &flat_once).unwrap();
        let n = cfg.lr_size();
        let mut want = frames[0].intensity.mapv(|v| Complex64::new(v.sqrt(), 0.0));
        let fft = Fft2::new(n);
        fft.forward(&mut want);
        let support = make_pupil(&cfg).unwrap().support();
        want.zip_mut_with(&support, |z, &s| if !s { *z = Complex64::default() });
        fft.inverse(&mut want);
        let got = ForwardModel::new(&res.object, &cfg).unwrap().lr_field(Led::CENTER, &grid).unwrap();
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w / (n * n) as f64).norm() < 1e-9);
        }

        // an object inside the passband is recovered with zero mismatch
        let tau = std::f64::consts::TAU;
        let amp = Array2::from_shape_fn((cfg.hr_size, cfg.hr_size), |(r, c)| {
            1.0 + 0.2 * (tau * 2.0 * r as f64 / cfg.hr_size as f64).cos() * (tau * c as f64 / cfg.hr_size as f64).sin()
        });
        let inband = ComplexField::from_amplitude_phase(&amp, None, cfg.hr_pitch()).unwrap();
        let frames = frames_for(&inband, &grid, &cfg);
        let rcfg = ReconConfig { max_iterations: 5, ..flat_once };
        let res = epry_reconstruct(&frames, &grid, &cfg, &rcfg).unwrap();
        assert!(res.final_error() < 1e-20 * res.initial_error().max(1.0));
        assert_eq!(res.pupil, make_pupil(&cfg).unwrap());
        assert!(amplitude_rmse(&res.object, &inband).unwrap() < 1e-9);
    }

    #[test]
    fn beta_zero_leaves_pupil_untouched() {
        let cfg = small_config();
        let grid = LedGrid::new(3, 3, 4.0, 67.5).unwrap();
        let frames = frames_for(&smooth_object(&cfg, 2), &grid, &cfg);
        let rcfg = ReconConfig {
            beta: 0.0,
            max_iterations: 3,
            ..ReconConfig::default()
        };
        let res = epry_reconstruct(&frames, &grid, &cfg, &rcfg).unwrap();
        assert_eq!(res.pupil, make_pupil(&cfg).unwrap());
        assert_eq!(res.per_iteration_error.len(), 3);
        assert_eq!(res.object.size(), cfg.hr_size);
    }

    #[test]
    fn noiseless_roundtrip_reduces_error() {
        let cfg = small_config();
        let grid = LedGrid::new(5, 5, 4.0, 67.5).unwrap();
        for seed in 0..3 {
            let obj = smooth_object(&cfg, seed);
            let frames = frames_for(&obj, &grid, &cfg);
            let res = epry_reconstruct(&frames, &grid, &cfg, &ReconConfig::default()).unwrap();
            assert!(res.final_error() < res.initial_error());
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = small_config();
        let grid = LedGrid::new(3, 3, 4.0, 67.5).unwrap();
        let rc = ReconConfig::default();
        assert!(matches!(epry_reconstruct(&[], &grid, &cfg, &rc), Err(FpmError::Empty(_))));
        let n = cfg.lr_size();
        let ok = ReconFrame { led: Led::CENTER, intensity: Array2::ones((n, n)) };
        let wrong_size = ReconFrame { led: Led::CENTER, intensity: Array2::ones((n + 1, n)) };
        assert!(matches!(epry_reconstruct(&[wrong_size], &grid, &cfg, &rc), Err(FpmError::DataMismatch(_))));
        let outside = ReconFrame { led: Led::new(5, 0), ..ok.clone() };
        assert!(matches!(epry_reconstruct(&[outside], &grid, &cfg, &rc), Err(FpmError::LedOutsideGrid(_))));
        assert!(matches!(epry_reconstruct(&[ok.clone(), ok.clone()], &grid, &cfg, &rc), Err(FpmError::DataMismatch(_))));
        let bad = ReconConfig { alpha: 0.0, ..ReconConfig::default() };
        assert!(epry_reconstruct(&[ok.clone()], &grid, &cfg, &bad).is_err());
        let coarse = OpticalConfig { upsample_factor: 2, ..cfg };
        let wide = LedGrid::new(19, 19, 4.0, 67.5).unwrap();
        let far = ReconFrame {
            led: Led::new(9, 9),
            intensity: Array2::ones((coarse.lr_size(), coarse.lr_size())),
        };
        assert!(matches!(epry_reconstruct(&[far], &wide, &coarse, &rc), Err(FpmError::ExceedsModelBand(_))));
    }

    #[test]
    fn prepare_frame_pipeline() {
        let grid = LedGrid::new(19, 19, 4.0, 67.5).unwrap();
        let led = Led::new(9, 0);
        let raw = RawFrame::new(Array2::from_elem((2, 2), 1101.0), led);
        let f = prepare_frame(&raw, &grid, 101.0, 10.0).unwrap();
        let k = crate::sim::falloff_factor(led, &grid);
        assert_abs_diff_eq!(f.intensity[[0, 0]], 1000.0 / k / 10.0, epsilon = 1e-9);
        let dim = RawFrame::new(Array2::from_elem((2, 2), 50.0), led);
        assert_eq!(prepare_frame(&dim, &grid, 101.0, 10.0).unwrap().intensity[[1, 1]], 0.0);
    }

    #[test]
    fn coverage_examples() {
        let cfg = OpticalConfig::default();
        let grid = LedGrid::new(19, 19, 4.0, 67.5).unwrap();
        let area = make_pupil(&cfg).unwrap().support_area() as u32;
        let center = coverage_map(&[Led::CENTER], &grid, &cfg).unwrap();
        assert_eq!(center.iter().sum::<u32>(), area);
        assert_eq!(center[[0, 0]], 1);
        assert_eq!(center[[128, 128]], 0);

        let all: Vec<Led> = grid.lit().iter().copied().collect();
        let full = coverage_map(&all, &grid, &cfg).unwrap();
        assert_eq!(full.iter().map(|&v| v as u64).sum::<u64>(), all.len() as u64 * area as u64);
    }

    #[test]
    fn contrast_examples() {
        let flat = Array2::from_elem((4, 8), 0.7);
        let seg = Segment::new((1.0, 0.0), (1.0, 7.0));
        assert_eq!(line_profile_contrast(&flat, seg).unwrap(), 0.0);
        let bars = Array2::from_shape_fn((4, 8), |(_, c)| (c % 2) as f64);
        assert_abs_diff_eq!(line_profile_contrast(&bars, seg).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(line_profile_contrast(&Array2::zeros((4, 8)), seg).unwrap(), 0.0);
        assert!(line_profile_contrast(&flat, Segment::new((0.0, 0.0), (4.0, 0.0))).is_err());
    }

    #[test]
    fn rmse_examples() {
        let a = Array2::from_shape_fn((5, 5), |(r, c)| (r * c) as f64);
        assert_eq!(rmse(&a, &a, false).unwrap(), 0.0);
        assert_abs_diff_eq!(rmse(&a, &a.mapv(|v| v + 0.25), false).unwrap(), 0.25, epsilon = 1e-12);
        assert!(rmse(&a, &Array2::zeros((4, 5)), false).is_err());
    }

    #[test]
    fn rmse_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a: Array2<f64> = Array2::from_shape_fn((8, 8), |_| rng.random_range(-2.0..2.0));
            let b: Array2<f64> = Array2::from_shape_fn((8, 8), |_| rng.random_range(-2.0..2.0));
            let mut acc = 0.0f64;
            let mut norm = 0.0f64;
            for r in 0..8 {
                for c in 0..8 {
                    acc += (a[[r, c]] - b[[r, c]]).powi(2);
                    norm += b[[r, c]].powi(2);
                }
            }
            assert_abs_diff_eq!(rmse(&a, &b, false).unwrap(), (acc / 64.0).sqrt(), epsilon = 1e-12);
            assert_abs_diff_eq!(rmse(&a, &b, true).unwrap(), (acc / norm).sqrt(), epsilon = 1e-12);
        }
    }

    #[test]
    fn global_phase_is_removed() {
        let cfg = small_config();
        let obj = smooth_object(&cfg, 5);
        let rotated = ComplexField::new(obj.data.mapv(|z| z * Complex64::from_polar(1.0, 1.2)), obj.pitch).unwrap();
        let back = remove_global_phase(&rotated, &obj).unwrap();
        for (x, y) in back.data.iter().zip(obj.data.iter()) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn modulus_replacement_is_exact(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 8;
            let fft = Fft2::new(n);
            let psi = Array2::from_shape_fn((n, n), |_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let meas = Array2::from_shape_fn((n, n), |_| rng.random_range(0.0..4.0f64));
            let replaced = Array2::from_shape_fn((n, n), |(r, c)| {
                let z = psi[[r, c]];
                let a = meas[[r, c]].sqrt();
                if z.norm() > 0.0 { z * (a / z.norm()) } else { Complex64::new(a, 0.0) }
            });
            let mut spec = replaced.clone();
            fft.forward(&mut spec);
            fft.inverse(&mut spec);
            for (z, m) in spec.iter().zip(meas.iter()) {
                prop_assert!(((z / (n * n) as f64).norm() - m.sqrt()).abs() < 1e-9);
            }
        }

        #[test]
        fn global_phase_does_not_change_frames(phi in -3.0f64..3.0) {
            let cfg = small_config();
            let grid = LedGrid::new(3, 3, 4.0, 67.5).unwrap();
            let obj = smooth_object(&cfg, 9);
            let rot = ComplexField::new(obj.data.mapv(|z| z * Complex64::from_polar(1.0, phi)), obj.pitch).unwrap();
            let a = frames_for(&obj, &grid, &cfg);
            let b = frames_for(&rot, &grid, &cfg);
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!(rmse(&x.intensity, &y.intensity, true).unwrap() < 1e-10);
            }
        }

        #[test]
        fn coverage_mass_is_count_times_area(n_keep in 1usize..25) {
            let cfg = OpticalConfig::default();
            let grid = LedGrid::new(5, 5, 4.0, 67.5).unwrap();
            let kept: Vec<Led> = grid.lit().iter().copied().take(n_keep).collect();
            let map = coverage_map(&kept, &grid, &cfg).unwrap();
            let area = make_pupil(&cfg).unwrap().support_area() as u64;
            prop_assert_eq!(map.iter().map(|&v| v as u64).sum::<u64>(), n_keep as u64 * area);
        }
    }
}
