//! Forward model: angled-illumination LR frames, cos⁴θ falloff, sensor noise.

use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{FpmError, Result};
use crate::fft::{bin_of, Fft2};
use crate::optics::{make_pupil, ComplexField, Led, LedGrid, OpticalConfig, Pupil, SpectrumShift};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseKind {
    Poisson16,
    Gaussian8,
    Noiseless,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub bit_depth: u32,
    /// Dark-current offset in counts, constant over the sensor.
    pub dark_mean: f64,
    /// Read-noise σ in counts (Gaussian8).
    pub gaussian_sigma: f64,
    /// Counts per unit object intensity. For Poisson16 this is also the
    /// expected photon count per unit intensity.
    pub photon_scale: f64,
    /// Stray light in counts added to illuminated frames (shot-noise limited
    /// for Poisson16, a plain offset otherwise).
    pub stray_level: f64,
    /// Extra stray light on a top-left corner patch of illuminated frames.
    pub stray_patch_level: f64,
    /// Side of the stray patch as a fraction of the frame side.
    pub stray_patch_fraction: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::poisson16(101.0, 52_000.0)
    }
}

impl NoiseModel {
    pub fn poisson16(dark_mean: f64, photon_scale: f64) -> Self {
        Self {
            kind: NoiseKind::Poisson16,
            bit_depth: 16,
            dark_mean,
            gaussian_sigma: 0.0,
            photon_scale,
            stray_level: 0.0,
            stray_patch_level: 0.0,
            stray_patch_fraction: 0.25,
        }
    }

    pub fn gaussian8(dark_mean: f64, sigma: f64, gain: f64) -> Self {
        Self {
            kind: NoiseKind::Gaussian8,
            bit_depth: 8,
            dark_mean,
            gaussian_sigma: sigma,
            photon_scale: gain,
            ..Self::poisson16(0.0, 1.0)
        }
    }

    pub fn noiseless(bit_depth: u32, dark_mean: f64, gain: f64) -> Self {
        Self {
            kind: NoiseKind::Noiseless,
            bit_depth,
            dark_mean,
            gaussian_sigma: 0.0,
            photon_scale: gain,
            ..Self::poisson16(0.0, 1.0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(FpmError::InvalidConfig(m.to_string()));
        if self.bit_depth != 8 && self.bit_depth != 16 {
            return bad("bit_depth must be 8 or 16");
        }
        if !(self.dark_mean >= 0.0) {
            return bad("dark_mean must be non-negative");
        }
        if self.kind == NoiseKind::Gaussian8 && !(self.gaussian_sigma > 0.0) {
            return bad("gaussian_sigma must be positive for Gaussian8");
        }
        if !(self.photon_scale > 0.0) {
            return bad("photon_scale must be positive");
        }
        if self.stray_level < 0.0 || self.stray_patch_level < 0.0 {
            return bad("stray light levels must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.stray_patch_fraction) {
            return bad("stray_patch_fraction must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn full_scale(&self) -> f64 {
        ((1u64 << self.bit_depth) - 1) as f64
    }
}

/// One captured (or simulated) intensity image.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFrame {
    pub pixels: Array2<f64>,
    pub led: Led,
    /// Set once the frame has been cosine-compensated.
    pub preprocessed: bool,
    pub exposure_id: u64,
}

impl RawFrame {
    pub fn new(pixels: Array2<f64>, led: Led) -> Self {
        Self {
            pixels,
            led,
            preprocessed: false,
            exposure_id: 0,
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.pixels.dim()
    }
}

/// Noiseless imaging of one object under every LED of a grid.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    config: OpticalConfig,
    pupil: Pupil,
    lr_fft: Fft2,
    spectrum: Array2<Complex64>,
}

impl ForwardModel {
    pub fn new(object: &ComplexField, config: &OpticalConfig) -> Result<Self> {
        Self::with_pupil(object, config, make_pupil(config)?)
    }

    pub fn with_pupil(object: &ComplexField, config: &OpticalConfig, pupil: Pupil) -> Result<Self> {
        config.validate()?;
        let n = config.hr_size;
        if object.data.dim() != (n, n) {
            return Err(FpmError::ShapeMismatch(object.data.dim(), (n, n)));
        }
        if pupil.size() != config.lr_size() {
            return Err(FpmError::ShapeMismatch(pupil.field.data.dim(), (config.lr_size(), config.lr_size())));
        }
        let mut spectrum = object.data.clone();
        Fft2::new(n).forward(&mut spectrum);
        Ok(Self {
            config: config.clone(),
            lr_fft: Fft2::new(config.lr_size()),
            pupil,
            spectrum,
        })
    }

    pub fn pupil(&self) -> &Pupil {
        &self.pupil
    }

    /// Complex LR exit field for one LED.
    pub fn lr_field(&self, led: Led, grid: &LedGrid) -> Result<Array2<Complex64>> {
        if !grid.contains(led) {
            return Err(FpmError::LedOutsideGrid(led));
        }
        let shift = SpectrumShift::new(led, grid, &self.config);
        let big = self.config.hr_size;
        let small = self.config.lr_size();
        let half = (big / 2) as i64;
        let mut sub = Array2::<Complex64>::zeros((small, small));
        for ((r, c), p) in self.pupil.field.data.indexed_iter() {
            if p.norm_sqr() == 0.0 {
                continue;
            }
            let fy = crate::fft::signed_freq(r, small) + shift.row;
            let fx = crate::fft::signed_freq(c, small) + shift.col;
            if fy <= -half || fy >= half || fx <= -half || fx >= half {
                return Err(FpmError::ExceedsModelBand(led));
            }
            sub[[r, c]] = self.spectrum[[bin_of(fy, big), bin_of(fx, big)]] * p;
        }
        self.lr_fft.inverse(&mut sub);
        let scale = 1.0 / (big * big) as f64;
        sub.mapv_inplace(|z| z * scale);
        Ok(sub)
    }

    /// Unquantized intensity `|field|²`, object intensity units.
    pub fn frame(&self, led: Led, grid: &LedGrid) -> Result<RawFrame> {
        Ok(RawFrame::new(self.lr_field(led, grid)?.mapv(|z| z.norm_sqr()), led))
    }
}

pub fn simulate_noiseless(object: &ComplexField, led: Led, grid: &LedGrid, config: &OpticalConfig) -> Result<RawFrame> {
    ForwardModel::new(object, config)?.frame(led, grid)
}

/// cos⁴θ intensity factor of an LED.
pub fn falloff_factor(led: Led, grid: &LedGrid) -> f64 {
    grid.cos_theta(led).powi(4)
}

pub fn apply_falloff(mut frame: RawFrame, grid: &LedGrid) -> RawFrame {
    let k = falloff_factor(frame.led, grid);
    frame.pixels.mapv_inplace(|v| v * k);
    frame
}

/// Mixes the experiment seed with a stream tag so each LED (and each
/// calibration frame) gets an independent, order-free noise realization.
pub fn substream_seed(seed: u64, kind: u64, a: i64, b: i64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let mut h = splitmix(seed);
    for v in [kind, a as u64, b as u64] {
        h = splitmix(h ^ v);
    }
    h
}

const STREAM_LED: u64 = 1;
const STREAM_DARK: u64 = 2;
const STREAM_FLAT: u64 = 3;

fn quantize(v: f64, full_scale: f64) -> f64 {
    v.round().clamp(0.0, full_scale)
}

fn sample_frame(signal: &Array2<f64>, model: &NoiseModel, stream: u64, illuminated: bool) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let full = model.full_scale();
    let (h, w) = signal.dim();
    let patch = (model.stray_patch_fraction * h.min(w) as f64).round() as usize;
    let normal = Normal::new(0.0, model.gaussian_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    Array2::from_shape_fn((h, w), |(r, c)| {
        let mut stray = 0.0;
        if illuminated {
            stray += model.stray_level;
            if r < patch && c < patch {
                stray += model.stray_patch_level;
            }
        }
        // stray light is photons too, so it carries shot noise
        let (expected, offset) = match model.kind {
            NoiseKind::Poisson16 => ((signal[[r, c]] * model.photon_scale).max(0.0) + stray, model.dark_mean),
            _ => ((signal[[r, c]] * model.photon_scale).max(0.0), model.dark_mean + stray),
        };
        let v = match model.kind {
            NoiseKind::Noiseless => expected + offset,
            NoiseKind::Gaussian8 => expected + normal.sample(&mut rng) + offset,
            NoiseKind::Poisson16 => {
                let photons = if expected > 0.0 {
                    Poisson::new(expected).expect("positive rate").sample(&mut rng)
                } else {
                    0.0
                };
                photons + offset
            }
        };
        quantize(v, full)
    })
}

/// Scales intensity to counts, adds sensor noise, rounds and clips.
/// Deterministic in `(seed, frame.led)`.
pub fn add_noise(frame: &RawFrame, model: &NoiseModel, seed: u64) -> RawFrame {
    let stream = substream_seed(seed, STREAM_LED, frame.led.row as i64, frame.led.col as i64);
    RawFrame {
        pixels: sample_frame(&frame.pixels, model, stream, true),
        led: frame.led,
        preprocessed: false,
        exposure_id: stream,
    }
}

/// Frames with no object and no illumination.
pub fn capture_dark_frames(model: &NoiseModel, size: usize, count: usize, seed: u64) -> Result<Vec<RawFrame>> {
    if count == 0 {
        return Err(FpmError::Empty("dark frame count"));
    }
    let zero = Array2::zeros((size, size));
    Ok((0..count)
        .map(|i| {
            let stream = substream_seed(seed, STREAM_DARK, i as i64, 0);
            RawFrame {
                pixels: sample_frame(&zero, model, stream, false),
                led: Led::CENTER,
                preprocessed: false,
                exposure_id: stream,
            }
        })
        .collect())
}

/// Flat bright-field frames without an object (Gaussian σ calibration).
pub fn capture_flat_frames(model: &NoiseModel, size: usize, intensity: f64, count: usize, seed: u64) -> Result<Vec<RawFrame>> {
    if count == 0 {
        return Err(FpmError::Empty("flat frame count"));
    }
    let flat = Array2::from_elem((size, size), intensity);
    Ok((0..count)
        .map(|i| {
            let stream = substream_seed(seed, STREAM_FLAT, i as i64, 0);
            RawFrame {
                pixels: sample_frame(&flat, model, stream, true),
                led: Led::CENTER,
                preprocessed: false,
                exposure_id: stream,
            }
        })
        .collect())
}

/// Noiseless frame → falloff → sensor for one LED.
pub fn capture(model: &ForwardModel, led: Led, grid: &LedGrid, noise: &NoiseModel, seed: u64) -> Result<RawFrame> {
    let frame = apply_falloff(model.frame(led, grid)?, grid);
    Ok(add_noise(&frame, noise, seed))
}
