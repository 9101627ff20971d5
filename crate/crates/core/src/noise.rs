//! Per-frame noise estimation and PSNR scoring.
//!
//! Two noise estimates are formed for every frame: a model-based one
//! (Poisson or Gaussian standard deviation plus the dark level) and the
//! mean of a few local background boxes, which also picks up stray light.
//! The larger of the two is used as the noise level `I_n`, and
//!
//! ```text
//! PSNR = 20 log10((I_max - I_n) / I_n)
//! ```
//!
//! with `I_max` the brightest pixel inside the region of interest. All
//! scoring happens on cosine-compensated frames.

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{FpmError, Result};
use crate::optics::LedGrid;
use crate::sim::{falloff_factor, NoiseKind, RawFrame};

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn new(row: usize, col: usize, height: usize, width: usize) -> Self {
        Self { row, col, height, width }
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn fits(&self, dim: (usize, usize)) -> bool {
        self.height > 0 && self.width > 0 && self.row + self.height <= dim.0 && self.col + self.width <= dim.1
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.row < other.row + other.height
            && other.row < self.row + self.height
            && self.col < other.col + other.width
            && other.col < self.col + self.width
    }

    fn view<'a>(&self, a: &'a Array2<f64>) -> ArrayView2<'a, f64> {
        a.slice(s![self.row..self.row + self.height, self.col..self.col + self.width])
    }

    fn check(&self, dim: (usize, usize)) -> Result<()> {
        if self.fits(dim) {
            Ok(())
        } else {
            Err(FpmError::RectOutOfBounds(*self, dim.0, dim.1))
        }
    }
}

/// Centered ROI covering `fraction` of each frame dimension.
pub fn centered_roi(dim: (usize, usize), fraction: f64) -> Rect {
    let h = ((dim.0 as f64 * fraction).round() as usize).clamp(1, dim.0);
    let w = ((dim.1 as f64 * fraction).round() as usize).clamp(1, dim.1);
    Rect::new((dim.0 - h) / 2, (dim.1 - w) / 2, h, w)
}

/// Four corner boxes of side `fraction · min(dim)`, inset from the border.
pub fn corner_boxes(dim: (usize, usize), fraction: f64, inset: usize) -> Vec<Rect> {
    let side = ((dim.0.min(dim.1) as f64 * fraction).round() as usize).max(1);
    let far_r = dim.0.saturating_sub(inset + side);
    let far_c = dim.1.saturating_sub(inset + side);
    vec![
        Rect::new(inset, inset, side, side),
        Rect::new(inset, far_c, side, side),
        Rect::new(far_r, inset, side, side),
        Rect::new(far_r, far_c, side, side),
    ]
}

/// Global mean of all pixels of all dark frames.
pub fn estimate_dark(frames: &[RawFrame]) -> Result<f64> {
    let (sum, count) = frames
        .iter()
        .fold((0.0, 0usize), |(s, n), f| (s + f.pixels.sum(), n + f.pixels.len()));
    if count == 0 {
        return Err(FpmError::Empty("dark frames"));
    }
    Ok(sum / count as f64)
}

/// Divides out the cos⁴θ falloff of the frame's LED.
pub fn compensate_illumination(mut frame: RawFrame, grid: &LedGrid) -> Result<RawFrame> {
    if frame.preprocessed {
        return Err(FpmError::AlreadyCompensated(frame.led));
    }
    let k = falloff_factor(frame.led, grid);
    frame.pixels.mapv_inplace(|v| v / k);
    frame.preprocessed = true;
    Ok(frame)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonSigma {
    pub sigma: f64,
    /// No pixel rises above the dark level.
    pub no_signal: bool,
}

/// Half of the largest per-pixel Poisson deviation `√(I − I_D)`.
pub fn poisson_sigma(pixels: &Array2<f64>, dark: f64) -> PoissonSigma {
    let peak = pixels.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    if !(peak > dark) {
        return PoissonSigma { sigma: 0.0, no_signal: true };
    }
    PoissonSigma {
        sigma: 0.5 * (peak - dark).sqrt(),
        no_signal: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianSigma {
    pub sigma: f64,
    /// Only one calibration frame was given; the estimate is noisier.
    pub single_frame: bool,
}

/// Standard deviation over pixels of the per-pixel mean of flat, object-free
/// bright frames. The dark level only shifts the mean and drops out.
pub fn gaussian_sigma(bright_frames: &[RawFrame], _dark: f64) -> Result<GaussianSigma> {
    let first = bright_frames.first().ok_or(FpmError::Empty("bright calibration frames"))?;
    let mut mean = Array2::<f64>::zeros(first.dim());
    for f in bright_frames {
        if f.dim() != mean.dim() {
            return Err(FpmError::ShapeMismatch(mean.dim(), f.dim()));
        }
        mean += &f.pixels;
    }
    mean /= bright_frames.len() as f64;
    Ok(GaussianSigma {
        sigma: mean.std(0.0),
        single_frame: bright_frames.len() == 1,
    })
}

/// Mean pixel value over the union of background boxes.
pub fn background_noise(pixels: &Array2<f64>, boxes: &[Rect]) -> Result<f64> {
    if boxes.is_empty() {
        return Err(FpmError::Empty("background boxes"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut covered = Array2::from_elem(pixels.dim(), false);
    for b in boxes {
        b.check(pixels.dim())?;
        for r in b.row..b.row + b.height {
            for c in b.col..b.col + b.width {
                if !covered[[r, c]] {
                    covered[[r, c]] = true;
                    sum += pixels[[r, c]];
                    count += 1;
                }
            }
        }
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseMethod {
    Mle,
    Background,
}

impl std::fmt::Display for NoiseMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NoiseMethod::Mle => "MLE",
            NoiseMethod::Background => "Background",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseEstimate {
    pub dark_mean: f64,
    pub poisson_sigma: Option<f64>,
    pub gaussian_sigma: Option<f64>,
    pub background_level: f64,
    /// `I_n`, the noise level used for PSNR.
    pub chosen: f64,
    pub method: NoiseMethod,
}

impl NoiseEstimate {
    /// Model-based estimate `σ̄ + I_D`.
    pub fn mle_level(&self) -> f64 {
        self.poisson_sigma.or(self.gaussian_sigma).unwrap_or(0.0) + self.dark_mean
    }
}

/// Which likelihood model supplies the σ̄ term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MlePath {
    Poisson,
    /// σ̄_G measured once from calibration frames.
    Gaussian { sigma: f64 },
    /// No stochastic noise; only the dark offset remains.
    None,
}

impl MlePath {
    pub fn for_kind(kind: NoiseKind, gaussian_sigma: Option<f64>) -> Self {
        match kind {
            NoiseKind::Poisson16 => MlePath::Poisson,
            NoiseKind::Gaussian8 => MlePath::Gaussian {
                sigma: gaussian_sigma.unwrap_or(0.0),
            },
            NoiseKind::Noiseless => MlePath::None,
        }
    }
}

/// Larger of the model-based and local-background noise levels.
pub fn combined_noise(pixels: &Array2<f64>, path: MlePath, dark: f64, boxes: &[Rect]) -> Result<NoiseEstimate> {
    let background = background_noise(pixels, boxes)?;
    let (poisson, gaussian) = match path {
        MlePath::Poisson => (Some(poisson_sigma(pixels, dark).sigma), None),
        MlePath::Gaussian { sigma } => (None, Some(sigma)),
        MlePath::None => (None, None),
    };
    let mle = poisson.or(gaussian).unwrap_or(0.0) + dark;
    let (chosen, method) = if mle >= background {
        (mle, NoiseMethod::Mle)
    } else {
        (background, NoiseMethod::Background)
    };
    Ok(NoiseEstimate {
        dark_mean: dark,
        poisson_sigma: poisson,
        gaussian_sigma: gaussian,
        background_level: background,
        chosen: chosen.max(0.0),
        method,
    })
}

/// PSNR with its two sentinels kept out of arithmetic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Db(f64),
    /// `I_n = 0`: nothing to compare against, always kept.
    Infinite,
    /// `I_max ≤ I_n`: the frame is pure noise, always skipped.
    PureNoise,
}

impl Psnr {
    pub fn passes(&self, threshold_db: f64) -> bool {
        match *self {
            Psnr::Db(v) => v >= threshold_db,
            Psnr::Infinite => true,
            Psnr::PureNoise => false,
        }
    }

    pub fn db(&self) -> Option<f64> {
        match *self {
            Psnr::Db(v) => Some(v),
            _ => None,
        }
    }

    /// Value for display and CSV output only.
    pub fn display_value(&self) -> f64 {
        match *self {
            Psnr::Db(v) => v,
            Psnr::Infinite => f64::INFINITY,
            Psnr::PureNoise => f64::NEG_INFINITY,
        }
    }
}

impl std::fmt::Display for Psnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            Psnr::Db(v) => write!(f, "{v:.4}"),
            Psnr::Infinite => f.write_str("inf"),
            Psnr::PureNoise => f.write_str("-inf"),
        }
    }
}

pub fn psnr_from_levels(i_max: f64, i_n: f64) -> Psnr {
    if i_n <= 0.0 {
        Psnr::Infinite
    } else if i_max <= i_n {
        Psnr::PureNoise
    } else {
        Psnr::Db(20.0 * ((i_max - i_n) / i_n).log10())
    }
}

/// Returns the PSNR and `I_max` (brightest pixel inside `roi`).
pub fn psnr(pixels: &Array2<f64>, roi: Rect, noise: &NoiseEstimate) -> Result<(Psnr, f64)> {
    roi.check(pixels.dim())?;
    let i_max = roi.view(pixels).iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    Ok((psnr_from_levels(i_max, noise.chosen), i_max))
}

/// Gaussian surrogate of the Poisson negative log-likelihood,
/// `Σ (I − Ī)² / (2σ_p²)`.
pub fn poisson_nll(measured: &Array2<f64>, predicted: &Array2<f64>, sigma_p: f64) -> Result<f64> {
    if measured.dim() != predicted.dim() {
        return Err(FpmError::ShapeMismatch(measured.dim(), predicted.dim()));
    }
    if let Some(((r, c), _)) = predicted.indexed_iter().find(|(_, &v)| !(v > 0.0)) {
        return Err(FpmError::NonPositivePrediction(r, c));
    }
    let var2 = 2.0 * sigma_p * sigma_p;
    Ok(ndarray::Zip::from(measured)
        .and(predicted)
        .fold(0.0, |acc, &i, &p| acc + (i - p) * (i - p) / var2))
}

/// Sum of squared errors; the Gaussian likelihood up to constants.
pub fn gaussian_sse(measured: &Array2<f64>, predicted: &Array2<f64>) -> Result<f64> {
    if measured.dim() != predicted.dim() {
        return Err(FpmError::ShapeMismatch(measured.dim(), predicted.dim()));
    }
    Ok(ndarray::Zip::from(measured).and(predicted).fold(0.0, |acc, &i, &p| acc + (i - p) * (i - p)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScorerOptions {
    /// ROI side as a fraction of the frame side.
    pub roi_fraction: f64,
    /// Background box side as a fraction of the frame side.
    pub box_fraction: f64,
    pub box_inset: usize,
}

impl Default for ScorerOptions {
    fn default() -> Self {
        Self {
            roi_fraction: 0.5,
            box_fraction: 0.125,
            box_inset: 2,
        }
    }
}

/// Scores raw frames against one calibrated noise model.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrScorer {
    pub path: MlePath,
    pub dark: f64,
    pub roi: Rect,
    pub boxes: Vec<Rect>,
}

impl SnrScorer {
    pub fn new(path: MlePath, dark: f64, frame_dim: (usize, usize), options: &ScorerOptions) -> Result<Self> {
        let roi = centered_roi(frame_dim, options.roi_fraction);
        let boxes = corner_boxes(frame_dim, options.box_fraction, options.box_inset);
        Self::with_regions(path, dark, frame_dim, roi, boxes)
    }

    pub fn with_regions(path: MlePath, dark: f64, frame_dim: (usize, usize), roi: Rect, boxes: Vec<Rect>) -> Result<Self> {
        roi.check(frame_dim)?;
        if boxes.is_empty() {
            return Err(FpmError::Empty("background boxes"));
        }
        for b in &boxes {
            b.check(frame_dim)?;
            if b.intersects(&roi) {
                return Err(FpmError::InvalidConfig(format!("background box {b:?} overlaps the ROI")));
            }
        }
        Ok(Self { path, dark, roi, boxes })
    }

    /// Compensates a copy of `raw` and scores it.
    pub fn score(&self, raw: &RawFrame, grid: &LedGrid) -> Result<SnrRecord> {
        let frame = if raw.preprocessed {
            raw.clone()
        } else {
            compensate_illumination(raw.clone(), grid)?
        };
        let estimate = combined_noise(&frame.pixels, self.path, self.dark, &self.boxes)?;
        let (score, i_max) = psnr(&frame.pixels, self.roi, &estimate)?;
        Ok(SnrRecord {
            led: raw.led,
            psnr: score,
            estimate,
            i_max,
            roi: self.roi,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrRecord {
    pub led: crate::optics::Led,
    pub psnr: Psnr,
    pub estimate: NoiseEstimate,
    pub i_max: f64,
    pub roi: Rect,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SnrReport {
    pub records: Vec<SnrRecord>,
}

impl SnrReport {
    pub fn get(&self, led: crate::optics::Led) -> Option<&SnrRecord> {
        self.records.iter().find(|r| r.led == led)
    }
}
