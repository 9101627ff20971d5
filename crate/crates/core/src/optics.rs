//! Microscope geometry, LED array layout and aperture math.
//!
//! LED indices are centered: `(0, 0)` sits on the optical axis and the
//! grid spans `-(rows-1)/2 ..= (rows-1)/2`. The first index (`row`) offsets
//! the LED along x, the second (`col`) along y.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{FpmError, Result};
use crate::fft::{bin_of, signed_freq};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Led {
    pub row: i32,
    pub col: i32,
}

impl Led {
    pub const CENTER: Led = Led { row: 0, col: 0 };

    pub fn new(row: i32, col: i32) -> Self {
        Self { row, col }
    }
}

impl std::fmt::Display for Led {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpticalConfig {
    /// Illumination wavelength in µm.
    pub wavelength: f64,
    pub objective_na: f64,
    pub magnification: f64,
    /// Camera pixel size in µm.
    pub camera_pixel: f64,
    pub upsample_factor: usize,
    /// High-resolution object size in pixels (square).
    pub hr_size: usize,
}

impl Default for OpticalConfig {
    fn default() -> Self {
        Self {
            wavelength: 0.63113,
            objective_na: 0.1,
            magnification: 4.0,
            camera_pixel: 6.5,
            upsample_factor: 4,
            hr_size: 256,
        }
    }
}

impl OpticalConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(FpmError::InvalidConfig(m.to_string()));
        if !(self.objective_na > 0.0 && self.objective_na < 1.0) {
            return bad("objective_na must lie in (0, 1)");
        }
        if !(self.wavelength > 0.0) {
            return bad("wavelength must be positive");
        }
        if !(self.magnification > 0.0) || !(self.camera_pixel > 0.0) {
            return bad("magnification and camera_pixel must be positive");
        }
        if self.upsample_factor < 2 {
            return bad("upsample_factor must be at least 2");
        }
        if self.hr_size == 0 || self.hr_size % self.upsample_factor != 0 {
            return bad("hr_size must be a positive multiple of upsample_factor");
        }
        Ok(())
    }

    pub fn lr_size(&self) -> usize {
        self.hr_size / self.upsample_factor
    }

    /// Low-resolution pixel pitch referred to the object plane, µm.
    pub fn lr_pitch(&self) -> f64 {
        self.camera_pixel / self.magnification
    }

    pub fn hr_pitch(&self) -> f64 {
        self.lr_pitch() / self.upsample_factor as f64
    }

    /// Spacing of one spectrum bin in µm⁻¹ (identical on the LR and HR grids).
    pub fn freq_step(&self) -> f64 {
        1.0 / (self.lr_size() as f64 * self.lr_pitch())
    }

    /// NA equivalent of one spectrum bin.
    pub fn na_per_bin(&self) -> f64 {
        self.freq_step() * self.wavelength
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedGrid {
    pub rows: u32,
    pub cols: u32,
    /// LED spacing in mm.
    pub pitch: f64,
    /// LED plane distance above the sample in mm.
    pub height: f64,
    /// Lateral offset of the array center from the optical axis, mm.
    pub center_offset: (f64, f64),
    /// Lattice step of the lit set; `d > 1` after sparse decimation.
    pub step: i32,
    lit: BTreeSet<Led>,
}

impl LedGrid {
    /// Fully lit grid with no center offset.
    pub fn new(rows: u32, cols: u32, pitch: f64, height: f64) -> Result<Self> {
        if rows % 2 == 0 || cols % 2 == 0 || rows == 0 || cols == 0 {
            return Err(FpmError::InvalidConfig(format!("LED grid must have odd dimensions, got {rows}x{cols}")));
        }
        if !(pitch > 0.0) || !(height > 0.0) {
            return Err(FpmError::InvalidConfig("LED pitch and height must be positive".into()));
        }
        let mut grid = Self {
            rows,
            cols,
            pitch,
            height,
            center_offset: (0.0, 0.0),
            step: 1,
            lit: BTreeSet::new(),
        };
        grid.lit = grid.all_leds().collect();
        Ok(grid)
    }

    pub fn with_center_offset(mut self, offset: (f64, f64)) -> Self {
        self.center_offset = offset;
        self
    }

    pub fn half_rows(&self) -> i32 {
        (self.rows as i32 - 1) / 2
    }

    pub fn half_cols(&self) -> i32 {
        (self.cols as i32 - 1) / 2
    }

    pub fn contains(&self, led: Led) -> bool {
        led.row.abs() <= self.half_rows() && led.col.abs() <= self.half_cols()
    }

    pub fn all_leds(&self) -> impl Iterator<Item = Led> + '_ {
        let (hr, hc) = (self.half_rows(), self.half_cols());
        (-hr..=hr).flat_map(move |r| (-hc..=hc).map(move |c| Led::new(r, c)))
    }

    pub fn full_count(&self) -> usize {
        (self.rows * self.cols) as usize
    }

    pub fn lit(&self) -> &BTreeSet<Led> {
        &self.lit
    }

    pub fn is_lit(&self, led: Led) -> bool {
        self.lit.contains(&led)
    }

    pub fn with_lit(mut self, lit: impl IntoIterator<Item = Led>) -> Result<Self> {
        let lit: BTreeSet<Led> = lit.into_iter().collect();
        if let Some(bad) = lit.iter().find(|l| !self.contains(**l)) {
            return Err(FpmError::LedOutsideGrid(*bad));
        }
        self.lit = lit;
        Ok(self)
    }

    /// Keeps every `d`-th LED of the lit set along both axes, centered on
    /// the axis LED. The effective pitch becomes `d * pitch`.
    pub fn decimated(&self, d: i32) -> Self {
        let d = d.max(1);
        let mut out = self.clone();
        out.lit = self.lit.iter().copied().filter(|l| l.row % d == 0 && l.col % d == 0).collect();
        out.step = self.step * d;
        out
    }

    /// Square ring index of an LED in lattice units.
    pub fn ring(&self, led: Led) -> i32 {
        led.row.abs().max(led.col.abs()) / self.step.max(1)
    }

    fn lateral_offset(&self, led: Led) -> (f64, f64) {
        (
            led.row as f64 * self.pitch + self.center_offset.0,
            led.col as f64 * self.pitch + self.center_offset.1,
        )
    }

    /// Cosine of the polar illumination angle.
    pub fn cos_theta(&self, led: Led) -> f64 {
        let (x, y) = self.lateral_offset(led);
        self.height / (x * x + y * y + self.height * self.height).sqrt()
    }
}

/// Direction sines `(sinθx, sinθy)` of the plane wave from one LED.
pub fn illumination_wavevector(led: Led, grid: &LedGrid) -> (f64, f64) {
    let (x, y) = grid.lateral_offset(led);
    let r = (x * x + y * y + grid.height * grid.height).sqrt();
    (x / r, y / r)
}

pub fn illumination_na(led: Led, grid: &LedGrid) -> f64 {
    let (sx, sy) = illumination_wavevector(led, grid);
    sx.hypot(sy)
}

/// Objective NA plus the largest illumination NA in the set.
pub fn synthetic_na<'a>(leds: impl IntoIterator<Item = &'a Led>, grid: &LedGrid, config: &OpticalConfig) -> Result<f64> {
    leds.into_iter()
        .map(|l| illumination_na(*l, grid))
        .fold(None, |acc: Option<f64>, na| Some(acc.map_or(na, |a| a.max(na))))
        .map(|na| config.objective_na + na)
        .ok_or(FpmError::NoIllumination)
}

/// Fractional area shared by two pupil disks of radius `objective_na` whose
/// centers are `na_step` apart.
pub fn overlap_rate(na_step: f64, objective_na: f64) -> Result<f64> {
    if na_step < 0.0 || na_step.is_nan() {
        return Err(FpmError::NegativeStep(na_step));
    }
    let x = na_step / (2.0 * objective_na);
    if x >= 1.0 {
        return Ok(0.0);
    }
    Ok((2.0 / PI) * (x.acos() - x * (1.0 - x * x).sqrt()))
}

/// Overlap between the axis LED and its nearest lattice neighbor.
pub fn center_overlap(grid: &LedGrid, config: &OpticalConfig) -> Result<f64> {
    let step = grid.step.max(1);
    let a = illumination_wavevector(Led::CENTER, grid);
    let b = illumination_wavevector(Led::new(step, 0), grid);
    overlap_rate((b.0 - a.0).hypot(b.1 - a.1), config.objective_na)
}

/// 2D complex array on a square grid with a physical sample pitch.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub data: Array2<Complex64>,
    pub pitch: f64,
}

impl ComplexField {
    pub fn new(data: Array2<Complex64>, pitch: f64) -> Result<Self> {
        let (h, w) = data.dim();
        if h != w {
            return Err(FpmError::InvalidConfig(format!("field must be square, got {h}x{w}")));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(FpmError::InvalidConfig("field contains non-finite values".into()));
        }
        Ok(Self { data, pitch })
    }

    pub fn from_amplitude_phase(amplitude: &Array2<f64>, phase: Option<&Array2<f64>>, pitch: f64) -> Result<Self> {
        let data = match phase {
            Some(p) => {
                if p.dim() != amplitude.dim() {
                    return Err(FpmError::ShapeMismatch(amplitude.dim(), p.dim()));
                }
                ndarray::Zip::from(amplitude).and(p).map_collect(|&a, &ph| Complex64::from_polar(a, ph))
            }
            None => amplitude.mapv(|a| Complex64::new(a, 0.0)),
        };
        Self::new(data, pitch)
    }

    pub fn size(&self) -> usize {
        self.data.nrows()
    }

    pub fn amplitude(&self) -> Array2<f64> {
        self.data.mapv(|z| z.norm())
    }

    pub fn phase(&self) -> Array2<f64> {
        self.data.mapv(|z| z.arg())
    }
}

/// Objective pupil on the LR spectrum grid, natural DFT order.
#[derive(Debug, Clone, PartialEq)]
pub struct Pupil {
    pub field: ComplexField,
    pub radius_px: f64,
}

impl Pupil {
    pub fn size(&self) -> usize {
        self.field.size()
    }

    /// Binary support of the ideal pupil.
    pub fn support(&self) -> Array2<bool> {
        let n = self.size();
        let r2 = self.radius_px * self.radius_px;
        Array2::from_shape_fn((n, n), |(r, c)| {
            let fy = signed_freq(r, n) as f64;
            let fx = signed_freq(c, n) as f64;
            fy * fy + fx * fx <= r2
        })
    }

    /// Signed frequency coordinates of every in-support bin.
    pub fn support_freqs(&self) -> Vec<(i64, i64)> {
        let n = self.size();
        self.support()
            .indexed_iter()
            .filter(|(_, &s)| s)
            .map(|((r, c), _)| (signed_freq(r, n), signed_freq(c, n)))
            .collect()
    }

    pub fn support_area(&self) -> usize {
        self.support().iter().filter(|&&s| s).count()
    }
}

pub fn make_pupil(config: &OpticalConfig) -> Result<Pupil> {
    config.validate()?;
    let n = config.lr_size();
    let radius_px = config.objective_na / config.wavelength * (n as f64 * config.lr_pitch());
    if radius_px < 2.0 {
        return Err(FpmError::PupilUnderResolved(radius_px));
    }
    if radius_px >= n as f64 / 2.0 {
        return Err(FpmError::InvalidConfig(format!(
            "pupil radius {radius_px:.2} px does not fit the {n}-pixel camera band"
        )));
    }
    let r2 = radius_px * radius_px;
    let data = Array2::from_shape_fn((n, n), |(r, c)| {
        let fy = signed_freq(r, n) as f64;
        let fx = signed_freq(c, n) as f64;
        if fy * fy + fx * fx <= r2 {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    Ok(Pupil {
        field: ComplexField::new(data, config.freq_step())?,
        radius_px,
    })
}

/// Integer placement of one LED's passband on the HR spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumShift {
    pub led: Led,
    /// HR frequency (row axis) that maps to LR DC.
    pub row: i64,
    /// HR frequency (column axis) that maps to LR DC.
    pub col: i64,
    /// Rounding residue in bins, `(row, col)`.
    pub residual: (f64, f64),
}

impl SpectrumShift {
    /// Placement for `led`; sinθx drives the column (x) axis of the image.
    pub fn new(led: Led, grid: &LedGrid, config: &OpticalConfig) -> Self {
        let (sx, sy) = illumination_wavevector(led, grid);
        let per_bin = config.na_per_bin();
        let exact_col = -sx / per_bin;
        let exact_row = -sy / per_bin;
        let row = exact_row.round() as i64;
        let col = exact_col.round() as i64;
        Self {
            led,
            row,
            col,
            residual: (exact_row - row as f64, exact_col - col as f64),
        }
    }

    /// Checks that the whole pupil support lands inside the HR band.
    pub fn check_band(&self, pupil: &Pupil, hr_size: usize) -> Result<()> {
        let limit = (hr_size / 2) as i64;
        let r = pupil.radius_px.floor() as i64;
        let inside = |f: i64| f > -limit && f < limit;
        if inside(self.row - r) && inside(self.row + r) && inside(self.col - r) && inside(self.col + r) {
            Ok(())
        } else {
            Err(FpmError::ExceedsModelBand(self.led))
        }
    }

    /// HR spectrum index for an LR signed frequency.
    pub fn hr_index(&self, fy: i64, fx: i64, hr_size: usize) -> (usize, usize) {
        (bin_of(fy + self.row, hr_size), bin_of(fx + self.col, hr_size))
    }
}
