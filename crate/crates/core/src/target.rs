//! Synthetic three-bar resolution target standing in for a USAF chart.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{FpmError, Result};
use crate::fft::Fft2;
use crate::optics::ComplexField;
use crate::recon::Segment;

/// One group of three bars. `vertical` bars vary along the column axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BarGroup {
    /// Bar width in pixels; the period is twice this.
    pub width: usize,
    pub row: usize,
    pub col: usize,
    pub vertical: bool,
}

impl BarGroup {
    /// Side of the square block the group occupies (bars are 5 widths long).
    pub fn extent(&self) -> usize {
        5 * self.width
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        let e = self.extent();
        if r < self.row || c < self.col || r >= self.row + e || c >= self.col + e {
            return false;
        }
        let across = if self.vertical { c - self.col } else { r - self.row };
        (across / self.width) % 2 == 0
    }

    /// Line across the three bars through the middle of the block.
    pub fn profile(&self) -> Segment {
        let mid = self.extent() as f64 / 2.0;
        let (a, b) = (0.0, (self.extent() - 1) as f64);
        if self.vertical {
            Segment::new((self.row as f64 + mid, self.col as f64 + a), (self.row as f64 + mid, self.col as f64 + b))
        } else {
            Segment::new((self.row as f64 + a, self.col as f64 + mid), (self.row as f64 + b, self.col as f64 + mid))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarTarget {
    /// Side in pixels; follows the HR grid size, so it is not configurable.
    #[serde(skip)]
    pub size: usize,
    /// Bar widths in pixels, coarse to fine.
    pub widths: Vec<usize>,
    /// Amplitude transmission inside bars.
    pub bar_amplitude: f64,
    /// Amplitude transmission outside bars.
    pub background_amplitude: f64,
    /// Phase delay inside bars, radians.
    pub bar_phase: f64,
}

impl Default for BarTarget {
    fn default() -> Self {
        Self {
            size: 256,
            widths: vec![8, 6, 5, 4, 3, 2],
            bar_amplitude: 0.4,
            background_amplitude: 1.0,
            bar_phase: 1.0,
        }
    }
}

impl BarTarget {
    pub fn validate(&self) -> Result<()> {
        if self.widths.iter().any(|&w| w == 0) {
            return Err(FpmError::InvalidConfig("bar widths must be positive".into()));
        }
        let unit = 0.0..=1.0;
        if !unit.contains(&self.bar_amplitude) || !unit.contains(&self.background_amplitude) || !self.bar_phase.is_finite() {
            return Err(FpmError::InvalidConfig("amplitudes must lie in [0, 1] and phase must be finite".into()));
        }
        Ok(())
    }

    /// Shelf layout inside the central 70% of the field, then centered, so
    /// the corners stay empty. Each width gets a vertical and a horizontal
    /// group side by side; groups that do not fit are dropped.
    pub fn groups(&self) -> Vec<BarGroup> {
        let avail = self.size * 7 / 10;
        let spacing = (self.size / 32).max(2);
        let mut out = Vec::new();
        let (mut row, mut col, mut shelf) = (0, 0, 0);
        for &w in &self.widths {
            let e = 5 * w;
            let gap = (2 * w).max(4);
            let pair = 2 * e + gap;
            if col > 0 && col + pair > avail {
                row += shelf + spacing;
                col = 0;
                shelf = 0;
            }
            if row + e > avail || pair > avail {
                continue;
            }
            out.push(BarGroup { width: w, row, col, vertical: true });
            out.push(BarGroup { width: w, row, col: col + e + gap, vertical: false });
            col += pair + spacing;
            shelf = shelf.max(e);
        }
        let height = out.iter().map(|g| g.row + g.extent()).max().unwrap_or(0);
        let width = out.iter().map(|g| g.col + g.extent()).max().unwrap_or(0);
        let (dr, dc) = ((self.size - height) / 2, (self.size - width) / 2);
        for g in &mut out {
            g.row += dr;
            g.col += dc;
        }
        out
    }

    /// 1 inside bars, 0 elsewhere.
    pub fn mask(&self) -> Array2<f64> {
        let groups = self.groups();
        Array2::from_shape_fn((self.size, self.size), |(r, c)| groups.iter().any(|g| g.contains(r, c)) as u8 as f64)
    }

    pub fn field(&self, pitch: f64) -> Result<ComplexField> {
        self.validate()?;
        let m = self.mask();
        let amp = m.mapv(|v| self.background_amplitude + (self.bar_amplitude - self.background_amplitude) * v);
        let phase = m.mapv(|v| self.bar_phase * v);
        ComplexField::from_amplitude_phase(&amp, Some(&phase), pitch)
    }
}

/// Zeroes every spectrum bin where `keep` is false (natural DFT order).
pub fn band_limit(field: &ComplexField, keep: &Array2<bool>) -> Result<ComplexField> {
    let n = field.size();
    if keep.dim() != (n, n) {
        return Err(FpmError::ShapeMismatch(keep.dim(), (n, n)));
    }
    let fft = Fft2::new(n);
    let mut spec = field.data.clone();
    fft.forward(&mut spec);
    spec.zip_mut_with(keep, |z, &k| {
        if !k {
            *z = Complex64::default();
        }
    });
    fft.inverse(&mut spec);
    let scale = 1.0 / (n * n) as f64;
    spec.mapv_inplace(|z| z * scale);
    ComplexField::new(spec, field.pitch)
}
