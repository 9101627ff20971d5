//! Experiment configuration as TOML. Every field has a default and unknown
//! keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{FpmError, Result};
use crate::noise::ScorerOptions;
use crate::optics::{LedGrid, OpticalConfig};
use crate::recon::{ReconConfig, Segment};
use crate::sim::NoiseModel;
use crate::target::BarTarget;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub rows: u32,
    pub cols: u32,
    /// LED pitch in mm.
    pub pitch: f64,
    /// Array-to-sample distance in mm.
    pub height: f64,
    /// Lateral offset of the center LED from the optical axis, mm.
    pub center_offset: [f64; 2],
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            rows: 19,
            cols: 19,
            pitch: 4.0,
            height: 67.5,
            center_offset: [0.0, 0.0],
        }
    }
}

impl GridConfig {
    pub fn build(&self) -> Result<LedGrid> {
        Ok(LedGrid::new(self.rows, self.cols, self.pitch, self.height)?.with_center_offset((self.center_offset[0], self.center_offset[1])))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    /// Object-free, unilluminated frames used for the dark level.
    pub dark_frames: usize,
    /// Object-free flat frames used for the Gaussian σ̄ (Gaussian8 only).
    pub flat_frames: usize,
    /// Flat-frame intensity in object units.
    pub flat_intensity: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            dark_frames: 8,
            flat_frames: 16,
            flat_intensity: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionConfig {
    /// Fixed PSNR threshold in dB; absent means automatic from the edge ring.
    pub threshold_db: Option<f64>,
    pub trend_stop: bool,
    /// When set, the dense grid is decimated to the sparsest layout that
    /// keeps this neighbor overlap.
    pub min_overlap: Option<f64>,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            threshold_db: None,
            trend_stop: true,
            min_overlap: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ObjectSource {
    /// Built-in three-bar chart.
    #[default]
    Bars,
    /// Amplitude image (and optional phase image) from PGM files.
    Images,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectConfig {
    pub source: ObjectSource,
    pub bars: BarTarget,
    /// Grayscale amplitude image, scaled to [0, 1] by its maxval.
    pub amplitude: Option<PathBuf>,
    /// Grayscale phase image, scaled to [−π, π] by its maxval.
    pub phase: Option<PathBuf>,
    /// Zero the object spectrum beyond this NA; 0 disables.
    pub band_limit_na: f64,
}

impl Default for ObjectConfig {
    fn default() -> Self {
        Self {
            source: ObjectSource::Bars,
            bars: BarTarget::default(),
            amplitude: None,
            phase: None,
            band_limit_na: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    /// Extra profile segments on the HR image, `(row, col)` endpoints.
    pub segments: Vec<Segment>,
    /// Also profile every bar group of the built-in chart.
    pub bar_profiles: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Root directory for all stage outputs.
    pub out: PathBuf,
    /// Frame directory for `acquire` and `reconstruct`; defaults to `<out>/frames`.
    pub frames: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("out"),
            frames: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub optics: OpticalConfig,
    pub grid: GridConfig,
    pub noise: NoiseModel,
    pub calibration: CalibrationConfig,
    pub scorer: ScorerOptions,
    pub acquisition: AcquisitionConfig,
    pub recon: ReconConfig,
    pub object: ObjectConfig,
    pub report: ReportConfig,
    pub paths: PathsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            optics: OpticalConfig::default(),
            grid: GridConfig::default(),
            noise: NoiseModel::default(),
            calibration: CalibrationConfig::default(),
            scorer: ScorerOptions::default(),
            acquisition: AcquisitionConfig::default(),
            recon: ReconConfig::default(),
            object: ObjectConfig::default(),
            report: ReportConfig { segments: vec![], bar_profiles: true },
            paths: PathsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| FpmError::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|_| FpmError::MissingInput(path.to_path_buf()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<()> {
        self.optics.validate()?;
        self.grid.build()?;
        self.noise.validate()?;
        self.recon.validate()?;
        self.object.bars.validate()?;
        if let Some(t) = self.acquisition.threshold_db {
            if !t.is_finite() {
                return Err(FpmError::NonFiniteThreshold(t));
            }
        }
        if let Some(m) = self.acquisition.min_overlap {
            if !(m > 0.0 && m < 1.0) {
                return Err(FpmError::InvalidConfig(format!("min_overlap must lie in (0, 1), got {m}")));
            }
        }
        if self.calibration.dark_frames == 0 {
            return Err(FpmError::InvalidConfig("calibration.dark_frames must be at least 1".into()));
        }
        if !(self.object.band_limit_na >= 0.0) {
            return Err(FpmError::InvalidConfig("object.band_limit_na must be non-negative".into()));
        }
        if self.object.source == ObjectSource::Images && self.object.amplitude.is_none() {
            return Err(FpmError::InvalidConfig("object.source = \"Images\" needs object.amplitude".into()));
        }
        Ok(())
    }

    pub fn frames_dir(&self) -> PathBuf {
        self.paths.frames.clone().unwrap_or_else(|| self.paths.out.join("frames"))
    }
}
