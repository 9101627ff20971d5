//! The four experiment stages over a fixed directory layout:
//!
//! ```text
//! <out>/frames/   frame_r{row}_c{col}.pgm, manifest.csv, calibration/, truth_*.f32
//! <out>/acquire/  plan.csv, snr_report.csv, summary.txt, kept_manifest.csv
//! <out>/recon/    amplitude.f32, phase.f32 (+ .hdr), *.pgm previews, error_trace.csv, coverage.pgm, summary.txt
//! <out>/report.txt
//! ```
//!
//! Stages talk only through these files, so running them one by one gives
//! the same bytes as [`run_all`].

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    adaptive_acquire, auto_threshold, design_sparse_grid, parse_key_value, report as acquisition_report, CachingSource, PgmDirSource,
};
use crate::config::{ExperimentConfig, ObjectSource};
use crate::error::{FpmError, Result};
use crate::fft::{fftshift, signed_freq};
use crate::io::{
    amplitude_preview, frame_file_name, phase_preview, plan_rows, read_csv, read_f32_image, read_pgm, snr_rows, write_csv, write_f32_image,
    write_pgm, FrameManifestRow, KeptManifestRow,
};
use crate::noise::{estimate_dark, gaussian_sigma, MlePath, SnrScorer};
use crate::optics::{ComplexField, Led, LedGrid};
use crate::recon::{aligned_phase, coverage_map, epry_reconstruct, line_profile_contrast, prepare_frame, rmse, ReconFrame, ReconResult, Segment};
use crate::sim::{capture, capture_dark_frames, capture_flat_frames, falloff_factor, ForwardModel, NoiseKind, RawFrame};
use crate::target::{band_limit, BarTarget};

pub const CALIBRATION_DIR: &str = "calibration";
pub const TRUTH_AMPLITUDE: &str = "truth_amplitude.f32";
pub const TRUTH_PHASE: &str = "truth_phase.f32";

pub fn acquire_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.paths.out.join("acquire")
}

pub fn recon_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.paths.out.join("recon")
}

fn bar_target(cfg: &ExperimentConfig) -> BarTarget {
    BarTarget {
        size: cfg.optics.hr_size,
        ..cfg.object.bars.clone()
    }
}

/// Ground-truth object described by the config.
pub fn build_object(cfg: &ExperimentConfig) -> Result<ComplexField> {
    let n = cfg.optics.hr_size;
    let pitch = cfg.optics.hr_pitch();
    let object = match cfg.object.source {
        ObjectSource::Bars => bar_target(cfg).field(pitch)?,
        ObjectSource::Images => {
            let amp_path = cfg.object.amplitude.as_ref().ok_or_else(|| FpmError::InvalidConfig("object.amplitude is not set".into()))?;
            let load = |p: &Path| -> Result<Array2<f64>> {
                let (img, maxval) = read_pgm(p)?;
                if img.dim() != (n, n) {
                    return Err(FpmError::DataMismatch(format!("{} is {:?}, expected {n}x{n}", p.display(), img.dim())));
                }
                Ok(img.mapv(|v| v / maxval as f64))
            };
            let amp = load(amp_path)?;
            let phase = match &cfg.object.phase {
                Some(p) => Some(load(p)?.mapv(|v| v * 2.0 * PI - PI)),
                None => None,
            };
            ComplexField::from_amplitude_phase(&amp, phase.as_ref(), pitch)?
        }
    };
    if cfg.object.band_limit_na > 0.0 {
        let radius = cfg.object.band_limit_na / cfg.optics.na_per_bin();
        let keep = Array2::from_shape_fn((n, n), |(r, c)| {
            let (y, x) = (signed_freq(r, n) as f64, signed_freq(c, n) as f64);
            y * y + x * x <= radius * radius
        });
        return band_limit(&object, &keep);
    }
    Ok(object)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateOutput {
    pub frames_written: usize,
    pub dir: PathBuf,
}

/// Writes one noisy frame per LED of the dense grid, calibration frames,
/// the ground truth and a manifest.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<SimulateOutput> {
    cfg.validate()?;
    let object = build_object(cfg)?;
    let grid = cfg.grid.build()?;
    let model = ForwardModel::new(&object, &cfg.optics)?;
    let dir = cfg.frames_dir();
    let cal = dir.join(CALIBRATION_DIR);
    fs::create_dir_all(&cal)?;

    let mut manifest = Vec::with_capacity(grid.full_count());
    for led in grid.all_leds() {
        let frame = capture(&model, led, &grid, &cfg.noise, cfg.seed)?;
        let file = frame_file_name(led);
        write_pgm(&dir.join(&file), &frame.pixels, cfg.noise.bit_depth)?;
        manifest.push(FrameManifestRow {
            row: led.row,
            col: led.col,
            file,
            seed: frame.exposure_id,
            falloff: falloff_factor(led, &grid),
        });
    }
    write_csv(&dir.join("manifest.csv"), &manifest)?;

    let lr = cfg.optics.lr_size();
    for (i, f) in capture_dark_frames(&cfg.noise, lr, cfg.calibration.dark_frames, cfg.seed)?.iter().enumerate() {
        write_pgm(&cal.join(format!("dark_{i:03}.pgm")), &f.pixels, cfg.noise.bit_depth)?;
    }
    if cfg.noise.kind == NoiseKind::Gaussian8 && cfg.calibration.flat_frames > 0 {
        let flats = capture_flat_frames(&cfg.noise, lr, cfg.calibration.flat_intensity, cfg.calibration.flat_frames, cfg.seed)?;
        for (i, f) in flats.iter().enumerate() {
            write_pgm(&cal.join(format!("flat_{i:03}.pgm")), &f.pixels, cfg.noise.bit_depth)?;
        }
    }
    write_f32_image(&dir.join(TRUTH_AMPLITUDE), &object.amplitude(), object.pitch)?;
    write_f32_image(&dir.join(TRUTH_PHASE), &object.phase(), object.pitch)?;
    Ok(SimulateOutput {
        frames_written: manifest.len(),
        dir,
    })
}

fn numbered_frames(dir: &Path, prefix: &str) -> Result<Vec<RawFrame>> {
    let mut out = Vec::new();
    for i in 0.. {
        let p = dir.join(format!("{prefix}_{i:03}.pgm"));
        if !p.exists() {
            break;
        }
        out.push(RawFrame::new(read_pgm(&p)?.0, Led::CENTER));
    }
    Ok(out)
}

/// Dark level and Gaussian σ̄ from the calibration frames next to the data,
/// falling back to the configured values when none are present.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub dark: f64,
    pub gaussian_sigma: Option<f64>,
}

pub fn load_calibration(cfg: &ExperimentConfig, frames_dir: &Path) -> Result<Calibration> {
    let cal = frames_dir.join(CALIBRATION_DIR);
    let darks = numbered_frames(&cal, "dark")?;
    let dark = if darks.is_empty() { cfg.noise.dark_mean } else { estimate_dark(&darks)? };
    let gaussian = match cfg.noise.kind {
        NoiseKind::Gaussian8 => {
            let flats = numbered_frames(&cal, "flat")?;
            Some(if flats.is_empty() { cfg.noise.gaussian_sigma } else { gaussian_sigma(&flats, dark)?.sigma })
        }
        _ => None,
    };
    Ok(Calibration { dark, gaussian_sigma: gaussian })
}

/// Dense grid, or its sparse decimation when `min_overlap` is configured.
pub fn acquisition_grid(cfg: &ExperimentConfig) -> Result<LedGrid> {
    let dense = cfg.grid.build()?;
    match cfg.acquisition.min_overlap {
        Some(m) => design_sparse_grid(&dense, &cfg.optics, m),
        None => Ok(dense),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcquireOutput {
    pub summary: BTreeMap<String, String>,
    pub kept: Vec<Led>,
}

pub fn cmd_acquire(cfg: &ExperimentConfig) -> Result<AcquireOutput> {
    cfg.validate()?;
    let frames_dir = cfg.frames_dir();
    if !frames_dir.is_dir() {
        return Err(FpmError::MissingInput(frames_dir));
    }
    let grid = acquisition_grid(cfg)?;
    let calibration = load_calibration(cfg, &frames_dir)?;
    let lr = cfg.optics.lr_size();
    let scorer = SnrScorer::new(
        MlePath::for_kind(cfg.noise.kind, calibration.gaussian_sigma),
        calibration.dark,
        (lr, lr),
        &cfg.scorer,
    )?;
    let mut source = CachingSource::new(PgmDirSource::new(&frames_dir).with_dim((lr, lr)));
    let (threshold, threshold_source) = match cfg.acquisition.threshold_db {
        Some(t) => (t, "override"),
        None => (auto_threshold(&mut source, &grid, &scorer)?.threshold_db, "auto"),
    };
    let acq = adaptive_acquire(&mut source, &grid, &scorer, threshold, cfg.acquisition.trend_stop)?;

    let dir = acquire_dir(cfg);
    fs::create_dir_all(&dir)?;
    write_csv(&dir.join("plan.csv"), &plan_rows(&acq.plan))?;
    write_csv(&dir.join("snr_report.csv"), &snr_rows(&acq.report, &acq.plan, &grid))?;
    let kept: Vec<Led> = acq.plan.kept().collect();
    let manifest: Vec<KeptManifestRow> = kept
        .iter()
        .map(|l| KeptManifestRow {
            row: l.row,
            col: l.col,
            file: frame_file_name(*l),
        })
        .collect();
    write_csv(&dir.join("kept_manifest.csv"), &manifest)?;

    let summary = acquisition_report(&acq.plan, &grid, &cfg.optics)?;
    let mut text = summary.to_key_value();
    text += &format!("threshold_source={threshold_source}\n");
    text += &format!("grid_step={}\n", grid.step);
    text += &format!("exposures={}\n", source.exposures());
    text += &format!("dark_estimate={:.6}\n", calibration.dark);
    if let Some(s) = calibration.gaussian_sigma {
        text += &format!("gaussian_sigma={s:.6}\n");
    }
    fs::write(dir.join("summary.txt"), &text)?;
    Ok(AcquireOutput {
        summary: parse_key_value(&text),
        kept,
    })
}

pub const COVERAGE_WARNING: &str = "coverage below synthesis threshold";

#[derive(Debug, Clone)]
pub struct ReconstructOutput {
    pub result: ReconResult,
    pub amplitude_rmse: Option<f64>,
    pub warnings: Vec<String>,
}

fn load_truth(frames_dir: &Path) -> Result<Option<ComplexField>> {
    let amp_path = frames_dir.join(TRUTH_AMPLITUDE);
    let phase_path = frames_dir.join(TRUTH_PHASE);
    if !amp_path.exists() || !phase_path.exists() {
        return Ok(None);
    }
    let (amp, pitch) = read_f32_image(&amp_path)?;
    let (phase, _) = read_f32_image(&phase_path)?;
    Ok(Some(ComplexField::from_amplitude_phase(&amp, Some(&phase), pitch)?))
}

/// Loads and preprocesses the frames listed in the kept manifest.
pub fn load_kept_frames(cfg: &ExperimentConfig) -> Result<Vec<ReconFrame>> {
    let manifest_path = acquire_dir(cfg).join("kept_manifest.csv");
    let rows: Vec<KeptManifestRow> = read_csv(&manifest_path)?;
    let frames_dir = cfg.frames_dir();
    let grid = cfg.grid.build()?;
    let calibration = load_calibration(cfg, &frames_dir)?;
    let dark = fs::read_to_string(acquire_dir(cfg).join("summary.txt"))
        .ok()
        .and_then(|t| parse_key_value(&t).get("dark_estimate").and_then(|v| v.parse().ok()))
        .unwrap_or(calibration.dark);
    let lr = cfg.optics.lr_size();
    let mut frames = Vec::with_capacity(rows.len());
    for row in rows {
        let led = Led::new(row.row, row.col);
        if !grid.contains(led) {
            return Err(FpmError::LedOutsideGrid(led));
        }
        let path = frames_dir.join(&row.file);
        if !path.exists() {
            return Err(FpmError::DataMismatch(format!("manifest lists {} but the file is missing", path.display())));
        }
        let (pixels, _) = read_pgm(&path)?;
        if pixels.dim() != (lr, lr) {
            return Err(FpmError::DataMismatch(format!("{} is {:?}, expected {lr}x{lr}", path.display(), pixels.dim())));
        }
        frames.push(prepare_frame(&RawFrame::new(pixels, led), &grid, dark, cfg.noise.photon_scale)?);
    }
    Ok(frames)
}

pub fn cmd_reconstruct(cfg: &ExperimentConfig) -> Result<ReconstructOutput> {
    cfg.validate()?;
    let frames = load_kept_frames(cfg)?;
    let grid = cfg.grid.build()?;
    let mut warnings = Vec::new();
    if frames.len() < 2 {
        warnings.push(COVERAGE_WARNING.to_string());
    }
    let result = epry_reconstruct(&frames, &grid, &cfg.optics, &cfg.recon)?;
    let truth = load_truth(&cfg.frames_dir())?;

    let dir = recon_dir(cfg);
    fs::create_dir_all(&dir)?;
    let amp = result.object.amplitude();
    let phase = match &truth {
        Some(t) => aligned_phase(&result.object, t)?,
        None => result.object.phase(),
    };
    write_f32_image(&dir.join("amplitude.f32"), &amp, result.object.pitch)?;
    write_f32_image(&dir.join("phase.f32"), &phase, result.object.pitch)?;
    write_pgm(&dir.join("amplitude.pgm"), &amplitude_preview(&amp), 16)?;
    write_pgm(&dir.join("phase.pgm"), &phase_preview(&phase), 16)?;

    #[derive(Serialize, Deserialize)]
    struct TraceRow {
        iteration: usize,
        error: f64,
    }
    let trace: Vec<TraceRow> = result
        .per_iteration_error
        .iter()
        .enumerate()
        .map(|(i, &error)| TraceRow { iteration: i + 1, error })
        .collect();
    write_csv(&dir.join("error_trace.csv"), &trace)?;

    let leds: Vec<Led> = frames.iter().map(|f| f.led).collect();
    let coverage = coverage_map(&leds, &grid, &cfg.optics)?;
    write_pgm(&dir.join("coverage.pgm"), &fftshift(&coverage).mapv(|v| v as f64), 16)?;

    let amplitude_rmse = match &truth {
        Some(t) => Some(rmse(&amp, &t.amplitude(), true)?),
        None => None,
    };
    let max_residual = result
        .shifts
        .iter()
        .map(|s| s.residual.0.abs().max(s.residual.1.abs()))
        .fold(0.0, f64::max);
    let mut text = format!(
        "frames={}\niterations={}\ninitial_error={:.6e}\nfinal_error={:.6e}\nsynthetic_na={:.6}\nmax_shift_residual_bins={:.6}\n",
        frames.len(),
        result.iterations_run,
        result.initial_error(),
        result.final_error(),
        result.synthetic_na_used,
        max_residual
    );
    if let Some(e) = amplitude_rmse {
        text += &format!("amplitude_rmse={e:.6}\n");
    }
    for w in &warnings {
        text += &format!("warning={w}\n");
    }
    fs::write(dir.join("summary.txt"), text)?;
    Ok(ReconstructOutput {
        result,
        amplitude_rmse,
        warnings,
    })
}

/// Profiles scored in the report: configured segments, then the bar groups.
pub fn report_segments(cfg: &ExperimentConfig) -> Vec<(String, Segment)> {
    let mut out: Vec<(String, Segment)> = cfg.report.segments.iter().enumerate().map(|(i, s)| (format!("segment_{i}"), *s)).collect();
    if cfg.report.bar_profiles && cfg.object.source == ObjectSource::Bars {
        for g in bar_target(cfg).groups() {
            let dir = if g.vertical { "v" } else { "h" };
            out.push((format!("bars_w{}_{dir}", g.width), g.profile()));
        }
    }
    out
}

/// Consolidated plain-text table; missing inputs leave their rows out.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<String> {
    let read_kv = |p: PathBuf| fs::read_to_string(p).map(|t| parse_key_value(&t)).unwrap_or_default();
    let acq = read_kv(acquire_dir(cfg).join("summary.txt"));
    let rec = read_kv(recon_dir(cfg).join("summary.txt"));

    let mut rows: Vec<(String, String)> = Vec::new();
    let mut put = |k: &str, v: Option<&String>| {
        if let Some(v) = v {
            rows.push((k.to_string(), v.clone()));
        }
    };
    put("frames_total", acq.get("frames_total"));
    put("frames_kept", acq.get("frames_captured"));
    let pct = acq.get("reduction_ratio").and_then(|v| v.parse::<f64>().ok()).map(|r| format!("{:.2}", r * 100.0));
    put("reduction_pct", pct.as_ref());
    put("threshold_db", acq.get("threshold_db"));
    put("threshold_source", acq.get("threshold_source"));
    put("synthetic_na", acq.get("synthetic_na"));
    put("recon_iterations", rec.get("iterations"));
    put("recon_final_error", rec.get("final_error"));
    put("amplitude_rmse", rec.get("amplitude_rmse"));

    let mut text = String::from("# experiment report\n");
    for (k, v) in &rows {
        text += &format!("{k:<24} {v}\n");
    }

    let amp_path = recon_dir(cfg).join("amplitude.f32");
    let phase_path = recon_dir(cfg).join("phase.f32");
    if amp_path.exists() && phase_path.exists() {
        let (amp, _) = read_f32_image(&amp_path)?;
        let (phase, _) = read_f32_image(&phase_path)?;
        let phase01 = phase_preview(&phase).mapv(|v| v / 65535.0);
        let segments = report_segments(cfg);
        if !segments.is_empty() {
            text += &format!("\n{:<24} {:>18} {:>18}\n", "profile", "amplitude_contrast", "phase_contrast");
            for (name, seg) in segments {
                let a = line_profile_contrast(&amp, seg).map(|c| format!("{c:.4}")).unwrap_or_else(|_| "absent".into());
                let p = line_profile_contrast(&phase01, seg).map(|c| format!("{c:.4}")).unwrap_or_else(|_| "absent".into());
                text += &format!("{name:<24} {a:>18} {p:>18}\n");
            }
        }
    }
    fs::create_dir_all(&cfg.paths.out)?;
    fs::write(cfg.paths.out.join("report.txt"), &text)?;
    Ok(text)
}

/// All four stages in sequence.
pub fn run_all(cfg: &ExperimentConfig) -> Result<String> {
    cmd_simulate(cfg)?;
    cmd_acquire(cfg)?;
    cmd_reconstruct(cfg)?;
    cmd_report(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dir: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.optics.hr_size = 64;
        cfg.grid.rows = 3;
        cfg.grid.cols = 3;
        cfg.object.bars.widths = vec![3, 2];
        cfg.object.bars.bar_amplitude = 1.0;
        cfg.object.bars.background_amplitude = 0.0;
        cfg.recon.max_iterations = 3;
        cfg.calibration.dark_frames = 2;
        cfg.paths.out = dir.to_path_buf();
        cfg
    }

    #[test]
    fn three_by_three_writes_nine_frames() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        let out = cmd_simulate(&cfg).unwrap();
        assert_eq!(out.frames_written, 9);
        let pgm = fs::read_dir(&out.dir)
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("frame_"))
            .count();
        assert_eq!(pgm, 9);
        let rows: Vec<FrameManifestRow> = read_csv(&out.dir.join("manifest.csv")).unwrap();
        assert_eq!(rows.len(), 9);
        assert!(rows.iter().any(|r| r.row == 0 && r.col == 0 && r.falloff == 1.0));
    }

    #[test]
    fn stages_chain_and_report() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.acquisition.threshold_db = Some(-1e6);
        let report = run_all(&cfg).unwrap();
        assert!(report.contains("reduction_pct"));
        assert!(report.contains("amplitude_rmse"));
        assert!(report.contains("bars_w3_v"));
        for f in ["plan.csv", "snr_report.csv", "summary.txt", "kept_manifest.csv"] {
            assert!(acquire_dir(&cfg).join(f).exists(), "{f}");
        }
        for f in ["amplitude.f32", "amplitude.hdr", "phase.f32", "phase.pgm", "error_trace.csv", "coverage.pgm"] {
            assert!(recon_dir(&cfg).join(f).exists(), "{f}");
        }
        let summary = parse_key_value(&fs::read_to_string(acquire_dir(&cfg).join("summary.txt")).unwrap());
        assert_eq!(summary["reduction_ratio"], "0.000000");
    }

    #[test]
    fn report_without_truth_has_no_rmse() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.acquisition.threshold_db = Some(-1e6);
        cmd_simulate(&cfg).unwrap();
        fs::remove_file(cfg.frames_dir().join(TRUTH_AMPLITUDE)).unwrap();
        cmd_acquire(&cfg).unwrap();
        cmd_reconstruct(&cfg).unwrap();
        let report = cmd_report(&cfg).unwrap();
        assert!(!report.contains("amplitude_rmse"));
        assert!(report.contains("frames_total"));
    }

    #[test]
    fn single_frame_manifest_warns() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.grid.rows = 1;
        cfg.grid.cols = 1;
        cfg.acquisition.threshold_db = Some(-1e6);
        cmd_simulate(&cfg).unwrap();
        cmd_acquire(&cfg).unwrap();
        let out = cmd_reconstruct(&cfg).unwrap();
        assert_eq!(out.warnings, vec![COVERAGE_WARNING.to_string()]);
    }

    #[test]
    fn exit_codes_for_stage_failures() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        // nothing simulated yet
        assert_eq!(cmd_acquire(&cfg).unwrap_err().exit_code(), 2);
        assert_eq!(cmd_reconstruct(&cfg).unwrap_err().exit_code(), 2);

        cfg.object.source = ObjectSource::Images;
        cfg.object.amplitude = Some(dir.path().join("missing.pgm"));
        assert_eq!(cmd_simulate(&cfg).unwrap_err().exit_code(), 2);

        let mut cfg = small(dir.path());
        cmd_simulate(&cfg).unwrap();
        cfg.acquisition.threshold_db = Some(1e6);
        assert_eq!(cmd_acquire(&cfg).unwrap_err().exit_code(), 3);

        cfg.acquisition.threshold_db = Some(-1e6);
        cmd_acquire(&cfg).unwrap();
        fs::remove_file(cfg.frames_dir().join(frame_file_name(Led::CENTER))).unwrap();
        assert_eq!(cmd_reconstruct(&cfg).unwrap_err().exit_code(), 4);
    }

    #[test]
    fn image_objects_are_scaled() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        let n = cfg.optics.hr_size;
        let amp = Array2::from_elem((n, n), 255.0);
        let ph = Array2::from_elem((n, n), 0.0);
        write_pgm(&dir.path().join("a.pgm"), &amp, 8).unwrap();
        write_pgm(&dir.path().join("p.pgm"), &ph, 8).unwrap();
        cfg.object.source = ObjectSource::Images;
        cfg.object.amplitude = Some(dir.path().join("a.pgm"));
        cfg.object.phase = Some(dir.path().join("p.pgm"));
        let obj = build_object(&cfg).unwrap();
        assert!((obj.amplitude()[[3, 3]] - 1.0).abs() < 1e-12);
        assert!((obj.phase()[[3, 3]].abs() - PI).abs() < 1e-12);

        write_pgm(&dir.path().join("a.pgm"), &Array2::zeros((n / 2, n / 2)), 8).unwrap();
        assert_eq!(build_object(&cfg).unwrap_err().exit_code(), 4);
    }
}
