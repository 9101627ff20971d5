//! File formats: binary PGM frames, little-endian f32 images with a text
//! header sidecar, and CSV tables.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::acquisition::{AcquisitionPlan, Decision};
use crate::error::{FpmError, Result};
use crate::noise::SnrReport;
use crate::optics::{illumination_na, Led, LedGrid};

pub fn frame_file_name(led: Led) -> String {
    format!("frame_r{}_c{}.pgm", led.row, led.col)
}

fn format_err(path: &Path, msg: impl Into<String>) -> FpmError {
    FpmError::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Writes a P5 image. Depths above 8 bits use 16-bit big-endian samples.
/// Values are rounded and clipped to `[0, 2^bits − 1]`.
pub fn write_pgm(path: &Path, pixels: &Array2<f64>, bit_depth: u32) -> Result<()> {
    if !(1..=16).contains(&bit_depth) {
        return Err(FpmError::InvalidConfig(format!("pgm bit depth {bit_depth} not in 1..=16")));
    }
    let maxval = (1u32 << bit_depth) - 1;
    let (h, w) = pixels.dim();
    let mut out = Vec::with_capacity(20 + h * w * 2);
    write!(out, "P5\n{w} {h}\n{maxval}\n")?;
    for &v in pixels.iter() {
        let q = if v.is_nan() { 0 } else { v.round().clamp(0.0, maxval as f64) as u32 };
        if maxval < 256 {
            out.push(q as u8);
        } else {
            out.extend_from_slice(&(q as u16).to_be_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a P5 image; returns the samples and the header's maxval.
pub fn read_pgm(path: &Path) -> Result<(Array2<f64>, u32)> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => FpmError::MissingInput(path.to_path_buf()),
        _ => FpmError::Io(e),
    })?;
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(path, "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates header and raster
    pos += 1;
    if fields[0] != "P5" {
        return Err(format_err(path, format!("magic {:?}, expected P5", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| format_err(path, format!("bad header number {s:?}")));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(format_err(path, format!("maxval {maxval} out of range")));
    }
    let bpp = if maxval < 256 { 1 } else { 2 };
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() < w * h * bpp {
        return Err(format_err(path, "raster shorter than header size"));
    }
    let pixels = Array2::from_shape_fn((h, w), |(r, c)| {
        let i = (r * w + c) * bpp;
        if bpp == 1 {
            raster[i] as f64
        } else {
            u16::from_be_bytes([raster[i], raster[i + 1]]) as f64
        }
    });
    Ok((pixels, maxval as u32))
}

pub fn header_path(data: &Path) -> PathBuf {
    data.with_extension("hdr")
}

/// Writes row-major little-endian f32 samples plus a `.hdr` sidecar.
pub fn write_f32_image(path: &Path, image: &Array2<f64>, pitch: f64) -> Result<()> {
    let (h, w) = image.dim();
    let mut out = Vec::with_capacity(h * w * 4);
    for &v in image.iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, out)?;
    fs::write(header_path(path), format!("width={w}\nheight={h}\npitch={pitch}\nendianness=little\n"))?;
    Ok(())
}

pub fn read_f32_image(path: &Path) -> Result<(Array2<f64>, f64)> {
    let hdr_path = header_path(path);
    let hdr = fs::read_to_string(&hdr_path).map_err(|_| FpmError::MissingInput(hdr_path.clone()))?;
    let kv = crate::acquisition::parse_key_value(&hdr);
    let get = |k: &str| kv.get(k).ok_or_else(|| format_err(&hdr_path, format!("missing {k}")));
    let w: usize = get("width")?.parse().map_err(|_| format_err(&hdr_path, "bad width"))?;
    let h: usize = get("height")?.parse().map_err(|_| format_err(&hdr_path, "bad height"))?;
    let pitch: f64 = get("pitch")?.parse().map_err(|_| format_err(&hdr_path, "bad pitch"))?;
    if get("endianness")? != "little" {
        return Err(format_err(&hdr_path, "only little-endian data is supported"));
    }
    let bytes = fs::read(path).map_err(|_| FpmError::MissingInput(path.to_path_buf()))?;
    if bytes.len() != w * h * 4 {
        return Err(format_err(path, format!("{} bytes, header says {}", bytes.len(), w * h * 4)));
    }
    let data = Array2::from_shape_fn((h, w), |(r, c)| {
        let i = (r * w + c) * 4;
        f32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]) as f64
    });
    Ok((data, pitch))
}

/// 16-bit preview with min..max mapped linearly to the full range.
pub fn amplitude_preview(image: &Array2<f64>) -> Array2<f64> {
    let lo = image.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = image.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    image.mapv(|v| if span > 0.0 { (v - lo) / span * 65535.0 } else { 0.0 })
}

/// 16-bit preview with `[−π, π]` mapped to the full range.
pub fn phase_preview(phase: &Array2<f64>) -> Array2<f64> {
    use std::f64::consts::PI;
    phase.mapv(|p| (p.clamp(-PI, PI) + PI) / (2.0 * PI) * 65535.0)
}

/// One row of the simulation manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameManifestRow {
    pub row: i32,
    pub col: i32,
    pub file: String,
    pub seed: u64,
    pub falloff: f64,
}

/// One row of the kept-frame manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeptManifestRow {
    pub row: i32,
    pub col: i32,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRow {
    pub row: i32,
    pub col: i32,
    pub order: usize,
    pub psnr_db: String,
    pub decision: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrRow {
    pub row: i32,
    pub col: i32,
    pub illum_na: f64,
    pub psnr_db: String,
    pub i_max: f64,
    pub i_n: f64,
    pub sigma_p: Option<f64>,
    pub sigma_g: Option<f64>,
    pub background: f64,
    pub method: String,
    pub decision: String,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(fs::File::create(path)?));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(FpmError::MissingInput(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(|e| format_err(path, e.to_string()))).collect()
}

pub fn plan_rows(plan: &AcquisitionPlan) -> Vec<PlanRow> {
    plan.entries
        .iter()
        .map(|e| PlanRow {
            row: e.led.row,
            col: e.led.col,
            order: e.order,
            psnr_db: e.psnr.map(|p| p.to_string()).unwrap_or_default(),
            decision: e.decision.to_string(),
        })
        .collect()
}

pub fn snr_rows(report: &SnrReport, plan: &AcquisitionPlan, grid: &LedGrid) -> Vec<SnrRow> {
    report
        .records
        .iter()
        .map(|r| SnrRow {
            row: r.led.row,
            col: r.led.col,
            illum_na: illumination_na(r.led, grid),
            psnr_db: r.psnr.to_string(),
            i_max: r.i_max,
            i_n: r.estimate.chosen,
            sigma_p: r.estimate.poisson_sigma,
            sigma_g: r.estimate.gaussian_sigma,
            background: r.estimate.background_level,
            method: r.estimate.method.to_string(),
            decision: plan.decision(r.led).map(|d| d.to_string()).unwrap_or_default(),
        })
        .collect()
}

/// LEDs marked `Kept` in a plan CSV.
pub fn kept_from_plan_rows(rows: &[PlanRow]) -> Result<Vec<Led>> {
    let mut out = Vec::new();
    for r in rows {
        if r.decision.parse::<Decision>()? == Decision::Kept {
            out.push(Led::new(r.row, r.col));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pgm_roundtrip_both_depths() {
        let dir = tempfile::tempdir().unwrap();
        let img = Array2::from_shape_fn((3, 5), |(r, c)| (r * 5 + c) as f64 * 17.0);
        for bits in [8, 16] {
            let p = dir.path().join(format!("x{bits}.pgm"));
            write_pgm(&p, &img, bits).unwrap();
            let (back, maxval) = read_pgm(&p).unwrap();
            assert_eq!(maxval, (1 << bits) - 1);
            let want = img.mapv(|v| v.min(maxval as f64));
            assert_eq!(back, want);
        }
    }

    #[test]
    fn pgm_16_bit_is_big_endian() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("be.pgm");
        write_pgm(&p, &Array2::from_elem((1, 1), 258.0), 16).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[bytes.len() - 2..], &[1, 2]);
        assert!(bytes.starts_with(b"P5\n1 1\n65535\n"));
    }

    #[test]
    fn pgm_header_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.pgm");
        fs::write(&p, b"P5\n# made by hand\n2 1\n255\n\x07\x09").unwrap();
        let (img, _) = read_pgm(&p).unwrap();
        assert_eq!(img.as_slice().unwrap(), &[7.0, 9.0]);
    }

    #[test]
    fn pgm_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_pgm(&dir.path().join("none.pgm")), Err(FpmError::MissingInput(_))));
        let p = dir.path().join("short.pgm");
        fs::write(&p, b"P5\n4 4\n255\n\x00").unwrap();
        assert!(matches!(read_pgm(&p), Err(FpmError::Format { .. })));
        fs::write(&p, b"P2\n1 1\n255\n0").unwrap();
        assert!(matches!(read_pgm(&p), Err(FpmError::Format { .. })));
    }

    #[test]
    fn f32_roundtrip_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("amp.f32");
        let img = Array2::from_shape_fn((4, 6), |(r, c)| r as f64 * 0.25 - c as f64);
        write_f32_image(&p, &img, 0.40625).unwrap();
        let hdr = fs::read_to_string(dir.path().join("amp.hdr")).unwrap();
        assert!(hdr.contains("width=6") && hdr.contains("height=4") && hdr.contains("endianness=little"));
        let (back, pitch) = read_f32_image(&p).unwrap();
        assert_eq!(back, img);
        assert_eq!(pitch, 0.40625);
    }

    #[test]
    fn previews_span_range() {
        let img = Array2::from_shape_fn((2, 2), |(r, c)| (r * 2 + c) as f64);
        let pv = amplitude_preview(&img);
        assert_eq!(pv[[0, 0]], 0.0);
        assert_eq!(pv[[1, 1]], 65535.0);
        let ph = phase_preview(&Array2::from_elem((1, 1), 0.0));
        assert!((ph[[0, 0]] - 32767.5).abs() < 1e-9);
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let rows = vec![
            KeptManifestRow { row: -1, col: 2, file: "frame_r-1_c2.pgm".into() },
            KeptManifestRow { row: 0, col: 0, file: "frame_r0_c0.pgm".into() },
        ];
        write_csv(&p, &rows).unwrap();
        assert!(fs::read_to_string(&p).unwrap().starts_with("row,col,file\n"));
        assert_eq!(read_csv::<KeptManifestRow>(&p).unwrap(), rows);
    }

    proptest! {
        #[test]
        fn pgm_roundtrip_any_values(vals in proptest::collection::vec(0u16..=65535, 12)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("p.pgm");
            let img = Array2::from_shape_vec((3, 4), vals.iter().map(|&v| v as f64).collect()).unwrap();
            write_pgm(&p, &img, 16).unwrap();
            prop_assert_eq!(read_pgm(&p).unwrap().0, img);
        }
    }
}
