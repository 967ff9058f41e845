//! Full-reference (PSNR, SSIM) and no-reference (density score) evaluation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{Error, Result};
use crate::fogsim::DatasetManifest;
use crate::hden::{estimate_density, FogLevel, HdenParams};
use crate::image::{ensure_min_side, ensure_same_dims, Plane, RgbImage};

pub const CSV_HEADER: &str = "image_id,psnr_db,ssim,density,level";

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// `10 log10(1 / MSE)` on `[0,1]` data; `+inf` for identical images.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    ensure_same_dims("compared image", a, b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - c;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable Gaussian filter over fully in-bounds windows only.
fn gaussian_valid(p: &Plane, k: &[f64; SSIM_WINDOW]) -> Plane {
    let (w, h) = (p.width, p.height);
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * p.data[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    Plane::new(ow, oh, out)
}

/// Single-scale SSIM on luma with an 11x11 Gaussian window (sigma 1.5),
/// averaged over all fully in-bounds window positions.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    ensure_same_dims("compared image", a, b)?;
    ensure_min_side(a, SSIM_WINDOW)?;
    let k = gaussian_kernel();
    let (la, lb) = (a.luma(), b.luma());
    let mu_a = gaussian_valid(&la, &k);
    let mu_b = gaussian_valid(&lb, &k);
    let saa = gaussian_valid(&la.map(|v| v * v), &k);
    let sbb = gaussian_valid(&lb.map(|v| v * v), &k);
    let sab = gaussian_valid(&la.zip_map(&lb, |x, y| x * y), &k);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = mu_a.data.len();
    let mut sum = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a.data[i], mu_b.data[i]);
        let va = saa.data[i] - ma * ma;
        let vb = sbb.data[i] - mb * mb;
        let cov = sab.data[i] - ma * mb;
        sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok((sum / n as f64).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub image_id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub density: f64,
    pub level: FogLevel,
}

pub fn format_db(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".into()
    } else {
        format!("{v}")
    }
}

pub fn parse_db(s: &str) -> Option<f64> {
    if s == "inf" {
        Some(f64::INFINITY)
    } else {
        s.parse().ok()
    }
}

impl MetricRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.image_id,
            format_db(self.psnr),
            self.ssim,
            self.density,
            self.level
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelMean {
    pub level: FogLevel,
    pub count: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub density: f64,
}

/// Arithmetic means per fog level, in Light / Medium / Heavy order; levels
/// without rows are omitted.
pub fn level_means(rows: &[MetricRow]) -> Vec<LevelMean> {
    FogLevel::ALL
        .iter()
        .filter_map(|&level| {
            let sel: Vec<&MetricRow> = rows.iter().filter(|r| r.level == level).collect();
            if sel.is_empty() {
                return None;
            }
            let n = sel.len() as f64;
            Some(LevelMean {
                level,
                count: sel.len(),
                psnr: sel.iter().map(|r| r.psnr).sum::<f64>() / n,
                ssim: sel.iter().map(|r| r.ssim).sum::<f64>() / n,
                density: sel.iter().map(|r| r.density).sum::<f64>() / n,
            })
        })
        .collect()
}

pub fn rows_to_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.csv_line());
    }
    s
}

pub fn parse_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::invalid("metrics CSV header mismatch"));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::invalid(format!("bad metrics row {l:?}"));
            if f.len() != 5 {
                return Err(bad());
            }
            Ok(MetricRow {
                image_id: f[0].to_string(),
                psnr: parse_db(f[1]).ok_or_else(bad)?,
                ssim: f[2].parse().map_err(|_| bad())?,
                density: f[3].parse().map_err(|_| bad())?,
                level: f[4].parse()?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<MetricRow>,
    pub means: Vec<LevelMean>,
    /// Image ids whose restored file was absent; excluded from rows and means.
    pub missing: Vec<String>,
}

/// Location of the restored image for a manifest entry.
pub fn result_path(results_dir: &Path, image_id: &str) -> PathBuf {
    results_dir.join(format!("{image_id}.png"))
}

/// Scores a restored image against its ground truth.
pub fn metric_row(
    image_id: String,
    restored: &RgbImage,
    truth: &RgbImage,
    hden: &HdenParams,
    level: FogLevel,
) -> Result<MetricRow> {
    Ok(MetricRow {
        image_id,
        psnr: psnr(restored, truth)?,
        ssim: ssim(restored, truth)?,
        density: estimate_density(restored, hden)?.value(),
        level,
    })
}

pub fn evaluate_manifest(
    manifest: &DatasetManifest,
    results_dir: impl AsRef<Path>,
    hden: &HdenParams,
) -> Result<EvalReport> {
    let results_dir = results_dir.as_ref();
    let scored: Vec<Result<Option<MetricRow>>> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let id = e.image_id();
            let path = result_path(results_dir, &id);
            if !path.exists() {
                return Ok(None);
            }
            let restored = codec::load_image(&path)?;
            let truth = codec::load_image(&e.clear)?;
            metric_row(id, &restored, &truth, hden, e.level).map(Some)
        })
        .collect();
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for (e, r) in manifest.entries.iter().zip(scored) {
        match r? {
            Some(row) => rows.push(row),
            None => missing.push(e.image_id()),
        }
    }
    let means = level_means(&rows);
    Ok(EvalReport {
        rows,
        means,
        missing,
    })
}

pub fn write_csv(rows: &[MetricRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, rows_to_csv(rows)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            let v = 0.25 + 0.5 * (((x * 7 + y * 3) % 11) as f64 / 10.0);
            [v, 0.5 * v + 0.2, 0.8 - 0.4 * v]
        })
        .unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = RgbImage::filled(8, 8, [0.3; 3]).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = RgbImage::filled(8, 8, [0.4; 3]).unwrap();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = textured(24, 20);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let b = RgbImage::from_fn(24, 20, |x, y| a.pixel(x, y).map(|v| (v * 0.8 + 0.05 * (x % 3) as f64).min(1.0))).unwrap();
        let ab = ssim(&a, &b).unwrap();
        assert!((ab - ssim(&b, &a).unwrap()).abs() < 1e-10);
        assert!(ab < 1.0);
    }

    #[test]
    fn ssim_of_negative_is_low() {
        let a = textured(32, 32);
        let neg = RgbImage::from_fn(32, 32, |x, y| a.pixel(x, y).map(|v| 1.0 - v)).unwrap();
        assert!(ssim(&a, &neg).unwrap() < 0.5);
        assert!(matches!(
            ssim(&RgbImage::filled(10, 30, [0.1; 3]).unwrap(), &RgbImage::filled(10, 30, [0.1; 3]).unwrap()),
            Err(Error::TooSmall { .. })
        ));
    }

    #[test]
    fn csv_round_trip_keeps_means() {
        let rows = vec![
            MetricRow { image_id: "a".into(), psnr: 21.123456789, ssim: 0.8, density: 0.2, level: FogLevel::Light },
            MetricRow { image_id: "b".into(), psnr: f64::INFINITY, ssim: 1.0, density: 0.1, level: FogLevel::Light },
            MetricRow { image_id: "c".into(), psnr: 17.5, ssim: 0.6, density: 0.7, level: FogLevel::Heavy },
        ];
        let back = parse_csv(&rows_to_csv(&rows)).unwrap();
        assert_eq!(back, rows);
        let m = level_means(&back);
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].psnr, f64::INFINITY);
        assert_eq!(m[1].psnr, 17.5);
    }
}
