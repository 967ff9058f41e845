//! Latency and operation-count benchmark of the three branches and of
//! density-routed inference against always running the Complex branch.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{Error, Result};
use crate::fogsim::DatasetManifest;
use crate::hden::{classify_level, estimate_density};
use crate::image::RgbImage;
use crate::pipeline::TrainState;
use crate::unfold::{dehaze, BranchKind, BranchParams};

pub const MIN_REPEATS: usize = 5;
pub const WARMUP_RUNS: usize = 2;

// Per-pixel operation counts of the stage sub-steps. A box mean over a
// summed-area table costs a constant 4 lookups + 3 adds per pixel regardless
// of radius, plus 3 adds per pixel to build the table.
const BOX_MEAN_OPS: u64 = 10;
// guided filter: 4 box means (I, p, I*p, I*I) + 2 box means of (a, b)
// + 8 arithmetic ops for a, b and the output
const GUIDED_FILTER_OPS: u64 = 6 * BOX_MEAN_OPS + 8;
// proximal radiance update: per channel residual (4), step (5), clamp (1)
const RADIANCE_STEP_OPS: u64 = 3 * 10;
// luma guide (5) + per channel guided filter and weighted blend (4)
const DENOISE_OPS: u64 = 5 + 3 * (GUIDED_FILTER_OPS + 4);
// least-squares transmission: per channel 6 ops, division and clamp (3),
// plus the luma guide (5)
const TRANSMISSION_OPS: u64 = 3 * 6 + 3 + 5;
// coherence residual: per channel 5 ops
const RESIDUAL_OPS: u64 = 3 * 5;

/// Closed-form arithmetic operation count of one branch on a `width x height`
/// image:
///
/// `stages * pixels * (radiance + denoise + transmission + guided filter + residual)`
/// `+ pixels * patch^2 * search^2` when non-local refinement is enabled.
///
/// With smoothing disabled the denoise and guided-filter terms drop out.
/// Airlight and dark-channel initialization are shared by every branch and
/// not counted.
pub fn estimate_ops(branch: &BranchParams, width: usize, height: usize) -> u64 {
    let pixels = (width * height) as u64;
    let per_stage = if branch.proximal_smoothing {
        RADIANCE_STEP_OPS + DENOISE_OPS + TRANSMISSION_OPS + GUIDED_FILTER_OPS + RESIDUAL_OPS
    } else {
        RADIANCE_STEP_OPS + TRANSMISSION_OPS + RESIDUAL_OPS
    };
    let mut ops = branch.stages.len() as u64 * pixels * per_stage;
    if branch.nonlocal_refine {
        let p = branch.nonlocal_patch as u64;
        let s = branch.nonlocal_search as u64;
        ops += pixels * p * p * s * s;
    }
    ops
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchTiming {
    pub branch: String,
    /// Median over repeats of the per-image mean latency.
    pub mean_ms: f64,
    /// Standard deviation of the per-repeat means.
    pub std_ms: f64,
    pub est_ops: u64,
    /// Fraction of manifest images the density head routes to this branch.
    pub routed_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub per_branch: Vec<BranchTiming>,
    pub fixed_baseline_ms: f64,
    pub adaptive_mean_ms: f64,
    pub savings_fraction: f64,
    /// Mean cost of scoring one image with the density head; reported
    /// separately and not included in `adaptive_mean_ms`.
    pub routing_overhead_ms: f64,
    pub repeats: usize,
    pub images: usize,
    pub warnings: Vec<String>,
}

pub const CSV_HEADER: &str = "branch,mean_ms,std_ms,est_ops,routed_fraction";

impl BenchReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for b in &self.per_branch {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                b.branch, b.mean_ms, b.std_ms, b.est_ops, b.routed_fraction
            );
        }
        s
    }

    /// Writes the JSON report to `path` and the per-branch CSV next to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))?;
        let csv = path.with_extension("csv");
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
}

/// Per-repeat mean latency (ms per image) of `f` over `images`.
fn time_repeats(images: &[RgbImage], repeats: usize, mut f: impl FnMut(&RgbImage) -> Result<()>) -> Result<Vec<f64>> {
    for _ in 0..WARMUP_RUNS {
        for img in images {
            f(img)?;
        }
    }
    let mut means = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        for img in images {
            f(img)?;
        }
        means.push(start.elapsed().as_secs_f64() * 1e3 / images.len() as f64);
    }
    Ok(means)
}

/// Times every branch on every hazy image of the manifest. Runs on the
/// calling thread only; nothing inside the timed regions is parallel.
pub fn run_bench(manifest: &DatasetManifest, state: &TrainState, repeats: usize) -> Result<BenchReport> {
    if repeats < MIN_REPEATS {
        return Err(Error::invalid(format!("repeats must be >= {MIN_REPEATS}, got {repeats}")));
    }
    if manifest.entries.is_empty() {
        return Err(Error::invalid("manifest is empty"));
    }
    let images: Vec<RgbImage> = manifest
        .entries
        .iter()
        .map(|e| codec::load_image(&e.hazy))
        .collect::<Result<_>>()?;
    let (w, h) = (images[0].width(), images[0].height());

    let mut warnings = Vec::new();
    let counts = manifest.level_counts();
    if counts.iter().any(|&c| c != counts[0]) {
        warnings.push(format!("manifest is not balanced across fog levels: {counts:?}"));
    }

    let mut routed = [0usize; 3];
    for img in &images {
        let d = estimate_density(img, &state.hden)?;
        routed[classify_level(d, &state.thresholds).index()] += 1;
    }
    let routing = time_repeats(&images, repeats, |img| estimate_density(img, &state.hden).map(|_| ()))?;

    let mut per_branch = Vec::with_capacity(3);
    for kind in BranchKind::ALL {
        let params = state.branches.get(kind);
        let means = time_repeats(&images, repeats, |img| dehaze(img, params).map(|_| ()))?;
        per_branch.push(BranchTiming {
            branch: kind.name().to_string(),
            mean_ms: median(&means),
            std_ms: std_dev(&means),
            est_ops: estimate_ops(params, w, h),
            routed_fraction: routed[kind as usize] as f64 / images.len() as f64,
        });
    }
    let adaptive_mean_ms: f64 = per_branch.iter().map(|b| b.routed_fraction * b.mean_ms).sum();
    let fixed_baseline_ms = per_branch[BranchKind::Complex as usize].mean_ms;
    Ok(BenchReport {
        savings_fraction: 1.0 - adaptive_mean_ms / fixed_baseline_ms,
        per_branch,
        fixed_baseline_ms,
        adaptive_mean_ms,
        routing_overhead_ms: median(&routing),
        repeats,
        images: images.len(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ops_ordering_and_linearity() {
        let l = BranchParams::default_for(BranchKind::Light);
        let m = BranchParams::default_for(BranchKind::Medium);
        let c = BranchParams::default_for(BranchKind::Complex);
        for (w, h) in [(16, 16), (64, 48), (640, 480)] {
            let (a, b, cc) = (estimate_ops(&l, w, h), estimate_ops(&m, w, h), estimate_ops(&c, w, h));
            assert!(a < b && b < cc);
            assert!(cc as f64 / a as f64 >= 3.0);
        }
        assert_eq!(estimate_ops(&l, 32, 64), 2 * estimate_ops(&l, 32, 32));
        let mut none = l.clone();
        none.stages.clear();
        assert_eq!(estimate_ops(&none, 100, 100), 0);
    }

    #[test]
    fn median_and_std() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(std_dev(&[2.0, 2.0]), 0.0);
    }
}
