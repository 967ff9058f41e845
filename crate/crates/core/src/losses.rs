//! The density-modulated training objective.
//!
//! `total = gamma(d) * coh + (1 - gamma(d)) * contra_rec + dens`, where `coh`
//! is the L1 re-synthesis error with unit airlight, `contra_rec` compares a
//! fixed gradient pyramid of the output with the ground truth, and `dens` is
//! the density score of the output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hden::{classify_level, estimate_density, FogLevel, HazeDensityScore, HdenParams, RoutingThresholds};
use crate::image::{ensure_min_side, ensure_same_dims, RgbImage, TransmissionMap, LUMA};

/// Smoothing constant of `|x| ~ sqrt(x^2 + eps^2)` used for gradients.
pub const ABS_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaSchedule {
    pub light: f64,
    pub medium: f64,
    pub heavy: f64,
    pub thresholds: RoutingThresholds,
}

impl Default for GammaSchedule {
    fn default() -> Self {
        Self {
            light: 0.3,
            medium: 0.6,
            heavy: 0.9,
            thresholds: RoutingThresholds::default(),
        }
    }
}

impl GammaSchedule {
    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        if [self.light, self.medium, self.heavy]
            .iter()
            .any(|g| !(0.0..=1.0).contains(g))
        {
            return Err(Error::invalid("gamma values must lie in [0,1]"));
        }
        Ok(())
    }

    pub fn for_level(&self, level: FogLevel) -> f64 {
        match level {
            FogLevel::Light => self.light,
            FogLevel::Medium => self.medium,
            FogLevel::Heavy => self.heavy,
        }
    }
}

/// Coherence weight for a density score, banded exactly like [`classify_level`].
pub fn gamma_of(d: HazeDensityScore, sched: &GammaSchedule) -> f64 {
    sched.for_level(classify_level(d, &sched.thresholds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptualWeights {
    pub tau: Vec<f64>,
}

impl Default for PerceptualWeights {
    fn default() -> Self {
        Self { tau: vec![0.25; 4] }
    }
}

impl PerceptualWeights {
    pub fn validate(&self) -> Result<()> {
        if self.tau.is_empty()
            || self.tau.iter().any(|t| !t.is_finite() || *t < 0.0)
            || self.tau.iter().all(|t| *t == 0.0)
        {
            return Err(Error::invalid(format!(
                "perceptual weights must be non-negative with one positive, got {:?}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Which terms of the objective are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossTerms {
    pub coh: bool,
    pub contra: bool,
    pub dens: bool,
}

impl Default for LossTerms {
    fn default() -> Self {
        Self {
            coh: true,
            contra: true,
            dens: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub coh: f64,
    pub contra_rec: f64,
    pub dens: f64,
    pub gamma: f64,
    pub total: f64,
}

impl LossReport {
    pub fn combine(coh: f64, contra_rec: f64, dens: f64, gamma: f64) -> Self {
        Self {
            coh,
            contra_rec,
            dens,
            gamma,
            total: gamma * coh + (1.0 - gamma) * contra_rec + dens,
        }
    }
}

pub fn coherence_loss(j_out: &RgbImage, t_out: &TransmissionMap, hazy: &RgbImage) -> Result<f64> {
    ensure_same_dims("output radiance", hazy, j_out)?;
    ensure_same_dims("output transmission", hazy, t_out)?;
    let mut sum = 0.0;
    for ((jp, pp), &t) in j_out.pixels().zip(hazy.pixels()).zip(t_out.data()) {
        for c in 0..3 {
            sum += (jp[c] * t + (1.0 - t) - pp[c]).abs();
        }
    }
    Ok(sum / j_out.data().len() as f64)
}

/// Single-channel map used by the feature pyramid.
struct Map {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

fn luma_of(data: &[f64]) -> Vec<f64> {
    data.chunks_exact(3)
        .map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2])
        .collect()
}

/// 2x2 average pooling; an odd trailing row or column is dropped.
fn pool(m: &Map) -> Map {
    let (w, h) = (m.w / 2, m.h / 2);
    let mut v = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let i = 2 * y * m.w + 2 * x;
            v.push(0.25 * (m.v[i] + m.v[i + 1] + m.v[i + m.w] + m.v[i + m.w + 1]));
        }
    }
    Map { w, h, v }
}

fn pyramid(data: &[f64], w: usize, h: usize, levels: usize) -> Vec<Map> {
    let mut out = vec![Map {
        w,
        h,
        v: luma_of(data),
    }];
    for _ in 1..levels {
        let next = pool(out.last().expect("non-empty"));
        out.push(next);
    }
    out
}

/// Per-level feature distance: mean |diff| of grey, horizontal and vertical
/// gradient maps, summed over the three maps. `abs` is the magnitude
/// function; `dabs`, when given, receives `d(loss)/d(grey_out)` scaled by `scale`.
fn level_distance(
    a: &Map,
    b: &Map,
    abs: impl Fn(f64) -> f64,
    dabs: Option<(&dyn Fn(f64) -> f64, f64, &mut [f64])>,
) -> f64 {
    let (w, h) = (a.w, a.h);
    let mut total = 0.0;
    let n = (w * h) as f64;
    let nx = ((w.saturating_sub(1)) * h) as f64;
    let ny = (w * h.saturating_sub(1)) as f64;

    let mut grad = dabs;
    let mut g_sum = 0.0;
    for i in 0..w * h {
        let d = b.v[i] - a.v[i];
        g_sum += abs(d);
        if let Some((ds, s, g)) = grad.as_mut() {
            g[i] += *s * ds(d) / n;
        }
    }
    total += g_sum / n;

    if nx > 0.0 {
        let mut sum = 0.0;
        for y in 0..h {
            for x in 0..w - 1 {
                let i = y * w + x;
                let d = (b.v[i + 1] - b.v[i]) - (a.v[i + 1] - a.v[i]);
                sum += abs(d);
                if let Some((ds, s, g)) = grad.as_mut() {
                    let k = *s * ds(d) / nx;
                    g[i + 1] += k;
                    g[i] -= k;
                }
            }
        }
        total += sum / nx;
    }
    if ny > 0.0 {
        let mut sum = 0.0;
        for y in 0..h - 1 {
            for x in 0..w {
                let i = y * w + x;
                let d = (b.v[i + w] - b.v[i]) - (a.v[i + w] - a.v[i]);
                sum += abs(d);
                if let Some((ds, s, g)) = grad.as_mut() {
                    let k = *s * ds(d) / ny;
                    g[i + w] += k;
                    g[i] -= k;
                }
            }
        }
        total += sum / ny;
    }
    total
}

fn check_pyramid_size(w: usize, h: usize, levels: usize) -> Result<()> {
    let min = 1usize << levels.saturating_sub(1);
    if w < min || h < min {
        return Err(Error::TooSmall {
            width: w,
            height: h,
            min,
        });
    }
    Ok(())
}

/// `sum_i tau_i * dist(phi_i(gt), phi_i(out))` with exact `|.|`.
pub fn perceptual_loss(j_gt: &RgbImage, j_out: &RgbImage, w: &PerceptualWeights) -> Result<f64> {
    ensure_same_dims("output radiance", j_gt, j_out)?;
    ensure_min_side(j_gt, 16)?;
    w.validate()?;
    Ok(perceptual_raw(j_gt.data(), j_out.data(), j_gt.width(), j_gt.height(), &w.tau, f64::abs))
}

fn perceptual_raw(
    gt: &[f64],
    out: &[f64],
    w: usize,
    h: usize,
    tau: &[f64],
    abs: impl Fn(f64) -> f64 + Copy,
) -> f64 {
    let pa = pyramid(gt, w, h, tau.len());
    let pb = pyramid(out, w, h, tau.len());
    tau.iter()
        .zip(pa.iter().zip(&pb))
        .map(|(t, (a, b))| t * level_distance(a, b, abs, None))
        .sum()
}

/// `|D(J_out)|`; the score is already non-negative.
pub fn density_loss(j_out: &RgbImage, hden: &HdenParams) -> Result<f64> {
    Ok(estimate_density(j_out, hden)?.value())
}

/// Evaluates every term for one image. Terms switched off in `terms` are
/// reported as 0 and excluded from the total.
#[allow(clippy::too_many_arguments)]
pub fn adaptive_loss_with(
    j_out: &RgbImage,
    t_out: &TransmissionMap,
    j_gt: &RgbImage,
    hazy: &RgbImage,
    d: HazeDensityScore,
    sched: &GammaSchedule,
    w: &PerceptualWeights,
    hden: &HdenParams,
    terms: LossTerms,
) -> Result<LossReport> {
    sched.validate()?;
    let gamma = gamma_of(d, sched);
    let coh = if terms.coh {
        coherence_loss(j_out, t_out, hazy)?
    } else {
        0.0
    };
    let contra = if terms.contra {
        perceptual_loss(j_gt, j_out, w)?
    } else {
        0.0
    };
    let dens = if terms.dens {
        density_loss(j_out, hden)?
    } else {
        0.0
    };
    Ok(LossReport::combine(coh, contra, dens, gamma))
}

#[allow(clippy::too_many_arguments)]
pub fn adaptive_loss(
    j_out: &RgbImage,
    t_out: &TransmissionMap,
    j_gt: &RgbImage,
    hazy: &RgbImage,
    d: HazeDensityScore,
    sched: &GammaSchedule,
    w: &PerceptualWeights,
    hden: &HdenParams,
) -> Result<LossReport> {
    adaptive_loss_with(j_out, t_out, j_gt, hazy, d, sched, w, hden, LossTerms::default())
}

fn smooth_abs(x: f64) -> f64 {
    (x * x + ABS_EPS * ABS_EPS).sqrt()
}

fn smooth_abs_grad(x: f64) -> f64 {
    x / (x * x + ABS_EPS * ABS_EPS).sqrt()
}

/// Inputs of the differentiable part of the objective, as raw interleaved
/// RGB buffers so perturbed copies need not satisfy the image invariants.
pub struct SmoothObjective<'a> {
    pub width: usize,
    pub height: usize,
    pub t_out: &'a [f64],
    pub hazy: &'a [f64],
    pub j_gt: &'a [f64],
    pub gamma: f64,
    pub tau: &'a [f64],
}

impl SmoothObjective<'_> {
    fn check(&self, j_out: &[f64]) -> Result<()> {
        let n = self.width * self.height;
        if j_out.len() != 3 * n || self.hazy.len() != 3 * n || self.j_gt.len() != 3 * n || self.t_out.len() != n {
            return Err(Error::invalid("buffer lengths do not match dimensions"));
        }
        check_pyramid_size(self.width, self.height, self.tau.len())
    }

    /// `gamma * coh + (1 - gamma) * contra_rec` with smoothed `|.|`. The
    /// density term is not differentiable through the feature front end and
    /// is left out.
    pub fn value(&self, j_out: &[f64]) -> Result<f64> {
        self.check(j_out)?;
        let mut coh = 0.0;
        for (i, &t) in self.t_out.iter().enumerate() {
            for c in 0..3 {
                coh += smooth_abs(j_out[3 * i + c] * t + (1.0 - t) - self.hazy[3 * i + c]);
            }
        }
        coh /= j_out.len() as f64;
        let contra = perceptual_raw(self.j_gt, j_out, self.width, self.height, self.tau, smooth_abs);
        Ok(self.gamma * coh + (1.0 - self.gamma) * contra)
    }

    /// Analytic gradient of [`SmoothObjective::value`] w.r.t. every channel of `j_out`.
    pub fn gradient(&self, j_out: &[f64]) -> Result<Vec<f64>> {
        self.check(j_out)?;
        let (w, h) = (self.width, self.height);
        let mut grad = vec![0.0; 3 * w * h];
        let n3 = grad.len() as f64;
        for (i, &t) in self.t_out.iter().enumerate() {
            for c in 0..3 {
                let r = j_out[3 * i + c] * t + (1.0 - t) - self.hazy[3 * i + c];
                grad[3 * i + c] = self.gamma * t * smooth_abs_grad(r) / n3;
            }
        }

        let pa = pyramid(self.j_gt, w, h, self.tau.len());
        let pb = pyramid(j_out, w, h, self.tau.len());
        // d/d(grey) per level, then pulled back through the pooling chain
        let mut dgrey: Vec<Vec<f64>> = pb.iter().map(|m| vec![0.0; m.v.len()]).collect();
        for (lvl, t) in self.tau.iter().enumerate() {
            let scale = (1.0 - self.gamma) * t;
            level_distance(
                &pa[lvl],
                &pb[lvl],
                smooth_abs,
                Some((&smooth_abs_grad, scale, &mut dgrey[lvl])),
            );
        }
        for lvl in (1..pb.len()).rev() {
            let (fine, coarse) = dgrey.split_at_mut(lvl);
            let fine = &mut fine[lvl - 1];
            let coarse = &coarse[0];
            let (cw, ch) = (pb[lvl].w, pb[lvl].h);
            let fw = pb[lvl - 1].w;
            for y in 0..ch {
                for x in 0..cw {
                    let g = 0.25 * coarse[y * cw + x];
                    let i = 2 * y * fw + 2 * x;
                    fine[i] += g;
                    fine[i + 1] += g;
                    fine[i + fw] += g;
                    fine[i + fw + 1] += g;
                }
            }
        }
        for (i, g) in dgrey[0].iter().enumerate() {
            for c in 0..3 {
                grad[3 * i + c] += LUMA[c] * g;
            }
        }
        Ok(grad)
    }
}
