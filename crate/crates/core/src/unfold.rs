//! Model-based unfolding dehazing branches.
//!
//! A branch starts from the dark-channel estimate of airlight and
//! transmission and runs a fixed number of stages. Each stage alternates
//!
//! 1. a proximal data step on the radiance, which solves
//!    `min_J |J t + A (1 - t) - P|^2 + |J - J_prev|^2 / step` in closed form,
//!    followed by grey-guided edge-preserving smoothing;
//! 2. a per-pixel least-squares transmission fit to the current radiance,
//!    refined by a guided filter steered by the radiance luma.
//!
//! The Complex branch finishes with a non-local means pass. Stage counts are
//! 2 / 4 / 6 for Light / Medium / Complex.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{dark_channel, guided_filter, min_filter, non_local_means};
use crate::fogsim::AtmosphericLight;
use crate::hden::{classify_level, estimate_density, FogLevel, HazeDensityScore, HdenParams, RoutingThresholds, DARK_WINDOW};
use crate::image::{ensure_min_side, ensure_same_dims, Plane, RgbImage, TransmissionMap, T_FLOOR};

/// Share of pixels (by dark channel rank) averaged into the airlight estimate.
const AIRLIGHT_TOP_FRACTION: f64 = 0.001;
/// Haze retention factor of the dark-channel transmission estimate.
const DCP_OMEGA: f64 = 0.95;
/// Window and regulariser of the radiance smoothing filter.
const DENOISE_RADIUS: usize = 2;
const DENOISE_EPS: f64 = 1e-3;
/// Per-stage decay of the default smoothing strength and regulariser; later
/// stages see a cleaner estimate and need less smoothing.
const STRENGTH_DECAY: f64 = 0.85;
const EPS_DECAY: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BranchKind {
    Light,
    Medium,
    Complex,
}

impl BranchKind {
    pub const ALL: [BranchKind; 3] = [BranchKind::Light, BranchKind::Medium, BranchKind::Complex];

    pub fn for_level(level: FogLevel) -> Self {
        match level {
            FogLevel::Light => BranchKind::Light,
            FogLevel::Medium => BranchKind::Medium,
            FogLevel::Heavy => BranchKind::Complex,
        }
    }

    pub fn stage_count(self) -> usize {
        match self {
            BranchKind::Light => 2,
            BranchKind::Medium => 4,
            BranchKind::Complex => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BranchKind::Light => "light",
            BranchKind::Medium => "medium",
            BranchKind::Complex => "complex",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageParams {
    pub fidelity_step: f64,
    pub trans_smooth_radius: usize,
    pub trans_smooth_eps: f64,
    pub radiance_denoise_strength: f64,
}

impl Default for StageParams {
    fn default() -> Self {
        Self {
            fidelity_step: 500.0,
            trans_smooth_radius: 8,
            trans_smooth_eps: 3e-2,
            radiance_denoise_strength: 0.2,
        }
    }
}

impl StageParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fidelity_step.is_finite()
            && self.fidelity_step >= 0.0
            && self.trans_smooth_radius >= 1
            && self.trans_smooth_eps.is_finite()
            && self.trans_smooth_eps > 0.0
            && self.radiance_denoise_strength.is_finite()
            && self.radiance_denoise_strength >= 0.0;
        if !ok {
            return Err(Error::invalid(format!("invalid stage parameters {self:?}")));
        }
        Ok(())
    }
}

fn default_true() -> bool {
    true
}

fn default_nl_h() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchParams {
    pub kind: BranchKind,
    pub stages: Vec<StageParams>,
    pub nonlocal_refine: bool,
    pub nonlocal_patch: usize,
    pub nonlocal_search: usize,
    /// Filtering strength of the non-local means pass.
    #[serde(default = "default_nl_h")]
    pub nonlocal_h: f64,
    /// When false the smoothing sub-steps of every stage are skipped.
    #[serde(default = "default_true")]
    pub proximal_smoothing: bool,
}

impl BranchParams {
    pub fn default_for(kind: BranchKind) -> Self {
        Self {
            kind,
            stages: (0..kind.stage_count())
                .map(|i| {
                    let base = StageParams::default();
                    StageParams {
                        radiance_denoise_strength: base.radiance_denoise_strength * STRENGTH_DECAY.powi(i as i32),
                        trans_smooth_eps: base.trans_smooth_eps * EPS_DECAY.powi(i as i32),
                        ..base
                    }
                })
                .collect(),
            nonlocal_refine: kind == BranchKind::Complex,
            nonlocal_patch: 5,
            nonlocal_search: 11,
            nonlocal_h: default_nl_h(),
            proximal_smoothing: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.len() != self.kind.stage_count() {
            return Err(Error::invalid(format!(
                "{} branch needs {} stages, got {}",
                self.kind.name(),
                self.kind.stage_count(),
                self.stages.len()
            )));
        }
        if self.nonlocal_refine && self.stages.len() != 6 {
            return Err(Error::invalid("non-local refinement requires 6 stages"));
        }
        if self.nonlocal_refine
            && (self.nonlocal_patch % 2 == 0
                || self.nonlocal_search % 2 == 0
                || !(self.nonlocal_h.is_finite() && self.nonlocal_h > 0.0))
        {
            return Err(Error::invalid("non-local patch/search must be odd and h > 0"));
        }
        self.stages.iter().try_for_each(StageParams::validate)
    }

    /// Parameters adjusted during training, three per stage:
    /// `ln(fidelity_step)`, `ln(trans_smooth_eps)`, `radiance_denoise_strength`.
    /// The window radius is structural and not learned.
    pub fn learnable(&self) -> Vec<f64> {
        self.stages
            .iter()
            .flat_map(|s| {
                [
                    s.fidelity_step.max(1e-12).ln(),
                    s.trans_smooth_eps.ln(),
                    s.radiance_denoise_strength,
                ]
            })
            .collect()
    }

    pub fn with_learnable(&self, v: &[f64]) -> Self {
        assert_eq!(v.len(), self.stages.len() * 3, "learnable vector length");
        let mut out = self.clone();
        for (s, c) in out.stages.iter_mut().zip(v.chunks_exact(3)) {
            s.fidelity_step = c[0].exp().clamp(1e-6, 1e6);
            s.trans_smooth_eps = c[1].exp().clamp(1e-8, 1.0);
            s.radiance_denoise_strength = c[2].clamp(0.0, 1.0);
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: Self = serde_json::from_str(&text)
            .map_err(|e| Error::format(path, format!("bad branch parameters: {e}")))?;
        p.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("params serialize");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// The three branches, indexed by fog level.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchSet {
    pub light: BranchParams,
    pub medium: BranchParams,
    pub complex: BranchParams,
}

impl Default for BranchSet {
    fn default() -> Self {
        Self {
            light: BranchParams::default_for(BranchKind::Light),
            medium: BranchParams::default_for(BranchKind::Medium),
            complex: BranchParams::default_for(BranchKind::Complex),
        }
    }
}

impl BranchSet {
    pub fn get(&self, kind: BranchKind) -> &BranchParams {
        match kind {
            BranchKind::Light => &self.light,
            BranchKind::Medium => &self.medium,
            BranchKind::Complex => &self.complex,
        }
    }

    pub fn get_mut(&mut self, kind: BranchKind) -> &mut BranchParams {
        match kind {
            BranchKind::Light => &mut self.light,
            BranchKind::Medium => &mut self.medium,
            BranchKind::Complex => &mut self.complex,
        }
    }

    pub fn for_level(&self, level: FogLevel) -> &BranchParams {
        self.get(BranchKind::for_level(level))
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let set = Self {
            light: BranchParams::load(dir.join("light.json"))?,
            medium: BranchParams::load(dir.join("medium.json"))?,
            complex: BranchParams::load(dir.join("complex.json"))?,
        };
        for k in BranchKind::ALL {
            if set.get(k).kind != k {
                return Err(Error::format(
                    dir.join(format!("{}.json", k.name())),
                    format!("file holds a {:?} branch", set.get(k).kind),
                ));
            }
        }
        Ok(set)
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for k in BranchKind::ALL {
            self.get(k).save(dir.join(format!("{}.json", k.name())))?;
        }
        Ok(())
    }
}

/// Radiance / transmission pair carried between stages.
#[derive(Debug, Clone, PartialEq)]
pub struct DehazeState {
    pub j: RgbImage,
    pub t: TransmissionMap,
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DehazeResult {
    pub j_out: RgbImage,
    pub t_out: TransmissionMap,
    pub airlight: AtmosphericLight,
    /// Coherence residual of the initial state, before any stage ran.
    pub initial_residual: f64,
    /// Coherence residual after each stage.
    pub residual_trace: Vec<f64>,
}

/// Mean colour of the brightest 0.1% of pixels ranked by their channel
/// minimum (at least one pixel). Ranking and tie-breaking look only at pixel
/// values, so the estimate depends on the pixel multiset alone.
pub fn estimate_atmospheric_light(hazy: &RgbImage) -> Result<AtmosphericLight> {
    ensure_min_side(hazy, 16)?;
    let mut px: Vec<[f64; 3]> = hazy.pixels().collect();
    let key = |p: &[f64; 3]| (p[0].min(p[1]).min(p[2]), p[0] + p[1] + p[2], p[0], p[1], p[2]);
    px.sort_by(|a, b| key(b).partial_cmp(&key(a)).expect("finite pixels"));
    let k = ((px.len() as f64 * AIRLIGHT_TOP_FRACTION).ceil() as usize).max(1);
    let mut a = [0.0; 3];
    for p in &px[..k] {
        for c in 0..3 {
            a[c] += p[c] / k as f64;
        }
    }
    AtmosphericLight::new(a)
}

/// Dark-channel transmission: `clamp(1 - 0.95 * dark(P / A), T_FLOOR, 1)`.
pub fn init_transmission(hazy: &RgbImage, airlight: AtmosphericLight) -> Result<TransmissionMap> {
    let a = airlight.rgb();
    if a.iter().any(|&v| v <= 0.0) {
        return Err(Error::invalid(format!("airlight {a:?} has a zero channel")));
    }
    let norm: Vec<f64> = hazy
        .pixels()
        .map(|p| (p[0] / a[0]).min(p[1] / a[1]).min(p[2] / a[2]))
        .collect();
    let dark = min_filter(&Plane::new(hazy.width(), hazy.height(), norm), DARK_WINDOW);
    TransmissionMap::from_clamped(
        hazy.width(),
        hazy.height(),
        dark.data.iter().map(|d| 1.0 - DCP_OMEGA * d).collect(),
    )
}

/// `sum |J t + A (1 - t) - P| / pixel_count` (summed over channels).
pub fn coherence_residual(
    j: &RgbImage,
    t: &TransmissionMap,
    hazy: &RgbImage,
    airlight: AtmosphericLight,
) -> f64 {
    let a = airlight.rgb();
    let mut sum = 0.0;
    for ((jp, pp), &tv) in j.pixels().zip(hazy.pixels()).zip(t.data()) {
        for c in 0..3 {
            sum += (jp[c] * tv + a[c] * (1.0 - tv) - pp[c]).abs();
        }
    }
    sum / j.pixel_count() as f64
}

/// Edge-preserving smoothing blended in proportion to the haze fraction
/// `1 - t`: inversion amplifies noise by `1/t`, and haze-free pixels are
/// left untouched.
fn smooth_radiance(j: &RgbImage, t: &TransmissionMap, strength: f64) -> RgbImage {
    let s = strength.min(1.0);
    if s <= 0.0 {
        return j.clone();
    }
    let guide = j.luma();
    let planes: Vec<Plane> = (0..3)
        .map(|c| {
            let ch = j.channel(c);
            let f = guided_filter(&ch, &guide, DENOISE_RADIUS, DENOISE_EPS);
            let mut out = ch.zip_map(&f, |v, g| g - v);
            for ((o, &v), &tv) in out.data.iter_mut().zip(&ch.data).zip(t.data()) {
                *o = v + s * (1.0 - tv) * *o;
            }
            out
        })
        .collect();
    RgbImage::from_planes([&planes[0], &planes[1], &planes[2]]).expect("planes share dims")
}

/// One unfolding stage. `smoothing = false` skips both smoothing sub-steps.
pub fn unfold_stage(
    state: &DehazeState,
    hazy: &RgbImage,
    airlight: AtmosphericLight,
    stage: &StageParams,
    smoothing: bool,
) -> Result<DehazeState> {
    ensure_same_dims("radiance", hazy, &state.j)?;
    ensure_same_dims("transmission", hazy, &state.t)?;
    let (w, h) = (hazy.width(), hazy.height());
    if stage.trans_smooth_radius > w.min(h) / 4 {
        return Err(Error::invalid(format!(
            "smoothing radius {} exceeds a quarter of the image side {}",
            stage.trans_smooth_radius,
            w.min(h)
        )));
    }
    let a = airlight.rgb();
    let eta = stage.fidelity_step;

    // (a) radiance: closed-form proximal step on the scattering data term
    let mut jd = Vec::with_capacity(w * h * 3);
    for ((jp, pp), &t) in state.j.pixels().zip(hazy.pixels()).zip(state.t.data()) {
        for c in 0..3 {
            let resid = pp[c] - (jp[c] * t + a[c] * (1.0 - t));
            jd.push(jp[c] + eta * t * resid / (1.0 + eta * t * t));
        }
    }
    let mut j = RgbImage::from_clamped(w, h, jd)?;
    if smoothing {
        j = smooth_radiance(&j, &state.t, stage.radiance_denoise_strength);
    }

    // (b) transmission: least-squares fit per pixel, then guided refinement
    let mut td = Vec::with_capacity(w * h);
    for ((jp, pp), &t_prev) in j.pixels().zip(hazy.pixels()).zip(state.t.data()) {
        let mut num = 0.0;
        let mut den = 0.0;
        for c in 0..3 {
            num += (pp[c] - a[c]) * (jp[c] - a[c]);
            den += (jp[c] - a[c]).powi(2);
        }
        td.push(if den > 1e-8 { (num / den).clamp(T_FLOOR, 1.0) } else { t_prev });
    }
    let t_data = Plane::new(w, h, td);
    let t_plane = if smoothing {
        guided_filter(&t_data, &j.luma(), stage.trans_smooth_radius, stage.trans_smooth_eps)
    } else {
        t_data
    };
    let t = TransmissionMap::from_clamped(w, h, t_plane.data)?;

    let mut trace = state.trace.clone();
    trace.push(coherence_residual(&j, &t, hazy, airlight));
    Ok(DehazeState { j, t, trace })
}

/// Runs a full branch on a hazy image.
pub fn dehaze(hazy: &RgbImage, branch: &BranchParams) -> Result<DehazeResult> {
    branch.validate()?;
    let airlight = estimate_atmospheric_light(hazy)?;
    let t0 = init_transmission(hazy, airlight)?;
    let initial_residual = coherence_residual(hazy, &t0, hazy, airlight);
    let mut state = DehazeState {
        j: hazy.clone(),
        t: t0,
        trace: Vec::with_capacity(branch.stages.len()),
    };
    for stage in &branch.stages {
        state = unfold_stage(&state, hazy, airlight, stage, branch.proximal_smoothing)?;
    }
    let j_out = if branch.nonlocal_refine {
        non_local_means(
            &state.j,
            branch.nonlocal_patch,
            branch.nonlocal_search,
            branch.nonlocal_h,
        )
    } else {
        state.j
    };
    Ok(DehazeResult {
        j_out,
        t_out: state.t,
        airlight,
        initial_residual,
        residual_trace: state.trace,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutedResult {
    pub result: DehazeResult,
    pub density: HazeDensityScore,
    pub level: FogLevel,
}

/// Scores the image, picks the branch for its fog level (or `force`) and runs it.
pub fn route_and_dehaze(
    hazy: &RgbImage,
    hden: &HdenParams,
    thr: &RoutingThresholds,
    branches: &BranchSet,
    force: Option<FogLevel>,
) -> Result<RoutedResult> {
    thr.validate()?;
    let density = estimate_density(hazy, hden)?;
    let level = force.unwrap_or_else(|| classify_level(density, thr));
    let result = dehaze(hazy, branches.for_level(level))?;
    Ok(RoutedResult {
        result,
        density,
        level,
    })
}

/// Dark channel of an image with the standard window, exposed for diagnostics.
pub fn image_dark_channel(image: &RgbImage) -> Plane {
    dark_channel(image, DARK_WINDOW)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_image_airlight() {
        let img = RgbImage::filled(20, 20, [0.4; 3]).unwrap();
        assert_eq!(estimate_atmospheric_light(&img).unwrap().rgb(), [0.4; 3]);
    }

    #[test]
    fn airlight_ignores_pixel_order() {
        let img = RgbImage::from_fn(40, 30, |x, y| {
            let v = ((x * 7 + y * 13) % 17) as f64 / 17.0;
            [v, 1.0 - v * 0.5, (v * 3.0) % 1.0]
        })
        .unwrap();
        let mut px: Vec<[f64; 3]> = img.pixels().collect();
        px.reverse();
        px.rotate_left(311);
        let shuffled = RgbImage::new(40, 30, px.into_iter().flatten().collect()).unwrap();
        assert_eq!(
            estimate_atmospheric_light(&img).unwrap(),
            estimate_atmospheric_light(&shuffled).unwrap()
        );
    }

    #[test]
    fn init_transmission_extremes() {
        let a = AtmosphericLight::new([0.9, 0.8, 0.85]).unwrap();
        let p = RgbImage::filled(20, 20, a.rgb()).unwrap();
        let t = init_transmission(&p, a).unwrap();
        assert!(t.data().iter().all(|&v| (v - T_FLOOR).abs() < 1e-12));

        let p = RgbImage::from_fn(20, 20, |x, y| [0.0, x as f64 / 20.0, y as f64 / 20.0]).unwrap();
        let t = init_transmission(&p, a).unwrap();
        assert!(t.data().iter().all(|&v| v == 1.0));

        assert!(init_transmission(&p, AtmosphericLight::new([0.0, 1.0, 1.0]).unwrap()).is_err());
    }

    #[test]
    fn null_stage_keeps_radiance() {
        let hazy = RgbImage::from_fn(32, 32, |x, y| [0.5 + x as f64 / 100.0, 0.6, 0.4 + y as f64 / 100.0]).unwrap();
        let a = AtmosphericLight::gray(0.95).unwrap();
        let state = DehazeState {
            j: RgbImage::from_fn(32, 32, |x, _| [x as f64 / 40.0, 0.2, 0.3]).unwrap(),
            t: TransmissionMap::filled(32, 32, 0.4).unwrap(),
            trace: vec![],
        };
        let stage = StageParams {
            fidelity_step: 0.0,
            radiance_denoise_strength: 0.0,
            ..StageParams::default()
        };
        let next = unfold_stage(&state, &hazy, a, &stage, true).unwrap();
        assert_eq!(next.j, state.j);
        assert_eq!(next.trace.len(), 1);
    }

    #[test]
    fn branch_shape_validation() {
        let mut b = BranchParams::default_for(BranchKind::Medium);
        b.stages.pop();
        assert!(b.validate().is_err());
        let mut b = BranchParams::default_for(BranchKind::Light);
        b.nonlocal_refine = true;
        assert!(b.validate().is_err());
        for k in BranchKind::ALL {
            BranchParams::default_for(k).validate().unwrap();
        }
    }

    #[test]
    fn learnable_round_trip() {
        let b = BranchParams::default_for(BranchKind::Complex);
        let v = b.learnable();
        assert_eq!(v.len(), 18);
        let back = b.with_learnable(&v);
        for (x, y) in back.stages.iter().zip(&b.stages) {
            assert!((x.fidelity_step - y.fidelity_step).abs() < 1e-12);
            assert!((x.trans_smooth_eps - y.trans_smooth_eps).abs() < 1e-15);
            assert_eq!(x.radiance_denoise_strength, y.radiance_denoise_strength);
        }
    }

    #[test]
    fn radius_bound_enforced() {
        let hazy = RgbImage::filled(24, 24, [0.5; 3]).unwrap();
        let b = BranchParams::default_for(BranchKind::Light);
        // 24 / 4 = 6 < default radius 8
        assert!(matches!(dehaze(&hazy, &b), Err(Error::Invalid(_))));
    }
}
