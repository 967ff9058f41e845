//! Haze density estimation: a six-feature front end, a small trainable head
//! producing a score in `[0, 1]`, and the three-way fog level banding.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{Error, Result};
use crate::filters::dark_channel;
use crate::fogsim::DatasetManifest;
use crate::image::{ensure_min_side, RgbImage};

/// Dark channel window used by the features (and by the unfolding init).
pub const DARK_WINDOW: usize = 15;

pub const N_FEATURES: usize = 6;
pub const N_HIDDEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FogLevel {
    Light,
    Medium,
    Heavy,
}

impl FogLevel {
    pub const ALL: [FogLevel; 3] = [FogLevel::Light, FogLevel::Medium, FogLevel::Heavy];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn short_name(self) -> &'static str {
        match self {
            FogLevel::Light => "light",
            FogLevel::Medium => "medium",
            FogLevel::Heavy => "heavy",
        }
    }

    /// Regression target at the centre of the level's band for thresholds (1/3, 2/3).
    pub fn target(self) -> f64 {
        match self {
            FogLevel::Light => 1.0 / 6.0,
            FogLevel::Medium => 0.5,
            FogLevel::Heavy => 5.0 / 6.0,
        }
    }
}

impl fmt::Display for FogLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FogLevel::Light => "Light",
            FogLevel::Medium => "Medium",
            FogLevel::Heavy => "Heavy",
        })
    }
}

impl FromStr for FogLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l" | "light" => Ok(FogLevel::Light),
            "m" | "medium" => Ok(FogLevel::Medium),
            "h" | "heavy" | "complex" => Ok(FogLevel::Heavy),
            _ => Err(Error::invalid(format!("unknown fog level {s:?}"))),
        }
    }
}

/// Haze density score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct HazeDensityScore(f64);

impl HazeDensityScore {
    pub fn new(d: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&d) {
            return Err(Error::invalid(format!("density score {d} outside [0,1]")));
        }
        Ok(Self(d))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutingThresholds {
    pub alpha: f64,
    pub beta_thr: f64,
}

impl RoutingThresholds {
    pub fn new(alpha: f64, beta_thr: f64) -> Result<Self> {
        let t = Self { alpha, beta_thr };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.alpha && self.alpha < self.beta_thr && self.beta_thr < 1.0) {
            return Err(Error::invalid(format!(
                "thresholds must satisfy 0 < alpha < beta_thr < 1, got ({}, {})",
                self.alpha, self.beta_thr
            )));
        }
        Ok(())
    }
}

impl Default for RoutingThresholds {
    fn default() -> Self {
        Self {
            alpha: 1.0 / 3.0,
            beta_thr: 2.0 / 3.0,
        }
    }
}

/// Light below `alpha`, Heavy above `beta_thr`, Medium in between with both
/// boundaries inclusive.
pub fn classify_level(d: HazeDensityScore, thr: &RoutingThresholds) -> FogLevel {
    let d = d.0;
    if d < thr.alpha {
        FogLevel::Light
    } else if d <= thr.beta_thr {
        FogLevel::Medium
    } else {
        FogLevel::Heavy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HazeFeatures {
    pub dark_channel_mean: f64,
    pub dark_channel_p90: f64,
    pub rms_contrast: f64,
    pub mean_saturation: f64,
    pub gradient_energy: f64,
    pub airlight_proximity: f64,
}

impl HazeFeatures {
    pub fn to_array(&self) -> [f64; N_FEATURES] {
        [
            self.dark_channel_mean,
            self.dark_channel_p90,
            self.rms_contrast,
            self.mean_saturation,
            self.gradient_energy,
            self.airlight_proximity,
        ]
    }
}

pub fn extract_features(image: &RgbImage) -> Result<HazeFeatures> {
    ensure_min_side(image, 16)?;
    let n = image.pixel_count() as f64;

    let dark = dark_channel(image, DARK_WINDOW);
    let dark_channel_mean = dark.mean();
    let mut sorted = dark.data.clone();
    sorted.sort_by(f64::total_cmp);
    // nearest-rank percentile
    let rank = ((0.9 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let dark_channel_p90 = sorted[rank - 1];

    let luma = image.luma();
    let mean_l = luma.mean();
    let var_l = luma.data.iter().map(|v| (v - mean_l).powi(2)).sum::<f64>() / n;
    // luma std is at most 0.5 on [0,1] data
    let rms_contrast = (2.0 * var_l.sqrt()).min(1.0);

    let mean_saturation = image
        .pixels()
        .map(|p| {
            let mx = p[0].max(p[1]).max(p[2]);
            let mn = p[0].min(p[1]).min(p[2]);
            if mx > 0.0 {
                (mx - mn) / mx
            } else {
                0.0
            }
        })
        .sum::<f64>()
        / n;

    let (w, h) = (image.width(), image.height());
    let mut gx = 0.0;
    for y in 0..h {
        for x in 0..w - 1 {
            gx += (luma.get(x + 1, y) - luma.get(x, y)).abs();
        }
    }
    let mut gy = 0.0;
    for y in 0..h - 1 {
        for x in 0..w {
            gy += (luma.get(x, y + 1) - luma.get(x, y)).abs();
        }
    }
    let grad = gx / ((w - 1) * h) as f64 + gy / (w * (h - 1)) as f64;
    let gradient_energy = 1.0 - (-10.0 * grad).exp();

    // brightest pixel by luma, ties broken by channel values so the choice
    // depends only on the pixel multiset
    let key = |p: &[f64; 3]| (p[0] * 0.299 + p[1] * 0.587 + p[2] * 0.114, p[0], p[1], p[2]);
    let brightest = image
        .pixels()
        .max_by(|a, b| key(a).partial_cmp(&key(b)).expect("finite"))
        .expect("non-empty image");
    let mean_dist = image
        .pixels()
        .map(|p| (0..3).map(|c| (p[c] - brightest[c]).abs()).sum::<f64>() / 3.0)
        .sum::<f64>()
        / n;
    let airlight_proximity = 1.0 - mean_dist;

    Ok(HazeFeatures {
        dark_channel_mean,
        dark_channel_p90,
        rms_contrast,
        mean_saturation,
        gradient_energy,
        airlight_proximity,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Row-major `out x in` weight matrix.
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl Layer {
    fn zeros(outs: usize, ins: usize) -> Self {
        Self {
            w: vec![vec![0.0; ins]; outs],
            b: vec![0.0; outs],
        }
    }

    fn check(&self, outs: usize, ins: usize, name: &str) -> Result<()> {
        if self.w.len() != outs || self.b.len() != outs || self.w.iter().any(|r| r.len() != ins) {
            return Err(Error::invalid(format!("{name} must have shape {outs}x{ins}")));
        }
        if self.w.iter().flatten().chain(&self.b).any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("{name} has non-finite parameters")));
        }
        Ok(())
    }
}

/// Density head: `sigmoid(w2 . tanh(W1 f + b1) + b2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HdenParams {
    pub layer1: Layer,
    pub layer2: Layer,
}

/// Forward-pass intermediates kept for backpropagation.
struct Forward {
    hidden: [f64; N_HIDDEN],
    out: f64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl HdenParams {
    pub fn zeros() -> Self {
        Self {
            layer1: Layer::zeros(N_HIDDEN, N_FEATURES),
            layer2: Layer::zeros(1, N_HIDDEN),
        }
    }

    /// Random head whose first layer standardizes the given feature
    /// statistics, so every hidden unit starts in the responsive range of tanh.
    pub fn init_for(features: &[HazeFeatures], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = features.len().max(1) as f64;
        let mut mean = [0.0; N_FEATURES];
        for f in features {
            for (m, v) in mean.iter_mut().zip(f.to_array()) {
                *m += v / n;
            }
        }
        let mut std = [0.0; N_FEATURES];
        for f in features {
            for ((s, v), m) in std.iter_mut().zip(f.to_array()).zip(mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        let scale = std.map(|s| 1.0 / (s.sqrt() + 1e-3));

        let mut p = Self::zeros();
        for j in 0..N_HIDDEN {
            let mut bias = 0.0;
            for k in 0..N_FEATURES {
                let r: f64 = rng.gen_range(-1.0..1.0) / (N_FEATURES as f64).sqrt();
                p.layer1.w[j][k] = r * scale[k];
                bias -= r * scale[k] * mean[k];
            }
            p.layer1.b[j] = bias;
            p.layer2.w[0][j] = rng.gen_range(-0.5..0.5);
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        self.layer1.check(N_HIDDEN, N_FEATURES, "layer1")?;
        self.layer2.check(1, N_HIDDEN, "layer2")
    }

    fn forward(&self, f: &[f64; N_FEATURES]) -> Forward {
        let mut hidden = [0.0; N_HIDDEN];
        let mut z = self.layer2.b[0];
        for (j, h) in hidden.iter_mut().enumerate() {
            let mut a = self.layer1.b[j];
            for k in 0..N_FEATURES {
                a += self.layer1.w[j][k] * f[k];
            }
            *h = a.tanh();
            z += self.layer2.w[0][j] * *h;
        }
        Forward {
            hidden,
            out: sigmoid(z),
        }
    }

    pub fn score(&self, f: &HazeFeatures) -> HazeDensityScore {
        let d = self.forward(&f.to_array()).out;
        // sigmoid saturates to exactly 0 or 1 at extreme inputs; never outside
        HazeDensityScore(if d.is_finite() { d.clamp(0.0, 1.0) } else { 0.5 })
    }

    /// Squared error `(d - target)^2` for one sample and its gradient,
    /// flattened in [`HdenParams::to_flat`] order.
    pub fn sample_grad(&self, f: &HazeFeatures, target: f64) -> (f64, Vec<f64>) {
        let x = f.to_array();
        let fw = self.forward(&x);
        let err = fw.out - target;
        let dz = 2.0 * err * fw.out * (1.0 - fw.out);
        let mut g = vec![0.0; Self::N_PARAMS];
        for j in 0..N_HIDDEN {
            let da = dz * self.layer2.w[0][j] * (1.0 - fw.hidden[j] * fw.hidden[j]);
            for k in 0..N_FEATURES {
                g[j * N_FEATURES + k] = da * x[k];
            }
            g[N_HIDDEN * N_FEATURES + j] = da;
            g[N_HIDDEN * N_FEATURES + N_HIDDEN + j] = dz * fw.hidden[j];
        }
        g[Self::N_PARAMS - 1] = dz;
        (err * err, g)
    }

    pub const N_PARAMS: usize = N_HIDDEN * N_FEATURES + N_HIDDEN + N_HIDDEN + 1;

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::N_PARAMS);
        v.extend(self.layer1.w.iter().flatten());
        v.extend(&self.layer1.b);
        v.extend(&self.layer2.w[0]);
        v.push(self.layer2.b[0]);
        v
    }

    pub fn from_flat(v: &[f64]) -> Self {
        assert_eq!(v.len(), Self::N_PARAMS);
        let mut p = Self::zeros();
        for j in 0..N_HIDDEN {
            p.layer1.w[j].copy_from_slice(&v[j * N_FEATURES..(j + 1) * N_FEATURES]);
        }
        let o = N_HIDDEN * N_FEATURES;
        p.layer1.b.copy_from_slice(&v[o..o + N_HIDDEN]);
        p.layer2.w[0].copy_from_slice(&v[o + N_HIDDEN..o + 2 * N_HIDDEN]);
        p.layer2.b[0] = v[Self::N_PARAMS - 1];
        p
    }

    /// In-place step `theta -= lr * grad`.
    pub fn apply_step(&mut self, grad: &[f64], lr: f64) {
        let mut flat = self.to_flat();
        for (p, g) in flat.iter_mut().zip(grad) {
            *p -= lr * g;
        }
        *self = Self::from_flat(&flat);
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: Self = serde_json::from_str(&text)
            .map_err(|e| Error::format(path, format!("bad density parameters: {e}")))?;
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

pub fn estimate_density(image: &RgbImage, params: &HdenParams) -> Result<HazeDensityScore> {
    Ok(params.score(&extract_features(image)?))
}

/// Mean squared error of the head against the band-centre targets.
pub fn regression_loss(params: &HdenParams, samples: &[(HazeFeatures, FogLevel)]) -> f64 {
    samples
        .iter()
        .map(|(f, l)| (params.score(f).value() - l.target()).powi(2))
        .sum::<f64>()
        / samples.len() as f64
}

pub fn accuracy(
    params: &HdenParams,
    samples: &[(HazeFeatures, FogLevel)],
    thr: &RoutingThresholds,
) -> f64 {
    let hits = samples
        .iter()
        .filter(|(f, l)| classify_level(params.score(f), thr) == *l)
        .count();
    hits as f64 / samples.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HdenEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HdenReport {
    pub initial_loss: f64,
    pub epochs: Vec<HdenEpoch>,
}

fn check_levels(samples: &[(HazeFeatures, FogLevel)], what: &str) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::invalid(format!("{what} set is empty")));
    }
    let mut seen = [false; 3];
    for (_, l) in samples {
        seen[l.index()] = true;
    }
    if seen.iter().filter(|s| **s).count() < 2 {
        return Err(Error::invalid(format!("{what} set contains a single fog level")));
    }
    Ok(())
}

/// Full-batch gradient descent on labelled feature vectors. A step that
/// raises the loss is rejected and retried with half the learning rate, so
/// the recorded training loss never increases.
pub fn fit_head(
    train: &[(HazeFeatures, FogLevel)],
    val: &[(HazeFeatures, FogLevel)],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<(HdenParams, HdenReport)> {
    check_levels(train, "training")?;
    check_levels(val, "validation")?;
    if epochs == 0 {
        return Err(Error::invalid("epochs must be >= 1"));
    }
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::invalid(format!("learning rate must be > 0, got {lr}")));
    }
    let thr = RoutingThresholds::default();
    let feats: Vec<HazeFeatures> = train.iter().map(|(f, _)| *f).collect();
    let mut params = HdenParams::init_for(&feats, seed);
    let mut loss = regression_loss(&params, train);
    let initial_loss = loss;
    let mut lr = lr;
    let mut history = Vec::with_capacity(epochs);

    for epoch in 1..=epochs {
        let mut grad = vec![0.0; HdenParams::N_PARAMS];
        for (f, l) in train {
            let (_, g) = params.sample_grad(f, l.target());
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        let n = train.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);

        for _ in 0..40 {
            let mut cand = params.clone();
            cand.apply_step(&grad, lr);
            let cand_loss = regression_loss(&cand, train);
            if cand_loss <= loss {
                params = cand;
                loss = cand_loss;
                break;
            }
            lr *= 0.5;
        }
        history.push(HdenEpoch {
            epoch,
            train_loss: loss,
            val_accuracy: accuracy(&params, val, &thr),
            lr,
        });
    }
    Ok((
        params,
        HdenReport {
            initial_loss,
            epochs: history,
        },
    ))
}

/// Loads every hazy image of a manifest and extracts its features (in parallel,
/// returned in manifest order).
pub fn manifest_features(manifest: &DatasetManifest) -> Result<Vec<(HazeFeatures, FogLevel)>> {
    manifest
        .entries
        .par_iter()
        .map(|e| Ok((extract_features(&codec::load_image(&e.hazy)?)?, e.level)))
        .collect()
}

pub fn train_hden(
    train: &DatasetManifest,
    val: &DatasetManifest,
    epochs: usize,
    lr: f64,
) -> Result<(HdenParams, HdenReport)> {
    if train.entries.is_empty() || val.entries.is_empty() {
        return Err(Error::invalid("empty manifest"));
    }
    let tr = manifest_features(train)?;
    let va = manifest_features(val)?;
    fit_head(&tr, &va, epochs, lr, train.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn thr() -> RoutingThresholds {
        RoutingThresholds::default()
    }

    #[test]
    fn banding_examples() {
        let s = |d| HazeDensityScore::new(d).unwrap();
        assert_eq!(classify_level(s(0.10), &thr()), FogLevel::Light);
        assert_eq!(classify_level(s(1.0 / 3.0), &thr()), FogLevel::Medium);
        assert_eq!(classify_level(s(2.0 / 3.0), &thr()), FogLevel::Medium);
        assert_eq!(classify_level(s(0.90), &thr()), FogLevel::Heavy);
    }

    #[test]
    fn thresholds_validated() {
        assert!(RoutingThresholds::new(0.5, 0.4).is_err());
        assert!(RoutingThresholds::new(0.0, 0.4).is_err());
        assert!(RoutingThresholds::new(0.2, 1.0).is_err());
    }

    #[test]
    fn constant_image_features() {
        let white = RgbImage::filled(20, 20, [1.0; 3]).unwrap();
        let f = extract_features(&white).unwrap();
        assert_eq!(f.dark_channel_mean, 1.0);
        assert_eq!(f.rms_contrast, 0.0);
        let black = RgbImage::filled(20, 20, [0.0; 3]).unwrap();
        assert_eq!(extract_features(&black).unwrap().dark_channel_mean, 0.0);
        assert!(matches!(
            extract_features(&RgbImage::filled(15, 40, [0.5; 3]).unwrap()),
            Err(Error::TooSmall { .. })
        ));
    }

    #[test]
    fn zero_head_scores_half() {
        let img = RgbImage::from_fn(16, 16, |x, y| [x as f64 / 16.0, y as f64 / 16.0, 0.3]).unwrap();
        let d = estimate_density(&img, &HdenParams::zeros()).unwrap();
        assert_eq!(d.value(), 0.5);
    }

    #[test]
    fn zero_head_loss_on_balanced_labels() {
        let f = extract_features(&RgbImage::filled(16, 16, [0.5; 3]).unwrap()).unwrap();
        let samples: Vec<_> = FogLevel::ALL.iter().map(|&l| (f, l)).collect();
        let loss = regression_loss(&HdenParams::zeros(), &samples);
        assert!((loss - 2.0 / 27.0).abs() < 1e-15);
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let f = HazeFeatures {
            dark_channel_mean: 0.3,
            dark_channel_p90: 0.5,
            rms_contrast: 0.2,
            mean_saturation: 0.6,
            gradient_energy: 0.4,
            airlight_proximity: 0.7,
        };
        let p = HdenParams::init_for(&[f], 3);
        let (_, g) = p.sample_grad(&f, 0.8);
        let flat = p.to_flat();
        let h = 1e-6;
        for i in 0..flat.len() {
            let mut a = flat.clone();
            a[i] += h;
            let mut b = flat.clone();
            b[i] -= h;
            let la = (HdenParams::from_flat(&a).score(&f).value() - 0.8).powi(2);
            let lb = (HdenParams::from_flat(&b).score(&f).value() - 0.8).powi(2);
            let fd = (la - lb) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn params_json_round_trip_and_shape_check() {
        let p = HdenParams::init_for(&[], 1);
        let back: HdenParams = serde_json::from_str(&p.to_json()).unwrap();
        assert_eq!(back, p);
        let mut bad = p.clone();
        bad.layer1.w.pop();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn fit_rejects_degenerate_sets() {
        let f = extract_features(&RgbImage::filled(16, 16, [0.5; 3]).unwrap()).unwrap();
        let one = vec![(f, FogLevel::Light); 4];
        let two = vec![(f, FogLevel::Light), (f, FogLevel::Heavy)];
        assert!(fit_head(&one, &two, 5, 0.1, 0).is_err());
        assert!(fit_head(&[], &two, 5, 0.1, 0).is_err());
        assert!(fit_head(&two, &two, 0, 0.1, 0).is_err());
    }
}
