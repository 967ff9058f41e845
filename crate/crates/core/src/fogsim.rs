//! Fog synthesis with the atmospheric scattering model and stratified
//! dataset generation.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{Error, Result};
use crate::hden::FogLevel;
use crate::image::{ensure_same_dims, DepthMap, RgbImage, TransmissionMap, T_FLOOR};

/// Scattering coefficients of the canonical light / medium / heavy strata.
pub const CANONICAL_BETAS: [f64; 3] = [0.03, 0.06, 0.09];

/// Per-meter attenuation.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ScatterCoefficient(f64);

impl ScatterCoefficient {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::invalid(format!("scattering coefficient must be > 0, got {beta}")));
        }
        Ok(Self(beta))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Canonical coefficient for a fog level.
    pub fn for_level(level: FogLevel) -> Self {
        Self(CANONICAL_BETAS[level.index()])
    }
}

/// Global airlight colour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AtmosphericLight(pub [f64; 3]);

impl AtmosphericLight {
    pub fn new(rgb: [f64; 3]) -> Result<Self> {
        if rgb.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::invalid(format!("airlight {rgb:?} outside [0,1]")));
        }
        Ok(Self(rgb))
    }

    pub fn gray(v: f64) -> Result<Self> {
        Self::new([v; 3])
    }

    pub fn rgb(&self) -> [f64; 3] {
        self.0
    }
}

/// `t = max(exp(-beta * depth), T_FLOOR)` per pixel. Zero depth gives `t = 1`.
pub fn compute_transmission(depth: &DepthMap, beta: ScatterCoefficient) -> Result<TransmissionMap> {
    let data = depth
        .data()
        .iter()
        .map(|&d| (-beta.0 * d).exp().max(T_FLOOR))
        .collect();
    TransmissionMap::new(depth.width(), depth.height(), data)
}

/// Hazy observation `P = J t + A (1 - t)`, clamped into `[0, 1]`.
pub fn synthesize_haze(
    clear: &RgbImage,
    trans: &TransmissionMap,
    airlight: AtmosphericLight,
) -> Result<RgbImage> {
    ensure_same_dims("transmission", clear, trans)?;
    let a = airlight.0;
    let mut out = Vec::with_capacity(clear.data().len());
    for (px, &t) in clear.pixels().zip(trans.data()) {
        for c in 0..3 {
            out.push(px[c] * t + a[c] * (1.0 - t));
        }
    }
    RgbImage::from_clamped(clear.width(), clear.height(), out)
}

/// Algebraic inverse of [`synthesize_haze`]: `J = (P - A (1 - t)) / t`, clamped.
pub fn invert_haze(
    hazy: &RgbImage,
    trans: &TransmissionMap,
    airlight: AtmosphericLight,
) -> Result<RgbImage> {
    ensure_same_dims("transmission", hazy, trans)?;
    let a = airlight.0;
    let mut out = Vec::with_capacity(hazy.data().len());
    for (px, &t) in hazy.pixels().zip(trans.data()) {
        for c in 0..3 {
            out.push((px[c] - a[c] * (1.0 - t)) / t);
        }
    }
    RgbImage::from_clamped(hazy.width(), hazy.height(), out)
}

/// Splits `total` slots into three strata of `n, n, n + remainder`.
pub fn stratified_counts(total: usize) -> [usize; 3] {
    let n = total / 3;
    [n, n, total - 2 * n]
}

/// Fog level implied by a scattering coefficient. Canonical coefficients map
/// directly; any other value is ranked among `betas` (ascending, three values).
pub fn level_for_beta(beta: f64, betas: &[f64]) -> Result<FogLevel> {
    if let Some(i) = CANONICAL_BETAS.iter().position(|b| (b - beta).abs() < 1e-12) {
        return Ok(FogLevel::ALL[i]);
    }
    let mut distinct: Vec<f64> = betas.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if distinct.len() != 3 {
        return Err(Error::invalid(format!(
            "non-canonical coefficient {beta} needs exactly three distinct levels, got {}",
            distinct.len()
        )));
    }
    distinct
        .iter()
        .position(|b| (b - beta).abs() < 1e-12)
        .map(|i| FogLevel::ALL[i])
        .ok_or_else(|| Error::invalid(format!("coefficient {beta} not among {distinct:?}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clear: String,
    pub depth: String,
    pub hazy: String,
    pub beta: f64,
    pub airlight: AtmosphericLight,
    pub level: FogLevel,
}

impl ManifestEntry {
    /// Identifier used for result files and metric rows: the hazy file stem.
    pub fn image_id(&self) -> String {
        Path::new(&self.hazy)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.hazy.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub meters_per_unit: f64,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)
            .map_err(|e| Error::format(path, format!("bad manifest JSON: {e}")))?;
        m.validate()
            .map_err(|e| Error::format(path, e.to_string()))?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Checks level labels against coefficients for every entry.
    pub fn validate(&self) -> Result<()> {
        let betas: Vec<f64> = self.entries.iter().map(|e| e.beta).collect();
        for (i, e) in self.entries.iter().enumerate() {
            let want = level_for_beta(e.beta, &betas)?;
            if want != e.level {
                return Err(Error::invalid(format!(
                    "entry {i}: level {:?} inconsistent with beta {} (expected {:?})",
                    e.level, e.beta, want
                )));
            }
        }
        Ok(())
    }

    pub fn level_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for e in &self.entries {
            c[e.level.index()] += 1;
        }
        c
    }

    /// True when every level is present.
    pub fn is_level_complete(&self) -> bool {
        self.level_counts().iter().all(|&c| c > 0)
    }

    /// Loads the hazy observation and its clear ground truth for one entry.
    pub fn load_pair(&self, i: usize) -> Result<(RgbImage, RgbImage)> {
        let e = &self.entries[i];
        let hazy = codec::load_image(&e.hazy)?;
        let clear = codec::load_image(&e.clear)?;
        ensure_same_dims("ground truth", &hazy, &clear)?;
        Ok((hazy, clear))
    }
}

/// How each synthesized image gets its airlight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AirlightMode {
    /// Independent uniform draw per channel and per image.
    Sample { lo: f64, hi: f64 },
    Fixed(AtmosphericLight),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub betas: Vec<f64>,
    pub seed: u64,
    pub meters_per_unit: f64,
    pub airlight: AirlightMode,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            betas: CANONICAL_BETAS.to_vec(),
            seed: 0,
            meters_per_unit: 0.01,
            airlight: AirlightMode::Sample { lo: 0.7, hi: 1.0 },
        }
    }
}

/// Reads a pair list: one `clear depth` pair per line, separated by
/// whitespace or a comma. Blank lines and `#` comments are skipped.
/// Relative paths resolve against the list file's directory.
pub fn read_pair_list(path: impl AsRef<Path>) -> Result<Vec<(PathBuf, PathBuf)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if parts.len() != 2 {
            return Err(Error::format(
                path,
                format!("line {}: expected `clear depth`, got {line:?}", n + 1),
            ));
        }
        pairs.push((base.join(parts[0]), base.join(parts[1])));
    }
    Ok(pairs)
}

/// Synthesizes one hazy image per pair and coefficient, writes them as PNG
/// into `out_dir` together with `manifest.json`, and returns the manifest.
/// Entry order is the sorted pair order, then ascending coefficient.
pub fn generate_dataset(
    pairs: &[(PathBuf, PathBuf)],
    out_dir: impl AsRef<Path>,
    opts: &SynthOptions,
) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    if pairs.len() < 3 {
        return Err(Error::invalid(format!("need at least 3 input pairs, got {}", pairs.len())));
    }
    let mut betas = opts.betas.clone();
    betas.sort_by(f64::total_cmp);
    for &b in &betas {
        ScatterCoefficient::new(b)?;
    }
    let levels: Vec<FogLevel> = betas
        .iter()
        .map(|&b| level_for_beta(b, &betas))
        .collect::<Result<_>>()?;
    match opts.airlight {
        AirlightMode::Sample { lo, hi } => {
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return Err(Error::invalid(format!("airlight range [{lo}, {hi}] invalid")));
            }
        }
        AirlightMode::Fixed(a) => {
            AtmosphericLight::new(a.0)?;
        }
    }

    let mut pairs = pairs.to_vec();
    pairs.sort();

    // Draw every airlight up front so the result is independent of scheduling.
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut jobs = Vec::with_capacity(pairs.len() * betas.len());
    for (pi, (clear, depth)) in pairs.iter().enumerate() {
        let stem = clear
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "img".into());
        for (&beta, &level) in betas.iter().zip(&levels) {
            let airlight = match opts.airlight {
                AirlightMode::Sample { lo, hi } => AtmosphericLight([
                    rng.gen_range(lo..=hi),
                    rng.gen_range(lo..=hi),
                    rng.gen_range(lo..=hi),
                ]),
                AirlightMode::Fixed(a) => a,
            };
            let hazy = out_dir.join(format!("{pi:05}_{stem}_{}.png", level.short_name()));
            jobs.push((clear.clone(), depth.clone(), hazy, beta, airlight, level));
        }
    }

    let load = |clear: &PathBuf, depth: &PathBuf| -> Result<(RgbImage, DepthMap)> {
        let j = codec::load_image(clear)?;
        let d = codec::load_depth(depth, opts.meters_per_unit)?;
        ensure_same_dims("depth map", &j, &d)?;
        Ok((j, d))
    };
    // Check every input before the first file is written.
    pairs
        .par_iter()
        .map(|(clear, depth)| load(clear, depth).map(|_| ()))
        .collect::<Result<Vec<()>>>()?;

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let written = jobs
        .par_iter()
        .map(|(clear, depth, hazy, beta, airlight, _)| {
            let (j, d) = load(clear, depth)?;
            let t = compute_transmission(&d, ScatterCoefficient::new(*beta)?)?;
            let p = synthesize_haze(&j, &t, *airlight)?;
            codec::save_image(&p, hazy)
        })
        .collect::<Result<Vec<()>>>();
    if let Err(e) = written {
        for job in &jobs {
            let _ = fs::remove_file(&job.2);
        }
        return Err(e);
    }

    let manifest = DatasetManifest {
        seed: opts.seed,
        meters_per_unit: opts.meters_per_unit,
        entries: jobs
            .into_iter()
            .map(|(clear, depth, hazy, beta, airlight, level)| ManifestEntry {
                clear: clear.to_string_lossy().into_owned(),
                depth: depth.to_string_lossy().into_owned(),
                hazy: hazy.to_string_lossy().into_owned(),
                beta,
                airlight,
                level,
            })
            .collect(),
    };
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}
