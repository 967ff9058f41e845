//! Training loop, ablation harness and batch inference.
//!
//! Training pre-fits the density head on the labelled training manifest,
//! then walks the training images in a seeded shuffled order. Each image is
//! scored, routed to one branch, and that branch alone takes a descent step
//! on the adaptive loss (central finite differences over its learnable
//! parameters); the density head takes a supervised step on the same image.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{Error, Result};
use crate::fogsim::DatasetManifest;
use crate::hden::{
    classify_level, extract_features, fit_head, FogLevel, HazeDensityScore, HazeFeatures, HdenParams,
    HdenReport, RoutingThresholds,
};
use crate::image::RgbImage;
use crate::losses::{adaptive_loss_with, gamma_of, GammaSchedule, LossReport, LossTerms, PerceptualWeights};
use crate::metrics::{self, level_means, LevelMean, MetricRow};
use crate::unfold::{dehaze, route_and_dehaze, BranchKind, BranchParams, BranchSet, DehazeResult};

/// Finite-difference perturbation applied to each learnable parameter.
pub const FD_STEP: f64 = 1e-3;
/// Attempts (with halving step) before a branch update is abandoned.
const LINE_SEARCH_TRIES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    DropCoh,
    DropContra,
    DropDens,
    DropProximal,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::DropCoh,
        Ablation::DropContra,
        Ablation::DropDens,
        Ablation::DropProximal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::DropCoh => "drop-coh",
            Ablation::DropContra => "drop-contra",
            Ablation::DropDens => "drop-dens",
            Ablation::DropProximal => "drop-proximal",
        }
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown ablation {s:?}; expected drop-coh, drop-contra, drop-dens or drop-proximal"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Branch learning rate.
    pub lr: f64,
    pub thresholds: RoutingThresholds,
    pub gamma_schedule: GammaSchedule,
    pub seed: u64,
    pub ablation: BTreeSet<Ablation>,
    pub perceptual: PerceptualWeights,
    /// Full-batch epochs for pre-fitting the density head.
    pub hden_epochs: usize,
    pub hden_lr: f64,
    /// Step size of the per-image density-head refinement during training.
    pub hden_refine_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2,
            lr: 150.0,
            thresholds: RoutingThresholds::default(),
            gamma_schedule: GammaSchedule::default(),
            seed: 0,
            ablation: BTreeSet::new(),
            perceptual: PerceptualWeights::default(),
            hden_epochs: 400,
            hden_lr: 2.0,
            hden_refine_lr: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Self = serde_json::from_str(&text)
            .map_err(|e| Error::format(path, format!("bad training config: {e}")))?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        for (name, v) in [("lr", self.lr), ("hden_lr", self.hden_lr)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.hden_refine_lr.is_finite() && self.hden_refine_lr >= 0.0) {
            return Err(Error::invalid("hden_refine_lr must be >= 0"));
        }
        if self.hden_epochs == 0 {
            return Err(Error::invalid("hden_epochs must be >= 1"));
        }
        if self.ablation.len() > 3 {
            return Err(Error::invalid("at most three ablation flags may be set"));
        }
        self.thresholds.validate()?;
        self.gamma_schedule.validate()?;
        if self.gamma_schedule.thresholds != self.thresholds {
            return Err(Error::invalid(
                "gamma schedule thresholds must equal the routing thresholds",
            ));
        }
        self.perceptual.validate()
    }

    pub fn loss_terms(&self) -> LossTerms {
        LossTerms {
            coh: !self.ablation.contains(&Ablation::DropCoh),
            contra: !self.ablation.contains(&Ablation::DropContra),
            dens: !self.ablation.contains(&Ablation::DropDens),
        }
    }

    pub fn initial_branches(&self) -> BranchSet {
        let mut set = BranchSet::default();
        if self.ablation.contains(&Ablation::DropProximal) {
            for k in BranchKind::ALL {
                set.get_mut(k).proximal_smoothing = false;
            }
        }
        set
    }
}

/// Per-epoch record: mean training loss terms and mean validation total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossReport,
    pub val_total: f64,
}

pub const HISTORY_HEADER: &str = "epoch,coh,contra_rec,dens,gamma,total,val_total";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub hden: HdenParams,
    pub branches: BranchSet,
    pub thresholds: RoutingThresholds,
    pub epoch: usize,
    pub loss_history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn history_csv(&self) -> String {
        let mut s = String::from(HISTORY_HEADER);
        s.push('\n');
        for r in &self.loss_history {
            let l = r.train;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.epoch, l.coh, l.contra_rec, l.dens, l.gamma, l.total, r.val_total
            );
        }
        s
    }

    fn parse_history(path: &Path, text: &str) -> Result<Vec<EpochRecord>> {
        let mut lines = text.lines();
        if lines.next() != Some(HISTORY_HEADER) {
            return Err(Error::format(path, "history header mismatch"));
        }
        lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                let bad = || Error::format(path, format!("bad history row {l:?}"));
                if f.len() != 7 {
                    return Err(bad());
                }
                let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
                Ok(EpochRecord {
                    epoch: f[0].parse().map_err(|_| bad())?,
                    train: LossReport {
                        coh: num(1)?,
                        contra_rec: num(2)?,
                        dens: num(3)?,
                        gamma: num(4)?,
                        total: num(5)?,
                    },
                    val_total: num(6)?,
                })
            })
            .collect()
    }

    /// Writes `hden.json`, the three branch files, `thresholds.json` and
    /// `history.csv` into `dir`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.hden.save(dir.join("hden.json"))?;
        self.branches.save_dir(dir)?;
        let thr = dir.join("thresholds.json");
        let mut text = serde_json::to_string_pretty(&self.thresholds).expect("thresholds serialize");
        text.push('\n');
        fs::write(&thr, text).map_err(|e| Error::io(&thr, e))?;
        let hist = dir.join("history.csv");
        fs::write(&hist, self.history_csv()).map_err(|e| Error::io(&hist, e))
    }

    /// Loads a state directory. `thresholds.json` and `history.csv` are
    /// optional (defaults and an empty history).
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let hden = HdenParams::load(dir.join("hden.json"))?;
        let branches = BranchSet::load_dir(dir)?;
        let thresholds = load_thresholds(dir)?;
        let hist = dir.join("history.csv");
        let loss_history = if hist.exists() {
            let text = fs::read_to_string(&hist).map_err(|e| Error::io(&hist, e))?;
            Self::parse_history(&hist, &text)?
        } else {
            Vec::new()
        };
        Ok(Self {
            hden,
            branches,
            thresholds,
            epoch: loss_history.len(),
            loss_history,
        })
    }
}

/// Reads `thresholds.json` from a parameter directory, or the defaults when
/// the file is absent.
pub fn load_thresholds(dir: &Path) -> Result<RoutingThresholds> {
    let path = dir.join("thresholds.json");
    if !path.exists() {
        return Ok(RoutingThresholds::default());
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let thr: RoutingThresholds = serde_json::from_str(&text)
        .map_err(|e| Error::format(&path, format!("bad thresholds: {e}")))?;
    thr.validate().map_err(|e| Error::format(&path, e.to_string()))?;
    Ok(thr)
}

/// One training step as it happened: which branch ran and with which weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub image_id: String,
    pub density: f64,
    pub level: FogLevel,
    pub gamma: f64,
    /// Loss before the update.
    pub report: LossReport,
    /// Whether the branch parameters changed.
    pub updated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub state: TrainState,
    pub steps: Vec<StepRecord>,
    pub hden_report: HdenReport,
}

/// A manifest entry held in memory.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image_id: String,
    pub hazy: RgbImage,
    pub clear: RgbImage,
    pub features: HazeFeatures,
    pub level: FogLevel,
}

pub fn load_samples(manifest: &DatasetManifest) -> Result<Vec<Sample>> {
    (0..manifest.entries.len())
        .into_par_iter()
        .map(|i| {
            let (hazy, clear) = manifest.load_pair(i)?;
            let e = &manifest.entries[i];
            Ok(Sample {
                image_id: e.image_id(),
                features: extract_features(&hazy)?,
                hazy,
                clear,
                level: e.level,
            })
        })
        .collect()
}

struct LossContext<'a> {
    config: &'a TrainConfig,
    terms: LossTerms,
    hden: &'a HdenParams,
}

impl LossContext<'_> {
    fn eval(&self, s: &Sample, branch: &BranchParams, d: HazeDensityScore) -> Result<(LossReport, DehazeResult)> {
        let r = dehaze(&s.hazy, branch)?;
        let report = adaptive_loss_with(
            &r.j_out,
            &r.t_out,
            &s.clear,
            &s.hazy,
            d,
            &self.config.gamma_schedule,
            &self.config.perceptual,
            self.hden,
            self.terms,
        )?;
        Ok((report, r))
    }

    fn total(&self, s: &Sample, branch: &BranchParams, v: &[f64], d: HazeDensityScore) -> Result<f64> {
        Ok(self.eval(s, &branch.with_learnable(v), d)?.0.total)
    }
}

/// Central finite-difference gradient of the loss over a branch's learnable
/// parameters. Probes run in parallel; results are gathered in index order.
fn fd_gradient(ctx: &LossContext, s: &Sample, branch: &BranchParams, d: HazeDensityScore) -> Result<Vec<f64>> {
    let v = branch.learnable();
    let probes: Vec<f64> = (0..2 * v.len())
        .into_par_iter()
        .map(|k| {
            let mut p = v.clone();
            p[k / 2] += if k % 2 == 0 { FD_STEP } else { -FD_STEP };
            ctx.total(s, branch, &p, d)
        })
        .collect::<Result<_>>()?;
    Ok(probes.chunks_exact(2).map(|c| (c[0] - c[1]) / (2.0 * FD_STEP)).collect())
}

fn mean_report(reports: &[LossReport]) -> LossReport {
    let n = reports.len().max(1) as f64;
    let mut m = LossReport {
        coh: 0.0,
        contra_rec: 0.0,
        dens: 0.0,
        gamma: 0.0,
        total: 0.0,
    };
    for r in reports {
        m.coh += r.coh / n;
        m.contra_rec += r.contra_rec / n;
        m.dens += r.dens / n;
        m.gamma += r.gamma / n;
        m.total += r.total / n;
    }
    m
}

/// Mean routed adaptive loss over a sample set.
pub fn mean_loss(
    samples: &[Sample],
    hden: &HdenParams,
    branches: &BranchSet,
    config: &TrainConfig,
) -> Result<LossReport> {
    let ctx = LossContext {
        config,
        terms: config.loss_terms(),
        hden,
    };
    let reports: Vec<LossReport> = samples
        .par_iter()
        .map(|s| {
            let d = hden.score(&s.features);
            let level = classify_level(d, &config.thresholds);
            Ok(ctx.eval(s, branches.for_level(level), d)?.0)
        })
        .collect::<Result<_>>()?;
    Ok(mean_report(&reports))
}

fn check_manifest(m: &DatasetManifest, what: &str) -> Result<()> {
    if m.entries.is_empty() {
        return Err(Error::invalid(format!("{what} manifest is empty")));
    }
    if !m.is_level_complete() {
        return Err(Error::invalid(format!(
            "{what} manifest lacks a fog level (counts {:?})",
            m.level_counts()
        )));
    }
    Ok(())
}

pub fn train(config: &TrainConfig, train_m: &DatasetManifest, val_m: &DatasetManifest) -> Result<TrainRun> {
    config.validate()?;
    check_manifest(train_m, "training")?;
    check_manifest(val_m, "validation")?;
    let train_set = load_samples(train_m)?;
    let val_set = load_samples(val_m)?;
    train_samples(config, &train_set, &val_set)
}

/// [`train`] on samples already in memory.
pub fn train_samples(config: &TrainConfig, train_set: &[Sample], val_set: &[Sample]) -> Result<TrainRun> {
    config.validate()?;
    let labelled = |set: &[Sample]| -> Vec<(HazeFeatures, FogLevel)> {
        set.iter().map(|s| (s.features, s.level)).collect()
    };
    let (mut hden, hden_report) = fit_head(
        &labelled(train_set),
        &labelled(val_set),
        config.hden_epochs,
        config.hden_lr,
        config.seed,
    )?;
    let mut branches = config.initial_branches();
    let terms = config.loss_terms();
    let mut steps = Vec::new();
    let mut history = Vec::with_capacity(config.epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // per-branch starting step for the line search, warm-started from the
    // last accepted step
    let mut start_lr = [config.lr; 3];

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        let mut reports = Vec::with_capacity(order.len());
        for i in order {
            let s = &train_set[i];
            let d = hden.score(&s.features);
            let level = classify_level(d, &config.thresholds);
            let kind = BranchKind::for_level(level);
            let ctx = LossContext {
                config,
                terms,
                hden: &hden,
            };
            let branch = branches.get(kind);
            let (report, _) = ctx.eval(s, branch, d)?;
            let grad = fd_gradient(&ctx, s, branch, d)?;
            let v = branch.learnable();
            let mut lr = start_lr[kind as usize];
            let mut accepted = None;
            for _ in 0..LINE_SEARCH_TRIES {
                let cand: Vec<f64> = v.iter().zip(&grad).map(|(p, g)| p - lr * g).collect();
                let cand_branch = branch.with_learnable(&cand);
                if cand_branch.validate().is_ok() && ctx.eval(s, &cand_branch, d)?.0.total < report.total {
                    accepted = Some(cand_branch);
                    start_lr[kind as usize] = (2.0 * lr).min(config.lr);
                    break;
                }
                lr *= 0.5;
            }
            let updated = accepted.is_some();
            if let Some(b) = accepted {
                *branches.get_mut(kind) = b;
            }

            if config.hden_refine_lr > 0.0 {
                let (_, g) = hden.sample_grad(&s.features, s.level.target());
                hden.apply_step(&g, config.hden_refine_lr);
            }

            steps.push(StepRecord {
                epoch,
                image_id: s.image_id.clone(),
                density: d.value(),
                level,
                gamma: gamma_of(d, &config.gamma_schedule),
                report,
                updated,
            });
            reports.push(report);
        }
        let val_total = mean_loss(val_set, &hden, &branches, config)?.total;
        history.push(EpochRecord {
            epoch,
            train: mean_report(&reports),
            val_total,
        });
    }

    Ok(TrainRun {
        state: TrainState {
            hden,
            branches,
            thresholds: config.thresholds,
            epoch: config.epochs,
            loss_history: history,
        },
        steps,
        hden_report,
    })
}

/// Validation summary of a trained state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub psnr: f64,
    pub ssim: f64,
    pub density: f64,
    /// Population variance of the final coherence residual across images.
    pub residual_variance: f64,
    pub levels: Vec<LevelMean>,
}

/// Routes and restores every sample, scoring the 8-bit output against the
/// ground truth.
pub fn evaluate_state(state: &TrainState, samples: &[Sample]) -> Result<(Vec<MetricRow>, RunSummary)> {
    let out: Vec<(MetricRow, f64)> = samples
        .par_iter()
        .map(|s| {
            let r = route_and_dehaze(&s.hazy, &state.hden, &state.thresholds, &state.branches, None)?;
            let restored = codec::quantized(&r.result.j_out);
            let row = metrics::metric_row(s.image_id.clone(), &restored, &s.clear, &state.hden, s.level)?;
            let resid = *r.result.residual_trace.last().unwrap_or(&r.result.initial_residual);
            Ok((row, resid))
        })
        .collect::<Result<_>>()?;
    let n = out.len().max(1) as f64;
    let rows: Vec<MetricRow> = out.iter().map(|(r, _)| r.clone()).collect();
    let resid_mean = out.iter().map(|(_, v)| v).sum::<f64>() / n;
    let summary = RunSummary {
        psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        density: rows.iter().map(|r| r.density).sum::<f64>() / n,
        residual_variance: out.iter().map(|(_, v)| (v - resid_mean).powi(2)).sum::<f64>() / n,
        levels: level_means(&rows),
    };
    Ok((rows, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub flag: Ablation,
    pub full: RunSummary,
    pub ablated: RunSummary,
}

/// Trains twice on the same seed and data, once with the config's single
/// ablation flag and once without, and compares the two on validation.
pub fn ablate(config: &TrainConfig, train_m: &DatasetManifest, val_m: &DatasetManifest) -> Result<AblationReport> {
    if config.ablation.len() != 1 {
        return Err(Error::invalid(format!(
            "ablation needs exactly one flag, got {}",
            config.ablation.len()
        )));
    }
    config.validate()?;
    check_manifest(train_m, "training")?;
    check_manifest(val_m, "validation")?;
    let train_set = load_samples(train_m)?;
    let val_set = load_samples(val_m)?;
    ablate_samples(config, &train_set, &val_set)
}

pub fn ablate_samples(config: &TrainConfig, train_set: &[Sample], val_set: &[Sample]) -> Result<AblationReport> {
    let flag = match config.ablation.iter().next() {
        Some(&f) if config.ablation.len() == 1 => f,
        _ => return Err(Error::invalid("ablation needs exactly one flag")),
    };
    let full_cfg = TrainConfig {
        ablation: BTreeSet::new(),
        ..config.clone()
    };
    let full = train_samples(&full_cfg, train_set, val_set)?;
    let ablated = train_samples(config, train_set, val_set)?;
    Ok(AblationReport {
        flag,
        full: evaluate_state(&full.state, val_set)?.1,
        ablated: evaluate_state(&ablated.state, val_set)?.1,
    })
}

/// Routing decision for one inferred image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteRecord {
    pub image_id: String,
    pub density: f64,
    pub level: FogLevel,
    pub stages: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferReport {
    pub rows: Vec<MetricRow>,
    pub routes: Vec<RouteRecord>,
}

pub const ROUTING_HEADER: &str = "image_id,density,level,stages";

/// Restores every manifest entry with its routed branch and writes
/// `<image_id>.png`, `metrics.csv` and `routing.csv` into `out_dir`.
/// Nothing is written unless every entry succeeds.
pub fn infer_batch(
    manifest: &DatasetManifest,
    state: &TrainState,
    out_dir: impl AsRef<Path>,
    force: Option<FogLevel>,
) -> Result<InferReport> {
    let out_dir = out_dir.as_ref();
    let done: Vec<(RgbImage, MetricRow, RouteRecord)> = (0..manifest.entries.len())
        .into_par_iter()
        .map(|i| {
            let (hazy, clear) = manifest.load_pair(i)?;
            let e = &manifest.entries[i];
            let id = e.image_id();
            let r = route_and_dehaze(&hazy, &state.hden, &state.thresholds, &state.branches, force)?;
            let restored = codec::quantized(&r.result.j_out);
            let row = metrics::metric_row(id.clone(), &restored, &clear, &state.hden, e.level)?;
            let route = RouteRecord {
                image_id: id,
                density: r.density.value(),
                level: r.level,
                stages: r.result.residual_trace.len(),
            };
            Ok((restored, row, route))
        })
        .collect::<Result<_>>()?;

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (img, row, _) in &done {
        codec::save_image(img, metrics::result_path(out_dir, &row.image_id))?;
    }
    let rows: Vec<MetricRow> = done.iter().map(|(_, r, _)| r.clone()).collect();
    let routes: Vec<RouteRecord> = done.into_iter().map(|(_, _, r)| r).collect();
    metrics::write_csv(&rows, out_dir.join("metrics.csv"))?;
    let mut text = String::from(ROUTING_HEADER);
    text.push('\n');
    for r in &routes {
        let _ = writeln!(text, "{},{},{},{}", r.image_id, r.density, r.level, r.stages);
    }
    let path = out_dir.join("routing.csv");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(InferReport { rows, routes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::ALL {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
            assert_eq!(serde_json::to_string(&a).unwrap(), format!("\"{}\"", a.name()));
        }
        assert!("drop-all".parse::<Ablation>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let mut c = TrainConfig::default();
        c.ablation = Ablation::ALL.into_iter().collect();
        assert!(c.validate().is_err());
        c.ablation.pop_last();
        assert!(c.validate().is_ok());
        assert!(!c.loss_terms().coh && !c.loss_terms().contra && !c.loss_terms().dens);
        let c = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
        let c = TrainConfig { lr: -1.0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_defaults_fill_in() {
        let c: TrainConfig = serde_json::from_str(r#"{"epochs": 2, "ablation": ["drop-dens"]}"#).unwrap();
        assert_eq!(c.epochs, 2);
        assert!(c.ablation.contains(&Ablation::DropDens));
        assert_eq!(c.lr, TrainConfig::default().lr);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 2}"#).is_err());
    }
}
