//! Command-line front end. Results go to stdout as JSON lines, progress and
//! diagnostics to stderr. Exit codes: 0 success, 1 validation failure,
//! 2 I/O failure, 3 runtime invariant violation.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::bench::{run_bench, MIN_REPEATS};
use crate::codec;
use crate::error::{Error, Result};
use crate::fogsim::{generate_dataset, read_pair_list, AirlightMode, AtmosphericLight, DatasetManifest, SynthOptions, CANONICAL_BETAS};
use crate::hden::{classify_level, estimate_density, train_hden, FogLevel, HazeDensityScore, HdenParams, RoutingThresholds};
use crate::image::{TransmissionMap, T_FLOOR};
use crate::losses::{adaptive_loss, GammaSchedule, PerceptualWeights};
use crate::metrics::{evaluate_manifest, write_csv};
use crate::pipeline::{ablate, infer_batch, load_thresholds, train, Ablation, TrainConfig, TrainState};
use crate::unfold::{route_and_dehaze, BranchSet};

#[derive(Debug, Parser)]
#[command(name = "fogroute", version, about = "Density-routed unfolding dehazing")]
pub struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a light/medium/heavy fog dataset from clear + depth pairs.
    Synth(SynthArgs),
    /// Print the haze density score and fog level of one image.
    Estimate(EstimateArgs),
    /// Fit the density estimator on labelled manifests.
    TrainHden(TrainHdenArgs),
    /// Train the density head and the three branches.
    Train(TrainArgs),
    /// Restore one image with its routed branch.
    Dehaze(DehazeArgs),
    /// Restore every manifest entry and score the results.
    Infer(InferArgs),
    /// Score restored images against the manifest ground truth.
    Eval(EvalArgs),
    /// Evaluate the training objective on one image.
    EvalLoss(EvalLossArgs),
    /// Compare full training with one ablated term.
    Ablate(AblateArgs),
    /// Time the branches and routed inference.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Comma-separated scattering coefficients.
    #[arg(long, value_delimiter = ',', default_values_t = CANONICAL_BETAS.to_vec())]
    pub betas: Vec<f64>,
    /// Depth units per meter conversion for PNG depth maps.
    #[arg(long, default_value_t = 0.01)]
    pub meters_per_unit: f64,
    /// Airlight: one gray value (`1.0`) or a sampling range (`0.7,1.0`).
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.7, 1.0])]
    pub airlight: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, alias = "hden")]
    pub params: PathBuf,
    #[command(flatten)]
    pub thr: ThresholdArgs,
}

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    #[arg(long, default_value_t = 1.0 / 3.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 2.0 / 3.0)]
    pub beta_thr: f64,
}

impl ThresholdArgs {
    fn get(&self) -> Result<RoutingThresholds> {
        RoutingThresholds::new(self.alpha, self.beta_thr)
    }
}

#[derive(Debug, Args)]
pub struct TrainHdenArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long, default_value_t = 400)]
    pub epochs: usize,
    #[arg(long, default_value_t = 2.0)]
    pub lr: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training configuration JSON; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DehazeArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub params_dir: PathBuf,
    #[arg(long)]
    pub hden: PathBuf,
    /// Skip routing and run the branch for this level (L, M or H).
    #[arg(long)]
    pub force_level: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Write the final transmission map as a gray image.
    #[arg(long)]
    pub dump_trans: Option<PathBuf>,
    /// Write the per-stage coherence residuals as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub state: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force_level: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub hden: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalLossArgs {
    #[arg(long)]
    pub hazy: PathBuf,
    #[arg(long)]
    pub jout: PathBuf,
    /// Transmission map as a gray image (the first channel is read).
    #[arg(long)]
    pub tout: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub hden: PathBuf,
    /// Density score; estimated from the hazy image when omitted.
    #[arg(long)]
    pub d: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// drop-coh, drop-contra, drop-dens or drop-proximal.
    #[arg(long)]
    pub flag: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    /// Also write the report JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub state: PathBuf,
    #[arg(long, default_value_t = MIN_REPEATS)]
    pub repeats: usize,
    /// Report JSON; the per-branch CSV is written alongside with a .csv extension.
    #[arg(long)]
    pub out: PathBuf,
}

fn emit(v: serde_json::Value) {
    println!("{v}");
}

fn parse_level(s: &Option<String>) -> Result<Option<FogLevel>> {
    s.as_deref().map(str::parse).transpose()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let airlight = match a.airlight.as_slice() {
        [v] => AirlightMode::Fixed(AtmosphericLight::gray(*v)?),
        [lo, hi] if (0.0..=1.0).contains(lo) && (0.0..=1.0).contains(hi) && lo <= hi => {
            AirlightMode::Sample { lo: *lo, hi: *hi }
        }
        other => return Err(Error::invalid(format!("--airlight expects v or lo,hi in [0,1], got {other:?}"))),
    };
    if !(a.meters_per_unit.is_finite() && a.meters_per_unit > 0.0) {
        return Err(Error::invalid("--meters-per-unit must be > 0"));
    }
    let opts = SynthOptions {
        betas: a.betas.clone(),
        seed: a.seed,
        meters_per_unit: a.meters_per_unit,
        airlight,
    };
    let pairs = read_pair_list(&a.pairs)?;
    let m = generate_dataset(&pairs, &a.out, &opts)?;
    let c = m.level_counts();
    emit(json!({
        "manifest": a.out.join("manifest.json"),
        "entries": m.entries.len(),
        "light": c[0], "medium": c[1], "heavy": c[2],
    }));
    Ok(())
}

fn cmd_estimate(a: &EstimateArgs) -> Result<()> {
    let thr = a.thr.get()?;
    let hden = HdenParams::load(&a.params)?;
    let img = codec::load_image(&a.image)?;
    let d = estimate_density(&img, &hden)?;
    emit(json!({"d": d.value(), "level": classify_level(d, &thr)}));
    Ok(())
}

fn cmd_train_hden(a: &TrainHdenArgs) -> Result<()> {
    if a.epochs == 0 {
        return Err(Error::invalid("--epochs must be >= 1"));
    }
    if !(a.lr.is_finite() && a.lr > 0.0) {
        return Err(Error::invalid("--lr must be > 0"));
    }
    let train = DatasetManifest::load(&a.train)?;
    let val = DatasetManifest::load(&a.val)?;
    eprintln!("fitting density head on {} images", train.entries.len());
    let (params, report) = train_hden(&train, &val, a.epochs, a.lr)?;
    params.save(&a.out)?;
    let last = report.epochs.last().expect("at least one epoch");
    emit(json!({
        "out": a.out,
        "initial_loss": report.initial_loss,
        "train_loss": last.train_loss,
        "val_accuracy": last.val_accuracy,
        "epochs": report.epochs.len(),
    }));
    Ok(())
}

fn load_config(path: &Option<PathBuf>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p),
        None => Ok(TrainConfig::default()),
    }
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let config = load_config(&a.config)?;
    config.validate()?;
    let train_m = DatasetManifest::load(&a.train)?;
    let val_m = DatasetManifest::load(&a.val)?;
    eprintln!(
        "training {} epochs on {} images (validation {})",
        config.epochs,
        train_m.entries.len(),
        val_m.entries.len()
    );
    let run = train(&config, &train_m, &val_m)?;
    run.state.save_dir(&a.out)?;
    for r in &run.state.loss_history {
        emit(json!({"epoch": r.epoch, "train": r.train, "val_total": r.val_total}));
    }
    let mut routed = [0usize; 3];
    for s in &run.steps {
        routed[s.level.index()] += 1;
    }
    emit(json!({
        "out": a.out,
        "steps": run.steps.len(),
        "routed": {"light": routed[0], "medium": routed[1], "heavy": routed[2]},
    }));
    Ok(())
}

fn cmd_dehaze(a: &DehazeArgs) -> Result<()> {
    let force = parse_level(&a.force_level)?;
    let img = codec::load_image(&a.image)?;
    let hden = HdenParams::load(&a.hden)?;
    let branches = BranchSet::load_dir(&a.params_dir)?;
    let thr = load_thresholds(&a.params_dir)?;
    let r = route_and_dehaze(&img, &hden, &thr, &branches, force)?;
    let res = &r.result;
    codec::save_image(&res.j_out, &a.out)?;
    if let Some(p) = &a.dump_trans {
        codec::save_image(&res.t_out.to_image(), p)?;
    }
    if let Some(p) = &a.trace {
        let mut text = String::from("stage,residual\n");
        text.push_str(&format!("0,{}\n", res.initial_residual));
        for (i, v) in res.residual_trace.iter().enumerate() {
            text.push_str(&format!("{},{v}\n", i + 1));
        }
        write_text(p, &text)?;
    }
    emit(json!({
        "d": r.density.value(),
        "level": r.level,
        "stages": res.residual_trace.len(),
        "airlight": res.airlight,
        "initial_residual": res.initial_residual,
        "final_residual": res.residual_trace.last(),
        "out": a.out,
    }));
    Ok(())
}

fn cmd_infer(a: &InferArgs) -> Result<()> {
    let force = parse_level(&a.force_level)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let state = TrainState::load_dir(&a.state)?;
    let report = infer_batch(&manifest, &state, &a.out, force)?;
    for m in crate::metrics::level_means(&report.rows) {
        emit(json!({"level": m.level, "count": m.count, "psnr": crate::metrics::format_db(m.psnr), "ssim": m.ssim, "density": m.density}));
    }
    let mut routed = [0usize; 3];
    for r in &report.routes {
        routed[r.level.index()] += 1;
    }
    emit(json!({
        "out": a.out,
        "images": report.rows.len(),
        "routed": {"light": routed[0], "medium": routed[1], "heavy": routed[2]},
    }));
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let hden = HdenParams::load(&a.hden)?;
    let report = evaluate_manifest(&manifest, &a.results, &hden)?;
    for m in &report.means {
        emit(json!({"level": m.level, "count": m.count, "psnr": crate::metrics::format_db(m.psnr), "ssim": m.ssim, "density": m.density}));
    }
    if !report.missing.is_empty() {
        for id in &report.missing {
            emit(json!({"missing": id}));
        }
        return Err(Error::io(
            &a.results,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{} restored image(s) missing", report.missing.len()),
            ),
        ));
    }
    write_csv(&report.rows, &a.out)?;
    emit(json!({"out": a.out, "rows": report.rows.len()}));
    Ok(())
}

fn cmd_eval_loss(a: &EvalLossArgs) -> Result<()> {
    if let Some(d) = a.d {
        HazeDensityScore::new(d)?;
    }
    let hazy = codec::load_image(&a.hazy)?;
    let jout = codec::load_image(&a.jout)?;
    let gt = codec::load_image(&a.gt)?;
    let timg = codec::load_image(&a.tout)?;
    let hden = HdenParams::load(&a.hden)?;
    let t = TransmissionMap::from_clamped(
        timg.width(),
        timg.height(),
        timg.pixels().map(|p| p[0].max(T_FLOOR)).collect(),
    )?;
    let d = match a.d {
        Some(v) => HazeDensityScore::new(v)?,
        None => estimate_density(&hazy, &hden)?,
    };
    let report = adaptive_loss(
        &jout,
        &t,
        &gt,
        &hazy,
        d,
        &GammaSchedule::default(),
        &PerceptualWeights::default(),
        &hden,
    )?;
    emit(serde_json::to_value(report).expect("report serializes"));
    Ok(())
}

fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    let flag: Ablation = a.flag.parse()?;
    let mut config = load_config(&a.config)?;
    config.ablation = [flag].into_iter().collect();
    config.validate()?;
    let train_m = DatasetManifest::load(&a.train)?;
    let val_m = DatasetManifest::load(&a.val)?;
    eprintln!("training full and {flag} models");
    let report = ablate(&config, &train_m, &val_m)?;
    let v = serde_json::to_value(&report).expect("report serializes");
    if let Some(p) = &a.out {
        let mut text = serde_json::to_string_pretty(&v).expect("report serializes");
        text.push('\n');
        write_text(p, &text)?;
    }
    emit(v);
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    if a.repeats < MIN_REPEATS {
        return Err(Error::invalid(format!("--repeats must be >= {MIN_REPEATS}")));
    }
    let manifest = DatasetManifest::load(&a.manifest)?;
    let state = TrainState::load_dir(&a.state)?;
    let report = run_bench(&manifest, &state, a.repeats)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    report.save(&a.out)?;
    emit(serde_json::to_value(&report).expect("report serializes"));
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::TrainHden(a) => cmd_train_hden(a),
        Command::Train(a) => cmd_train(a),
        Command::Dehaze(a) => cmd_dehaze(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Eval(a) => cmd_eval(a),
        Command::EvalLoss(a) => cmd_eval_loss(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return 1;
        }
        // only fails if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
