//! Command-line front end. Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::load_checkpoint;
use crate::config::RunConfig;
use crate::data::{
    fit_to_size, load_dir, make_pair, toy_dataset_with_channels, upsample_lr, worker_rng, LrHrPair, PatchSampler,
};
use crate::denoiser::{init_params, DenoiserParams};
use crate::diffusion::{forward_strip, sample, write_strip, OraclePredictor, Predictor};
use crate::error::Error;
use crate::imaging::{load_image, save_image, with_channels, ImagePlane};
use crate::metrics::{evaluate_dir, fmt_psnr, psnr, ssim};
use crate::schedule::{build_schedule, EtaSchedule, ScheduleConfig};
use crate::trainer::{TrainRun, TrainState};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Seed offset for the held-out toy split so it never overlaps training images.
const VAL_SEED_SALT: u64 = 0x5eed_f7a1;

#[derive(Debug, Parser)]
#[command(name = "deltadiff", version, about = "Residual-only deterministic diffusion for x4 super-resolution")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a denoiser on synthetic images or a directory of PNGs.
    Train(TrainArgs),
    /// Super-resolve LR images with a trained checkpoint.
    Infer(InferArgs),
    /// Score predictions against references (PSNR and SSIM on luma).
    Eval(EvalArgs),
    /// Render forward, noisy-baseline and reverse strips for one HR image.
    Trajectory(TrajectoryArgs),
    /// Train one toy model per (eta_start, eta_end) pair and tabulate held-out metrics.
    Ablate(AblateArgs),
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// Flat `key = value` config file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct ScheduleFlags {
    /// Number of diffusion steps T.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub eta_start: Option<f64>,
    #[arg(long)]
    pub eta_end: Option<f64>,
    #[arg(long)]
    pub curvature_p: Option<f64>,
    #[arg(long)]
    pub scale: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct ModelFlags {
    #[arg(long)]
    pub base_channels: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub time_embed_dim: Option<usize>,
    /// Image channels, 1 (luma) or 3 (RGB).
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long)]
    pub adam_beta1: Option<f64>,
    #[arg(long)]
    pub adam_beta2: Option<f64>,
    #[arg(long)]
    pub adam_eps: Option<f64>,
    /// Clip the global gradient norm to 1.0.
    #[arg(long)]
    pub clip_grad: Option<bool>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// Size of synthetic training images.
    #[arg(long)]
    pub toy_size: Option<usize>,
    /// Number of held-out validation images.
    #[arg(long)]
    pub val_count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub schedule: ScheduleFlags,
    #[command(flatten)]
    pub model: ModelFlags,
    /// Train on this many synthetic images.
    #[arg(long, conflicts_with = "data")]
    pub toy: Option<usize>,
    /// Directory of HR PNGs to train on.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint path (default: <out>/checkpoint.ddif).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Upsampling factor.
    #[arg(long)]
    pub scale: Option<usize>,
    /// LR PNG files or directories of them.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// CSV path (default: <out>/metrics.csv).
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrajectoryArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub schedule: ScheduleFlags,
    /// HR image.
    #[arg(long)]
    pub hr: PathBuf,
    /// Reverse strip uses this model; without it the true HR is the predictor.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Noise scale of the noisy baseline strip.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub kappa: f64,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub schedule: ScheduleFlags,
    #[command(flatten)]
    pub model: ModelFlags,
    /// Comma-separated `eta_start:eta_end` pairs.
    #[arg(long, default_value = "0.01:0.8,0.01:0.99,0.2:0.99,0.5:0.999")]
    pub grid: String,
    #[arg(long)]
    pub toy: Option<usize>,
}

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Argument(_) | Error::NoImages(_) | Error::ConfigMismatch { .. } => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Trajectory(a) => cmd_trajectory(a),
        Command::Ablate(a) => cmd_ablate(a),
    }
}

fn set_opt<T: ToString>(cfg: &mut RunConfig, key: &str, v: &Option<T>) -> CliResult {
    if let Some(v) = v {
        cfg.set(key, &v.to_string()).map_err(|e| Failure::usage(e.to_string()))?;
    }
    Ok(())
}

fn base_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path).map_err(|e| Failure::usage(e.to_string()))?;
    }
    set_opt(&mut cfg, "seed", &common.seed)?;
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

impl ScheduleFlags {
    fn apply(&self, cfg: &mut RunConfig) -> CliResult {
        set_opt(cfg, "steps", &self.steps)?;
        set_opt(cfg, "eta_start", &self.eta_start)?;
        set_opt(cfg, "eta_end", &self.eta_end)?;
        set_opt(cfg, "curvature_p", &self.curvature_p)?;
        set_opt(cfg, "scale", &self.scale)
    }
}

impl ModelFlags {
    fn apply(&self, cfg: &mut RunConfig) -> CliResult {
        set_opt(cfg, "base_channels", &self.base_channels)?;
        set_opt(cfg, "depth", &self.depth)?;
        set_opt(cfg, "time_embed_dim", &self.time_embed_dim)?;
        set_opt(cfg, "channels", &self.channels)?;
        set_opt(cfg, "lr", &self.lr)?;
        set_opt(cfg, "batch_size", &self.batch_size)?;
        set_opt(cfg, "max_steps", &self.max_steps)?;
        set_opt(cfg, "checkpoint_every", &self.checkpoint_every)?;
        set_opt(cfg, "adam_beta1", &self.adam_beta1)?;
        set_opt(cfg, "adam_beta2", &self.adam_beta2)?;
        set_opt(cfg, "adam_eps", &self.adam_eps)?;
        set_opt(cfg, "clip_grad", &self.clip_grad)?;
        set_opt(cfg, "patch_size", &self.patch_size)?;
        set_opt(cfg, "toy_size", &self.toy_size)?;
        set_opt(cfg, "val_count", &self.val_count)
    }
}

fn echo_config(cfg: &RunConfig) {
    for line in cfg.render().lines() {
        println!("# {line}");
    }
}

fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| Failure::runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str) -> CliResult {
    fs::write(path, contents).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}

/// Training images and the held-out validation pairs for `cfg`.
pub fn training_data(cfg: &RunConfig) -> crate::Result<(Vec<ImagePlane>, Vec<LrHrPair>)> {
    let channels = cfg.denoiser.image_channels;
    match &cfg.data_dir {
        None => {
            let train = toy_dataset_with_channels(cfg.toy, cfg.toy_size, channels, cfg.train.seed)?;
            let val = toy_dataset_with_channels(cfg.val_count, cfg.toy_size, channels, cfg.train.seed ^ VAL_SEED_SALT)?
                .iter()
                .map(|hr| make_pair(&fit_to_size(hr, cfg.patch_size)?, cfg.scale))
                .collect::<crate::Result<_>>()?;
            Ok((train, val))
        }
        Some(dir) => {
            let mut images: Vec<ImagePlane> = load_dir(dir, channels)?.into_iter().map(|(_, img)| img).collect();
            if images.is_empty() {
                return Err(Error::NoImages(dir.clone()));
            }
            let n_val = cfg.val_count.min(images.len() - 1);
            let held = images.split_off(images.len() - n_val);
            let val = held
                .iter()
                .map(|img| make_pair(&fit_to_size(img, cfg.patch_size)?, cfg.scale))
                .collect::<crate::Result<_>>()?;
            let train = images
                .iter()
                .map(|img| {
                    if img.height() < cfg.patch_size || img.width() < cfg.patch_size {
                        fit_to_size(img, cfg.patch_size)
                    } else {
                        Ok(img.clone())
                    }
                })
                .collect::<crate::Result<_>>()?;
            Ok((train, val))
        }
    }
}

/// Trains from scratch per `cfg`; `log` receives each training log line.
pub fn train_model(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    log: impl FnMut(&str),
) -> crate::Result<(TrainState, EtaSchedule, Vec<LrHrPair>)> {
    cfg.validate()?;
    let schedule = build_schedule(&cfg.schedule)?;
    let (train, val) = training_data(cfg)?;
    let mut sampler = PatchSampler::new(train, cfg.dataset())?;
    let mut state = TrainState::new(init_params(&cfg.denoiser, cfg.train.seed)?);
    let mut rng = worker_rng(cfg.train.seed, u64::MAX);
    let run = TrainRun {
        cfg: &cfg.train,
        schedule: &schedule,
        validation: &val,
        checkpoint: checkpoint.map(Path::to_path_buf),
    };
    run.run(&mut state, &mut sampler, &mut rng, log)?;
    Ok((state, schedule, val))
}

/// Mean PSNR and SSIM of `predictor` outputs and of the bicubic baseline.
pub fn held_out_scores<P: Predictor + ?Sized>(
    predictor: &P,
    val: &[LrHrPair],
    schedule: &EtaSchedule,
) -> crate::Result<[f64; 4]> {
    let mut acc = [0.0; 4];
    for p in val {
        let (out, _) = sample(&p.lr_up, predictor, schedule)?;
        acc[0] += psnr(&out, &p.hr)?;
        acc[1] += ssim(&out, &p.hr)?;
        acc[2] += psnr(&p.lr_up, &p.hr)?;
        acc[3] += ssim(&p.lr_up, &p.hr)?;
    }
    let n = val.len().max(1) as f64;
    Ok(acc.map(|v| v / n))
}

fn cmd_train(a: TrainArgs) -> CliResult {
    let mut cfg = base_config(&a.common)?;
    a.schedule.apply(&mut cfg)?;
    a.model.apply(&mut cfg)?;
    set_opt(&mut cfg, "toy", &a.toy)?;
    if let Some(dir) = &a.data {
        cfg.data_dir = Some(dir.clone());
    }
    if a.toy.is_some() {
        cfg.data_dir = None;
    }
    if let Some(dir) = &cfg.data_dir {
        if !dir.is_dir() {
            return Err(Failure::usage(format!("data directory {} does not exist", dir.display())));
        }
    }
    if let Some(c) = &a.checkpoint {
        cfg.checkpoint = Some(c.clone());
    }
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    echo_config(&cfg);
    create_dir(&cfg.out)?;
    let ckpt = cfg.checkpoint.clone().unwrap_or_else(|| cfg.out.join("checkpoint.ddif"));

    let (state, schedule, val) = train_model(&cfg, Some(&ckpt), |line| println!("{line}"))?;
    let [p, s, bp, bs] = held_out_scores(&state.params, &val, &schedule)?;
    let summary = format!(
        "steps = {}\npsnr_val = {p:.4}\nssim_val = {s:.6}\npsnr_bicubic = {bp:.4}\nssim_bicubic = {bs:.6}\n",
        state.step
    );
    print!("{summary}");
    write_file(&cfg.out.join("summary.txt"), &summary)?;
    println!("checkpoint written to {}", ckpt.display());
    Ok(())
}

fn png_inputs(inputs: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut names = crate::data::png_names(p)?;
            names.sort();
            files.extend(names.into_iter().map(|n| p.join(n)));
        } else if p.is_file() {
            files.push(p.clone());
        } else {
            return Err(Failure::usage(format!("input {} does not exist", p.display())));
        }
    }
    if files.is_empty() {
        return Err(Failure::usage("no images to process"));
    }
    Ok(files)
}

fn load_model(path: Option<&Path>) -> CliResult<(DenoiserParams, ScheduleConfig)> {
    let path = path.ok_or_else(|| Failure::usage("--checkpoint is required"))?;
    if !path.is_file() {
        return Err(Failure::usage(format!("checkpoint {} does not exist", path.display())));
    }
    let ck = load_checkpoint(path)?;
    Ok((ck.state.params, ck.schedule))
}

fn cmd_infer(a: InferArgs) -> CliResult {
    let mut cfg = base_config(&a.common)?;
    set_opt(&mut cfg, "scale", &a.scale)?;
    if let Some(c) = &a.checkpoint {
        cfg.checkpoint = Some(c.clone());
    }
    if cfg.scale == 0 {
        return Err(Failure::usage("scale must be positive"));
    }
    let files = png_inputs(&a.inputs)?;
    let (params, sched_cfg) = load_model(cfg.checkpoint.as_deref())?;
    let schedule = build_schedule(&sched_cfg)?;
    echo_config(&cfg);
    create_dir(&cfg.out)?;

    let mut failed = 0usize;
    for file in &files {
        let name = file.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let start = Instant::now();
        let result = (|| -> crate::Result<(usize, usize)> {
            let lr = with_channels(&load_image(file)?, params.config().image_channels)?;
            let lr_up = upsample_lr(&lr, cfg.scale)?;
            params.config().check_input(&lr_up)?;
            let (sr, _) = sample(&lr_up, &params, &schedule)?;
            save_image(&sr, cfg.out.join(&name))?;
            Ok((sr.height(), sr.width()))
        })();
        match result {
            Ok((h, w)) => println!(
                "{name}: {h}x{w} in {:.1} ms",
                start.elapsed().as_secs_f64() * 1e3
            ),
            Err(e) => {
                failed += 1;
                eprintln!("{name}: {e}");
            }
        }
    }
    if failed > 0 {
        return Err(Failure::runtime(format!("{failed} of {} image(s) failed", files.len())));
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CliResult {
    let cfg = base_config(&a.common)?;
    for dir in [&a.pred, &a.reference] {
        if !dir.is_dir() {
            return Err(Failure::usage(format!("directory {} does not exist", dir.display())));
        }
    }
    let report = match evaluate_dir(&a.pred, &a.reference) {
        Err(Error::NoImages(_)) => return Err(Failure::usage("no images in the prediction or reference directory")),
        r => r?,
    };
    print!("{}", report.table());
    let csv = a.csv.unwrap_or_else(|| cfg.out.join("metrics.csv"));
    if let Some(parent) = csv.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_file(&csv, &report.to_csv())
}

fn cmd_trajectory(a: TrajectoryArgs) -> CliResult {
    if !(a.kappa >= 0.0 && a.kappa.is_finite()) {
        return Err(Failure::usage(format!("kappa must be a finite number >= 0, got {}", a.kappa)));
    }
    let mut cfg = base_config(&a.common)?;
    a.schedule.apply(&mut cfg)?;
    if let Some(c) = &a.checkpoint {
        cfg.checkpoint = Some(c.clone());
    }
    if !a.hr.is_file() {
        return Err(Failure::usage(format!("HR image {} does not exist", a.hr.display())));
    }
    let model = match &a.checkpoint {
        Some(p) => Some(load_model(Some(p))?),
        None => None,
    };
    let sched_cfg = model.as_ref().map(|m| m.1).unwrap_or(cfg.schedule);
    cfg.schedule = sched_cfg;
    let schedule = build_schedule(&sched_cfg).map_err(|e| Failure::usage(e.to_string()))?;
    echo_config(&cfg);

    let mut hr = load_image(&a.hr)?;
    if let Some((params, _)) = &model {
        hr = with_channels(&hr, params.config().image_channels)?;
        params.config().check_input(&hr)?;
    }
    let pair = make_pair(&hr, cfg.scale)?;
    create_dir(&cfg.out)?;

    let forward = forward_strip(&pair.hr, &pair.lr_up, &schedule, 0.0, cfg.train.seed)?;
    write_strip(&forward, &cfg.out.join("forward.png"))?;
    let noisy = forward_strip(&pair.hr, &pair.lr_up, &schedule, a.kappa, cfg.train.seed)?;
    write_strip(&noisy, &cfg.out.join("noisy.png"))?;

    let (_, trajectory) = match &model {
        Some((params, _)) => sample(&pair.lr_up, params, &schedule)?,
        None => sample(&pair.lr_up, &OraclePredictor { hr: pair.hr.clone() }, &schedule)?,
    };
    write_strip(&trajectory.tiles(&schedule)?, &cfg.out.join("reverse.png"))?;
    println!(
        "wrote forward.png, noisy.png and reverse.png ({} mode) to {}",
        if model.is_some() { "model" } else { "oracle" },
        cfg.out.display()
    );
    Ok(())
}

/// Parses `a:b,c:d` into pairs.
pub fn parse_grid(spec: &str) -> crate::Result<Vec<(f64, f64)>> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (a, b) = item
                .split_once(':')
                .ok_or_else(|| Error::arg(format!("grid entry `{item}` is not `eta_start:eta_end`")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::arg(format!("grid entry `{item}`: bad number `{s}`")))
            };
            Ok((parse(a)?, parse(b)?))
        })
        .collect()
}

fn cmd_ablate(a: AblateArgs) -> CliResult {
    let mut cfg = base_config(&a.common)?;
    a.schedule.apply(&mut cfg)?;
    a.model.apply(&mut cfg)?;
    set_opt(&mut cfg, "toy", &a.toy)?;
    cfg.data_dir = None;
    let grid = parse_grid(&a.grid)?;
    if grid.is_empty() {
        return Err(Failure::usage("empty ablation grid"));
    }
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    echo_config(&cfg);
    create_dir(&cfg.out)?;

    let mut csv = String::from("eta_start,eta_end,psnr_db,ssim,status\n");
    for (eta_start, eta_end) in grid {
        let mut row = cfg.clone();
        row.schedule.eta_start = eta_start;
        row.schedule.eta_end = eta_end;
        if let Err(e) = row.schedule.validate() {
            eprintln!("warning: skipping ({eta_start}, {eta_end}): {e}");
            csv.push_str(&format!("{eta_start},{eta_end},,,skipped: {}\n", e.to_string().replace(',', ";")));
            continue;
        }
        println!("== eta_start={eta_start} eta_end={eta_end}");
        let (state, schedule, val) = train_model(&row, None, |line| println!("{line}"))?;
        let [p, s, bp, bs] = held_out_scores(&state.params, &val, &schedule)?;
        println!("psnr_db={} ssim={s:.6} bicubic_psnr_db={} bicubic_ssim={bs:.6}", fmt_psnr(p), fmt_psnr(bp));
        csv.push_str(&format!("{eta_start},{eta_end},{p:.4},{s:.6},ok\n"));
    }
    let path = cfg.out.join("ablation.csv");
    write_file(&path, &csv)?;
    print!("{csv}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("0.01:0.8, 0.5:0.999").unwrap(), vec![(0.01, 0.8), (0.5, 0.999)]);
        assert!(parse_grid("0.1-0.2").is_err());
        assert!(parse_grid("a:0.2").is_err());
    }

    #[test]
    fn error_codes() {
        assert_eq!(Failure::from(Error::arg("x")).code, EXIT_USAGE);
        assert_eq!(Failure::from(Error::NoImages("d".into())).code, EXIT_USAGE);
        assert_eq!(Failure::from(Error::Orphans(vec!["a".into()])).code, EXIT_RUNTIME);
        assert_eq!(Failure::from(Error::Integrity("x".into())).code, EXIT_RUNTIME);
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        assert_eq!(run_from(["deltadiff", "eval", "--bogus"]), EXIT_USAGE);
        assert_eq!(run_from(["deltadiff"]), EXIT_USAGE);
    }

    #[test]
    fn every_subcommand_has_help() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        for sub in ["train", "infer", "eval", "trajectory", "ablate"] {
            let mut cmd = Cli::command();
            let help = cmd
                .find_subcommand_mut(sub)
                .unwrap()
                .render_long_help()
                .to_string();
            for flag in ["--config", "--seed", "--out"] {
                assert!(help.contains(flag), "{sub} lacks {flag}");
            }
        }
    }
}
