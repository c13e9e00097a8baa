//! The `banet` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use banet_core::augment::{crop_to_original, pad_image};
use banet_core::boundary::make_boundary_target;
use banet_core::gradient::image_gradient;
use banet_core::model::INPUT_MULTIPLE;
use banet_core::raster::{Grid, MaskMap, MaskRole};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::{deterministic_mode, Checkpoint};
use crate::config::{Phase, RunConfig};
use crate::data::{load_dataset, split_dir, Layout};
use crate::error::{BanetError, Result};
use crate::eval::{ablation_run, evaluate, EvalOptions};
use crate::io::{load_image, load_mask, save_grid, save_mask};
use crate::oracle::OracleSuite;
use crate::synth::{write_dataset, Background, ShapeFamily, SyntheticSpec};
use crate::train::{train_phase, RunOutputs, Trainer};

#[derive(Debug, Parser)]
#[command(name = "banet", version, about = "Boundary-aware portrait segmentation")]
pub struct Cli {
    /// Log progress at info level (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate boundary-band targets from segmentation masks.
    MakeTargets(MakeTargetsArgs),
    /// Run one training phase.
    Train(TrainArgs),
    /// Segment images with a trained checkpoint.
    Infer(InferArgs),
    /// Report mIoU, speed and size, or run the three-variant ablation.
    Eval(EvalArgs),
    /// Write gradient magnitude and direction maps of an image.
    Gradients(GradientsArgs),
    /// Write a procedural portrait-like dataset.
    #[command(hide = true)]
    Synth(SynthArgs),
    /// Run the numerical oracles.
    #[command(hide = true)]
    Oracles(OraclesArgs),
}

#[derive(Debug, Args)]
pub struct MakeTargetsArgs {
    #[arg(long)]
    pub masks: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Canonical boundary width W in pixels.
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u32).range(1..))]
    pub width: u32,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Defaults to `trainer.phase` from the config.
    #[arg(long, value_enum)]
    pub phase: Option<PhaseArg>,
    /// Continue an interrupted run of the same phase.
    #[arg(long, conflicts_with = "init")]
    pub resume: Option<PathBuf>,
    /// Start from the weights of another checkpoint (typically pretraining).
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Allow fine-tuning from random weights.
    #[arg(long)]
    pub from_scratch: bool,
    /// Override a config value, e.g. `--set trainer.lr_max=0.05`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Stop after this many iterations of the phase.
    #[arg(long)]
    pub until: Option<u64>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PhaseArg {
    Pretrain,
    Finetune,
}

impl From<PhaseArg> for Phase {
    fn from(p: PhaseArg) -> Self {
        match p {
            PhaseArg::Pretrain => Phase::Pretrain,
            PhaseArg::Finetune => Phase::Finetune,
        }
    }
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// An image file or a directory of images.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Write the confidence map instead of a binary mask.
    #[arg(long)]
    pub soft: bool,
    /// Binarization threshold; defaults to the checkpoint's `eval.threshold`.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Required unless `--ablation` is given.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory of the evaluation split; defaults to `<data.root>/<data.test_split>`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub layout: Option<Layout>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Train and evaluate the base, +attention and +attention+refine variants.
    #[arg(long)]
    pub ablation: bool,
    /// Directory for the JSON report or ablation table.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradientsArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Disc,
    HeadShoulders,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackgroundArg {
    Flat,
    Gradient,
    Noise,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, value_enum, default_value_t = FamilyArg::HeadShoulders)]
    pub family: FamilyArg,
    #[arg(long, value_enum, default_value_t = BackgroundArg::Gradient)]
    pub background: BackgroundArg,
    /// Noise standard deviation for `--background noise`.
    #[arg(long, default_value_t = 0.05)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct OraclesArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbose: bool) {
    let default = if verbose { "info" } else { "warn" };
    let mut builder = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default));
    if deterministic_mode() {
        builder.format_timestamp(None);
    }
    let _ = builder.try_init();
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::MakeTargets(a) => make_targets(&a),
        Command::Train(a) => train(&a),
        Command::Infer(a) => infer(&a),
        Command::Eval(a) => eval(&a),
        Command::Gradients(a) => gradients(&a),
        Command::Synth(a) => synth(&a),
        Command::Oracles(a) => oracles(&a),
    }
}

fn sorted_files(dir: &Path, extensions: &[&str]) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| BanetError::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| BanetError::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| extensions.contains(&e.as_str())) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn make_targets(a: &MakeTargetsArgs) -> Result<()> {
    let masks = sorted_files(&a.masks, &["png"])?;
    if masks.is_empty() {
        return Err(BanetError::Data(format!("{}: no PNG masks found", a.masks.display())));
    }
    let mut failures = Vec::new();
    let mut kernel_sum = 0usize;
    let mut written = 0usize;
    for path in &masks {
        let result = load_mask(path, MaskRole::SegTarget)
            .and_then(|m| Ok(make_boundary_target(&m, a.width)?))
            .and_then(|b| {
                save_mask(a.out.join(format!("{}.png", file_stem(path))), b.mask())?;
                Ok(b.kernel_size())
            });
        match result {
            Ok(k) => {
                kernel_sum += k;
                written += 1;
            }
            Err(e) => {
                log::error!("{e}");
                failures.push(path.display().to_string());
            }
        }
    }
    let mean = if written > 0 { kernel_sum as f64 / written as f64 } else { 0.0 };
    println!("wrote {written} boundary targets to {}, mean kernel size {mean:.2}", a.out.display());
    if failures.is_empty() {
        Ok(())
    } else {
        Err(BanetError::Data(format!("unreadable masks: {}", failures.join(", "))))
    }
}

fn train(a: &TrainArgs) -> Result<()> {
    let cfg = RunConfig::load(a.config.as_deref(), &a.overrides)?;
    if a.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let phase = a.phase.map(Phase::from).unwrap_or(cfg.trainer.phase);
    if phase == Phase::Finetune && a.resume.is_none() && a.init.is_none() && !a.from_scratch {
        return Err(BanetError::Usage(
            "fine-tuning needs --init <pretrain checkpoint> or --resume <checkpoint> (or --from-scratch)".into(),
        ));
    }
    let root = cfg.data_root()?.to_path_buf();
    let mut trainer = if let Some(path) = &a.resume {
        Trainer::resume(&Checkpoint::load(path)?, cfg.clone(), phase)?
    } else if let Some(path) = &a.init {
        let ckpt = Checkpoint::load(path)?;
        if ckpt.header.config.model_config() != cfg.model_config() {
            return Err(BanetError::Checkpoint(format!(
                "{}: model architecture differs from the requested config",
                path.display()
            )));
        }
        Trainer::with_model(cfg.clone(), phase, ckpt.build_model()?)?
    } else {
        Trainer::new(cfg.clone(), phase)?
    };
    let dir = split_dir(&root, &cfg.data.train_split);
    let data = load_dataset(&dir, cfg.data.layout, cfg.data.resize, cfg.boundary.canonical_width)?;
    log::info!("loaded {} training samples from {}", data.len(), dir.display());
    let out_dir = cfg.trainer.out_dir.clone();
    let outputs = RunOutputs { dir: Some(out_dir.clone()) };
    let (_, last) = train_phase(&mut trainer, &data, a.until, &outputs)?;
    let path = match last {
        Some(p) => p,
        None => {
            let p = RunOutputs::checkpoint_path(&out_dir, phase, trainer.iteration());
            trainer.checkpoint().save(&p)?;
            p
        }
    };
    println!("{}", path.display());
    Ok(())
}

fn infer(a: &InferArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let mut model = ckpt.build_model()?;
    let threshold = a.threshold.unwrap_or(ckpt.header.config.eval.threshold);
    let inputs = if a.input.is_dir() {
        sorted_files(&a.input, &["png", "jpg", "jpeg"])?
    } else {
        vec![a.input.clone()]
    };
    let mut done = 0usize;
    for path in &inputs {
        let image = match load_image(path) {
            Ok(i) => i,
            Err(e) => {
                log::error!("skipping: {e}");
                continue;
            }
        };
        let (padded, record) = pad_image(&image, INPUT_MULTIPLE)?;
        let out = model.predict(&padded)?;
        let confidence = crop_to_original(out.confidence.grid(), &record)?;
        let dest = a.out.join(format!("{}.png", file_stem(path)));
        if a.soft {
            save_grid(&dest, &confidence)?;
        } else {
            let binary = confidence.map(|v| (v >= threshold) as u8 as f64);
            save_mask(&dest, &MaskMap::new(binary, MaskRole::SegTarget)?)?;
        }
        done += 1;
    }
    println!("wrote {done} of {} masks to {}", inputs.len(), a.out.display());
    if done == 0 {
        return Err(BanetError::Data("no input image could be processed".into()));
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| BanetError::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| BanetError::io(path, e))
}

fn eval(a: &EvalArgs) -> Result<()> {
    if a.ablation {
        let mut cfg = RunConfig::load(a.config.as_deref(), &a.overrides)?;
        if let Some(layout) = a.layout {
            cfg.data.layout = layout;
        }
        let root = cfg.data_root()?.to_path_buf();
        let w = cfg.boundary.canonical_width;
        let train = load_dataset(&split_dir(&root, &cfg.data.train_split), cfg.data.layout, cfg.data.resize, w)?;
        let test_dir = a.data.clone().unwrap_or_else(|| split_dir(&root, &cfg.data.test_split));
        let test = load_dataset(&test_dir, cfg.data.layout, Some(cfg.eval.resolution), w)?;
        let table = ablation_run(&cfg, &train, &test, cfg.eval.ablation_iterations, &EvalOptions::from_config(&cfg))?;
        print!("{}", table.to_markdown());
        if let Some(out) = &a.out {
            write_text(&out.join("ablation.csv"), &table.to_csv())?;
            write_text(&out.join("ablation.md"), &table.to_markdown())?;
            let json = serde_json::to_string_pretty(&table).expect("table serializes");
            write_text(&out.join("ablation.json"), &json)?;
        }
        return Ok(());
    }
    let ckpt_path = a
        .checkpoint
        .as_ref()
        .ok_or_else(|| BanetError::Usage("eval needs --checkpoint (or --ablation)".into()))?;
    let ckpt = Checkpoint::load(ckpt_path)?;
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(Some(p), &a.overrides)?,
        None => RunConfig::from_toml_str(&ckpt.header.config.to_toml(), &a.overrides)?,
    };
    if let Some(layout) = a.layout {
        cfg.data.layout = layout;
    }
    let dir = match &a.data {
        Some(d) => d.clone(),
        None => split_dir(cfg.data_root()?, &cfg.data.test_split),
    };
    let samples = load_dataset(&dir, cfg.data.layout, Some(cfg.eval.resolution), cfg.boundary.canonical_width)?;
    let mut model = ckpt.build_model()?;
    let report = evaluate(&mut model, &samples, &EvalOptions::from_config(&cfg))?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{json}");
    if let Some(out) = &a.out {
        write_text(&out.join("eval.json"), &json)?;
    }
    Ok(())
}

fn gradients(a: &GradientsArgs) -> Result<()> {
    let image = load_image(&a.input)?;
    let field = image_gradient(&image)?;
    let (_, peak) = field.magnitude().min_max();
    let scale = if peak > 0.0 { 1.0 / peak } else { 0.0 };
    let magnitude = field.magnitude().map(|m| m * scale);
    let angle = field.angle();
    let tau = std::f64::consts::TAU;
    let direction: Grid = angle.map(|t| (t + std::f64::consts::PI) / tau);
    let stem = file_stem(&a.input);
    save_grid(a.out.join(format!("{stem}_magnitude.png")), &magnitude)?;
    save_grid(a.out.join(format!("{stem}_direction.png")), &direction)?;
    println!("wrote gradient maps of {} to {}", a.input.display(), a.out.display());
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        n_images: a.n,
        size: a.size,
        family: match a.family {
            FamilyArg::Disc => ShapeFamily::Disc,
            FamilyArg::HeadShoulders => ShapeFamily::HeadShoulders,
        },
        background: match a.background {
            BackgroundArg::Flat => Background::Flat,
            BackgroundArg::Gradient => Background::Gradient,
            BackgroundArg::Noise => Background::Noise { sigma: a.sigma },
        },
        seed: a.seed,
    };
    let manifest = write_dataset(&spec, &a.out)?;
    println!("wrote {} synthetic pairs to {}", manifest.items.len(), a.out.display());
    Ok(())
}

fn oracles(a: &OraclesArgs) -> Result<()> {
    let report = OracleSuite {
        seed: a.seed,
        ..OracleSuite::default()
    }
    .run();
    print!("{}", report.to_text());
    if report.all_passed() {
        Ok(())
    } else {
        let failed: Vec<_> = report.outcomes.iter().filter(|o| !o.passed).map(|o| o.name.as_str()).collect();
        Err(BanetError::Numeric(format!("oracle failures: {}", failed.join(", "))))
    }
}
