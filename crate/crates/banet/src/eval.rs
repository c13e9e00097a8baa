//! Accuracy, speed and size reports, and the three-variant ablation.

use std::fmt::Write as _;
use std::time::Instant;

use banet_core::augment::Sample;
use banet_core::metrics::{iou_with_mode, mean, IouMode};
use banet_core::model::{image_tensor, param_megabytes, Banet};
use banet_core::raster::Image;
use banet_core::tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::{Phase, RunConfig};
use crate::error::{BanetError, Result};
use crate::train::{train_phase, RunOutputs, Trainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub miou: f64,
    /// Images per second of batch-1 forward passes.
    pub fps: f64,
    pub resolution: (usize, usize),
    pub param_count: usize,
    pub param_mb: f64,
    pub threshold: f64,
    pub per_image_iou: Vec<f64>,
    pub ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub threshold: f64,
    pub mode: IouMode,
    /// Untimed forward passes before measurement starts.
    pub warmup_runs: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            mode: IouMode::Foreground,
            warmup_runs: 10,
        }
    }
}

impl EvalOptions {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            threshold: cfg.eval.threshold,
            mode: cfg.eval.iou_averaging.into(),
            warmup_runs: cfg.eval.warmup_runs,
        }
    }
}

fn forward_once(model: &mut Banet, x: &Tensor) -> Result<Tensor> {
    Ok(model.forward(x, false)?.confidence())
}

/// Evaluates eval-mode predictions on prepared samples, one image at a time.
pub fn evaluate(model: &mut Banet, samples: &[Sample], opts: &EvalOptions) -> Result<EvalReport> {
    let first = samples.first().ok_or_else(|| BanetError::Data("empty dataset".into()))?;
    let warm = image_tensor(&[&first.image])?;
    for _ in 0..opts.warmup_runs {
        forward_once(model, &warm)?;
    }
    let mut per_image_iou = Vec::with_capacity(samples.len());
    let mut seconds = 0.0;
    for s in samples {
        let x = image_tensor(&[&s.image])?;
        let start = Instant::now();
        let conf = forward_once(model, &x)?;
        seconds += start.elapsed().as_secs_f64();
        per_image_iou.push(iou_with_mode(
            &conf.plane_grid(0, 0),
            s.seg_target.grid(),
            opts.threshold,
            opts.mode,
        )?);
    }
    let param_count = model.count_parameters();
    Ok(EvalReport {
        miou: mean(&per_image_iou),
        fps: samples.len() as f64 / seconds.max(f64::MIN_POSITIVE),
        resolution: first.dims(),
        param_count,
        param_mb: param_megabytes(param_count),
        threshold: opts.threshold,
        per_image_iou,
        ids: samples.iter().map(|s| s.source_id.clone()).collect(),
    })
}

/// Batch-1 throughput on a constant image of the given size.
pub fn measure_fps(model: &mut Banet, height: usize, width: usize, warmup: usize, runs: usize) -> Result<f64> {
    let image = Image::new(height, width, vec![0.5; height * width * 3])?;
    let x = image_tensor(&[&image])?;
    for _ in 0..warmup {
        forward_once(model, &x)?;
    }
    let start = Instant::now();
    for _ in 0..runs.max(1) {
        forward_once(model, &x)?;
    }
    Ok(runs.max(1) as f64 / start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE))
}

/// The three model/loss configurations compared in the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    /// No attention head, no boundary loss, no refine loss; the mining
    /// branch sees only RGB.
    Base,
    Attention,
    AttentionRefine,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 3] = [
        AblationVariant::Base,
        AblationVariant::Attention,
        AblationVariant::AttentionRefine,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AblationVariant::Base => "base",
            AblationVariant::Attention => "+attention",
            AblationVariant::AttentionRefine => "+attention+refine",
        }
    }

    /// Adjusts a run config and returns the phase that gates the refine loss.
    pub fn apply(self, cfg: &RunConfig) -> (RunConfig, Phase) {
        let mut cfg = cfg.clone();
        match self {
            AblationVariant::Base => {
                cfg.model.attention = false;
                cfg.loss.beta = 0.0;
                (cfg, Phase::Pretrain)
            }
            AblationVariant::Attention => {
                cfg.model.attention = true;
                (cfg, Phase::Pretrain)
            }
            AblationVariant::AttentionRefine => {
                cfg.model.attention = true;
                (cfg, Phase::Finetune)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,miou,fps,param_count,param_mb\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.6},{:.3},{},{:.4}",
                r.variant.label(),
                r.report.miou,
                r.report.fps,
                r.report.param_count,
                r.report.param_mb
            );
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| variant | mIoU (%) | fps | params (MB) |\n|---|---|---|---|\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "| {} | {:.2} | {:.1} | {:.2} |",
                r.variant.label(),
                100.0 * r.report.miou,
                r.report.fps,
                r.report.param_mb
            );
        }
        out
    }
}

/// Trains each variant from scratch for `iterations` and evaluates it.
pub fn ablation_run(
    cfg: &RunConfig,
    train: &[Sample],
    test: &[Sample],
    iterations: u64,
    opts: &EvalOptions,
) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for variant in AblationVariant::ALL {
        let (mut vcfg, phase) = variant.apply(cfg);
        vcfg.trainer.iterations_per_phase = iterations;
        vcfg.trainer.warmup_iterations = Some(vcfg.trainer.warmup().min(iterations.saturating_sub(1)));
        let mut trainer = Trainer::new(vcfg, phase)?;
        train_phase(&mut trainer, train, None, &RunOutputs::default())?;
        let mut model = trainer.into_model();
        rows.push(AblationRow {
            variant,
            report: evaluate(&mut model, test, opts)?,
        });
    }
    Ok(AblationTable { rows })
}
