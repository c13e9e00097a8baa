//! Training loop: one phase of SGD over an in-memory dataset.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use banet_core::augment::Sample;
use banet_core::gradient::image_gradient;
use banet_core::loss::{objective, LossReport, LossWeights, ObjectiveInputs};
use banet_core::model::Banet;
use banet_core::optim::{LrSchedule, Sgd};
use banet_core::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{deterministic_mode, Checkpoint};
use crate::config::{Phase, RunConfig};
use crate::data::{training_batch, Batch, BatchPlan};
use crate::error::{BanetError, Result};

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iteration: u64,
    pub lr: f64,
    pub seg: f64,
    pub bound: f64,
    pub cos: f64,
    pub mag: f64,
    pub refine: f64,
    pub total: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub millis: Option<f64>,
}

impl StepRecord {
    fn new(iteration: u64, lr: f64, r: &LossReport, millis: Option<f64>) -> Self {
        Self {
            iteration,
            lr,
            seg: r.seg,
            bound: r.bound,
            cos: r.cos,
            mag: r.mag,
            refine: r.refine,
            total: r.total,
            millis,
        }
    }

    pub fn report(&self) -> LossReport {
        LossReport {
            seg: self.seg,
            bound: self.bound,
            cos: self.cos,
            mag: self.mag,
            refine: self.refine,
            total: self.total,
        }
    }
}

fn scaled(report: &LossReport, s: f64) -> LossReport {
    LossReport {
        seg: report.seg * s,
        bound: report.bound * s,
        cos: report.cos * s,
        mag: report.mag * s,
        refine: report.refine * s,
        total: report.total * s,
    }
}

fn accumulate(acc: &mut LossReport, r: &LossReport) {
    acc.seg += r.seg;
    acc.bound += r.bound;
    acc.cos += r.cos;
    acc.mag += r.mag;
    acc.refine += r.refine;
    acc.total += r.total;
}

/// Batch-mean loss and, optionally, the gradient of the model parameters.
///
/// Uses a training-mode forward pass (batch statistics in normalization).
pub fn batch_objective(
    model: &mut Banet,
    batch: &Batch,
    weights: &LossWeights,
    refine_enabled: bool,
    backward: bool,
) -> Result<LossReport> {
    let out = model.forward(&batch.images, true)?;
    let (n, _, h, w) = out.seg_logits.shape();
    let inv_n = 1.0 / n as f64;
    let mut d_seg = Tensor::zeros(n, 1, h, w);
    let mut d_att = out.attention_logits.as_ref().map(|_| Tensor::zeros(n, 1, h, w));
    let mut report = LossReport::default();
    for (i, sample) in batch.samples.iter().enumerate() {
        let seg_logits = out.seg_logits.plane_grid(i, 0);
        let att_logits = out.attention_logits.as_ref().map(|t| t.plane_grid(i, 0));
        let img_field = image_gradient(&sample.image)?;
        let m_bound = sample.boundary_target.grid();
        let inputs = ObjectiveInputs {
            seg_logits: &seg_logits,
            seg_target: sample.seg_target.grid(),
            bound: att_logits.as_ref().map(|a| (a, m_bound)),
            img_field: &img_field,
            m_bound,
        };
        let o = objective(&inputs, weights, refine_enabled)?;
        accumulate(&mut report, &o.report);
        for (d, &g) in d_seg.plane_mut(i, 0).iter_mut().zip(o.grad_seg_logits.as_slice()) {
            *d = (g * inv_n) as f32;
        }
        if let (Some(t), Some(g)) = (&mut d_att, &o.grad_bound_logits) {
            for (d, &v) in t.plane_mut(i, 0).iter_mut().zip(g.as_slice()) {
                *d = (v * inv_n) as f32;
            }
        }
    }
    let report = scaled(&report, inv_n);
    if !report.is_finite() {
        return Err(BanetError::Numeric(format!("non-finite loss: {report:?}")));
    }
    if backward {
        model.backward(&d_seg, d_att.as_ref())?;
    }
    Ok(report)
}

/// Model, optimizer and position within one training phase.
pub struct Trainer {
    config: RunConfig,
    phase: Phase,
    model: Banet,
    sgd: Sgd,
    schedule: LrSchedule,
    weights: LossWeights,
    iteration: u64,
}

impl Trainer {
    /// Fresh model initialized from `data.seed`.
    pub fn new(config: RunConfig, phase: Phase) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.data.seed);
        let model = Banet::new(config.model_config(), &mut rng)?;
        Self::with_model(config, phase, model)
    }

    /// Starts a phase from existing weights with zeroed momentum.
    pub fn with_model(config: RunConfig, phase: Phase, model: Banet) -> Result<Self> {
        config.validate()?;
        if model.config() != &config.model_config() {
            return Err(BanetError::Config(
                "model: architecture differs from the initial weights".into(),
            ));
        }
        let schedule = config.trainer.schedule();
        schedule.validate()?;
        let sgd = Sgd::new(config.trainer.sgd())?;
        let weights = config.loss_weights();
        Ok(Self {
            config,
            phase,
            model,
            sgd,
            schedule,
            weights,
            iteration: 0,
        })
    }

    /// Restores a mid-phase checkpoint. `config` must match the one the
    /// checkpoint was trained with, apart from data location and bookkeeping.
    pub fn resume(checkpoint: &Checkpoint, config: RunConfig, phase: Phase) -> Result<Self> {
        if checkpoint.header.phase != phase {
            return Err(BanetError::Checkpoint(format!(
                "checkpoint is from phase {} but {} was requested",
                checkpoint.header.phase.as_str(),
                phase.as_str()
            )));
        }
        check_compatible(&checkpoint.header.config, &config)?;
        let model = checkpoint.build_model()?;
        let mut trainer = Self::with_model(config, phase, model)?;
        trainer.sgd.set_velocity(checkpoint.velocity.clone());
        trainer.iteration = checkpoint.header.iteration;
        Ok(trainer)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn model(&self) -> &Banet {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut Banet {
        &mut self.model
    }

    pub fn into_model(self) -> Banet {
        self.model
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.schedule.total_iterations
    }

    pub fn checkpoint(&mut self) -> Checkpoint {
        Checkpoint::capture(
            &mut self.model,
            self.sgd.velocity(),
            &self.config,
            self.phase,
            self.iteration,
        )
    }

    pub fn plan(&self, dataset_len: usize) -> Result<BatchPlan> {
        BatchPlan::new(dataset_len, self.config.data.batch_size, self.config.data.seed)
    }

    /// Forward, backward and one SGD update on a given batch at rate `lr`.
    pub fn step_on_batch(&mut self, batch: &Batch, lr: f64) -> Result<LossReport> {
        self.model.zero_grad();
        let report = batch_objective(
            &mut self.model,
            batch,
            &self.weights,
            self.phase.refine_enabled(),
            true,
        )?;
        self.sgd.step(&mut self.model, lr);
        Ok(report)
    }

    /// Loss of a batch without updating anything but normalization statistics.
    pub fn batch_loss(&mut self, batch: &Batch) -> Result<LossReport> {
        batch_objective(&mut self.model, batch, &self.weights, self.phase.refine_enabled(), false)
    }

    /// Runs the next scheduled iteration.
    pub fn step(&mut self, data: &[Sample]) -> Result<StepRecord> {
        let start = Instant::now();
        let lr = self.schedule.lr(self.iteration)?;
        let plan = self.plan(data.len())?;
        let batch = training_batch(
            data,
            &plan,
            self.iteration,
            &self.config.data.augment.spec(),
            self.config.boundary.canonical_width,
        )?;
        let report = self.step_on_batch(&batch, lr)?;
        let record = StepRecord::new(
            self.iteration,
            lr,
            &report,
            (!deterministic_mode()).then(|| start.elapsed().as_secs_f64() * 1e3),
        );
        self.iteration += 1;
        Ok(record)
    }
}

/// Fields that must agree for a resumed run to continue the same trajectory.
pub fn check_compatible(stored: &RunConfig, requested: &RunConfig) -> Result<()> {
    let mismatch = |field: &str, a: String, b: String| {
        Err(BanetError::Checkpoint(format!(
            "config incompatibility: {field} is {a} in the checkpoint but {b} now"
        )))
    };
    macro_rules! same {
        ($($path:ident).+) => {
            if stored.$($path).+ != requested.$($path).+ {
                return mismatch(
                    stringify!($($path).+),
                    format!("{:?}", stored.$($path).+),
                    format!("{:?}", requested.$($path).+),
                );
            }
        };
    }
    same!(data.batch_size);
    same!(data.seed);
    same!(data.resize);
    same!(data.augment);
    same!(model);
    same!(loss);
    same!(boundary);
    same!(trainer.lr_max);
    same!(trainer.momentum);
    same!(trainer.weight_decay);
    same!(trainer.iterations_per_phase);
    same!(trainer.decay);
    same!(trainer.poly_power);
    same!(trainer.step_gamma);
    same!(trainer.clip_norm);
    if stored.trainer.warmup() != requested.trainer.warmup() {
        return mismatch(
            "trainer.warmup_iterations",
            stored.trainer.warmup().to_string(),
            requested.trainer.warmup().to_string(),
        );
    }
    Ok(())
}

/// Where and how often a phase writes its artifacts.
#[derive(Debug, Clone, Default)]
pub struct RunOutputs {
    /// Directory for checkpoints and `train_log.jsonl`; nothing is written
    /// when `None`.
    pub dir: Option<PathBuf>,
}

impl RunOutputs {
    pub fn checkpoint_path(dir: &Path, phase: Phase, iteration: u64) -> PathBuf {
        dir.join(format!("{}_{iteration:06}.ckpt", phase.as_str()))
    }
}

/// Trains until `until` iterations (capped at the phase length) have run.
///
/// Appends one JSON line per iteration to `train_log.jsonl`, checkpoints every
/// `trainer.checkpoint_every` iterations and at the end, and on a non-finite
/// loss writes a diagnostic snapshot before failing.
pub fn train_phase(
    trainer: &mut Trainer,
    data: &[Sample],
    until: Option<u64>,
    outputs: &RunOutputs,
) -> Result<(Vec<StepRecord>, Option<PathBuf>)> {
    let total = trainer.schedule.total_iterations;
    let until = until.unwrap_or(total).min(total);
    let every = trainer.config.trainer.checkpoint_every;
    let mut log = match &outputs.dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| BanetError::io(dir, e))?;
            let path = dir.join("train_log.jsonl");
            let file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| BanetError::io(&path, e))?;
            Some((path, std::io::BufWriter::new(file)))
        }
        None => None,
    };
    let mut records = Vec::new();
    let mut last_checkpoint = None;
    while trainer.iteration < until {
        let record = match trainer.step(data) {
            Ok(r) => r,
            Err(BanetError::Numeric(msg)) => {
                let mut msg = format!("iteration {}: {msg}", trainer.iteration);
                if let Some(dir) = &outputs.dir {
                    let path = dir.join(format!("nonfinite_{:06}.ckpt", trainer.iteration));
                    trainer.checkpoint().save(&path)?;
                    msg.push_str(&format!("; snapshot at {}", path.display()));
                }
                return Err(BanetError::Numeric(msg));
            }
            Err(e) => return Err(e),
        };
        log::info!(
            "iter {} lr {:.5} total {:.5} seg {:.5} bound {:.5} refine {:.5}",
            record.iteration,
            record.lr,
            record.total,
            record.seg,
            record.bound,
            record.refine
        );
        if let Some((path, w)) = &mut log {
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(w, "{line}").map_err(|e| BanetError::io(path.as_path(), e))?;
        }
        records.push(record);
        let done = trainer.iteration;
        if let Some(dir) = &outputs.dir {
            if done % every == 0 || done == until {
                let path = RunOutputs::checkpoint_path(dir, trainer.phase, done);
                trainer.checkpoint().save(&path)?;
                last_checkpoint = Some(path);
            }
        }
    }
    if let Some((path, w)) = &mut log {
        w.flush().map_err(|e| BanetError::io(path.as_path(), e))?;
    }
    Ok((records, last_checkpoint))
}
