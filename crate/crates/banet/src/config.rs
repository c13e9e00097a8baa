//! Run configuration: one TOML file with a section per module.
//!
//! Every field has a default, so an empty file is a valid configuration.
//! Command-line overrides use dotted keys (`trainer.lr_max=0.05`) and are
//! applied to the parsed document before it is deserialized, which keeps
//! type checking and error paths identical for both sources.

use std::path::{Path, PathBuf};

use banet_core::augment::AugmentSpec;
use banet_core::loss::LossWeights;
use banet_core::metrics::IouMode;
use banet_core::model::ModelConfig;
use banet_core::optim::{Decay, LrSchedule, SgdConfig};
use serde::{Deserialize, Serialize};

use crate::data::Layout;
use crate::error::{BanetError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub loss: LossSection,
    pub trainer: TrainerSection,
    pub boundary: BoundarySection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub root: Option<PathBuf>,
    pub layout: Layout,
    pub train_split: String,
    pub test_split: String,
    pub seed: u64,
    pub batch_size: usize,
    /// Square training resolution; `None` keeps native size (padded to 32).
    /// Written as `0` in TOML, which has no null.
    #[serde(with = "zero_is_none")]
    pub resize: Option<usize>,
    pub augment: AugmentSection,
}

mod zero_is_none {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(v.unwrap_or(0) as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        let v = usize::deserialize(d)?;
        Ok((v != 0).then_some(v))
    }
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            root: None,
            layout: Layout::FolderPairs,
            train_split: "train".into(),
            test_split: "test".into(),
            seed: 0,
            batch_size: 16,
            resize: Some(512),
            augment: AugmentSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub enabled: bool,
    pub rotation_degrees: f64,
    pub flip_probability: f64,
    pub lightness_min: f64,
    pub lightness_max: f64,
}

impl Default for AugmentSection {
    fn default() -> Self {
        Self::from(AugmentSpec::default())
    }
}

impl From<AugmentSpec> for AugmentSection {
    fn from(s: AugmentSpec) -> Self {
        Self {
            enabled: s.enabled,
            rotation_degrees: s.rotation_degrees,
            flip_probability: s.flip_probability,
            lightness_min: s.lightness_range.0,
            lightness_max: s.lightness_range.1,
        }
    }
}

impl AugmentSection {
    pub fn spec(&self) -> AugmentSpec {
        AugmentSpec {
            rotation_degrees: self.rotation_degrees,
            flip_probability: self.flip_probability,
            lightness_range: (self.lightness_min, self.lightness_max),
            enabled: self.enabled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Banet64,
    Banet512,
    Custom,
}

/// Model selection. Optional fields override the chosen variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variant: Variant,
    pub attention: bool,
    pub max_channels: Option<usize>,
    pub stem_channels: Option<usize>,
    pub stage_channels: Option<[usize; 4]>,
    pub bottlenecks_per_stage: Option<[usize; 4]>,
    pub bottleneck_reduction: Option<usize>,
    pub mining_channels: Option<usize>,
    pub mining_layers: Option<usize>,
    pub fusion_channels: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            variant: Variant::Banet64,
            attention: true,
            max_channels: None,
            stem_channels: None,
            stage_channels: None,
            bottlenecks_per_stage: None,
            bottleneck_reduction: None,
            mining_channels: None,
            mining_layers: None,
            fusion_channels: None,
        }
    }
}

impl ModelSection {
    pub fn resolve(&self, temperature: f64) -> ModelConfig {
        let mut cfg = match self.variant {
            Variant::Banet512 => ModelConfig::banet512(),
            Variant::Banet64 | Variant::Custom => ModelConfig::banet64(),
        };
        cfg.attention = self.attention;
        cfg.attention_temperature = temperature;
        if let Some(v) = self.max_channels {
            cfg.max_channels = v;
        }
        if let Some(v) = self.stem_channels {
            cfg.stem_channels = v;
        }
        if let Some(v) = self.stage_channels {
            cfg.stage_channels = v;
        }
        if let Some(v) = self.bottlenecks_per_stage {
            cfg.bottlenecks_per_stage = v;
        }
        if let Some(v) = self.bottleneck_reduction {
            cfg.bottleneck_reduction = v;
        }
        if let Some(v) = self.mining_channels {
            cfg.mining_channels = v;
        }
        if let Some(v) = self.mining_layers {
            cfg.mining_layers = v;
        }
        if let Some(v) = self.fusion_channels {
            cfg.fusion_channels = v;
        }
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub gamma_cos: f64,
    pub gamma_mag: f64,
    pub lambda: f64,
    pub temperature: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            alpha: w.alpha,
            beta: w.beta,
            gamma: w.gamma,
            gamma_cos: w.gamma_cos,
            gamma_mag: w.gamma_mag,
            lambda: w.lambda,
            temperature: w.temperature,
        }
    }
}

impl LossSection {
    pub fn weights(&self, canonical_width: u32) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            gamma_cos: self.gamma_cos,
            gamma_mag: self.gamma_mag,
            lambda: self.lambda,
            temperature: self.temperature,
            canonical_width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    #[default]
    Pretrain,
    Finetune,
}

impl Phase {
    /// The refine loss only enters the objective while fine-tuning.
    pub fn refine_enabled(self) -> bool {
        matches!(self, Phase::Finetune)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Finetune => "finetune",
        }
    }
}

impl std::str::FromStr for Phase {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pretrain" => Ok(Phase::Pretrain),
            "finetune" => Ok(Phase::Finetune),
            other => Err(format!("unknown phase `{other}` (expected pretrain or finetune)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DecayKind {
    #[default]
    Poly,
    Cosine,
    Step,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    pub lr_max: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub iterations_per_phase: u64,
    /// Explicit warm-up length; when absent `warmup_fraction` of the phase.
    pub warmup_iterations: Option<u64>,
    pub warmup_fraction: f64,
    pub decay: DecayKind,
    pub poly_power: f64,
    pub step_gamma: f64,
    pub clip_norm: Option<f64>,
    pub phase: Phase,
    pub checkpoint_every: u64,
    pub out_dir: PathBuf,
}

impl Default for TrainerSection {
    fn default() -> Self {
        Self {
            lr_max: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            iterations_per_phase: 40_000,
            warmup_iterations: None,
            warmup_fraction: 0.05,
            decay: DecayKind::Poly,
            poly_power: 0.9,
            step_gamma: 0.1,
            clip_norm: None,
            phase: Phase::Pretrain,
            checkpoint_every: 1_000,
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl TrainerSection {
    pub fn warmup(&self) -> u64 {
        self.warmup_iterations
            .unwrap_or_else(|| (self.iterations_per_phase as f64 * self.warmup_fraction).round() as u64)
    }

    pub fn decay(&self) -> Decay {
        match self.decay {
            DecayKind::Poly => Decay::Poly {
                power: self.poly_power,
            },
            DecayKind::Cosine => Decay::Cosine,
            DecayKind::Step => Decay::Step {
                gamma: self.step_gamma,
            },
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            lr_max: self.lr_max,
            total_iterations: self.iterations_per_phase,
            warmup_iterations: self.warmup(),
            decay: self.decay(),
        }
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            clip_norm: self.clip_norm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundarySection {
    pub canonical_width: u32,
}

impl Default for BoundarySection {
    fn default() -> Self {
        Self {
            canonical_width: banet_core::boundary::DEFAULT_CANONICAL_WIDTH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IouAveraging {
    #[default]
    Foreground,
    TwoClass,
}

impl From<IouAveraging> for IouMode {
    fn from(v: IouAveraging) -> Self {
        match v {
            IouAveraging::Foreground => IouMode::Foreground,
            IouAveraging::TwoClass => IouMode::TwoClass,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub resolution: usize,
    pub threshold: f64,
    pub iou_averaging: IouAveraging,
    pub warmup_runs: usize,
    /// Training iterations per variant for the ablation table.
    pub ablation_iterations: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            resolution: 512,
            threshold: 0.5,
            iou_averaging: IouAveraging::Foreground,
            warmup_runs: 10,
            ablation_iterations: 300,
        }
    }
}

fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| BanetError::Usage(format!("override `{spec}` is not of the form key=value")))?;
    let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, sections) = parts.split_last().expect("split yields one part");
    let mut table = doc;
    for section in sections {
        let entry = table
            .entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| BanetError::Config(format!("{key}: `{section}` is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parses TOML text and applies `key=value` overrides.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| BanetError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| BanetError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; `None` yields defaults plus overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| BanetError::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn loss_weights(&self) -> LossWeights {
        self.loss.weights(self.boundary.canonical_width)
    }

    pub fn model_config(&self) -> ModelConfig {
        self.model.resolve(self.loss.temperature)
    }

    /// Checks every section, reporting the first offending field path.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(BanetError::Config(format!("{field}: {why}")));
        if self.data.batch_size == 0 {
            return bad("data.batch_size", "must be >= 1");
        }
        if let Some(r) = self.data.resize {
            if r == 0 || r % banet_core::model::INPUT_MULTIPLE != 0 {
                return bad("data.resize", "must be a positive multiple of 32");
            }
        }
        if let Err(e) = self.data.augment.spec().validate() {
            return bad("data.augment", &e.to_string());
        }
        if let Err(e) = self.model_config().validate() {
            return bad("model", &e.to_string());
        }
        if self.boundary.canonical_width == 0 {
            return bad("boundary.canonical_width", "must be > 0");
        }
        if let Err(e) = self.loss_weights().validate() {
            return bad("loss", &e.to_string());
        }
        let t = &self.trainer;
        if !(t.lr_max > 0.0) {
            return bad("trainer.lr_max", "must be > 0");
        }
        if !(0.0..1.0).contains(&t.momentum) {
            return bad("trainer.momentum", "must lie in [0, 1)");
        }
        if t.weight_decay < 0.0 {
            return bad("trainer.weight_decay", "must be >= 0");
        }
        if t.iterations_per_phase == 0 {
            return bad("trainer.iterations_per_phase", "must be >= 1");
        }
        if t.warmup() >= t.iterations_per_phase {
            return bad("trainer.warmup_iterations", "must be shorter than the phase");
        }
        if t.checkpoint_every == 0 {
            return bad("trainer.checkpoint_every", "must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            return bad("eval.threshold", "must lie in [0, 1]");
        }
        if self.eval.resolution == 0 || self.eval.resolution % banet_core::model::INPUT_MULTIPLE != 0 {
            return bad("eval.resolution", "must be a positive multiple of 32");
        }
        Ok(())
    }

    /// Dataset root, or an error naming the missing key.
    pub fn data_root(&self) -> Result<&Path> {
        self.data
            .root
            .as_deref()
            .ok_or_else(|| BanetError::Config("data.root: missing (set it in the config or with --set data.root=...)".into()))
    }
}
