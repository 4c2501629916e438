//! Run configuration: one TOML section per subsystem.
//!
//! ```toml
//! seed = 7
//!
//! [backbone]
//! preset = "desk"        # or "full", "tiny"; explicit fields override the preset
//!
//! [attention]
//! heads = 4
//! fc1_width = 128
//!
//! [train]
//! initial_lr = 0.001
//! max_epochs = 200
//! ```

use std::path::{Path, PathBuf};

use rcft_tensor::DType;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One MBConv stage: `repeats` blocks, the first using `stride`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub expansion: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_channels: usize,
    pub repeats: usize,
}

impl StageConfig {
    pub const fn new(expansion: usize, kernel: usize, stride: usize, out_channels: usize, repeats: usize) -> Self {
        StageConfig {
            expansion,
            kernel,
            stride,
            out_channels,
            repeats,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub input_size: usize,
    pub stem_channels: usize,
    pub se_ratio: f64,
    pub stages: Vec<StageConfig>,
}

impl BackboneConfig {
    /// 64-pixel input, four single-block stages, 24×4×4 feature map.
    pub fn desk() -> Self {
        BackboneConfig {
            input_size: 64,
            stem_channels: 8,
            se_ratio: 0.25,
            stages: vec![
                StageConfig::new(1, 3, 2, 8, 1),
                StageConfig::new(3, 3, 2, 16, 1),
                StageConfig::new(3, 5, 2, 24, 1),
                StageConfig::new(3, 3, 1, 24, 1),
            ],
        }
    }

    /// EfficientNet-B2 stage layout at 512-pixel input (352×16×16 feature map).
    pub fn full() -> Self {
        BackboneConfig {
            input_size: 512,
            stem_channels: 32,
            se_ratio: 0.25,
            stages: vec![
                StageConfig::new(1, 3, 1, 16, 2),
                StageConfig::new(6, 3, 2, 24, 3),
                StageConfig::new(6, 5, 2, 48, 3),
                StageConfig::new(6, 3, 2, 88, 4),
                StageConfig::new(6, 5, 1, 120, 4),
                StageConfig::new(6, 5, 2, 208, 5),
                StageConfig::new(6, 3, 1, 352, 2),
            ],
        }
    }

    /// 16-pixel input with 8 output channels; used for gradient checks.
    pub fn tiny() -> Self {
        BackboneConfig {
            input_size: 16,
            stem_channels: 4,
            se_ratio: 0.5,
            stages: vec![StageConfig::new(2, 3, 2, 8, 1)],
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" | "b2" => Ok(Self::full()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::config(format!("unknown backbone preset {other:?}"))),
        }
    }

    /// Product of the stem stride (2) and every stage stride.
    pub fn total_stride(&self) -> usize {
        2 * self.stages.iter().map(|s| s.stride).product::<usize>()
    }

    pub fn output_side(&self) -> usize {
        self.input_size / self.total_stride()
    }

    pub fn out_channels(&self) -> usize {
        self.stages
            .last()
            .map(|s| s.out_channels)
            .unwrap_or(self.stem_channels)
    }

    pub fn block_count(&self) -> usize {
        self.stages.iter().map(|s| s.repeats).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size < 16 {
            return Err(Error::config(format!("input_size {} < 16", self.input_size)));
        }
        let stride = self.total_stride();
        if self.input_size % stride != 0 {
            return Err(Error::config(format!(
                "input_size {} not divisible by total stride {stride}",
                self.input_size
            )));
        }
        if self.stem_channels == 0 {
            return Err(Error::config("stem_channels must be positive"));
        }
        if !(self.se_ratio > 0.0 && self.se_ratio <= 1.0) {
            return Err(Error::config(format!("se_ratio {} outside (0, 1]", self.se_ratio)));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.expansion == 0 || s.out_channels == 0 || s.repeats == 0 {
                return Err(Error::config(format!("stage {i}: expansion, out_channels and repeats must be positive")));
            }
            if s.kernel != 3 && s.kernel != 5 {
                return Err(Error::config(format!("stage {i}: kernel must be 3 or 5, got {}", s.kernel)));
            }
            if s.stride != 1 && s.stride != 2 {
                return Err(Error::config(format!("stage {i}: stride must be 1 or 2, got {}", s.stride)));
            }
        }
        Ok(())
    }
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionConfig {
    pub heads: usize,
    pub fc1_width: usize,
    /// Adds a fixed sinusoidal encoding of token position before attention.
    pub positional_encoding: bool,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            heads: 4,
            fc1_width: 128,
            positional_encoding: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    /// Scores read from the manifest's `ai_*` columns.
    File,
    /// Ink-coverage heuristic computed from the images.
    Stub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub scorer: ScorerKind,
    /// Ink fraction that maps to the full 36 points in the stub scorer.
    pub stub_saturation: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            scorer: ScorerKind::File,
            stub_saturation: 0.15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// Mean of the two streams' softmax outputs.
    #[default]
    Average,
    SpatialOnly,
    ScoringOnly,
}

impl FusionMode {
    pub fn uses_spatial(self) -> bool {
        matches!(self, FusionMode::Average | FusionMode::SpatialOnly)
    }

    pub fn uses_scoring(self) -> bool {
        matches!(self, FusionMode::Average | FusionMode::ScoringOnly)
    }
}

/// Everything that determines the model's parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub attention: AttentionConfig,
    pub scoring: ScoringConfig,
    pub fusion: FusionMode,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        let c = self.backbone.out_channels();
        let h = self.attention.heads;
        if h == 0 || c % h != 0 {
            return Err(Error::config(format!(
                "attention heads {h} must divide backbone channels {c}"
            )));
        }
        if self.attention.fc1_width == 0 {
            return Err(Error::config("fc1_width must be positive"));
        }
        if !(self.scoring.stub_saturation > 0.0 && self.scoring.stub_saturation <= 1.0) {
            return Err(Error::config("stub_saturation must be in (0, 1]"));
        }
        Ok(())
    }

    pub fn d_k(&self) -> usize {
        self.backbone.out_channels() / self.attention.heads
    }

    /// Hex SHA-256 over the canonical TOML of this config and the element type.
    pub fn fingerprint(&self, dtype: DType) -> String {
        let text = toml::to_string(self).expect("model config serializes");
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        h.update(dtype.name().as_bytes());
        hex::encode(&h.finalize()[..16])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 1e-3,
            lr_decay_factor: 0.1,
            lr_decay_every: 5,
            patience: 30,
            max_epochs: 200,
            batch_size: 16,
            seed: 0,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0) || !(self.lr_decay_factor > 0.0) {
            return Err(Error::config("learning rate and decay factor must be positive"));
        }
        if self.lr_decay_every == 0 || self.patience == 0 || self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::config(
                "lr_decay_every, patience, max_epochs and batch_size must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub repeats: usize,
    pub seed_base: u64,
    pub threshold: f64,
    pub ratios: [f64; 3],
    pub stratify: bool,
    pub jobs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            repeats: 50,
            seed_base: 0,
            threshold: 0.5,
            ratios: [0.6, 0.2, 0.2],
            stratify: true,
            jobs: 1,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats < 2 {
            return Err(Error::config(format!("repeats must be >= 2, got {}", self.repeats)));
        }
        let s: f64 = self.ratios.iter().sum();
        if (s - 1.0).abs() > 1e-9 || self.ratios.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::config(format!("split ratios {:?} must be positive and sum to 1", self.ratios)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::config("threshold must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// `[backbone]` as written in a config file: an optional preset plus overrides.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BackboneSection {
    preset: Option<String>,
    input_size: Option<usize>,
    stem_channels: Option<usize>,
    se_ratio: Option<f64>,
    stages: Option<Vec<StageConfig>>,
}

impl BackboneSection {
    fn resolve(self) -> Result<BackboneConfig> {
        let mut cfg = match &self.preset {
            Some(p) => BackboneConfig::preset(p)?,
            None => BackboneConfig::desk(),
        };
        if let Some(v) = self.input_size {
            cfg.input_size = v;
        }
        if let Some(v) = self.stem_channels {
            cfg.stem_channels = v;
        }
        if let Some(v) = self.se_ratio {
            cfg.se_ratio = v;
        }
        if let Some(v) = self.stages {
            cfg.stages = v;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawRunConfig {
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
    fusion: FusionMode,
    backbone: BackboneSection,
    attention: AttentionConfig,
    scoring: ScoringConfig,
    train: TrainConfig,
    eval: EvalConfig,
}

/// Fully resolved configuration for one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub fusion: FusionMode,
    pub backbone: BackboneConfig,
    pub attention: AttentionConfig,
    pub scoring: ScoringConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: None,
            fusion: FusionMode::Average,
            backbone: BackboneConfig::desk(),
            attention: AttentionConfig::default(),
            scoring: ScoringConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawRunConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("invalid config: {e}")))?;
        let seed = raw.seed.unwrap_or(raw.train.seed);
        let cfg = RunConfig {
            seed,
            output_dir: raw.output_dir,
            fusion: raw.fusion,
            backbone: raw.backbone.resolve()?,
            attention: raw.attention,
            scoring: raw.scoring,
            train: raw.train,
            eval: raw.eval,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        self.train.validate()?;
        self.eval.validate()
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            backbone: self.backbone.clone(),
            attention: self.attention.clone(),
            scoring: self.scoring.clone(),
            fusion: self.fusion,
        }
    }

    /// Writes the resolved config as `resolved_config.toml` inside `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("resolved_config.toml");
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
