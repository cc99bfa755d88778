//! Experiment configuration: one TOML file per experiment.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::genkit::{AugmentOptions, GenerationBackend};
use crate::maskgen::MaskConfig;
use crate::neuralcore::{EncoderConfig, Representation};
use crate::objectives::{LossWeights, MslmNormalization, Reduction};
use crate::trainloop::{FinetuneConfig, OptimizerConfig, PretrainConfig, Schedule, TripletSources};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub schema: PathBuf,
    pub train: PathBuf,
    pub val: Option<PathBuf>,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    /// Explanations per relation; defaults to `k`.
    pub explanations_per_relation: Option<usize>,
    /// Synthetic samples per relation; defaults to `k`.
    pub synthetic_budget: Option<usize>,
    pub min_tokens: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            explanations_per_relation: None,
            synthetic_budget: None,
            min_tokens: AugmentOptions::default().min_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub tau: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub mslm_normalization: MslmNormalization,
    pub finetune_reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 0.07,
            lambda1: 1.0,
            lambda2: 1.0,
            mslm_normalization: MslmNormalization::MaskedCount,
            finetune_reduction: Reduction::Mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub representation: Representation,
    pub tie_mslm_head: bool,
    pub vocab_min_count: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            representation: Representation::Pair,
            tie_mslm_head: true,
            vocab_min_count: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub steps: usize,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub learning_rate: Option<f64>,
    pub triplet_sources: TripletSources,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            steps: 300,
            batch_size: 16,
            schedule: Schedule::Joint,
            learning_rate: None,
            triplet_sources: TripletSources::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: Option<f64>,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        FinetuneSection {
            epochs: 10,
            batch_size: 16,
            learning_rate: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Variant {
    Full,
    WithoutEdkg,
    WithoutScdg,
    WithoutMslm,
    WithoutScl,
    WithoutAll,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::WithoutEdkg,
        Variant::WithoutScdg,
        Variant::WithoutMslm,
        Variant::WithoutScl,
        Variant::WithoutAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WithoutEdkg => "w/o EDKG",
            Variant::WithoutScdg => "w/o SCDG",
            Variant::WithoutMslm => "w/o MSLM",
            Variant::WithoutScl => "w/o SCL",
            Variant::WithoutAll => "w/o ALL",
        }
    }

    /// Switch the component off in `cfg`.
    pub fn apply(self, cfg: &mut ExperimentConfig) {
        match self {
            Variant::Full => {}
            Variant::WithoutEdkg => cfg.ablation.use_explanations = false,
            Variant::WithoutScdg => cfg.ablation.use_synthetic = false,
            Variant::WithoutMslm => cfg.mask.bert_style = true,
            Variant::WithoutScl => cfg.loss.lambda2 = 0.0,
            Variant::WithoutAll => {
                cfg.ablation.use_pretrain = false;
                cfg.ablation.use_synthetic = false;
                cfg.ablation.use_explanations = false;
            }
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .replace("w/o", "wo")
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        Ok(match norm.as_str() {
            "full" => Variant::Full,
            "woedkg" => Variant::WithoutEdkg,
            "woscdg" => Variant::WithoutScdg,
            "womslm" => Variant::WithoutMslm,
            "woscl" => Variant::WithoutScl,
            "woall" => Variant::WithoutAll,
            _ => {
                return invalid(format!(
                    "unknown ablation variant `{s}` (expected one of: full, w/o EDKG, w/o SCDG, w/o MSLM, w/o SCL, w/o ALL)"
                ))
            }
        })
    }
}

impl TryFrom<String> for Variant {
    type Error = ConfigError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.name().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub use_explanations: bool,
    pub use_synthetic: bool,
    pub use_pretrain: bool,
    pub variants: Vec<Variant>,
    pub seeds: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            use_explanations: true,
            use_synthetic: true,
            use_pretrain: true,
            variants: Variant::ALL.to_vec(),
            seeds: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Shots per relation.
    pub k: i64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub backend: GenerationBackend,
    pub generation: GenerationConfig,
    pub mask: MaskConfig,
    pub loss: LossConfig,
    pub model: ModelSection,
    pub encoder: EncoderConfig,
    pub optimizer: OptimizerConfig,
    pub pretrain: PretrainSection,
    pub finetune: FinetuneSection,
    pub ablation: AblationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            k: 8,
            output_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            backend: GenerationBackend::default(),
            generation: GenerationConfig::default(),
            mask: MaskConfig::default(),
            loss: LossConfig::default(),
            model: ModelSection::default(),
            encoder: EncoderConfig::default(),
            optimizer: OptimizerConfig::default(),
            pretrain: PretrainSection::default(),
            finetune: FinetuneSection::default(),
            ablation: AblationConfig::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if !p.as_os_str().is_empty() && p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))
    }

    /// Parse and validate; relative paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.data.schema);
        resolve(base, &mut self.data.train);
        resolve(base, &mut self.data.test);
        if let Some(v) = &mut self.data.val {
            resolve(base, v);
        }
        resolve(base, &mut self.output_dir);
    }

    /// Value checks only; see [`ExperimentConfig::check_paths`] for files.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k < 0 {
            return invalid(format!("k must be non-negative, got {}", self.k));
        }
        if !(self.loss.tau > 0.0 && self.loss.tau.is_finite()) {
            return invalid(format!("loss.tau must be positive, got {}", self.loss.tau));
        }
        for (name, l) in [("loss.lambda1", self.loss.lambda1), ("loss.lambda2", self.loss.lambda2)] {
            if !(l >= 0.0 && l.is_finite()) {
                return invalid(format!("{name} must be non-negative, got {l}"));
            }
        }
        self.mask.validate().map_err(|e| ConfigError::Invalid(format!("mask: {e}")))?;
        self.encoder.validate().map_err(|e| ConfigError::Invalid(format!("encoder: {e}")))?;
        self.optimizer.validate().map_err(|e| ConfigError::Invalid(format!("optimizer: {e}")))?;
        self.backend.validate().map_err(|e| ConfigError::Invalid(format!("backend: {e}")))?;
        for (name, lr) in [
            ("pretrain.learning_rate", self.pretrain.learning_rate),
            ("finetune.learning_rate", self.finetune.learning_rate),
        ] {
            if let Some(lr) = lr {
                if !(lr >= 0.0 && lr.is_finite()) {
                    return invalid(format!("{name} must be non-negative, got {lr}"));
                }
            }
        }
        if self.pretrain.batch_size == 0 || self.finetune.batch_size == 0 {
            return invalid("batch sizes must be positive");
        }
        Ok(())
    }

    /// Every referenced input file must exist.
    pub fn check_paths(&self) -> Result<(), ConfigError> {
        let mut paths = vec![("data.schema", &self.data.schema), ("data.train", &self.data.train), ("data.test", &self.data.test)];
        if let Some(v) = &self.data.val {
            paths.push(("data.val", v));
        }
        for (key, p) in paths {
            if p.as_os_str().is_empty() {
                return invalid(format!("{key} is not set"));
            }
            if !p.is_file() {
                return invalid(format!("{key} = {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.k.max(0) as usize
    }

    pub fn explanations_per_relation(&self) -> usize {
        self.generation.explanations_per_relation.unwrap_or(self.k())
    }

    pub fn synthetic_budget(&self) -> usize {
        self.generation.synthetic_budget.unwrap_or(self.k())
    }

    pub fn augment_options(&self) -> AugmentOptions {
        AugmentOptions {
            min_tokens: self.generation.min_tokens,
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        let mut optimizer = self.optimizer;
        if let Some(lr) = self.pretrain.learning_rate {
            optimizer.learning_rate = lr;
        }
        PretrainConfig {
            steps: self.pretrain.steps,
            batch_size: self.pretrain.batch_size,
            schedule: self.pretrain.schedule,
            tau: self.loss.tau,
            weights: LossWeights {
                lambda1: self.loss.lambda1,
                lambda2: self.loss.lambda2,
            },
            normalization: self.loss.mslm_normalization,
            mask: self.mask.clone(),
            triplet_sources: self.pretrain.triplet_sources,
            optimizer,
        }
    }

    pub fn finetune_config(&self) -> FinetuneConfig {
        let mut optimizer = self.optimizer;
        if let Some(lr) = self.finetune.learning_rate {
            optimizer.learning_rate = lr;
        }
        FinetuneConfig {
            epochs: self.finetune.epochs,
            batch_size: self.finetune.batch_size,
            reduction: self.loss.finetune_reduction,
            optimizer,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form, ignoring `output_dir`.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn with_variant(&self, v: Variant) -> Self {
        let mut c = self.clone();
        v.apply(&mut c);
        c
    }
}
