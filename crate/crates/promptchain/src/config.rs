//! Experiment configuration: the TOML file format and seed derivation.
//!
//! A config plus its seed fully determines a run. Unknown keys anywhere in
//! the file are rejected so typos cannot silently fall back to defaults.

use serde::{Deserialize, Serialize};

use crate::encoders::EncoderDims;
use crate::error::{Error, Result};
use crate::hashing::hash_str;
use crate::model::{LambdaSpec, ModelSeeds, ModelSpec};
use crate::optim::SgdConfig;
use crate::prompt_chain::PredictionMode;
use crate::task::{ShiftSpec, TaskSpec, TaskStyle};

/// splitmix64 over (master, stream): decorrelated per-component seeds from
/// one master seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed streams; one per seeded component.
pub mod seed_stream {
    pub const ENCODERS: u64 = 1;
    pub const VOCAB: u64 = 2;
    pub const PROMPTS: u64 = 3;
    pub const META_NETS: u64 = 4;
    pub const CONTROLLER: u64 = 5;
    pub const TASK: u64 = 6;
    pub const SHUFFLE: u64 = 7;
    pub const GRADCHECK: u64 = 8;
}

/// Per-component seeds derived from the master seed.
#[derive(Debug, Clone, Copy)]
pub struct RunSeeds {
    pub model: ModelSeeds,
    pub task: u64,
    pub shuffle: u64,
    pub gradcheck: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DimsConfig {
    pub token: usize,
    pub image_feature: usize,
    pub joint: usize,
}

impl Default for DimsConfig {
    fn default() -> Self {
        DimsConfig {
            token: 16,
            image_feature: 64,
            joint: 64,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub chain_length: usize,
    pub prompt_length: usize,
    pub temperature: f64,
    pub prediction: String,
    pub lambda: String,
    pub chained_meta_nets: bool,
    pub class_tokens: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            chain_length: 3,
            prompt_length: 4,
            temperature: 0.01,
            prediction: "final".into(),
            lambda: "dynamic".into(),
            chained_meta_nets: true,
            class_tokens: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShiftConfig {
    pub rotation: f64,
    pub noise: f64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        ShiftConfig {
            rotation: 0.0,
            noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub cluster_spread: f64,
    pub style: String,
    pub shift: ShiftConfig,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            classes: 8,
            train_per_class: 16,
            test_per_class: 16,
            cluster_spread: 0.1,
            style: "classification".into(),
            shift: ShiftConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: "runs/default".into(),
        }
    }
}

/// Everything a run needs; serializable as TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dims: DimsConfig,
    pub model: ModelConfig,
    pub training: SgdConfig,
    pub task: TaskConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            dims: DimsConfig::default(),
            model: ModelConfig::default(),
            training: SgdConfig::default(),
            task: TaskConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl std::str::FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        std::fs::read_to_string(path)?.parse()
    }

    pub fn validate(&self) -> Result<()> {
        self.dims().validate()?;
        self.training.validate()?;
        self.task_spec()?.validate()?;
        let spec = self.model_spec()?;
        spec.prediction.validate(spec.chain_length)?;
        if spec.chain_length < 1 {
            return Err(Error::Config("chain_length must be >= 1".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> EncoderDims {
        EncoderDims {
            token: self.dims.token,
            image_feature: self.dims.image_feature,
            joint: self.dims.joint,
        }
    }

    /// Vocabulary tokens per class: vqa concatenates a question draw and an
    /// answer draw, doubling the count.
    pub fn tokens_per_class(&self) -> Result<usize> {
        let style = TaskStyle::parse(&self.task.style)?;
        Ok(match style {
            TaskStyle::Vqa => self.model.class_tokens * 2,
            _ => self.model.class_tokens,
        })
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        Ok(ModelSpec {
            dims: self.dims(),
            classes: self.task.classes,
            class_tokens: self.tokens_per_class()?,
            chain_length: self.model.chain_length,
            prompt_length: self.model.prompt_length,
            temperature: self.model.temperature,
            prediction: PredictionMode::parse(&self.model.prediction)?,
            lambda: LambdaSpec::parse(&self.model.lambda)?,
            chained_meta_nets: self.model.chained_meta_nets,
        })
    }

    pub fn task_spec(&self) -> Result<TaskSpec> {
        Ok(TaskSpec {
            classes: self.task.classes,
            train_per_class: self.task.train_per_class,
            test_per_class: self.task.test_per_class,
            cluster_spread: self.task.cluster_spread,
            style: TaskStyle::parse(&self.task.style)?,
            shift: ShiftSpec {
                rotation: self.task.shift.rotation,
                noise: self.task.shift.noise,
            },
        })
    }

    pub fn run_seeds(&self) -> RunSeeds {
        RunSeeds {
            model: ModelSeeds {
                encoders: derive_seed(self.seed, seed_stream::ENCODERS),
                vocab: derive_seed(self.seed, seed_stream::VOCAB),
                prompts: derive_seed(self.seed, seed_stream::PROMPTS),
                meta_nets: derive_seed(self.seed, seed_stream::META_NETS),
                controller: derive_seed(self.seed, seed_stream::CONTROLLER),
            },
            task: derive_seed(self.seed, seed_stream::TASK),
            shuffle: derive_seed(self.seed, seed_stream::SHUFFLE),
            gradcheck: derive_seed(self.seed, seed_stream::GRADCHECK),
        }
    }

    /// Canonical serialized form; the basis of the config hash.
    pub fn canonical_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Fingerprint of the experiment itself: every field except the output
    /// location, which has no bearing on what gets computed.
    pub fn config_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = OutputConfig { dir: String::new() };
        hash_str("experiment-config", &canonical.canonical_string())
    }
}
