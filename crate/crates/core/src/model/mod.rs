//! Vision-conditioned causal LM: token fusion, LoRA-adapted attention,
//! greedy decoding and attention-map extraction.

mod lm;
mod prompt;

pub use lm::{ForwardOptions, LayerAttention, Model};
pub use prompt::{
    build_prompt, FusedPos, FusedSequence, Granularity, ImageRole, PosTag, PromptKind, TagScheme,
};

use thiserror::Error;

use crate::numerics::NumericsError;
use crate::vision::{VisionConfig, VisionError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("prompt length {len} exceeds max_seq {max}")]
    PromptTooLong { len: usize, max: usize },
    #[error("visual token count mismatch: sequence expects {expected} images, got {got}")]
    VisualCountMismatch { expected: usize, got: usize },
    #[error("model config: {0}")]
    BadConfig(String),
    #[error("attention maps need the 25-token local feature map, not the global token")]
    GlobalFeatureNoGrid,
    #[error("attention span {start}..{end} invalid for sequence length {len}")]
    BadSpan {
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("attention span lies before the visual run, every weight is masked")]
    SpanBeforeImage,
    #[error("missing parameter {0:?}")]
    MissingParam(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Vision(#[from] VisionError),
}

/// Language-model hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub vocab: usize,
    pub max_seq: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            layers: 4,
            heads: 4,
            d_ff: 512,
            vocab: crate::tokenizer::VOCAB_SIZE,
            max_seq: 512,
            lora_rank: 16,
            lora_alpha: 16.0,
        }
    }
}

impl LmConfig {
    /// Effective LoRA scale, alpha / rank.
    pub fn lora_scale(&self) -> f64 {
        self.lora_alpha / self.lora_rank as f64
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 || self.layers == 0 || self.heads == 0 || self.d_ff == 0 {
            return Err(ModelError::BadConfig("zero-sized dimension".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(ModelError::BadConfig(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.lora_rank == 0 || self.lora_rank > self.d_model {
            return Err(ModelError::BadConfig(format!(
                "lora_rank {} must be in 1..={}",
                self.lora_rank, self.d_model
            )));
        }
        if self.vocab != crate::tokenizer::VOCAB_SIZE {
            return Err(ModelError::BadConfig(format!(
                "vocab must be {}, got {}",
                crate::tokenizer::VOCAB_SIZE,
                self.vocab
            )));
        }
        Ok(())
    }
}

/// Full model configuration: LM, vision encoder, image-distinguishing
/// scheme, feature granularity and the tag-embedding training switch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub lm: LmConfig,
    pub vision: VisionConfig,
    pub scheme: TagScheme,
    pub granularity: Granularity,
    pub train_tag_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            lm: LmConfig::default(),
            vision: VisionConfig::default(),
            scheme: TagScheme::UniqueTag,
            granularity: Granularity::Local,
            train_tag_embeddings: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.lm.validate()?;
        self.vision.validate()?;
        Ok(())
    }
}
