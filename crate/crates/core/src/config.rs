//! `key = value` run configuration files: `#` starts a comment, blank lines
//! are skipped, and unknown keys are rejected rather than ignored.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::forge::ForgeConfig;
use crate::model::{Granularity, LmConfig, ModelConfig, TagScheme};
use crate::trainer::TrainConfig;
use crate::vision::VisionConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config line {line}: expected `key = value`, got {text:?}")]
    BadLine { line: usize, text: String },
    #[error("config key {key:?}: cannot parse {value:?} as {expected}")]
    BadValue {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("unknown config keys: {0}")]
    UnknownKeys(String),
    #[error("duplicate config key {0:?}")]
    DuplicateKey(String),
}

/// Parsed key/value pairs; typed getters consume keys so leftovers can be
/// rejected at the end.
#[derive(Debug, Default)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::BadLine {
                    line: i + 1,
                    text: raw.to_string(),
                });
            };
            let key = key.trim().to_string();
            if values
                .insert(key.clone(), value.trim().to_string())
                .is_some()
            {
                return Err(ConfigError::DuplicateKey(key));
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    fn take<T: std::str::FromStr>(
        &mut self,
        key: &str,
        expected: &'static str,
    ) -> Result<Option<T>, ConfigError> {
        match self.values.remove(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: v,
                expected,
            }),
        }
    }

    fn take_with<T>(
        &mut self,
        key: &str,
        expected: &'static str,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<Option<T>, ConfigError> {
        match self.values.remove(key) {
            None => Ok(None),
            Some(v) => parse(&v).map(Some).ok_or(ConfigError::BadValue {
                key: key.to_string(),
                value: v.clone(),
                expected,
            }),
        }
    }

    /// Errors unless every key has been consumed.
    pub fn ensure_consumed(&self) -> Result<(), ConfigError> {
        if self.values.is_empty() {
            Ok(())
        } else {
            let keys: Vec<String> = self.values.keys().cloned().collect();
            Err(ConfigError::UnknownKeys(keys.join(", ")))
        }
    }

    /// Model keys: d_model, layers, heads, d_ff, max_seq, lora_rank,
    /// lora_alpha, d_vision, vision_layers, vision_heads, max_positions,
    /// scheme, granularity, train_tag_embeddings.
    pub fn model_config(&mut self) -> Result<ModelConfig, ConfigError> {
        let mut lm = LmConfig::default();
        if let Some(v) = self.take("d_model", "positive integer")? {
            lm.d_model = v;
        }
        if let Some(v) = self.take("layers", "positive integer")? {
            lm.layers = v;
        }
        if let Some(v) = self.take("heads", "positive integer")? {
            lm.heads = v;
        }
        if let Some(v) = self.take("d_ff", "positive integer")? {
            lm.d_ff = v;
        }
        if let Some(v) = self.take("max_seq", "positive integer")? {
            lm.max_seq = v;
        }
        if let Some(v) = self.take("lora_rank", "positive integer")? {
            lm.lora_rank = v;
        }
        if let Some(v) = self.take("lora_alpha", "number")? {
            lm.lora_alpha = v;
        }
        let mut vision = VisionConfig::default();
        if let Some(v) = self.take("d_vision", "positive integer")? {
            vision.d_vision = v;
        }
        if let Some(v) = self.take("vision_layers", "positive integer")? {
            vision.layers = v;
        }
        if let Some(v) = self.take("vision_heads", "positive integer")? {
            vision.heads = v;
        }
        if let Some(v) = self.take("max_positions", "integer >= 26")? {
            vision.max_positions = v;
        }
        let scheme = self
            .take_with("scheme", "one of the four tag schemes", TagScheme::parse)?
            .unwrap_or(TagScheme::UniqueTag);
        let granularity = self
            .take_with("granularity", "local or global", Granularity::parse)?
            .unwrap_or(Granularity::Local);
        let train_tag_embeddings = self
            .take("train_tag_embeddings", "true or false")?
            .unwrap_or(true);
        Ok(ModelConfig {
            lm,
            vision,
            scheme,
            granularity,
            train_tag_embeddings,
        })
    }

    /// Training keys: epochs, batch_size, grad_accum, lr, beta1, beta2,
    /// weight_decay.
    pub fn train_config(&mut self, seed: u64) -> Result<TrainConfig, ConfigError> {
        let mut cfg = TrainConfig {
            seed,
            ..Default::default()
        };
        if let Some(v) = self.take("epochs", "positive integer")? {
            cfg.epochs = v;
        }
        if let Some(v) = self.take("batch_size", "positive integer")? {
            cfg.batch_size = v;
        }
        if let Some(v) = self.take("grad_accum", "positive integer")? {
            cfg.grad_accum = v;
        }
        if let Some(v) = self.take("lr", "number")? {
            cfg.lr = v;
        }
        if let Some(v) = self.take("beta1", "number")? {
            cfg.beta1 = v;
        }
        if let Some(v) = self.take("beta2", "number")? {
            cfg.beta2 = v;
        }
        if let Some(v) = self.take("weight_decay", "number")? {
            cfg.weight_decay = v;
        }
        Ok(cfg)
    }

    /// Forge keys: n_task1, n_task2, n_task3, n_content, n_val1, n_val2,
    /// n_val3, duplication.
    pub fn forge_config(&mut self) -> Result<ForgeConfig, ConfigError> {
        let mut cfg = ForgeConfig::default();
        if let Some(v) = self.take("n_task1", "integer")? {
            cfg.n_task1 = v;
        }
        if let Some(v) = self.take("n_task2", "integer")? {
            cfg.n_task2 = v;
        }
        if let Some(v) = self.take("n_task3", "integer")? {
            cfg.n_task3 = v;
        }
        if let Some(v) = self.take("n_content", "integer")? {
            cfg.n_content = v;
        }
        if let Some(v) = self.take("n_val1", "integer")? {
            cfg.n_val1 = v;
        }
        if let Some(v) = self.take("n_val2", "integer")? {
            cfg.n_val2 = v;
        }
        if let Some(v) = self.take("n_val3", "integer")? {
            cfg.n_val3 = v;
        }
        if let Some(v) = self.take("duplication", "integer")? {
            cfg.duplication = v;
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_values() {
        let mut cfg = FileConfig::parse(
            "# run setup\nd_model = 64\nlayers=2 # inline\n\nlr = 0.001\n",
        )
        .unwrap();
        let model = cfg.model_config().unwrap();
        assert_eq!(model.lm.d_model, 64);
        assert_eq!(model.lm.layers, 2);
        let train = cfg.train_config(7).unwrap();
        assert_eq!(train.lr, 0.001);
        assert_eq!(train.seed, 7);
        cfg.ensure_consumed().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut cfg = FileConfig::parse("d_model = 64\nbogus_key = 3\n").unwrap();
        let _ = cfg.model_config().unwrap();
        let _ = cfg.train_config(0).unwrap();
        let err = cfg.ensure_consumed().unwrap_err();
        assert!(err.to_string().contains("bogus_key"));
    }

    #[test]
    fn malformed_line_rejected() {
        let err = FileConfig::parse("this is not a pair\n").unwrap_err();
        assert!(matches!(err, ConfigError::BadLine { line: 1, .. }));
    }

    #[test]
    fn bad_value_names_the_key() {
        let mut cfg = FileConfig::parse("epochs = soon\n").unwrap();
        let err = cfg.train_config(0).unwrap_err();
        assert!(err.to_string().contains("epochs"));
    }

    #[test]
    fn duplicate_key_rejected() {
        let err = FileConfig::parse("lr = 1\nlr = 2\n").unwrap_err();
        assert!(matches!(err, ConfigError::DuplicateKey(_)));
    }

    #[test]
    fn scheme_and_granularity_parse() {
        let mut cfg =
            FileConfig::parse("scheme = unified_tag\ngranularity = global\n").unwrap();
        let model = cfg.model_config().unwrap();
        assert_eq!(model.scheme, TagScheme::UnifiedTag);
        assert_eq!(model.granularity, Granularity::Global);
    }
}
