use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Format, MaskingStrategy};
use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Architecture used when a model is built from scratch. Dropout rates also
/// apply when fine-tuning a pretrained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_positions: usize,
    pub residual_dropout: f64,
    pub attention_dropout: f64,
    pub classifier_dropout: f64,
    /// Standard deviation of the normal initializer.
    pub init_scale: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            n_layers: 2,
            n_heads: 2,
            d_model: 32,
            d_ff: 64,
            max_positions: 64,
            residual_dropout: 0.1,
            attention_dropout: 0.1,
            classifier_dropout: 0.1,
            init_scale: 0.02,
        }
    }
}

impl ModelSpec {
    pub fn to_config(&self, vocab_size: usize, n_relations: usize, clf_token: Option<usize>) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            vocab_size,
            max_positions: self.max_positions,
            residual_dropout: self.residual_dropout,
            attention_dropout: self.attention_dropout,
            classifier_dropout: self.classifier_dropout,
            n_relations,
            clf_token,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    /// Weight of the auxiliary language-model loss during fine-tuning.
    pub lambda_lm: f64,
    pub seed: u64,
    pub masking: MaskingStrategy,
    pub use_pretrained_lm: bool,
    pub use_pretrained_bpe_embeddings: bool,
    /// Caps the number of updates; by default every epoch runs in full.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    pub model: ModelSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            batch_size: 8,
            peak_lr: 6.25e-5,
            warmup_fraction: 0.002,
            lambda_lm: 0.5,
            seed: 0,
            masking: MaskingStrategy::None,
            use_pretrained_lm: true,
            use_pretrained_bpe_embeddings: true,
            max_steps: None,
            model: ModelSpec::default(),
        }
    }
}

/// Per-dataset fine-tuning defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    pub config: TrainConfig,
    /// Recorded for reference only; warmup always ramps from 0 to `peak_lr`.
    pub warmup_lr: f64,
}

impl TrainConfig {
    pub fn preset(format: Format) -> Preset {
        let (peak_lr, warmup_lr, lambda_lm, attention_dropout) = match format {
            Format::Tacred => (5.25e-5, 2e-3, 0.5, 0.1),
            Format::Semeval => (6.25e-5, 1e-3, 0.7, 0.15),
        };
        let config = TrainConfig {
            peak_lr,
            lambda_lm,
            model: ModelSpec {
                attention_dropout,
                ..ModelSpec::default()
            },
            ..TrainConfig::default()
        };
        Preset { config, warmup_lr }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.peak_lr.is_finite() && self.peak_lr >= 0.0) {
            return fail(format!("peak_lr {} must be finite and non-negative", self.peak_lr));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return fail(format!("warmup_fraction {} outside [0, 1)", self.warmup_fraction));
        }
        if !(self.lambda_lm.is_finite() && self.lambda_lm >= 0.0) {
            return fail(format!("lambda_lm {} must be finite and non-negative", self.lambda_lm));
        }
        if self.max_steps == Some(0) {
            return fail("max_steps must be at least 1".into());
        }
        if !(self.model.init_scale.is_finite() && self.model.init_scale > 0.0) {
            return fail(format!("init_scale {} must be positive", self.model.init_scale));
        }
        self.model.to_config(1, 1, None).validate()
    }

    /// Parses a TOML config; unknown keys are rejected.
    pub fn from_toml(text: &str) -> Result<TrainConfig> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TrainConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Number of updates for `n_examples` training items.
    pub fn total_steps(&self, n_examples: usize) -> usize {
        let per_epoch = n_examples.div_ceil(self.batch_size).max(1);
        self.max_steps.unwrap_or(self.epochs * per_epoch)
    }
}
