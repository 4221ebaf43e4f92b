use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::names::{self, BiasKind};
use crate::params::{Layout, ParamSpec};

/// Architectural hyperparameters of the encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden: usize,
    pub mlp_width: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub dropout_p: f64,
    /// Output size of the task head (classes or tags).
    pub num_classes: usize,
    #[serde(default = "default_type_vocab")]
    pub type_vocab_size: usize,
}

fn default_type_vocab() -> usize {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Linear layer on the first (`[CLS]`) position.
    Classifier,
    /// Linear layer applied at every position.
    Tagger,
}

impl HeadKind {
    pub fn weight_name(self) -> &'static str {
        match self {
            HeadKind::Classifier => names::CLASSIFIER_WEIGHT,
            HeadKind::Tagger => names::TAGGER_WEIGHT,
        }
    }

    pub fn bias_name(self) -> &'static str {
        match self {
            HeadKind::Classifier => names::CLASSIFIER_BIAS,
            HeadKind::Tagger => names::TAGGER_BIAS,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("hidden", self.hidden),
            ("mlp_width", self.mlp_width),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
            ("num_classes", self.num_classes),
            ("type_vocab_size", self.type_vocab_size),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be at least 1")));
        }
        if self.hidden % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "model.hidden ({}) must be divisible by model.num_heads ({})",
                self.hidden, self.num_heads
            )));
        }
        if self.hidden < 2 {
            return Err(Error::Config("model.hidden must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "model.dropout_p ({}) must lie in [0, 1)",
                self.dropout_p
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.num_heads
    }

    /// BERT-base shapes (no weights are ever allocated for counting).
    pub fn bert_base() -> Self {
        Self {
            num_layers: 12,
            num_heads: 12,
            hidden: 768,
            mlp_width: 3072,
            vocab_size: 30522,
            max_seq_len: 512,
            dropout_p: 0.1,
            num_classes: 2,
            type_vocab_size: 2,
        }
    }

    pub fn bert_large() -> Self {
        Self {
            num_layers: 24,
            num_heads: 16,
            hidden: 1024,
            mlp_width: 4096,
            ..Self::bert_base()
        }
    }

    /// The small configuration used by gradient checks.
    pub fn tiny() -> Self {
        Self {
            num_layers: 2,
            num_heads: 2,
            hidden: 8,
            mlp_width: 16,
            vocab_size: 50,
            max_seq_len: 16,
            dropout_p: 0.1,
            num_classes: 3,
            type_vocab_size: 2,
        }
    }

    /// Embedding and encoder-layer parameters.
    pub fn encoder_layout(&self) -> Layout {
        let h = self.hidden;
        let mut specs = vec![
            ParamSpec::new(names::WORD_EMBEDDINGS, vec![self.vocab_size, h]),
            ParamSpec::new(names::POSITION_EMBEDDINGS, vec![self.max_seq_len, h]),
            ParamSpec::new(names::TOKEN_TYPE_EMBEDDINGS, vec![self.type_vocab_size, h]),
            ParamSpec::new(names::EMBEDDING_LN_WEIGHT, vec![h]),
            ParamSpec::new(names::EMBEDDING_LN_BIAS, vec![h]),
        ];
        for l in 0..self.num_layers {
            for kind in BiasKind::ALL {
                let (rows, cols) = match kind {
                    BiasKind::Intermediate => (self.mlp_width, h),
                    BiasKind::Output => (h, self.mlp_width),
                    _ => (h, h),
                };
                let weight_shape = match kind {
                    BiasKind::AttentionLayerNorm | BiasKind::OutputLayerNorm => vec![h],
                    _ => vec![rows, cols],
                };
                specs.push(ParamSpec::new(kind.weight_name(l), weight_shape));
                specs.push(ParamSpec::new(kind.bias_name(l), vec![rows]));
            }
        }
        Layout { specs }
    }

    pub fn head_specs(&self, head: HeadKind, num_labels: usize) -> [ParamSpec; 2] {
        [
            ParamSpec::new(head.weight_name(), vec![num_labels, self.hidden]),
            ParamSpec::new(head.bias_name(), vec![num_labels]),
        ]
    }

    pub fn mlm_specs(&self) -> [ParamSpec; 2] {
        [
            ParamSpec::new(names::MLM_WEIGHT, vec![self.vocab_size, self.hidden]),
            ParamSpec::new(names::MLM_BIAS, vec![self.vocab_size]),
        ]
    }

    /// Encoder plus a `num_classes`-way task head.
    pub fn finetune_layout(&self, head: HeadKind) -> Layout {
        let mut layout = self.encoder_layout();
        layout
            .specs
            .extend(self.head_specs(head, self.num_classes));
        layout
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ModelConfig::tiny().validate().is_ok());
        let mut c = ModelConfig::tiny();
        c.num_heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::tiny();
        c.dropout_p = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn bert_base_encoder_size() {
        // 23,837,184 embedding + 12 * 7,087,872 layer parameters.
        assert_eq!(ModelConfig::bert_base().encoder_layout().total(), 108_891_648);
    }

    #[test]
    fn every_symbol_once_per_layer() {
        let layout = ModelConfig::tiny().encoder_layout();
        for l in 0..2 {
            for k in BiasKind::ALL {
                let b = k.bias_name(l);
                let w = k.weight_name(l);
                assert_eq!(layout.names().filter(|n| *n == b).count(), 1);
                assert_eq!(layout.names().filter(|n| *n == w).count(), 1);
            }
        }
    }
}
