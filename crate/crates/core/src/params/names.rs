//! Parameter naming, following the HuggingFace `BertModel` layout.

use serde::{Deserialize, Serialize};

pub const WORD_EMBEDDINGS: &str = "embeddings.word_embeddings.weight";
pub const POSITION_EMBEDDINGS: &str = "embeddings.position_embeddings.weight";
pub const TOKEN_TYPE_EMBEDDINGS: &str = "embeddings.token_type_embeddings.weight";
pub const EMBEDDING_LN_WEIGHT: &str = "embeddings.LayerNorm.weight";
pub const EMBEDDING_LN_BIAS: &str = "embeddings.LayerNorm.bias";

pub const CLASSIFIER_WEIGHT: &str = "classifier.weight";
pub const CLASSIFIER_BIAS: &str = "classifier.bias";
pub const TAGGER_WEIGHT: &str = "tagger.weight";
pub const TAGGER_BIAS: &str = "tagger.bias";
pub const MLM_WEIGHT: &str = "mlm.decoder.weight";
pub const MLM_BIAS: &str = "mlm.decoder.bias";

/// Prefixes of task-specific heads, trainable under every regime.
pub const HEAD_PREFIXES: [&str; 2] = ["classifier.", "tagger."];
/// Prefix of the pretraining-only vocabulary projection.
pub const MLM_PREFIX: &str = "mlm.";

pub fn is_head(name: &str) -> bool {
    HEAD_PREFIXES.iter().any(|p| name.starts_with(p))
}

pub fn is_bias(name: &str) -> bool {
    name.ends_with(".bias")
}

pub fn layer(index: usize, suffix: &str) -> String {
    format!("encoder.layer.{index}.{suffix}")
}

/// The eight per-layer bias vectors of an encoder layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BiasKind {
    Query,
    Key,
    Value,
    AttentionOutput,
    AttentionLayerNorm,
    Intermediate,
    Output,
    OutputLayerNorm,
}

impl BiasKind {
    pub const ALL: [BiasKind; 8] = [
        BiasKind::Query,
        BiasKind::Key,
        BiasKind::Value,
        BiasKind::AttentionOutput,
        BiasKind::AttentionLayerNorm,
        BiasKind::Intermediate,
        BiasKind::Output,
        BiasKind::OutputLayerNorm,
    ];

    /// Module path inside a layer, without the `.bias`/`.weight` leaf.
    pub fn module(self) -> &'static str {
        match self {
            BiasKind::Query => "attention.self.query",
            BiasKind::Key => "attention.self.key",
            BiasKind::Value => "attention.self.value",
            BiasKind::AttentionOutput => "attention.output.dense",
            BiasKind::AttentionLayerNorm => "attention.output.LayerNorm",
            BiasKind::Intermediate => "intermediate.dense",
            BiasKind::Output => "output.dense",
            BiasKind::OutputLayerNorm => "output.LayerNorm",
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BiasKind::Query => "b_q",
            BiasKind::Key => "b_k",
            BiasKind::Value => "b_v",
            BiasKind::AttentionOutput => "b_m1",
            BiasKind::AttentionLayerNorm => "b_LN1",
            BiasKind::Intermediate => "b_m2",
            BiasKind::Output => "b_m3",
            BiasKind::OutputLayerNorm => "b_LN2",
        }
    }

    pub fn from_symbol(symbol: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.symbol() == symbol)
    }

    pub fn bias_name(self, layer_index: usize) -> String {
        layer(layer_index, &format!("{}.bias", self.module()))
    }

    pub fn weight_name(self, layer_index: usize) -> String {
        layer(layer_index, &format!("{}.weight", self.module()))
    }

    /// Glob matching this bias in every layer.
    pub fn pattern(self) -> String {
        format!("*.{}.bias", self.module())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_match_huggingface_table() {
        let expected = [
            "attention.self.query.bias",
            "attention.self.key.bias",
            "attention.self.value.bias",
            "attention.output.dense.bias",
            "attention.output.LayerNorm.bias",
            "intermediate.dense.bias",
            "output.dense.bias",
            "output.LayerNorm.bias",
        ];
        for (kind, suffix) in BiasKind::ALL.iter().zip(expected) {
            assert_eq!(kind.bias_name(3), format!("encoder.layer.3.{suffix}"));
        }
    }

    #[test]
    fn symbols_round_trip() {
        for kind in BiasKind::ALL {
            assert_eq!(BiasKind::from_symbol(kind.symbol()), Some(kind));
        }
    }
}
