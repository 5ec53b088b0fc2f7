use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Limits;
use crate::error::{Error, Result};
use crate::nn::{Activation, ConvStackConfig};

/// How the encoded turn states reach the scorer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    /// All `max_turns` rows, padded rows zero, flattened.
    #[default]
    Flatten,
    /// Only the state at the last real turn.
    Last,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: String,
    /// Rows of the embedding table; filled from the vocabulary when zero.
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub freeze_embeddings: bool,
    /// Hidden size per direction of the shared BiGRU.
    pub gru_hidden: usize,
    pub conv: ConvStackConfig,
    /// Width of the learned map from CNN features to encoder inputs.
    pub projection_dim: usize,
    pub attention_heads: usize,
    pub attention_blocks: usize,
    pub ff_mult: usize,
    pub limits: Limits,
    pub mlp_hidden: Vec<usize>,
    pub mlp_activation: Activation,
    pub readout: Readout,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: "FCC_ATTENTION".into(),
            vocab_size: 0,
            embedding_dim: 200,
            freeze_embeddings: false,
            gru_hidden: 100,
            conv: ConvStackConfig::default(),
            projection_dim: 256,
            attention_heads: 2,
            attention_blocks: 2,
            ff_mult: 4,
            limits: Limits::default(),
            mlp_hidden: vec![256, 64],
            mlp_activation: Activation::Tanh,
            readout: Readout::Flatten,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("vocab_size", self.vocab_size),
            ("embedding_dim", self.embedding_dim),
            ("gru_hidden", self.gru_hidden),
            ("projection_dim", self.projection_dim),
            ("attention_heads", self.attention_heads),
            ("attention_blocks", self.attention_blocks),
            ("ff_mult", self.ff_mult),
            ("limits.max_turns", self.limits.max_turns),
            ("limits.max_utterance_len", self.limits.max_utterance_len),
            ("limits.max_candidate_len", self.limits.max_candidate_len),
            ("limits.max_provenance_len", self.limits.max_provenance_len),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be positive")));
        }
        if self.mlp_hidden.contains(&0) {
            return Err(Error::Config("model.mlp_hidden sizes must be positive".into()));
        }
        if !self.projection_dim.is_multiple_of(self.attention_heads) {
            return Err(Error::Config(format!(
                "model.projection_dim {} is not divisible by {} heads",
                self.projection_dim, self.attention_heads
            )));
        }
        self.conv.validate()?;
        let l = &self.limits;
        self.conv.output_dim(l.max_utterance_len, l.max_candidate_len)?;
        self.conv.output_dim(l.max_utterance_len, l.max_provenance_len)?;
        VariantRegistry::builtin().resolve(&self.variant)?;
        Ok(())
    }
}

/// What a named variant instantiates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VariantSpec {
    pub use_provenance: bool,
    /// Name in the turn-encoder registry.
    pub encoder: &'static str,
}

/// Architecture variants by name.
#[derive(Clone, Debug)]
pub struct VariantRegistry {
    variants: BTreeMap<String, VariantSpec>,
}

impl VariantRegistry {
    pub fn empty() -> Self {
        VariantRegistry {
            variants: BTreeMap::new(),
        }
    }

    /// Single-channel `DMN_*` and dual-channel `FCC_*` models with GRU or
    /// attention turn encoders.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        for (prefix, use_provenance) in [("DMN", false), ("FCC", true)] {
            for (suffix, encoder) in [("GRU", "gru"), ("ATTENTION", "attention")] {
                r.register(
                    &format!("{prefix}_{suffix}"),
                    VariantSpec {
                        use_provenance,
                        encoder,
                    },
                );
            }
        }
        r
    }

    pub fn register(&mut self, name: &str, spec: VariantSpec) {
        self.variants.insert(name.to_string(), spec);
    }

    pub fn names(&self) -> Vec<&str> {
        self.variants.keys().map(String::as_str).collect()
    }

    /// Case-insensitive lookup.
    pub fn resolve(&self, name: &str) -> Result<VariantSpec> {
        self.variants
            .get(&name.to_ascii_uppercase())
            .copied()
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown model variant `{name}` (known: {})",
                    self.names().join(", ")
                ))
            })
    }
}
