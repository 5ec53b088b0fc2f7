//! The ranking architectures: a shared embedding and BiGRU, per-channel
//! interaction CNNs, a turn encoder per channel and an MLP scorer.

mod checkpoint;
mod config;
mod network;
#[cfg(test)]
mod tests;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use config::{ModelConfig, Readout, VariantRegistry, VariantSpec};
pub use network::{interaction_matrices, Channel, ChannelOutput, ContextEncoding, EncodedText, Network, RankingModel};
