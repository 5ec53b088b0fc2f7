//! Layers composed by the ranking model: a shared BiGRU over tokens, a
//! convolutional feature stack over interaction matrices, turn-sequence
//! encoders (GRU or multi-head self-attention) and the scoring MLP.

mod attention;
mod conv;
mod encoder;
mod gru;
mod init;
mod mlp;

pub use attention::{sinusoidal_positions, AttentionEncoder, AttentionTrace};
pub use conv::{ConvStack, ConvStackConfig};
pub use encoder::{EncoderRegistry, EncoderSpec, GruTurnEncoder, TurnEncoder};
pub use gru::{BiGru, Gru};
pub use init::{uniform_fan_in, ParamInit};
pub use mlp::{Activation, Mlp};
