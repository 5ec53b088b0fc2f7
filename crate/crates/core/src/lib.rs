//! Dual-channel response ranking for multi-turn dialogue.
//!
//! A conversation history is matched turn by turn against each candidate
//! response and, in parallel, against the candidate's provenance (the title
//! of the thread it was taken from). Each channel builds word- and
//! hidden-level interaction matrices, extracts CNN features per turn, and
//! encodes the turn sequence with a GRU or a self-attention stack; a ranking
//! MLP scores the concatenated channel states.

pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
