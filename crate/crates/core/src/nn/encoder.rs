use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Var};

use super::attention::zero_masked_rows;
use super::gru::trailing_mask_len;
use super::{AttentionEncoder, Gru, ParamInit};

/// Shape and size knobs shared by all turn encoders.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderSpec {
    pub input_dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ff_mult: usize,
}

/// Encodes a `T×d` sequence of per-turn features into `T×output_dim`
/// states. Rows for masked turns are zero.
pub trait TurnEncoder<S: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;

    fn output_dim(&self) -> usize;

    fn encode(&self, g: &mut Graph<'_, S>, seq: Var, mask: &[bool]) -> Result<Var>;
}

pub type EncoderFactory<S> =
    fn(&EncoderSpec, &mut ParamInit<'_, S>) -> Result<Box<dyn TurnEncoder<S>>>;

/// Unidirectional GRU over turns, hidden size equal to the input size.
pub struct GruTurnEncoder {
    pub gru: Gru,
}

impl<S: Scalar> TurnEncoder<S> for GruTurnEncoder {
    fn name(&self) -> &'static str {
        "gru"
    }

    fn output_dim(&self) -> usize {
        self.gru.hidden_dim
    }

    fn encode(&self, g: &mut Graph<'_, S>, seq: Var, mask: &[bool]) -> Result<Var> {
        if g.shape(seq)[0] != mask.len() {
            return Err(Error::dim("gru turn encoder", "mask length differs from turn count"));
        }
        let len = trailing_mask_len(mask)?;
        if len == 0 {
            return Err(Error::Contract("turn encoder called with no real turns".into()));
        }
        self.gru.forward(g, seq, len)
    }
}

impl<S: Scalar> TurnEncoder<S> for AttentionEncoder {
    fn name(&self) -> &'static str {
        "attention"
    }

    fn output_dim(&self) -> usize {
        self.model_dim
    }

    fn encode(&self, g: &mut Graph<'_, S>, seq: Var, mask: &[bool]) -> Result<Var> {
        let out = AttentionEncoder::encode(self, g, seq, mask)?;
        zero_masked_rows(g, out, mask)
    }
}

fn build_gru<S: Scalar>(spec: &EncoderSpec, init: &mut ParamInit<'_, S>) -> Result<Box<dyn TurnEncoder<S>>> {
    let gru = Gru::new(&mut init.sub("gru"), spec.input_dim, spec.input_dim);
    Ok(Box::new(GruTurnEncoder { gru }))
}

fn build_attention<S: Scalar>(
    spec: &EncoderSpec,
    init: &mut ParamInit<'_, S>,
) -> Result<Box<dyn TurnEncoder<S>>> {
    let enc = AttentionEncoder::new(
        &mut init.sub("attention"),
        spec.input_dim,
        spec.heads,
        spec.blocks,
        spec.ff_mult,
    )?;
    Ok(Box::new(enc))
}

/// Turn encoders available by name.
pub struct EncoderRegistry<S> {
    factories: BTreeMap<&'static str, EncoderFactory<S>>,
}

impl<S: Scalar> EncoderRegistry<S> {
    pub fn empty() -> Self {
        EncoderRegistry {
            factories: BTreeMap::new(),
        }
    }

    /// Registry holding `gru` and `attention`.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("gru", build_gru::<S>);
        r.register("attention", build_attention::<S>);
        r
    }

    pub fn register(&mut self, name: &'static str, factory: EncoderFactory<S>) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn build(
        &self,
        name: &str,
        spec: &EncoderSpec,
        init: &mut ParamInit<'_, S>,
    ) -> Result<Box<dyn TurnEncoder<S>>> {
        let factory = self.factories.get(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown turn encoder `{name}` (known: {})",
                self.names().join(", ")
            ))
        })?;
        factory(spec, init)
    }
}
