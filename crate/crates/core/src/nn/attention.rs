use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, Scalar, Tensor, Var};

use super::ParamInit;

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
struct Head {
    query: ParamId,
    key: ParamId,
    value: ParamId,
}

#[derive(Clone, Debug)]
struct Block {
    heads: Vec<Head>,
    out_w: ParamId,
    out_b: ParamId,
    norm1_gain: ParamId,
    norm1_bias: ParamId,
    norm2_gain: ParamId,
    norm2_bias: ParamId,
    ff1_w: ParamId,
    ff1_b: ParamId,
    ff2_w: ParamId,
    ff2_b: ParamId,
}

/// Attention weights recorded during a traced encode, `[block][head]`, each `T×T`.
#[derive(Clone, Debug)]
pub struct AttentionTrace<S> {
    pub weights: Vec<Vec<Tensor<S>>>,
}

/// Pre-norm transformer encoder over a turn sequence.
#[derive(Clone, Debug)]
pub struct AttentionEncoder {
    pub model_dim: usize,
    pub num_heads: usize,
    blocks: Vec<Block>,
}

impl AttentionEncoder {
    pub fn new<S: Scalar>(
        init: &mut ParamInit<'_, S>,
        model_dim: usize,
        num_heads: usize,
        num_blocks: usize,
        ff_mult: usize,
    ) -> Result<Self> {
        if num_heads == 0 || !model_dim.is_multiple_of(num_heads) {
            return Err(Error::Config(format!(
                "model dim {model_dim} is not divisible by {num_heads} heads"
            )));
        }
        if num_blocks == 0 || ff_mult == 0 {
            return Err(Error::Config("attention needs at least one block and a positive ff multiplier".into()));
        }
        let d = model_dim;
        let dh = d / num_heads;
        let ff = ff_mult * d;
        let blocks = (0..num_blocks)
            .map(|b| {
                let mut bi = init.sub(&format!("block{b}"));
                let heads = (0..num_heads)
                    .map(|h| {
                        let mut hi = bi.sub(&format!("head{h}"));
                        Head {
                            query: hi.uniform("query", vec![d, dh], d),
                            key: hi.uniform("key", vec![d, dh], d),
                            value: hi.uniform("value", vec![d, dh], d),
                        }
                    })
                    .collect();
                Block {
                    heads,
                    out_w: bi.uniform("out.weight", vec![d, d], d),
                    out_b: bi.uniform("out.bias", vec![d], d),
                    norm1_gain: bi.constant("norm1.gain", vec![d], 1.0),
                    norm1_bias: bi.constant("norm1.bias", vec![d], 0.0),
                    norm2_gain: bi.constant("norm2.gain", vec![d], 1.0),
                    norm2_bias: bi.constant("norm2.bias", vec![d], 0.0),
                    ff1_w: bi.uniform("ff1.weight", vec![d, ff], d),
                    ff1_b: bi.uniform("ff1.bias", vec![ff], d),
                    ff2_w: bi.uniform("ff2.weight", vec![ff, d], ff),
                    ff2_b: bi.uniform("ff2.bias", vec![d], ff),
                }
            })
            .collect();
        Ok(AttentionEncoder {
            model_dim,
            num_heads,
            blocks,
        })
    }

    pub fn encode<S: Scalar>(&self, g: &mut Graph<'_, S>, seq: Var, mask: &[bool]) -> Result<Var> {
        self.run(g, seq, mask, None)
    }

    pub fn encode_traced<S: Scalar>(
        &self,
        g: &mut Graph<'_, S>,
        seq: Var,
        mask: &[bool],
    ) -> Result<(Var, AttentionTrace<S>)> {
        let mut trace = AttentionTrace { weights: Vec::new() };
        let out = self.run(g, seq, mask, Some(&mut trace))?;
        Ok((out, trace))
    }

    fn run<S: Scalar>(
        &self,
        g: &mut Graph<'_, S>,
        seq: Var,
        mask: &[bool],
        mut trace: Option<&mut AttentionTrace<S>>,
    ) -> Result<Var> {
        let s = g.shape(seq).to_vec();
        if s.len() != 2 || s[1] != self.model_dim || s[0] != mask.len() {
            return Err(Error::dim(
                "self_attention_encode",
                format!(
                    "sequence {s:?} with mask of length {} (model dim {})",
                    mask.len(),
                    self.model_dim
                ),
            ));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::Contract("self-attention over a fully masked sequence".into()));
        }
        let t = s[0];
        let pe = g.constant(sinusoidal_positions(t, self.model_dim));
        let mut x = g.add(seq, pe)?;
        let scale = S::of(1.0 / ((self.model_dim / self.num_heads) as f64).sqrt());
        for block in &self.blocks {
            let normed = norm(g, x, block.norm1_gain, block.norm1_bias)?;
            let mut head_outs = Vec::with_capacity(block.heads.len());
            let mut head_weights = Vec::new();
            for head in &block.heads {
                let (wq, wk, wv) = (g.param(head.query), g.param(head.key), g.param(head.value));
                let q = g.matmul(normed, wq)?;
                let k = g.matmul(normed, wk)?;
                let v = g.matmul(normed, wv)?;
                let logits = g.matmul_nt(q, k)?;
                let logits = g.scale(logits, scale);
                let p = g.masked_softmax_rows(logits, mask)?;
                if trace.is_some() {
                    head_weights.push(g.value(p).clone());
                }
                head_outs.push(g.matmul(p, v)?);
            }
            if let Some(tr) = trace.as_deref_mut() {
                tr.weights.push(head_weights);
            }
            let heads = g.concat(&head_outs, 1)?;
            let (ow, ob) = (g.param(block.out_w), g.param(block.out_b));
            let attn = g.matmul(heads, ow)?;
            let attn = g.add_row(attn, ob)?;
            x = g.add(x, attn)?;

            let normed = norm(g, x, block.norm2_gain, block.norm2_bias)?;
            let (w1, b1) = (g.param(block.ff1_w), g.param(block.ff1_b));
            let (w2, b2) = (g.param(block.ff2_w), g.param(block.ff2_b));
            let hidden = g.matmul(normed, w1)?;
            let hidden = g.add_row(hidden, b1)?;
            let hidden = g.relu(hidden);
            let ff = g.matmul(hidden, w2)?;
            let ff = g.add_row(ff, b2)?;
            x = g.add(x, ff)?;
        }
        zero_masked_rows(g, x, mask)
    }
}

fn norm<S: Scalar>(g: &mut Graph<'_, S>, x: Var, gain: ParamId, bias: ParamId) -> Result<Var> {
    let n = g.layer_norm(x, LN_EPS);
    let (gv, bv) = (g.param(gain), g.param(bias));
    let scaled = g.mul_row(n, gv)?;
    g.add_row(scaled, bv)
}

/// Multiplies row `i` by 0 where `mask[i]` is false.
pub(crate) fn zero_masked_rows<S: Scalar>(g: &mut Graph<'_, S>, x: Var, mask: &[bool]) -> Result<Var> {
    if mask.iter().all(|&m| m) {
        return Ok(x);
    }
    let shape = g.shape(x).to_vec();
    let width = shape[1];
    let data = mask
        .iter()
        .flat_map(|&m| std::iter::repeat_n(if m { S::one() } else { S::zero() }, width))
        .collect();
    let m = g.constant(Tensor::new(shape, data)?);
    g.mul(x, m)
}

/// `PE[pos, 2i] = sin(pos / 10000^(2i/d))`, `PE[pos, 2i+1] = cos(..)`.
pub fn sinusoidal_positions<S: Scalar>(len: usize, dim: usize) -> Tensor<S> {
    let mut data = Vec::with_capacity(len * dim);
    for pos in 0..len {
        for i in 0..dim {
            let pair = (i / 2 * 2) as f64;
            let angle = pos as f64 / 10000f64.powf(pair / dim as f64);
            data.push(S::of(if i % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::new(vec![len, dim], data).expect("positive extents")
}
