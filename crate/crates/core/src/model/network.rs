use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{read_checkpoint, write_checkpoint};
use super::{ModelConfig, Readout, VariantRegistry, VariantSpec};
use crate::data::{EmbeddingTable, PaddedList, PaddedSeq, PAD};
use crate::error::{Error, Result};
use crate::nn::{
    BiGru, ConvStack, EncoderRegistry, EncoderSpec, Mlp, ParamInit, TurnEncoder,
};
use crate::tensor::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};

/// Embedding- and hidden-state interaction matrices `E_u·E_xᵀ` and `H_u·H_xᵀ`.
pub fn interaction_matrices<S: Scalar>(
    g: &mut Graph<'_, S>,
    e_u: Var,
    e_x: Var,
    h_u: Var,
    h_x: Var,
) -> Result<(Var, Var)> {
    let check = |g: &Graph<'_, S>, a: Var, b: Var, what: &str| -> Result<()> {
        let (sa, sb) = (g.shape(a), g.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::dim(
                "interaction_matrices",
                format!("{what} dims differ: {sa:?} vs {sb:?}"),
            ));
        }
        Ok(())
    };
    check(g, e_u, e_x, "embedding")?;
    check(g, h_u, h_x, "hidden")?;
    if g.shape(e_u)[0] != g.shape(h_u)[0] || g.shape(e_x)[0] != g.shape(h_x)[0] {
        return Err(Error::dim("interaction_matrices", "embedding and hidden lengths differ"));
    }
    let m_e = g.matmul_nt(e_u, e_x)?;
    let m_h = g.matmul_nt(h_u, h_x)?;
    Ok((m_e, m_h))
}

/// Embedded and BiGRU-encoded text.
#[derive(Clone, Copy, Debug)]
pub struct EncodedText {
    pub embedded: Var,
    pub hidden: Var,
}

/// The context turns of one list, encoded once and shared by all candidates.
#[derive(Clone, Debug)]
pub struct ContextEncoding {
    pub turns: Vec<EncodedText>,
    pub turn_mask: Vec<bool>,
}

/// Per-turn CNN features and their encoded sequence for one channel.
#[derive(Clone, Copy, Debug)]
pub struct ChannelOutput {
    /// `T×feature_dim`, real turns only.
    pub turn_features: Var,
    /// `max_turns×projection_dim`; rows of padded turns are zero.
    pub encoded: Var,
}

/// One matching channel: interaction CNN, projection and turn encoder.
pub struct Channel<S> {
    pub cnn: ConvStack,
    pub projection_weight: ParamId,
    pub projection_bias: ParamId,
    pub encoder: Box<dyn TurnEncoder<S>>,
    pub text_len: usize,
}

impl<S: Scalar> Channel<S> {
    fn new(
        init: &mut ParamInit<'_, S>,
        cfg: &ModelConfig,
        spec: VariantSpec,
        text_len: usize,
    ) -> Result<Self> {
        let cnn = ConvStack::new(&mut init.sub("cnn"), &cfg.conv)?;
        let feat = cnn.output_dim(cfg.limits.max_utterance_len, text_len)?;
        let p = cfg.projection_dim;
        let mut proj = init.sub("projection");
        let projection_weight = proj.uniform("weight", vec![feat, p], feat);
        let projection_bias = proj.uniform("bias", vec![p], feat);
        let enc_spec = EncoderSpec {
            input_dim: p,
            heads: cfg.attention_heads,
            blocks: cfg.attention_blocks,
            ff_mult: cfg.ff_mult,
        };
        let encoder = EncoderRegistry::builtin().build(spec.encoder, &enc_spec, init)?;
        Ok(Channel {
            cnn,
            projection_weight,
            projection_bias,
            encoder,
            text_len,
        })
    }
}

/// Parameter layout and forward pass of a ranking variant.
pub struct Network<S> {
    pub config: ModelConfig,
    pub variant: VariantSpec,
    pub embedding: ParamId,
    pub bigru: BiGru,
    pub text: Channel<S>,
    pub provenance: Option<Channel<S>>,
    pub ranker: Mlp,
}

impl<S: Scalar> Network<S> {
    /// Registers all parameters in `store`. Without `embeddings` the table is
    /// drawn uniformly in ±1/sqrt(dim) with a zero padding row.
    pub fn build(
        config: &ModelConfig,
        store: &mut ParamStore<S>,
        rng: &mut ChaCha8Rng,
        embeddings: Option<&EmbeddingTable>,
    ) -> Result<Self> {
        config.validate()?;
        let variant = VariantRegistry::builtin().resolve(&config.variant)?;
        let table = match embeddings {
            Some(t) => {
                if t.vocab_size() != config.vocab_size || t.dim() != config.embedding_dim {
                    return Err(Error::Config(format!(
                        "embedding table is {}x{}, model expects {}x{}",
                        t.vocab_size(),
                        t.dim(),
                        config.vocab_size,
                        config.embedding_dim
                    )));
                }
                t.clone()
            }
            None => EmbeddingTable::random(config.vocab_size, config.embedding_dim, rng)?,
        };
        let embedding = store.add("embedding", table.to_tensor());
        if config.freeze_embeddings {
            store.set_trainable(embedding, false);
        }
        let mut root = ParamInit::new(store, rng, "");
        let bigru = BiGru::new(&mut root.sub("bigru"), config.embedding_dim, config.gru_hidden);
        let limits = &config.limits;
        let text = Channel::new(&mut root.sub("text"), config, variant, limits.max_candidate_len)?;
        let provenance = if variant.use_provenance {
            Some(Channel::new(
                &mut root.sub("provenance"),
                config,
                variant,
                limits.max_provenance_len,
            )?)
        } else {
            None
        };
        let per_channel = match config.readout {
            Readout::Flatten => limits.max_turns * config.projection_dim,
            Readout::Last => config.projection_dim,
        };
        let channels = 1 + usize::from(variant.use_provenance);
        let mut sizes = vec![channels * per_channel];
        sizes.extend(&config.mlp_hidden);
        sizes.push(1);
        let ranker = Mlp::new(&mut root.sub("ranker"), &sizes, config.mlp_activation)?;
        Ok(Network {
            config: config.clone(),
            variant,
            embedding,
            bigru,
            text,
            provenance,
            ranker,
        })
    }

    pub fn encode_text(&self, g: &mut Graph<'_, S>, seq: &PaddedSeq) -> Result<EncodedText> {
        let table = g.param(self.embedding);
        let embedded = g.embedding(table, &seq.ids, Some(PAD))?;
        let hidden = self.bigru.forward(g, embedded, &seq.mask)?;
        Ok(EncodedText { embedded, hidden })
    }

    pub fn encode_context(&self, g: &mut Graph<'_, S>, list: &PaddedList) -> Result<ContextEncoding> {
        let limits = &self.config.limits;
        if list.context.len() != limits.max_turns
            || list.turn_mask.len() != limits.max_turns
            || list.context.iter().any(|t| t.ids.len() != limits.max_utterance_len)
        {
            return Err(Error::dim(
                "score",
                format!(
                    "context must be padded to {} turns of {} tokens",
                    limits.max_turns, limits.max_utterance_len
                ),
            ));
        }
        if list.history_len() == 0 {
            return Err(Error::Contract("context has no real turns".into()));
        }
        let turns = list
            .real_turns()
            .iter()
            .map(|t| self.encode_text(g, t))
            .collect::<Result<_>>()?;
        Ok(ContextEncoding {
            turns,
            turn_mask: list.turn_mask.clone(),
        })
    }

    /// Turn-by-turn matching of the context against one text.
    pub fn channel_forward(
        &self,
        g: &mut Graph<'_, S>,
        channel: &Channel<S>,
        ctx: &ContextEncoding,
        text: EncodedText,
    ) -> Result<ChannelOutput> {
        if ctx.turns.is_empty() {
            return Err(Error::Contract("channel_forward needs at least one turn".into()));
        }
        let mut features = Vec::with_capacity(ctx.turns.len());
        for turn in &ctx.turns {
            let (m_e, m_h) = interaction_matrices(g, turn.embedded, text.embedded, turn.hidden, text.hidden)?;
            let (rows, cols) = (g.shape(m_e)[0], g.shape(m_e)[1]);
            let stacked = g.concat(&[m_e, m_h], 0)?;
            let image = g.reshape(stacked, vec![2, rows, cols])?;
            features.push(channel.cnn.features(g, image)?);
        }
        let turn_features = g.concat(&features, 0)?;
        let w = g.param(channel.projection_weight);
        let b = g.param(channel.projection_bias);
        let projected = g.matmul(turn_features, w)?;
        let projected = g.add_row(projected, b)?;
        let padded = pad_turns(g, projected, ctx.turn_mask.len())?;
        let encoded = channel.encoder.encode(g, padded, &ctx.turn_mask)?;
        Ok(ChannelOutput {
            turn_features,
            encoded,
        })
    }

    fn readout(&self, g: &mut Graph<'_, S>, out: ChannelOutput, real_turns: usize) -> Result<Var> {
        let s = g.shape(out.encoded).to_vec();
        match self.config.readout {
            Readout::Flatten => g.reshape(out.encoded, vec![1, s[0] * s[1]]),
            Readout::Last => g.rows(out.encoded, real_turns - 1, 1),
        }
    }

    /// Score `[1×1]` of one candidate; `provenance` is required by dual-channel
    /// variants and ignored otherwise.
    pub fn score_candidate(
        &self,
        g: &mut Graph<'_, S>,
        ctx: &ContextEncoding,
        candidate: &PaddedSeq,
        provenance: Option<&PaddedSeq>,
    ) -> Result<Var> {
        let limits = &self.config.limits;
        if candidate.ids.len() != limits.max_candidate_len {
            return Err(Error::dim(
                "score",
                format!("candidate must be padded to {} tokens", limits.max_candidate_len),
            ));
        }
        let real = ctx.turns.len();
        let text = self.encode_text(g, candidate)?;
        let out = self.channel_forward(g, &self.text, ctx, text)?;
        let mut parts = vec![self.readout(g, out, real)?];
        if let Some(channel) = &self.provenance {
            let prov = provenance.ok_or_else(|| {
                Error::Contract(format!("variant {} needs candidate provenance", self.config.variant))
            })?;
            if prov.ids.len() != limits.max_provenance_len {
                return Err(Error::dim(
                    "score",
                    format!("provenance must be padded to {} tokens", limits.max_provenance_len),
                ));
            }
            let encoded = self.encode_text(g, prov)?;
            let out = self.channel_forward(g, channel, ctx, encoded)?;
            parts.push(self.readout(g, out, real)?);
        }
        let features = if parts.len() == 1 { parts[0] } else { g.concat(&parts, 1)? };
        self.ranker.score(g, features)
    }

    /// Scores of all candidates in `list`, sharing the context encoding.
    pub fn score_list(&self, g: &mut Graph<'_, S>, list: &PaddedList) -> Result<Vec<Var>> {
        let ctx = self.encode_context(g, list)?;
        (0..list.candidates.len())
            .map(|k| self.score_candidate(g, &ctx, &list.candidates[k], Some(&list.provenances[k])))
            .collect()
    }
}

fn pad_turns<S: Scalar>(g: &mut Graph<'_, S>, x: Var, rows: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s[0] == rows {
        return Ok(x);
    }
    let zeros = g.constant(Tensor::zeros(vec![rows - s[0], s[1]]));
    g.concat(&[x, zeros], 0)
}

/// A network together with its parameter values.
pub struct RankingModel<S> {
    pub network: Network<S>,
    pub params: ParamStore<S>,
}

impl<S: Scalar> RankingModel<S> {
    pub fn new(config: &ModelConfig, seed: u64, embeddings: Option<&EmbeddingTable>) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let network = Network::build(config, &mut params, &mut rng, embeddings)?;
        Ok(RankingModel { network, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.network.config
    }

    /// Candidate scores of one list without recording gradients.
    pub fn scores(&self, list: &PaddedList) -> Result<Vec<f64>> {
        let mut g = Graph::inference(&self.params);
        let vars = self.network.score_list(&mut g, list)?;
        Ok(vars.into_iter().map(|v| g.value(v).item().as_f64()).collect())
    }

    /// Multiplies the scorer's output weights and bias by `c`.
    pub fn rescale_output(&mut self, c: f64) {
        let (w, b) = self.network.ranker.output_layer();
        for id in [w, b] {
            self.params.get_mut(id).data_mut().iter_mut().for_each(|v| *v *= S::of(c));
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write_checkpoint(&mut w, self.config(), &self.params)?;
        w.flush()?;
        Ok(())
    }

    /// Loads a checkpoint; with `expected_variant` set, a different stored
    /// variant is rejected.
    pub fn load(path: impl AsRef<Path>, expected_variant: Option<&str>) -> Result<Self> {
        let (config, tensors) = read_checkpoint(BufReader::new(File::open(path)?))?;
        if let Some(want) = expected_variant {
            if !want.eq_ignore_ascii_case(&config.variant) {
                return Err(Error::Config(format!(
                    "checkpoint holds variant {}, expected {want}",
                    config.variant
                )));
            }
        }
        let mut model = Self::new(&config, 0, None)?;
        model.assign_all(tensors)?;
        Ok(model)
    }

    /// Replaces every parameter by name; names and shapes must match exactly.
    pub fn assign_all(&mut self, tensors: Vec<(String, Tensor<f64>)>) -> Result<()> {
        if tensors.len() != self.params.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, model has {}",
                tensors.len(),
                self.params.len()
            )));
        }
        for (name, t) in tensors {
            let id = self
                .params
                .find(&name)
                .ok_or_else(|| Error::Config(format!("checkpoint tensor `{name}` not in model")))?;
            if t.shape() != self.params.get(id).shape() {
                return Err(Error::Config(format!(
                    "checkpoint tensor `{name}` has shape {:?}, model expects {:?}",
                    t.shape(),
                    self.params.get(id).shape()
                )));
            }
            self.params.assign(id, t.cast())?;
        }
        Ok(())
    }

    pub fn embedding_table(&self) -> Result<EmbeddingTable> {
        EmbeddingTable::from_tensor(self.params.get(self.network.embedding))
    }
}
