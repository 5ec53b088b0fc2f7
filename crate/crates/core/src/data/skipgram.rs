//! Skip-gram word vectors trained with negative sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EmbeddingTable, PAD};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 200,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            seed: 1,
        }
    }
}

/// Cumulative unigram^0.75 distribution over token ids.
struct NoiseDistribution {
    cumulative: Vec<f64>,
}

impl NoiseDistribution {
    fn new(counts: &[u64]) -> Self {
        let mut acc = 0.0;
        let cumulative = counts
            .iter()
            .map(|&c| {
                acc += (c as f64).powf(0.75);
                acc
            })
            .collect();
        NoiseDistribution { cumulative }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let total = *self.cumulative.last().unwrap();
        let u = rng.gen::<f64>() * total;
        self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Trains input vectors over id sequences. The learning rate decays
/// linearly to 1e-4 of its start over all updates; with zero epochs the
/// random initialisation is returned untouched.
pub fn pretrain_skipgram(
    corpus: &[Vec<usize>],
    vocab_size: usize,
    cfg: &SkipGramConfig,
) -> Result<EmbeddingTable> {
    if cfg.dim == 0 {
        return Err(Error::Config("skip-gram dimension must be positive".into()));
    }
    if cfg.window == 0 || vocab_size == 0 {
        return Err(Error::Config("skip-gram window and vocabulary must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut input = EmbeddingTable::random(vocab_size, cfg.dim, &mut rng)?;
    if cfg.epochs == 0 {
        return Ok(input);
    }

    let mut counts = vec![0u64; vocab_size];
    for &id in corpus.iter().flatten() {
        if id >= vocab_size {
            return Err(Error::Data(format!("token id {id} outside vocabulary of {vocab_size}")));
        }
        counts[id] += 1;
    }
    counts[PAD] = 0;
    if counts.iter().all(|&c| c == 0) {
        return Ok(input);
    }
    let noise = NoiseDistribution::new(&counts);
    let dim = cfg.dim;
    let mut output = vec![0.0f64; vocab_size * dim];
    let tokens: usize = corpus.iter().map(Vec::len).sum();
    let total_steps = (tokens * cfg.epochs).max(1) as f64;
    let mut step = 0usize;
    let mut grad = vec![0.0; dim];

    for _ in 0..cfg.epochs {
        for sentence in corpus {
            for (pos, &center) in sentence.iter().enumerate() {
                step += 1;
                if center == PAD {
                    continue;
                }
                let lr = cfg.learning_rate * (1.0 - step as f64 / total_steps).max(1e-4);
                let lo = pos.saturating_sub(cfg.window);
                let hi = (pos + cfg.window + 1).min(sentence.len());
                for (ctx_pos, &context) in sentence.iter().enumerate().take(hi).skip(lo) {
                    if ctx_pos == pos || context == PAD {
                        continue;
                    }
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    for k in 0..=cfg.negatives {
                        let (target, label) = if k == 0 {
                            (context, 1.0)
                        } else {
                            let t = noise.sample(&mut rng);
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let v_in = input.row(center);
                        let v_out = &mut output[target * dim..(target + 1) * dim];
                        let score: f64 = v_in.iter().zip(v_out.iter()).map(|(a, b)| a * b).sum();
                        let g = (label - sigmoid(score)) * lr;
                        for i in 0..dim {
                            grad[i] += g * v_out[i];
                            v_out[i] += g * v_in[i];
                        }
                    }
                    input.row_mut(center).iter_mut().zip(&grad).for_each(|(v, g)| *v += g);
                }
            }
        }
    }
    input.row_mut(PAD).fill(0.0);
    Ok(input)
}
