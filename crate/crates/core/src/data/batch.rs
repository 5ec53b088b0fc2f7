use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EncodedList, Limits, LIST_SIZE, PAD};
use crate::error::{Error, Result};

/// A token-id sequence padded with [`PAD`] to a fixed length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaddedSeq {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
}

impl PaddedSeq {
    /// Trailing padding is stripped first so already-padded input pads identically.
    fn new(tokens: &[usize], width: usize) -> Self {
        let real = tokens.iter().rposition(|&t| t != PAD).map_or(0, |p| p + 1);
        let kept = real.min(width);
        let mut ids = tokens[..kept].to_vec();
        ids.resize(width, PAD);
        let mask = (0..width).map(|i| i < kept).collect();
        PaddedSeq { ids, mask }
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One ranking list padded to the configured field widths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaddedList {
    /// `max_turns` rows; real turns first, in chronological order.
    pub context: Vec<PaddedSeq>,
    pub turn_mask: Vec<bool>,
    pub candidates: Vec<PaddedSeq>,
    pub provenances: Vec<PaddedSeq>,
    pub positive: usize,
}

impl PaddedList {
    /// Turns made only of padding are dropped before the turn limit applies.
    pub fn new(list: &EncodedList, limits: &Limits) -> Result<Self> {
        if list.candidates.len() != LIST_SIZE || list.provenances.len() != LIST_SIZE {
            return Err(Error::Data(format!(
                "ranking list has {} candidates and {} provenances, expected {LIST_SIZE}",
                list.candidates.len(),
                list.provenances.len()
            )));
        }
        if list.positive >= LIST_SIZE {
            return Err(Error::Data(format!("positive index {} out of range", list.positive)));
        }
        let turns: Vec<&Vec<usize>> = list
            .context
            .iter()
            .filter(|t| t.iter().any(|&id| id != PAD))
            .collect();
        if turns.is_empty() {
            return Err(Error::Data("ranking list has an empty context".into()));
        }
        let recent = &turns[turns.len().saturating_sub(limits.max_turns)..];
        let mut context: Vec<PaddedSeq> = recent
            .iter()
            .map(|t| PaddedSeq::new(t, limits.max_utterance_len))
            .collect();
        let turn_mask = (0..limits.max_turns).map(|i| i < context.len()).collect();
        context.resize(limits.max_turns, PaddedSeq::new(&[], limits.max_utterance_len));
        Ok(PaddedList {
            context,
            turn_mask,
            candidates: list
                .candidates
                .iter()
                .map(|c| PaddedSeq::new(c, limits.max_candidate_len))
                .collect(),
            provenances: list
                .provenances
                .iter()
                .map(|p| PaddedSeq::new(p, limits.max_provenance_len))
                .collect(),
            positive: list.positive,
        })
    }

    /// Number of real context turns fed to the model.
    pub fn history_len(&self) -> usize {
        self.turn_mask.iter().filter(|&&m| m).count()
    }

    pub fn real_turns(&self) -> &[PaddedSeq] {
        &self.context[..self.history_len()]
    }

    /// The nine (positive, negative) candidate index pairs.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.candidates.len())
            .filter(move |&k| k != self.positive)
            .map(move |k| (self.positive, k))
    }
}

/// A training pair: candidates `pos` and `neg` of list `list`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pair {
    pub list: usize,
    pub pos: usize,
    pub neg: usize,
}

/// Whole lists grouped so that the pair count stays within the batch size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    /// Indices into the list slice passed to [`make_batches`].
    pub lists: Vec<usize>,
    pub pairs: Vec<Pair>,
}

/// Shuffles lists with a seeded RNG and packs their pairs into batches of at
/// most `batch_size` pairs (at least one list per batch).
pub fn make_batches(lists: &[PaddedList], batch_size: usize, seed: u64) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..lists.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let per_batch = (batch_size / (LIST_SIZE - 1)).max(1);
    order
        .chunks(per_batch)
        .map(|chunk| Batch {
            lists: chunk.to_vec(),
            pairs: chunk
                .iter()
                .flat_map(|&l| lists[l].pairs().map(move |(pos, neg)| Pair { list: l, pos, neg }))
                .collect(),
        })
        .collect()
}
