//! Ranking-list ingestion: canonical TSV, tokenisation, vocabulary,
//! word-vector pretraining, padding/batching and synthetic corpora.

mod batch;
mod embedding;
mod skipgram;
mod synth;
mod tokenize;
mod tsv;
mod vocab;

pub use batch::{make_batches, Batch, PaddedList, PaddedSeq, Pair};
pub use embedding::EmbeddingTable;
pub use skipgram::{pretrain_skipgram, SkipGramConfig};
pub use synth::{generate_synthetic, Signal, SynthConfig};
pub use tokenize::tokenize;
pub use tsv::{load_ranking_lists, read_ranking_lists, write_ranking_lists, TURN_SEPARATOR};
pub use vocab::{Vocabulary, PAD, UNK};

use serde::{Deserialize, Serialize};

/// Number of candidates per ranking list.
pub const LIST_SIZE: usize = 10;

/// Truncation limits applied to every list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limits {
    pub max_turns: usize,
    pub max_utterance_len: usize,
    pub max_candidate_len: usize,
    pub max_provenance_len: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_turns: 10,
            max_utterance_len: 90,
            max_candidate_len: 90,
            max_provenance_len: 30,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Candidate {
    pub text: Vec<String>,
    /// Title of the thread the response was taken from.
    pub provenance: Vec<String>,
}

/// One context with ten candidates, exactly one of them the true response.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankingList {
    /// Turns in chronological order, oldest first.
    pub context: Vec<Vec<String>>,
    pub candidates: Vec<Candidate>,
    pub positive: usize,
}

impl RankingList {
    /// Applies the turn and length limits: most recent turns, leading tokens.
    pub fn truncate(&mut self, limits: &Limits) {
        self.context.retain(|t| !t.is_empty());
        if self.context.len() > limits.max_turns {
            self.context.drain(..self.context.len() - limits.max_turns);
        }
        for turn in &mut self.context {
            turn.truncate(limits.max_utterance_len);
        }
        for c in &mut self.candidates {
            c.text.truncate(limits.max_candidate_len);
            c.provenance.truncate(limits.max_provenance_len);
        }
    }

    pub fn tokens(&self) -> impl Iterator<Item = &String> {
        self.context
            .iter()
            .flatten()
            .chain(self.candidates.iter().flat_map(|c| c.text.iter().chain(&c.provenance)))
    }
}

/// A ranking list mapped to token ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedList {
    pub context: Vec<Vec<usize>>,
    pub candidates: Vec<Vec<usize>>,
    pub provenances: Vec<Vec<usize>>,
    pub positive: usize,
}

/// One (context, candidate, provenance, label) ranking instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DialogueExample {
    pub context: Vec<Vec<usize>>,
    pub candidate: Vec<usize>,
    pub provenance: Vec<usize>,
    pub label: u8,
}

impl EncodedList {
    pub fn examples(&self) -> Vec<DialogueExample> {
        (0..self.candidates.len())
            .map(|k| DialogueExample {
                context: self.context.clone(),
                candidate: self.candidates[k].clone(),
                provenance: self.provenances[k].clone(),
                label: u8::from(k == self.positive),
            })
            .collect()
    }

    /// Context turns that contain at least one non-padding token.
    pub fn history_len(&self) -> usize {
        self.context
            .iter()
            .filter(|t| t.iter().any(|&id| id != PAD))
            .count()
    }
}

/// Encodes and pads raw lists for the model.
pub fn prepare_lists(lists: &[RankingList], vocab: &Vocabulary, limits: &Limits) -> crate::Result<Vec<PaddedList>> {
    lists
        .iter()
        .enumerate()
        .map(|(i, l)| {
            PaddedList::new(&vocab.encode(l), limits)
                .map_err(|e| crate::Error::Data(format!("list {i}: {e}")))
        })
        .collect()
}
