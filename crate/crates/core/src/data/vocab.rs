use std::collections::HashMap;

use super::{EncodedList, RankingList};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Token ↔ id map with `0 = <pad>` and `1 = <unk>` reserved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    /// Counts tokens over all lists and keeps those seen at least `min_count`
    /// times, ordered by descending frequency then lexicographically.
    pub fn build<'a>(lists: impl IntoIterator<Item = &'a RankingList>, min_count: usize) -> Result<Self> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for list in lists {
            for tok in list.tokens() {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        Self::from_counts(counts, min_count)
    }

    pub fn from_counts(counts: HashMap<&str, usize>, min_count: usize) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_count.max(1) && t != PAD_TOKEN && t != UNK_TOKEN)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens = [PAD_TOKEN, UNK_TOKEN]
            .into_iter()
            .chain(kept.into_iter().map(|(t, _)| t))
            .map(str::to_string)
            .collect();
        Ok(Self::from_tokens(tokens))
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode_tokens(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn encode(&self, list: &RankingList) -> EncodedList {
        EncodedList {
            context: list.context.iter().map(|t| self.encode_tokens(t)).collect(),
            candidates: list.candidates.iter().map(|c| self.encode_tokens(&c.text)).collect(),
            provenances: list
                .candidates
                .iter()
                .map(|c| self.encode_tokens(&c.provenance))
                .collect(),
            positive: list.positive,
        }
    }
}
