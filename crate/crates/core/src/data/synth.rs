//! Templated ranking lists with a controllable relevance signal.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Candidate, RankingList, LIST_SIZE};
use crate::error::{Error, Result};

/// Where the true candidate's relevance signal lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Signal {
    /// The positive's text repeats a context keyword.
    History,
    /// Only the positive's provenance title repeats a context keyword.
    Provenance,
    /// Text and title each carry one keyword; hard negatives match only one.
    Both,
}

impl Signal {
    pub fn as_str(self) -> &'static str {
        match self {
            Signal::History => "history",
            Signal::Provenance => "provenance",
            Signal::Both => "both",
        }
    }
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Signal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "history" => Ok(Signal::History),
            "provenance" => Ok(Signal::Provenance),
            "both" => Ok(Signal::Both),
            other => Err(Error::Config(format!(
                "unknown signal `{other}` (expected history, provenance or both)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub min_turns: usize,
    pub max_turns: usize,
    /// Inclusive token-count range for utterances and candidate texts.
    pub min_len: usize,
    pub max_len: usize,
    pub title_len: usize,
    pub filler_words: usize,
    pub title_words: usize,
    pub keywords: usize,
    /// Negatives sharing only the text keyword (`both` mode).
    pub text_decoys: usize,
    /// Negatives sharing only the title keyword (`both` mode).
    pub title_decoys: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            min_turns: 1,
            max_turns: 4,
            min_len: 4,
            max_len: 8,
            title_len: 4,
            filler_words: 60,
            title_words: 30,
            keywords: 24,
            text_decoys: 3,
            title_decoys: 3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(format!("synthetic corpus: {msg}")));
        if self.min_turns == 0 || self.min_turns > self.max_turns {
            return fail("turn range must satisfy 1 <= min_turns <= max_turns");
        }
        if self.min_len == 0 || self.min_len > self.max_len || self.title_len == 0 {
            return fail("lengths must be positive and min_len <= max_len");
        }
        if self.filler_words == 0 || self.title_words == 0 {
            return fail("filler and title word pools must be non-empty");
        }
        if self.keywords < 2 * LIST_SIZE {
            return fail("need at least 20 keywords so every candidate can get a distinct one");
        }
        if self.text_decoys + self.title_decoys > LIST_SIZE - 1 {
            return fail("decoys exceed the nine negatives");
        }
        Ok(())
    }
}

fn keyword(i: usize) -> String {
    format!("key{i}")
}

struct Sampler<'a> {
    cfg: &'a SynthConfig,
    rng: ChaCha8Rng,
}

impl Sampler<'_> {
    fn filler(&mut self, len: usize) -> Vec<String> {
        (0..len)
            .map(|_| format!("w{}", self.rng.gen_range(0..self.cfg.filler_words)))
            .collect()
    }

    fn text_len(&mut self) -> usize {
        self.rng.gen_range(self.cfg.min_len..=self.cfg.max_len)
    }

    /// Filler text with `word` placed at a random position.
    fn text_with(&mut self, word: String) -> Vec<String> {
        let len = self.text_len();
        let mut text = self.filler(len - 1);
        let at = self.rng.gen_range(0..len);
        text.insert(at, word);
        text
    }

    fn title_with(&mut self, word: String) -> Vec<String> {
        let mut title: Vec<String> = (0..self.cfg.title_len - 1)
            .map(|_| format!("t{}", self.rng.gen_range(0..self.cfg.title_words)))
            .collect();
        let at = self.rng.gen_range(0..self.cfg.title_len);
        title.insert(at, word);
        title
    }

    /// `n` distinct keyword ids avoiding `exclude`.
    fn keywords(&mut self, n: usize, exclude: &[usize]) -> Vec<usize> {
        let pool: Vec<usize> = (0..self.cfg.keywords).filter(|k| !exclude.contains(k)).collect();
        pool.choose_multiple(&mut self.rng, n).copied().collect()
    }

    fn context(&mut self, keys: &[usize]) -> Vec<Vec<String>> {
        let turns = self.rng.gen_range(self.cfg.min_turns..=self.cfg.max_turns);
        let mut context: Vec<Vec<String>> = (0..turns)
            .map(|_| {
                let len = self.text_len();
                self.filler(len)
            })
            .collect();
        for &k in keys {
            let turn = self.rng.gen_range(0..turns);
            let at = self.rng.gen_range(0..=context[turn].len());
            context[turn].insert(at, keyword(k));
        }
        context
    }

    fn list(&mut self, signal: Signal) -> RankingList {
        // Every candidate gets its own keyword in text and in title so that
        // both fields look alike across the list; only the relevant ones
        // repeat the context keyword.
        let (text_key, title_key, context_keys) = match signal {
            Signal::History => {
                let k = self.keywords(1, &[])[0];
                (Some(k), None, vec![k])
            }
            Signal::Provenance => {
                let k = self.keywords(1, &[])[0];
                (None, Some(k), vec![k])
            }
            Signal::Both => {
                let ks = self.keywords(2, &[]);
                (Some(ks[0]), Some(ks[1]), ks)
            }
        };
        let mut texts = self.keywords(LIST_SIZE, &context_keys);
        let mut titles = self.keywords(LIST_SIZE, &context_keys);
        // Slot 0 is the positive until the final shuffle.
        if let Some(k) = text_key {
            texts[0] = k;
        }
        if let Some(k) = title_key {
            titles[0] = k;
        }
        if signal == Signal::Both {
            let (a, b) = (self.cfg.text_decoys, self.cfg.title_decoys);
            texts[1..=a].fill(text_key.unwrap());
            titles[1 + a..=a + b].fill(title_key.unwrap());
        }
        let context = self.context(&context_keys);
        let mut candidates: Vec<(bool, Candidate)> = texts
            .into_iter()
            .zip(titles)
            .enumerate()
            .map(|(i, (t, p))| {
                (
                    i == 0,
                    Candidate {
                        text: self.text_with(keyword(t)),
                        provenance: self.title_with(keyword(p)),
                    },
                )
            })
            .collect();
        candidates.shuffle(&mut self.rng);
        let positive = candidates.iter().position(|(p, _)| *p).unwrap();
        RankingList {
            context,
            candidates: candidates.into_iter().map(|(_, c)| c).collect(),
            positive,
        }
    }
}

/// Generates `num_lists` lists; identical arguments give identical corpora.
pub fn generate_synthetic(
    num_lists: usize,
    signal: Signal,
    seed: u64,
    cfg: &SynthConfig,
) -> Result<Vec<RankingList>> {
    if num_lists == 0 {
        return Err(Error::Config("synthetic corpus size must be positive".into()));
    }
    cfg.validate()?;
    let mut sampler = Sampler {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    Ok((0..num_lists).map(|_| sampler.list(signal)).collect())
}
