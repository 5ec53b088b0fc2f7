use std::fmt::Write as _;
use std::io::{BufRead, Write};

use super::{mean_average_precision, non_optimal_rate_by_length, recall_at_k, BucketRate, ScoredList};
use crate::data::PaddedList;
use crate::error::{Error, Result};
use crate::model::RankingModel;
use crate::tensor::Scalar;

/// Scores every list with `model`; ids are positions in `lists`.
pub fn score_lists<S: Scalar>(model: &RankingModel<S>, lists: &[PaddedList]) -> Result<Vec<ScoredList>> {
    lists
        .iter()
        .enumerate()
        .map(|(id, l)| {
            Ok(ScoredList {
                id,
                history_len: l.history_len(),
                scores: model.scores(l)?,
                positive: l.positive,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub lists: usize,
    pub r10_1: f64,
    pub r10_2: f64,
    pub r10_5: f64,
    pub map: f64,
    pub non_optimal: Vec<BucketRate>,
}

impl MetricsReport {
    pub fn new(lists: &[ScoredList]) -> Self {
        MetricsReport {
            lists: lists.len(),
            r10_1: recall_at_k(lists, 1),
            r10_2: recall_at_k(lists, 2),
            r10_5: recall_at_k(lists, 5),
            map: mean_average_precision(lists),
            non_optimal: non_optimal_rate_by_length(lists),
        }
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<8} {:>8} {:>8} {:>8} {:>8}", "lists", "R10@1", "R10@2", "R10@5", "MAP");
        let _ = writeln!(
            s,
            "{:<8} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            self.lists, self.r10_1, self.r10_2, self.r10_5, self.map
        );
        let _ = writeln!(s, "\n{:<8} {:>14} {:>8}", "turns", "non-optimal", "lists");
        for b in &self.non_optimal {
            let _ = writeln!(s, "{:<8} {:>14.4} {:>8}", b.length, b.rate, b.count);
        }
        s
    }

    /// One `key=value` record per line.
    pub fn records(&self) -> String {
        let mut s = format!(
            "kind=summary lists={} r10_1={} r10_2={} r10_5={} map={}\n",
            self.lists, self.r10_1, self.r10_2, self.r10_5, self.map
        );
        for b in &self.non_optimal {
            let _ = writeln!(s, "kind=non_optimal length={} rate={} count={}", b.length, b.rate, b.count);
        }
        s
    }

    pub fn non_optimal_csv(&self) -> String {
        let mut s = String::from("length,rate,count\n");
        for b in &self.non_optimal {
            let _ = writeln!(s, "{},{},{}", b.length, b.rate, b.count);
        }
        s
    }
}

/// Tab-separated `id history_len positive score_0 .. score_n` rows with a header.
pub fn write_scores(mut w: impl Write, lists: &[ScoredList]) -> Result<()> {
    writeln!(w, "id\thistory_len\tpositive\tscores")?;
    for l in lists {
        write!(w, "{}\t{}\t{}", l.id, l.history_len, l.positive)?;
        for s in &l.scores {
            write!(w, "\t{s}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_scores(r: impl BufRead) -> Result<Vec<ScoredList>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 || line.is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Data(format!("scores line {}: {what}", i + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 4 {
            return Err(bad("expected id, history length, positive and scores"));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad(&format!("bad integer `{s}`")));
        let scores = fields[3..]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| bad(&format!("bad score `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        let positive = int(fields[2])?;
        if positive >= scores.len() {
            return Err(bad("positive index out of range"));
        }
        out.push(ScoredList {
            id: int(fields[0])?,
            history_len: int(fields[1])?,
            scores,
            positive,
        });
    }
    Ok(out)
}
