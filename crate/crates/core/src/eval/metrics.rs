use std::collections::BTreeMap;

/// Model scores for one ranking list.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredList {
    pub id: usize,
    /// Number of context turns fed to the model.
    pub history_len: usize,
    pub scores: Vec<f64>,
    pub positive: usize,
}

impl ScoredList {
    pub fn rank(&self) -> usize {
        rank_of_true(&self.scores, self.positive)
    }
}

/// 1-based rank of `scores[true_idx]` under descending score. Candidates with
/// an equal score and a smaller index rank ahead of it.
pub fn rank_of_true(scores: &[f64], true_idx: usize) -> usize {
    let t = scores[true_idx];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > t || (s == t && j < true_idx))
        .count()
}

/// Fraction of lists whose true response ranks within the top `k`.
pub fn recall_at_k(lists: &[ScoredList], k: usize) -> f64 {
    if lists.is_empty() {
        return 0.0;
    }
    lists.iter().filter(|l| l.rank() <= k).count() as f64 / lists.len() as f64
}

/// Average precision of one ranking with any number of relevant items,
/// ordered by descending score with ties going to the lower index.
pub fn average_precision(scores: &[f64], relevant: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let total = relevant.iter().filter(|&&r| r).count();
    if total == 0 {
        return 0.0;
    }
    let mut hits = 0;
    let mut sum = 0.0;
    for (pos, &idx) in order.iter().enumerate() {
        if relevant[idx] {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    sum / total as f64
}

/// Mean of per-list average precision. With one relevant item per list this
/// equals the mean reciprocal rank.
pub fn mean_average_precision(lists: &[ScoredList]) -> f64 {
    if lists.is_empty() {
        return 0.0;
    }
    let total: f64 = lists
        .iter()
        .map(|l| {
            let relevant: Vec<bool> = (0..l.scores.len()).map(|k| k == l.positive).collect();
            average_precision(&l.scores, &relevant)
        })
        .sum();
    total / lists.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BucketRate {
    pub length: usize,
    pub rate: f64,
    pub count: usize,
}

/// Share of lists whose true response is not ranked first, per history length.
/// Lengths with no lists are omitted.
pub fn non_optimal_rate_by_length(lists: &[ScoredList]) -> Vec<BucketRate> {
    let mut buckets: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for l in lists {
        let e = buckets.entry(l.history_len).or_default();
        e.0 += usize::from(l.rank() > 1);
        e.1 += 1;
    }
    buckets
        .into_iter()
        .map(|(length, (miss, count))| BucketRate {
            length,
            rate: miss as f64 / count as f64,
            count,
        })
        .collect()
}
