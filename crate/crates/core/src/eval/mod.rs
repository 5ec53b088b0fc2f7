//! Ranking metrics, the non-optimal-rate breakdown and paired significance tests.

mod metrics;
mod report;
mod ttest;

pub use metrics::{
    average_precision, mean_average_precision, non_optimal_rate_by_length, rank_of_true, recall_at_k,
    BucketRate, ScoredList,
};
pub use report::{read_scores, score_lists, write_scores, MetricsReport};
pub use ttest::{paired_t_test, TTest};

#[cfg(test)]
mod tests;
