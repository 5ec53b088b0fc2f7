use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn list(scores: Vec<f64>, positive: usize, history_len: usize) -> ScoredList {
    ScoredList {
        id: 0,
        history_len,
        scores,
        positive,
    }
}

fn with_rank(rank: usize, history_len: usize) -> ScoredList {
    // Candidate k scores 10 - k; the true response sits at index rank - 1.
    list((0..10).map(|k| 10.0 - k as f64).collect(), rank - 1, history_len)
}

fn random_lists(n: usize, seed: u64) -> Vec<ScoredList> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|id| ScoredList {
            id,
            history_len: rng.gen_range(1..=10),
            // Coarse scores so that ties occur.
            scores: (0..10).map(|_| rng.gen_range(0..6) as f64 / 2.0).collect(),
            positive: rng.gen_range(0..10),
        })
        .collect()
}

/// Position of the true index after a full sort by (score desc, index asc).
fn sorted_rank(scores: &[f64], t: usize) -> usize {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    order.iter().position(|&i| i == t).unwrap() + 1
}

#[test]
fn rank_examples() {
    let mut s = vec![0.0; 10];
    s[3] = 1.0;
    assert_eq!(rank_of_true(&s, 3), 1);
    let flat = vec![0.5; 10];
    assert_eq!(rank_of_true(&flat, 0), 1);
    assert_eq!(rank_of_true(&flat, 9), 10);
}

#[test]
fn rank_matches_sort_oracle() {
    for l in random_lists(1000, 1) {
        assert_eq!(l.rank(), sorted_rank(&l.scores, l.positive));
    }
}

#[test]
fn recall_examples() {
    let lists = vec![with_rank(1, 2), with_rank(3, 2)];
    assert_eq!(recall_at_k(&lists, 1), 0.5);
    assert_eq!(recall_at_k(&lists, 2), 0.5);
    assert_eq!(recall_at_k(&lists, 5), 1.0);
    let perfect: Vec<_> = (0..4).map(|_| with_rank(1, 1)).collect();
    for k in [1, 2, 5] {
        assert_eq!(recall_at_k(&perfect, k), 1.0);
    }
}

#[test]
fn recall_matches_brute_force_count() {
    let lists = random_lists(1000, 2);
    for k in [1, 2, 5] {
        let mut hits = 0usize;
        for l in &lists {
            if sorted_rank(&l.scores, l.positive) <= k {
                hits += 1;
            }
        }
        assert_eq!(recall_at_k(&lists, k), hits as f64 / 1000.0);
    }
}

#[test]
fn map_examples() {
    let lists = vec![with_rank(1, 1), with_rank(2, 1), with_rank(4, 1)];
    assert!((mean_average_precision(&lists) - 1.75 / 3.0).abs() < 1e-15);
    assert_eq!(mean_average_precision(&[with_rank(1, 1), with_rank(1, 3)]), 1.0);
}

#[test]
fn map_equals_mean_reciprocal_rank() {
    let lists = random_lists(1000, 3);
    let mrr = lists.iter().map(|l| 1.0 / sorted_rank(&l.scores, l.positive) as f64).sum::<f64>() / 1000.0;
    assert!((mean_average_precision(&lists) - mrr).abs() < 1e-12);
}

#[test]
fn average_precision_with_several_relevant_items() {
    // Order: 0, 1, 2, 3; relevant at ranks 1 and 3.
    let ap = average_precision(&[4.0, 3.0, 2.0, 1.0], &[true, false, true, false]);
    assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
}

#[test]
fn non_optimal_examples() {
    let lists = vec![with_rank(1, 4), with_rank(2, 4), with_rank(1, 7)];
    let rates = non_optimal_rate_by_length(&lists);
    assert_eq!(
        rates,
        vec![
            BucketRate { length: 4, rate: 0.5, count: 2 },
            BucketRate { length: 7, rate: 0.0, count: 1 },
        ]
    );
}

#[test]
fn partition_identity_holds() {
    let lists = random_lists(1000, 4);
    let rates = non_optimal_rate_by_length(&lists);
    let misses: f64 = rates.iter().map(|b| b.rate * b.count as f64).sum();
    let total: usize = rates.iter().map(|b| b.count).sum();
    assert_eq!(total, 1000);
    assert!((misses / total as f64 - (1.0 - recall_at_k(&lists, 1))).abs() < 1e-12);
}

#[test]
fn metric_bounds() {
    let worst: Vec<_> = (0..5).map(|_| with_rank(10, 1)).collect();
    assert!((mean_average_precision(&worst) - 0.1).abs() < 1e-15);
    let lists = random_lists(200, 5);
    let map = mean_average_precision(&lists);
    assert!((0.1..=1.0).contains(&map));
    let r: Vec<f64> = (1..=10).map(|k| recall_at_k(&lists, k)).collect();
    assert!(r.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(r[9], 1.0);
}

#[test]
fn t_test_degenerate_cases() {
    let a = [0.3, 0.7, 0.1, 0.9];
    let same = paired_t_test(&a, &a).unwrap();
    assert_eq!((same.t, same.p), (0.0, 1.0));
    let b = [0.2, 0.4, 0.6, 0.8, 1.0];
    let shifted: Vec<f64> = b.iter().map(|x| x + 0.1).collect();
    let r = paired_t_test(&shifted, &b).unwrap();
    assert_eq!(r.t, f64::INFINITY);
    assert_eq!(r.p, 0.0);
    assert!(paired_t_test(&[1.0], &[2.0]).is_err());
    assert!(paired_t_test(&[1.0, 2.0], &[2.0]).is_err());
}

/// Gamma at a positive multiple of 1/2.
fn gamma_half(x2: u32) -> f64 {
    let (mut x, mut g) = if x2.is_multiple_of(2) { (1.0, 1.0) } else { (0.5, std::f64::consts::PI.sqrt()) };
    while x < x2 as f64 / 2.0 {
        g *= x;
        x += 1.0;
    }
    g
}

/// Two-sided p-value by Simpson integration of the t density over [0, |t|].
fn t_pvalue_oracle(t: f64, dof: u32) -> f64 {
    let nu = dof as f64;
    let c = gamma_half(dof + 1) / ((nu * std::f64::consts::PI).sqrt() * gamma_half(dof));
    let pdf = |x: f64| c * (1.0 + x * x / nu).powf(-(nu + 1.0) / 2.0);
    let n = 20_000;
    let h = t.abs() / n as f64;
    let mut sum = pdf(0.0) + pdf(t.abs());
    for i in 1..n {
        sum += pdf(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    1.0 - 2.0 * sum * h / 3.0
}

#[test]
fn t_test_matches_textbook_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..5 {
        let a: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..1.0)).collect();
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let mean = d.iter().sum::<f64>() / 10.0;
        let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 9.0).sqrt();
        let t = mean / (sd / 10f64.sqrt());
        let r = paired_t_test(&a, &b).unwrap();
        assert!((r.t - t).abs() < 1e-12);
        assert!((r.p - t_pvalue_oracle(t, 9)).abs() < 1e-6, "{} vs {}", r.p, t_pvalue_oracle(t, 9));
    }
}

#[test]
fn report_formats() {
    let lists = vec![with_rank(1, 2), with_rank(3, 2), with_rank(1, 5)];
    let r = MetricsReport::new(&lists);
    assert_eq!(r.lists, 3);
    assert!(r.table().contains("R10@1"));
    let records = r.records();
    assert!(records.starts_with("kind=summary lists=3 r10_1=0.6666666666666666 "));
    assert_eq!(records.lines().count(), 3);
    assert_eq!(r.non_optimal_csv(), "length,rate,count\n2,0.5,2\n5,0,1\n");
}

#[test]
fn perfect_scores_give_perfect_metrics() {
    let lists: Vec<_> = (0..20)
        .map(|i| {
            let mut s = vec![0.0; 10];
            s[i % 10] = 1.0;
            list(s, i % 10, 1 + i % 3)
        })
        .collect();
    let r = MetricsReport::new(&lists);
    assert_eq!((r.r10_1, r.r10_2, r.r10_5, r.map), (1.0, 1.0, 1.0, 1.0));
    assert!(r.non_optimal.iter().all(|b| b.rate == 0.0));
}

#[test]
fn scores_file_round_trips() {
    let lists = random_lists(7, 9);
    let mut buf = Vec::new();
    write_scores(&mut buf, &lists).unwrap();
    assert_eq!(read_scores(&buf[..]).unwrap(), lists);
    assert!(read_scores("h\n1\t2\t12\t0.5\n".as_bytes()).is_err());
}

proptest! {
    #[test]
    fn monotone_transforms_keep_ranks(
        scores in proptest::collection::vec(-5.0f64..5.0, 10),
        t in 0usize..10,
        a in 0.1f64..10.0,
        b in -3.0f64..3.0,
    ) {
        let moved: Vec<f64> = scores.iter().map(|s| (a * s + b).exp()).collect();
        prop_assert_eq!(rank_of_true(&scores, t), rank_of_true(&moved, t));
    }
}
