use proptest::prelude::*;
use sigma_core::eval::{grouped_report, hr_at_k, mrr_at_k, ndcg_at_k, rank_target, RankedPrediction, OVERALL};
use sigma_core::{Group, Metric};

/// Five users over an eight-item catalog.
fn fixture() -> Vec<(Vec<f64>, usize)> {
    vec![
        (vec![9.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0], 0), // rank 1
        (vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0], 5), // rank 3
        (vec![5.0; 8], 4),                                 // rank 5: four ties at lower indices
        (vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0], 0), // rank 2
        (vec![8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0], 7), // rank 8
    ]
}

#[test]
fn fixture_by_hand() {
    let ranks: Vec<usize> = fixture().iter().map(|(s, t)| rank_target(s, *t)).collect();
    assert_eq!(ranks, [1, 3, 5, 2, 8]);
    assert_eq!(hr_at_k(&ranks, 10), 1.0);
    assert_eq!(hr_at_k(&ranks, 4), 0.6);
    let ndcg = (1.0 + 0.5 + 1.0 / 6f64.log2() + 1.0 / 3f64.log2() + 1.0 / 9f64.log2()) / 5.0;
    assert!((ndcg_at_k(&ranks, 10) - ndcg).abs() < 1e-15);
    let mrr = (1.0 + 1.0 / 3.0 + 0.2 + 0.5 + 0.125) / 5.0;
    assert!((mrr_at_k(&ranks, 10) - mrr).abs() < 1e-15);
    assert_eq!(ndcg_at_k(&[3], 10), 0.5);
    assert_eq!(mrr_at_k(&[2, 4], 10), 0.375);
}

#[test]
fn three_groups_by_hand() {
    let preds = [
        RankedPrediction { user: 0, rank: 1 },
        RankedPrediction { user: 1, rank: 2 },
        RankedPrediction { user: 2, rank: 12 },
    ];
    let groups = [Group::Short, Group::Medium, Group::Long];
    let r = grouped_report(&preds, &groups, &[10]);
    assert_eq!(r.get(Metric::Hr, 10, "short"), Some(1.0));
    assert_eq!(r.get(Metric::Mrr, 10, "medium"), Some(0.5));
    assert_eq!(r.get(Metric::Ndcg, 10, "long"), Some(0.0));
    assert!((r.get(Metric::Hr, 10, OVERALL).unwrap() - 2.0 / 3.0).abs() < 1e-15);
}

fn groups_for(n: usize, seed: u64) -> Vec<Group> {
    (0..n).map(|u| Group::ALL[(u as u64 * 7 + seed) as usize % 3]).collect()
}

proptest! {
    #[test]
    fn overall_is_weighted_mean_of_groups(ranks in proptest::collection::vec(0usize..15, 1..40), seed in 0u64..3) {
        let preds: Vec<RankedPrediction> = ranks.iter().enumerate().map(|(user, &rank)| RankedPrediction { user, rank }).collect();
        let groups = groups_for(ranks.len(), seed);
        let r = grouped_report(&preds, &groups, &[5, 10]);
        for m in Metric::ALL {
            for k in [5, 10] {
                let weighted: f64 = Group::ALL
                    .iter()
                    .map(|g| r.get(m, k, g.label()).unwrap() * r.users(g.label()) as f64)
                    .sum();
                prop_assert!((weighted / ranks.len() as f64 - r.get(m, k, OVERALL).unwrap()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn metric_ordering_and_monotonicity(rank in 1usize..30, better in 1usize..30) {
        let (h, n, m) = (hr_at_k(&[rank], 10), ndcg_at_k(&[rank], 10), mrr_at_k(&[rank], 10));
        prop_assert!(h >= n && n >= m);
        let improved = better.min(rank);
        prop_assert!(hr_at_k(&[improved], 10) >= h);
        prop_assert!(ndcg_at_k(&[improved], 10) >= n);
        prop_assert!(mrr_at_k(&[improved], 10) >= m);
    }

    #[test]
    fn rank_matches_full_sort(scores in proptest::collection::vec(-3i32..3, 1..=8), pick in 0usize..8, shift in -5i32..5) {
        let target = pick % scores.len();
        let s: Vec<f64> = scores.iter().map(|&x| f64::from(x)).collect();
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
        let sorted_rank = order.iter().position(|&j| j == target).unwrap() + 1;
        prop_assert_eq!(rank_target(&s, target), sorted_rank);
        let shifted: Vec<f64> = s.iter().map(|x| x + f64::from(shift)).collect();
        prop_assert_eq!(rank_target(&shifted, target), sorted_rank);
    }
}
