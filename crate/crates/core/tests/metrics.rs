mod common;

use common::*;
use fairrec::data::{FrozenCandidates, SplitKind, UserCandidates};
use fairrec::eval::{auc_binary, auc_binary_raw, auc_macro, evaluate_ranking, hit_at, ndcg_at, rank_of_first};
use fairrec::numcore::{Matrix, Rng};
use proptest::prelude::*;

/// Scores drawn from a small grid so that ties are common.
fn tied_scores(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| rng.below(7) as f64 * 0.25).collect()
}

#[test]
pub fn ranking_metrics_match_sort_oracle() {
    let mut rng = Rng::new(21, 0);
    for _ in 0..1000 {
        let n = 1 + rng.index(200);
        let scores = if rng.bernoulli(0.5) { tied_scores(n, &mut rng) } else { (0..n).map(|_| rng.standard_normal()).collect() };
        let rank = rank_of_first(&scores).unwrap();
        assert_eq!(rank, sorted_rank(&scores));
        let cutoff = 1 + rng.index(20);
        assert!((ndcg_at(rank, cutoff) - sorted_ndcg(&scores, cutoff)).abs() < 1e-12);
        assert_eq!(hit_at(rank, cutoff), (sorted_rank(&scores) <= cutoff) as u8 as f64);
    }
}

#[test]
pub fn auc_matches_pair_enumeration_exactly() {
    let mut rng = Rng::new(22, 0);
    for _ in 0..1000 {
        let n = 2 + rng.index(199);
        let rate = 0.3 + 0.4 * rng.uniform();
        let mut positive: Vec<bool> = (0..n).map(|_| rng.bernoulli(rate)).collect();
        positive[0] = true;
        positive[1] = false;
        let scores = if rng.bernoulli(0.5) { tied_scores(n, &mut rng) } else { (0..n).map(|_| rng.standard_normal()).collect() };
        assert_eq!(auc_binary(&scores, &positive).unwrap(), brute_auc(&scores, &positive));

        // two-class macro AUC on softmax-like rows is the binary AUC of p1
        let probs: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + (-s).exp())).collect();
        let rows: Vec<Vec<f64>> = probs.iter().map(|&p| vec![1.0 - p, p]).collect();
        let labels: Vec<u32> = positive.iter().map(|&p| p as u32).collect();
        let m = auc_macro(&Matrix::from_rows(&rows).unwrap(), &labels, 2).unwrap();
        assert_eq!(m.auc, auc_binary(&probs, &positive).unwrap());
    }
}

#[test]
pub fn macro_auc_three_class_enumeration() {
    // 6 hand-fixed probability rows, two users per class
    let rows = vec![
        vec![0.7, 0.2, 0.1],
        vec![0.5, 0.3, 0.2],
        vec![0.2, 0.6, 0.2],
        vec![0.4, 0.4, 0.2],
        vec![0.1, 0.3, 0.6],
        vec![0.3, 0.2, 0.5],
    ];
    let labels = [0u32, 0, 1, 1, 2, 2];
    let m = auc_macro(&Matrix::from_rows(&rows).unwrap(), &labels, 3).unwrap();
    // pair (0,1) by p1: class-1 {0.6, 0.4} vs class-0 {0.2, 0.3} -> 4/4
    // pair (0,2) by p2: {0.6, 0.5} vs {0.1, 0.2} -> 4/4
    // pair (1,2) by p2: {0.6, 0.5} vs {0.2, 0.2} -> 4/4
    assert_eq!(m.pairs.iter().map(|p| p.auc).collect::<Vec<_>>(), vec![1.0, 1.0, 1.0]);
    let rows = vec![
        vec![0.3, 0.3, 0.4],
        vec![0.2, 0.5, 0.3],
        vec![0.2, 0.2, 0.6],
        vec![0.6, 0.3, 0.1],
        vec![0.3, 0.4, 0.3],
        vec![0.1, 0.2, 0.7],
    ];
    let m = auc_macro(&Matrix::from_rows(&rows).unwrap(), &labels, 3).unwrap();
    let mut expected = Vec::new();
    for (a, b) in [(0u32, 1u32), (0, 2), (1, 2)] {
        let idx: Vec<usize> = (0..6).filter(|&i| labels[i] == a || labels[i] == b).collect();
        let s: Vec<f64> = idx.iter().map(|&i| rows[i][b as usize]).collect();
        let p: Vec<bool> = idx.iter().map(|&i| labels[i] == b).collect();
        expected.push(brute_auc(&s, &p));
    }
    // (0,1) by p1: class 1 {0.2, 0.3} vs class 0 {0.3, 0.5}: one tie of four -> 0.125, folded 0.875
    assert_eq!(expected[0], 0.875);
    assert_eq!(m.pairs.iter().map(|p| p.auc).collect::<Vec<_>>(), expected);
    assert_eq!(m.auc, expected.iter().sum::<f64>() / 3.0);
}

#[test]
pub fn seven_user_hit_rate_by_hand() {
    // ranks 1, 2, 3, 4, 5, 6, 101 at N = 3: hits 3/7
    let ranks = [1usize, 2, 3, 4, 5, 6, 101];
    let hits: f64 = ranks.iter().map(|&r| hit_at(r, 3)).sum();
    assert_eq!(hits / 7.0, 3.0 / 7.0);
}

fn candidates(n_users: usize) -> FrozenCandidates {
    FrozenCandidates {
        kind: SplitKind::Test,
        n_negatives: 100,
        users: (0..n_users as u32)
            .map(|u| UserCandidates {
                user: u,
                positives: vec![1000 + u],
                negatives: (0..100).collect(),
                shortfall: 0,
            })
            .collect(),
    }
}

#[test]
pub fn constant_and_oracle_scorers() {
    let c = candidates(5);
    let flat = evaluate_ranking(&c, 5, |_, items| Ok(vec![0.0f64; items.len()])).unwrap();
    assert_eq!((flat.ndcg, flat.hit), (0.0, 0.0));
    let oracle = evaluate_ranking(&c, 5, |_, items| Ok(items.iter().map(|&i| if i >= 1000 { f64::MAX } else { 0.0 }).collect())).unwrap();
    assert_eq!((oracle.ndcg, oracle.hit), (1.0, 1.0));
}

proptest! {
    #[test]
    fn ndcg_and_hit_non_increasing(n in 1usize..30, r in 1usize..200) {
        prop_assert!(ndcg_at(r + 1, n) <= ndcg_at(r, n));
        prop_assert!(hit_at(r + 1, n) <= hit_at(r, n));
    }

    #[test]
    fn auc_invariant_under_increasing_transform(
        scores in prop::collection::vec(-5.0f64..5.0, 4..60),
        seed in any::<u64>(),
    ) {
        let mut rng = Rng::new(seed, 0);
        let mut positive: Vec<bool> = scores.iter().map(|_| rng.bernoulli(0.5)).collect();
        positive[0] = true;
        positive[1] = false;
        let transformed: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 3.0).collect();
        prop_assert_eq!(auc_binary(&scores, &positive).unwrap(), auc_binary(&transformed, &positive).unwrap());
    }

    #[test]
    fn folded_auc_in_range(scores in prop::collection::vec(-1.0f64..1.0, 2..40), seed in any::<u64>()) {
        let mut rng = Rng::new(seed, 1);
        let mut positive: Vec<bool> = scores.iter().map(|_| rng.bernoulli(0.5)).collect();
        positive[0] = true;
        positive[1] = false;
        let a = auc_binary(&scores, &positive).unwrap();
        let raw = auc_binary_raw(&scores, &positive).unwrap();
        prop_assert!((0.5..=1.0).contains(&a));
        prop_assert_eq!(a, raw.max(1.0 - raw));
    }
}
