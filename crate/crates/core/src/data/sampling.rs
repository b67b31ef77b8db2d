use std::collections::HashSet;

use crate::data::{Dataset, Mask, Split, SplitKind};
use crate::error::{Error, Result};
use crate::numcore::Rng;

/// Uniform item the user never interacted with in any split.
pub fn sample_train_negative(dataset: &Dataset, user: u32, rng: &mut Rng) -> Result<u32> {
    let seen = dataset.user_items(user);
    let n_items = dataset.n_items();
    let available = n_items - seen.len();
    if available == 0 {
        return Err(Error::Data(format!("user {user} interacted with every item")));
    }
    if seen.len() * 2 <= n_items {
        loop {
            let item = rng.below(n_items as u64) as u32;
            if seen.binary_search(&item).is_err() {
                return Ok(item);
            }
        }
    }
    // Dense users: pick the k-th non-interacted item directly.
    let mut k = rng.below(available as u64) as u32;
    let mut item = 0u32;
    for &s in seen {
        if item + k < s {
            break;
        }
        k -= s - item;
        item = s + 1;
    }
    Ok(item + k)
}

/// A held-out positive followed by distinct sampled negatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateList {
    pub items: Vec<u32>,
    /// Requested negatives that could not be drawn.
    pub shortfall: usize,
}

impl CandidateList {
    pub fn positive(&self) -> u32 {
        self.items[0]
    }

    pub fn negatives(&self) -> &[u32] {
        &self.items[1..]
    }
}

fn sample_negatives(dataset: &Dataset, user: u32, n_negatives: usize, rng: &mut Rng) -> (Vec<u32>, usize) {
    let seen = dataset.user_items(user);
    let n_items = dataset.n_items();
    let available = n_items - seen.len();
    if n_negatives * 2 <= available {
        let mut chosen = HashSet::with_capacity(n_negatives);
        let mut out = Vec::with_capacity(n_negatives);
        while out.len() < n_negatives {
            let item = rng.below(n_items as u64) as u32;
            if seen.binary_search(&item).is_err() && chosen.insert(item) {
                out.push(item);
            }
        }
        return (out, 0);
    }
    let mut pool: Vec<u32> = (0..n_items as u32).filter(|i| seen.binary_search(i).is_err()).collect();
    let take = n_negatives.min(pool.len());
    for i in 0..take {
        let j = i + rng.below((pool.len() - i) as u64) as usize;
        pool.swap(i, j);
    }
    pool.truncate(take);
    (pool, n_negatives - take)
}

/// Candidate list for one held-out positive: the positive plus
/// `n_negatives` distinct items drawn without replacement from the items the
/// user never interacted with. If too few exist, all are used and the
/// shortfall is recorded.
pub fn build_eval_candidates(
    dataset: &Dataset,
    user: u32,
    positive_item: u32,
    n_negatives: usize,
    rng: &mut Rng,
) -> CandidateList {
    let (negatives, shortfall) = sample_negatives(dataset, user, n_negatives, rng);
    let mut items = Vec::with_capacity(negatives.len() + 1);
    items.push(positive_item);
    items.extend(negatives);
    CandidateList { items, shortfall }
}

/// Held-out positives of one user in one split and the negatives they are
/// ranked against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserCandidates {
    pub user: u32,
    pub positives: Vec<u32>,
    pub negatives: Vec<u32>,
    pub shortfall: usize,
}

impl UserCandidates {
    /// Candidate list of the `i`-th positive.
    pub fn list(&self, i: usize) -> CandidateList {
        let mut items = Vec::with_capacity(self.negatives.len() + 1);
        items.push(self.positives[i]);
        items.extend_from_slice(&self.negatives);
        CandidateList {
            items,
            shortfall: self.shortfall,
        }
    }
}

/// Evaluation candidates drawn once per `(user, split)` and reused by every
/// model so that all rank identical lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrozenCandidates {
    pub kind: SplitKind,
    pub n_negatives: usize,
    pub users: Vec<UserCandidates>,
}

impl FrozenCandidates {
    pub fn total_shortfall(&self) -> usize {
        self.users.iter().map(|u| u.shortfall).sum()
    }
}

pub fn freeze_candidates(
    dataset: &Dataset,
    split: &Split,
    kind: SplitKind,
    n_negatives: usize,
    rng: &mut Rng,
) -> FrozenCandidates {
    let mut users = Vec::new();
    for u in 0..dataset.n_users() as u32 {
        let positives = split.user_items(dataset, u, kind);
        if positives.is_empty() {
            continue;
        }
        let (negatives, shortfall) = sample_negatives(dataset, u, n_negatives, rng);
        users.push(UserCandidates {
            user: u,
            positives,
            negatives,
            shortfall,
        });
    }
    FrozenCandidates {
        kind,
        n_negatives,
        users,
    }
}

/// Each of `k` features is selected independently with probability `p`.
pub fn sample_mask(k: usize, p: f64, rng: &mut Rng) -> Result<Mask> {
    if k == 0 || k > Mask::MAX_FEATURES {
        return Err(Error::Config(format!("mask over {k} features")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("mask probability {p} outside [0, 1]")));
    }
    let mut mask = Mask::empty();
    for f in 0..k {
        if rng.uniform() < p {
            mask = mask.with(f);
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Interaction, SensitiveFeature};

    fn catalog(user_items: &[&[u32]], n_items: usize) -> Dataset {
        let mut inter = Vec::new();
        for (u, items) in user_items.iter().enumerate() {
            for &i in items.iter() {
                inter.push(Interaction {
                    user: u as u32,
                    item: i,
                    timestamp: None,
                });
            }
        }
        Dataset::new(
            (0..user_items.len()).map(|u| u.to_string()).collect(),
            (0..n_items).map(|i| i.to_string()).collect(),
            inter,
            Vec::<SensitiveFeature>::new(),
        )
        .unwrap()
    }

    #[test]
    fn only_free_item_is_returned() {
        let all_but_3: Vec<u32> = (0..10).filter(|&i| i != 3).collect();
        let d = catalog(&[&all_but_3], 10);
        let mut rng = Rng::new(0, 0);
        for _ in 0..100 {
            assert_eq!(sample_train_negative(&d, 0, &mut rng).unwrap(), 3);
        }
    }

    #[test]
    fn saturated_user_rejected() {
        let d = catalog(&[&[0, 1, 2]], 3);
        assert!(sample_train_negative(&d, 0, &mut Rng::new(0, 0)).is_err());
    }

    #[test]
    fn negatives_are_uniform_over_the_complement() {
        let d = catalog(&[&[0, 4, 9, 13, 20]], 21);
        let mut rng = Rng::new(5, 0);
        let n = 100_000;
        let mut counts = [0usize; 21];
        for _ in 0..n {
            counts[sample_train_negative(&d, 0, &mut rng).unwrap() as usize] += 1;
        }
        let p = 1.0 / 16.0;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let mut chi2 = 0.0;
        for (i, &c) in counts.iter().enumerate() {
            if d.has_interaction(0, i as u32) {
                assert_eq!(c, 0);
                continue;
            }
            let freq = c as f64 / n as f64;
            assert!((freq - p).abs() < 3.0 * se, "item {i}: {freq}");
            let e = n as f64 * p;
            chi2 += (c as f64 - e).powi(2) / e;
        }
        // 15 degrees of freedom, 0.999 quantile
        assert!(chi2 < 37.7, "chi2 {chi2}");
    }

    #[test]
    fn dense_user_path_never_returns_positives() {
        let seen: Vec<u32> = (0..50).filter(|i| i % 7 != 0).collect();
        let d = catalog(&[&seen], 50);
        let mut rng = Rng::new(2, 0);
        let mut hit = HashSet::new();
        for _ in 0..5000 {
            let x = sample_train_negative(&d, 0, &mut rng).unwrap();
            assert!(!d.has_interaction(0, x));
            hit.insert(x);
        }
        assert_eq!(hit.len(), 8);
    }

    #[test]
    fn candidate_lists() {
        let d = catalog(&[&[1, 2, 3]], 200);
        let mut rng = Rng::new(1, 0);
        let c = build_eval_candidates(&d, 0, 2, 100, &mut rng);
        assert_eq!(c.items.len(), 101);
        assert_eq!(c.positive(), 2);
        let distinct: HashSet<_> = c.items.iter().collect();
        assert_eq!(distinct.len(), 101);
        assert!(c.negatives().iter().all(|&i| !d.has_interaction(0, i)));
        let only = build_eval_candidates(&d, 0, 2, 0, &mut rng);
        assert_eq!(only.items, vec![2]);
    }

    #[test]
    fn shortfall_is_recorded() {
        let d = catalog(&[&[0, 1]], 5);
        let c = build_eval_candidates(&d, 0, 1, 10, &mut Rng::new(0, 0));
        assert_eq!(c.items.len(), 4);
        assert_eq!(c.shortfall, 7);
    }

    #[test]
    fn full_probability_mask() {
        let mut rng = Rng::new(0, 0);
        for _ in 0..100 {
            assert_eq!(sample_mask(3, 1.0, &mut rng).unwrap(), Mask::full(3));
            assert!(sample_mask(3, 0.0, &mut rng).unwrap().is_empty());
        }
    }

    #[test]
    fn half_probability_mask_frequencies() {
        let mut rng = Rng::new(8, 0);
        let n = 100_000;
        let mut subset = [0usize; 8];
        let mut size_sum = 0.0;
        let mut size_sq = 0.0;
        for _ in 0..n {
            let m = sample_mask(3, 0.5, &mut rng).unwrap();
            subset[m.bits() as usize] += 1;
            size_sum += m.len() as f64;
            size_sq += (m.len() as f64).powi(2);
        }
        let mean = size_sum / n as f64;
        let sd = (size_sq / n as f64 - mean * mean).sqrt();
        assert!((mean - 1.5).abs() < 3.0 * sd / (n as f64).sqrt(), "{mean}");
        let se = (0.125f64 * 0.875 / n as f64).sqrt();
        for c in subset {
            assert!((c as f64 / n as f64 - 0.125).abs() < 3.0 * se);
        }
    }

    #[test]
    fn mask_sequence_reproducible() {
        let a: Vec<Mask> = {
            let mut r = Rng::new(4, 9);
            (0..50).map(|_| sample_mask(4, 0.5, &mut r).unwrap()).collect()
        };
        let mut r = Rng::new(4, 9);
        let b: Vec<Mask> = (0..50).map(|_| sample_mask(4, 0.5, &mut r).unwrap()).collect();
        assert_eq!(a, b);
    }
}
