use serde::{Deserialize, Serialize};

use crate::data::FrozenCandidates;
use crate::error::{Error, Result};
use crate::numcore::Scalar;

/// 1-based rank of `scores[0]` among `scores`. Ties count against the
/// positive: every other candidate scoring at least as high ranks above it.
pub fn rank_of_first<T: Scalar>(scores: &[T]) -> Result<usize> {
    let (&pos, rest) = scores
        .split_first()
        .ok_or_else(|| Error::Data("empty candidate list".into()))?;
    if !pos.is_finite() || rest.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("candidate score".into()));
    }
    Ok(1 + rest.iter().filter(|&&s| s >= pos).count())
}

/// `1 / log2(rank + 1)` if the positive is within the top `n`, else 0.
pub fn ndcg_at(rank: usize, n: usize) -> f64 {
    if rank >= 1 && rank <= n {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

pub fn hit_at(rank: usize, n: usize) -> f64 {
    if rank >= 1 && rank <= n {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub ndcg: f64,
    pub hit: f64,
    pub top_n: usize,
    pub n_users: usize,
    pub n_lists: usize,
}

/// Averages NDCG@N and Hit@N over each user's held-out positives, then over
/// users. `score` returns the scores of `items` for `user`.
pub fn evaluate_ranking<T, F>(candidates: &FrozenCandidates, top_n: usize, mut score: F) -> Result<RankingMetrics>
where
    T: Scalar,
    F: FnMut(u32, &[u32]) -> Result<Vec<T>>,
{
    if top_n == 0 {
        return Err(Error::Config("top-N cutoff must be positive".into()));
    }
    let (mut ndcg, mut hit, mut n_lists) = (0.0, 0.0, 0);
    let mut items = Vec::new();
    for uc in &candidates.users {
        items.clear();
        items.extend_from_slice(&uc.positives);
        items.extend_from_slice(&uc.negatives);
        let scores = score(uc.user, &items)?;
        if scores.len() != items.len() {
            return Err(Error::shape("candidate scores", items.len(), scores.len()));
        }
        let neg = &scores[uc.positives.len()..];
        let (mut u_ndcg, mut u_hit) = (0.0, 0.0);
        for &pos in &scores[..uc.positives.len()] {
            if !pos.is_finite() || neg.iter().any(|s| !s.is_finite()) {
                return Err(Error::NonFinite(format!("scores of user {}", uc.user)));
            }
            let rank = 1 + neg.iter().filter(|&&s| s >= pos).count();
            u_ndcg += ndcg_at(rank, top_n);
            u_hit += hit_at(rank, top_n);
        }
        let m = uc.positives.len() as f64;
        ndcg += u_ndcg / m;
        hit += u_hit / m;
        n_lists += uc.positives.len();
    }
    let n_users = candidates.users.len();
    if n_users == 0 {
        return Err(Error::Data(format!("no {} candidates to rank", candidates.kind.as_str())));
    }
    Ok(RankingMetrics {
        ndcg: ndcg / n_users as f64,
        hit: hit / n_users as f64,
        top_n,
        n_users,
        n_lists,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_with_pessimistic_ties() {
        assert_eq!(rank_of_first(&[0.5, 0.1, 0.2]).unwrap(), 1);
        assert_eq!(rank_of_first(&[0.5, 0.5, 0.2]).unwrap(), 2);
        assert_eq!(rank_of_first(&[0.0, 0.0, 0.0, 0.0]).unwrap(), 4);
        assert!(rank_of_first::<f64>(&[]).is_err());
        assert!(rank_of_first(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn ndcg_values() {
        assert_eq!(ndcg_at(1, 5), 1.0);
        assert!((ndcg_at(3, 5) - 0.5).abs() < 1e-15);
        assert_eq!(ndcg_at(6, 5), 0.0);
        assert_eq!(hit_at(5, 5), 1.0);
        assert_eq!(hit_at(6, 5), 0.0);
    }
}
