use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Matrix, Scalar};

/// Unfolded AUC: P(positive scores above negative), ties counted 1/2.
/// Computed from exact integer pair counts.
pub fn auc_binary_raw<T: Scalar>(scores: &[T], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::shape("AUC labels", scores.len(), positive.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("AUC scores".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count() as u128;
    let n_neg = positive.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data("AUC needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // twice the Mann-Whitney statistic, so ties stay integral
    let (mut twice_wins, mut neg_below) = (0u128, 0u128);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut n) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if positive[order[j]] {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        twice_wins += 2 * p * neg_below + p * n;
        neg_below += n;
        i = j;
    }
    Ok(twice_wins as f64 / (2 * n_pos * n_neg) as f64)
}

/// AUC folded into `[0.5, 1]`: a score that separates the classes in either
/// direction counts as leakage.
pub fn auc_binary<T: Scalar>(scores: &[T], positive: &[bool]) -> Result<f64> {
    let a = auc_binary_raw(scores, positive)?;
    Ok(a.max(1.0 - a))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAuc {
    pub a: u32,
    pub b: u32,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroAuc {
    pub auc: f64,
    pub pairs: Vec<PairAuc>,
    /// Pairs left out because one class had no members.
    pub skipped: Vec<(u32, u32)>,
}

/// Macro average of folded one-vs-one AUCs. For the pair `a < b` the users
/// labelled `a` or `b` are scored by their probability of class `b`, so two
/// classes reduce exactly to [`auc_binary`] on the class-1 probability.
pub fn auc_macro<T: Scalar>(probabilities: &Matrix<T>, labels: &[u32], cardinality: usize) -> Result<MacroAuc> {
    if cardinality < 2 || probabilities.cols() != cardinality {
        return Err(Error::shape("class probabilities", cardinality, probabilities.cols()));
    }
    if labels.len() != probabilities.rows() {
        return Err(Error::shape("AUC labels", probabilities.rows(), labels.len()));
    }
    if let Some(&y) = labels.iter().find(|&&y| y as usize >= cardinality) {
        return Err(Error::shape("class label", format!("< {cardinality}"), y));
    }
    let mut counts = vec![0usize; cardinality];
    for &y in labels {
        counts[y as usize] += 1;
    }
    let (mut pairs, mut skipped) = (Vec::new(), Vec::new());
    for a in 0..cardinality as u32 {
        for b in a + 1..cardinality as u32 {
            if counts[a as usize] == 0 || counts[b as usize] == 0 {
                skipped.push((a, b));
                continue;
            }
            let (mut scores, mut positive) = (Vec::new(), Vec::new());
            for (r, &y) in labels.iter().enumerate() {
                if y == a || y == b {
                    scores.push(probabilities.get(r, b as usize));
                    positive.push(y == b);
                }
            }
            pairs.push(PairAuc {
                a,
                b,
                auc: auc_binary(&scores, &positive)?,
            });
        }
    }
    if pairs.is_empty() {
        return Err(Error::Data(format!("no class pair has members (class counts {counts:?})")));
    }
    let auc = pairs.iter().map(|p| p.auc).sum::<f64>() / pairs.len() as f64;
    Ok(MacroAuc { auc, pairs, skipped })
}
