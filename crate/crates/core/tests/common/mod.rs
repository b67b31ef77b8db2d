//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use fairrec::numcore::{Matrix, Parameterized, Rng};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

/// Relative error with a floor: gradients below 1e-5 (e.g. a bias feeding
/// batchnorm, exactly zero) are compared absolutely against FD round-off.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FdReport {
    pub checked: usize,
    pub max_rel: f64,
}

impl FdReport {
    pub fn merge(&mut self, other: FdReport) {
        self.checked += other.checked;
        self.max_rel = self.max_rel.max(other.max_rel);
    }

    pub fn ok(&self) -> bool {
        self.checked > 0 && self.max_rel < FD_TOLERANCE
    }
}

/// Central differences over up to `per_tensor` random coordinates of every
/// trainable tensor. `grads[t]` is the analytic gradient of tensor `t`.
pub fn fd_params<M: Parameterized<f64>>(
    m: &mut M,
    eval: &mut dyn FnMut(&M) -> f64,
    grads: &[Vec<f64>],
    per_tensor: usize,
    rng: &mut Rng,
) -> FdReport {
    let mut report = FdReport::default();
    let n_tensors = m.params().len();
    assert_eq!(n_tensors, grads.len());
    for t in 0..n_tensors {
        let (numel, trainable) = {
            let ps = m.params();
            (ps[t].numel(), ps[t].trainable())
        };
        if !trainable {
            continue;
        }
        for _ in 0..per_tensor.min(numel) {
            let i = rng.index(numel);
            let orig = m.params()[t].values()[i];
            m.params_mut()[t].values_mut()[i] = orig + FD_STEP;
            let up = eval(m);
            m.params_mut()[t].values_mut()[i] = orig - FD_STEP;
            let down = eval(m);
            m.params_mut()[t].values_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let e = rel_err(grads[t][i], numeric);
            if e >= FD_TOLERANCE {
                eprintln!("fd mismatch in {}[{i}]: analytic {} numeric {numeric}", m.params()[t].name(), grads[t][i]);
            }
            report.checked += 1;
            report.max_rel = report.max_rel.max(e);
        }
    }
    report
}

/// Central differences over every entry of `x`.
pub fn fd_input(x: &Matrix<f64>, eval: &mut dyn FnMut(&Matrix<f64>) -> f64, grad: &Matrix<f64>) -> FdReport {
    let mut report = FdReport::default();
    let mut probe = x.clone();
    for i in 0..x.as_slice().len() {
        let orig = x.as_slice()[i];
        probe.as_mut_slice()[i] = orig + FD_STEP;
        let up = eval(&probe);
        probe.as_mut_slice()[i] = orig - FD_STEP;
        let down = eval(&probe);
        probe.as_mut_slice()[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let e = rel_err(grad.as_slice()[i], numeric);
        if e >= FD_TOLERANCE {
            eprintln!("fd mismatch in input[{i}]: analytic {} numeric {numeric}", grad.as_slice()[i]);
        }
        report.checked += 1;
        report.max_rel = report.max_rel.max(e);
    }
    report
}

pub fn grads_of<M: Parameterized<f64>>(m: &M) -> Vec<Vec<f64>> {
    m.params().iter().map(|p| p.grad().to_vec()).collect()
}

pub fn values_of<M: Parameterized<f64>>(m: &M) -> Vec<Vec<u64>> {
    m.params()
        .iter()
        .map(|p| p.values().iter().map(|v| v.to_bits()).collect())
        .collect()
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.standard_normal()).collect()).unwrap()
}

/// Rank of the positive (index 0) after sorting all candidates by
/// descending score with the positive placed after equal scores.
pub fn sorted_rank(scores: &[f64]) -> usize {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then_with(|| (a == 0).cmp(&(b == 0)))
    });
    order.iter().position(|&i| i == 0).unwrap() + 1
}

/// DCG of a single relevant item found by a full sort.
pub fn sorted_ndcg(scores: &[f64], n: usize) -> f64 {
    let rank = sorted_rank(scores);
    if rank <= n {
        std::f64::consts::LN_2 / ((rank + 1) as f64).ln()
    } else {
        0.0
    }
}

/// AUC by enumerating every positive/negative pair.
pub fn brute_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for (i, &pi) in positive.iter().enumerate() {
        if !pi {
            continue;
        }
        for (j, &pj) in positive.iter().enumerate() {
            if pj {
                continue;
            }
            pairs += 1;
            twice += if scores[i] > scores[j] {
                2
            } else if scores[i] == scores[j] {
                1
            } else {
                0
            };
        }
    }
    let raw = twice as f64 / (2 * pairs) as f64;
    raw.max(1.0 - raw)
}
