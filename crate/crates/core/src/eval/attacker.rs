use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fairness::Discriminator;
use crate::numcore::{Adam, AdamConfig, Matrix, Parameterized, Rng, Scalar};

use super::auc::{auc_binary, auc_macro, PairAuc};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackerConfig {
    pub max_epochs: usize,
    /// Stop after this many epochs without a train-loss gain of `min_improvement`.
    pub patience: usize,
    pub min_improvement: f64,
    pub adam: AdamConfig,
    pub train_fraction: f64,
}

impl Default for AttackerConfig {
    fn default() -> Self {
        AttackerConfig {
            max_epochs: 500,
            patience: 20,
            min_improvement: 1e-5,
            adam: AdamConfig::with_learning_rate(1e-2),
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackerResult {
    pub feature: usize,
    pub feature_name: String,
    /// Folded test AUC in `[0.5, 1]`; macro one-vs-one for more than two classes.
    pub auc: f64,
    pub pair_aucs: Vec<PairAuc>,
    pub seed: u64,
    pub stream: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub epochs: usize,
}

/// Per-class shuffle, first `fraction` of each class (at least one member)
/// to train, the rest to test.
pub fn stratified_split(labels: &[u32], cardinality: usize, fraction: f64, rng: &mut Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {fraction} outside (0, 1)")));
    }
    let mut by_class = vec![Vec::new(); cardinality];
    for (i, &y) in labels.iter().enumerate() {
        by_class
            .get_mut(y as usize)
            .ok_or_else(|| Error::shape("class label", format!("< {cardinality}"), y))?
            .push(i);
    }
    let histogram: Vec<usize> = by_class.iter().map(Vec::len).collect();
    if histogram.contains(&0) {
        return Err(Error::Data(format!("class absent from attacker data, histogram {histogram:?}")));
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for mut members in by_class {
        rng.shuffle(&mut members);
        let n_train = ((members.len() as f64 * fraction).round() as usize).clamp(1, members.len());
        test.extend_from_slice(&members[n_train..]);
        members.truncate(n_train);
        train.extend(members);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Trains a fresh classifier on 80% of the users and reports its AUC on
/// the remaining 20%.
pub fn train_attacker<T: Scalar>(
    embeddings: &Matrix<T>,
    labels: &[u32],
    cardinality: usize,
    feature: usize,
    config: &AttackerConfig,
    rng: &mut Rng,
) -> Result<(Discriminator<T>, AttackerResult)> {
    if labels.len() != embeddings.rows() {
        return Err(Error::shape("attacker labels", embeddings.rows(), labels.len()));
    }
    let (seed, stream) = (rng.seed(), rng.stream_id());
    let (train, test) = stratified_split(labels, cardinality, config.train_fraction, rng)?;
    if test.is_empty() {
        return Err(Error::Data("attacker test split is empty".into()));
    }
    let x = embeddings.select_rows(&train);
    let y: Vec<u32> = train.iter().map(|&i| labels[i]).collect();
    let mut attacker = Discriminator::new("attacker", feature, embeddings.cols(), cardinality, rng)?;
    let mut adam = Adam::new(config.adam);
    let (mut best, mut since, mut epochs) = (f64::INFINITY, 0, 0);
    for _ in 0..config.max_epochs {
        epochs += 1;
        let (loss, cache, dlogits) = attacker.loss(&x, &y, rng)?;
        attacker.backward(&cache, &dlogits)?;
        adam.step(&mut attacker.params_mut())?;
        let loss = loss.as_f64();
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("attacker loss {loss}")));
        }
        if loss < best - config.min_improvement {
            best = loss;
            since = 0;
        } else {
            since += 1;
            if since >= config.patience {
                break;
            }
        }
    }
    let probs = attacker.probabilities(&embeddings.select_rows(&test))?;
    let y_test: Vec<u32> = test.iter().map(|&i| labels[i]).collect();
    let (auc, pair_aucs) = if cardinality == 2 {
        let scores: Vec<T> = (0..probs.rows()).map(|r| probs.get(r, 1)).collect();
        let positive: Vec<bool> = y_test.iter().map(|&v| v == 1).collect();
        (auc_binary(&scores, &positive)?, Vec::new())
    } else {
        let m = auc_macro(&probs, &y_test, cardinality)?;
        (m.auc, m.pairs)
    };
    Ok((
        attacker,
        AttackerResult {
            feature,
            feature_name: String::new(),
            auc,
            pair_aucs,
            seed,
            stream,
            n_train: train.len(),
            n_test: test.len(),
            epochs,
        },
    ))
}

/// One attacker per sensitive feature, each on its own substream of `rng`.
pub fn attack_features<T: Scalar>(
    embeddings: &Matrix<T>,
    dataset: &Dataset,
    config: &AttackerConfig,
    rng: &Rng,
) -> Result<Vec<AttackerResult>> {
    if embeddings.rows() != dataset.n_users() {
        return Err(Error::shape("embedding rows", dataset.n_users(), embeddings.rows()));
    }
    let mut out = Vec::new();
    for (k, f) in dataset.features().iter().enumerate() {
        let mut stream = rng.substream(k as u64);
        let (_, mut result) = train_attacker(embeddings, &f.values, f.cardinality(), k, config, &mut stream)?;
        result.feature_name = f.name.clone();
        out.push(result);
    }
    Ok(out)
}
