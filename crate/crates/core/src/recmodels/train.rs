use serde::{Deserialize, Serialize};

use crate::data::{sample_train_negative, Dataset, FrozenCandidates, Split, SplitKind};
use crate::error::{Error, Result};
use crate::eval::{evaluate_ranking, RankingMetrics};
use crate::numcore::{Adam, AdamConfig, Matrix, Parameterized, Rng, Scalar};

use super::{bpr_loss, RecModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub l2: f64,
    pub adam: AdamConfig,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub top_n: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            l2: 1e-4,
            adam: AdamConfig::default(),
            max_epochs: 200,
            patience: 10,
            top_n: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.top_n == 0 {
            return Err(Error::Config("batch size, epochs and top-N must be positive".into()));
        }
        if !(self.l2 >= 0.0) || !(self.adam.learning_rate > 0.0) {
            return Err(Error::Config("l2 must be >= 0 and the learning rate > 0".into()));
        }
        Ok(())
    }
}

/// Independent random streams for one training run. Keeping them apart
/// lets two runs share batch order and negatives while differing elsewhere.
#[derive(Debug, Clone)]
pub struct TrainRngs {
    pub plan: Rng,
    pub dropout: Rng,
    pub mask: Rng,
    pub disc: Rng,
}

impl TrainRngs {
    pub fn new(seed: u64) -> Self {
        TrainRngs {
            plan: Rng::named(seed, "train.plan"),
            dropout: Rng::named(seed, "train.dropout"),
            mask: Rng::named(seed, "train.mask"),
            disc: Rng::named(seed, "train.disc"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    pub user: u32,
    pub pos: u32,
    pub neg: u32,
}

/// One epoch of shuffled training triples cut into batches.
#[derive(Debug, Clone)]
pub struct BatchPlan {
    pub batches: Vec<Vec<Triple>>,
}

impl BatchPlan {
    pub fn new(dataset: &Dataset, split: &Split, batch_size: usize, rng: &mut Rng) -> Result<Self> {
        let mut order = split.indices(SplitKind::Train);
        if order.is_empty() {
            return Err(Error::Data("no training interactions".into()));
        }
        rng.shuffle(&mut order);
        let interactions = dataset.interactions();
        let mut triples = Vec::with_capacity(order.len());
        for i in order {
            let it = interactions[i];
            let neg = sample_train_negative(dataset, it.user, rng)?;
            triples.push(Triple {
                user: it.user,
                pos: it.item,
                neg,
            });
        }
        Ok(BatchPlan {
            batches: triples.chunks(batch_size.max(1)).map(<[Triple]>::to_vec).collect(),
        })
    }

    pub fn n_triples(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }
}

/// Mean BPR loss of a batch given its user representations. Accumulates
/// scoring parameter gradients and returns `d loss / d reps`.
pub(crate) fn bpr_step<T: Scalar>(
    model: &mut RecModel<T>,
    batch: &[Triple],
    reps: &Matrix<T>,
    rng: &mut Rng,
) -> Result<(T, Matrix<T>)> {
    let b = batch.len();
    let mut users: Vec<u32> = batch.iter().map(|t| t.user).collect();
    users.extend_from_within(..);
    let items: Vec<u32> = batch.iter().map(|t| t.pos).chain(batch.iter().map(|t| t.neg)).collect();
    let mut both = Matrix::zeros(2 * b, reps.cols());
    for r in 0..b {
        both.row_mut(r).copy_from_slice(reps.row(r));
        both.row_mut(r + b).copy_from_slice(reps.row(r));
    }
    let (scores, cache) = model.score_forward(&users, &both, &items, Some(rng))?;
    let inv = T::one() / T::lit(b as f64);
    let mut loss = T::zero();
    let mut dscores = vec![T::zero(); 2 * b];
    for r in 0..b {
        let (l, dp, dn) = bpr_loss(scores[r], scores[r + b]);
        loss += l;
        dscores[r] = dp * inv;
        dscores[r + b] = dn * inv;
    }
    loss *= inv;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("BPR loss {loss}")));
    }
    let dboth = model.score_backward(&cache, &dscores)?;
    let (top, bottom) = (dboth.select_rows(&(0..b).collect::<Vec<_>>()), dboth.select_rows(&(b..2 * b).collect::<Vec<_>>()));
    let mut drep = top;
    drep.add_assign(&bottom);
    Ok((loss, drep))
}

/// l2 term over the rows a batch touches plus dense weights.
pub(crate) fn l2_step<T: Scalar>(model: &mut RecModel<T>, batch: &[Triple], coefficient: f64) -> T {
    let users: Vec<u32> = batch.iter().map(|t| t.user).collect();
    let items: Vec<u32> = batch.iter().flat_map(|t| [t.pos, t.neg]).collect();
    model.l2_batch(&users, &items, batch.len(), T::lit(coefficient))
}

pub(crate) fn divergence(e: Error) -> Error {
    match e {
        Error::NonFinite(what) => Error::Divergence(format!("non-finite gradient in {what}")),
        other => other,
    }
}

/// One pass over `plan`; returns the mean batch loss including l2.
pub fn train_epoch_plain<T: Scalar>(
    model: &mut RecModel<T>,
    adam: &mut Adam<T>,
    plan: &BatchPlan,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let mut total = 0.0;
    for batch in &plan.batches {
        let users: Vec<u32> = batch.iter().map(|t| t.user).collect();
        let (reps, ucache) = model.user_forward(&users, rng)?;
        let (loss, drep) = bpr_step(model, batch, &reps, rng)?;
        model.user_backward(&ucache, &drep)?;
        let reg = l2_step(model, batch, config.l2);
        adam.step(&mut model.params_mut()).map_err(divergence)?;
        total += (loss + reg).as_f64();
    }
    Ok(total / plan.batches.len() as f64)
}

pub fn evaluate_plain<T: Scalar>(model: &RecModel<T>, candidates: &FrozenCandidates, top_n: usize) -> Result<RankingMetrics> {
    let scorer = model.scorer()?;
    evaluate_ranking(candidates, top_n, |u, items| scorer.scores(u, &model.user_representation(u)?, items))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub validation_ndcg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub history: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_validation_ndcg: Option<f64>,
}

/// Early-stopping bookkeeping shared by the plain and adversarial trainers.
pub(crate) struct Stopper<S> {
    pub patience: usize,
    pub best: Option<(f64, usize, S)>,
    pub since: usize,
}

impl<S> Stopper<S> {
    pub fn new(patience: usize) -> Self {
        Stopper {
            patience,
            best: None,
            since: 0,
        }
    }

    /// Records a validation value; returns true when training should stop.
    pub fn observe(&mut self, value: f64, epoch: usize, snapshot: impl FnOnce() -> S) -> bool {
        if self.best.as_ref().is_none_or(|b| value > b.0) {
            self.best = Some((value, epoch, snapshot()));
            self.since = 0;
        } else {
            self.since += 1;
        }
        self.since >= self.patience
    }
}

/// Trains with BPR, keeping the parameters of the best validation epoch
/// when `validation` is given and the final ones otherwise. `on_best` sees
/// every new best state.
pub fn fit_plain<T: Scalar>(
    model: &mut RecModel<T>,
    dataset: &Dataset,
    split: &Split,
    validation: Option<&FrozenCandidates>,
    config: &TrainConfig,
    rngs: &mut TrainRngs,
    on_best: &mut dyn FnMut(&RecModel<T>, usize) -> Result<()>,
) -> Result<FitOutcome> {
    config.validate()?;
    let mut adam = Adam::new(config.adam);
    let mut history = Vec::new();
    let mut stopper = Stopper::new(config.patience);
    for epoch in 1..=config.max_epochs {
        let plan = BatchPlan::new(dataset, split, config.batch_size, &mut rngs.plan)?;
        let loss = train_epoch_plain(model, &mut adam, &plan, config, &mut rngs.dropout)?;
        let ndcg = validation
            .map(|v| evaluate_plain(model, v, config.top_n).map(|m| m.ndcg))
            .transpose()?;
        history.push(EpochLog {
            epoch,
            loss,
            validation_ndcg: ndcg,
        });
        if let Some(ndcg) = ndcg {
            let improved = stopper.best.as_ref().is_none_or(|b| ndcg > b.0);
            let stop = stopper.observe(ndcg, epoch, || model.clone());
            if improved {
                on_best(model, epoch)?;
            }
            if stop {
                break;
            }
        }
    }
    let (best_epoch, best_validation_ndcg) = match stopper.best {
        Some((value, epoch, snapshot)) => {
            *model = snapshot;
            (epoch, Some(value))
        }
        None => {
            on_best(model, history.len())?;
            (history.len(), None)
        }
    };
    Ok(FitOutcome {
        history,
        best_epoch,
        best_validation_ndcg,
    })
}
