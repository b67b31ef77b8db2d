use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{sample_mask, Dataset, FrozenCandidates, Mask, Split, TrainMatrix};
use crate::error::{Error, Result};
use crate::eval::{evaluate_ranking, RankingMetrics};
use crate::numcore::{l2_penalty, Adam, Checkpoint, Matrix, ParamTensor, Parameterized, Rng, Scalar};
use crate::recmodels::train::{bpr_step, divergence, l2_step, Stopper};
use crate::recmodels::{BatchPlan, EpochLog, FitOutcome, RecModel, TrainConfig, TrainRngs, Triple};

use super::{Discriminator, FilterBank, FilterMethod};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryConfig {
    pub lambda: f64,
    /// Discriminator updates per batch.
    pub disc_steps: usize,
    /// Probability that a feature is selected in a batch mask.
    pub mask_probability: f64,
    /// Every batch uses the full mask (a single fixed fairness demand).
    pub fixed_full_mask: bool,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        AdversaryConfig {
            lambda: 10.0,
            disc_steps: 10,
            mask_probability: 0.5,
            fixed_full_mask: false,
        }
    }
}

impl AdversaryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda {} must be finite and >= 0", self.lambda)));
        }
        if self.disc_steps == 0 {
            return Err(Error::Config("discriminator steps must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mask_probability) {
            return Err(Error::Config(format!("mask probability {} outside [0, 1]", self.mask_probability)));
        }
        Ok(())
    }
}

/// `rec_loss - lambda * Σ disc_losses`.
pub fn adversarial_objective<T: Scalar>(rec_loss: T, disc_losses: &[T], lambda: T) -> T {
    if lambda == T::zero() {
        return rec_loss;
    }
    rec_loss - lambda * disc_losses.iter().copied().sum::<T>()
}

/// A recommender with its filter bank and one discriminator per feature.
#[derive(Debug, Clone)]
pub struct FairModel<T: Scalar> {
    pub model: RecModel<T>,
    pub bank: FilterBank<T>,
    pub discriminators: Vec<Discriminator<T>>,
}

impl<T: Scalar> FairModel<T> {
    pub fn new(model: RecModel<T>, method: FilterMethod, cardinalities: &[usize], rng: &mut Rng) -> Result<Self> {
        let dim = model.dim();
        let bank = FilterBank::new(method, cardinalities.len(), dim, rng)?;
        let discriminators = cardinalities
            .iter()
            .enumerate()
            .map(|(k, &c)| Discriminator::new("disc", k, dim, c, rng))
            .collect::<Result<_>>()?;
        Ok(FairModel {
            model,
            bank,
            discriminators,
        })
    }

    pub fn n_features(&self) -> usize {
        self.discriminators.len()
    }

    /// Inference-mode user representations filtered by `mask`.
    pub fn filtered_reps(&self, users: &[u32], mask: Mask) -> Result<Matrix<T>> {
        self.bank.apply(mask, &self.model.user_reps(users)?)
    }

    pub fn embeddings(&self, mask: Mask) -> Result<Matrix<T>> {
        let users: Vec<u32> = (0..self.model.n_users() as u32).collect();
        self.filtered_reps(&users, mask)
    }

    pub fn evaluate(&self, candidates: &FrozenCandidates, mask: Mask, top_n: usize) -> Result<RankingMetrics> {
        let scorer = self.model.scorer()?;
        evaluate_ranking(candidates, top_n, |u, items| {
            scorer.scores(u, &self.filtered_reps(&[u], mask)?.into_vec(), items)
        })
    }

    fn rec_params_mut(&mut self, mask: Mask) -> Result<Vec<&mut ParamTensor<T>>> {
        let mut ps = self.model.params_mut();
        ps.extend(self.bank.active_params_mut(mask)?);
        Ok(ps)
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        let mut ck = self.model.to_checkpoint(seed);
        self.bank.write_checkpoint(&mut ck);
        let classes: Vec<String> = self.discriminators.iter().map(|d| d.classes().to_string()).collect();
        ck.metadata.insert("disc_classes".into(), classes.join(","));
        for d in &self.discriminators {
            d.write_checkpoint(&mut ck);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, train: Option<Arc<TrainMatrix>>) -> Result<Self> {
        let model = RecModel::from_checkpoint(ck, train)?;
        let bank = FilterBank::from_checkpoint(ck, model.dim())?;
        let cardinalities = ck
            .get_meta("disc_classes")?
            .split(',')
            .map(|c| c.parse::<usize>().map_err(|_| Error::Checkpoint("bad disc_classes".into())))
            .collect::<Result<Vec<_>>>()?;
        let mut fair = FairModel {
            discriminators: Vec::new(),
            bank,
            model,
        };
        let mut rng = Rng::new(ck.seed, 0);
        for (k, &c) in cardinalities.iter().enumerate() {
            let mut d = Discriminator::new("disc", k, fair.model.dim(), c, &mut rng)?;
            ck.restore(&mut d.params_mut())?;
            fair.discriminators.push(d);
        }
        if fair.discriminators.len() != fair.bank.n_features() {
            return Err(Error::Checkpoint("filter bank and discriminators disagree on features".into()));
        }
        Ok(fair)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchLog {
    pub mask: u32,
    pub rec_loss: f64,
    /// Σ discriminator cross-entropy seen by the recommender step.
    pub disc_loss: f64,
    pub objective: f64,
}

/// Alternating optimisation of the recommender + filters against the
/// discriminators.
pub struct AdversarialTrainer<'a, T: Scalar> {
    pub fair: FairModel<T>,
    pub config: TrainConfig,
    pub adversary: AdversaryConfig,
    pub rngs: TrainRngs,
    dataset: &'a Dataset,
    split: &'a Split,
    labels: Vec<Vec<u32>>,
    rec_adam: Adam<T>,
    disc_adam: Adam<T>,
}

impl<'a, T: Scalar> AdversarialTrainer<'a, T> {
    pub fn new(
        fair: FairModel<T>,
        dataset: &'a Dataset,
        split: &'a Split,
        config: TrainConfig,
        adversary: AdversaryConfig,
        rngs: TrainRngs,
    ) -> Result<Self> {
        config.validate()?;
        adversary.validate()?;
        if dataset.features().len() != fair.n_features() {
            return Err(Error::Config(format!(
                "{} discriminators for {} sensitive features",
                fair.n_features(),
                dataset.features().len()
            )));
        }
        for (d, f) in fair.discriminators.iter().zip(dataset.features()) {
            if d.classes() != f.cardinality() {
                return Err(Error::shape(format!("classes of {}", f.name), f.cardinality(), d.classes()));
            }
        }
        let labels = dataset.features().iter().map(|f| f.values.clone()).collect();
        Ok(AdversarialTrainer {
            rec_adam: Adam::new(config.adam),
            disc_adam: Adam::new(config.adam),
            fair,
            config,
            adversary,
            rngs,
            dataset,
            split,
            labels,
        })
    }

    fn batch_labels(&self, feature: usize, users: &[u32]) -> Vec<u32> {
        users.iter().map(|&u| self.labels[feature][u as usize]).collect()
    }

    pub fn sample_mask(&mut self) -> Result<Mask> {
        let k = self.fair.n_features();
        if self.adversary.fixed_full_mask {
            return Ok(Mask::full(k));
        }
        sample_mask(k, self.adversary.mask_probability, &mut self.rngs.mask)
    }

    /// Updates the recommender and the filters `mask` selects; the
    /// discriminators are read but never written.
    pub fn recommender_step(&mut self, batch: &[Triple], mask: Mask) -> Result<BatchLog> {
        let log = self.objective_grads(batch, mask)?;
        let mut params = self.fair.rec_params_mut(mask)?;
        self.rec_adam.step(&mut params).map_err(divergence)?;
        Ok(log)
    }

    /// Accumulates the gradient of the objective (plus l2) into the
    /// recommender and active filter tensors without updating them.
    pub fn objective_grads(&mut self, batch: &[Triple], mask: Mask) -> Result<BatchLog> {
        let users: Vec<u32> = batch.iter().map(|t| t.user).collect();
        let fair = &mut self.fair;
        let (reps, ucache) = fair.model.user_forward(&users, &mut self.rngs.dropout)?;
        let (filtered, fcache) = fair.bank.forward_train(mask, &reps, &mut self.rngs.dropout)?;
        let (rec_loss, mut dfilt) = bpr_step(&mut fair.model, batch, &filtered, &mut self.rngs.dropout)?;
        let lambda = T::lit(self.adversary.lambda);
        let mut disc_losses = Vec::with_capacity(mask.len());
        for k in mask.features() {
            let labels: Vec<u32> = users.iter().map(|&u| self.labels[k][u as usize]).collect();
            let disc = &fair.discriminators[k];
            let (loss, cache, dlogits) = disc.loss(&filtered, &labels, &mut self.rngs.disc)?;
            disc_losses.push(loss);
            if lambda != T::zero() {
                dfilt.add_scaled(-lambda, &disc.input_grad(&cache, &dlogits)?);
            }
        }
        let objective = adversarial_objective(rec_loss, &disc_losses, lambda);
        if !objective.is_finite() {
            return Err(Error::Divergence(format!("adversarial objective {objective}")));
        }
        let dreps = fair.bank.backward(&fcache, &dfilt)?;
        fair.model.user_backward(&ucache, &dreps)?;
        let reg = l2_step(&mut fair.model, batch, self.config.l2);
        let coefficient = T::lit(self.config.l2);
        let filter_reg = l2_penalty(
            &mut fair
                .bank
                .active_params_mut(mask)?
                .into_iter()
                .filter(|p| p.name().ends_with("weight"))
                .collect::<Vec<_>>(),
            coefficient,
        );
        Ok(BatchLog {
            mask: mask.bits(),
            rec_loss: (rec_loss + reg + filter_reg).as_f64(),
            disc_loss: disc_losses.iter().copied().sum::<T>().as_f64(),
            objective: objective.as_f64(),
        })
    }

    /// `t` updates of the discriminators `mask` selects on the batch users'
    /// current filtered representations; nothing else is written.
    pub fn discriminator_steps(&mut self, batch: &[Triple], mask: Mask) -> Result<f64> {
        if mask.is_empty() {
            return Ok(0.0);
        }
        let users: Vec<u32> = batch.iter().map(|t| t.user).collect();
        let filtered = self.fair.filtered_reps(&users, mask)?;
        let labels: Vec<(usize, Vec<u32>)> = mask.features().map(|k| (k, self.batch_labels(k, &users))).collect();
        let mut last = 0.0;
        for _ in 0..self.adversary.disc_steps {
            let mut total = T::zero();
            for (k, y) in &labels {
                let disc = &mut self.fair.discriminators[*k];
                let (loss, cache, dlogits) = disc.loss(&filtered, y, &mut self.rngs.disc)?;
                disc.backward(&cache, &dlogits)?;
                total += loss;
            }
            if !total.is_finite() {
                return Err(Error::Divergence(format!("discriminator loss {total}")));
            }
            let mut params: Vec<&mut ParamTensor<T>> = self
                .fair
                .discriminators
                .iter_mut()
                .filter(|d| mask.contains(d.feature()))
                .flat_map(|d| d.params_mut())
                .collect();
            self.disc_adam.step(&mut params).map_err(divergence)?;
            last = total.as_f64();
        }
        Ok(last)
    }

    pub fn train_batch(&mut self, batch: &[Triple]) -> Result<BatchLog> {
        let mask = self.sample_mask()?;
        let log = self.recommender_step(batch, mask)?;
        self.discriminator_steps(batch, mask)?;
        Ok(log)
    }

    pub fn train_epoch(&mut self) -> Result<f64> {
        let plan = BatchPlan::new(self.dataset, self.split, self.config.batch_size, &mut self.rngs.plan)?;
        let mut total = 0.0;
        for batch in &plan.batches {
            total += self.train_batch(batch)?.rec_loss;
        }
        Ok(total / plan.batches.len() as f64)
    }

    /// Trains with early stopping on validation NDCG under `selection_mask`
    /// and keeps the best epoch. `on_best` sees every new best state.
    pub fn fit(
        &mut self,
        validation: Option<&FrozenCandidates>,
        selection_mask: Mask,
        on_best: &mut dyn FnMut(&FairModel<T>, usize) -> Result<()>,
    ) -> Result<FitOutcome> {
        let mut history = Vec::new();
        let mut stopper = Stopper::new(self.config.patience);
        for epoch in 1..=self.config.max_epochs {
            let loss = self.train_epoch()?;
            let ndcg = validation
                .map(|v| self.fair.evaluate(v, selection_mask, self.config.top_n).map(|m| m.ndcg))
                .transpose()?;
            history.push(EpochLog {
                epoch,
                loss,
                validation_ndcg: ndcg,
            });
            if let Some(ndcg) = ndcg {
                let improved = stopper.best.as_ref().is_none_or(|b| ndcg > b.0);
                let stop = stopper.observe(ndcg, epoch, || self.fair.clone());
                if improved {
                    on_best(&self.fair, epoch)?;
                }
                if stop {
                    break;
                }
            }
        }
        let (best_epoch, best_validation_ndcg) = match stopper.best {
            Some((value, epoch, snapshot)) => {
                self.fair = snapshot;
                (epoch, Some(value))
            }
            None => {
                on_best(&self.fair, history.len())?;
                (history.len(), None)
            }
        };
        Ok(FitOutcome {
            history,
            best_epoch,
            best_validation_ndcg,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn objective_arithmetic() {
        assert_eq!(adversarial_objective(1.25f64, &[0.5, 3.0], 0.0), 1.25);
        assert!((adversarial_objective(1.0f64, &[0.75], 10.0) - -6.5).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(AdversaryConfig::default().validate().is_ok());
        let bad = AdversaryConfig {
            lambda: -1.0,
            ..AdversaryConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AdversaryConfig {
            disc_steps: 0,
            ..AdversaryConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
