mod common;

use common::values_of;
use fairrec::data::{generate_synthetic, split_dataset, Dataset, Mask, Split, SplitRatios, SyntheticSpec};
use fairrec::fairness::{count_filters, AdversarialTrainer, AdversaryConfig, Discriminator, FairModel, FilterBank, FilterMethod};
use fairrec::numcore::{Matrix, Rng};
use fairrec::recmodels::{fit_plain, BatchPlan, ModelKind, RecModel, TrainConfig, TrainRngs};
use proptest::prelude::*;

fn small_data(cards: Vec<usize>) -> (Dataset, Split) {
    let spec = SyntheticSpec {
        n_users: 120,
        n_items: 20,
        feature_cardinalities: cards,
        interactions_per_user: 5,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec, &mut Rng::new(31, 0)).unwrap();
    let split = split_dataset(&data.dataset, SplitRatios::default(), &mut Rng::new(31, 1)).unwrap();
    (data.dataset, split)
}

fn fair(ds: &Dataset, method: FilterMethod, seed: u64) -> FairModel<f64> {
    let model = RecModel::new(ModelKind::Pmf, ds.n_users(), ds.n_items(), 8, None, &mut Rng::new(seed, 0)).unwrap();
    let cards: Vec<usize> = ds.features().iter().map(|f| f.cardinality()).collect();
    FairModel::new(model, method, &cards, &mut Rng::new(seed, 1)).unwrap()
}

#[test]
pub fn bank_sizes_for_one_to_five_features() {
    for k in 1..=5usize {
        let sm = FilterBank::<f64>::new(FilterMethod::Separate, k, 4, &mut Rng::new(1, 0)).unwrap();
        let cm = FilterBank::<f64>::new(FilterMethod::Combination, k, 4, &mut Rng::new(1, 0)).unwrap();
        assert_eq!(sm.len(), (1 << k) - 1);
        assert_eq!(cm.len(), k);
        assert_eq!(count_filters(FilterMethod::Separate, k).unwrap(), sm.len());
        assert_eq!(count_filters(FilterMethod::Combination, k).unwrap(), cm.len());
    }
    // two features (age, gender): exactly f_A, f_G and f_{A,G}
    let sm = FilterBank::<f64>::new(FilterMethod::Separate, 2, 4, &mut Rng::new(1, 0)).unwrap();
    let keys: Vec<Mask> = sm.keys().collect();
    assert_eq!(keys, vec![Mask::single(0), Mask::single(1), Mask::from_features(&[0, 1])]);
}

#[test]
pub fn combination_straight_line_mean() {
    let mut bank = FilterBank::<f64>::new(FilterMethod::Combination, 2, 2, &mut Rng::new(2, 0)).unwrap();
    let f0 = bank.filter_mut(Mask::single(0)).unwrap();
    f0.set_layer(0, &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]).unwrap();
    f0.set_layer(1, &[2.0, 0.0, 0.0, 2.0], &[1.0, -1.0]).unwrap();
    let f1 = bank.filter_mut(Mask::single(1)).unwrap();
    f1.set_layer(0, &[0.0, 1.0, 1.0, 0.0], &[0.5, 0.0]).unwrap();
    f1.set_layer(1, &[1.0, 1.0, 0.0, -1.0], &[0.0, 0.0]).unwrap();
    let r = [0.5, -2.0];
    let leaky = |v: f64| if v > 0.0 { v } else { 0.01 * v };
    // f0: h = leaky(r) = (0.5, -0.02); out = 2h + (1, -1) = (2.0, -1.04)
    let out0 = [2.0 * leaky(0.5) + 1.0, 2.0 * leaky(-2.0) - 1.0];
    // f1: h = leaky((r1 + 0.5, r0)) = (-0.015, 0.5); out = (h0 + h1, -h1)
    let h = [leaky(-2.0 + 0.5), leaky(0.5)];
    let out1 = [h[0] + h[1], -h[1]];
    let both = bank.apply_one(Mask::full(2), &r).unwrap();
    for j in 0..2 {
        assert!((both[j] - (out0[j] + out1[j]) / 2.0).abs() < 1e-15);
    }
    assert_eq!(bank.apply_one(Mask::single(0), &r).unwrap(), out0.to_vec());
    assert_eq!(bank.apply_one(Mask::single(1), &r).unwrap(), out1.to_vec());
}

/// CM with one selected feature is that feature's filter; the empty mask is the identity.
pub fn lone_filter_case(k: usize, f: usize, seed: u64, r: &[f64]) {
    let mut rng = Rng::new(seed, 0);
    let cm = FilterBank::<f64>::new(FilterMethod::Combination, k, r.len(), &mut rng).unwrap();
    let sm = FilterBank::<f64>::new(FilterMethod::Separate, k, r.len(), &mut rng).unwrap();
    let lone = cm.filter(Mask::single(f)).unwrap().forward_one(r).unwrap();
    assert_eq!(cm.apply_one(Mask::single(f), r).unwrap(), lone);
    assert_eq!(cm.apply_one(Mask::empty(), r).unwrap(), r);
    assert_eq!(sm.apply_one(Mask::empty(), r).unwrap(), r);
    assert_eq!(sm.apply_one(Mask::full(k), r).unwrap().len(), r.len());
}

proptest! {
    #[test]
    fn lone_filter_and_empty_mask(k in 1usize..5, f in 0usize..5, seed in any::<u64>(), r in prop::collection::vec(-3.0f64..3.0, 6)) {
        prop_assume!(f < k);
        lone_filter_case(k, f, seed, &r);
    }
}

#[test]
pub fn freeze_contract() {
    let (ds, split) = small_data(vec![2, 3]);
    for method in [FilterMethod::Separate, FilterMethod::Combination] {
        let mut tr = AdversarialTrainer::new(
            fair(&ds, method, 3),
            &ds,
            &split,
            TrainConfig::default(),
            AdversaryConfig::default(),
            TrainRngs::new(3),
        )
        .unwrap();
        let plan = BatchPlan::new(&ds, &split, 32, &mut Rng::new(3, 9)).unwrap();
        for batch in plan.batches.iter().take(4) {
            let mask = Mask::full(2);
            let discs: Vec<_> = tr.fair.discriminators.iter().map(values_of).collect();
            let (model, bank) = (values_of(&tr.fair.model), values_of(&tr.fair.bank));
            tr.recommender_step(batch, mask).unwrap();
            let after: Vec<_> = tr.fair.discriminators.iter().map(values_of).collect();
            assert_eq!(discs, after, "discriminators moved during the recommender step");
            assert_ne!(model, values_of(&tr.fair.model));
            assert_ne!(bank, values_of(&tr.fair.bank));

            let (model, bank) = (values_of(&tr.fair.model), values_of(&tr.fair.bank));
            tr.discriminator_steps(batch, mask).unwrap();
            assert_eq!(model, values_of(&tr.fair.model), "recommender moved during discriminator steps");
            assert_eq!(bank, values_of(&tr.fair.bank), "filters moved during discriminator steps");
            assert_ne!(after, tr.fair.discriminators.iter().map(values_of).collect::<Vec<_>>());
            for d in &tr.fair.discriminators {
                let p = d.probabilities(&tr.fair.embeddings(mask).unwrap()).unwrap();
                for row in p.iter_rows() {
                    assert!(row.iter().all(|&v| v >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
pub fn inactive_filters_untouched() {
    let (ds, split) = small_data(vec![2, 3]);
    let mut tr = AdversarialTrainer::new(
        fair(&ds, FilterMethod::Separate, 4),
        &ds,
        &split,
        TrainConfig::default(),
        AdversaryConfig::default(),
        TrainRngs::new(4),
    )
    .unwrap();
    let plan = BatchPlan::new(&ds, &split, 32, &mut Rng::new(4, 9)).unwrap();
    let other = values_of(tr.fair.bank.filter(Mask::single(1)).unwrap());
    tr.recommender_step(&plan.batches[0], Mask::single(0)).unwrap();
    assert_eq!(other, values_of(tr.fair.bank.filter(Mask::single(1)).unwrap()));
}

/// With every mask empty the adversarial loop is plain BPR training.
#[test]
pub fn empty_masks_reduce_to_plain_training() {
    let (ds, split) = small_data(vec![2]);
    let config = TrainConfig {
        batch_size: 32,
        max_epochs: 3,
        ..TrainConfig::default()
    };
    let mut plain = RecModel::new(ModelKind::BiasedMf, ds.n_users(), ds.n_items(), 8, None, &mut Rng::new(5, 0)).unwrap();
    let adv_init = plain.clone();
    fit_plain(&mut plain, &ds, &split, None, &config, &mut TrainRngs::new(5), &mut |_, _| Ok(())).unwrap();

    let fair = FairModel::new(adv_init, FilterMethod::Separate, &[2], &mut Rng::new(5, 1)).unwrap();
    let adversary = AdversaryConfig {
        mask_probability: 0.0,
        ..AdversaryConfig::default()
    };
    let mut tr = AdversarialTrainer::new(fair, &ds, &split, config, adversary, TrainRngs::new(5)).unwrap();
    tr.fit(None, Mask::full(1), &mut |_, _| Ok(())).unwrap();
    assert_eq!(values_of(&plain), values_of(&tr.fair.model));
}

/// With lambda = 0 the discriminators cannot influence the recommender.
#[test]
pub fn zero_lambda_ignores_discriminators() {
    let (ds, split) = small_data(vec![2, 3]);
    let config = TrainConfig {
        batch_size: 32,
        max_epochs: 2,
        ..TrainConfig::default()
    };
    let adversary = AdversaryConfig {
        lambda: 0.0,
        disc_steps: 2,
        ..AdversaryConfig::default()
    };
    let run = |disc_seed: u64| {
        let mut f = fair(&ds, FilterMethod::Combination, 6);
        let mut rng = Rng::new(disc_seed, 0);
        f.discriminators = vec![
            Discriminator::new("disc", 0, 8, 2, &mut rng).unwrap(),
            Discriminator::new("disc", 1, 8, 3, &mut rng).unwrap(),
        ];
        let mut rngs = TrainRngs::new(6);
        rngs.disc = Rng::new(disc_seed, 1);
        let mut tr = AdversarialTrainer::new(f, &ds, &split, config.clone(), adversary.clone(), rngs).unwrap();
        tr.fit(None, Mask::full(2), &mut |_, _| Ok(())).unwrap();
        (values_of(&tr.fair.model), values_of(&tr.fair.bank))
    };
    assert_eq!(run(100), run(200));
}

#[test]
pub fn fair_model_checkpoint_round_trip() {
    let (ds, _) = small_data(vec![2, 3]);
    let f = fair(&ds, FilterMethod::Separate, 7);
    let mut buf = Vec::new();
    f.to_checkpoint(7).write_to(&mut buf).unwrap();
    let back = FairModel::<f64>::from_checkpoint(&fairrec::numcore::Checkpoint::read_from(&buf[..]).unwrap(), None).unwrap();
    assert_eq!(values_of(&f.model), values_of(&back.model));
    assert_eq!(values_of(&f.bank), values_of(&back.bank));
    for (a, b) in f.discriminators.iter().zip(&back.discriminators) {
        assert_eq!(values_of(a), values_of(b));
    }
    let x = Matrix::from_rows(&[vec![0.1; 8]]).unwrap();
    assert_eq!(f.bank.apply(Mask::full(2), &x).unwrap(), back.bank.apply(Mask::full(2), &x).unwrap());
}
