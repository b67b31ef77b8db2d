//! The attacker as a probe on planted latents, where the answer is known.

use fairrec::data::{generate_synthetic, SyntheticSpec};
use fairrec::eval::{attack_features, train_attacker, AttackerConfig};
use fairrec::numcore::{Matrix, Rng};

fn planted(strength: f64, n_users: usize) -> (Matrix<f64>, fairrec::data::Dataset) {
    let spec = SyntheticSpec {
        n_users,
        dependence_strength: strength,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec, &mut Rng::new(41, 0)).unwrap();
    (data.user_latents, data.dataset)
}

#[test]
pub fn planted_dependence_is_detected() {
    let (latents, ds) = planted(1.0, 2000);
    let r = attack_features(&latents, &ds, &AttackerConfig::default(), &Rng::new(41, 1)).unwrap();
    assert!(r[0].auc >= 0.95, "AUC {}", r[0].auc);
    assert_eq!(r[0].n_train + r[0].n_test, 2000);
}

#[test]
pub fn independent_features_look_random() {
    let (latents, ds) = planted(0.0, 5000);
    let r = attack_features(&latents, &ds, &AttackerConfig::default(), &Rng::new(41, 2)).unwrap();
    assert!((r[0].auc - 0.5).abs() <= 0.05, "AUC {}", r[0].auc);
}

#[test]
pub fn random_labels_on_informative_embeddings() {
    let (latents, _) = planted(1.0, 5000);
    let mut rng = Rng::new(41, 3);
    let labels: Vec<u32> = (0..5000).map(|_| rng.below(3) as u32).collect();
    let (_, r) = train_attacker(&latents, &labels, 3, 0, &AttackerConfig::default(), &mut rng).unwrap();
    assert!((r.auc - 0.5).abs() <= 0.05, "AUC {}", r.auc);
    assert_eq!(r.pair_aucs.len(), 3);
}
