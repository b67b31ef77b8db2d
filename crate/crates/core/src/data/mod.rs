//! Datasets of implicit feedback with per-user categorical sensitive features.

mod canonical;
mod movielens;
mod sampling;
mod split;
mod synthetic;
mod tabular;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use canonical::{read_canonical, write_canonical, Prepared};
pub use movielens::{load_movielens, MOVIELENS_AGE_CODES};
pub use sampling::{
    build_eval_candidates, freeze_candidates, sample_mask, sample_train_negative, CandidateList, FrozenCandidates,
    UserCandidates,
};
pub use split::{split_dataset, Split, SplitKind, SplitRatios, TrainMatrix};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticSpec};
pub use tabular::{load_tabular, TabularSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub timestamp: Option<i64>,
}

/// A categorical user attribute with one class index per user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensitiveFeature {
    pub name: String,
    pub labels: Vec<String>,
    pub values: Vec<u32>,
}

impl SensitiveFeature {
    pub fn cardinality(&self) -> usize {
        self.labels.len()
    }

    /// Number of users in each class.
    pub fn histogram(&self) -> Vec<usize> {
        let mut counts = vec![0; self.cardinality()];
        for &v in &self.values {
            counts[v as usize] += 1;
        }
        counts
    }
}

/// Immutable implicit-feedback dataset.
///
/// Interactions are deduplicated and sorted by `(user, item)`; a CSR index
/// gives each user's item list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    interactions: Vec<Interaction>,
    features: Vec<SensitiveFeature>,
    user_offsets: Vec<usize>,
    user_items: Vec<u32>,
}

impl Dataset {
    /// Validates indices and features, drops duplicate `(user, item)` pairs
    /// (keeping the earliest record) and builds the per-user index.
    pub fn new(
        user_ids: Vec<String>,
        item_ids: Vec<String>,
        mut interactions: Vec<Interaction>,
        features: Vec<SensitiveFeature>,
    ) -> Result<Self> {
        let (n_users, n_items) = (user_ids.len(), item_ids.len());
        if interactions.is_empty() {
            return Err(Error::Data("dataset has no interactions".into()));
        }
        if let Some(bad) = interactions
            .iter()
            .find(|x| x.user as usize >= n_users || x.item as usize >= n_items)
        {
            return Err(Error::Data(format!(
                "interaction ({}, {}) outside {n_users} users x {n_items} items",
                bad.user, bad.item
            )));
        }
        for f in &features {
            if f.cardinality() < 2 {
                return Err(Error::Data(format!("feature {} has cardinality {}", f.name, f.cardinality())));
            }
            if f.values.len() != n_users {
                return Err(Error::Data(format!(
                    "feature {} has {} values for {n_users} users",
                    f.name,
                    f.values.len()
                )));
            }
            if let Some(v) = f.values.iter().find(|&&v| v as usize >= f.cardinality()) {
                return Err(Error::Data(format!("feature {} class {v} out of range", f.name)));
            }
        }
        interactions.sort_by_key(|x| (x.user, x.item, x.timestamp.map_or((1, 0), |t| (0, t))));
        interactions.dedup_by_key(|x| (x.user, x.item));
        let mut user_offsets = vec![0usize; n_users + 1];
        for x in &interactions {
            user_offsets[x.user as usize + 1] += 1;
        }
        for u in 0..n_users {
            user_offsets[u + 1] += user_offsets[u];
        }
        let user_items = interactions.iter().map(|x| x.item).collect();
        Ok(Dataset {
            user_ids,
            item_ids,
            interactions,
            features,
            user_offsets,
            user_items,
        })
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn n_interactions(&self) -> usize {
        self.interactions.len()
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn features(&self) -> &[SensitiveFeature] {
        &self.features
    }

    pub fn feature(&self, k: usize) -> &SensitiveFeature {
        &self.features[k]
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    /// Sorted items the user interacted with (all splits).
    pub fn user_items(&self, user: u32) -> &[u32] {
        let u = user as usize;
        &self.user_items[self.user_offsets[u]..self.user_offsets[u + 1]]
    }

    /// Range of `interactions()` belonging to `user`.
    pub fn user_range(&self, user: u32) -> std::ops::Range<usize> {
        let u = user as usize;
        self.user_offsets[u]..self.user_offsets[u + 1]
    }

    pub fn has_interaction(&self, user: u32, item: u32) -> bool {
        self.user_items(user).binary_search(&item).is_ok()
    }

    pub fn sparsity(&self) -> f64 {
        1.0 - self.n_interactions() as f64 / (self.n_users() as f64 * self.n_items() as f64)
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            users: self.n_users(),
            items: self.n_items(),
            interactions: self.n_interactions(),
            sparsity: self.sparsity(),
        }
    }

    /// SHA-256 of the canonical export of the dataset.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(canonical::interactions_table(self, None).as_bytes());
        hasher.update(canonical::users_table(self).as_bytes());
        hasher.update(canonical::features_table(self).as_bytes());
        hasher.update(canonical::index_table(&self.user_ids).as_bytes());
        hasher.update(canonical::index_table(&self.item_ids).as_bytes());
        hex::encode(hasher.finalize())
    }

    /// Keeps only the named sensitive features, in the given order.
    pub fn select_features(&self, names: &[String]) -> Result<Dataset> {
        let mut features = Vec::with_capacity(names.len());
        for name in names {
            let f = self
                .features
                .iter()
                .find(|f| &f.name == name)
                .ok_or_else(|| Error::Config(format!("dataset has no feature {name:?}")))?;
            if features.iter().any(|g: &SensitiveFeature| &g.name == name) {
                return Err(Error::Config(format!("feature {name:?} listed twice")));
            }
            features.push(f.clone());
        }
        let mut out = self.clone();
        out.features = features;
        Ok(out)
    }

    /// Keeps users with at least `min_count` interactions, re-densifying
    /// user indices. The item index space is kept as is.
    pub fn filter_min_interactions(&self, min_count: usize) -> Result<Dataset> {
        if min_count == 0 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        let kept: Vec<u32> = (0..self.n_users() as u32)
            .filter(|&u| self.user_items(u).len() >= min_count)
            .collect();
        if kept.is_empty() {
            return Err(Error::Data(format!("no user has {min_count} or more interactions")));
        }
        let mut remap = vec![u32::MAX; self.n_users()];
        for (new, &old) in kept.iter().enumerate() {
            remap[old as usize] = new as u32;
        }
        let interactions = self
            .interactions
            .iter()
            .filter(|x| remap[x.user as usize] != u32::MAX)
            .map(|x| Interaction {
                user: remap[x.user as usize],
                ..*x
            })
            .collect();
        let features = self
            .features
            .iter()
            .map(|f| SensitiveFeature {
                name: f.name.clone(),
                labels: f.labels.clone(),
                values: kept.iter().map(|&u| f.values[u as usize]).collect(),
            })
            .collect();
        let user_ids = kept.iter().map(|&u| self.user_ids[u as usize].clone()).collect();
        Dataset::new(user_ids, self.item_ids.clone(), interactions, features)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub sparsity: f64,
}

impl std::fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "users={} items={} interactions={} sparsity={:.2}%",
            self.users,
            self.items,
            self.interactions,
            self.sparsity * 100.0
        )
    }
}

/// Subset of sensitive-feature indices a user asks to be filtered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Mask(u32);

impl Mask {
    pub const MAX_FEATURES: usize = 16;

    pub fn empty() -> Self {
        Mask(0)
    }

    pub fn full(k: usize) -> Self {
        assert!(k <= Self::MAX_FEATURES);
        Mask(((1u64 << k) - 1) as u32)
    }

    pub fn single(feature: usize) -> Self {
        assert!(feature < Self::MAX_FEATURES);
        Mask(1 << feature)
    }

    pub fn from_bits(bits: u32) -> Self {
        Mask(bits)
    }

    pub fn from_features(features: &[usize]) -> Self {
        features.iter().fold(Mask::empty(), |m, &f| m.with(f))
    }

    pub fn with(self, feature: usize) -> Self {
        assert!(feature < Self::MAX_FEATURES);
        Mask(self.0 | (1 << feature))
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn contains(self, feature: usize) -> bool {
        feature < 32 && self.0 & (1 << feature) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Selected feature indices in increasing order.
    pub fn features(self) -> impl Iterator<Item = usize> {
        (0..32).filter(move |&k| self.0 & (1 << k) != 0)
    }

    pub fn is_subset_of_k(self, k: usize) -> bool {
        self.0 & !(Mask::full(k).0) == 0
    }

    /// Every nonempty subset of `k` features, ordered by bit pattern.
    pub fn all_nonempty(k: usize) -> Vec<Mask> {
        (1..(1u32 << k)).map(Mask).collect()
    }

    /// Short label built from feature names, e.g. `G+A`.
    pub fn label(self, names: &[String]) -> String {
        if self.is_empty() {
            return "none".into();
        }
        self.features()
            .map(|k| names.get(k).cloned().unwrap_or_else(|| k.to_string()))
            .collect::<Vec<_>>()
            .join("+")
    }

    pub fn parse(text: &str, names: &[String]) -> Result<Mask> {
        if text == "none" || text.is_empty() {
            return Ok(Mask::empty());
        }
        let mut mask = Mask::empty();
        let mut seen = BTreeSet::new();
        for part in text.split('+') {
            let k = names
                .iter()
                .position(|n| n == part)
                .or_else(|| part.parse().ok().filter(|&k: &usize| k < names.len()))
                .ok_or_else(|| Error::Config(format!("unknown feature {part:?} in mask {text:?}")))?;
            if !seen.insert(k) {
                return Err(Error::Config(format!("feature {part:?} repeated in mask")));
            }
            mask = mask.with(k);
        }
        Ok(mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy(counts: &[usize], n_items: usize) -> Dataset {
        let mut inter = Vec::new();
        for (u, &c) in counts.iter().enumerate() {
            for i in 0..c {
                inter.push(Interaction {
                    user: u as u32,
                    item: i as u32,
                    timestamp: None,
                });
            }
        }
        let n = counts.len();
        Dataset::new(
            (0..n).map(|u| format!("u{u}")).collect(),
            (0..n_items).map(|i| format!("i{i}")).collect(),
            inter,
            vec![SensitiveFeature {
                name: "g".into(),
                labels: vec!["a".into(), "b".into()],
                values: (0..n as u32).map(|u| u % 2).collect(),
            }],
        )
        .unwrap()
    }

    #[test]
    fn duplicates_are_removed() {
        let x = |u, i| Interaction {
            user: u,
            item: i,
            timestamp: None,
        };
        let d = Dataset::new(
            vec!["a".into()],
            vec!["x".into(), "y".into()],
            vec![x(0, 1), x(0, 0), x(0, 1)],
            vec![],
        )
        .unwrap();
        assert_eq!(d.n_interactions(), 2);
        assert_eq!(d.user_items(0), &[0, 1]);
    }

    #[test]
    fn min_interaction_filter() {
        let d = toy(&[2, 4, 7], 10);
        let f = d.filter_min_interactions(4).unwrap();
        assert_eq!(f.n_users(), 2);
        assert_eq!(f.user_ids(), &["u1".to_string(), "u2".to_string()]);
        assert_eq!(f.feature(0).values, vec![1, 0]);
        assert_eq!(d.filter_min_interactions(1).unwrap(), d);
        assert!(d.filter_min_interactions(8).is_err());
    }

    #[test]
    fn mask_helpers() {
        let names = vec!["G".to_string(), "A".to_string(), "O".to_string()];
        let m = Mask::parse("G+O", &names).unwrap();
        assert_eq!(m.features().collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(m.label(&names), "G+O");
        assert_eq!(Mask::all_nonempty(3).len(), 7);
        assert!(Mask::parse("X", &names).is_err());
        assert!(Mask::full(2).is_subset_of_k(2));
        assert!(!Mask::full(3).is_subset_of_k(2));
    }
}
