use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numcore::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SplitKind {
    Train,
    Validation,
    Test,
}

impl SplitKind {
    pub const ALL: [SplitKind; 3] = [SplitKind::Train, SplitKind::Validation, SplitKind::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Validation => "validation",
            SplitKind::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitKind::Train),
            "validation" => Ok(SplitKind::Validation),
            "test" => Ok(SplitKind::Test),
            other => Err(Error::Data(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.validation, self.test];
        if r.iter().any(|&x| !(x > 0.0) || !x.is_finite()) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios {r:?} must be positive and sum to 1")));
        }
        Ok(())
    }

    /// Per-split counts for a user with `n` interactions.
    ///
    /// Three or more interactions: largest-remainder apportionment (ties go
    /// to the earlier split) with at least one training interaction. Fewer
    /// than three: the first goes to train and the rest are apportioned
    /// between validation and test in the same way.
    pub fn counts(&self, n: usize) -> [usize; 3] {
        if n == 0 {
            return [0, 0, 0];
        }
        if n < 3 {
            let [v, t] = largest_remainder(n - 1, &[self.validation, self.test]);
            return [1, v, t];
        }
        let mut c = largest_remainder(n, &[self.train, self.validation, self.test]);
        if c[0] == 0 {
            let donor = if c[1] >= c[2] { 1 } else { 2 };
            c[donor] -= 1;
            c[0] = 1;
        }
        c
    }
}

fn largest_remainder<const N: usize>(n: usize, weights: &[f64; N]) -> [usize; N] {
    let total: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut counts = [0usize; N];
    for (c, q) in counts.iter_mut().zip(&quotas) {
        *c = q.floor() as usize;
    }
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..N).collect();
    // stable sort keeps earlier splits first among equal remainders
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap()
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Split label for every interaction of a dataset, aligned with
/// [`Dataset::interactions`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    assignment: Vec<SplitKind>,
    /// Users left without any validation or test interaction.
    train_only_users: Vec<u32>,
}

impl Split {
    pub fn from_assignment(dataset: &Dataset, assignment: Vec<SplitKind>) -> Result<Self> {
        if assignment.len() != dataset.n_interactions() {
            return Err(Error::Data(format!(
                "split has {} labels for {} interactions",
                assignment.len(),
                dataset.n_interactions()
            )));
        }
        let mut train_only_users = Vec::new();
        for u in 0..dataset.n_users() as u32 {
            let labels = &assignment[dataset.user_range(u)];
            if !labels.is_empty() && !labels.contains(&SplitKind::Train) {
                return Err(Error::Data(format!("user {u} has no training interaction")));
            }
            if labels.iter().all(|&k| k == SplitKind::Train) {
                train_only_users.push(u);
            }
        }
        Ok(Split {
            assignment,
            train_only_users,
        })
    }

    pub fn assignment(&self) -> &[SplitKind] {
        &self.assignment
    }

    pub fn kind(&self, interaction: usize) -> SplitKind {
        self.assignment[interaction]
    }

    pub fn train_only_users(&self) -> &[u32] {
        &self.train_only_users
    }

    /// Interaction indices assigned to `kind`.
    pub fn indices(&self, kind: SplitKind) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &k)| k == kind)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count(&self, kind: SplitKind) -> usize {
        self.assignment.iter().filter(|&&k| k == kind).count()
    }

    /// Items of `user` in `kind`, sorted.
    pub fn user_items(&self, dataset: &Dataset, user: u32, kind: SplitKind) -> Vec<u32> {
        dataset
            .user_range(user)
            .filter(|&i| self.assignment[i] == kind)
            .map(|i| dataset.interactions()[i].item)
            .collect()
    }
}

/// Per-user stratified random split; deterministic under a fixed stream.
pub fn split_dataset(dataset: &Dataset, ratios: SplitRatios, rng: &mut Rng) -> Result<Split> {
    ratios.validate()?;
    let mut assignment = vec![SplitKind::Train; dataset.n_interactions()];
    for u in 0..dataset.n_users() as u32 {
        let range = dataset.user_range(u);
        let mut idx: Vec<usize> = range.collect();
        let [n_train, n_val, _] = ratios.counts(idx.len());
        if idx.len() >= 3 {
            rng.shuffle(&mut idx);
        } else if idx.len() == 2 {
            // keep a random interaction for training
            if rng.bernoulli(0.5) {
                idx.swap(0, 1);
            }
        }
        for (pos, &i) in idx.iter().enumerate() {
            assignment[i] = if pos < n_train {
                SplitKind::Train
            } else if pos < n_train + n_val {
                SplitKind::Validation
            } else {
                SplitKind::Test
            };
        }
    }
    Split::from_assignment(dataset, assignment)
}

/// Training-split interactions as sparse rows (per user) and columns (per
/// item), the inputs of interaction-encoding models.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainMatrix {
    pub user_items: Vec<Vec<u32>>,
    pub item_users: Vec<Vec<u32>>,
}

impl TrainMatrix {
    pub fn new(dataset: &Dataset, split: &Split) -> Self {
        let mut user_items = vec![Vec::new(); dataset.n_users()];
        let mut item_users = vec![Vec::new(); dataset.n_items()];
        for (i, x) in dataset.interactions().iter().enumerate() {
            if split.kind(i) == SplitKind::Train {
                user_items[x.user as usize].push(x.item);
                item_users[x.item as usize].push(x.user);
            }
        }
        TrainMatrix { user_items, item_users }
    }

    pub fn n_users(&self) -> usize {
        self.user_items.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_users.len()
    }
}
