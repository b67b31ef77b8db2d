use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::TrainMatrix;
use crate::error::{Error, Result};
use crate::numcore::matrix::dot;
use crate::numcore::{
    l2_penalty, Activation, Checkpoint, Matrix, Mlp, MlpCache, MlpSpec, ParamTensor, Parameterized, Rng, Scalar,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    Pmf,
    BiasedMf,
    Deep,
    Dmf,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Pmf, ModelKind::BiasedMf, ModelKind::Deep, ModelKind::Dmf];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Pmf => "pmf",
            ModelKind::BiasedMf => "biasedmf",
            ModelKind::Deep => "deep",
            ModelKind::Dmf => "dmf",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pmf" => Ok(ModelKind::Pmf),
            "biasedmf" | "biased-mf" | "biased_mf" => Ok(ModelKind::BiasedMf),
            "deep" | "deepmodel" => Ok(ModelKind::Deep),
            "dmf" => Ok(ModelKind::Dmf),
            other => Err(Error::Config(format!("unknown model {other:?}"))),
        }
    }
}

const EMBEDDING_STD: f64 = 0.01;
const DEEP_DROPOUT: f64 = 0.2;

/// Sparse-input encoder: `out = W2 · relu(Σ_{i ∈ row} E[i] + b) + b2`.
#[derive(Debug, Clone)]
struct Tower<T: Scalar> {
    input: ParamTensor<T>,
    input_bias: ParamTensor<T>,
    output: Mlp<T>,
}

#[derive(Debug, Clone)]
struct TowerCache<T> {
    rows: Vec<u32>,
    pre: Matrix<T>,
    out: MlpCache<T>,
}

impl<T: Scalar> Tower<T> {
    fn new(name: &str, n_in: usize, dim: usize, rng: &mut Rng) -> Result<Self> {
        let bound = (6.0 / (n_in + dim) as f64).sqrt();
        let values = (0..n_in * dim)
            .map(|_| T::lit((2.0 * rng.uniform() - 1.0) * bound))
            .collect();
        Ok(Tower {
            input: ParamTensor::new(format!("{name}.input"), vec![n_in, dim], values, true)?,
            input_bias: ParamTensor::zeros(format!("{name}.input_bias"), vec![dim]),
            output: Mlp::new(format!("{name}.output"), MlpSpec::new(vec![dim, dim], Activation::Identity), rng)?,
        })
    }

    fn hidden(&self, lists: &[Vec<u32>], rows: &[u32]) -> Matrix<T> {
        let dim = self.input_bias.numel();
        let mut pre = Matrix::zeros(rows.len(), dim);
        for (b, &r) in rows.iter().enumerate() {
            let out = pre.row_mut(b);
            out.copy_from_slice(self.input_bias.values());
            for &i in &lists[r as usize] {
                for (o, &w) in out.iter_mut().zip(self.input.row(i as usize)) {
                    *o += w;
                }
            }
        }
        pre
    }

    fn relu(pre: &Matrix<T>) -> Matrix<T> {
        let mut h = pre.clone();
        h.as_mut_slice().iter_mut().for_each(|v| *v = v.max(T::zero()));
        h
    }

    fn forward_infer(&self, lists: &[Vec<u32>], rows: &[u32]) -> Result<Matrix<T>> {
        self.output.forward_infer(&Self::relu(&self.hidden(lists, rows)))
    }

    fn forward_train(&self, lists: &[Vec<u32>], rows: &[u32], rng: &mut Rng) -> Result<(Matrix<T>, TowerCache<T>)> {
        let pre = self.hidden(lists, rows);
        let (out, cache) = self.output.forward_train(&Self::relu(&pre), rng)?;
        Ok((
            out,
            TowerCache {
                rows: rows.to_vec(),
                pre,
                out: cache,
            },
        ))
    }

    fn backward(&mut self, lists: &[Vec<u32>], cache: &TowerCache<T>, grad: &Matrix<T>) -> Result<()> {
        let mut dh = self.output.backward(&cache.out, grad)?;
        for (v, &p) in dh.as_mut_slice().iter_mut().zip(cache.pre.as_slice()) {
            if p <= T::zero() {
                *v = T::zero();
            }
        }
        for (b, &r) in cache.rows.iter().enumerate() {
            let g = dh.row(b);
            for (bg, &x) in self.input_bias.grad_mut().iter_mut().zip(g) {
                *bg += x;
            }
            for &i in &lists[r as usize] {
                for (wg, &x) in self.input.grad_row_mut(i as usize).iter_mut().zip(g) {
                    *wg += x;
                }
            }
        }
        Ok(())
    }

    fn params(&self) -> Vec<&ParamTensor<T>> {
        let mut out = vec![&self.input, &self.input_bias];
        out.extend(self.output.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor<T>> {
        let mut out = vec![&mut self.input, &mut self.input_bias];
        out.extend(self.output.params_mut());
        out
    }
}

#[derive(Debug, Clone)]
enum Body<T: Scalar> {
    /// PMF and BiasedMF.
    Factorization {
        users: ParamTensor<T>,
        items: ParamTensor<T>,
        biases: Option<[ParamTensor<T>; 3]>,
    },
    Deep {
        users: ParamTensor<T>,
        items: ParamTensor<T>,
        scorer: Mlp<T>,
    },
    Dmf {
        user_tower: Tower<T>,
        item_tower: Tower<T>,
        train: Arc<TrainMatrix>,
    },
}

/// A recommender of one of the four baseline kinds.
#[derive(Debug, Clone)]
pub struct RecModel<T: Scalar> {
    kind: ModelKind,
    dim: usize,
    n_users: usize,
    n_items: usize,
    body: Body<T>,
}

/// Saved by [`RecModel::user_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub enum UserCache<T> {
    Rows(Vec<u32>),
    Tower(TowerCacheHandle<T>),
}

#[derive(Debug, Clone)]
pub struct TowerCacheHandle<T>(TowerCache<T>);

/// Saved by [`RecModel::score_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ScoreCache<T> {
    users: Vec<u32>,
    items: Vec<u32>,
    reps: Matrix<T>,
    inner: ScoreInner<T>,
}

#[derive(Debug, Clone)]
enum ScoreInner<T> {
    Dot,
    Mlp(MlpCache<T>),
    Tower { item_reps: Matrix<T>, cache: TowerCache<T> },
}

fn normal_table<T: Scalar>(name: &str, rows: usize, dim: usize, rng: &mut Rng) -> Result<ParamTensor<T>> {
    let values = (0..rows * dim).map(|_| T::lit(rng.normal(0.0, EMBEDDING_STD))).collect();
    ParamTensor::new(name, vec![rows, dim], values, true)
}

impl<T: Scalar> RecModel<T> {
    /// Freshly initialised model. DMF needs the training interactions, which
    /// are its encoder inputs.
    pub fn new(
        kind: ModelKind,
        n_users: usize,
        n_items: usize,
        dim: usize,
        train: Option<Arc<TrainMatrix>>,
        rng: &mut Rng,
    ) -> Result<Self> {
        if dim == 0 || n_users == 0 || n_items == 0 {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        let body = match kind {
            ModelKind::Pmf | ModelKind::BiasedMf => Body::Factorization {
                users: normal_table("user_embedding", n_users, dim, rng)?,
                items: normal_table("item_embedding", n_items, dim, rng)?,
                biases: (kind == ModelKind::BiasedMf).then(|| {
                    [
                        ParamTensor::zeros("user_bias", vec![n_users]),
                        ParamTensor::zeros("item_bias", vec![n_items]),
                        ParamTensor::zeros("global_bias", vec![1]),
                    ]
                }),
            },
            ModelKind::Deep => Body::Deep {
                users: normal_table("user_embedding", n_users, dim, rng)?,
                items: normal_table("item_embedding", n_items, dim, rng)?,
                scorer: Mlp::new("deep_scorer", Self::deep_spec(dim), rng)?,
            },
            ModelKind::Dmf => {
                let train =
                    train.ok_or_else(|| Error::Config("DMF needs the training interaction matrix".into()))?;
                if train.n_users() != n_users || train.n_items() != n_items {
                    return Err(Error::shape(
                        "DMF interaction matrix",
                        format!("{n_users}x{n_items}"),
                        format!("{}x{}", train.n_users(), train.n_items()),
                    ));
                }
                Body::Dmf {
                    user_tower: Tower::new("user_tower", n_items, dim, rng)?,
                    item_tower: Tower::new("item_tower", n_users, dim, rng)?,
                    train,
                }
            }
        };
        Ok(RecModel {
            kind,
            dim,
            n_users,
            n_items,
            body,
        })
    }

    /// Scoring network of the deep model: `2d -> d -> d/2 -> 1`, ReLU, dropout 0.2.
    pub fn deep_spec(dim: usize) -> MlpSpec {
        MlpSpec::new(vec![2 * dim, dim, (dim / 2).max(1), 1], Activation::Relu).with_dropout(DEEP_DROPOUT)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    fn check_ids(&self, users: &[u32], items: &[u32]) -> Result<()> {
        if let Some(u) = users.iter().find(|&&u| u as usize >= self.n_users) {
            return Err(Error::shape("user index", format!("< {}", self.n_users), u));
        }
        if let Some(i) = items.iter().find(|&&i| i as usize >= self.n_items) {
            return Err(Error::shape("item index", format!("< {}", self.n_items), i));
        }
        Ok(())
    }

    /// User representations in inference mode.
    pub fn user_reps(&self, users: &[u32]) -> Result<Matrix<T>> {
        self.check_ids(users, &[])?;
        match &self.body {
            Body::Factorization { users: table, .. } | Body::Deep { users: table, .. } => Ok(gather(table, users)),
            Body::Dmf { user_tower, train, .. } => user_tower.forward_infer(&train.user_items, users),
        }
    }

    /// Single-user convenience for [`RecModel::user_reps`].
    pub fn user_representation(&self, user: u32) -> Result<Vec<T>> {
        Ok(self.user_reps(&[user])?.into_vec())
    }

    /// User representations in training mode, with a cache for backward.
    pub fn user_forward(&self, users: &[u32], rng: &mut Rng) -> Result<(Matrix<T>, UserCache<T>)> {
        self.check_ids(users, &[])?;
        match &self.body {
            Body::Factorization { users: table, .. } | Body::Deep { users: table, .. } => {
                Ok((gather(table, users), UserCache::Rows(users.to_vec())))
            }
            Body::Dmf { user_tower, train, .. } => {
                let (out, cache) = user_tower.forward_train(&train.user_items, users, rng)?;
                Ok((out, UserCache::Tower(TowerCacheHandle(cache))))
            }
        }
    }

    pub fn user_backward(&mut self, cache: &UserCache<T>, grad: &Matrix<T>) -> Result<()> {
        if grad.cols() != self.dim {
            return Err(Error::shape("user representation gradient", self.dim, grad.cols()));
        }
        match (&mut self.body, cache) {
            (Body::Factorization { users: table, .. }, UserCache::Rows(rows))
            | (Body::Deep { users: table, .. }, UserCache::Rows(rows)) => {
                scatter_add(table, rows, grad);
                Ok(())
            }
            (Body::Dmf { user_tower, train, .. }, UserCache::Tower(h)) => {
                let train = Arc::clone(train);
                user_tower.backward(&train.user_items, &h.0, grad)
            }
            _ => Err(Error::StaleCache("user cache from a different model kind".into())),
        }
    }

    fn check_reps(&self, reps: &Matrix<T>, n: usize) -> Result<()> {
        if reps.cols() != self.dim || reps.rows() != n {
            return Err(Error::shape(
                "user representations",
                format!("{n}x{}", self.dim),
                format!("{}x{}", reps.rows(), reps.cols()),
            ));
        }
        Ok(())
    }

    /// Scores row `b` of `reps` (belonging to `users[b]`) against `items[b]`.
    /// `rng` drives dropout; `None` means inference mode.
    pub fn score_forward(
        &self,
        users: &[u32],
        reps: &Matrix<T>,
        items: &[u32],
        rng: Option<&mut Rng>,
    ) -> Result<(Vec<T>, ScoreCache<T>)> {
        self.check_ids(users, items)?;
        self.check_reps(reps, users.len())?;
        if items.len() != users.len() {
            return Err(Error::shape("score batch", users.len(), items.len()));
        }
        let (scores, inner) = match &self.body {
            Body::Factorization { items: table, biases, .. } => {
                let mut scores: Vec<T> = (0..users.len())
                    .map(|b| dot(reps.row(b), table.row(items[b] as usize)))
                    .collect();
                if let Some([ub, ib, gb]) = biases {
                    for (b, s) in scores.iter_mut().enumerate() {
                        *s += ub.values()[users[b] as usize] + ib.values()[items[b] as usize] + gb.values()[0];
                    }
                }
                (scores, ScoreInner::Dot)
            }
            Body::Deep { items: table, scorer, .. } => {
                let input = reps.hconcat(&gather(table, items))?;
                match rng {
                    Some(rng) => {
                        let (out, cache) = scorer.forward_train(&input, rng)?;
                        (out.into_vec(), ScoreInner::Mlp(cache))
                    }
                    None => (scorer.forward_infer(&input)?.into_vec(), ScoreInner::Dot),
                }
            }
            Body::Dmf { item_tower, train, .. } => {
                let mut scratch = Rng::new(0, 0);
                let (item_reps, cache) = item_tower.forward_train(&train.item_users, items, rng.unwrap_or(&mut scratch))?;
                let scores = (0..users.len()).map(|b| dot(reps.row(b), item_reps.row(b))).collect();
                (scores, ScoreInner::Tower { item_reps, cache })
            }
        };
        Ok((
            scores,
            ScoreCache {
                users: users.to_vec(),
                items: items.to_vec(),
                reps: reps.clone(),
                inner,
            },
        ))
    }

    /// Accumulates parameter gradients for `d loss / d score` and returns
    /// the gradient with respect to the user representations.
    pub fn score_backward(&mut self, cache: &ScoreCache<T>, dscores: &[T]) -> Result<Matrix<T>> {
        let n = cache.users.len();
        if dscores.len() != n {
            return Err(Error::shape("score gradient", n, dscores.len()));
        }
        let dim = self.dim;
        let mut drep = Matrix::zeros(n, dim);
        match (&mut self.body, &cache.inner) {
            (Body::Factorization { items: table, biases, .. }, ScoreInner::Dot) => {
                for b in 0..n {
                    let g = dscores[b];
                    let item = cache.items[b] as usize;
                    for (d, &v) in drep.row_mut(b).iter_mut().zip(table.row(item)) {
                        *d = g * v;
                    }
                    for (vg, &r) in table.grad_row_mut(item).iter_mut().zip(cache.reps.row(b)) {
                        *vg += g * r;
                    }
                    if let Some([ub, ib, gb]) = biases {
                        ub.grad_mut()[cache.users[b] as usize] += g;
                        ib.grad_mut()[item] += g;
                        gb.grad_mut()[0] += g;
                    }
                }
            }
            (Body::Deep { items: table, scorer, .. }, ScoreInner::Mlp(mc)) => {
                let grad_out = Matrix::from_vec(n, 1, dscores.to_vec())?;
                let dx = scorer.backward(mc, &grad_out)?;
                let (du, dv) = dx.hsplit(dim);
                drep = du;
                scatter_add(table, &cache.items, &dv);
            }
            (Body::Dmf { item_tower, train, .. }, ScoreInner::Tower { item_reps, cache: tc }) => {
                let mut dq = Matrix::zeros(n, dim);
                for b in 0..n {
                    let g = dscores[b];
                    for (d, &q) in drep.row_mut(b).iter_mut().zip(item_reps.row(b)) {
                        *d = g * q;
                    }
                    for (d, &r) in dq.row_mut(b).iter_mut().zip(cache.reps.row(b)) {
                        *d = g * r;
                    }
                }
                let train = Arc::clone(train);
                item_tower.backward(&train.item_users, tc, &dq)?;
            }
            _ => return Err(Error::StaleCache("score cache was not produced in training mode".into())),
        }
        Ok(drep)
    }

    /// Score of one `(representation, item)` pair in inference mode.
    pub fn score(&self, user: u32, rep: &[T], item: u32) -> Result<T> {
        let reps = Matrix::row_vector(rep);
        Ok(self.score_forward(&[user], &reps, &[item], None)?.0[0])
    }

    /// Snapshot for ranking many candidates; DMF item encodings are computed once.
    pub fn scorer(&self) -> Result<Scorer<'_, T>> {
        let item_reps = match &self.body {
            Body::Dmf { item_tower, train, .. } => {
                let all: Vec<u32> = (0..self.n_items as u32).collect();
                Some(item_tower.forward_infer(&train.item_users, &all)?)
            }
            _ => None,
        };
        Ok(Scorer { model: self, item_reps })
    }

    /// `coefficient * Σ ‖·‖²` over the embedding rows and biases a batch
    /// touches (averaged over the `n_triples` triples) plus all dense
    /// network weights; gradients are accumulated.
    pub fn l2_batch(&mut self, users: &[u32], items: &[u32], n_triples: usize, coefficient: T) -> T {
        if coefficient == T::zero() {
            return T::zero();
        }
        let scale = coefficient / T::lit(n_triples.max(1) as f64);
        let mut total = T::zero();
        let rows = |table: &mut ParamTensor<T>, ids: &[u32]| {
            let mut sum = T::zero();
            for &id in ids {
                let row: Vec<T> = table.row(id as usize).to_vec();
                for (g, v) in table.grad_row_mut(id as usize).iter_mut().zip(&row) {
                    sum += *v * *v;
                    *g += (scale + scale) * *v;
                }
            }
            sum * scale
        };
        match &mut self.body {
            Body::Factorization { users: ut, items: it, biases } => {
                total += rows(ut, users);
                total += rows(it, items);
                if let Some([ub, ib, _]) = biases {
                    for (t, ids) in [(ub, users), (ib, items)] {
                        let (values, grad) = t.split_mut();
                        for &id in ids {
                            let v = values[id as usize];
                            total += scale * v * v;
                            grad[id as usize] += (scale + scale) * v;
                        }
                    }
                }
            }
            Body::Deep { users: ut, items: it, scorer } => {
                total += rows(ut, users);
                total += rows(it, items);
                total += l2_penalty(&mut weight_tensors(scorer.params_mut()), coefficient);
            }
            Body::Dmf { user_tower, item_tower, .. } => {
                let mut ps = user_tower.params_mut();
                ps.extend(item_tower.params_mut());
                total += l2_penalty(&mut weight_tensors(ps), coefficient);
            }
        }
        total
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        let mut ck = Checkpoint::new(seed)
            .meta("kind", self.kind)
            .meta("dim", self.dim)
            .meta("n_users", self.n_users)
            .meta("n_items", self.n_items);
        if let Body::Deep { scorer, .. } = &self.body {
            ck.specs.insert("deep_scorer".into(), scorer.spec().clone());
        }
        ck.push(self.params());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, train: Option<Arc<TrainMatrix>>) -> Result<Self> {
        let parse = |key: &str| -> Result<usize> {
            ck.get_meta(key)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad {key}")))
        };
        let kind: ModelKind = ck.get_meta("kind")?.parse()?;
        let mut model = RecModel::new(
            kind,
            parse("n_users")?,
            parse("n_items")?,
            parse("dim")?,
            train,
            &mut Rng::new(ck.seed, 0),
        )?;
        if let (Body::Deep { scorer, .. }, Some(spec)) = (&model.body, ck.specs.get("deep_scorer")) {
            if scorer.spec() != spec {
                return Err(Error::Checkpoint("deep scorer spec differs from this build".into()));
            }
        }
        ck.restore(&mut model.params_mut())?;
        Ok(model)
    }
}

/// Weight and bias tensors only: batchnorm statistics and scales are excluded.
fn weight_tensors<T: Scalar>(ps: Vec<&mut ParamTensor<T>>) -> Vec<&mut ParamTensor<T>> {
    ps.into_iter()
        .filter(|p| p.name().ends_with("weight") || p.name().ends_with(".input"))
        .collect()
}

fn gather<T: Scalar>(table: &ParamTensor<T>, ids: &[u32]) -> Matrix<T> {
    let dim = table.shape()[1];
    let mut out = Matrix::zeros(ids.len(), dim);
    for (b, &id) in ids.iter().enumerate() {
        out.row_mut(b).copy_from_slice(table.row(id as usize));
    }
    out
}

fn scatter_add<T: Scalar>(table: &mut ParamTensor<T>, ids: &[u32], grad: &Matrix<T>) {
    for (b, &id) in ids.iter().enumerate() {
        for (g, &x) in table.grad_row_mut(id as usize).iter_mut().zip(grad.row(b)) {
            *g += x;
        }
    }
}

/// Inference-mode scoring snapshot.
pub struct Scorer<'a, T: Scalar> {
    model: &'a RecModel<T>,
    item_reps: Option<Matrix<T>>,
}

impl<T: Scalar> Scorer<'_, T> {
    /// Scores of `items` for one user with representation `rep`.
    pub fn scores(&self, user: u32, rep: &[T], items: &[u32]) -> Result<Vec<T>> {
        if let Some(q) = &self.item_reps {
            self.model.check_ids(&[user], items)?;
            return Ok(items.iter().map(|&i| dot(rep, q.row(i as usize))).collect());
        }
        let n = items.len();
        let mut reps = Matrix::zeros(n, rep.len());
        for b in 0..n {
            reps.row_mut(b).copy_from_slice(rep);
        }
        Ok(self.model.score_forward(&vec![user; n], &reps, items, None)?.0)
    }
}

impl<T: Scalar> Parameterized<T> for RecModel<T> {
    fn params(&self) -> Vec<&ParamTensor<T>> {
        match &self.body {
            Body::Factorization { users, items, biases } => {
                let mut out = vec![users, items];
                if let Some(b) = biases {
                    out.extend(b.iter());
                }
                out
            }
            Body::Deep { users, items, scorer } => {
                let mut out = vec![users, items];
                out.extend(scorer.params());
                out
            }
            Body::Dmf { user_tower, item_tower, .. } => {
                let mut out = user_tower.params();
                out.extend(item_tower.params());
                out
            }
        }
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor<T>> {
        match &mut self.body {
            Body::Factorization { users, items, biases } => {
                let mut out = vec![users, items];
                if let Some(b) = biases {
                    out.extend(b.iter_mut());
                }
                out
            }
            Body::Deep { users, items, scorer } => {
                let mut out = vec![users, items];
                out.extend(scorer.params_mut());
                out
            }
            Body::Dmf { user_tower, item_tower, .. } => {
                let mut out = user_tower.params_mut();
                out.extend(item_tower.params_mut());
                out
            }
        }
    }
}
