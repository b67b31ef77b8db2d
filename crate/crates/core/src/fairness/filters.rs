use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Mask;
use crate::error::{Error, Result};
use crate::numcore::{Activation, Checkpoint, Matrix, Mlp, MlpCache, MlpSpec, ParamTensor, Parameterized, Rng, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FilterMethod {
    /// One filter per nonempty feature subset.
    Separate,
    /// One filter per feature; outputs for a subset are averaged.
    Combination,
}

impl FilterMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterMethod::Separate => "sm",
            FilterMethod::Combination => "cm",
        }
    }
}

impl fmt::Display for FilterMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FilterMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sm" | "separate" => Ok(FilterMethod::Separate),
            "cm" | "combination" => Ok(FilterMethod::Combination),
            other => Err(Error::Config(format!("unknown filter method {other:?}"))),
        }
    }
}

pub fn count_filters(method: FilterMethod, n_features: usize) -> Result<usize> {
    if n_features == 0 || n_features > Mask::MAX_FEATURES {
        return Err(Error::Config(format!("{n_features} sensitive features")));
    }
    Ok(match method {
        FilterMethod::Separate => (1usize << n_features) - 1,
        FilterMethod::Combination => n_features,
    })
}

/// `d -> d -> d`, LeakyReLU between the layers, linear output.
pub fn filter_spec(dim: usize) -> MlpSpec {
    MlpSpec::new(vec![dim, dim, dim], Activation::LeakyRelu)
}

#[derive(Debug, Clone)]
pub struct FilterCache<T> {
    mask: Mask,
    caches: Vec<(u32, MlpCache<T>)>,
}

#[derive(Debug, Clone)]
pub struct FilterBank<T: Scalar> {
    method: FilterMethod,
    n_features: usize,
    dim: usize,
    filters: BTreeMap<u32, Mlp<T>>,
}

impl<T> FilterCache<T> {
    pub fn mask(&self) -> Mask {
        self.mask
    }
}

impl<T: Scalar> FilterBank<T> {
    pub fn new(method: FilterMethod, n_features: usize, dim: usize, rng: &mut Rng) -> Result<Self> {
        count_filters(method, n_features)?;
        let keys: Vec<Mask> = match method {
            FilterMethod::Separate => Mask::all_nonempty(n_features),
            FilterMethod::Combination => (0..n_features).map(Mask::single).collect(),
        };
        let mut filters = BTreeMap::new();
        for key in keys {
            filters.insert(key.bits(), Mlp::new(format!("filter.{}", key.bits()), filter_spec(dim), rng)?);
        }
        Ok(FilterBank {
            method,
            n_features,
            dim,
            filters,
        })
    }

    pub fn method(&self) -> FilterMethod {
        self.method
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = Mask> + '_ {
        self.filters.keys().map(|&b| Mask::from_bits(b))
    }

    pub fn filter(&self, key: Mask) -> Option<&Mlp<T>> {
        self.filters.get(&key.bits())
    }

    pub fn filter_mut(&mut self, key: Mask) -> Option<&mut Mlp<T>> {
        self.filters.get_mut(&key.bits())
    }

    /// Keys of the filters a mask uses; empty for the empty mask.
    pub fn active_keys(&self, mask: Mask) -> Result<Vec<u32>> {
        if !mask.is_subset_of_k(self.n_features) {
            return Err(Error::Config(format!("mask {:#b} names undeclared features", mask.bits())));
        }
        if mask.is_empty() {
            return Ok(Vec::new());
        }
        let keys: Vec<u32> = match self.method {
            FilterMethod::Separate => vec![mask.bits()],
            FilterMethod::Combination => mask.features().map(|f| Mask::single(f).bits()).collect(),
        };
        if let Some(k) = keys.iter().find(|k| !self.filters.contains_key(k)) {
            return Err(Error::Config(format!("no filter trained for subset {k:#b}")));
        }
        Ok(keys)
    }

    fn check(&self, reps: &Matrix<T>) -> Result<()> {
        if reps.cols() != self.dim {
            return Err(Error::shape("filter input", self.dim, reps.cols()));
        }
        Ok(())
    }

    /// Filtered representations in inference mode.
    pub fn apply(&self, mask: Mask, reps: &Matrix<T>) -> Result<Matrix<T>> {
        self.check(reps)?;
        let keys = self.active_keys(mask)?;
        if keys.is_empty() {
            return Ok(reps.clone());
        }
        let mut out = Matrix::zeros(reps.rows(), self.dim);
        for k in &keys {
            out.add_assign(&self.filters[k].forward_infer(reps)?);
        }
        out.scale(T::one() / T::lit(keys.len() as f64));
        Ok(out)
    }

    pub fn apply_one(&self, mask: Mask, rep: &[T]) -> Result<Vec<T>> {
        Ok(self.apply(mask, &Matrix::row_vector(rep))?.into_vec())
    }

    /// Training-mode pass; the cache drives [`FilterBank::backward`].
    pub fn forward_train(&self, mask: Mask, reps: &Matrix<T>, rng: &mut Rng) -> Result<(Matrix<T>, FilterCache<T>)> {
        self.check(reps)?;
        let keys = self.active_keys(mask)?;
        let mut caches = Vec::with_capacity(keys.len());
        if keys.is_empty() {
            return Ok((reps.clone(), FilterCache { mask, caches }));
        }
        let mut out = Matrix::zeros(reps.rows(), self.dim);
        for k in keys {
            let (y, cache) = self.filters[&k].forward_train(reps, rng)?;
            out.add_assign(&y);
            caches.push((k, cache));
        }
        out.scale(T::one() / T::lit(caches.len() as f64));
        Ok((out, FilterCache { mask, caches }))
    }

    /// Accumulates gradients of the active filters and returns the input gradient.
    pub fn backward(&mut self, cache: &FilterCache<T>, grad: &Matrix<T>) -> Result<Matrix<T>> {
        if cache.caches.is_empty() {
            return Ok(grad.clone());
        }
        let mut g = grad.clone();
        g.scale(T::one() / T::lit(cache.caches.len() as f64));
        let mut dx = Matrix::zeros(grad.rows(), self.dim);
        for (k, c) in &cache.caches {
            let net = self
                .filters
                .get_mut(k)
                .ok_or_else(|| Error::StaleCache(format!("filter {k:#b} missing")))?;
            dx.add_assign(&net.backward(c, &g)?);
        }
        Ok(dx)
    }

    /// Parameters of the filters `mask` uses.
    pub fn active_params_mut(&mut self, mask: Mask) -> Result<Vec<&mut ParamTensor<T>>> {
        let keys = self.active_keys(mask)?;
        Ok(self
            .filters
            .iter_mut()
            .filter(|(k, _)| keys.contains(k))
            .flat_map(|(_, f)| f.params_mut())
            .collect())
    }

    pub fn write_checkpoint(&self, ck: &mut Checkpoint) {
        ck.metadata.insert("filter_method".into(), self.method.to_string());
        ck.metadata.insert("n_features".into(), self.n_features.to_string());
        for (k, f) in &self.filters {
            ck.specs.insert(format!("filter.{k}"), f.spec().clone());
        }
        ck.push(self.params());
    }

    pub fn from_checkpoint(ck: &Checkpoint, dim: usize) -> Result<Self> {
        let method: FilterMethod = ck.get_meta("filter_method")?.parse()?;
        let n_features: usize = ck
            .get_meta("n_features")?
            .parse()
            .map_err(|_| Error::Checkpoint("bad n_features".into()))?;
        let mut bank = FilterBank::new(method, n_features, dim, &mut Rng::new(ck.seed, 0))?;
        ck.restore(&mut bank.params_mut())?;
        Ok(bank)
    }
}

impl<T: Scalar> Parameterized<T> for FilterBank<T> {
    fn params(&self) -> Vec<&ParamTensor<T>> {
        self.filters.values().flat_map(|f| f.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor<T>> {
        self.filters.values_mut().flat_map(|f| f.params_mut()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bank_sizes() {
        let mut rng = Rng::new(0, 0);
        for k in 1..=5 {
            let sm = FilterBank::<f64>::new(FilterMethod::Separate, k, 3, &mut rng).unwrap();
            let cm = FilterBank::<f64>::new(FilterMethod::Combination, k, 3, &mut rng).unwrap();
            assert_eq!(sm.len(), (1 << k) - 1);
            assert_eq!(cm.len(), k);
        }
        assert_eq!(count_filters(FilterMethod::Separate, 3).unwrap(), 7);
        assert!(count_filters(FilterMethod::Combination, 0).is_err());
    }

    #[test]
    fn empty_mask_is_identity() {
        let bank = FilterBank::<f64>::new(FilterMethod::Separate, 2, 3, &mut Rng::new(0, 0)).unwrap();
        let r = [0.3, -1.0, 2.5];
        assert_eq!(bank.apply_one(Mask::empty(), &r).unwrap(), r.to_vec());
    }

    #[test]
    fn undeclared_feature_rejected() {
        let bank = FilterBank::<f64>::new(FilterMethod::Combination, 2, 3, &mut Rng::new(0, 0)).unwrap();
        assert!(bank.apply_one(Mask::single(2), &[0.0; 3]).is_err());
    }
}
