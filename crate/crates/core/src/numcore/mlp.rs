use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::matrix::affine;
use crate::numcore::{Matrix, ParamTensor, Parameterized, Rng, Scalar};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

static NEXT_INSTANCE: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    LeakyRelu,
    Relu,
    Identity,
}

/// Architecture of a fully connected network.
///
/// Hidden layers run `linear -> [batchnorm] -> activation -> [dropout]`;
/// the last layer is a plain linear map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub dropout_rate: f64,
    pub use_batchnorm: bool,
    #[serde(default = "default_leaky_slope")]
    pub leaky_slope: f64,
}

fn default_leaky_slope() -> f64 {
    0.01
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation) -> Self {
        MlpSpec {
            layer_widths,
            activation,
            dropout_rate: 0.0,
            use_batchnorm: false,
            leaky_slope: default_leaky_slope(),
        }
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn with_batchnorm(mut self, on: bool) -> Self {
        self.use_batchnorm = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::Config(format!(
                "an MLP needs at least input and output widths, got {:?}",
                self.layer_widths
            )));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::Config(format!("zero layer width in {:?}", self.layer_widths)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }
}

#[derive(Debug, Clone)]
struct Norm<T> {
    gamma: ParamTensor<T>,
    beta: ParamTensor<T>,
    running_mean: ParamTensor<T>,
    running_var: ParamTensor<T>,
}

#[derive(Debug, Clone)]
struct Layer<T> {
    weight: ParamTensor<T>,
    bias: ParamTensor<T>,
    norm: Option<Norm<T>>,
    in_dim: usize,
    out_dim: usize,
}

/// Fully connected network with manual backpropagation.
#[derive(Debug)]
pub struct Mlp<T> {
    spec: MlpSpec,
    name: String,
    layers: Vec<Layer<T>>,
    instance: u64,
    generation: u64,
}

impl<T: Scalar> Clone for Mlp<T> {
    fn clone(&self) -> Self {
        Mlp {
            spec: self.spec.clone(),
            name: self.name.clone(),
            layers: self.layers.clone(),
            instance: NEXT_INSTANCE.fetch_add(1, Ordering::Relaxed),
            generation: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct NormCache<T> {
    xhat: Matrix<T>,
    inv_std: Vec<T>,
    mean: Vec<T>,
    var: Vec<T>,
}

#[derive(Debug, Clone)]
struct LayerCache<T> {
    input: Matrix<T>,
    norm: Option<NormCache<T>>,
    pre_act: Option<Matrix<T>>,
    dropout: Option<Vec<T>>,
}

/// Everything a train-mode forward pass leaves for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    instance: u64,
    generation: u64,
    layers: Vec<LayerCache<T>>,
    output_shape: (usize, usize),
}

impl<T> MlpCache<T> {
    pub fn batch_size(&self) -> usize {
        self.output_shape.0
    }
}

struct LayerGrads<T> {
    weight: Vec<T>,
    bias: Vec<T>,
    gamma: Vec<T>,
    beta: Vec<T>,
}

impl<T: Scalar> Mlp<T> {
    /// Glorot-uniform weights, zero biases, unit batchnorm scale.
    pub fn new(name: impl Into<String>, spec: MlpSpec, rng: &mut Rng) -> Result<Self> {
        Self::build(name.into(), spec, |fan_in, fan_out, n| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n).map(|_| T::lit((2.0 * rng.uniform() - 1.0) * bound)).collect()
        })
    }

    /// All weights and biases zero.
    pub fn zeros(name: impl Into<String>, spec: MlpSpec) -> Result<Self> {
        Self::build(name.into(), spec, |_, _, n| vec![T::zero(); n])
    }

    fn build(name: String, spec: MlpSpec, mut init: impl FnMut(usize, usize, usize) -> Vec<T>) -> Result<Self> {
        spec.validate()?;
        let n_layers = spec.n_layers();
        let mut layers = Vec::with_capacity(n_layers);
        for (i, pair) in spec.layer_widths.windows(2).enumerate() {
            let (in_dim, out_dim) = (pair[0], pair[1]);
            let weight = ParamTensor::new(
                format!("{name}.l{i}.weight"),
                vec![out_dim, in_dim],
                init(in_dim, out_dim, in_dim * out_dim),
                true,
            )?;
            let bias = ParamTensor::zeros(format!("{name}.l{i}.bias"), vec![out_dim]);
            let norm = (spec.use_batchnorm && i + 1 < n_layers).then(|| Norm {
                gamma: ParamTensor::filled(format!("{name}.l{i}.bn_gamma"), vec![out_dim], T::one(), true),
                beta: ParamTensor::zeros(format!("{name}.l{i}.bn_beta"), vec![out_dim]),
                running_mean: ParamTensor::filled(format!("{name}.l{i}.bn_mean"), vec![out_dim], T::zero(), false),
                running_var: ParamTensor::filled(format!("{name}.l{i}.bn_var"), vec![out_dim], T::one(), false),
            });
            layers.push(Layer {
                weight,
                bias,
                norm,
                in_dim,
                out_dim,
            });
        }
        Ok(Mlp {
            spec,
            name,
            layers,
            instance: NEXT_INSTANCE.fetch_add(1, Ordering::Relaxed),
            generation: 0,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Overwrites layer `i` (weights `[out, in]` row-major, then biases).
    pub fn set_layer(&mut self, i: usize, weight: &[T], bias: &[T]) -> Result<()> {
        let layer = self
            .layers
            .get_mut(i)
            .ok_or_else(|| Error::shape("Mlp::set_layer", "existing layer", i))?;
        layer.weight.assign(weight)?;
        layer.bias.assign(bias)?;
        self.generation += 1;
        Ok(())
    }

    fn check_input(&self, input: &Matrix<T>) -> Result<()> {
        if input.cols() != self.spec.input_dim() {
            return Err(Error::shape(
                format!("{} input width", self.name),
                self.spec.input_dim(),
                input.cols(),
            ));
        }
        if input.rows() == 0 {
            return Err(Error::shape(format!("{} batch", self.name), "at least one row", 0));
        }
        Ok(())
    }

    /// Inference pass: no dropout, batchnorm with running statistics.
    pub fn forward_infer(&self, input: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(input)?;
        let n_layers = self.layers.len();
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = affine(&x, layer.weight.values(), layer.bias.values(), layer.out_dim);
            if i + 1 < n_layers {
                if let Some(norm) = &layer.norm {
                    let eps = T::lit(BN_EPS);
                    for b in 0..z.rows() {
                        let row = z.row_mut(b);
                        for (j, v) in row.iter_mut().enumerate() {
                            let xhat = (*v - norm.running_mean.values()[j]) / (norm.running_var.values()[j] + eps).sqrt();
                            *v = norm.gamma.values()[j] * xhat + norm.beta.values()[j];
                        }
                    }
                }
                self.activate(z.as_mut_slice());
            }
            x = z;
        }
        Ok(x)
    }

    /// Convenience wrapper for a single input vector.
    pub fn forward_one(&self, input: &[T]) -> Result<Vec<T>> {
        Ok(self.forward_infer(&Matrix::row_vector(input))?.into_vec())
    }

    /// Training pass: dropout masks from `rng`, batchnorm with batch statistics.
    ///
    /// Running statistics are left untouched; call
    /// [`Mlp::commit_running_stats`] to fold this batch into them.
    pub fn forward_train(&self, input: &Matrix<T>, rng: &mut Rng) -> Result<(Matrix<T>, MlpCache<T>)> {
        self.check_input(input)?;
        let n_layers = self.layers.len();
        let mut caches = Vec::with_capacity(n_layers);
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = affine(&x, layer.weight.values(), layer.bias.values(), layer.out_dim);
            let mut cache = LayerCache {
                input: x,
                norm: None,
                pre_act: None,
                dropout: None,
            };
            if i + 1 < n_layers {
                if let Some(norm) = &layer.norm {
                    let (normed, nc) = batch_norm_train(&z, norm.gamma.values(), norm.beta.values());
                    z = normed;
                    cache.norm = Some(nc);
                }
                cache.pre_act = Some(z.clone());
                self.activate(z.as_mut_slice());
                if self.spec.dropout_rate > 0.0 {
                    let rate = self.spec.dropout_rate;
                    let keep_scale = T::lit(1.0 / (1.0 - rate));
                    let mask: Vec<T> = (0..z.as_slice().len())
                        .map(|_| if rng.uniform() < rate { T::zero() } else { keep_scale })
                        .collect();
                    for (v, &m) in z.as_mut_slice().iter_mut().zip(&mask) {
                        *v *= m;
                    }
                    cache.dropout = Some(mask);
                }
            }
            caches.push(cache);
            x = z;
        }
        let output_shape = (x.rows(), x.cols());
        Ok((
            x,
            MlpCache {
                instance: self.instance,
                generation: self.generation,
                layers: caches,
                output_shape,
            },
        ))
    }

    fn activate(&self, values: &mut [T]) {
        match self.spec.activation {
            Activation::Identity => {}
            Activation::Relu => values.iter_mut().for_each(|v| {
                if *v < T::zero() {
                    *v = T::zero()
                }
            }),
            Activation::LeakyRelu => {
                let slope = T::lit(self.spec.leaky_slope);
                values.iter_mut().for_each(|v| {
                    if *v < T::zero() {
                        *v *= slope
                    }
                })
            }
        }
    }

    fn activation_grad(&self, pre: T) -> T {
        match self.spec.activation {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if pre > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu => {
                if pre > T::zero() {
                    T::one()
                } else {
                    T::lit(self.spec.leaky_slope)
                }
            }
        }
    }

    fn check_cache(&self, cache: &MlpCache<T>, grad: &Matrix<T>) -> Result<()> {
        if cache.instance != self.instance || cache.generation != self.generation {
            return Err(Error::StaleCache(format!(
                "{}: cache from instance {} gen {}, network is instance {} gen {}",
                self.name, cache.instance, cache.generation, self.instance, self.generation
            )));
        }
        if (grad.rows(), grad.cols()) != cache.output_shape {
            return Err(Error::shape(
                format!("{} output gradient", self.name),
                format!("{:?}", cache.output_shape),
                format!("({}, {})", grad.rows(), grad.cols()),
            ));
        }
        Ok(())
    }

    /// Backpropagates `grad_output`, accumulating parameter gradients, and
    /// returns the gradient with respect to the input.
    pub fn backward(&mut self, cache: &MlpCache<T>, grad_output: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_cache(cache, grad_output)?;
        let (grad_input, grads) = self.backprop(cache, grad_output, true);
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            add_into(layer.weight.grad_mut(), &g.weight);
            add_into(layer.bias.grad_mut(), &g.bias);
            if let Some(norm) = &mut layer.norm {
                add_into(norm.gamma.grad_mut(), &g.gamma);
                add_into(norm.beta.grad_mut(), &g.beta);
            }
        }
        Ok(grad_input)
    }

    /// Input gradient only; parameters and their gradients are not touched.
    pub fn input_grad(&self, cache: &MlpCache<T>, grad_output: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_cache(cache, grad_output)?;
        Ok(self.backprop(cache, grad_output, false).0)
    }

    fn backprop(&self, cache: &MlpCache<T>, grad_output: &Matrix<T>, want_params: bool) -> (Matrix<T>, Vec<LayerGrads<T>>) {
        let n_layers = self.layers.len();
        let mut grads: Vec<LayerGrads<T>> = Vec::with_capacity(n_layers);
        let mut g = grad_output.clone();
        for (i, (layer, lc)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            let mut lg = LayerGrads {
                weight: Vec::new(),
                bias: Vec::new(),
                gamma: Vec::new(),
                beta: Vec::new(),
            };
            if i + 1 < n_layers {
                if let Some(mask) = &lc.dropout {
                    for (v, &m) in g.as_mut_slice().iter_mut().zip(mask) {
                        *v *= m;
                    }
                }
                let pre = lc.pre_act.as_ref().expect("hidden layer caches pre-activation");
                for (v, &p) in g.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                    *v *= self.activation_grad(p);
                }
                if let (Some(norm), Some(nc)) = (&layer.norm, &lc.norm) {
                    let (dz, dgamma, dbeta) = batch_norm_backward(&g, nc, norm.gamma.values());
                    g = dz;
                    if want_params {
                        lg.gamma = dgamma;
                        lg.beta = dbeta;
                    }
                }
            }
            let x = &lc.input;
            let (in_dim, out_dim) = (layer.in_dim, layer.out_dim);
            if want_params {
                let mut dw = vec![T::zero(); out_dim * in_dim];
                let mut db = vec![T::zero(); out_dim];
                for b in 0..g.rows() {
                    let gr = g.row(b);
                    let xr = x.row(b);
                    for o in 0..out_dim {
                        let go = gr[o];
                        if go == T::zero() {
                            continue;
                        }
                        db[o] += go;
                        let dwr = &mut dw[o * in_dim..(o + 1) * in_dim];
                        for (d, &xv) in dwr.iter_mut().zip(xr) {
                            *d += go * xv;
                        }
                    }
                }
                lg.weight = dw;
                lg.bias = db;
            }
            let w = layer.weight.values();
            let mut dx = Matrix::zeros(g.rows(), in_dim);
            for b in 0..g.rows() {
                let gr = g.row(b);
                let dxr = dx.row_mut(b);
                for o in 0..out_dim {
                    let go = gr[o];
                    if go == T::zero() {
                        continue;
                    }
                    for (d, &wv) in dxr.iter_mut().zip(&w[o * in_dim..(o + 1) * in_dim]) {
                        *d += go * wv;
                    }
                }
            }
            grads.push(lg);
            g = dx;
        }
        grads.reverse();
        (g, grads)
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// mean/variance (momentum 0.1, unbiased variance).
    pub fn commit_running_stats(&mut self, cache: &MlpCache<T>) -> Result<()> {
        if cache.instance != self.instance {
            return Err(Error::StaleCache(format!("{}: foreign cache", self.name)));
        }
        let m = cache.output_shape.0;
        let momentum = T::lit(BN_MOMENTUM);
        let unbias = if m > 1 { T::lit(m as f64 / (m as f64 - 1.0)) } else { T::one() };
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers) {
            if let (Some(norm), Some(nc)) = (&mut layer.norm, &lc.norm) {
                for (r, &bm) in norm.running_mean.values_mut().iter_mut().zip(&nc.mean) {
                    *r = (T::one() - momentum) * *r + momentum * bm;
                }
                for (r, &bv) in norm.running_var.values_mut().iter_mut().zip(&nc.var) {
                    *r = (T::one() - momentum) * *r + momentum * bv * unbias;
                }
            }
        }
        Ok(())
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn batch_norm_train<T: Scalar>(z: &Matrix<T>, gamma: &[T], beta: &[T]) -> (Matrix<T>, NormCache<T>) {
    let (m, n) = (z.rows(), z.cols());
    let mf = T::lit(m as f64);
    let eps = T::lit(BN_EPS);
    let mut mean = vec![T::zero(); n];
    for row in z.iter_rows() {
        add_into(&mut mean, row);
    }
    mean.iter_mut().for_each(|v| *v /= mf);
    let mut var = vec![T::zero(); n];
    for row in z.iter_rows() {
        for j in 0..n {
            let d = row[j] - mean[j];
            var[j] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= mf);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = Matrix::zeros(m, n);
    let mut out = Matrix::zeros(m, n);
    for b in 0..m {
        for j in 0..n {
            let h = (z.get(b, j) - mean[j]) * inv_std[j];
            xhat.set(b, j, h);
            out.set(b, j, gamma[j] * h + beta[j]);
        }
    }
    (out, NormCache { xhat, inv_std, mean, var })
}

fn batch_norm_backward<T: Scalar>(g: &Matrix<T>, nc: &NormCache<T>, gamma: &[T]) -> (Matrix<T>, Vec<T>, Vec<T>) {
    let (m, n) = (g.rows(), g.cols());
    let mf = T::lit(m as f64);
    let mut dgamma = vec![T::zero(); n];
    let mut dbeta = vec![T::zero(); n];
    let mut sum_dxhat = vec![T::zero(); n];
    let mut sum_dxhat_xhat = vec![T::zero(); n];
    for b in 0..m {
        for j in 0..n {
            let gv = g.get(b, j);
            let h = nc.xhat.get(b, j);
            dgamma[j] += gv * h;
            dbeta[j] += gv;
            let dxhat = gv * gamma[j];
            sum_dxhat[j] += dxhat;
            sum_dxhat_xhat[j] += dxhat * h;
        }
    }
    let mut dz = Matrix::zeros(m, n);
    for b in 0..m {
        for j in 0..n {
            let dxhat = g.get(b, j) * gamma[j];
            let h = nc.xhat.get(b, j);
            dz.set(b, j, nc.inv_std[j] / mf * (mf * dxhat - sum_dxhat[j] - h * sum_dxhat_xhat[j]));
        }
    }
    (dz, dgamma, dbeta)
}

impl<T: Scalar> Parameterized<T> for Mlp<T> {
    fn params(&self) -> Vec<&ParamTensor<T>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.push(&layer.weight);
            out.push(&layer.bias);
            if let Some(norm) = &layer.norm {
                out.extend([&norm.gamma, &norm.beta, &norm.running_mean, &norm.running_var]);
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor<T>> {
        self.generation += 1;
        let mut out = Vec::new();
        for layer in &mut self.layers {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
            if let Some(norm) = &mut layer.norm {
                out.extend([&mut norm.gamma, &mut norm.beta, &mut norm.running_mean, &mut norm.running_var]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaky(x: f64) -> f64 {
        if x > 0.0 {
            x
        } else {
            0.01 * x
        }
    }

    #[test]
    fn zero_map() {
        let spec = MlpSpec::new(vec![3, 4, 2], Activation::Identity);
        let mlp = Mlp::<f64>::zeros("z", spec).unwrap();
        assert_eq!(mlp.forward_one(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer() {
        let spec = MlpSpec::new(vec![3, 3], Activation::Identity);
        let mut mlp = Mlp::<f64>::zeros("id", spec).unwrap();
        mlp.set_layer(0, &[1., 0., 0., 0., 1., 0., 0., 0., 1.], &[0., 0., 0.]).unwrap();
        assert_eq!(mlp.forward_one(&[0.5, -1.5, 2.0]).unwrap(), vec![0.5, -1.5, 2.0]);
    }

    #[test]
    fn two_layer_leaky_straight_line() {
        let spec = MlpSpec::new(vec![2, 2, 1], Activation::LeakyRelu);
        let mut mlp = Mlp::<f64>::zeros("h", spec).unwrap();
        let w0 = [0.5, -0.25, -1.0, 0.75];
        let b0 = [0.1, -0.2];
        let w1 = [2.0, -3.0];
        let b1 = [0.05];
        mlp.set_layer(0, &w0, &b0).unwrap();
        mlp.set_layer(1, &w1, &b1).unwrap();
        let (x0, x1) = (1.0, -1.0);
        let h0 = leaky(0.5 * x0 + -0.25 * x1 + 0.1);
        let h1 = leaky(-x0 + 0.75 * x1 + -0.2);
        let expected = 2.0 * h0 + -3.0 * h1 + 0.05;
        let got = mlp.forward_one(&[x0, x1]).unwrap();
        assert_eq!(got, vec![expected]);
    }

    #[test]
    fn rejects_wrong_width() {
        let mlp = Mlp::<f64>::zeros("w", MlpSpec::new(vec![3, 2], Activation::Relu)).unwrap();
        assert!(matches!(mlp.forward_one(&[1.0, 2.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::new(vec![3], Activation::Relu).validate().is_err());
        assert!(MlpSpec::new(vec![3, 2], Activation::Relu).with_dropout(1.0).validate().is_err());
    }

    #[test]
    fn scalar_product_rule() {
        let mut mlp = Mlp::<f64>::zeros("s", MlpSpec::new(vec![3, 1], Activation::Identity)).unwrap();
        let w = [0.3, -0.7, 1.1];
        mlp.set_layer(0, &w, &[0.0]).unwrap();
        let x = [2.0, 0.5, -1.0];
        let mut rng = Rng::new(0, 0);
        let (_, cache) = mlp.forward_train(&Matrix::row_vector(&x), &mut rng).unwrap();
        let dx = mlp.backward(&cache, &Matrix::row_vector(&[1.0])).unwrap();
        assert_eq!(dx.row(0), &w);
        assert_eq!(mlp.params()[0].grad(), &x);
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let spec = MlpSpec::new(vec![3, 4, 2], Activation::LeakyRelu).with_batchnorm(true);
        let mut rng = Rng::new(3, 0);
        let mut mlp = Mlp::<f64>::new("z", spec, &mut rng).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.0]]).unwrap();
        let (_, cache) = mlp.forward_train(&x, &mut rng).unwrap();
        let dx = mlp.backward(&cache, &Matrix::zeros(2, 2)).unwrap();
        assert!(dx.as_slice().iter().all(|&v| v == 0.0));
        assert!(mlp.params().iter().all(|p| p.grad().iter().all(|&g| g == 0.0)));
    }

    #[test]
    fn stale_cache_rejected() {
        let spec = MlpSpec::new(vec![2, 2], Activation::Identity);
        let mut rng = Rng::new(3, 0);
        let mut mlp = Mlp::<f64>::new("s", spec, &mut rng).unwrap();
        let x = Matrix::row_vector(&[1.0, 2.0]);
        let (_, cache) = mlp.forward_train(&x, &mut rng).unwrap();
        let _ = mlp.params_mut();
        assert!(matches!(
            mlp.backward(&cache, &Matrix::row_vector(&[1.0, 1.0])),
            Err(Error::StaleCache(_))
        ));
        let other = mlp.clone();
        let (_, cache) = other.forward_train(&x, &mut rng).unwrap();
        assert!(mlp.backward(&cache, &Matrix::row_vector(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn batchnorm_normalizes_training_batch() {
        let spec = MlpSpec::new(vec![3, 4, 1], Activation::Identity).with_batchnorm(true);
        let mut rng = Rng::new(5, 0);
        let mut mlp = Mlp::<f64>::new("bn", spec, &mut rng).unwrap();
        let (gamma, beta) = ([0.5, 2.0, 1.5, 0.25], [1.0, -3.0, 0.0, 0.5]);
        {
            let mut ps = mlp.params_mut();
            ps[2].assign(&gamma).unwrap();
            ps[3].assign(&beta).unwrap();
        }
        let rows: Vec<Vec<f64>> = (0..64)
            .map(|_| (0..3).map(|_| rng.normal(0.0, 30.0)).collect())
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let (_, cache) = mlp.forward_train(&x, &mut rng).unwrap();
        // Post-affine batchnorm output is the pre-activation of layer 0.
        let pre = cache.layers[0].pre_act.as_ref().unwrap();
        for j in 0..4 {
            let col: Vec<f64> = (0..64).map(|b| pre.get(b, j)).collect();
            let mean = col.iter().sum::<f64>() / 64.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
            assert!((mean - beta[j]).abs() < 1e-6, "mean {mean} vs {}", beta[j]);
            assert!((var - gamma[j] * gamma[j]).abs() < 1e-5, "var {var}");
        }
    }

    #[test]
    fn running_stats_follow_commits() {
        let spec = MlpSpec::new(vec![1, 1, 1], Activation::Identity).with_batchnorm(true);
        let mut mlp = Mlp::<f64>::zeros("rs", spec).unwrap();
        mlp.set_layer(0, &[1.0], &[0.0]).unwrap();
        let mut rng = Rng::new(0, 0);
        let x = Matrix::from_rows(&[vec![1.0], vec![3.0]]).unwrap();
        let (_, cache) = mlp.forward_train(&x, &mut rng).unwrap();
        mlp.commit_running_stats(&cache).unwrap();
        let ps = mlp.params();
        assert!((ps[4].values()[0] - 0.2).abs() < 1e-12);
        // unbiased batch variance 2, blended with initial 1
        assert!((ps[5].values()[0] - (0.9 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn dropout_is_inverted_and_unbiased() {
        let spec = MlpSpec::new(vec![4, 4, 1], Activation::Identity).with_dropout(0.3);
        let mut rng = Rng::new(9, 0);
        let mlp = Mlp::<f64>::new("d", spec, &mut rng).unwrap();
        let x = Matrix::row_vector(&[0.4, -1.2, 0.7, 2.0]);
        let target = mlp.forward_infer(&x).unwrap().get(0, 0);
        let n = 20_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| mlp.forward_train(&x, &mut rng).unwrap().0.get(0, 0))
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let sd = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let se = sd / (n as f64).sqrt();
        assert!((mean - target).abs() < 3.0 * se, "mean {mean} target {target} se {se}");
    }

    #[test]
    fn infer_mode_is_pure() {
        let spec = MlpSpec::new(vec![3, 5, 2], Activation::LeakyRelu)
            .with_dropout(0.5)
            .with_batchnorm(true);
        let mut rng = Rng::new(1, 1);
        let mlp = Mlp::<f64>::new("p", spec, &mut rng).unwrap();
        let x = Matrix::row_vector(&[0.1, 0.2, 0.3]);
        assert_eq!(mlp.forward_infer(&x).unwrap(), mlp.forward_infer(&x).unwrap());
    }

    #[test]
    fn generic_over_f32() {
        let spec = MlpSpec::new(vec![2, 3, 1], Activation::Relu);
        let mut rng = Rng::new(1, 1);
        let mlp = Mlp::<f32>::new("f", spec, &mut rng).unwrap();
        assert_eq!(mlp.forward_one(&[1.0f32, 2.0]).unwrap().len(), 1);
    }
}
