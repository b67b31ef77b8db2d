use crate::error::{Error, Result};
use crate::numcore::Scalar;

/// Named parameter buffer with a gradient of identical shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<T> {
    name: String,
    shape: Vec<usize>,
    values: Vec<T>,
    grad: Vec<T>,
    trainable: bool,
}

impl<T: Scalar> ParamTensor<T> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<T>, trainable: bool) -> Result<Self> {
        let name = name.into();
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape(format!("tensor {name}"), "positive dims", format!("{shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if values.len() != numel {
            return Err(Error::shape(format!("tensor {name}"), numel, values.len()));
        }
        Ok(ParamTensor {
            grad: vec![T::zero(); numel],
            name,
            shape,
            values,
            trainable,
        })
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self::new(name, shape, vec![T::zero(); numel], true).expect("valid zero tensor")
    }

    pub fn filled(name: impl Into<String>, shape: Vec<usize>, value: T, trainable: bool) -> Self {
        let numel = shape.iter().product();
        Self::new(name, shape, vec![value; numel], trainable).expect("valid filled tensor")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn grad(&self) -> &[T] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [T] {
        &mut self.grad
    }

    /// Simultaneous access to values and gradient.
    pub fn split_mut(&mut self) -> (&mut [T], &mut [T]) {
        (&mut self.values, &mut self.grad)
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    /// Row `i` of a 2-d tensor.
    pub fn row(&self, i: usize) -> &[T] {
        let cols = self.shape[1];
        &self.values[i * cols..(i + 1) * cols]
    }

    pub fn grad_row_mut(&mut self, i: usize) -> &mut [T] {
        let cols = self.shape[1];
        &mut self.grad[i * cols..(i + 1) * cols]
    }

    /// Replaces values from a buffer of the same length.
    pub fn assign(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::shape(format!("assign {}", self.name), self.values.len(), values.len()));
        }
        self.values.copy_from_slice(values);
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Anything owning parameter tensors.
pub trait Parameterized<T: Scalar> {
    fn params(&self) -> Vec<&ParamTensor<T>>;
    fn params_mut(&mut self) -> Vec<&mut ParamTensor<T>>;
}

pub fn zero_grads<T: Scalar>(params: &mut [&mut ParamTensor<T>]) {
    for p in params {
        p.zero_grad();
    }
}

/// Adds `coefficient * Σ‖p‖²` over the trainable tensors and accumulates
/// `2 * coefficient * p` into their gradients.
pub fn l2_penalty<T: Scalar>(params: &mut [&mut ParamTensor<T>], coefficient: T) -> T {
    let two_c = coefficient + coefficient;
    let mut total = T::zero();
    for p in params.iter_mut().filter(|p| p.trainable()) {
        let (values, grad) = p.split_mut();
        for (v, g) in values.iter().zip(grad.iter_mut()) {
            total += *v * *v;
            *g += two_c * *v;
        }
    }
    coefficient * total
}
