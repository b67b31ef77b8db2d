use crate::error::{Error, Result};
use crate::numcore::{Activation, Checkpoint, Matrix, Mlp, MlpCache, MlpSpec, ParamTensor, Parameterized, Rng, Scalar};

pub const CLASSIFIER_LAYERS: usize = 7;
pub const CLASSIFIER_DROPOUT: f64 = 0.3;

/// Seven linear layers `d -> d (x6) -> classes` with batchnorm, LeakyReLU
/// and dropout 0.3 on the hidden layers. Shared by discriminators and attackers.
pub fn classifier_spec(dim: usize, classes: usize) -> MlpSpec {
    let mut widths = vec![dim; CLASSIFIER_LAYERS];
    widths.push(classes);
    MlpSpec::new(widths, Activation::LeakyRelu)
        .with_dropout(CLASSIFIER_DROPOUT)
        .with_batchnorm(true)
}

/// Row-wise softmax, shifted by the row maximum.
pub fn softmax<T: Scalar>(logits: &Matrix<T>) -> Matrix<T> {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy<T: Scalar>(logits: &Matrix<T>, labels: &[u32]) -> Result<(T, Matrix<T>)> {
    if labels.len() != logits.rows() {
        return Err(Error::shape("class labels", logits.rows(), labels.len()));
    }
    if let Some(&y) = labels.iter().find(|&&y| y as usize >= logits.cols()) {
        return Err(Error::shape("class label", format!("< {}", logits.cols()), y));
    }
    let n = T::lit(labels.len().max(1) as f64);
    let mut grad = softmax(logits);
    let mut loss = T::zero();
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        loss += lse - row[y as usize];
        grad.row_mut(r)[y as usize] -= T::one();
    }
    grad.scale(T::one() / n);
    Ok((loss / n, grad))
}

/// Adversarial classifier for one sensitive feature.
#[derive(Debug, Clone)]
pub struct Discriminator<T: Scalar> {
    feature: usize,
    net: Mlp<T>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(name: &str, feature: usize, dim: usize, classes: usize, rng: &mut Rng) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Config(format!("feature {feature} has fewer than 2 classes")));
        }
        Ok(Discriminator {
            feature,
            net: Mlp::new(format!("{name}.{feature}"), classifier_spec(dim, classes), rng)?,
        })
    }

    pub fn feature(&self) -> usize {
        self.feature
    }

    pub fn classes(&self) -> usize {
        self.net.spec().output_dim()
    }

    pub fn net(&self) -> &Mlp<T> {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp<T> {
        &mut self.net
    }

    /// Class probabilities in inference mode.
    pub fn probabilities(&self, reps: &Matrix<T>) -> Result<Matrix<T>> {
        Ok(softmax(&self.net.forward_infer(reps)?))
    }

    /// Train-mode loss and logit gradient; parameters are untouched.
    pub fn loss(&self, reps: &Matrix<T>, labels: &[u32], rng: &mut Rng) -> Result<(T, MlpCache<T>, Matrix<T>)> {
        let (logits, cache) = self.net.forward_train(reps, rng)?;
        let (loss, dlogits) = cross_entropy(&logits, labels)?;
        Ok((loss, cache, dlogits))
    }

    /// `d loss / d reps` without touching parameter gradients.
    pub fn input_grad(&self, cache: &MlpCache<T>, dlogits: &Matrix<T>) -> Result<Matrix<T>> {
        self.net.input_grad(cache, dlogits)
    }

    /// Accumulates parameter gradients and folds the batch statistics into
    /// the running estimates.
    pub fn backward(&mut self, cache: &MlpCache<T>, dlogits: &Matrix<T>) -> Result<Matrix<T>> {
        let dx = self.net.backward(cache, dlogits)?;
        self.net.commit_running_stats(cache)?;
        Ok(dx)
    }

    pub fn write_checkpoint(&self, ck: &mut Checkpoint) {
        ck.specs.insert(self.net.name().to_string(), self.net.spec().clone());
        ck.push(self.params());
    }
}

impl<T: Scalar> Parameterized<T> for Discriminator<T> {
    fn params(&self) -> Vec<&ParamTensor<T>> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor<T>> {
        self.net.params_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_values() {
        let logits = Matrix::from_rows(&[vec![1.0f64, 0.0, -1.0]]).unwrap();
        let (loss, _) = cross_entropy(&logits, &[0]).unwrap();
        assert!((loss - 0.40760596444438).abs() < 1e-12);
        let uniform = Matrix::from_rows(&[vec![0.0f64; 4]]).unwrap();
        assert!((cross_entropy(&uniform, &[2]).unwrap().0 - 4f64.ln()).abs() < 1e-15);
        let sure = Matrix::from_rows(&[vec![800.0, 0.0]]).unwrap();
        assert_eq!(cross_entropy(&sure, &[0]).unwrap().0, 0.0);
        assert!(cross_entropy(&sure, &[2]).is_err());
    }

    #[test]
    fn softmax_on_simplex() {
        let mut rng = Rng::new(4, 0);
        let d = Discriminator::<f64>::new("disc", 0, 4, 3, &mut rng).unwrap();
        let x = Matrix::from_vec(5, 4, (0..20).map(|_| rng.standard_normal() * 10.0).collect()).unwrap();
        let p = d.probabilities(&x).unwrap();
        for row in p.iter_rows() {
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert_eq!(d.net().spec().n_layers(), 7);
    }
}
