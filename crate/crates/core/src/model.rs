//! Multinomial softmax regression and the local momentum half-step.
//!
//! Parameters are a `num_classes x (feature_dim + 1)` weight matrix stored
//! row-major; the last column multiplies a constant-1 feature and acts as a
//! per-class bias. The loss is mean cross-entropy over the batch.

use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::task::Sample;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SoftmaxModel {
    pub num_classes: usize,
    pub feature_dim: usize,
}

impl SoftmaxModel {
    pub fn new(num_classes: usize, feature_dim: usize) -> Self {
        Self {
            num_classes,
            feature_dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.num_classes * (self.feature_dim + 1)
    }

    fn row_len(&self) -> usize {
        self.feature_dim + 1
    }

    /// Class scores `W [x; 1]`.
    pub fn logits(&self, theta: &ParamVector, features: &[f64], out: &mut [f64]) {
        let w = theta.as_slice();
        let r = self.row_len();
        for (c, score) in out.iter_mut().enumerate().take(self.num_classes) {
            let row = &w[c * r..(c + 1) * r];
            let dot: f64 = row[..self.feature_dim]
                .iter()
                .zip(features)
                .map(|(a, b)| a * b)
                .sum();
            *score = dot + row[self.feature_dim];
        }
    }

    /// Argmax class; ties go to the lowest class index.
    pub fn predict(&self, theta: &ParamVector, features: &[f64]) -> usize {
        let mut scores = vec![0.0; self.num_classes];
        self.logits(theta, features, &mut scores);
        argmax_lowest(&scores)
    }

    pub fn loss<'a, I>(&self, theta: &ParamVector, batch: I) -> f64
    where
        I: IntoIterator<Item = &'a Sample>,
    {
        let mut scores = vec![0.0; self.num_classes];
        let mut total = 0.0;
        let mut count = 0usize;
        for s in batch {
            self.logits(theta, &s.features, &mut scores);
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + scores.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            total += lse - scores[s.label];
            count += 1;
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    }

    /// Gradient of the mean cross-entropy.
    pub fn gradient<'a, I>(&self, theta: &ParamVector, batch: I) -> ParamVector
    where
        I: IntoIterator<Item = &'a Sample>,
    {
        let r = self.row_len();
        let mut grad = ParamVector::zeros(self.dim());
        let g = grad.as_mut_slice();
        let mut scores = vec![0.0; self.num_classes];
        let mut count = 0usize;
        for s in batch {
            self.logits(theta, &s.features, &mut scores);
            softmax_in_place(&mut scores);
            scores[s.label] -= 1.0;
            for (c, coeff) in scores.iter().enumerate() {
                let row = &mut g[c * r..(c + 1) * r];
                for (gw, x) in row[..self.feature_dim].iter_mut().zip(&s.features) {
                    *gw += coeff * x;
                }
                row[self.feature_dim] += coeff;
            }
            count += 1;
        }
        if count > 0 {
            grad.scale_in_place(1.0 / count as f64);
        }
        grad
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Fraction of samples whose predicted class matches the label.
pub fn evaluate_accuracy(model: &SoftmaxModel, theta: &ParamVector, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::param("cannot evaluate accuracy on an empty sample set"));
    }
    theta.check_dim(model.dim(), "accuracy")?;
    let correct = samples
        .iter()
        .filter(|s| model.predict(theta, &s.features) == s.label)
        .count();
    Ok(correct as f64 / samples.len() as f64)
}

/// Momentum buffer with its (fixed) mixing coefficient and learning rate.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumState {
    pub buffer: ParamVector,
    pub alpha: f64,
    pub eta: f64,
}

impl MomentumState {
    pub fn new(buffer: ParamVector, alpha: f64, eta: f64) -> Self {
        Self { buffer, alpha, eta }
    }
}

/// `m' = (1 - alpha) m + alpha * grad`, `theta' = theta - eta * m'`.
pub fn local_half_step<'a, I>(
    model: &SoftmaxModel,
    theta: &ParamVector,
    mom: &MomentumState,
    batch: I,
) -> Result<(ParamVector, MomentumState)>
where
    I: IntoIterator<Item = &'a Sample>,
{
    theta.check_dim(model.dim(), "local step parameters")?;
    mom.buffer.check_dim(model.dim(), "momentum buffer")?;
    let grad = model.gradient(theta, batch);
    Ok(apply_momentum(theta, mom, &grad))
}

/// The momentum recursion given an already-computed gradient.
pub fn apply_momentum(
    theta: &ParamVector,
    mom: &MomentumState,
    grad: &ParamVector,
) -> (ParamVector, MomentumState) {
    let mut buffer = mom.buffer.scaled(1.0 - mom.alpha);
    buffer.axpy(mom.alpha, grad);
    let mut half = theta.clone();
    half.axpy(-mom.eta, &buffer);
    (
        half,
        MomentumState {
            buffer,
            alpha: mom.alpha,
            eta: mom.eta,
        },
    )
}
