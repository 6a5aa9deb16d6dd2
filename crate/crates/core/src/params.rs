//! Flat parameter vectors.

use std::ops::{Add, Index, Mul, Sub};

use crate::error::{Error, Result};

/// A model's weights flattened into one real vector.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist_sq(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn dist(&self, other: &Self) -> f64 {
        self.dist_sq(other).sqrt()
    }

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: f64, other: &Self) {
        debug_assert_eq!(self.dim(), other.dim());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    pub fn scale_in_place(&mut self, scale: f64) {
        for a in &mut self.0 {
            *a *= scale;
        }
    }

    pub fn scaled(&self, scale: f64) -> Self {
        Self(self.0.iter().map(|a| a * scale).collect())
    }

    pub fn check_dim(&self, expected: usize, what: &str) -> Result<()> {
        if self.dim() == expected {
            Ok(())
        } else {
            Err(Error::protocol(format!(
                "{what}: dimension {} does not match model dimension {expected}",
                self.dim()
            )))
        }
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl Add for &ParamVector {
    type Output = ParamVector;

    fn add(self, rhs: &ParamVector) -> ParamVector {
        debug_assert_eq!(self.dim(), rhs.dim());
        ParamVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &ParamVector {
    type Output = ParamVector;

    fn sub(self, rhs: &ParamVector) -> ParamVector {
        debug_assert_eq!(self.dim(), rhs.dim());
        ParamVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

impl Mul<f64> for &ParamVector {
    type Output = ParamVector;

    fn mul(self, rhs: f64) -> ParamVector {
        self.scaled(rhs)
    }
}

/// Weighted sum `Σ w_k x_k`, accumulated in input order.
pub fn weighted_sum<'a, I>(dim: usize, terms: I) -> ParamVector
where
    I: IntoIterator<Item = (f64, &'a ParamVector)>,
{
    let mut acc = ParamVector::zeros(dim);
    for (w, x) in terms {
        acc.axpy(w, x);
    }
    acc
}
