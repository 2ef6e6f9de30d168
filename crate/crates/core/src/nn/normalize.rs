use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lower end of the encoded range.
pub const ENCODED_LO: f64 = 0.05;
/// Upper end of the encoded range.
pub const ENCODED_HI: f64 = 0.95;

/// Per-component affine map from a fixed domain `[lo, hi]` onto
/// `[ENCODED_LO, ENCODED_HI]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AffineMap {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let m = Self { lo, hi };
        m.validate()?;
        Ok(m)
    }

    /// The same `[lo, hi]` for every one of `dim` components.
    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn concat(&self, other: &AffineMap) -> Self {
        let mut lo = self.lo.clone();
        let mut hi = self.hi.clone();
        lo.extend_from_slice(&other.lo);
        hi.extend_from_slice(&other.hi);
        Self { lo, hi }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.len() != self.hi.len() {
            return Err(Error::DimensionMismatch {
                context: "normalization bounds",
                expected: self.lo.len(),
                got: self.hi.len(),
            });
        }
        if self.lo.is_empty() {
            return Err(Error::Empty("normalization bounds"));
        }
        for (l, h) in self.lo.iter().zip(&self.hi) {
            if !(l.is_finite() && h.is_finite() && h > l) {
                return Err(Error::InvalidSpec(format!("invalid normalization range [{l}, {h}]")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "normalized vector",
                expected: self.dim(),
                got: len,
            });
        }
        Ok(())
    }

    pub fn encode<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        self.check(x.len())?;
        let span = T::of(ENCODED_HI - ENCODED_LO);
        Ok(x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (l, h))| T::of(ENCODED_LO) + span * (*v - T::of(*l)) / T::of(h - l))
            .collect())
    }

    pub fn decode<T: Scalar>(&self, y: &[T]) -> Result<Vec<T>> {
        self.check(y.len())?;
        let span = T::of(ENCODED_HI - ENCODED_LO);
        Ok(y.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (l, h))| T::of(*l) + (*v - T::of(ENCODED_LO)) * T::of(h - l) / span)
            .collect())
    }
}
