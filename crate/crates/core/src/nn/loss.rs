//! L1 objectives.
//!
//! The subgradient of `|x|` at zero is taken to be zero.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One training example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub input: Vec<T>,
    pub target: Vec<T>,
    pub weight: T,
}

impl<T: Scalar> Sample<T> {
    pub fn new(input: Vec<T>, target: Vec<T>, weight: T) -> Self {
        Self {
            input,
            target,
            weight,
        }
    }

    pub fn unweighted(input: Vec<T>, target: Vec<T>) -> Self {
        Self::new(input, target, T::one())
    }
}

#[inline]
pub(crate) fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// `weight * sum_i |pred_i - target_i|`
pub fn l1_loss<T: Scalar>(pred: &[T], target: &[T], weight: T) -> Result<T> {
    if pred.len() != target.len() {
        return Err(Error::DimensionMismatch {
            context: "l1_loss",
            expected: pred.len(),
            got: target.len(),
        });
    }
    Ok(weight * abs_diff_sum(pred, target))
}

#[inline]
fn abs_diff_sum<T: Scalar>(pred: &[T], target: &[T]) -> T {
    let mut s = T::zero();
    for (p, t) in pred.iter().zip(target) {
        s += (*p - *t).abs();
    }
    s
}

/// Per-sample loss used by the trainer.
pub trait Objective<T: Scalar> {
    /// Weight the sample carries in the objective. Zero-weight samples are
    /// skipped by the trainer.
    fn weight(&self, sample: &Sample<T>) -> T;

    fn loss(&self, pred: &[T], sample: &Sample<T>) -> T;

    /// Returns the loss and writes `d loss / d pred` into `grad`.
    fn loss_grad(&self, pred: &[T], sample: &Sample<T>, grad: &mut [T]) -> T;
}

/// `w * |target - pred|_1`
#[derive(Clone, Copy, Debug, Default)]
pub struct WeightedL1;

impl<T: Scalar> Objective<T> for WeightedL1 {
    fn weight(&self, sample: &Sample<T>) -> T {
        sample.weight
    }

    fn loss(&self, pred: &[T], sample: &Sample<T>) -> T {
        sample.weight * abs_diff_sum(pred, &sample.target)
    }

    fn loss_grad(&self, pred: &[T], sample: &Sample<T>, grad: &mut [T]) -> T {
        let w = sample.weight;
        for ((g, p), t) in grad.iter_mut().zip(pred).zip(&sample.target) {
            *g = w * sign(*p - *t);
        }
        w * abs_diff_sum(pred, &sample.target)
    }
}

/// `|target - pred|_1`, ignoring any sample weight.
#[derive(Clone, Copy, Debug, Default)]
pub struct PlainL1;

impl<T: Scalar> Objective<T> for PlainL1 {
    fn weight(&self, _sample: &Sample<T>) -> T {
        T::one()
    }

    fn loss(&self, pred: &[T], sample: &Sample<T>) -> T {
        abs_diff_sum(pred, &sample.target)
    }

    fn loss_grad(&self, pred: &[T], sample: &Sample<T>, grad: &mut [T]) -> T {
        for ((g, p), t) in grad.iter_mut().zip(pred).zip(&sample.target) {
            *g = sign(*p - *t);
        }
        abs_diff_sum(pred, &sample.target)
    }
}
