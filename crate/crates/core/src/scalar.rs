//! Floating-point abstraction shared by every numerical routine in the crate.
//!
//! All model math is written against [`Scalar`], which is implemented for
//! `f32` and `f64`. Tolerances quoted throughout the crate are calibrated for
//! `f64`; the `f32` instantiation is useful for fast exploratory sweeps.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// floating point: f32 or f64
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal or intermediate into `Self`.
    fn lit(x: f64) -> Self;

    /// Converts a (possibly large) integer count into `Self`.
    fn count(n: u64) -> Self;

    fn as_f64(self) -> f64;

    /// `x log x` with the convention `0 log 0 = 0`.
    #[inline]
    fn xlogx(self) -> Self {
        if self == Self::zero() {
            Self::zero()
        } else {
            self * self.ln()
        }
    }
}

impl Scalar for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }

    #[inline]
    fn count(n: u64) -> Self {
        n as f64
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn count(n: u64) -> Self {
        n as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

/// Numerically stable `log Σ exp(x_i)` using a fixed pairwise reduction tree.
///
/// The tree only depends on `xs.len()`, so the result is bit-identical no matter
/// how the inputs were produced (sequentially or in parallel chunks).
pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    let shifted: Vec<T> = xs.iter().map(|&x| (x - max).exp()).collect();
    max + pairwise_sum(&shifted).ln()
}

/// Sum of `xs` by recursive halving; deterministic for a given length.
pub fn pairwise_sum<T: Scalar>(xs: &[T]) -> T {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().copied().fold(T::zero(), |a, b| a + b);
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Softmax with max-subtraction, written into `out`.
pub fn softmax_into<T: Scalar>(fields: &[T], out: &mut [T]) {
    let max = fields.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for (o, &f) in out.iter_mut().zip(fields) {
        *o = (f - max).exp();
        total = total + *o;
    }
    for o in out.iter_mut() {
        *o = *o / total;
    }
}

pub fn softmax<T: Scalar>(fields: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); fields.len()];
    softmax_into(fields, &mut out);
    out
}

/// Total variation distance, i.e. half the ℓ1 distance.
pub fn total_variation<T: Scalar>(p: &[T], q: &[T]) -> T {
    let l1: T = p.iter().zip(q).map(|(&a, &b)| (a - b).abs()).sum();
    l1 * T::lit(0.5)
}
