//! Floating-point scalar abstraction shared by every algorithm in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar used for densities, weights and estimates: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal, rounding when the target is narrower.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    /// Number of mantissa bits, used to pick tolerances that are precision-aware.
    const MANTISSA_DIGITS: u32;

    /// `v[i] = exp(v[i])`. Used by the batched transition kernels.
    fn exp_in_place(v: &mut [Self]) {
        for x in v {
            *x = x.exp();
        }
    }

    /// Dot product with the accumulation order of `lane_dot`.
    fn dot(a: &[Self], b: &[Self]) -> Self {
        lane_dot(a, b)
    }

    /// `acc[i] += x[i] * s`.
    fn axpy(acc: &mut [Self], x: &[Self], s: Self) {
        for (a, &v) in acc.iter_mut().zip(x) {
            *a = *a + v * s;
        }
    }
}

impl Scalar for f32 {
    const MANTISSA_DIGITS: u32 = f32::MANTISSA_DIGITS;
}

impl Scalar for f64 {
    const MANTISSA_DIGITS: u32 = f64::MANTISSA_DIGITS;

    fn exp_in_place(v: &mut [f64]) {
        crate::simd::exp_slice(v)
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        crate::simd::dot(a, b)
    }

    fn axpy(acc: &mut [f64], x: &[f64], s: f64) {
        crate::simd::axpy(acc, x, s)
    }
}

/// Sum with eight independent accumulators in a fixed order.
///
/// The result depends only on the input slice, never on thread count.
#[inline]
pub(crate) fn lane_sum<F: Scalar>(values: &[F]) -> F {
    let mut acc = [F::zero(); 8];
    let chunks = values.chunks_exact(8);
    let rest = chunks.remainder();
    for c in chunks {
        for k in 0..8 {
            acc[k] = acc[k] + c[k];
        }
    }
    let mut total = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for &v in rest {
        total = total + v;
    }
    total
}

/// Dot product with the same fixed-order accumulation as [`lane_sum`].
#[inline]
pub(crate) fn lane_dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] = acc[k] + x[k] * y[k];
        }
    }
    let mut total = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (&x, &y) in ra.iter().zip(rb) {
        total = total + x * y;
    }
    total
}
