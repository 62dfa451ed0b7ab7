//! Raw numeric kernels behind the tape ops.
//!
//! Every kernel is a pure function over flat row-major slices with a fixed
//! summation order, so results are bit-reproducible on a given build.

pub mod batchnorm;
pub mod conv3d;
pub mod matmul;
pub mod reduce;

use crate::scalar::Scalar;

/// `acc[i] += k * src[i]` over equal-length slices.
#[inline]
pub(crate) fn axpy<T: Scalar>(acc: &mut [T], src: &[T], k: T) {
    debug_assert_eq!(acc.len(), src.len());
    for (a, s) in acc.iter_mut().zip(src) {
        *a = *a + k * *s;
    }
}

/// Dot product over equal-length slices.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc = acc + *x * *y;
    }
    acc
}
