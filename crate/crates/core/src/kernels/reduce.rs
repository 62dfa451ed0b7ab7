//! Sum/mean reductions over arbitrary axis subsets.

use crate::scalar::Scalar;
use crate::tensor::TensorError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
}

/// Validated reduction: which axes collapse, the resulting shape, and how
/// many input elements feed each output element.
#[derive(Debug)]
pub struct ReducePlan {
    keep: Vec<bool>,
    pub out_shape: Vec<usize>,
    pub count: usize,
}

impl ReducePlan {
    /// `axes: None` collapses everything; an explicit list must name valid,
    /// distinct axes. Reducing away all axes yields shape [1].
    pub fn new(shape: &[usize], axes: Option<&[usize]>) -> Result<Self, TensorError> {
        let rank = shape.len();
        let mut keep = vec![true; rank];
        match axes {
            None => keep.fill(false),
            Some(list) => {
                for &axis in list {
                    if axis >= rank {
                        return Err(TensorError::InvalidAxis { axis, rank });
                    }
                    if !keep[axis] {
                        // the same axis twice is almost certainly a bug
                        return Err(TensorError::InvalidAxis { axis, rank });
                    }
                    keep[axis] = false;
                }
            }
        }
        let mut out_shape: Vec<usize> = shape
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(&d, _)| d)
            .collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let count = shape
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| !k)
            .map(|(&d, _)| d)
            .product();
        Ok(ReducePlan {
            keep,
            out_shape,
            count,
        })
    }

    pub fn out_len(&self) -> usize {
        self.out_shape.iter().product()
    }

    /// Calls `f(input_index, output_index)` for every input element in
    /// row-major order; the output index drops the reduced axes.
    fn for_each_pair(&self, shape: &[usize], mut f: impl FnMut(usize, usize)) {
        let rank = shape.len();
        let numel: usize = shape.iter().product();
        // Output stride contributed by each input axis (0 when reduced).
        let mut contrib = vec![0usize; rank];
        let mut s = 1;
        for d in (0..rank).rev() {
            if self.keep[d] {
                contrib[d] = s;
                s *= shape[d];
            }
        }
        let mut idx = vec![0usize; rank];
        let mut out_idx = 0usize;
        for in_idx in 0..numel {
            f(in_idx, out_idx);
            for d in (0..rank).rev() {
                idx[d] += 1;
                out_idx += contrib[d];
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
                out_idx -= contrib[d] * shape[d];
            }
        }
    }
}

/// Forward reduction; returns the reduced buffer (shape in `plan.out_shape`).
pub fn reduce_forward<T: Scalar>(
    op: ReduceOp,
    shape: &[usize],
    plan: &ReducePlan,
    input: &[T],
) -> Vec<T> {
    let mut out = vec![T::zero(); plan.out_len()];
    plan.for_each_pair(shape, |i, o| out[o] += input[i]);
    if op == ReduceOp::Mean {
        let inv = T::from_usize(plan.count).unwrap().recip();
        for v in &mut out {
            *v *= inv;
        }
    }
    out
}

/// Backward reduction: broadcasts each output gradient back over its
/// contributing elements (scaled by 1/count for mean). Accumulates.
pub fn reduce_backward<T: Scalar>(
    op: ReduceOp,
    shape: &[usize],
    plan: &ReducePlan,
    grad_out: &[T],
    grad_in: &mut [T],
) {
    let scale = match op {
        ReduceOp::Sum => T::one(),
        ReduceOp::Mean => T::from_usize(plan.count).unwrap().recip(),
    };
    plan.for_each_pair(shape, |i, o| grad_in[i] += grad_out[o] * scale);
}
