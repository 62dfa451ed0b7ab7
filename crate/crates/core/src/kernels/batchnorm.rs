//! Per-channel batch normalization over [N,C,spatial...] activations.
//!
//! Train mode normalizes with batch statistics (biased variance) and folds an
//! exponential moving average into the running stats (unbiased variance, the
//! usual inference convention). Eval mode applies the running stats as a
//! fixed affine map.

use crate::scalar::Scalar;
use crate::tensor::TensorError;

/// Forward intermediates the train-mode backward needs.
#[derive(Debug)]
pub struct BnCache<T> {
    /// Normalized activations x̂ before gamma/beta.
    pub x_hat: Vec<T>,
    /// Per-channel 1/√(var + ε) from batch statistics.
    pub inv_std: Vec<T>,
}

/// Per-element count for one channel: batch size × spatial volume.
fn channel_count<T>(input: &[T], channels: usize, plane: usize) -> usize {
    debug_assert_eq!(input.len() % (channels * plane), 0);
    (input.len() / (channels * plane)) * plane
}

/// Iterates `input[n, c, :]` rows for one fixed channel.
macro_rules! channel_rows {
    ($buf:expr, $channels:expr, $plane:expr, $c:expr) => {
        $buf.chunks_exact($channels * $plane)
            .map(|sample| &sample[$c * $plane..($c + 1) * $plane])
    };
}

/// Train-mode forward. Normalizes each channel to mean 0 / variance 1 with
/// batch statistics, applies gamma/beta, updates running stats in place, and
/// returns the cache for backward.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_train_forward<T: Scalar>(
    channels: usize,
    plane: usize,
    input: &[T],
    gamma: &[T],
    beta: &[T],
    running_mean: &mut [T],
    running_var: &mut [T],
    eps: T,
    momentum: T,
    out: &mut [T],
) -> Result<BnCache<T>, TensorError> {
    debug_assert_eq!(out.len(), input.len());
    debug_assert_eq!(gamma.len(), channels);
    debug_assert_eq!(beta.len(), channels);
    let count = channel_count(input, channels, plane);
    if count < 2 {
        return Err(TensorError::DegenerateBatch { count });
    }
    let n = T::from_usize(count).unwrap();
    let mut x_hat = vec![T::zero(); input.len()];
    let mut inv_std = vec![T::zero(); channels];
    for c in 0..channels {
        let mut sum = T::zero();
        for row in channel_rows!(input, channels, plane, c) {
            for &v in row {
                sum += v;
            }
        }
        let mean = sum / n;
        let mut sq = T::zero();
        for row in channel_rows!(input, channels, plane, c) {
            for &v in row {
                let d = v - mean;
                sq = sq + d * d;
            }
        }
        let var = sq / n;
        let inv = (var + eps).sqrt().recip();
        inv_std[c] = inv;

        let unbiased = sq / T::from_usize(count - 1).unwrap();
        running_mean[c] = (T::one() - momentum) * running_mean[c] + momentum * mean;
        running_var[c] = (T::one() - momentum) * running_var[c] + momentum * unbiased;

        let (g, b) = (gamma[c], beta[c]);
        let samples = input.chunks_exact(channels * plane);
        let hat_samples = x_hat.chunks_exact_mut(channels * plane);
        let out_samples = out.chunks_exact_mut(channels * plane);
        for ((src, hat), dst) in samples.zip(hat_samples).zip(out_samples) {
            let src = &src[c * plane..(c + 1) * plane];
            let hat = &mut hat[c * plane..(c + 1) * plane];
            let dst = &mut dst[c * plane..(c + 1) * plane];
            for ((&v, h), o) in src.iter().zip(hat.iter_mut()).zip(dst.iter_mut()) {
                let xh = (v - mean) * inv;
                *h = xh;
                *o = g * xh + b;
            }
        }
    }
    Ok(BnCache { x_hat, inv_std })
}

/// Train-mode backward; accumulates into all three gradient buffers.
///
/// With per-channel means m(·) over the batch: dβ = Σg, dγ = Σg·x̂, and
/// dx = γ·inv_std·(g − m(g) − x̂·m(g·x̂)).
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_train_backward<T: Scalar>(
    channels: usize,
    plane: usize,
    grad_out: &[T],
    gamma: &[T],
    cache: &BnCache<T>,
    grad_in: &mut [T],
    grad_gamma: &mut [T],
    grad_beta: &mut [T],
) {
    debug_assert_eq!(grad_out.len(), cache.x_hat.len());
    debug_assert_eq!(grad_in.len(), grad_out.len());
    let count = channel_count(grad_out, channels, plane);
    let n = T::from_usize(count).unwrap();
    for c in 0..channels {
        let mut g_sum = T::zero();
        let mut gx_sum = T::zero();
        let g_rows = channel_rows!(grad_out, channels, plane, c);
        let h_rows = channel_rows!(cache.x_hat, channels, plane, c);
        for (g_row, h_row) in g_rows.zip(h_rows) {
            for (&g, &h) in g_row.iter().zip(h_row) {
                g_sum += g;
                gx_sum = gx_sum + g * h;
            }
        }
        grad_beta[c] += g_sum;
        grad_gamma[c] += gx_sum;

        let g_mean = g_sum / n;
        let gx_mean = gx_sum / n;
        let scale = gamma[c] * cache.inv_std[c];
        let g_samples = grad_out.chunks_exact(channels * plane);
        let h_samples = cache.x_hat.chunks_exact(channels * plane);
        let d_samples = grad_in.chunks_exact_mut(channels * plane);
        for ((g_row, h_row), d_row) in g_samples.zip(h_samples).zip(d_samples) {
            let g_row = &g_row[c * plane..(c + 1) * plane];
            let h_row = &h_row[c * plane..(c + 1) * plane];
            let d_row = &mut d_row[c * plane..(c + 1) * plane];
            for ((&g, &h), d) in g_row.iter().zip(h_row).zip(d_row.iter_mut()) {
                *d += scale * (g - g_mean - h * gx_mean);
            }
        }
    }
}

/// Eval-mode forward: fixed affine map from the running statistics.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_eval_forward<T: Scalar>(
    channels: usize,
    plane: usize,
    input: &[T],
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: T,
    out: &mut [T],
) {
    debug_assert_eq!(out.len(), input.len());
    for c in 0..channels {
        let inv = (running_var[c] + eps).sqrt().recip();
        let scale = gamma[c] * inv;
        let shift = beta[c] - gamma[c] * running_mean[c] * inv;
        let samples = input.chunks_exact(channels * plane);
        let outs = out.chunks_exact_mut(channels * plane);
        for (src, dst) in samples.zip(outs) {
            let src = &src[c * plane..(c + 1) * plane];
            let dst = &mut dst[c * plane..(c + 1) * plane];
            for (&v, o) in src.iter().zip(dst.iter_mut()) {
                *o = scale * v + shift;
            }
        }
    }
}

/// Eval-mode backward: the running stats are constants, so dx = g·γ·inv_std,
/// dγ = Σ g·x̂_eval, dβ = Σ g.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_eval_backward<T: Scalar>(
    channels: usize,
    plane: usize,
    input: &[T],
    grad_out: &[T],
    gamma: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: T,
    grad_in: &mut [T],
    grad_gamma: &mut [T],
    grad_beta: &mut [T],
) {
    debug_assert_eq!(grad_out.len(), input.len());
    debug_assert_eq!(grad_in.len(), input.len());
    for c in 0..channels {
        let inv = (running_var[c] + eps).sqrt().recip();
        let scale = gamma[c] * inv;
        let mean = running_mean[c];
        let mut g_sum = T::zero();
        let mut gx_sum = T::zero();
        let g_samples = grad_out.chunks_exact(channels * plane);
        let i_samples = input.chunks_exact(channels * plane);
        let d_samples = grad_in.chunks_exact_mut(channels * plane);
        for ((g_row, i_row), d_row) in g_samples.zip(i_samples).zip(d_samples) {
            let g_row = &g_row[c * plane..(c + 1) * plane];
            let i_row = &i_row[c * plane..(c + 1) * plane];
            let d_row = &mut d_row[c * plane..(c + 1) * plane];
            for ((&g, &v), d) in g_row.iter().zip(i_row).zip(d_row.iter_mut()) {
                g_sum += g;
                gx_sum = gx_sum + g * ((v - mean) * inv);
                *d += g * scale;
            }
        }
        grad_beta[c] += g_sum;
        grad_gamma[c] += gx_sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_mode_normalizes_each_channel() {
        // [N=2, C=2, plane=4] with distinct per-channel distributions.
        let input: Vec<f64> = (0..16).map(|i| (i as f64 * 0.711).sin() * 3.0 + 1.0).collect();
        let gamma = [1.0, 1.0];
        let beta = [0.0, 0.0];
        let mut rm = [0.0, 0.0];
        let mut rv = [1.0, 1.0];
        let mut out = vec![0.0; 16];
        batchnorm_train_forward(2, 4, &input, &gamma, &beta, &mut rm, &mut rv, 1e-12, 0.1, &mut out)
            .unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = out
                .chunks_exact(8)
                .flat_map(|s| s[c * 4..(c + 1) * 4].to_vec())
                .collect();
            let mean: f64 = vals.iter().sum::<f64>() / 8.0;
            let var: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-4, "channel {c} mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "channel {c} var {var}");
        }
    }

    #[test]
    fn eval_mode_with_unit_stats_is_identity() {
        let input: Vec<f32> = (0..12).map(|i| i as f32 * 0.25 - 1.0).collect();
        let mut out = vec![0.0f32; 12];
        batchnorm_eval_forward(3, 2, &input, &[1.0; 3], &[0.0; 3], &[0.0; 3], &[1.0; 3], 1e-5, &mut out);
        for (a, b) in input.iter().zip(&out) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn degenerate_batch_is_rejected() {
        let input = [1.0f32];
        let mut out = [0.0f32];
        let err = batchnorm_train_forward(
            1, 1, &input, &[1.0], &[0.0], &mut [0.0], &mut [1.0], 1e-5, 0.1, &mut out,
        )
        .unwrap_err();
        assert!(matches!(err, TensorError::DegenerateBatch { count: 1 }));
    }

    #[test]
    fn running_stats_blend_toward_batch_stats() {
        // One channel, values 0 and 2: batch mean 1, unbiased var 2.
        let input = [0.0f64, 2.0];
        let mut rm = [0.0];
        let mut rv = [1.0];
        let mut out = [0.0; 2];
        batchnorm_train_forward(1, 1, &input, &[1.0], &[0.0], &mut rm, &mut rv, 1e-12, 0.1, &mut out)
            .unwrap();
        assert!((rm[0] - 0.1).abs() < 1e-12);
        assert!((rv[0] - (0.9 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn train_backward_matches_finite_differences() {
        let channels = 2;
        let plane = 3;
        let input: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).cos()).collect();
        let gamma = [1.3, 0.7];
        let beta = [0.1, -0.2];
        // Loss: weighted sum of outputs so the FD probe is scalar-valued.
        let weights: Vec<f64> = (0..12).map(|i| (i as f64 * 0.53).sin()).collect();
        let loss = |x: &[f64], g: &[f64], b: &[f64]| -> f64 {
            let mut out = vec![0.0; 12];
            let mut rm = [0.0; 2];
            let mut rv = [1.0; 2];
            batchnorm_train_forward(channels, plane, x, g, b, &mut rm, &mut rv, 1e-5, 0.1, &mut out)
                .unwrap();
            out.iter().zip(&weights).map(|(o, w)| o * w).sum()
        };

        let mut out = vec![0.0; 12];
        let mut rm = [0.0; 2];
        let mut rv = [1.0; 2];
        let cache = batchnorm_train_forward(
            channels, plane, &input, &gamma, &beta, &mut rm, &mut rv, 1e-5, 0.1, &mut out,
        )
        .unwrap();
        let mut dx = vec![0.0; 12];
        let mut dg = vec![0.0; 2];
        let mut db = vec![0.0; 2];
        batchnorm_train_backward(channels, plane, &weights, &gamma, &cache, &mut dx, &mut dg, &mut db);

        let h = 1e-6;
        for i in 0..12 {
            let mut hi = input.clone();
            let mut lo = input.clone();
            hi[i] += h;
            lo[i] -= h;
            let num = (loss(&hi, &gamma, &beta) - loss(&lo, &gamma, &beta)) / (2.0 * h);
            assert!((num - dx[i]).abs() < 1e-6, "dx[{i}]: {num} vs {}", dx[i]);
        }
        for c in 0..2 {
            let mut hi = gamma;
            let mut lo = gamma;
            hi[c] += h;
            lo[c] -= h;
            let num = (loss(&input, &hi, &beta) - loss(&input, &lo, &beta)) / (2.0 * h);
            assert!((num - dg[c]).abs() < 1e-6, "dg[{c}]: {num} vs {}", dg[c]);
            let mut hi = beta;
            let mut lo = beta;
            hi[c] += h;
            lo[c] -= h;
            let num = (loss(&input, &gamma, &hi) - loss(&input, &gamma, &lo)) / (2.0 * h);
            assert!((num - db[c]).abs() < 1e-6, "db[{c}]: {num} vs {}", db[c]);
        }
    }
}
