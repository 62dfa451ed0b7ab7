//! 3D convolution (cross-correlation, no kernel flip) and its transpose.
//!
//! Layout is [N,C,T,H,W] row-major for activations, [Cout,Cin,kT,kH,kW] for
//! conv kernels and [Cin,Cout,kT,kH,kW] for transposed-conv kernels. The
//! transpose is realized as the exact adjoint of the forward correlation, so
//! both directions share the same two inner loops (`corr_into` gathers,
//! `scatter_into` spreads) with the roles of the two sides swapped.
//!
//! The innermost loops run along W with unit input stride where possible so
//! they compile to fused multiply-add over contiguous rows.

use super::{axpy, dot};
use crate::scalar::Scalar;
use crate::tensor::TensorError;

/// Resolved loop bounds for one convolution call.
///
/// For a transposed convolution, `in_dims` is the small (input) side and
/// `out_dims` the up-sampled side; [`ConvGeom::flipped`] swaps the sides to
/// express the op as the adjoint of a plain correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub in_dims: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub out_dims: [usize; 3],
}

fn dims5(shape: &[usize]) -> Result<[usize; 5], TensorError> {
    <[usize; 5]>::try_from(shape).map_err(|_| TensorError::RankMismatch {
        expected: 5,
        shape: shape.to_vec(),
    })
}

impl ConvGeom {
    /// Geometry for `conv3d` with input [N,Cin,T,H,W] and kernel
    /// [Cout,Cin,kT,kH,kW]; each output dim is floor((D + 2p − k)/s) + 1.
    pub fn conv(
        input_shape: &[usize],
        kernel_shape: &[usize],
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Self, TensorError> {
        let [batch, c_in, t, h, w] = dims5(input_shape)?;
        let [c_out, kc_in, kt, kh, kw] = dims5(kernel_shape)?;
        assert!(stride.iter().all(|&s| s >= 1), "stride must be >= 1");
        if kc_in != c_in {
            return Err(TensorError::ShapeMismatch {
                lhs: input_shape.to_vec(),
                rhs: kernel_shape.to_vec(),
            });
        }
        let in_dims = [t, h, w];
        let kernel = [kt, kh, kw];
        let mut out_dims = [0usize; 3];
        for d in 0..3 {
            let padded = in_dims[d] + 2 * padding[d];
            if padded < kernel[d] {
                return Err(TensorError::KernelDoesNotFit {
                    input: input_shape.to_vec(),
                    kernel: kernel_shape.to_vec(),
                    stride: stride.to_vec(),
                    padding: padding.to_vec(),
                });
            }
            out_dims[d] = (padded - kernel[d]) / stride[d] + 1;
        }
        Ok(ConvGeom {
            batch,
            c_in,
            c_out,
            in_dims,
            kernel,
            stride,
            padding,
            out_dims,
        })
    }

    /// Geometry for `conv3d_transpose` with input [N,Cin,T,H,W] and kernel
    /// [Cin,Cout,kT,kH,kW]; each output dim is (D − 1)·s − 2p + k + op.
    pub fn conv_transpose(
        input_shape: &[usize],
        kernel_shape: &[usize],
        stride: [usize; 3],
        padding: [usize; 3],
        output_padding: [usize; 3],
    ) -> Result<Self, TensorError> {
        let [batch, c_in, t, h, w] = dims5(input_shape)?;
        let [kc_in, c_out, kt, kh, kw] = dims5(kernel_shape)?;
        assert!(stride.iter().all(|&s| s >= 1), "stride must be >= 1");
        assert!(
            output_padding
                .iter()
                .zip(&stride)
                .all(|(&op, &s)| op < s),
            "output padding must be smaller than stride"
        );
        if kc_in != c_in {
            return Err(TensorError::ShapeMismatch {
                lhs: input_shape.to_vec(),
                rhs: kernel_shape.to_vec(),
            });
        }
        let in_dims = [t, h, w];
        let kernel = [kt, kh, kw];
        let mut out_dims = [0usize; 3];
        for d in 0..3 {
            let out = (in_dims[d] as i64 - 1) * stride[d] as i64 - 2 * padding[d] as i64
                + kernel[d] as i64
                + output_padding[d] as i64;
            if out <= 0 {
                return Err(TensorError::EmptyTransposeOutput {
                    input: input_shape.to_vec(),
                    kernel: kernel_shape.to_vec(),
                    stride: stride.to_vec(),
                    padding: padding.to_vec(),
                    output_padding: output_padding.to_vec(),
                });
            }
            out_dims[d] = out as usize;
        }
        Ok(ConvGeom {
            batch,
            c_in,
            c_out,
            in_dims,
            kernel,
            stride,
            padding,
            out_dims,
        })
    }

    /// Output shape as [N,Cout,T',H',W'].
    pub fn out_shape(&self) -> Vec<usize> {
        vec![
            self.batch,
            self.c_out,
            self.out_dims[0],
            self.out_dims[1],
            self.out_dims[2],
        ]
    }

    /// The same correlation seen from the other side: swaps input/output dims
    /// and channel counts. A transposed convolution is `scatter_into` on its
    /// flipped geometry; its input-gradient is `corr_into` on the same.
    fn flipped(&self) -> ConvGeom {
        ConvGeom {
            batch: self.batch,
            c_in: self.c_out,
            c_out: self.c_in,
            in_dims: self.out_dims,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            out_dims: self.in_dims,
        }
    }

    pub fn in_len(&self) -> usize {
        self.batch * self.c_in * self.in_dims.iter().product::<usize>()
    }

    pub fn out_len(&self) -> usize {
        self.batch * self.c_out * self.out_dims.iter().product::<usize>()
    }

    pub fn kernel_len(&self) -> usize {
        self.c_in * self.c_out * self.kernel.iter().product::<usize>()
    }
}

#[inline]
fn row_start(n: usize, channels: usize, ch: usize, dims: [usize; 3], t: usize, h: usize) -> usize {
    (((n * channels + ch) * dims[0] + t) * dims[1] + h) * dims[2]
}

/// Correlation gather: for every output row accumulate
/// `out[o] (+)= Σ kernel · input[o·s + d − p]`. `ACCUM` keeps existing
/// contents (gradient accumulation); otherwise rows start at the bias.
fn corr_into<T: Scalar, const ACCUM: bool>(
    g: &ConvGeom,
    input: &[T],
    kernel: &[T],
    bias: Option<&[T]>,
    out: &mut [T],
) {
    debug_assert_eq!(input.len(), g.in_len());
    debug_assert_eq!(kernel.len(), g.kernel_len());
    debug_assert_eq!(out.len(), g.out_len());
    let [td, hd, wd] = g.in_dims;
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.padding;
    let [ot_d, oh_d, ow_d] = g.out_dims;
    for n in 0..g.batch {
        for co in 0..g.c_out {
            for ot in 0..ot_d {
                for oh in 0..oh_d {
                    let o0 = row_start(n, g.c_out, co, g.out_dims, ot, oh);
                    let out_row = &mut out[o0..o0 + ow_d];
                    if !ACCUM {
                        out_row.fill(bias.map_or_else(T::zero, |b| b[co]));
                    }
                    for ci in 0..g.c_in {
                        for dt in 0..kt {
                            let it = (ot * st + dt) as i64 - pt as i64;
                            if it < 0 || it >= td as i64 {
                                continue;
                            }
                            for dh in 0..kh {
                                let ih = (oh * sh + dh) as i64 - ph as i64;
                                if ih < 0 || ih >= hd as i64 {
                                    continue;
                                }
                                let i0 =
                                    row_start(n, g.c_in, ci, g.in_dims, it as usize, ih as usize);
                                let in_row = &input[i0..i0 + wd];
                                let k0 = (((co * g.c_in + ci) * kt + dt) * kh + dh) * kw;
                                let k_row = &kernel[k0..k0 + kw];
                                if sw == 1 {
                                    for (dw, &kv) in k_row.iter().enumerate() {
                                        // iw = ow + dw − pw must land in [0, wd)
                                        let lo = pw.saturating_sub(dw);
                                        let hi =
                                            (wd + pw).saturating_sub(dw).min(ow_d);
                                        if lo >= hi {
                                            continue;
                                        }
                                        let shift = dw + lo - pw;
                                        axpy(
                                            &mut out_row[lo..hi],
                                            &in_row[shift..shift + hi - lo],
                                            kv,
                                        );
                                    }
                                } else {
                                    for (dw, &kv) in k_row.iter().enumerate() {
                                        for ow in 0..ow_d {
                                            let iw = (ow * sw + dw) as i64 - pw as i64;
                                            if iw >= 0 && iw < wd as i64 {
                                                out_row[ow] =
                                                    out_row[ow] + kv * in_row[iw as usize];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Correlation scatter (the adjoint of [`corr_into`]): for every row of `src`
/// spread `kernel · src[o]` into `dst[o·s + d − p]`. Always accumulates.
fn scatter_into<T: Scalar>(g: &ConvGeom, src: &[T], kernel: &[T], dst: &mut [T]) {
    debug_assert_eq!(src.len(), g.out_len());
    debug_assert_eq!(kernel.len(), g.kernel_len());
    debug_assert_eq!(dst.len(), g.in_len());
    let [td, hd, wd] = g.in_dims;
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.padding;
    let [ot_d, oh_d, ow_d] = g.out_dims;
    for n in 0..g.batch {
        for co in 0..g.c_out {
            for ot in 0..ot_d {
                for oh in 0..oh_d {
                    let o0 = row_start(n, g.c_out, co, g.out_dims, ot, oh);
                    let src_row = &src[o0..o0 + ow_d];
                    for ci in 0..g.c_in {
                        for dt in 0..kt {
                            let it = (ot * st + dt) as i64 - pt as i64;
                            if it < 0 || it >= td as i64 {
                                continue;
                            }
                            for dh in 0..kh {
                                let ih = (oh * sh + dh) as i64 - ph as i64;
                                if ih < 0 || ih >= hd as i64 {
                                    continue;
                                }
                                let i0 =
                                    row_start(n, g.c_in, ci, g.in_dims, it as usize, ih as usize);
                                let dst_row = &mut dst[i0..i0 + wd];
                                let k0 = (((co * g.c_in + ci) * kt + dt) * kh + dh) * kw;
                                let k_row = &kernel[k0..k0 + kw];
                                if sw == 1 {
                                    for (dw, &kv) in k_row.iter().enumerate() {
                                        let lo = pw.saturating_sub(dw);
                                        let hi =
                                            (wd + pw).saturating_sub(dw).min(ow_d);
                                        if lo >= hi {
                                            continue;
                                        }
                                        let shift = dw + lo - pw;
                                        axpy(
                                            &mut dst_row[shift..shift + hi - lo],
                                            &src_row[lo..hi],
                                            kv,
                                        );
                                    }
                                } else {
                                    for (dw, &kv) in k_row.iter().enumerate() {
                                        for ow in 0..ow_d {
                                            let iw = (ow * sw + dw) as i64 - pw as i64;
                                            if iw >= 0 && iw < wd as i64 {
                                                dst_row[iw as usize] =
                                                    dst_row[iw as usize] + kv * src_row[ow];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Kernel gradient shared by both directions: pairs each `src` row (the
/// correlation-output side) with the matching `wide` rows (the wide side) and
/// accumulates per-tap dot products. Always accumulates into `grad_kernel`.
fn kernel_grad_into<T: Scalar>(g: &ConvGeom, wide: &[T], src: &[T], grad_kernel: &mut [T]) {
    debug_assert_eq!(wide.len(), g.in_len());
    debug_assert_eq!(src.len(), g.out_len());
    debug_assert_eq!(grad_kernel.len(), g.kernel_len());
    let [td, hd, wd] = g.in_dims;
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.padding;
    let [ot_d, oh_d, ow_d] = g.out_dims;
    for n in 0..g.batch {
        for co in 0..g.c_out {
            for ot in 0..ot_d {
                for oh in 0..oh_d {
                    let o0 = row_start(n, g.c_out, co, g.out_dims, ot, oh);
                    let src_row = &src[o0..o0 + ow_d];
                    for ci in 0..g.c_in {
                        for dt in 0..kt {
                            let it = (ot * st + dt) as i64 - pt as i64;
                            if it < 0 || it >= td as i64 {
                                continue;
                            }
                            for dh in 0..kh {
                                let ih = (oh * sh + dh) as i64 - ph as i64;
                                if ih < 0 || ih >= hd as i64 {
                                    continue;
                                }
                                let i0 =
                                    row_start(n, g.c_in, ci, g.in_dims, it as usize, ih as usize);
                                let in_row = &wide[i0..i0 + wd];
                                let k0 = (((co * g.c_in + ci) * kt + dt) * kh + dh) * kw;
                                if sw == 1 {
                                    for dw in 0..kw {
                                        let lo = pw.saturating_sub(dw);
                                        let hi =
                                            (wd + pw).saturating_sub(dw).min(ow_d);
                                        if lo >= hi {
                                            continue;
                                        }
                                        let shift = dw + lo - pw;
                                        grad_kernel[k0 + dw] += dot(
                                            &src_row[lo..hi],
                                            &in_row[shift..shift + hi - lo],
                                        );
                                    }
                                } else {
                                    for dw in 0..kw {
                                        let mut acc = T::zero();
                                        for ow in 0..ow_d {
                                            let iw = (ow * sw + dw) as i64 - pw as i64;
                                            if iw >= 0 && iw < wd as i64 {
                                                acc = acc
                                                    + src_row[ow] * in_row[iw as usize];
                                            }
                                        }
                                        grad_kernel[k0 + dw] += acc;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

// ── register-blocked fast paths ──
//
// The generic loops above keep the accumulator row in memory, so every kernel
// tap pays a store-to-load round trip. The specialized versions below hold one
// W-row of accumulators in a fixed-size local array (register-resident after
// SROA) across all taps, and read from a zero-padded copy of the wide side so
// the inner loops are branch-free. They are exact re-orderings of the same
// sums over H/W; only instantiation for common (row width, kernel width)
// pairs is provided, with the generic loops as fallback.

/// Pads each [h,w] plane of `src` (`planes` of them) by `pad_h`/`pad_w` zeros
/// on each side. Returns (buffer, padded h, padded w).
fn padded_copy<T: Scalar>(
    src: &[T],
    planes: usize,
    h: usize,
    w: usize,
    pad_h: usize,
    pad_w: usize,
) -> (Vec<T>, usize, usize) {
    let hp = h + 2 * pad_h;
    let wp = w + 2 * pad_w;
    let mut out = vec![T::zero(); planes * hp * wp];
    for p in 0..planes {
        for ih in 0..h {
            let s0 = (p * h + ih) * w;
            let d0 = ((p * hp + ih + pad_h) * wp) + pad_w;
            out[d0..d0 + w].copy_from_slice(&src[s0..s0 + w]);
        }
    }
    (out, hp, wp)
}

#[inline]
fn as_row<T, const N: usize>(s: &[T]) -> &[T; N] {
    s.try_into().ok().expect("row length mismatch")
}

/// Forward correlation with a register-resident output row. Requires
/// `sw == 1`, `kw == KW`, `ow == OW`.
fn corr_fast<T: Scalar, const OW: usize, const KW: usize>(
    g: &ConvGeom,
    input: &[T],
    kernel: &[T],
    bias: Option<&[T]>,
    accum: bool,
    out: &mut [T],
) {
    let [td, hd, wd] = g.in_dims;
    let [kt, kh, _] = g.kernel;
    let [st, sh, _] = g.stride;
    let [pt, ph, pw] = g.padding;
    let [ot_d, oh_d, _] = g.out_dims;
    let (pad, hp, wp) = padded_copy(input, g.batch * g.c_in * td, hd, wd, ph, pw);
    debug_assert_eq!(wp, OW + KW - 1);
    for n in 0..g.batch {
        for co in 0..g.c_out {
            let b = bias.map_or_else(T::zero, |b| b[co]);
            for ot in 0..ot_d {
                for oh in 0..oh_d {
                    let mut acc = [b; OW];
                    for ci in 0..g.c_in {
                        for dt in 0..kt {
                            let it = (ot * st + dt) as i64 - pt as i64;
                            if it < 0 || it >= td as i64 {
                                continue;
                            }
                            let plane0 = ((n * g.c_in + ci) * td + it as usize) * hp;
                            let k00 = ((co * g.c_in + ci) * kt + dt) * kh * KW;
                            for dh in 0..kh {
                                let r0 = (plane0 + oh * sh + dh) * wp;
                                let row = &pad[r0..r0 + wp];
                                let kr = &kernel[k00 + dh * KW..k00 + (dh + 1) * KW];
                                for dw in 0..KW {
                                    let kv = kr[dw];
                                    let seg = as_row::<T, OW>(&row[dw..dw + OW]);
                                    for j in 0..OW {
                                        acc[j] = acc[j] + kv * seg[j];
                                    }
                                }
                            }
                        }
                    }
                    let o0 = row_start(n, g.c_out, co, g.out_dims, ot, oh);
                    let out_row = &mut out[o0..o0 + OW];
                    if accum {
                        for (o, a) in out_row.iter_mut().zip(&acc) {
                            *o += *a;
                        }
                    } else {
                        out_row.copy_from_slice(&acc);
                    }
                }
            }
        }
    }
}

/// Adjoint gather with a register-resident row on the wide side: computes
/// `dst[n,ci,it,ih,:] (+)= Σ kernel⋆ · src[ot,oh,:]` — the input-gradient of
/// the correlation (or a transposed-conv forward when `bias` is given).
/// Requires `sh == sw == 1`, `kw == KW`, `wd == IW`, `ph < kh`, `pw < kw`.
fn gather_fast<T: Scalar, const IW: usize, const KW: usize>(
    g: &ConvGeom,
    src: &[T],
    kernel: &[T],
    bias: Option<&[T]>,
    accum: bool,
    dst: &mut [T],
) {
    let [td, hd, _] = g.in_dims;
    let [kt, kh, kw] = g.kernel;
    let st = g.stride[0];
    let [pt, ph, pw] = g.padding;
    let [ot_d, oh_d, ow_d] = g.out_dims;
    let (pad, hp, wp) = padded_copy(
        src,
        g.batch * g.c_out * ot_d,
        oh_d,
        ow_d,
        kh - 1 - ph,
        kw - 1 - pw,
    );
    debug_assert_eq!(wp, IW + KW - 1);
    debug_assert_eq!(hp, hd + kh - 1);
    for n in 0..g.batch {
        for ci in 0..g.c_in {
            let b = bias.map_or_else(T::zero, |b| b[ci]);
            for it in 0..td {
                // Taps dt whose source slice ot = (it + pt − dt)/st exists.
                let mut taps = [(0usize, 0usize); 8];
                let mut n_taps = 0;
                for dt in 0..kt {
                    let num = it as i64 + pt as i64 - dt as i64;
                    if num >= 0 && num % st as i64 == 0 && (num / st as i64) < ot_d as i64 {
                        taps[n_taps] = (dt, (num / st as i64) as usize);
                        n_taps += 1;
                    }
                }
                for ih in 0..hd {
                    let mut acc = [b; IW];
                    for co in 0..g.c_out {
                        for &(dt, ot) in &taps[..n_taps] {
                            let plane0 = ((n * g.c_out + co) * ot_d + ot) * hp;
                            let k00 = ((co * g.c_in + ci) * kt + dt) * kh * KW;
                            for dh_f in 0..kh {
                                let r0 = (plane0 + ih + dh_f) * wp;
                                let row = &pad[r0..r0 + wp];
                                let kr =
                                    &kernel[k00 + (kh - 1 - dh_f) * KW..k00 + (kh - dh_f) * KW];
                                for dw_f in 0..KW {
                                    let kv = kr[KW - 1 - dw_f];
                                    let seg = as_row::<T, IW>(&row[dw_f..dw_f + IW]);
                                    for j in 0..IW {
                                        acc[j] = acc[j] + kv * seg[j];
                                    }
                                }
                            }
                        }
                    }
                    let d0 = row_start(n, g.c_in, ci, g.in_dims, it, ih);
                    let dst_row = &mut dst[d0..d0 + IW];
                    if accum {
                        for (o, a) in dst_row.iter_mut().zip(&acc) {
                            *o += *a;
                        }
                    } else {
                        dst_row.copy_from_slice(&acc);
                    }
                }
            }
        }
    }
}

/// Kernel gradient with per-tap vector accumulators, reduced once per tap
/// group. Requires `sw == 1`, `kw == KW`, `ow == OW`.
fn kgrad_fast<T: Scalar, const OW: usize, const KW: usize>(
    g: &ConvGeom,
    wide: &[T],
    src: &[T],
    grad_kernel: &mut [T],
) {
    let [td, hd, wd] = g.in_dims;
    let [kt, kh, _] = g.kernel;
    let [st, sh, _] = g.stride;
    let [pt, ph, pw] = g.padding;
    let [ot_d, oh_d, _] = g.out_dims;
    let (pad, hp, wp) = padded_copy(wide, g.batch * g.c_in * td, hd, wd, ph, pw);
    debug_assert_eq!(wp, OW + KW - 1);
    for n in 0..g.batch {
        for co in 0..g.c_out {
            for ci in 0..g.c_in {
                for dt in 0..kt {
                    for dh in 0..kh {
                        let k0 = (((co * g.c_in + ci) * kt + dt) * kh + dh) * KW;
                        for dw in 0..KW {
                            let mut acc = [T::zero(); OW];
                            for ot in 0..ot_d {
                                let it = (ot * st + dt) as i64 - pt as i64;
                                if it < 0 || it >= td as i64 {
                                    continue;
                                }
                                let plane0 = ((n * g.c_in + ci) * td + it as usize) * hp;
                                let s_plane0 = ((n * g.c_out + co) * ot_d + ot) * oh_d;
                                for oh in 0..oh_d {
                                    let r0 = (plane0 + oh * sh + dh) * wp + dw;
                                    let seg = as_row::<T, OW>(&pad[r0..r0 + OW]);
                                    let s0 = (s_plane0 + oh) * OW;
                                    let s_row = as_row::<T, OW>(&src[s0..s0 + OW]);
                                    for j in 0..OW {
                                        acc[j] = acc[j] + s_row[j] * seg[j];
                                    }
                                }
                            }
                            let mut s = T::zero();
                            for j in 0..OW {
                                s += acc[j];
                            }
                            grad_kernel[k0 + dw] += s;
                        }
                    }
                }
            }
        }
    }
}

macro_rules! dispatch_row_width {
    ($fn_name:ident :: <$($extra:ty),*> ($row:expr, $kw:expr) ($($args:expr),*)) => {
        match ($row, $kw) {
            (32, 5) => { $fn_name::<$($extra),*, 32, 5>($($args),*); true }
            (16, 5) => { $fn_name::<$($extra),*, 16, 5>($($args),*); true }
            (8, 5) => { $fn_name::<$($extra),*, 8, 5>($($args),*); true }
            (32, 3) => { $fn_name::<$($extra),*, 32, 3>($($args),*); true }
            (16, 3) => { $fn_name::<$($extra),*, 16, 3>($($args),*); true }
            (8, 3) => { $fn_name::<$($extra),*, 8, 3>($($args),*); true }
            _ => false,
        }
    };
}

fn try_corr_fast<T: Scalar>(
    g: &ConvGeom,
    input: &[T],
    kernel: &[T],
    bias: Option<&[T]>,
    accum: bool,
    out: &mut [T],
) -> bool {
    if g.stride[2] != 1 || g.kernel[0] > 8 {
        return false;
    }
    dispatch_row_width!(corr_fast::<T>(g.out_dims[2], g.kernel[2]) (g, input, kernel, bias, accum, out))
}

fn try_gather_fast<T: Scalar>(
    g: &ConvGeom,
    src: &[T],
    kernel: &[T],
    bias: Option<&[T]>,
    accum: bool,
    dst: &mut [T],
) -> bool {
    if g.stride[1] != 1
        || g.stride[2] != 1
        || g.kernel[0] > 8
        || g.padding[1] >= g.kernel[1]
        || g.padding[2] >= g.kernel[2]
    {
        return false;
    }
    dispatch_row_width!(gather_fast::<T>(g.in_dims[2], g.kernel[2]) (g, src, kernel, bias, accum, dst))
}

fn try_kgrad_fast<T: Scalar>(g: &ConvGeom, wide: &[T], src: &[T], grad_kernel: &mut [T]) -> bool {
    if g.stride[2] != 1 || g.kernel[0] > 8 {
        return false;
    }
    dispatch_row_width!(kgrad_fast::<T>(g.out_dims[2], g.kernel[2]) (g, wide, src, grad_kernel))
}

fn bias_grad_into<T: Scalar>(channels: usize, plane: usize, grad_out: &[T], grad_bias: &mut [T]) {
    debug_assert_eq!(grad_out.len() % (channels * plane), 0);
    debug_assert_eq!(grad_bias.len(), channels);
    for chunk in grad_out.chunks_exact(channels * plane) {
        for (c, gb) in grad_bias.iter_mut().enumerate() {
            let mut acc = T::zero();
            for &v in &chunk[c * plane..(c + 1) * plane] {
                acc += v;
            }
            *gb += acc;
        }
    }
}

// ── conv3d ──

/// Forward correlation; `out` is overwritten.
pub fn conv3d_forward<T: Scalar>(g: &ConvGeom, input: &[T], kernel: &[T], bias: &[T], out: &mut [T]) {
    debug_assert_eq!(bias.len(), g.c_out);
    if !try_corr_fast(g, input, kernel, Some(bias), false, out) {
        corr_into::<T, false>(g, input, kernel, Some(bias), out);
    }
}

/// Accumulates ∂L/∂input given ∂L/∂output.
pub fn conv3d_grad_input<T: Scalar>(g: &ConvGeom, grad_out: &[T], kernel: &[T], grad_in: &mut [T]) {
    if !try_gather_fast(g, grad_out, kernel, None, true, grad_in) {
        scatter_into(g, grad_out, kernel, grad_in);
    }
}

/// Accumulates ∂L/∂kernel given the forward input and ∂L/∂output.
pub fn conv3d_grad_kernel<T: Scalar>(g: &ConvGeom, input: &[T], grad_out: &[T], grad_kernel: &mut [T]) {
    if !try_kgrad_fast(g, input, grad_out, grad_kernel) {
        kernel_grad_into(g, input, grad_out, grad_kernel);
    }
}

/// Accumulates ∂L/∂bias given ∂L/∂output.
pub fn conv3d_grad_bias<T: Scalar>(g: &ConvGeom, grad_out: &[T], grad_bias: &mut [T]) {
    bias_grad_into(g.c_out, g.out_dims.iter().product(), grad_out, grad_bias);
}

// ── conv3d_transpose ──

/// Forward transposed convolution; `out` is overwritten. Equals the
/// input-gradient of the flipped correlation, plus bias.
pub fn convt3d_forward<T: Scalar>(g: &ConvGeom, input: &[T], kernel: &[T], bias: &[T], out: &mut [T]) {
    debug_assert_eq!(bias.len(), g.c_out);
    debug_assert_eq!(out.len(), g.out_len());
    let flip = g.flipped();
    if try_gather_fast(&flip, input, kernel, Some(bias), false, out) {
        return;
    }
    let plane: usize = g.out_dims.iter().product();
    for chunk in out.chunks_exact_mut(plane * g.c_out) {
        for (c, ch_plane) in chunk.chunks_exact_mut(plane).enumerate() {
            ch_plane.fill(bias[c]);
        }
    }
    scatter_into(&flip, input, kernel, out);
}

/// Accumulates ∂L/∂input of the transposed convolution.
pub fn convt3d_grad_input<T: Scalar>(g: &ConvGeom, grad_out: &[T], kernel: &[T], grad_in: &mut [T]) {
    let flip = g.flipped();
    if !try_corr_fast(&flip, grad_out, kernel, None, true, grad_in) {
        corr_into::<T, true>(&flip, grad_out, kernel, None, grad_in);
    }
}

/// Accumulates ∂L/∂kernel of the transposed convolution.
pub fn convt3d_grad_kernel<T: Scalar>(g: &ConvGeom, input: &[T], grad_out: &[T], grad_kernel: &mut [T]) {
    let flip = g.flipped();
    if !try_kgrad_fast(&flip, grad_out, input, grad_kernel) {
        kernel_grad_into(&flip, grad_out, input, grad_kernel);
    }
}

/// Accumulates ∂L/∂bias of the transposed convolution.
pub fn convt3d_grad_bias<T: Scalar>(g: &ConvGeom, grad_out: &[T], grad_bias: &mut [T]) {
    bias_grad_into(g.c_out, g.out_dims.iter().product(), grad_out, grad_bias);
}
