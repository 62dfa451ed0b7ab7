//! Decoder 𝔻: five transposed-conv blocks re-inflating a distilled image
//! back to a [3,32,H,W] volume, expanding time 1→2→4→8→16→32 with LeakyReLU
//! between blocks and a final sigmoid into pixel range.

use super::init::Init;
use super::{
    ArchConfig, BlockIds, BnParams, ConvBlock, DistilledImage, Mode, ModelError, BN_EPS,
    BN_MOMENTUM, CLIP_LEN, LEAKY_SLOPE,
};
use crate::scalar::Scalar;
use crate::tape::{Tape, ValueId};
use crate::tensor::{Tensor, TensorError};

/// Temporal kernel per block; the first re-opens T=1→2, the rest double.
fn temporal_kernel(block: usize) -> usize {
    if block == 0 {
        2
    } else {
        3
    }
}

/// Stride / padding / output padding per block (spatial dims preserved).
fn block_geometry(block: usize) -> ([usize; 3], [usize; 3], [usize; 3]) {
    if block == 0 {
        ([2, 1, 1], [0, 2, 2], [0, 0, 0])
    } else {
        ([2, 1, 1], [1, 2, 2], [1, 0, 0])
    }
}

/// Parameters of the five decoder blocks.
#[derive(Debug, Clone)]
pub struct DecoderParams<T: Scalar> {
    pub blocks: Vec<ConvBlock<T>>,
    pub config: ArchConfig,
}

impl<T: Scalar> DecoderParams<T> {
    pub(super) fn init(config: &ArchConfig, init: &mut Init) -> Self {
        // Mirror of the encoder's channel plan.
        let mut ch = config.encoder_channels;
        ch.reverse();
        let blocks = (0..5)
            .map(|i| {
                let (c_in, c_out) = (ch[i], ch[i + 1]);
                let kt = temporal_kernel(i);
                // Transposed-conv layout: [C_in, C_out, kT, kH, kW].
                let shape = vec![c_in, c_out, kt, 5, 5];
                let fan_in = c_out * kt * 5 * 5;
                let last = i == 4;
                let kernel = if last {
                    let fan_out = c_in * kt * 5 * 5;
                    init.xavier(shape, fan_in, fan_out)
                } else {
                    init.he(shape, fan_in)
                };
                ConvBlock {
                    kernel,
                    bias: Tensor::zeros(vec![c_out]).with_grad(),
                    bn: (!last).then(|| BnParams::identity(c_out)),
                }
            })
            .collect();
        DecoderParams { blocks, config: config.clone() }
    }

    /// Re-inflates images `[N,3,H,W]` to volumes `[N,3,32,H,W]` on the tape.
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        x: ValueId,
        mode: Mode,
    ) -> Result<(ValueId, Vec<BlockIds>), ModelError> {
        let shape = tape.shape(x).to_vec();
        let want = [3, self.config.height, self.config.width];
        if shape.len() != 4 || shape[1..] != want {
            return Err(TensorError::ShapeMismatch {
                lhs: shape,
                rhs: vec![0, want[0], want[1], want[2]],
            }
            .into());
        }
        let n = shape[0];
        let mut cur = tape.reshape(x, &[n, 3, 1, self.config.height, self.config.width])?;
        let mut ids = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter_mut().enumerate() {
            let (stride, padding, output_padding) = block_geometry(i);
            let kernel = tape.leaf(&block.kernel);
            let bias = tape.leaf(&block.bias);
            cur = tape.conv3d_transpose(cur, kernel, bias, stride, padding, output_padding)?;
            let bn_ids = match &mut block.bn {
                Some(bn) => {
                    let gamma = tape.leaf(&bn.gamma);
                    let beta = tape.leaf(&bn.beta);
                    cur = match mode {
                        Mode::Train => tape.batchnorm_train(
                            cur,
                            gamma,
                            beta,
                            bn.running_mean.data_mut(),
                            bn.running_var.data_mut(),
                            T::from_f64_lossy(BN_EPS),
                            T::from_f64_lossy(BN_MOMENTUM),
                        )?,
                        Mode::Eval => tape.batchnorm_eval(
                            cur,
                            gamma,
                            beta,
                            bn.running_mean.data(),
                            bn.running_var.data(),
                            T::from_f64_lossy(BN_EPS),
                        )?,
                    };
                    cur = tape.leaky_relu(cur, T::from_f64_lossy(LEAKY_SLOPE));
                    Some((gamma, beta))
                }
                None => {
                    cur = tape.sigmoid(cur);
                    None
                }
            };
            ids.push(BlockIds { kernel, bias, bn: bn_ids });
        }
        Ok((cur, ids))
    }

    /// Routes tape gradients back into every block's parameters.
    pub fn accumulate_grads(
        &mut self,
        tape: &Tape<T>,
        ids: &[BlockIds],
    ) -> Result<(), TensorError> {
        for (block, id) in self.blocks.iter_mut().zip(ids) {
            block.accumulate_grads(tape, id)?;
        }
        Ok(())
    }

    /// All tensors (parameters and running stats), named for serialization.
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.blocks
            .iter_mut()
            .enumerate()
            .flat_map(|(i, block)| {
                block
                    .named_tensors_mut()
                    .into_iter()
                    .map(move |(name, t)| (format!("block{}.{name}", i + 1), t))
            })
            .collect()
    }

    /// Read-only view of [`named_tensors_mut`](Self::named_tensors_mut).
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(i, block)| {
                block
                    .named_tensors()
                    .into_iter()
                    .map(move |(name, t)| (format!("block{}.{name}", i + 1), t))
            })
            .collect()
    }
}

/// Reconstructs one clip-shaped volume from one image.
pub fn decode<T: Scalar>(
    params: &mut DecoderParams<T>,
    image: &DistilledImage<T>,
    mode: Mode,
) -> Result<Tensor<T>, ModelError> {
    let mut tape = Tape::new();
    let mut shape = vec![1];
    shape.extend_from_slice(image.image().shape());
    let x = tape.constant(&shape, image.image().data())?;
    let (out, _) = params.forward(&mut tape, x, mode)?;
    let volume = tape.detach(out);
    Ok(Tensor::new(
        vec![3, CLIP_LEN, params.config.height, params.config.width],
        volume.data().to_vec(),
    )?)
}
