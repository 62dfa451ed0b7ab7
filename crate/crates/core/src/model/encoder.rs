//! Encoder 𝔼: five strided 3-D conv blocks collapsing the temporal axis
//! 32→16→8→4→2→1 while preserving H×W, ending in a sigmoid so the result
//! is one RGB image in pixel range.

use super::init::Init;
use super::{
    ArchConfig, BlockIds, BnParams, ConvBlock, DistilledImage, Mode, ModelError, VideoClip,
    BN_EPS, BN_MOMENTUM, CLIP_LEN,
};
use crate::scalar::Scalar;
use crate::tape::{Tape, ValueId};
use crate::tensor::TensorError;

/// Temporal kernel size per block; the last block closes T=2 exactly.
fn temporal_kernel(block: usize) -> usize {
    if block < 4 {
        3
    } else {
        2
    }
}

/// Stride and padding per block: T halves, H and W are "same"-padded.
fn block_geometry(block: usize) -> ([usize; 3], [usize; 3]) {
    if block < 4 {
        ([2, 1, 1], [1, 2, 2])
    } else {
        ([2, 1, 1], [0, 2, 2])
    }
}

/// Parameters of the five encoder blocks.
#[derive(Debug, Clone)]
pub struct EncoderParams<T: Scalar> {
    pub blocks: Vec<ConvBlock<T>>,
    pub config: ArchConfig,
}

impl<T: Scalar> EncoderParams<T> {
    pub(super) fn init(config: &ArchConfig, init: &mut Init) -> Self {
        let ch = &config.encoder_channels;
        let blocks = (0..5)
            .map(|i| {
                let (c_in, c_out) = (ch[i], ch[i + 1]);
                let kt = temporal_kernel(i);
                let shape = vec![c_out, c_in, kt, 5, 5];
                let fan_in = c_in * kt * 5 * 5;
                let last = i == 4;
                let kernel = if last {
                    let fan_out = c_out * kt * 5 * 5;
                    init.xavier(shape, fan_in, fan_out)
                } else {
                    init.he(shape, fan_in)
                };
                ConvBlock {
                    kernel,
                    bias: crate::tensor::Tensor::zeros(vec![c_out]).with_grad(),
                    bn: (!last).then(|| BnParams::identity(c_out)),
                }
            })
            .collect();
        EncoderParams { blocks, config: config.clone() }
    }

    /// Runs a batch `[N,3,32,H,W]` down to images `[N,3,H,W]`, recording on
    /// the tape. Returns the output and the parameter leaf ids.
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        x: ValueId,
        mode: Mode,
    ) -> Result<(ValueId, Vec<BlockIds>), ModelError> {
        let shape = tape.shape(x).to_vec();
        let want = [self.config.encoder_channels[0], CLIP_LEN, self.config.height, self.config.width];
        if shape.len() != 5 || shape[1..] != want {
            return Err(TensorError::ShapeMismatch {
                lhs: shape,
                rhs: vec![0, want[0], want[1], want[2], want[3]],
            }
            .into());
        }
        let n = shape[0];
        let mut cur = x;
        let mut ids = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter_mut().enumerate() {
            let (stride, padding) = block_geometry(i);
            let kernel = tape.leaf(&block.kernel);
            let bias = tape.leaf(&block.bias);
            cur = tape.conv3d(cur, kernel, bias, stride, padding)?;
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
                    cur = tape.relu(cur);
                    Some((gamma, beta))
                }
                None => {
                    cur = tape.sigmoid(cur);
                    None
                }
            };
            ids.push(BlockIds { kernel, bias, bn: bn_ids });
        }
        // [N,3,1,H,W] → [N,3,H,W]
        let out = tape.reshape(cur, &[n, 3, self.config.height, self.config.width])?;
        Ok((out, ids))
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
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut crate::tensor::Tensor<T>)> {
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
    pub fn named_tensors(&self) -> Vec<(String, &crate::tensor::Tensor<T>)> {
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

/// Distills one clip to one image with frozen statistics.
pub fn encode<T: Scalar>(
    params: &mut EncoderParams<T>,
    clip: &VideoClip<T>,
    mode: Mode,
) -> Result<DistilledImage<T>, ModelError> {
    let mut tape = Tape::new();
    let volume = clip.volume();
    let mut shape = vec![1];
    shape.extend_from_slice(volume.shape());
    let x = tape.constant(&shape, volume.data())?;
    let (out, _) = params.forward(&mut tape, x, mode)?;
    let image = tape.detach(out);
    let image = crate::tensor::Tensor::new(
        vec![3, params.config.height, params.config.width],
        image.data().to_vec(),
    )?;
    DistilledImage::new(image)
}

#[cfg(test)]
mod tests {
    use super::super::init_params;
    use super::*;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_clip(h: usize, w: usize, seed: u64) -> VideoClip<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..3 * CLIP_LEN * h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
        let volume = Tensor::new(vec![3, CLIP_LEN, h, w], data).unwrap();
        VideoClip::new(volume, None, super::super::SourceId(0)).unwrap()
    }

    #[test]
    fn encode_collapses_time_and_keeps_space() {
        for (h, w) in [(16, 16), (32, 32)] {
            let config = ArchConfig::new(h, w).unwrap();
            let (mut enc, _, _) = init_params::<f32>(3, &config);
            let image = encode(&mut enc, &random_clip(h, w, 9), Mode::Eval).unwrap();
            assert_eq!(image.image().shape(), &[3, h, w]);
            assert!(image.image().data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn zero_parameters_give_a_flat_half_image() {
        let config = ArchConfig::new(16, 16).unwrap();
        let (mut enc, _, _) = init_params::<f32>(3, &config);
        for block in &mut enc.blocks {
            block.kernel.data_mut().fill(0.0);
            block.bias.data_mut().fill(0.0);
        }
        let image = encode(&mut enc, &random_clip(16, 16, 1), Mode::Eval).unwrap();
        assert!(image.image().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn eval_encode_is_deterministic() {
        let config = ArchConfig::new(16, 16).unwrap();
        let (mut enc, _, _) = init_params::<f32>(3, &config);
        let clip = random_clip(16, 16, 2);
        let a = encode(&mut enc, &clip, Mode::Eval).unwrap();
        let b = encode(&mut enc, &clip, Mode::Eval).unwrap();
        assert_eq!(a.image().data(), b.image().data());
    }

    #[test]
    fn wrong_clip_resolution_is_rejected() {
        let config = ArchConfig::new(32, 32).unwrap();
        let (mut enc, _, _) = init_params::<f32>(3, &config);
        let err = encode(&mut enc, &random_clip(16, 16, 2), Mode::Eval).unwrap_err();
        assert!(matches!(err, ModelError::Tensor(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn train_mode_updates_running_stats_and_eval_does_not() {
        let config = ArchConfig::new(16, 16).unwrap();
        let (mut enc, _, _) = init_params::<f32>(3, &config);
        let before = enc.blocks[0].bn.as_ref().unwrap().running_mean.data().to_vec();
        encode(&mut enc, &random_clip(16, 16, 4), Mode::Eval).unwrap();
        let after_eval = enc.blocks[0].bn.as_ref().unwrap().running_mean.data().to_vec();
        assert_eq!(before, after_eval);
        encode(&mut enc, &random_clip(16, 16, 4), Mode::Train).unwrap();
        let after_train = enc.blocks[0].bn.as_ref().unwrap().running_mean.data().to_vec();
        assert_ne!(before, after_train);
    }
}
