//! Teacher 𝕋: five fully connected layers scoring a flattened image with the
//! probability that it is a real frame rather than a distilled one.

use super::init::Init;
use super::{ArchConfig, DistilledImage, ModelError};
use crate::scalar::Scalar;
use crate::tape::{Tape, ValueId};
use crate::tensor::{Tensor, TensorError};

/// One fully connected layer, stored as `[in, out]` so rows are samples.
#[derive(Debug, Clone)]
pub struct FcLayer<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Tape leaves recorded for one FC layer during a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct FcIds {
    pub weight: ValueId,
    pub bias: ValueId,
}

/// Parameters of the five teacher layers.
#[derive(Debug, Clone)]
pub struct TeacherParams<T: Scalar> {
    pub layers: Vec<FcLayer<T>>,
    pub config: ArchConfig,
}

impl<T: Scalar> TeacherParams<T> {
    pub(super) fn init(config: &ArchConfig, init: &mut Init) -> Self {
        let mut widths = vec![3 * config.height * config.width];
        widths.extend_from_slice(&config.teacher_widths);
        widths.push(1);
        let layers = (0..widths.len() - 1)
            .map(|i| {
                let (fan_in, fan_out) = (widths[i], widths[i + 1]);
                let last = i == widths.len() - 2;
                let weight = if last {
                    init.xavier(vec![fan_in, fan_out], fan_in, fan_out)
                } else {
                    init.he(vec![fan_in, fan_out], fan_in)
                };
                FcLayer { weight, bias: Tensor::zeros(vec![fan_out]).with_grad() }
            })
            .collect();
        TeacherParams { layers, config: config.clone() }
    }

    /// Records every layer's parameters on the tape as trainable leaves.
    ///
    /// Recording once and reusing the ids lets several forwards (e.g. a real
    /// and a fake batch) accumulate into the same gradient buffers.
    pub fn record(&self, tape: &mut Tape<T>) -> Vec<FcIds> {
        self.layers
            .iter()
            .map(|layer| FcIds { weight: tape.leaf(&layer.weight), bias: tape.leaf(&layer.bias) })
            .collect()
    }

    /// Records the parameters as constants, so no gradient reaches them.
    pub fn record_frozen(&self, tape: &mut Tape<T>) -> Result<Vec<FcIds>, TensorError> {
        self.layers
            .iter()
            .map(|layer| {
                Ok(FcIds {
                    weight: tape.constant(layer.weight.shape(), layer.weight.data())?,
                    bias: tape.constant(layer.bias.shape(), layer.bias.data())?,
                })
            })
            .collect()
    }

    /// Scores a batch of images `[N,3,H,W]` through previously recorded
    /// parameters, returning probabilities `[N]`.
    pub fn forward_recorded(
        &self,
        tape: &mut Tape<T>,
        x: ValueId,
        ids: &[FcIds],
    ) -> Result<ValueId, ModelError> {
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
        let mut cur = tape.reshape(x, &[n, 3 * self.config.height * self.config.width])?;
        let depth = self.layers.len();
        for (i, id) in ids.iter().enumerate() {
            cur = tape.matmul(cur, id.weight)?;
            cur = tape.add_bias(cur, id.bias)?;
            cur = if i + 1 == depth { tape.sigmoid(cur) } else { tape.relu(cur) };
        }
        let scores = tape.reshape(cur, &[n])?;
        Ok(scores)
    }

    /// Records the parameters and scores a batch in one call.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        x: ValueId,
    ) -> Result<(ValueId, Vec<FcIds>), ModelError> {
        let ids = self.record(tape);
        let scores = self.forward_recorded(tape, x, &ids)?;
        Ok((scores, ids))
    }

    /// Routes tape gradients back into every layer's parameters.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>, ids: &[FcIds]) -> Result<(), TensorError> {
        for (layer, id) in self.layers.iter_mut().zip(ids) {
            super::harvest(tape, id.weight, &mut layer.weight)?;
            super::harvest(tape, id.bias, &mut layer.bias)?;
        }
        Ok(())
    }

    /// All tensors, named for serialization.
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, layer)| {
                [
                    (format!("fc{}.weight", i + 1), &mut layer.weight),
                    (format!("fc{}.bias", i + 1), &mut layer.bias),
                ]
            })
            .collect()
    }

    /// Read-only view of [`named_tensors_mut`](Self::named_tensors_mut).
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, layer)| {
                [
                    (format!("fc{}.weight", i + 1), &layer.weight),
                    (format!("fc{}.bias", i + 1), &layer.bias),
                ]
            })
            .collect()
    }
}

/// Probability that one image is a real frame.
pub fn discriminate<T: Scalar>(
    params: &TeacherParams<T>,
    image: &DistilledImage<T>,
) -> Result<T, ModelError> {
    let mut tape = Tape::new();
    let mut shape = vec![1];
    shape.extend_from_slice(image.image().shape());
    let x = tape.constant(&shape, image.image().data())?;
    let (scores, _) = params.forward(&mut tape, x)?;
    Ok(tape.value(scores)[0])
}

#[cfg(test)]
mod tests {
    use super::super::init_params;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> DistilledImage<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..3 * h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
        DistilledImage::new(Tensor::new(vec![3, h, w], data).unwrap()).unwrap()
    }

    #[test]
    fn zero_parameters_score_one_half() {
        let config = ArchConfig::new(16, 16).unwrap();
        let (_, _, mut teacher) = init_params::<f32>(3, &config);
        for layer in &mut teacher.layers {
            layer.weight.data_mut().fill(0.0);
            layer.bias.data_mut().fill(0.0);
        }
        let p = discriminate(&teacher, &random_image(16, 16, 5)).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn scores_stay_in_the_open_unit_interval() {
        let config = ArchConfig::new(16, 16).unwrap();
        let (_, _, teacher) = init_params::<f32>(3, &config);
        for seed in 0..5 {
            let p = discriminate(&teacher, &random_image(16, 16, seed)).unwrap();
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn image_width_mismatch_is_rejected() {
        let config = ArchConfig::new(32, 32).unwrap();
        let (_, _, teacher) = init_params::<f32>(3, &config);
        let err = discriminate(&teacher, &random_image(16, 16, 1)).unwrap_err();
        assert!(matches!(err, ModelError::Tensor(TensorError::ShapeMismatch { .. })));
    }
}
