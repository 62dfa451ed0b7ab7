//! Clip-to-image representations. All three kinds produce a [3,H,W] image,
//! so one classifier architecture consumes any of them.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{encode, EncoderParams, Mode, SourceId, VideoClip};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::EvalError;

/// How a clip is collapsed into the single image fed to the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepresentationKind {
    /// One uniformly chosen frame; deterministic per (seed, source video).
    SingleRandomFrame,
    /// The temporal mean over all frames.
    MeanFrame,
    /// The encoder's output in eval mode.
    Distilled,
}

impl RepresentationKind {
    pub const ALL: [RepresentationKind; 3] = [
        RepresentationKind::SingleRandomFrame,
        RepresentationKind::MeanFrame,
        RepresentationKind::Distilled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RepresentationKind::SingleRandomFrame => "single_random_frame",
            RepresentationKind::MeanFrame => "mean_frame",
            RepresentationKind::Distilled => "distilled",
        }
    }
}

impl fmt::Display for RepresentationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One independent stream per source video, regardless of visiting order.
fn frame_rng(seed: u64, source: SourceId) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..12].copy_from_slice(&source.0.to_le_bytes());
    key[24..32].copy_from_slice(b"avd-repr");
    ChaCha8Rng::from_seed(key)
}

fn frame_at<T: Scalar>(volume: &Tensor<T>, t: usize) -> Tensor<T> {
    let shape = volume.shape();
    let (frames, height, width) = (shape[1], shape[2], shape[3]);
    let plane = height * width;
    let mut data = Vec::with_capacity(3 * plane);
    for c in 0..3 {
        let start = (c * frames + t) * plane;
        data.extend_from_slice(&volume.data()[start..start + plane]);
    }
    Tensor::new(vec![3, height, width], data).expect("frame slice matches shape")
}

fn mean_frame<T: Scalar>(volume: &Tensor<T>) -> Tensor<T> {
    let shape = volume.shape();
    let (frames, height, width) = (shape[1], shape[2], shape[3]);
    let plane = height * width;
    let mut data = vec![T::zero(); 3 * plane];
    for c in 0..3 {
        for t in 0..frames {
            let start = (c * frames + t) * plane;
            for p in 0..plane {
                data[c * plane + p] += volume.data()[start + p];
            }
        }
    }
    let inv = T::one() / T::from_usize(frames).expect("frame count fits the scalar");
    for v in &mut data {
        *v *= inv;
    }
    Tensor::new(vec![3, height, width], data).expect("mean matches shape")
}

/// Collapses `clip` to a [3,H,W] image. `Distilled` needs encoder parameters;
/// the frame kinds need none. `seed` only affects `SingleRandomFrame`.
pub fn represent<T: Scalar>(
    kind: RepresentationKind,
    clip: &VideoClip<T>,
    encoder: Option<&mut EncoderParams<T>>,
    seed: u64,
) -> Result<Tensor<T>, EvalError> {
    match kind {
        RepresentationKind::SingleRandomFrame => {
            let frames = clip.volume().shape()[1];
            let t = frame_rng(seed, clip.source).gen_range(0..frames);
            Ok(frame_at(clip.volume(), t))
        }
        RepresentationKind::MeanFrame => Ok(mean_frame(clip.volume())),
        RepresentationKind::Distilled => {
            let encoder = encoder.ok_or(EvalError::MissingEncoder)?;
            Ok(encode(encoder, clip, Mode::Eval)?.into_tensor())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ArchConfig, CLIP_LEN};

    fn static_clip(value: f64) -> VideoClip<f64> {
        let volume =
            Tensor::new(vec![3, CLIP_LEN, 16, 16], vec![value; 3 * CLIP_LEN * 256]).unwrap();
        VideoClip::new(volume, Some(0), SourceId(0)).unwrap()
    }

    fn moving_clip() -> VideoClip<f32> {
        let mut data = vec![0.0f32; 3 * CLIP_LEN * 256];
        for t in 0..CLIP_LEN {
            for c in 0..3 {
                data[(c * CLIP_LEN + t) * 256 + t % 256] = 1.0;
            }
        }
        let volume = Tensor::new(vec![3, CLIP_LEN, 16, 16], data).unwrap();
        VideoClip::new(volume, Some(1), SourceId(7)).unwrap()
    }

    #[test]
    fn mean_frame_of_a_static_clip_is_that_frame() {
        let clip = static_clip(0.3);
        let image = represent(RepresentationKind::MeanFrame, &clip, None, 0).unwrap();
        assert_eq!(image.shape(), &[3, 16, 16]);
        for &v in image.data() {
            assert!((v - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn single_random_frame_is_deterministic_and_a_real_frame() {
        let clip = moving_clip();
        let a = represent(RepresentationKind::SingleRandomFrame, &clip, None, 5).unwrap();
        let b = represent(RepresentationKind::SingleRandomFrame, &clip, None, 5).unwrap();
        assert_eq!(a.data(), b.data());
        let matches = (0..CLIP_LEN)
            .filter(|&t| frame_at(clip.volume(), t).data() == a.data())
            .count();
        assert_eq!(matches, 1, "output must be exactly one of the clip's frames");

        let c = represent(RepresentationKind::SingleRandomFrame, &clip, None, 6).unwrap();
        let d = represent(RepresentationKind::SingleRandomFrame, &clip, None, 7).unwrap();
        assert!(
            a.data() != c.data() || a.data() != d.data(),
            "different seeds should eventually pick different frames"
        );
    }

    #[test]
    fn distilled_needs_an_encoder_and_matches_frame_shapes() {
        let clip = moving_clip();
        assert!(matches!(
            represent(RepresentationKind::Distilled, &clip, None, 0),
            Err(EvalError::MissingEncoder)
        ));

        let config = ArchConfig::new(16, 16).unwrap();
        let (mut encoder, _, _) = init_params::<f32>(0, &config);
        let distilled =
            represent(RepresentationKind::Distilled, &clip, Some(&mut encoder), 0).unwrap();
        let frame = represent(RepresentationKind::SingleRandomFrame, &clip, None, 0).unwrap();
        assert_eq!(distilled.shape(), frame.shape());
    }
}
