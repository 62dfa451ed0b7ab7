//! Temporal clip sampling, the real-frame pool the teacher draws from, and
//! horizontal-flip augmentation with its label swap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset, SourceVideo, LABEL_LEFT, LABEL_RIGHT};
use crate::model::{SourceId, VideoClip};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How a fixed-length clip is cut from a longer source video.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// Frame indices spread evenly over the whole source.
    Uniform,
    /// A contiguous window at a seeded random offset.
    RandomWindow,
}

/// Cuts a `clip_len`-frame clip from a source video, keeping frame order.
pub fn sample_clip<T: Scalar>(
    video: &SourceVideo<T>,
    source: SourceId,
    clip_len: usize,
    mode: SampleMode,
    seed: u64,
) -> Result<VideoClip<T>, DataError> {
    let shape = video.frames.shape();
    let (frames, h, w) = (shape[1], shape[2], shape[3]);
    if clip_len == 0 {
        return Err(DataError::EmptyClip);
    }
    if frames == 0 {
        return Err(DataError::EmptyVideo);
    }
    let indices: Vec<usize> = match mode {
        SampleMode::Uniform => (0..clip_len)
            .map(|k| {
                if clip_len == 1 {
                    0
                } else {
                    let t = k as f64 * (frames - 1) as f64 / (clip_len - 1) as f64;
                    t.round() as usize
                }
            })
            .collect(),
        SampleMode::RandomWindow => {
            if frames < clip_len {
                return Err(DataError::WindowTooLong { frames, clip_len });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let start = rng.gen_range(0..=frames - clip_len);
            (start..start + clip_len).collect()
        }
    };

    let plane = h * w;
    let mut data = Vec::with_capacity(3 * clip_len * plane);
    for c in 0..3 {
        for &f in &indices {
            let at = (c * frames + f) * plane;
            data.extend_from_slice(&video.frames.data()[at..at + plane]);
        }
    }
    let volume = Tensor::new(vec![3, clip_len, h, w], data)?;
    Ok(VideoClip::new(volume, Some(video.label), source)?)
}

/// Single frames `[P,3,H,W]` drawn uniformly from a dataset's videos — the
/// sample of real frames the teacher compares distilled images against.
#[derive(Debug, Clone)]
pub struct FramePool<T: Scalar> {
    data: Tensor<T>,
}

impl<T: Scalar> FramePool<T> {
    pub fn len(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &Tensor<T> {
        &self.data
    }

    /// Draws `n` frames uniformly (with replacement) into one `[n,3,H,W]`
    /// batch.
    pub fn sample_batch<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Tensor<T>, DataError> {
        if n == 0 || self.is_empty() {
            return Err(DataError::EmptyPool);
        }
        let frame = self.data.numel() / self.len();
        let mut data = Vec::with_capacity(n * frame);
        for _ in 0..n {
            let i = rng.gen_range(0..self.len());
            data.extend_from_slice(&self.data.data()[i * frame..(i + 1) * frame]);
        }
        let mut shape = self.data.shape().to_vec();
        shape[0] = n;
        Ok(Tensor::new(shape, data)?)
    }
}

/// Samples `pool_size` distinct (video, frame) pairs uniformly from the
/// dataset. Frames enter the pool un-augmented.
pub fn build_frame_pool<T: Scalar>(
    dataset: &Dataset<T>,
    pool_size: usize,
    seed: u64,
) -> Result<FramePool<T>, DataError> {
    if dataset.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    if pool_size == 0 {
        return Err(DataError::EmptyPool);
    }
    let total = dataset.total_frames();
    if pool_size > total {
        return Err(DataError::PoolTooLarge { requested: pool_size, available: total });
    }

    // Partial Fisher-Yates: the first `pool_size` entries are a uniform
    // draw without replacement.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs: Vec<u32> = (0..total as u32).collect();
    for i in 0..pool_size {
        let j = rng.gen_range(i..total);
        pairs.swap(i, j);
    }

    let (h, w) = (dataset.height, dataset.width);
    let plane = h * w;
    let frames = dataset.frames;
    let mut data = Vec::with_capacity(pool_size * 3 * plane);
    for &pair in &pairs[..pool_size] {
        let (v, f) = (pair as usize / frames, pair as usize % frames);
        let video = &dataset.videos[v].frames;
        for c in 0..3 {
            let at = (c * frames + f) * plane;
            data.extend_from_slice(&video.data()[at..at + plane]);
        }
    }
    Ok(FramePool { data: Tensor::new(vec![pool_size, 3, h, w], data)? })
}

/// Which augmentations a call may apply.
#[derive(Debug, Clone, Copy, Default)]
pub struct AugmentFlags {
    pub hflip: bool,
}

/// Mirrors a clip left-right and swaps a left/right motion label.
pub fn hflip_clip<T: Scalar>(clip: &VideoClip<T>) -> VideoClip<T> {
    let volume = clip.volume();
    let w = clip.width();
    let mut data = Vec::with_capacity(volume.numel());
    for row in volume.data().chunks_exact(w) {
        data.extend(row.iter().rev());
    }
    let flipped = Tensor::new(volume.shape().to_vec(), data).expect("same size");
    let label = clip.label.map(|l| match l {
        LABEL_LEFT => LABEL_RIGHT,
        LABEL_RIGHT => LABEL_LEFT,
        other => other,
    });
    VideoClip::new(flipped, label, clip.source).expect("mirror preserves validity")
}

/// Applies each enabled augmentation with probability ½, seeded.
pub fn augment<T: Scalar>(clip: &VideoClip<T>, flags: AugmentFlags, seed: u64) -> VideoClip<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if flags.hflip && rng.gen_bool(0.5) {
        hflip_clip(clip)
    } else {
        clip.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::super::{generate_dataset, SyntheticDatasetSpec};
    use super::*;
    use crate::model::CLIP_LEN;

    fn dataset() -> Dataset<f32> {
        let spec = SyntheticDatasetSpec {
            clips_per_class: 2,
            frames_per_source: 48,
            height: 16,
            width: 16,
            ..SyntheticDatasetSpec::default()
        };
        generate_dataset(&spec).unwrap()
    }

    #[test]
    fn uniform_sampling_is_identity_at_equal_length() {
        let ds = dataset();
        let mut short = ds.videos[0].clone();
        // Cut the source down to exactly CLIP_LEN frames first.
        let head = sample_clip(&short, SourceId(0), CLIP_LEN, SampleMode::RandomWindow, 3).unwrap();
        short.frames = head.volume().clone();
        let clip = sample_clip(&short, SourceId(0), CLIP_LEN, SampleMode::Uniform, 0).unwrap();
        assert_eq!(clip.volume().data(), short.frames.data());
        assert_eq!(clip.label, Some(short.label));
    }

    #[test]
    fn uniform_indices_follow_the_rounding_formula() {
        let ds = dataset();
        let clip =
            sample_clip(&ds.videos[0], SourceId(0), CLIP_LEN, SampleMode::Uniform, 0).unwrap();
        let plane = 16 * 16;
        for (k, want) in [(0usize, 0usize), (1, 2), (31, 47)] {
            let idx = (k as f64 * 47.0 / 31.0).round() as usize;
            assert_eq!(idx, want);
            let got = &clip.volume().data()[k * plane..k * plane + plane];
            let src = &ds.videos[0].frames.data()[want * plane..want * plane + plane];
            assert_eq!(got, src);
        }
    }

    #[test]
    fn random_window_is_contiguous_and_seeded() {
        let ds = dataset();
        let a = sample_clip(&ds.videos[1], SourceId(0), CLIP_LEN, SampleMode::RandomWindow, 9)
            .unwrap();
        let b = sample_clip(&ds.videos[1], SourceId(0), CLIP_LEN, SampleMode::RandomWindow, 9)
            .unwrap();
        assert_eq!(a.volume().data(), b.volume().data());
        let mut short = ds.videos[1].clone();
        short.frames = Tensor::zeros(vec![3, 8, 16, 16]);
        assert!(matches!(
            sample_clip(&short, SourceId(0), CLIP_LEN, SampleMode::RandomWindow, 0),
            Err(DataError::WindowTooLong { frames: 8, clip_len: CLIP_LEN })
        ));
    }

    #[test]
    fn pool_draws_are_deterministic_in_range_and_bounded() {
        let ds = dataset();
        let pool = build_frame_pool(&ds, 64, 7).unwrap();
        let again = build_frame_pool(&ds, 64, 7).unwrap();
        assert_eq!(pool.data().data(), again.data().data());
        assert_eq!(pool.data().shape(), [64, 3, 16, 16]);
        assert!(pool.data().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(matches!(
            build_frame_pool(&ds, ds.total_frames() + 1, 0),
            Err(DataError::PoolTooLarge { .. })
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = pool.sample_batch(5, &mut rng).unwrap();
        assert_eq!(batch.shape(), [5, 3, 16, 16]);
    }

    #[test]
    fn hflip_is_an_involution_and_swaps_left_right() {
        let ds = dataset();
        let left = sample_clip(&ds.videos[4], SourceId(0), CLIP_LEN, SampleMode::Uniform, 0)
            .unwrap();
        assert_eq!(left.label, Some(LABEL_LEFT));
        let flipped = hflip_clip(&left);
        assert_eq!(flipped.label, Some(LABEL_RIGHT));
        assert_ne!(flipped.volume().data(), left.volume().data());
        let back = hflip_clip(&flipped);
        assert_eq!(back.label, Some(LABEL_LEFT));
        assert_eq!(back.volume().data(), left.volume().data());

        let up = sample_clip(&ds.videos[0], SourceId(0), CLIP_LEN, SampleMode::Uniform, 0)
            .unwrap();
        assert_eq!(hflip_clip(&up).label, Some(super::super::LABEL_UP));
    }

    #[test]
    fn augment_coin_is_seed_deterministic() {
        let ds = dataset();
        let clip = sample_clip(&ds.videos[0], SourceId(0), CLIP_LEN, SampleMode::Uniform, 0)
            .unwrap();
        let flags = AugmentFlags { hflip: true };
        for seed in 0..8 {
            let a = augment(&clip, flags, seed);
            let b = augment(&clip, flags, seed);
            assert_eq!(a.volume().data(), b.volume().data());
        }
        let off = augment(&clip, AugmentFlags::default(), 0);
        assert_eq!(off.volume().data(), clip.volume().data());
    }
}
