//! Seeded parameter initialization: He fan-in scaling ahead of ReLU-family
//! activations, Xavier ahead of the final sigmoids, zero biases, identity
//! batch-norm. All draws happen in f64 so a seed produces the same
//! parameters at every scalar type.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ArchConfig, DecoderParams, EncoderParams, TeacherParams};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(crate) struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub(crate) fn new(seed: u64) -> Self {
        Init { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn normal<T: Scalar>(&mut self, shape: Vec<usize>, std: f64) -> Tensor<T> {
        let dist = Normal::new(0.0, std).expect("std is finite and positive");
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| T::from_f64_lossy(dist.sample(&mut self.rng)))
            .collect();
        Tensor::new(shape, data).expect("shape matches generated data").with_grad()
    }

    /// He: std = √(2 / fan_in), matched to ReLU halving the variance.
    pub(crate) fn he<T: Scalar>(&mut self, shape: Vec<usize>, fan_in: usize) -> Tensor<T> {
        self.normal(shape, (2.0 / fan_in as f64).sqrt())
    }

    /// Xavier: std = √(2 / (fan_in + fan_out)), for the sigmoid output layers.
    pub(crate) fn xavier<T: Scalar>(
        &mut self,
        shape: Vec<usize>,
        fan_in: usize,
        fan_out: usize,
    ) -> Tensor<T> {
        self.normal(shape, (2.0 / (fan_in + fan_out) as f64).sqrt())
    }
}

/// Builds all three parameter sets from one seed. Consumption order is fixed
/// (encoder, decoder, teacher), so the same seed is bit-reproducible.
pub fn init_params<T: Scalar>(
    seed: u64,
    config: &ArchConfig,
) -> (EncoderParams<T>, DecoderParams<T>, TeacherParams<T>) {
    let mut init = Init::new(seed);
    let encoder = EncoderParams::init(config, &mut init);
    let decoder = DecoderParams::init(config, &mut init);
    let teacher = TeacherParams::init(config, &mut init);
    (encoder, decoder, teacher)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn he_variance_tracks_fan_in() {
        let mut init = Init::new(5);
        let fan_in = 16 * 3 * 5 * 5;
        let t: Tensor<f64> = init.he(vec![32, 16, 3, 5, 5], fan_in);
        let n = t.numel() as f64;
        let mean: f64 = t.data().iter().sum::<f64>() / n;
        let var: f64 = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let want = 2.0 / fan_in as f64;
        assert!((var - want).abs() < 0.2 * want, "var {var} vs {want}");
    }

    #[test]
    fn same_seed_reproduces_parameters_exactly() {
        let config = ArchConfig::new(16, 16).unwrap();
        let (e1, _, t1) = init_params::<f32>(42, &config);
        let (e2, _, t2) = init_params::<f32>(42, &config);
        assert_eq!(e1.blocks[0].kernel.data(), e2.blocks[0].kernel.data());
        assert_eq!(t1.layers[4].weight.data(), t2.layers[4].weight.data());
        let (e3, _, _) = init_params::<f32>(43, &config);
        assert_ne!(e1.blocks[0].kernel.data(), e3.blocks[0].kernel.data());
    }
}
