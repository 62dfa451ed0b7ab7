//! The two-phase training step and the epoch loop. Phase A updates the
//! teacher on real frames versus detached distilled images; phase B makes one
//! joint encoder/decoder update against the frozen teacher. Checksums assert
//! that neither phase leaks into the other's parameters.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{build_frame_pool, hflip_clip, sample_clip, Dataset, SampleMode};
use crate::model::{ArchConfig, AvdParams, Mode, SourceId, CLIP_LEN};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::{stack, Tensor};

use super::optimizer::trainables;
use super::{
    avd_loss, generator_loss, reconstruction_loss, sgd_momentum_step, teacher_loss,
    AvdOptimizer, StepRecord, TrainConfig, TrainError, TrainLog,
};

/// FNV-1a over parameter names and value bits. Detects any parameter change,
/// which is how the step asserts phase isolation.
pub fn params_checksum<'a, T, I>(tensors: I) -> u64
where
    T: Scalar,
    I: IntoIterator<Item = (String, &'a Tensor<T>)>,
{
    let mut hash: u64 = 0xcbf29ce484222325;
    let mut mix = |bytes: &[u8]| {
        for &b in bytes {
            hash ^= u64::from(b);
            hash = hash.wrapping_mul(0x100000001b3);
        }
    };
    for (name, tensor) in tensors {
        mix(name.as_bytes());
        for v in tensor.data() {
            mix(&v.to_f64_lossy().to_bits().to_le_bytes());
        }
    }
    hash
}

fn checksum_coder<T: Scalar>(params: &AvdParams<T>) -> u64 {
    let named = params
        .encoder
        .named_tensors()
        .into_iter()
        .chain(params.decoder.named_tensors());
    params_checksum(named)
}

fn ensure_finite(
    which: &'static str,
    value: f64,
    epoch: usize,
    step: usize,
) -> Result<f64, TrainError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(TrainError::NonFiniteLoss { which, value, epoch, step })
    }
}

fn mean_scalar<T: Scalar>(vals: &[T]) -> f64 {
    let n = vals.len().max(1) as f64;
    vals.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n
}

/// One training step on a clip batch `[N,3,32,H,W]` and a batch of real
/// frames `[M,3,H,W]`. At `lambda = 1` the teacher phase is skipped entirely;
/// its scores are still computed for the log.
#[allow(clippy::too_many_arguments)]
pub fn train_step<T: Scalar>(
    batch: &Tensor<T>,
    real_frames: &Tensor<T>,
    params: &mut AvdParams<T>,
    opt: &mut AvdOptimizer<T>,
    config: &TrainConfig,
    lr: f64,
    epoch: usize,
    step: usize,
) -> Result<StepRecord, TrainError> {
    config.validate()?;
    if batch.shape().first() == Some(&0) || real_frames.shape().first() == Some(&0) {
        return Err(TrainError::EmptyBatch);
    }
    let lr_t = T::from_f64_lossy(lr);
    let momentum = T::from_f64_lossy(config.momentum);

    // The encoder runs once; both phases see the same distilled images.
    let mut tape = Tape::<T>::new();
    let x = tape.constant(batch.shape(), batch.data())?;
    let (images, enc_ids) = params.encoder.forward(&mut tape, x, Mode::Train)?;
    let fakes = tape.detach(images);

    // ── Phase A: teacher on real frames vs detached fakes ──
    let coder_before = checksum_coder(params);
    if config.lambda < 1.0 {
        for _ in 0..config.teacher_updates_per_batch {
            let mut teacher_tape = Tape::<T>::new();
            let ids = params.teacher.record(&mut teacher_tape);
            let real = teacher_tape.constant(real_frames.shape(), real_frames.data())?;
            let fake = teacher_tape.constant(fakes.shape(), fakes.data())?;
            let real_scores = params.teacher.forward_recorded(&mut teacher_tape, real, &ids)?;
            let fake_scores = params.teacher.forward_recorded(&mut teacher_tape, fake, &ids)?;
            let loss = teacher_loss(&mut teacher_tape, real_scores, fake_scores)?;
            ensure_finite("teacher", teacher_tape.value(loss)[0].to_f64_lossy(), epoch, step)?;
            teacher_tape.backward(loss)?;
            params.teacher.accumulate_grads(&teacher_tape, &ids)?;
            let mut tensors = trainables(params.teacher.named_tensors_mut());
            sgd_momentum_step(&mut tensors, &mut opt.teacher, lr_t, momentum)?;
            for t in tensors {
                t.zero_grad();
            }
        }
        assert_eq!(
            checksum_coder(params),
            coder_before,
            "teacher phase must not touch encoder or decoder parameters"
        );
    }

    // ── Phase B: joint encoder/decoder update against the frozen teacher ──
    let teacher_before = params_checksum(params.teacher.named_tensors());
    let teacher_ids = params.teacher.record_frozen(&mut tape)?;
    let fake_scores = params.teacher.forward_recorded(&mut tape, images, &teacher_ids)?;
    let real = tape.constant(real_frames.shape(), real_frames.data())?;
    let real_scores = params.teacher.forward_recorded(&mut tape, real, &teacher_ids)?;
    let (recon_volume, dec_ids) = params.decoder.forward(&mut tape, images, Mode::Train)?;

    let recon = reconstruction_loss(&mut tape, x, recon_volume)?;
    let gen = generator_loss(&mut tape, fake_scores);
    let teacher_metric = teacher_loss(&mut tape, real_scores, fake_scores)?;
    let avd = avd_loss(&mut tape, recon, gen, config.lambda)?;

    let record = StepRecord {
        epoch,
        step,
        recon_loss: ensure_finite(
            "reconstruction",
            tape.value(recon)[0].to_f64_lossy(),
            epoch,
            step,
        )?,
        teacher_loss: ensure_finite(
            "teacher",
            tape.value(teacher_metric)[0].to_f64_lossy(),
            epoch,
            step,
        )?,
        gen_loss: ensure_finite("generator", tape.value(gen)[0].to_f64_lossy(), epoch, step)?,
        avd_loss: ensure_finite("avd", tape.value(avd)[0].to_f64_lossy(), epoch, step)?,
        real_score: ensure_finite(
            "real_score",
            mean_scalar(tape.value(real_scores)),
            epoch,
            step,
        )?,
        fake_score: ensure_finite(
            "fake_score",
            mean_scalar(tape.value(fake_scores)),
            epoch,
            step,
        )?,
    };

    tape.backward(avd)?;
    params.encoder.accumulate_grads(&tape, &enc_ids)?;
    params.decoder.accumulate_grads(&tape, &dec_ids)?;
    let mut tensors = trainables(params.encoder.named_tensors_mut());
    sgd_momentum_step(&mut tensors, &mut opt.encoder, lr_t, momentum)?;
    for t in tensors {
        t.zero_grad();
    }
    let mut tensors = trainables(params.decoder.named_tensors_mut());
    sgd_momentum_step(&mut tensors, &mut opt.decoder, lr_t, momentum)?;
    for t in tensors {
        t.zero_grad();
    }
    assert_eq!(
        params_checksum(params.teacher.named_tensors()),
        teacher_before,
        "joint phase must not touch teacher parameters"
    );

    Ok(record)
}

/// Full training run: fresh parameters from `config.seed`, uniform 32-frame
/// clips of every source video, epochs of shuffled batches with random
/// horizontal flips, learning rate decayed once per epoch.
pub fn train<T: Scalar>(
    dataset: &Dataset<T>,
    config: &TrainConfig,
) -> Result<(AvdParams<T>, TrainLog), TrainError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let need = 10 * config.batch_size;
    let available = dataset.total_frames();
    if available < need {
        return Err(TrainError::PoolTooSmall { available, need });
    }

    let arch = ArchConfig::new(dataset.height, dataset.width)?;
    let mut params = AvdParams::<T>::init(config.seed, &arch);
    let mut opt = AvdOptimizer::matching(&mut params);
    let mut log = TrainLog::new();

    let clips = dataset
        .videos
        .iter()
        .enumerate()
        .map(|(i, v)| sample_clip(v, SourceId(i as u32), CLIP_LEN, SampleMode::Uniform, config.seed))
        .collect::<Result<Vec<_>, _>>()?;
    let pool = build_frame_pool(dataset, available, config.seed)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut lr = config.lr;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..clips.len()).collect();
        order.shuffle(&mut rng);
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let volumes: Vec<Tensor<T>> = chunk
                .iter()
                .map(|&i| {
                    if rng.gen_bool(0.5) {
                        hflip_clip(&clips[i]).volume().clone()
                    } else {
                        clips[i].volume().clone()
                    }
                })
                .collect();
            let refs: Vec<&Tensor<T>> = volumes.iter().collect();
            let batch = stack(&refs)?;
            let reals = pool.sample_batch(chunk.len(), &mut rng)?;
            let record = train_step(&batch, &reals, &mut params, &mut opt, config, lr, epoch, step)?;
            log.push(record);
        }
        lr *= config.lr_decay;
    }
    Ok((params, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, SyntheticDatasetSpec};

    fn tiny_dataset(clips_per_class: usize) -> Dataset<f32> {
        let spec = SyntheticDatasetSpec {
            num_classes: 2,
            clips_per_class,
            frames_per_source: 32,
            height: 16,
            width: 16,
            noise_sigma: 0.0,
            seed: 7,
            ..SyntheticDatasetSpec::default()
        };
        generate_dataset(&spec).unwrap()
    }

    fn tiny_batches(dataset: &Dataset<f32>, n: usize, m: usize) -> (Tensor<f32>, Tensor<f32>) {
        let clips: Vec<_> = dataset
            .videos
            .iter()
            .take(n)
            .enumerate()
            .map(|(i, v)| {
                sample_clip(v, SourceId(i as u32), CLIP_LEN, SampleMode::Uniform, 0).unwrap()
            })
            .collect();
        let volumes: Vec<&Tensor<f32>> = clips.iter().map(|c| c.volume()).collect();
        let batch = stack(&volumes).unwrap();
        let pool = build_frame_pool(dataset, dataset.total_frames(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let reals = pool.sample_batch(m, &mut rng).unwrap();
        (batch, reals)
    }

    fn fresh(seed: u64) -> (AvdParams<f32>, AvdOptimizer<f32>) {
        let arch = ArchConfig::new(16, 16).unwrap();
        let mut params = AvdParams::<f32>::init(seed, &arch);
        let opt = AvdOptimizer::matching(&mut params);
        (params, opt)
    }

    fn config(lambda: f64) -> TrainConfig {
        TrainConfig { lambda, lr: 1e-3, ..TrainConfig::default() }
    }

    #[test]
    fn lambda_one_ignores_the_teacher_entirely() {
        let dataset = tiny_dataset(1);
        let (batch, reals) = tiny_batches(&dataset, 2, 2);
        let (mut a, mut opt_a) = fresh(1);
        let (mut b, mut opt_b) = fresh(1);
        // Same run, except b's teacher holds different weights.
        for (_, t) in b.teacher.named_tensors_mut() {
            for v in t.data_mut() {
                *v += 0.1;
            }
        }
        let teacher_a = params_checksum(a.teacher.named_tensors());
        let ra = train_step(&batch, &reals, &mut a, &mut opt_a, &config(1.0), 1e-3, 0, 0).unwrap();
        let rb = train_step(&batch, &reals, &mut b, &mut opt_b, &config(1.0), 1e-3, 0, 0).unwrap();

        // No teacher phase ran, and the update never read teacher weights.
        assert_eq!(params_checksum(a.teacher.named_tensors()), teacher_a);
        assert_eq!(checksum_coder(&a), checksum_coder(&b));
        assert_eq!(ra.recon_loss, rb.recon_loss);
        assert_eq!(ra.avd_loss, ra.recon_loss);
        // Scores are still logged, and differ because the teachers differ.
        assert!(ra.real_score > 0.0 && ra.real_score < 1.0);
        assert!(ra.fake_score > 0.0 && ra.fake_score < 1.0);
        assert_ne!(ra.real_score, rb.real_score);
    }

    #[test]
    fn both_phases_update_their_own_parameters() {
        let dataset = tiny_dataset(1);
        let (batch, reals) = tiny_batches(&dataset, 2, 2);
        let (mut params, mut opt) = fresh(2);
        let teacher_before = params_checksum(params.teacher.named_tensors());
        let coder_before = checksum_coder(&params);
        let record =
            train_step(&batch, &reals, &mut params, &mut opt, &config(0.5), 1e-3, 0, 0).unwrap();

        assert_ne!(params_checksum(params.teacher.named_tensors()), teacher_before);
        assert_ne!(checksum_coder(&params), coder_before);
        assert!(record.real_score > 0.0 && record.real_score < 1.0);
        assert!(record.fake_score > 0.0 && record.fake_score < 1.0);
        assert!(record.recon_loss > 0.0);
        assert!(record.teacher_loss > 0.0);
        assert!(record.gen_loss > 0.0);
        // The tape combines in f32; recombining the rounded halves in f64
        // agrees only to f32 precision.
        let want = 0.5 * record.recon_loss + 0.5 * record.gen_loss;
        assert!((record.avd_loss - want).abs() < 1e-6 * want.abs().max(1.0));
    }

    #[test]
    fn lambda_zero_leaves_decoder_weights_untouched() {
        let dataset = tiny_dataset(1);
        let (batch, reals) = tiny_batches(&dataset, 2, 2);
        let (mut params, mut opt) = fresh(3);
        let decoder_weights: Vec<Vec<f32>> = trainables(params.decoder.named_tensors_mut())
            .iter()
            .map(|t| t.data().to_vec())
            .collect();
        let encoder_before: Vec<f32> = params.encoder.blocks[0].kernel.data().to_vec();
        train_step(&batch, &reals, &mut params, &mut opt, &config(0.0), 1e-3, 0, 0).unwrap();

        let after: Vec<Vec<f32>> = trainables(params.decoder.named_tensors_mut())
            .iter()
            .map(|t| t.data().to_vec())
            .collect();
        assert_eq!(decoder_weights, after, "fooling loss must not move the decoder");
        assert_ne!(encoder_before, params.encoder.blocks[0].kernel.data());
    }

    #[test]
    fn non_finite_input_aborts_with_diagnostics() {
        let dataset = tiny_dataset(1);
        let (batch, reals) = tiny_batches(&dataset, 2, 2);
        let mut data = batch.data().to_vec();
        data[0] = f32::NAN;
        let poisoned = Tensor::new(batch.shape().to_vec(), data).unwrap();
        let (mut params, mut opt) = fresh(4);
        let err = train_step(&poisoned, &reals, &mut params, &mut opt, &config(0.5), 1e-3, 2, 5)
            .unwrap_err();
        match err {
            TrainError::NonFiniteLoss { epoch, step, .. } => {
                assert_eq!((epoch, step), (2, 5));
            }
            other => panic!("want NonFiniteLoss, got {other:?}"),
        }
    }

    #[test]
    fn fixed_seed_runs_are_bit_identical() {
        let dataset = tiny_dataset(2);
        let config = TrainConfig {
            lambda: 0.5,
            lr: 1e-3,
            lr_decay: 0.5,
            epochs: 2,
            batch_size: 2,
            seed: 11,
            ..TrainConfig::default()
        };
        let (params_a, log_a) = train(&dataset, &config).unwrap();
        let (params_b, log_b) = train(&dataset, &config).unwrap();
        assert_eq!(log_a, log_b);
        assert_eq!(log_a.records().len(), 4);
        assert_eq!(
            params_checksum(params_a.named_tensors()),
            params_checksum(params_b.named_tensors())
        );
        assert_eq!(log_a.to_csv(), log_b.to_csv());
    }

    #[test]
    fn zero_epochs_returns_initial_parameters() {
        let dataset = tiny_dataset(2);
        let config = TrainConfig { epochs: 0, batch_size: 2, seed: 5, ..TrainConfig::default() };
        let (params, log) = train(&dataset, &config).unwrap();
        assert!(log.records().is_empty());
        let arch = ArchConfig::new(16, 16).unwrap();
        let init = AvdParams::<f32>::init(5, &arch);
        assert_eq!(
            params_checksum(params.named_tensors()),
            params_checksum(init.named_tensors())
        );
    }

    #[test]
    fn pool_smaller_than_ten_batches_is_rejected() {
        let dataset = tiny_dataset(1); // 2 videos x 32 frames = 64 < 80
        let config = TrainConfig { batch_size: 8, ..TrainConfig::default() };
        assert!(matches!(
            train(&dataset, &config),
            Err(TrainError::PoolTooSmall { available: 64, need: 80 })
        ));
    }

    /// The full joint loss, as phase B builds it, as a pure function of the
    /// parameters. Clones mutable state so repeated evaluations agree.
    fn joint_loss(
        params: &AvdParams<f32>,
        batch: &Tensor<f32>,
        backward: bool,
    ) -> (f64, Option<AvdParams<f32>>) {
        let mut p = params.clone();
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(batch.shape(), batch.data()).unwrap();
        let (images, enc_ids) = p.encoder.forward(&mut tape, x, Mode::Train).unwrap();
        let teacher_ids = p.teacher.record_frozen(&mut tape).unwrap();
        let fake_scores = p.teacher.forward_recorded(&mut tape, images, &teacher_ids).unwrap();
        let (recon_volume, dec_ids) = p.decoder.forward(&mut tape, images, Mode::Train).unwrap();
        let recon = reconstruction_loss(&mut tape, x, recon_volume).unwrap();
        let gen = generator_loss(&mut tape, fake_scores);
        let avd = avd_loss(&mut tape, recon, gen, 0.5).unwrap();
        let value = f64::from(tape.value(avd)[0]);
        if backward {
            tape.backward(avd).unwrap();
            p.encoder.accumulate_grads(&tape, &enc_ids).unwrap();
            p.decoder.accumulate_grads(&tape, &dec_ids).unwrap();
            (value, Some(p))
        } else {
            (value, None)
        }
    }

    #[test]
    fn joint_loss_gradient_matches_finite_differences() {
        // Smallest supported spatial size, and the largest-gradient kernel
        // coordinates: elsewhere the f32 evaluation noise of the deep forward
        // pass drowns the finite-difference signal.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 3 * CLIP_LEN * 8 * 8;
        let data: Vec<f32> = (0..n).map(|_| rng.gen_range(0.0f32..1.0)).collect();
        let batch = Tensor::new(vec![1, 3, CLIP_LEN, 8, 8], data).unwrap();
        let arch = ArchConfig::new(8, 8).unwrap();
        let params = AvdParams::<f32>::init(6, &arch);
        let (_, graded) = joint_loss(&params, &batch, true);
        let graded = graded.unwrap();
        let grads = graded.encoder.blocks[0].kernel.grad().unwrap();
        let mut order: Vec<usize> = (0..grads.len()).collect();
        order.sort_by(|&a, &b| grads[b].abs().partial_cmp(&grads[a].abs()).unwrap());

        let h = 1e-3f32;
        for &i in order.iter().take(8) {
            let analytic = f64::from(grads[i]);
            let mut plus = params.clone();
            plus.encoder.blocks[0].kernel.data_mut()[i] += h;
            let mut minus = params.clone();
            minus.encoder.blocks[0].kernel.data_mut()[i] -= h;
            let (lp, _) = joint_loss(&plus, &batch, false);
            let (lm, _) = joint_loss(&minus, &batch, false);
            let numeric = (lp - lm) / (2.0 * f64::from(h));
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
            assert!(rel < 1e-2, "coord {i}: analytic {analytic} vs numeric {numeric}, rel {rel}");
        }
    }

}
