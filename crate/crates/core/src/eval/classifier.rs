//! Downstream 2D classifier: three strided conv blocks, global average
//! pooling, and a linear head. Deliberately small — every representation
//! kind gets the same capacity, so accuracy gaps come from the input alone.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::kernels::reduce::ReduceOp;
use crate::model::{harvest, BlockIds, BnParams, ConvBlock, Init, Mode};
use crate::scalar::Scalar;
use crate::tape::{Tape, ValueId};
use crate::tensor::{Tensor, TensorError};
use crate::training::{sgd_momentum_step, trainables, OptimizerState, TrainError};

use super::EvalError;

/// Channel widths through the three conv blocks.
const WIDTHS: [usize; 4] = [3, 16, 32, 64];

// ── Parameters ──

/// Parameters of the classifier: conv blocks plus the linear head.
#[derive(Debug, Clone)]
pub struct ClassifierParams<T: Scalar> {
    pub blocks: Vec<ConvBlock<T>>,
    pub fc_weight: Tensor<T>,
    pub fc_bias: Tensor<T>,
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
}

/// Tape leaves recorded during one classifier forward pass.
#[derive(Debug, Clone)]
pub struct ClassifierIds {
    pub blocks: Vec<BlockIds>,
    pub fc_weight: ValueId,
    pub fc_bias: ValueId,
}

impl<T: Scalar> ClassifierParams<T> {
    /// Fresh parameters for `[3,height,width]` inputs; one seed fixes all.
    pub fn init(
        seed: u64,
        height: usize,
        width: usize,
        num_classes: usize,
    ) -> Result<Self, EvalError> {
        if num_classes < 2 {
            return Err(EvalError::TooFewClasses(num_classes));
        }
        let mut init = Init::new(seed);
        let blocks = (0..3)
            .map(|i| {
                let (c_in, c_out) = (WIDTHS[i], WIDTHS[i + 1]);
                let fan_in = c_in * 3 * 3;
                ConvBlock {
                    kernel: init.he(vec![c_out, c_in, 1, 3, 3], fan_in),
                    bias: Tensor::zeros(vec![c_out]).with_grad(),
                    bn: Some(BnParams::identity(c_out)),
                }
            })
            .collect();
        let features = WIDTHS[3];
        let fc_weight = init.xavier(vec![features, num_classes], features, num_classes);
        let fc_bias = Tensor::zeros(vec![num_classes]).with_grad();
        Ok(ClassifierParams { blocks, fc_weight, fc_bias, num_classes, height, width })
    }

    /// Runs images `[N,3,H,W]` to logits `[N,num_classes]`, recording on the
    /// tape. Returns the logits and the parameter leaf ids.
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        x: ValueId,
        mode: Mode,
    ) -> Result<(ValueId, ClassifierIds), EvalError> {
        let shape = tape.shape(x).to_vec();
        let ok = shape.len() == 4
            && shape[1] == 3
            && shape[2] == self.height
            && shape[3] == self.width;
        if !ok {
            return Err(EvalError::ImageShape {
                shape,
                height: self.height,
                width: self.width,
            });
        }
        let n = shape[0];
        // Reuse the 3-D machinery with a singleton temporal axis.
        let mut cur = tape.reshape(x, &[n, 3, 1, self.height, self.width])?;
        let mut block_ids = Vec::with_capacity(self.blocks.len());
        for block in &mut self.blocks {
            let kernel = tape.leaf(&block.kernel);
            let bias = tape.leaf(&block.bias);
            cur = tape.conv3d(cur, kernel, bias, [1, 2, 2], [0, 1, 1])?;
            let bn = block.bn.as_mut().expect("classifier blocks always carry bn");
            let gamma = tape.leaf(&bn.gamma);
            let beta = tape.leaf(&bn.beta);
            cur = match mode {
                Mode::Train => tape.batchnorm_train(
                    cur,
                    gamma,
                    beta,
                    bn.running_mean.data_mut(),
                    bn.running_var.data_mut(),
                    T::from_f64_lossy(crate::model::BN_EPS),
                    T::from_f64_lossy(crate::model::BN_MOMENTUM),
                )?,
                Mode::Eval => tape.batchnorm_eval(
                    cur,
                    gamma,
                    beta,
                    bn.running_mean.data(),
                    bn.running_var.data(),
                    T::from_f64_lossy(crate::model::BN_EPS),
                )?,
            };
            cur = tape.relu(cur);
            block_ids.push(BlockIds { kernel, bias, bn: Some((gamma, beta)) });
        }
        // Global average pool [N,64,1,h,w] → [N,64].
        let pooled = tape.reduce(cur, ReduceOp::Mean, Some(&[2, 3, 4]))?;
        let fc_weight = tape.leaf(&self.fc_weight);
        let fc_bias = tape.leaf(&self.fc_bias);
        let product = tape.matmul(pooled, fc_weight)?;
        let logits = tape.add_bias(product, fc_bias)?;
        Ok((logits, ClassifierIds { blocks: block_ids, fc_weight, fc_bias }))
    }

    /// Routes tape gradients back into every parameter.
    pub fn accumulate_grads(
        &mut self,
        tape: &Tape<T>,
        ids: &ClassifierIds,
    ) -> Result<(), TensorError> {
        for (block, id) in self.blocks.iter_mut().zip(&ids.blocks) {
            block.accumulate_grads(tape, id)?;
        }
        harvest(tape, ids.fc_weight, &mut self.fc_weight)?;
        harvest(tape, ids.fc_bias, &mut self.fc_bias)?;
        Ok(())
    }

    /// All tensors (parameters and running stats), named for serialization.
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<(String, &mut Tensor<T>)> = self
            .blocks
            .iter_mut()
            .enumerate()
            .flat_map(|(i, block)| {
                block
                    .named_tensors_mut()
                    .into_iter()
                    .map(move |(name, t)| (format!("block{}.{name}", i + 1), t))
            })
            .collect();
        out.push(("fc.weight".to_string(), &mut self.fc_weight));
        out.push(("fc.bias".to_string(), &mut self.fc_bias));
        out
    }

    /// Read-only view of [`named_tensors_mut`](Self::named_tensors_mut).
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = self
            .blocks
            .iter()
            .enumerate()
            .flat_map(|(i, block)| {
                block
                    .named_tensors()
                    .into_iter()
                    .map(move |(name, t)| (format!("block{}.{name}", i + 1), t))
            })
            .collect();
        out.push(("fc.weight".to_string(), &self.fc_weight));
        out.push(("fc.bias".to_string(), &self.fc_bias));
        out
    }
}

// ── Training ──

/// Hyperparameters for one classifier training run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub lr: f64,
    pub momentum: f64,
    /// Multiplied onto the learning rate after every epoch.
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            lr: 1e-2,
            momentum: 0.9,
            lr_decay: 0.95,
            epochs: 20,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(TrainError::LearningRateNotPositive(self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::MomentumOutOfRange(self.momentum));
        }
        if !self.lr_decay.is_finite() || self.lr_decay <= 0.0 {
            return Err(TrainError::LrDecayNotPositive(self.lr_decay));
        }
        if self.batch_size == 0 {
            return Err(TrainError::ZeroBatchSize);
        }
        Ok(())
    }
}

/// Structural check shared by training and evaluation: rank 4, 3 channels.
fn image_dims<T: Scalar>(images: &Tensor<T>) -> Result<(usize, usize, usize), EvalError> {
    let shape = images.shape();
    if shape.len() != 4 {
        return Err(TensorError::RankMismatch { expected: 4, shape: shape.to_vec() }.into());
    }
    if shape[1] != 3 {
        return Err(TensorError::ShapeMismatch {
            lhs: shape.to_vec(),
            rhs: vec![shape[0], 3, shape[2], shape[3]],
        }
        .into());
    }
    Ok((shape[0], shape[2], shape[3]))
}

fn check_labels(n: usize, labels: &[usize], num_classes: usize) -> Result<(), EvalError> {
    if n == 0 {
        return Err(EvalError::EmptyImageSet);
    }
    if labels.len() != n {
        return Err(EvalError::LengthMismatch { images: n, labels: labels.len() });
    }
    for (index, &label) in labels.iter().enumerate() {
        if label >= num_classes {
            return Err(EvalError::LabelOutOfRange { index, label, num_classes });
        }
    }
    Ok(())
}

fn gather_rows<T: Scalar>(images: &Tensor<T>, rows: &[usize]) -> Tensor<T> {
    let shape = images.shape();
    let row = shape[1] * shape[2] * shape[3];
    let mut data = Vec::with_capacity(rows.len() * row);
    for &r in rows {
        data.extend_from_slice(&images.data()[r * row..(r + 1) * row]);
    }
    Tensor::new(vec![rows.len(), shape[1], shape[2], shape[3]], data)
        .expect("gathered rows match their source shape")
}

/// Trains a fresh classifier on labeled images with cross-entropy and SGD
/// momentum. Deterministic from `config.seed`.
pub fn train_classifier<T: Scalar>(
    images: &Tensor<T>,
    labels: &[usize],
    num_classes: usize,
    config: &ClassifierConfig,
) -> Result<ClassifierParams<T>, EvalError> {
    config.validate()?;
    let (n, height, width) = image_dims(images)?;
    check_labels(n, labels, num_classes)?;
    let mut seen = vec![false; num_classes];
    for &label in labels {
        seen[label] = true;
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(EvalError::SingleClassTrainingSet);
    }

    let mut params = ClassifierParams::init(config.seed, height, width, num_classes)?;
    let mut opt = OptimizerState::matching(&trainables(params.named_tensors_mut()));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut lr = config.lr;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = gather_rows(images, chunk);
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();

            let mut tape = Tape::new();
            let x = tape.constant(batch.shape(), batch.data())?;
            let (logits, ids) = params.forward(&mut tape, x, Mode::Train)?;
            let loss = tape.cross_entropy_logits(logits, &batch_labels)?;
            let value = tape.value(loss)[0].to_f64_lossy();
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    which: "classifier",
                    value,
                    epoch,
                    step,
                }
                .into());
            }
            tape.backward(loss)?;
            params.accumulate_grads(&tape, &ids)?;
            let mut train = trainables(params.named_tensors_mut());
            sgd_momentum_step(
                &mut train,
                &mut opt,
                T::from_f64_lossy(lr),
                T::from_f64_lossy(config.momentum),
            )?;
            for p in train {
                p.zero_grad();
            }
        }
        lr *= config.lr_decay;
    }
    Ok(params)
}

// ── Evaluation ──

/// Top-1 accuracy with its per-class confusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true_class][predicted_class]` counts.
    pub confusion: Vec<Vec<usize>>,
}

/// Scores a classifier on labeled images. Pure: the classifier is read-only
/// and repeated calls return identical reports.
pub fn evaluate<T: Scalar>(
    classifier: &ClassifierParams<T>,
    images: &Tensor<T>,
    labels: &[usize],
) -> Result<Evaluation, EvalError> {
    let (n, height, width) = image_dims(images)?;
    check_labels(n, labels, classifier.num_classes)?;
    if height != classifier.height || width != classifier.width {
        return Err(EvalError::ImageShape {
            shape: images.shape().to_vec(),
            height: classifier.height,
            width: classifier.width,
        });
    }

    // Forward mutates nothing in eval mode, but takes &mut self; a clone
    // keeps the purity contract visible in the signature.
    let mut model = classifier.clone();
    let mut tape = Tape::new();
    let x = tape.constant(images.shape(), images.data())?;
    let (logits, _) = model.forward(&mut tape, x, Mode::Eval)?;
    let scores = tape.value(logits);

    let k = classifier.num_classes;
    let mut confusion = vec![vec![0usize; k]; k];
    for (r, &label) in labels.iter().enumerate() {
        let row = &scores[r * k..(r + 1) * k];
        let pred = row
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > row[best] { i } else { best });
        confusion[label][pred] += 1;
    }
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    Ok(Evaluation { accuracy: correct as f64 / n as f64, confusion })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::params_checksum;
    use rand::Rng;

    /// Images whose class is the dominant color channel, plus mild noise.
    fn toy_set(per_class: usize, classes: usize, seed: u64) -> (Tensor<f32>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (16, 16);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..per_class * classes {
            let class = i % classes;
            for c in 0..3 {
                let base: f32 = if c == class % 3 { 0.8 } else { 0.2 };
                for _ in 0..h * w {
                    data.push(base + rng.gen_range(-0.05..0.05));
                }
            }
            labels.push(class);
        }
        let images = Tensor::new(vec![per_class * classes, 3, h, w], data).unwrap();
        (images, labels)
    }

    #[test]
    fn logits_length_matches_num_classes() {
        let mut params = ClassifierParams::<f32>::init(0, 16, 16, 4).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(&[2, 3, 16, 16], &[0.5; 2 * 3 * 256]).unwrap();
        let (logits, _) = params.forward(&mut tape, x, Mode::Eval).unwrap();
        assert_eq!(tape.shape(logits), &[2, 4]);

        let wrong = tape.constant(&[2, 3, 8, 8], &[0.5; 2 * 3 * 64]).unwrap();
        assert!(matches!(
            params.forward(&mut tape, wrong, Mode::Eval),
            Err(EvalError::ImageShape { height: 16, width: 16, .. })
        ));
    }

    #[test]
    fn separable_toy_images_are_learned() {
        let (images, labels) = toy_set(10, 3, 11);
        let classifier = train_classifier(&images, &labels, 3, &ClassifierConfig::default())
            .unwrap();
        let report = evaluate(&classifier, &images, &labels).unwrap();
        assert!(report.accuracy >= 0.95, "train accuracy {}", report.accuracy);
    }

    #[test]
    fn zero_epochs_stays_at_chance_level() {
        let (images, labels) = toy_set(10, 4, 3);
        let config = ClassifierConfig { epochs: 0, ..ClassifierConfig::default() };
        let classifier = train_classifier(&images, &labels, 4, &config).unwrap();
        let report = evaluate(&classifier, &images, &labels).unwrap();
        assert!(
            report.accuracy <= 0.5,
            "untrained accuracy {} should sit near chance 0.25",
            report.accuracy
        );
    }

    #[test]
    fn fixed_seed_training_is_bit_identical() {
        let (images, labels) = toy_set(6, 3, 2);
        let config = ClassifierConfig { epochs: 3, ..ClassifierConfig::default() };
        let a = train_classifier(&images, &labels, 3, &config).unwrap();
        let b = train_classifier(&images, &labels, 3, &config).unwrap();
        assert_eq!(params_checksum(a.named_tensors()), params_checksum(b.named_tensors()));
        assert_eq!(
            evaluate(&a, &images, &labels).unwrap(),
            evaluate(&b, &images, &labels).unwrap()
        );
    }

    #[test]
    fn constant_prediction_scores_chance_on_a_balanced_set() {
        let mut classifier = ClassifierParams::<f32>::init(0, 16, 16, 4).unwrap();
        classifier.fc_weight.data_mut().fill(0.0);
        classifier.fc_bias.data_mut()[0] = 1.0;
        let (images, labels) = toy_set(5, 4, 9);
        let report = evaluate(&classifier, &images, &labels).unwrap();
        assert_eq!(report.accuracy, 0.25);
        for (class, row) in report.confusion.iter().enumerate() {
            assert_eq!(row.iter().sum::<usize>(), 5, "row sums for class {class}");
            assert_eq!(row[0], 5, "every image lands on class 0");
        }
        let trace: usize = (0..4).map(|c| report.confusion[c][c]).sum();
        assert_eq!(report.accuracy, trace as f64 / 20.0);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let (images, mut labels) = toy_set(4, 2, 1);
        assert!(matches!(
            train_classifier(&images, &[0; 8], 2, &ClassifierConfig::default()),
            Err(EvalError::SingleClassTrainingSet)
        ));
        labels[3] = 9;
        assert!(matches!(
            train_classifier(&images, &labels, 2, &ClassifierConfig::default()),
            Err(EvalError::LabelOutOfRange { index: 3, label: 9, num_classes: 2 })
        ));
        assert!(matches!(
            ClassifierParams::<f32>::init(0, 16, 16, 1),
            Err(EvalError::TooFewClasses(1))
        ));
    }

    #[test]
    fn evaluate_leaves_the_classifier_untouched() {
        let (images, labels) = toy_set(4, 2, 5);
        let config = ClassifierConfig { epochs: 2, ..ClassifierConfig::default() };
        let classifier = train_classifier(&images, &labels, 2, &config).unwrap();
        let before = params_checksum(classifier.named_tensors());
        let first = evaluate(&classifier, &images, &labels).unwrap();
        let second = evaluate(&classifier, &images, &labels).unwrap();
        assert_eq!(first, second);
        assert_eq!(before, params_checksum(classifier.named_tensors()));
    }
}
