//! SGD with classical momentum. Velocity buffers live outside the parameters
//! so the same step function serves every parameter group in the model.

use crate::model::AvdParams;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::TrainError;

/// One velocity buffer per parameter, in the order the parameters are passed.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    /// Zero velocities shaped after the given parameter list.
    pub fn matching(params: &[&mut Tensor<T>]) -> Self {
        let velocity = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
        OptimizerState { velocity }
    }
}

/// `v <- momentum * v + grad; p <- p - lr * v` for every parameter. A missing
/// gradient contributes zero, so its velocity only decays.
pub fn sgd_momentum_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    state: &mut OptimizerState<T>,
    lr: T,
    momentum: T,
) -> Result<(), TrainError> {
    if params.len() != state.velocity.len() {
        return Err(TrainError::StateCount {
            expected: state.velocity.len(),
            got: params.len(),
        });
    }
    for (index, (param, vel)) in params.iter_mut().zip(&mut state.velocity).enumerate() {
        if param.numel() != vel.len() {
            return Err(TrainError::StateShape {
                index,
                expected: vel.len(),
                got: param.numel(),
            });
        }
        match param.grad() {
            Some(grad) => {
                for (v, &g) in vel.iter_mut().zip(grad) {
                    *v = momentum * *v + g;
                }
            }
            None => {
                for v in vel.iter_mut() {
                    *v *= momentum;
                }
            }
        }
        for (p, &v) in param.data_mut().iter_mut().zip(vel.iter()) {
            *p -= lr * v;
        }
    }
    Ok(())
}

/// Keep only the parameters that actually receive gradients, dropping the
/// batch-norm running statistics.
pub(crate) fn trainables<T: Scalar>(
    named: Vec<(String, &mut Tensor<T>)>,
) -> Vec<&mut Tensor<T>> {
    named
        .into_iter()
        .filter_map(|(_, t)| if t.requires_grad() { Some(t) } else { None })
        .collect()
}

/// Velocity state for the three parameter groups of the full model.
#[derive(Debug, Clone)]
pub struct AvdOptimizer<T> {
    pub encoder: OptimizerState<T>,
    pub decoder: OptimizerState<T>,
    pub teacher: OptimizerState<T>,
}

impl<T: Scalar> AvdOptimizer<T> {
    pub fn matching(params: &mut AvdParams<T>) -> Self {
        let encoder = OptimizerState::matching(&trainables(params.encoder.named_tensors_mut()));
        let decoder = OptimizerState::matching(&trainables(params.decoder.named_tensors_mut()));
        let teacher = OptimizerState::matching(&trainables(params.teacher.named_tensors_mut()));
        AvdOptimizer { encoder, decoder, teacher }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;
    use crate::training::reconstruction_loss;

    fn step_once(p: &mut Tensor<f64>, state: &mut OptimizerState<f64>, lr: f64, m: f64) {
        let mut params = [p];
        sgd_momentum_step(&mut params, state, lr, m).unwrap();
    }

    #[test]
    fn two_momentum_steps_match_hand_computation() {
        let mut p = Tensor::new(vec![1], vec![0.0]).unwrap().with_grad();
        p.accumulate_grad(&[1.0]).unwrap();
        let mut state = OptimizerState::matching(&[&mut p]);
        step_once(&mut p, &mut state, 0.1, 0.9);
        assert!((p.data()[0] + 0.1).abs() < 1e-12);
        step_once(&mut p, &mut state, 0.1, 0.9);
        // v1 = 1, v2 = 0.9 + 1 = 1.9, p = -0.1 - 0.19 = -0.29
        assert!((p.data()[0] + 0.29).abs() < 1e-12);
    }

    #[test]
    fn zero_momentum_is_plain_sgd() {
        let mut p = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().with_grad();
        p.accumulate_grad(&[0.5, -0.5]).unwrap();
        let mut state = OptimizerState::matching(&[&mut p]);
        step_once(&mut p, &mut state, 0.2, 0.0);
        assert!((p.data()[0] - 0.9).abs() < 1e-12);
        assert!((p.data()[1] - 2.1).abs() < 1e-12);
    }

    #[test]
    fn missing_gradient_only_decays_velocity() {
        let mut p = Tensor::new(vec![1], vec![0.0]).unwrap().with_grad();
        p.accumulate_grad(&[1.0]).unwrap();
        let mut state = OptimizerState::matching(&[&mut p]);
        step_once(&mut p, &mut state, 1.0, 0.5);
        assert!((p.data()[0] + 1.0).abs() < 1e-12);
        p.zero_grad();
        let mut plain = Tensor::new(vec![1], p.data().to_vec()).unwrap();
        std::mem::swap(&mut p, &mut plain);
        step_once(&mut p, &mut state, 1.0, 0.5);
        // velocity halves to 0.5 with no new gradient
        assert!((p.data()[0] + 1.5).abs() < 1e-12);
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let mut p = Tensor::new(vec![2], vec![0.0; 2]).unwrap().with_grad();
        let mut other = Tensor::new(vec![3], vec![0.0; 3]).unwrap().with_grad();
        let mut state = OptimizerState::matching(&[&mut p]);

        let mut none: [&mut Tensor<f64>; 0] = [];
        assert!(matches!(
            sgd_momentum_step(&mut none, &mut state, 0.1, 0.9),
            Err(TrainError::StateCount { .. })
        ));
        let mut params = [&mut other];
        assert!(matches!(
            sgd_momentum_step(&mut params, &mut state, 0.1, 0.9),
            Err(TrainError::StateShape { .. })
        ));
    }

    #[test]
    fn linear_toy_descent_never_increases_the_loss() {
        // Identity activations, pure reconstruction: momentum at a small lr
        // must stay overdamped, so the loss falls monotonically.
        let mut p = Tensor::new(vec![4], vec![0.8, -0.3, 0.5, 1.2]).unwrap().with_grad();
        let mut state = OptimizerState::matching(&[&mut p]);
        let mut prev = f64::INFINITY;
        let mut first = 0.0;
        for step in 0..100 {
            let mut tape = Tape::<f64>::new();
            let x = tape.leaf(&p);
            let target = tape.constant(&[4], &[0.0; 4]).unwrap();
            let loss = reconstruction_loss(&mut tape, target, x).unwrap();
            let value = tape.value(loss)[0];
            if step == 0 {
                first = value;
            }
            assert!(value <= prev + 1e-12, "loss rose from {prev} to {value}");
            prev = value;
            tape.backward(loss).unwrap();
            p.accumulate_grad(tape.grad(x).unwrap()).unwrap();
            step_once(&mut p, &mut state, 3e-3, 0.9);
            p.zero_grad();
        }
        assert!(prev < 0.1 * first, "expected a deep descent, got {first} -> {prev}");
    }
}
