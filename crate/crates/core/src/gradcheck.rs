//! Central finite-difference verification of tape gradients.
//!
//! [`check`] compares the backward pass of an arbitrary tape program against
//! (f(x+h) − f(x−h)) / 2h per parameter entry; [`op_reports`] runs that
//! comparison over a fixed suite covering every differentiable operation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kernels::reduce::ReduceOp;
use crate::scalar::Scalar;
use crate::tape::{Tape, ValueId};
use crate::tensor::{Tensor, TensorError};
use crate::training::{generator_loss, reconstruction_loss, teacher_loss};

/// A tape program under test: leaves are created for `params` in order and
/// their ids handed to the builder, which returns the scalar loss.
pub type BuildFn<T> = dyn Fn(&mut Tape<T>, &[ValueId]) -> Result<ValueId, TensorError>;

/// Gradients from one recorded backward pass, widened to f64. Parameters the
/// loss never reaches (or that do not track gradients) report zeros.
pub fn tape_gradient<T: Scalar>(
    params: &[Tensor<T>],
    build: &BuildFn<T>,
) -> Result<Vec<Vec<f64>>, TensorError> {
    let mut tape = Tape::new();
    let ids: Vec<ValueId> = params.iter().map(|p| tape.leaf(p)).collect();
    let loss = build(&mut tape, &ids)?;
    tape.backward(loss)?;
    Ok(ids
        .iter()
        .zip(params)
        .map(|(&id, p)| match tape.grad(id) {
            Some(g) => g.iter().map(|v| v.to_f64_lossy()).collect(),
            None => vec![0.0; p.numel()],
        })
        .collect())
}

/// Central-difference gradients of the same program, one entry at a time.
/// Parameters without gradient tracking are left at zero, matching
/// [`tape_gradient`].
pub fn fd_gradient<T: Scalar>(
    params: &[Tensor<T>],
    build: &BuildFn<T>,
    h: T,
) -> Result<Vec<Vec<f64>>, TensorError> {
    let eval = |ps: &[Tensor<T>]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let ids: Vec<ValueId> = ps.iter().map(|p| tape.leaf(p)).collect();
        let loss = build(&mut tape, &ids)?;
        Ok(tape.value(loss)[0].to_f64_lossy())
    };
    let mut work: Vec<Tensor<T>> = params.to_vec();
    let mut out: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.numel()]).collect();
    let two_h = 2.0 * h.to_f64_lossy();
    for pi in 0..params.len() {
        if !params[pi].requires_grad() {
            continue;
        }
        for j in 0..params[pi].numel() {
            let orig = work[pi].data()[j];
            work[pi].data_mut()[j] = orig + h;
            let up = eval(&work)?;
            work[pi].data_mut()[j] = orig - h;
            let down = eval(&work)?;
            work[pi].data_mut()[j] = orig;
            out[pi][j] = (up - down) / two_h;
        }
    }
    Ok(out)
}

/// Worst relative disagreement, with |values| below 1 compared absolutely.
pub fn max_rel_err(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (ra, rb) in a.iter().zip(b) {
        for (&x, &y) in ra.iter().zip(rb) {
            let err = (x - y).abs() / x.abs().max(y.abs()).max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}

/// Runs both gradient computations and returns their worst relative error.
pub fn check<T: Scalar>(
    params: &[Tensor<T>],
    build: &BuildFn<T>,
    h: T,
) -> Result<f64, TensorError> {
    let analytic = tape_gradient(params, build)?;
    let numeric = fd_gradient(params, build, h)?;
    Ok(max_rel_err(&analytic, &numeric))
}

/// Outcome of checking one operation of the suite.
#[derive(Debug, Clone)]
pub struct OpReport {
    pub name: &'static str,
    pub max_rel_err: f64,
}

struct OpCase<T: Scalar> {
    name: &'static str,
    params: Vec<Tensor<T>>,
    build: Box<BuildFn<T>>,
}

/// Fixed low-amplitude weights used to keep suite gradients non-uniform.
fn ramp<T: Scalar>(n: usize) -> Vec<T> {
    (0..n)
        .map(|i| T::from_f64_lossy(0.25 + 0.15 * ((i * 7 % 5) as f64)))
        .collect()
}

/// Modulated mean: ⟨x ⊙ ramp⟩, turning any value into a scalar loss whose
/// gradient varies per element.
fn mmean<T: Scalar>(tape: &mut Tape<T>, x: ValueId) -> Result<ValueId, TensorError> {
    let shape = tape.shape(x).to_vec();
    let weights = ramp::<T>(tape.value(x).len());
    let m = tape.constant(&shape, &weights)?;
    let prod = tape.mul(x, m)?;
    Ok(tape.mean_all(prod))
}

fn draw<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Tensor<T> {
    let data = (0..n)
        .map(|_| T::from_f64_lossy(rng.gen_range(lo..hi)))
        .collect();
    Tensor::new(vec![n], data).unwrap().with_grad()
}

/// Like [`draw`] but keeps |v| ≥ `margin`, for operations with a kink at
/// zero where finite differences straddling it are meaningless.
fn draw_off_zero<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, margin: f64) -> Tensor<T> {
    let data = (0..n)
        .map(|_| {
            let mag = rng.gen_range(margin..1.0);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            T::from_f64_lossy(mag * sign)
        })
        .collect();
    Tensor::new(vec![n], data).unwrap().with_grad()
}

fn shaped<T: Scalar>(t: Tensor<T>, shape: &[usize]) -> Tensor<T> {
    Tensor::new(shape.to_vec(), t.data().to_vec()).unwrap().with_grad()
}

fn op_cases<T: Scalar>(seed: u64) -> Vec<OpCase<T>> {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let mut cases: Vec<OpCase<T>> = Vec::new();

    let binary_shape = [2usize, 3];
    for (name, kind) in [("add", 0u8), ("sub", 1), ("mul", 2)] {
        let a = shaped(draw(rng, 6, -1.0, 1.0), &binary_shape);
        let b = shaped(draw(rng, 6, -1.0, 1.0), &binary_shape);
        cases.push(OpCase {
            name,
            params: vec![a, b],
            build: Box::new(move |tape, ids| {
                let y = match kind {
                    0 => tape.add(ids[0], ids[1])?,
                    1 => tape.sub(ids[0], ids[1])?,
                    _ => tape.mul(ids[0], ids[1])?,
                };
                mmean(tape, y)
            }),
        });
    }

    cases.push(OpCase {
        name: "add_scalar",
        params: vec![shaped(draw(rng, 6, -1.0, 1.0), &binary_shape)],
        build: Box::new(|tape, ids| {
            let y = tape.add_scalar(ids[0], T::from_f64_lossy(0.7));
            mmean(tape, y)
        }),
    });
    cases.push(OpCase {
        name: "scale",
        params: vec![shaped(draw(rng, 6, -1.0, 1.0), &binary_shape)],
        build: Box::new(|tape, ids| {
            let y = tape.scale(ids[0], T::from_f64_lossy(-1.3));
            mmean(tape, y)
        }),
    });
    // Clamp bounds at ±0.5; inputs stay ≥0.15 away from both bounds so the
    // finite-difference step never crosses them.
    let clamp_data: Vec<T> = (0..6)
        .map(|_| {
            let v = if rng.gen_bool(0.5) {
                rng.gen_range(-0.3..0.3)
            } else {
                let mag = rng.gen_range(0.65..1.0);
                if rng.gen_bool(0.5) { mag } else { -mag }
            };
            T::from_f64_lossy(v)
        })
        .collect();
    cases.push(OpCase {
        name: "clamp",
        params: vec![Tensor::new(binary_shape.to_vec(), clamp_data).unwrap().with_grad()],
        build: Box::new(|tape, ids| {
            let y = tape.clamp(ids[0], T::from_f64_lossy(-0.5), T::from_f64_lossy(0.5));
            mmean(tape, y)
        }),
    });
    cases.push(OpCase {
        name: "ln",
        params: vec![shaped(draw(rng, 6, 0.5, 2.0), &binary_shape)],
        build: Box::new(|tape, ids| {
            let y = tape.ln(ids[0]);
            mmean(tape, y)
        }),
    });
    cases.push(OpCase {
        name: "relu",
        params: vec![shaped(draw_off_zero(rng, 6, 0.3), &binary_shape)],
        build: Box::new(|tape, ids| {
            let y = tape.relu(ids[0]);
            mmean(tape, y)
        }),
    });
    cases.push(OpCase {
        name: "leaky_relu",
        params: vec![shaped(draw_off_zero(rng, 6, 0.3), &binary_shape)],
        build: Box::new(|tape, ids| {
            let y = tape.leaky_relu(ids[0], T::from_f64_lossy(0.1));
            mmean(tape, y)
        }),
    });
    cases.push(OpCase {
        name: "sigmoid",
        params: vec![shaped(draw(rng, 6, -2.0, 2.0), &binary_shape)],
        build: Box::new(|tape, ids| {
            let y = tape.sigmoid(ids[0]);
            mmean(tape, y)
        }),
    });

    cases.push(OpCase {
        name: "matmul",
        params: vec![
            shaped(draw(rng, 6, -1.0, 1.0), &[2, 3]),
            shaped(draw(rng, 6, -1.0, 1.0), &[3, 2]),
        ],
        build: Box::new(|tape, ids| {
            let y = tape.matmul(ids[0], ids[1])?;
            mmean(tape, y)
        }),
    });
    cases.push(OpCase {
        name: "add_bias",
        params: vec![
            shaped(draw(rng, 6, -1.0, 1.0), &[3, 2]),
            draw(rng, 2, -1.0, 1.0),
        ],
        build: Box::new(|tape, ids| {
            let y = tape.add_bias(ids[0], ids[1])?;
            mmean(tape, y)
        }),
    });

    cases.push(OpCase {
        name: "reduce_sum",
        params: vec![shaped(draw(rng, 12, -1.0, 1.0), &[2, 3, 2])],
        build: Box::new(|tape, ids| {
            let y = tape.reduce(ids[0], ReduceOp::Sum, Some(&[0, 2]))?;
            mmean(tape, y)
        }),
    });
    cases.push(OpCase {
        name: "reduce_mean",
        params: vec![shaped(draw(rng, 12, -1.0, 1.0), &[2, 3, 2])],
        build: Box::new(|tape, ids| {
            let y = tape.reduce(ids[0], ReduceOp::Mean, Some(&[1]))?;
            mmean(tape, y)
        }),
    });
    cases.push(OpCase {
        name: "reshape",
        params: vec![shaped(draw(rng, 6, -1.0, 1.0), &[2, 3])],
        build: Box::new(|tape, ids| {
            let y = tape.reshape(ids[0], &[6])?;
            mmean(tape, y)
        }),
    });

    cases.push(OpCase {
        name: "conv3d",
        params: vec![
            shaped(draw(rng, 120, -1.0, 1.0), &[1, 2, 3, 4, 5]),
            shaped(draw(rng, 72, -1.0, 1.0), &[2, 2, 2, 3, 3]),
            draw(rng, 2, -1.0, 1.0),
        ],
        build: Box::new(|tape, ids| {
            let y = tape.conv3d(ids[0], ids[1], ids[2], [2, 1, 2], [1, 1, 0])?;
            mmean(tape, y)
        }),
    });
    cases.push(OpCase {
        name: "conv3d_transpose",
        params: vec![
            shaped(draw(rng, 36, -1.0, 1.0), &[1, 2, 2, 3, 3]),
            shaped(draw(rng, 72, -1.0, 1.0), &[2, 2, 2, 3, 3]),
            draw(rng, 2, -1.0, 1.0),
        ],
        build: Box::new(|tape, ids| {
            let y = tape.conv3d_transpose(ids[0], ids[1], ids[2], [2, 1, 1], [0, 1, 1], [1, 0, 0])?;
            mmean(tape, y)
        }),
    });

    cases.push(OpCase {
        name: "batchnorm_train",
        params: vec![
            shaped(draw(rng, 24, -1.0, 1.0), &[4, 3, 2]),
            draw(rng, 3, 0.8, 1.2),
            draw(rng, 3, -0.3, 0.3),
        ],
        build: Box::new(|tape, ids| {
            let mut rm = vec![T::zero(); 3];
            let mut rv = vec![T::one(); 3];
            let eps = T::from_f64_lossy(1e-5);
            let momentum = T::from_f64_lossy(0.1);
            let y = tape.batchnorm_train(ids[0], ids[1], ids[2], &mut rm, &mut rv, eps, momentum)?;
            mmean(tape, y)
        }),
    });
    let bn_mean: Vec<T> = [0.1, -0.2, 0.3].map(T::from_f64_lossy).to_vec();
    let bn_var: Vec<T> = [1.5, 0.7, 1.0].map(T::from_f64_lossy).to_vec();
    cases.push(OpCase {
        name: "batchnorm_eval",
        params: vec![
            shaped(draw(rng, 24, -1.0, 1.0), &[4, 3, 2]),
            draw(rng, 3, 0.8, 1.2),
            draw(rng, 3, -0.3, 0.3),
        ],
        build: Box::new(move |tape, ids| {
            let eps = T::from_f64_lossy(1e-5);
            let y = tape.batchnorm_eval(ids[0], ids[1], ids[2], &bn_mean, &bn_var, eps)?;
            mmean(tape, y)
        }),
    });

    cases.push(OpCase {
        name: "cross_entropy_logits",
        params: vec![shaped(draw(rng, 12, -1.0, 1.0), &[3, 4])],
        build: Box::new(|tape, ids| tape.cross_entropy_logits(ids[0], &[2, 0, 3])),
    });

    cases.push(OpCase {
        name: "reconstruction_loss",
        params: vec![
            shaped(draw(rng, 12, 0.0, 1.0), &[1, 3, 2, 2]),
            shaped(draw(rng, 12, 0.0, 1.0), &[1, 3, 2, 2]),
        ],
        build: Box::new(|tape, ids| reconstruction_loss(tape, ids[0], ids[1])),
    });

    // Scores drawn well inside (0,1) so the log clamp stays inactive.
    cases.push(OpCase {
        name: "teacher_loss",
        params: vec![draw(rng, 4, 0.1, 0.9), draw(rng, 4, 0.1, 0.9)],
        build: Box::new(|tape, ids| teacher_loss(tape, ids[0], ids[1])),
    });

    cases.push(OpCase {
        name: "generator_loss",
        params: vec![draw(rng, 4, 0.1, 0.9)],
        build: Box::new(|tape, ids| Ok(generator_loss(tape, ids[0]))),
    });

    // End-to-end composite through the linear/activation/loss stack; smooth
    // everywhere, so no kink handling is needed.
    cases.push(OpCase {
        name: "composite",
        params: vec![
            shaped(draw(rng, 8, -1.0, 1.0), &[2, 4]),
            shaped(draw(rng, 12, -1.0, 1.0), &[4, 3]),
            draw(rng, 3, -0.5, 0.5),
            shaped(draw(rng, 6, -1.0, 1.0), &[3, 2]),
            draw(rng, 2, -0.5, 0.5),
        ],
        build: Box::new(|tape, ids| {
            let h1 = tape.matmul(ids[0], ids[1])?;
            let h1 = tape.add_bias(h1, ids[2])?;
            let h1 = tape.sigmoid(h1);
            let logits = tape.matmul(h1, ids[3])?;
            let logits = tape.add_bias(logits, ids[4])?;
            tape.cross_entropy_logits(logits, &[1, 0])
        }),
    });

    cases
}

/// Checks every differentiable operation at the scalar type's step size and
/// reports the worst error per op. Pass/fail judgment is the caller's, against
/// [`Scalar::fd_tol`] or a tolerance of their own.
pub fn op_reports<T: Scalar>(seed: u64) -> Result<Vec<OpReport>, TensorError> {
    op_cases::<T>(seed)
        .iter()
        .map(|case| {
            let err = check(&case.params, &case.build, T::fd_step())?;
            Ok(OpReport { name: case.name, max_rel_err: err })
        })
        .collect()
}
