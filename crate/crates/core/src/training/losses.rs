//! The three training losses and their weighted combination. All reduce to
//! scalars on the tape so one `backward` call covers every term that should
//! flow, and nothing more.

use crate::scalar::Scalar;
use crate::tape::{Tape, ValueId};
use crate::tensor::TensorError;

use super::TrainError;

/// Scores are clamped to `[LOG_EPS, 1 - LOG_EPS]` before any logarithm, so a
/// saturated sigmoid yields a large but finite loss.
pub const LOG_EPS: f64 = 1e-7;

/// Mean squared error per element between a reconstruction and its target.
pub fn reconstruction_loss<T: Scalar>(
    tape: &mut Tape<T>,
    target: ValueId,
    recon: ValueId,
) -> Result<ValueId, TensorError> {
    let diff = tape.sub(recon, target)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.mean_all(sq))
}

/// Mean of `ln(s)` (or `ln(1 - s)`) over clamped scores.
fn mean_ln_clamped<T: Scalar>(
    tape: &mut Tape<T>,
    scores: ValueId,
    one_minus: bool,
) -> ValueId {
    let lo = T::from_f64_lossy(LOG_EPS);
    let hi = T::from_f64_lossy(1.0 - LOG_EPS);
    let mut s = tape.clamp(scores, lo, hi);
    if one_minus {
        let neg = tape.scale(s, -T::one());
        s = tape.add_scalar(neg, T::one());
    }
    let logs = tape.ln(s);
    tape.mean_all(logs)
}

/// Binary cross-entropy for the teacher: real scores toward 1, fake toward 0.
pub fn teacher_loss<T: Scalar>(
    tape: &mut Tape<T>,
    real_scores: ValueId,
    fake_scores: ValueId,
) -> Result<ValueId, TensorError> {
    let real_term = mean_ln_clamped(tape, real_scores, false);
    let fake_term = mean_ln_clamped(tape, fake_scores, true);
    let sum = tape.add(real_term, fake_term)?;
    Ok(tape.scale(sum, -T::one()))
}

/// Non-saturating fooling loss for the encoder: push fake scores toward 1.
pub fn generator_loss<T: Scalar>(tape: &mut Tape<T>, fake_scores: ValueId) -> ValueId {
    let term = mean_ln_clamped(tape, fake_scores, false);
    tape.scale(term, -T::one())
}

/// `lambda * recon + (1 - lambda) * gen`. At the boundaries this returns the
/// surviving operand itself, so the dropped term is truly absent from the
/// backward pass rather than multiplied by zero.
pub fn avd_loss<T: Scalar>(
    tape: &mut Tape<T>,
    recon: ValueId,
    gen: ValueId,
    lambda: f64,
) -> Result<ValueId, TrainError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(TrainError::LambdaOutOfRange(lambda));
    }
    if lambda == 1.0 {
        return Ok(recon);
    }
    if lambda == 0.0 {
        return Ok(gen);
    }
    let r = tape.scale(recon, T::from_f64_lossy(lambda));
    let g = tape.scale(gen, T::from_f64_lossy(1.0 - lambda));
    Ok(tape.add(r, g)?)
}
