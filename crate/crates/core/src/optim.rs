//! Optimizers for the real-valued master weights: standard ADAM and the
//! shift-based AdaMax variant whose per-element scalings are all
//! power-of-two multiplies, plus weight clipping and learning-rate decay.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimMode {
    Adam,
    ShiftAdaMax,
}

/// ADAM defaults.
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Shift-based AdaMax defaults: alpha = 2^-10, 1-beta1 = 2^-3, 1-beta2 = 2^-10.
pub const ADAMAX_ALPHA: f64 = 0.0009765625;
pub const ADAMAX_BETA1: f64 = 0.875;
pub const ADAMAX_BETA2: f64 = 0.9990234375;

/// Per-parameter-tensor optimizer state. `m` is the first-moment estimate;
/// `v` is the second moment for ADAM or the infinity-norm estimate for
/// AdaMax; `t` counts completed steps.
#[derive(Debug, Clone)]
pub struct OptimState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
    pub mode: OptimMode,
}

impl<T: Real> OptimState<T> {
    pub fn new(len: usize, mode: OptimMode) -> Self {
        OptimState {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
            mode,
        }
    }

    fn check_len(&self, len: usize, op: &'static str) -> Result<()> {
        if self.m.len() != len {
            return Err(Error::ShapeMismatch {
                op,
                left: format!("{len} params"),
                right: format!("{} state entries", self.m.len()),
            });
        }
        Ok(())
    }
}

/// One ADAM step on a flat parameter slice. `lr` already includes any
/// per-layer scaling. Increments `state.t`.
pub fn adam_update<T: Real>(
    params: &mut [T],
    grads: &[T],
    state: &mut OptimState<T>,
    lr: T,
) -> Result<()> {
    debug_assert_eq!(state.mode, OptimMode::Adam);
    state.check_len(params.len(), "adam_update")?;
    if grads.len() != params.len() {
        return Err(Error::ShapeMismatch {
            op: "adam_update",
            left: format!("{} params", params.len()),
            right: format!("{} grads", grads.len()),
        });
    }
    state.t += 1;
    let b1 = T::from_f64x(ADAM_BETA1);
    let b2 = T::from_f64x(ADAM_BETA2);
    let eps = T::from_f64x(ADAM_EPS);
    let t = state.t as i32;
    let bc1 = T::one() - T::from_f64x(ADAM_BETA1.powi(t));
    let bc2 = T::one() - T::from_f64x(ADAM_BETA2.powi(t));
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (T::one() - b1) * g;
        state.v[i] = b2 * state.v[i] + (T::one() - b2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// One shift-based AdaMax step: `m <- b1*m + (1-b1)*g`, `v <- max(b2*v, |g|)`,
/// and the applied update is `lr/(1-b1^t)` shift-multiplied onto
/// `m` shift-divided by `v`. Elements with `v = 0` are skipped.
pub fn shift_adamax_update<T: Real>(
    params: &mut [T],
    grads: &[T],
    state: &mut OptimState<T>,
    lr: T,
) -> Result<()> {
    debug_assert_eq!(state.mode, OptimMode::ShiftAdaMax);
    state.check_len(params.len(), "shift_adamax_update")?;
    if grads.len() != params.len() {
        return Err(Error::ShapeMismatch {
            op: "shift_adamax_update",
            left: format!("{} params", params.len()),
            right: format!("{} grads", grads.len()),
        });
    }
    state.t += 1;
    let b1 = T::from_f64x(ADAMAX_BETA1);
    let nb1 = T::one() - b1;
    let b2 = T::from_f64x(ADAMAX_BETA2);
    let bc1 = T::one() - T::from_f64x(ADAMAX_BETA1.powi(state.t as i32));
    // the step factor is constant across the slice, so its power-of-2
    // rounding is hoisted out of the per-parameter loop
    let p2_step = (lr / bc1).ap2v();
    for i in 0..params.len() {
        let g = grads[i];
        let m = b1 * state.m[i] + nb1 * g;
        state.m[i] = m;
        let v = (b2 * state.v[i]).max(g.abs());
        state.v[i] = v;
        if v == T::zero() {
            continue;
        }
        params[i] = params[i] - m * (T::one() / v).ap2v() * p2_step;
    }
    Ok(())
}

/// Clip parameters into [-1, 1]; applied to weights after every update so
/// binarization always sees bounded values.
pub fn clip_weights<T: Real>(w: &mut Tensor<T>) {
    for v in w.data_mut() {
        *v = (*v).max(-T::one()).min(T::one());
    }
}

/// Per-epoch exponential learning-rate decay: `lr * factor^epoch`.
pub fn decay_lr<T: Real>(base_lr: T, factor: T, epoch: usize) -> T {
    base_lr * factor.powi(epoch as i32)
}

/// Shift-friendly schedule: halve the rate once every `period` completed
/// epochs (a one-bit right shift), so epochs 0..period-1 use the base rate.
pub fn shift_decay_lr<T: Real>(base_lr: T, period: usize, epoch: usize) -> T {
    let halvings = if period == 0 { 0 } else { epoch / period };
    base_lr * T::from_f64x(0.5f64.powi(halvings as i32))
}
