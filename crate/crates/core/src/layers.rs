//! Network layers: binarized fully-connected layer, Batch Normalization
//! (vanilla and shift-based), activation binarization/quantization with the
//! straight-through estimator, and the square hinge loss.

use crate::bitkernel::{bitplane_gemm, xnor_gemm, BitMatrix, BitPlanes8};
use crate::error::{Error, Result};
use crate::quantize::{
    ap2, linear_quant, log_quant, shift_mul, sign_binarize, ste_backward, stoch_binarize,
    QuantSpec, Scheme,
};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Fully-connected layer with real-valued master weights clipped to [-1, 1]
/// and a cached binarized copy.
#[derive(Debug, Clone)]
pub struct LinearLayer<T> {
    w: Tensor<T>,
    wb: Option<Tensor<T>>,
    in_dim: usize,
    out_dim: usize,
    gamma_k: T,
}

impl<T: Real> LinearLayer<T> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Result<Self> {
        let (w, gamma_k) = Tensor::glorot_init(in_dim, out_dim, rng)?;
        // Glorot bound can exceed 1 for tiny layers; master weights live in [-1,1]
        let w = w.map(|x: T| x.max(-T::one()).min(T::one()));
        Ok(LinearLayer {
            w,
            wb: None,
            in_dim,
            out_dim,
            gamma_k,
        })
    }

    pub fn from_weights(w: Tensor<T>) -> Self {
        let (in_dim, out_dim) = (w.rows(), w.cols());
        let gamma_k = T::from_f64x((6.0 / (in_dim + out_dim) as f64).sqrt());
        LinearLayer {
            w,
            wb: None,
            in_dim,
            out_dim,
            gamma_k,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn gamma_k(&self) -> T {
        self.gamma_k
    }

    pub fn weights(&self) -> &Tensor<T> {
        &self.w
    }

    /// Mutable access to the master weights for in-place optimizer updates;
    /// invalidates the binary cache.
    pub fn weights_mut(&mut self) -> &mut Tensor<T> {
        self.wb = None;
        &mut self.w
    }

    /// Replace the master weights; invalidates the binary cache.
    pub fn set_weights(&mut self, w: Tensor<T>) {
        debug_assert_eq!((w.rows(), w.cols()), (self.in_dim, self.out_dim));
        self.w = w;
        self.wb = None;
    }

    /// Refresh the binary weight cache: `Wb = sign(W)` elementwise.
    pub fn binarize_weights(&mut self) {
        self.wb = Some(self.w.map(sign_binarize));
    }

    pub fn binary_weights(&self) -> Result<&Tensor<T>> {
        self.wb.as_ref().ok_or(Error::ShapeMismatch {
            op: "linear_forward",
            left: "stale binary weight cache".into(),
            right: "call binarize_weights first".into(),
        })
    }

    /// Binary weights packed transposed, ready for the XNOR kernel.
    pub fn packed_weights_t(&self) -> Result<BitMatrix> {
        Ok(BitMatrix::pack_sign_transposed(self.binary_weights()?))
    }
}

/// `s = a_prev_b * Wb`. When every input element is exactly +-1 the product
/// is routed through the packed XNOR kernel; the result is identical to the
/// float path either way.
pub fn linear_forward<T: Real>(layer: &LinearLayer<T>, a_prev_b: &Tensor<T>) -> Result<Tensor<T>> {
    let wb = layer.binary_weights()?;
    if a_prev_b.cols() != layer.in_dim {
        return Err(Error::ShapeMismatch {
            op: "linear_forward",
            left: format!("{}x{}", a_prev_b.rows(), a_prev_b.cols()),
            right: format!("{}x{}", layer.in_dim, layer.out_dim),
        });
    }
    let all_pm1 = a_prev_b
        .data()
        .iter()
        .all(|&x| x == T::one() || x == -T::one());
    if all_pm1 {
        let a_bits = BitMatrix::pack(a_prev_b)?;
        let wt_bits = layer.packed_weights_t()?;
        xnor_gemm(&a_bits, &wt_bits)
    } else {
        a_prev_b.matmul(wb)
    }
}

/// First-layer forward on 8-bit inputs via the bit-plane kernel.
pub fn linear_forward_bytes<T: Real>(
    layer: &LinearLayer<T>,
    planes: &BitPlanes8,
) -> Result<Tensor<T>> {
    let wt_bits = layer.packed_weights_t()?;
    bitplane_gemm(planes, &wt_bits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Vanilla,
    Shift,
}

/// Batch Normalization parameters and running statistics for one layer.
#[derive(Debug, Clone)]
pub struct BatchNormState<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
    pub momentum: T,
    pub mode: BnMode,
}

pub const BN_DEFAULT_EPS: f64 = 1e-5;
pub const BN_DEFAULT_MOMENTUM: f64 = 0.1;

impl<T: Real> BatchNormState<T> {
    pub fn new(features: usize, mode: BnMode) -> Self {
        BatchNormState {
            gamma: vec![T::one(); features],
            beta: vec![T::zero(); features],
            running_mean: vec![T::zero(); features],
            running_var: vec![T::one(); features],
            eps: T::from_f64x(BN_DEFAULT_EPS),
            momentum: T::from_f64x(BN_DEFAULT_MOMENTUM),
            mode,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }
}

/// Forward cache needed by [`bn_backward`].
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    centered: Tensor<T>,
    x_hat: Tensor<T>,
    /// per-feature multiplier actually applied to the centered input
    /// (`1/sqrt(var+eps)`, or its AP2 in shift mode)
    applied_scale: Vec<T>,
    /// raw `1/sqrt(var+eps)` from the mode's variance estimate
    inv_std: Vec<T>,
    /// per-feature gamma actually applied (`gamma`, or its AP2 in shift mode)
    applied_gamma: Vec<T>,
    batch: usize,
}

fn column_means<T: Real>(s: &Tensor<T>) -> Vec<T> {
    let (m, f) = (s.rows(), s.cols());
    let mut acc = vec![0.0f64; f];
    for i in 0..m {
        for (a, &v) in acc.iter_mut().zip(s.row(i)) {
            *a += v.to_f64x();
        }
    }
    acc.into_iter()
        .map(|x| T::from_f64x(x / m as f64))
        .collect()
}

fn bn_forward_impl<T: Real>(
    state: &mut BatchNormState<T>,
    s: &Tensor<T>,
    training: bool,
) -> Result<(Tensor<T>, Option<BnCache<T>>)> {
    let (m, f) = (s.rows(), s.cols());
    if f != state.features() {
        return Err(Error::ShapeMismatch {
            op: "bn_forward",
            left: format!("{f} features"),
            right: format!("{} features", state.features()),
        });
    }
    let shift = state.mode == BnMode::Shift;

    if !training {
        let scale: Vec<T> = state
            .running_var
            .iter()
            .map(|&v| {
                let inv = T::one() / (v + state.eps).sqrt();
                if shift {
                    ap2(inv)
                } else {
                    inv
                }
            })
            .collect();
        let gamma: Vec<T> = state
            .gamma
            .iter()
            .map(|&g| if shift { ap2(g) } else { g })
            .collect();
        let mut y = Tensor::zeros(m, f)?;
        for i in 0..m {
            let row = s.row(i);
            let out = y.row_mut(i);
            for j in 0..f {
                out[j] = gamma[j] * ((row[j] - state.running_mean[j]) * scale[j]) + state.beta[j];
            }
        }
        return Ok((y, None));
    }

    if m < 2 {
        return Err(Error::BatchTooSmall(m));
    }
    let mean = column_means(s);
    let mut centered = Tensor::zeros(m, f)?;
    for i in 0..m {
        let row = s.row(i);
        let out = centered.row_mut(i);
        for j in 0..f {
            out[j] = row[j] - mean[j];
        }
    }
    // variance: mean(C^2), or mean(C * ap2(C)) in shift mode
    let mut var_acc = vec![0.0f64; f];
    for i in 0..m {
        let row = centered.row(i);
        for j in 0..f {
            let c = row[j];
            let term = if shift { shift_mul(c, c) } else { c * c };
            var_acc[j] += term.to_f64x();
        }
    }
    let var: Vec<T> = var_acc
        .iter()
        .map(|&x| T::from_f64x(x / m as f64))
        .collect();

    let inv_std: Vec<T> = var
        .iter()
        .map(|&v| T::one() / (v + state.eps).sqrt())
        .collect();
    let applied_scale: Vec<T> = inv_std
        .iter()
        .map(|&x| if shift { ap2(x) } else { x })
        .collect();
    let applied_gamma: Vec<T> = state
        .gamma
        .iter()
        .map(|&g| if shift { ap2(g) } else { g })
        .collect();

    let mut x_hat = Tensor::zeros(m, f)?;
    let mut y = Tensor::zeros(m, f)?;
    for i in 0..m {
        let c_row = centered.row(i);
        for j in 0..f {
            let xh = c_row[j] * applied_scale[j];
            x_hat.set(i, j, xh);
            y.set(i, j, applied_gamma[j] * xh + state.beta[j]);
        }
    }

    // running statistics via exponential moving average
    let mom = state.momentum;
    for j in 0..f {
        state.running_mean[j] = (T::one() - mom) * state.running_mean[j] + mom * mean[j];
        state.running_var[j] = (T::one() - mom) * state.running_var[j] + mom * var[j];
    }

    let cache = BnCache {
        centered,
        x_hat,
        applied_scale,
        inv_std,
        applied_gamma,
        batch: m,
    };
    Ok((y, Some(cache)))
}

/// Vanilla Batch Normalization forward. In training mode returns the cache
/// for the backward pass and updates the running statistics; in inference
/// mode normalizes with the frozen running statistics.
pub fn bn_forward<T: Real>(
    state: &mut BatchNormState<T>,
    s: &Tensor<T>,
    training: bool,
) -> Result<(Tensor<T>, Option<BnCache<T>>)> {
    debug_assert_eq!(state.mode, BnMode::Vanilla);
    bn_forward_impl(state, s, training)
}

/// Shift-based Batch Normalization: the variance estimate and both scalings
/// go through AP2 so that every multiplication is a binary shift.
pub fn shift_bn_forward<T: Real>(
    state: &mut BatchNormState<T>,
    s: &Tensor<T>,
    training: bool,
) -> Result<(Tensor<T>, Option<BnCache<T>>)> {
    debug_assert_eq!(state.mode, BnMode::Shift);
    bn_forward_impl(state, s, training)
}

/// Mode-dispatching forward used by the trainer.
pub fn bn_forward_auto<T: Real>(
    state: &mut BatchNormState<T>,
    s: &Tensor<T>,
    training: bool,
) -> Result<(Tensor<T>, Option<BnCache<T>>)> {
    bn_forward_impl(state, s, training)
}

/// Batch Normalization backward. For the shift mode the AP2 roundings are
/// treated as identity: the standard gradient formulas are evaluated with
/// the shift-approximated forward statistics.
pub fn bn_backward<T: Real>(
    state: &BatchNormState<T>,
    g_out: &Tensor<T>,
    cache: &BnCache<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let (m, f) = (g_out.rows(), g_out.cols());
    if m != cache.batch || f != state.features() {
        return Err(Error::ShapeMismatch {
            op: "bn_backward",
            left: format!("{m}x{f}"),
            right: format!("{}x{}", cache.batch, state.features()),
        });
    }
    let mf = T::from_usize_(m);

    let mut g_gamma = vec![T::zero(); f];
    let mut g_beta = vec![T::zero(); f];
    let mut sum_gx = vec![T::zero(); f]; // sum of g_xhat
    let mut sum_gx_c = vec![T::zero(); f]; // sum of g_xhat * centered
    for i in 0..m {
        let g_row = g_out.row(i);
        let xh_row = cache.x_hat.row(i);
        let c_row = cache.centered.row(i);
        for j in 0..f {
            let g = g_row[j];
            g_beta[j] += g;
            g_gamma[j] += g * xh_row[j];
            let gx = g * cache.applied_gamma[j];
            sum_gx[j] += gx;
            sum_gx_c[j] += gx * c_row[j];
        }
    }

    // g_var_j = sum(g_xhat * C) * (-1/2) * inv_std^3
    // g_mean_j = -inv_std * sum(g_xhat) - g_var * (2/m) * sum(C)  [sum(C)=0]
    let half = T::from_f64x(0.5);
    let two = T::from_f64x(2.0);
    let mut g_var = vec![T::zero(); f];
    let mut g_mean = vec![T::zero(); f];
    for j in 0..f {
        let inv = cache.inv_std[j];
        g_var[j] = -half * sum_gx_c[j] * inv * inv * inv;
        g_mean[j] = -cache.applied_scale[j] * sum_gx[j];
    }

    let mut g_in = Tensor::zeros(m, f)?;
    for i in 0..m {
        let g_row = g_out.row(i);
        let c_row = cache.centered.row(i);
        let out = g_in.row_mut(i);
        for j in 0..f {
            let gx = g_row[j] * cache.applied_gamma[j];
            out[j] =
                gx * cache.applied_scale[j] + g_var[j] * two * c_row[j] / mf + g_mean[j] / mf;
        }
    }
    Ok((g_in, g_gamma, g_beta))
}

/// Binarize (or multi-bit quantize) activations. With one bit the mapping is
/// deterministic sign, or stochastic sign when `stochastic` is set in
/// training mode; above one bit the spec's linear/log scheme applies.
pub fn activation_binarize_forward<T: Real>(
    a: &Tensor<T>,
    spec: &QuantSpec,
    rng: &mut Rng,
    training: bool,
    stochastic: bool,
) -> Tensor<T> {
    let kind = &spec.activations;
    if kind.bits == 1 {
        if training && stochastic {
            let mut out = a.clone();
            for v in out.data_mut() {
                *v = stoch_binarize(*v, rng);
            }
            out
        } else {
            a.map(sign_binarize)
        }
    } else {
        match kind.scheme {
            Scheme::Linear => a.map(|x| linear_quant(x, kind)),
            Scheme::Log => a.map(|x| log_quant(x, kind)),
        }
    }
}

/// Straight-through backward through the activation quantizer: the upstream
/// gradient passes where the cached pre-quantization activation is in
/// [-1, 1] and is cancelled outside.
pub fn activation_backward<T: Real>(g_out: &Tensor<T>, cached_a: &Tensor<T>) -> Result<Tensor<T>> {
    g_out.zip_map(cached_a, ste_backward)
}

/// Square hinge loss (L2-SVM) over +-1 one-vs-rest targets:
/// mean over all entries of `max(0, 1 - t*o)^2`, with its analytic gradient.
pub fn square_hinge_loss<T: Real>(outputs: &Tensor<T>, targets: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if outputs.rows() != targets.rows() || outputs.cols() != targets.cols() {
        return Err(Error::ShapeMismatch {
            op: "square_hinge_loss",
            left: format!("{}x{}", outputs.rows(), outputs.cols()),
            right: format!("{}x{}", targets.rows(), targets.cols()),
        });
    }
    for (i, &t) in targets.data().iter().enumerate() {
        if t != T::one() && t != -T::one() {
            return Err(Error::NonBinaryValue {
                index: i,
                value: t.to_f64x(),
            });
        }
    }
    let count = T::from_usize_(outputs.data().len());
    let mut loss = 0.0f64;
    let mut grad = Tensor::zeros(outputs.rows(), outputs.cols())?;
    for (k, (&o, &t)) in outputs.data().iter().zip(targets.data()).enumerate() {
        let margin = (T::one() - t * o).max(T::zero());
        loss += (margin * margin).to_f64x();
        grad.data_mut()[k] = -T::from_f64x(2.0) * t * margin / count;
    }
    Ok((
        T::from_f64x(loss / count.to_f64x()),
        grad,
    ))
}
