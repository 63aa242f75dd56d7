//! Scalar quantization functions and their straight-through gradients:
//! sign binarization (deterministic and stochastic), hard sigmoid/tanh,
//! the approximate power-of-2 (AP2), shift multiplication, and linear /
//! logarithmic multi-bit quantization.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::{round_half_away, Real};
use crate::tensor::Tensor;

/// Quantization scheme for bitwidths above 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Linear,
    Log,
}

impl Scheme {
    pub fn to_u8(self) -> u8 {
        match self {
            Scheme::Linear => 0,
            Scheme::Log => 1,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Scheme::Linear),
            1 => Ok(Scheme::Log),
            _ => Err(Error::InvalidQuantSpec(format!("unknown scheme tag {v}"))),
        }
    }
}

/// Bitwidth, scheme and clip range for one quantity (weights, activations or
/// gradients). `bits == 1` always means sign binarization, independent of the
/// scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantKind {
    pub bits: u8,
    pub scheme: Scheme,
    pub min_v: f64,
    pub max_v: f64,
}

impl QuantKind {
    pub fn binary() -> Self {
        QuantKind {
            bits: 1,
            scheme: Scheme::Linear,
            min_v: -1.0,
            max_v: 1.0,
        }
    }

    pub fn new(bits: u8, scheme: Scheme, min_v: f64, max_v: f64) -> Result<Self> {
        let k = QuantKind {
            bits,
            scheme,
            min_v,
            max_v,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=32).contains(&self.bits) {
            return Err(Error::InvalidQuantSpec(format!(
                "bits must be in [1,32], got {}",
                self.bits
            )));
        }
        if !(self.min_v < self.max_v) {
            return Err(Error::InvalidQuantSpec(format!(
                "minV ({}) must be < maxV ({})",
                self.min_v, self.max_v
            )));
        }
        Ok(())
    }
}

/// Bitwidths and schemes for weights, activations and gradients.
/// `gradients == None` means full-precision gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantSpec {
    pub weights: QuantKind,
    pub activations: QuantKind,
    pub gradients: Option<QuantKind>,
}

impl QuantSpec {
    /// 1-bit weights and activations, full-precision gradients.
    pub fn binary() -> Self {
        QuantSpec {
            weights: QuantKind::binary(),
            activations: QuantKind::binary(),
            gradients: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.activations.validate()?;
        if let Some(g) = &self.gradients {
            g.validate()?;
            if g.bits > 8 {
                return Err(Error::InvalidQuantSpec(format!(
                    "gradient bits must be <= 8, got {}",
                    g.bits
                )));
            }
        }
        Ok(())
    }
}

/// Deterministic binarization: +1 if `x >= 0`, else -1.
#[inline(always)]
pub fn sign_binarize<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one()
    } else {
        -T::one()
    }
}

/// `clip((x+1)/2, 0, 1)`.
#[inline(always)]
pub fn hard_sigmoid<T: Real>(x: T) -> T {
    let two = T::one() + T::one();
    ((x + T::one()) / two).max(T::zero()).min(T::one())
}

/// Stochastic binarization: +1 with probability `hard_sigmoid(x)`.
#[inline(always)]
pub fn stoch_binarize<T: Real>(x: T, rng: &mut Rng) -> T {
    if rng.next_f64() < hard_sigmoid(x).to_f64x() {
        T::one()
    } else {
        -T::one()
    }
}

/// `clip(r, -1, 1)`.
#[inline(always)]
pub fn hard_tanh<T: Real>(r: T) -> T {
    r.max(-T::one()).min(T::one())
}

/// Straight-through estimator backward: passes `g_q` where `|r| <= 1`
/// (boundary inclusive), zero elsewhere. This is the exact derivative of
/// hard tanh applied to the upstream gradient.
#[inline(always)]
pub fn ste_backward<T: Real>(g_q: T, r: T) -> T {
    if r.abs() <= T::one() {
        g_q
    } else {
        T::zero()
    }
}

/// Approximate power-of-2: `sign(x) * 2^round(log2|x|)`, with `ap2(0) = 0`.
#[inline(always)]
pub fn ap2_f64(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let a = x.abs();
    let bits = a.to_bits();
    let raw_exp = ((bits >> 52) & 0x7ff) as i64;
    let k = if raw_exp == 0 || raw_exp == 0x7ff {
        round_half_away(a.log2()) as i64
    } else {
        // normal: mantissa in [1,2); round(log2) ticks up at sqrt(2)
        let e = raw_exp - 1023;
        let m = f64::from_bits((bits & 0x000f_ffff_ffff_ffff) | (1023u64 << 52));
        if m >= std::f64::consts::SQRT_2 {
            e + 1
        } else {
            e
        }
    };
    let p = if (-1022..=1023).contains(&k) {
        f64::from_bits(((k + 1023) as u64) << 52)
    } else {
        2.0f64.powi(k.clamp(i32::MIN as i64, i32::MAX as i64) as i32)
    };
    if x < 0.0 {
        -p
    } else {
        p
    }
}

/// Single-precision [`ap2_f64`]. The mantissa comparison widens to f64 so the
/// rounding boundary is the same constant in both widths.
#[inline(always)]
pub fn ap2_f32(x: f32) -> f32 {
    if x == 0.0 {
        return 0.0;
    }
    let a = x.abs();
    let bits = a.to_bits();
    let raw_exp = ((bits >> 23) & 0xff) as i32;
    if raw_exp == 0 || raw_exp == 0xff {
        // subnormal or non-finite: defer to the f64 path
        return ap2_f64(x as f64) as f32;
    }
    let e = raw_exp - 127;
    let m = f32::from_bits((bits & 0x007f_ffff) | (127u32 << 23));
    let k = e + ((m as f64) >= std::f64::consts::SQRT_2) as i32;
    if !(-126..=127).contains(&k) {
        return ap2_f64(x as f64) as f32;
    }
    let p = f32::from_bits(((k + 127) as u32) << 23);
    if x < 0.0 {
        -p
    } else {
        p
    }
}

#[inline(always)]
pub fn ap2<T: Real>(x: T) -> T {
    x.ap2v()
}

/// Multiplication with the second operand rounded to its approximate
/// power-of-2: `x * ap2(y)`. Exact in hardware as a binary shift; in float
/// the product is exact too because the multiplier is a power of two.
#[inline(always)]
pub fn shift_mul<T: Real>(x: T, y: T) -> T {
    x * y.ap2v()
}

/// Linear quantization on the zero-anchored grid with
/// `step = (maxV - minV) / (2^bits - 1)`:
/// `clip(round(x/step) * step, minV, maxV)`.
pub fn linear_quant<T: Real>(x: T, kind: &QuantKind) -> T {
    debug_assert!(kind.bits >= 2);
    let step = (kind.max_v - kind.min_v) / ((1u64 << kind.bits) - 1) as f64;
    let q = round_half_away(x.to_f64x() / step) * step;
    T::from_f64x(q.clamp(kind.min_v, kind.max_v))
}

/// The paper's formula read literally, with the bitwidth itself as the step:
/// `clip(round(x/bits) * bits, minV, maxV)`. Kept for compatibility; the grid
/// is unusably coarse for bitwidth >= 1, so `linear_quant` is the default.
pub fn linear_quant_literal<T: Real>(x: T, kind: &QuantKind) -> T {
    let step = kind.bits as f64;
    let q = round_half_away(x.to_f64x() / step) * step;
    T::from_f64x(q.clamp(kind.min_v, kind.max_v))
}

/// Logarithmic quantization: `clip(ap2(x), minV, maxV)` with the exponent
/// clamped to the `2^bits - 1` levels ending at `round(log2(maxV))`.
pub fn log_quant<T: Real>(x: T, kind: &QuantKind) -> T {
    debug_assert!(kind.bits >= 2);
    let xf = x.to_f64x();
    if xf == 0.0 {
        return T::zero();
    }
    let levels = (1u64 << kind.bits) - 1;
    let e_hi = round_half_away(kind.max_v.abs().log2()) as i64;
    let e_lo = e_hi - (levels as i64 - 1);
    let p = ap2_f64(xf);
    let e = round_half_away(p.abs().log2()) as i64;
    let mag = 2.0f64
        .powi(e.clamp(e_lo, e_hi) as i32)
        .clamp(kind.min_v.abs(), kind.max_v.abs());
    T::from_f64x(if xf < 0.0 { -mag } else { mag })
}

/// Per-tensor logarithmic gradient quantization. The exponent grid is
/// anchored multiplicatively at `max|g|`: every nonzero output is
/// `sign(g) * max|g| * 2^-k` with `k in [0, 2^bits - 2]`. Zeros are
/// preserved; an all-zero tensor is returned unchanged.
pub fn quantize_gradient_tensor<T: Real>(g: &Tensor<T>, kind: &QuantKind) -> Tensor<T> {
    debug_assert!(kind.bits <= 8 && kind.bits >= 2);
    let max_abs = g
        .data()
        .iter()
        .fold(0.0f64, |m, &x| m.max(x.to_f64x().abs()));
    if max_abs == 0.0 {
        return g.clone();
    }
    let k_min = -(((1u64 << kind.bits) - 2) as i64);
    g.map(|x| {
        let xf = x.to_f64x();
        if xf == 0.0 {
            return T::zero();
        }
        let e = round_half_away((xf.abs() / max_abs).log2()) as i64;
        let mag = max_abs * 2.0f64.powi(e.clamp(k_min, 0) as i32);
        T::from_f64x(if xf < 0.0 { -mag } else { mag })
    })
}
