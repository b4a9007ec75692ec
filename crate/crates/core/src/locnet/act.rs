//! The selu activation.
//!
//! `f32` slices go through a branch-free polynomial `exp` that the compiler
//! can vectorize; `f64` uses the standard library.

use super::net::Real;

pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;

#[inline]
pub fn selu<F: Real>(x: F) -> F {
    if x > F::zero() {
        F::lit(SELU_LAMBDA) * x
    } else {
        F::lit(SELU_LAMBDA * SELU_ALPHA) * x.exp_m1()
    }
}

/// Derivative of selu expressed through its output.
#[inline]
pub fn selu_grad_from_output<F: Real>(y: F) -> F {
    if y > F::zero() {
        F::lit(SELU_LAMBDA)
    } else {
        y + F::lit(SELU_LAMBDA * SELU_ALPHA)
    }
}

/// `v[i] = selu(v[i] + bias)` for every element.
pub fn selu_bias_in_place<F: Real>(v: &mut [F], bias: F) {
    F::selu_bias_slice(v, bias)
}

pub(crate) fn selu_bias_scalar<F: Real>(v: &mut [F], bias: F) {
    for x in v {
        *x = selu(*x + bias);
    }
}

/// `e^x - 1` for `x <= 0`, within a few ulp, without branches.
#[inline(always)]
fn exp_m1_neg_f32(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_359_4;
    const LN2_LO: f32 = -2.121_944_4e-4;
    // Adding 1.5·2^23 rounds to the nearest integer; the low mantissa bits
    // then hold n as a two's-complement offset.
    const MAGIC: f32 = 12_582_912.0;
    let x = x.clamp(-87.0, 0.0);
    let shifted = x * LOG2E + MAGIC;
    let n = shifted - MAGIC;
    let ni = shifted.to_bits() as i32 - MAGIC.to_bits() as i32;
    let r = x - n * LN2_HI - n * LN2_LO;
    let mut p = 1.987_569_2e-4_f32;
    p = p * r + 1.398_199_9e-3;
    p = p * r + 8.333_452e-3;
    p = p * r + 4.166_579_6e-2;
    p = p * r + 1.666_666_5e-1;
    p = p * r + 0.5;
    let em1_r = p * r * r + r;
    let scale = f32::from_bits(((ni + 127) << 23) as u32);
    let em1 = (em1_r + 1.0) * scale - 1.0;
    // With n = 0 the polynomial already is e^r - 1, free of cancellation.
    if ni == 0 {
        em1_r
    } else {
        em1
    }
}

#[inline(always)]
fn selu_bias_f32_body(v: &mut [f32], bias: f32) {
    let l = SELU_LAMBDA as f32;
    let la = (SELU_LAMBDA * SELU_ALPHA) as f32;
    for x in v {
        let z = *x + bias;
        let neg = la * exp_m1_neg_f32(z);
        *x = if z > 0.0 { l * z } else { neg };
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn selu_bias_f32_avx2(v: &mut [f32], bias: f32) {
    selu_bias_f32_body(v, bias)
}

pub(crate) fn selu_bias_f32(v: &mut [f32], bias: f32) {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: AVX2 support was detected at runtime.
        return unsafe { selu_bias_f32_avx2(v, bias) };
    }
    selu_bias_f32_body(v, bias)
}
