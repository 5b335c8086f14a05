//! Elementwise activation kernels.
//!
//! `tanh` is written branch-free so the slice variants auto-vectorize; the
//! scalar and slice paths run the same IEEE operations and therefore agree
//! bit-for-bit. The small-argument branch is the classic Cephes rational
//! approximation, the large-argument branch uses `(exp(2|x|) - 1) / (exp(2|x|) + 1)`.

const LOG2_E: f64 = std::f64::consts::LOG2_E;
const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
const ROUND_MAGIC: f64 = 6_755_399_441_055_744.0;

const TANH_P: [f64; 3] = [
    -9.643_991_794_250_522_386_28e-1,
    -9.928_772_310_019_185_865_64e1,
    -1.614_687_684_417_084_479_52e3,
];
const TANH_Q: [f64; 3] = [
    1.128_116_784_916_329_314_02e2,
    2.235_488_390_601_004_485_83e3,
    4.844_063_053_251_254_860_48e3,
];

/// `exp(y)` for `y` in `[0, 40]`; NaN propagates.
#[inline(always)]
fn exp_bounded(y: f64) -> f64 {
    let y = if y > 40.0 { 40.0 } else { y };
    // Adding 1.5·2^52 rounds to an integer held in the low mantissa bits;
    // unlike `round` and float-to-int casts this vectorizes on plain SSE2.
    let shifted = y * LOG2_E + ROUND_MAGIC;
    let k = shifted - ROUND_MAGIC;
    let r = y - k * LN2_HI - k * LN2_LO;
    // Taylor series to degree 13; |r| <= ln2 / 2 keeps truncation below 1e-17.
    let mut p = 1.0 / 6_227_020_800.0;
    p = p * r + 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    let scale = f64::from_bits(shifted.to_bits().wrapping_add(1023) << 52);
    p * scale
}

#[inline(always)]
pub fn tanh(x: f64) -> f64 {
    let a = x.abs();
    let z = x * x;
    let p = (TANH_P[0] * z + TANH_P[1]) * z + TANH_P[2];
    let q = ((z + TANH_Q[0]) * z + TANH_Q[1]) * z + TANH_Q[2];
    let e = exp_bounded(2.0 * a);
    // Both branches share one division: x + x z p / q  or  (e - 1) / (e + 1).
    let small = a < 0.625;
    let num = if small {
        x * q + x * z * p
    } else {
        (e - 1.0).copysign(x)
    };
    let den = if small { q } else { e + 1.0 };
    num / den
}

#[inline(always)]
pub fn relu(x: f64) -> f64 {
    if x < 0.0 {
        0.0
    } else {
        x
    }
}

#[inline(always)]
pub fn step(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

#[inline(always)]
fn tanh_with_derivative_body(values: &mut [f64], deriv: &mut [f64]) {
    for (v, d) in values.iter_mut().zip(deriv.iter_mut()) {
        let h = tanh(*v);
        *v = h;
        *d = 1.0 - h * h;
    }
}

#[inline(always)]
fn tanh_body(values: &mut [f64]) {
    for v in values.iter_mut() {
        *v = tanh(*v);
    }
}

// Wider instruction sets only change the vector width: no FMA contraction
// happens without explicit `mul_add`, so results stay bit-identical.
#[cfg(target_arch = "x86_64")]
mod wide {
    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn tanh_with_derivative_avx512(values: &mut [f64], deriv: &mut [f64]) {
        super::tanh_with_derivative_body(values, deriv)
    }

    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn tanh_with_derivative_avx2(values: &mut [f64], deriv: &mut [f64]) {
        super::tanh_with_derivative_body(values, deriv)
    }

    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn tanh_avx512(values: &mut [f64]) {
        super::tanh_body(values)
    }

    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn tanh_avx2(values: &mut [f64]) {
        super::tanh_body(values)
    }
}

/// In place `h = tanh(z)`, `d = 1 - h^2`.
pub fn tanh_with_derivative(values: &mut [f64], deriv: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx512f") {
            // SAFETY: the required CPU feature was detected at runtime.
            return unsafe { wide::tanh_with_derivative_avx512(values, deriv) };
        }
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: as above.
            return unsafe { wide::tanh_with_derivative_avx2(values, deriv) };
        }
    }
    tanh_with_derivative_body(values, deriv)
}

pub fn sin_with_derivative(values: &mut [f64], deriv: &mut [f64]) {
    for (v, d) in values.iter_mut().zip(deriv.iter_mut()) {
        let z = *v;
        *v = z.sin();
        *d = z.cos();
    }
}

pub fn relu_with_derivative(values: &mut [f64], deriv: &mut [f64]) {
    for (v, d) in values.iter_mut().zip(deriv.iter_mut()) {
        let z = *v;
        *v = relu(z);
        *d = step(z);
    }
}

pub fn tanh_slice(values: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx512f") {
            // SAFETY: the required CPU feature was detected at runtime.
            return unsafe { wide::tanh_avx512(values) };
        }
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: as above.
            return unsafe { wide::tanh_avx2(values) };
        }
    }
    tanh_body(values)
}
