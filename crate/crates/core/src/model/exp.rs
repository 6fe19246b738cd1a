//! Branch-free `exp(-x)` for `x >= 0`, written so the kernel loops vectorize.
//!
//! Range reduction `x = k ln2 - r` with a two-part `ln2`, a Taylor polynomial
//! for `exp(r)` on `|r| <= ln2 / 2`, and the scale `2^-k` applied as two
//! normal powers of two so results in the subnormal range round gradually.
//! Above `cut` the result is exactly zero. `x` must not be NaN.

const F64_LN2_HI: f64 = 0.693_147_180_369_123_8;
const F64_LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
const F64_INV_LN2: f64 = std::f64::consts::LOG2_E;
// adding 1.5 * 2^52 rounds to an integer held in the low mantissa bits
const F64_ROUND: f64 = 6_755_399_441_055_744.0;

// 1/k! for k = 13 down to 2
const F64_TAYLOR: [f64; 12] = [
    1.0 / 6_227_020_800.0,
    1.0 / 479_001_600.0,
    1.0 / 39_916_800.0,
    1.0 / 3_628_800.0,
    1.0 / 362_880.0,
    1.0 / 40_320.0,
    1.0 / 5_040.0,
    1.0 / 720.0,
    1.0 / 120.0,
    1.0 / 24.0,
    1.0 / 6.0,
    0.5,
];

#[inline(always)]
pub(crate) fn exp_neg_f64(x: f64, cut: f64) -> f64 {
    let xc = if x < cut { x } else { cut };
    let shifted = xc * F64_INV_LN2 + F64_ROUND;
    let k = shifted - F64_ROUND;
    let r = (k * F64_LN2_HI - xc) + k * F64_LN2_LO;
    let mut p = F64_TAYLOR[0];
    for c in &F64_TAYLOR[1..] {
        p = p * r + c;
    }
    p = (p * r + 1.0) * r + 1.0;
    let kb = shifted.to_bits() & 0x7ff;
    let k1 = kb >> 1;
    let k2 = kb.wrapping_sub(k1);
    // k <= cut / ln2 keeps both exponents normal; wrapping ops avoid overflow
    // checks that would block vectorization in checked builds
    let s1 = f64::from_bits(1023u64.wrapping_sub(k1) << 52);
    let s2 = f64::from_bits(1023u64.wrapping_sub(k2) << 52);
    let v = p * s1 * s2;
    if x > cut {
        0.0
    } else {
        v
    }
}

const F32_LN2_HI: f32 = 0.693_145_75;
const F32_LN2_LO: f32 = 1.428_606_8e-6;
const F32_INV_LN2: f32 = std::f32::consts::LOG2_E;
const F32_ROUND: f32 = 12_582_912.0;

// 1/k! for k = 7 down to 2
const F32_TAYLOR: [f32; 6] = [1.0 / 5_040.0, 1.0 / 720.0, 1.0 / 120.0, 1.0 / 24.0, 1.0 / 6.0, 0.5];

#[inline(always)]
pub(crate) fn exp_neg_f32(x: f32, cut: f32) -> f32 {
    let xc = if x < cut { x } else { cut };
    let shifted = xc * F32_INV_LN2 + F32_ROUND;
    let k = shifted - F32_ROUND;
    let r = (k * F32_LN2_HI - xc) + k * F32_LN2_LO;
    let mut p = F32_TAYLOR[0];
    for c in &F32_TAYLOR[1..] {
        p = p * r + c;
    }
    p = (p * r + 1.0) * r + 1.0;
    let kb = shifted.to_bits() & 0xff;
    let k1 = kb >> 1;
    let k2 = kb.wrapping_sub(k1);
    let s1 = f32::from_bits(127u32.wrapping_sub(k1) << 23);
    let s2 = f32::from_bits(127u32.wrapping_sub(k2) << 23);
    let v = p * s1 * s2;
    if x > cut {
        0.0
    } else {
        v
    }
}
