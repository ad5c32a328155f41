//! Small numeric utilities shared across modules.

use crate::scalar::Scalar;

/// Lanczos coefficients (g = 7, n = 9).
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the Gamma function for positive arguments.
pub fn ln_gamma<T: Scalar>(x: T) -> T {
    T::of_f64(ln_gamma_f64(x.as_f64()))
}

fn ln_gamma_f64(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        (pi / (pi * x).sin()).ln() - ln_gamma_f64(1.0 - x)
    } else {
        let x = x - 1.0;
        let mut a = LANCZOS[0];
        let t = x + 7.5;
        for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
    }
}

/// FNV-1a hash of a byte string, used for deterministic sub-seed derivation.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// splitmix64 step; decorrelates derived seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a named stage of a named iteration, derived from a master seed.
pub fn stage_seed(master: u64, iteration: u32, stage: &str) -> u64 {
    let tag = fnv1a(stage.as_bytes());
    splitmix64(master ^ tag.rotate_left(17) ^ ((iteration as u64) << 1 | 1))
}

/// Quantile of a sorted slice by linear interpolation, q in [0, 1].
pub fn sorted_quantile<T: Scalar>(sorted: &[T], q: f64) -> T {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = T::of_f64(pos - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}
