//! `f64` slice kernels the compiler can vectorize, compiled once per
//! instruction set and picked at run time.
//!
//! Rust never contracts `a * b + c` into a fused multiply-add on its own
//! and never reassociates float sums, so every variant returns
//! bit-identical results.
//!
//! `exp` uses range reduction `x = k ln2 + r` with `|r| <= ln2 / 2`, a
//! degree-11 Taylor polynomial for `exp(r)` and an exponent-bit shift for
//! `2^k`. Relative error stays below `2e-14`. Inputs below `-708` give `0`
//! (the subnormal range is flushed), inputs above `709` give `+inf`, NaN
//! stays NaN.

const SHIFT: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
const LN2_HI: f64 = 0.693_147_180_369_123_8;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;

#[inline(always)]
fn exp1(x: f64) -> f64 {
    let xc = if x < -708.0 {
        -708.0
    } else if x > 709.0 {
        709.0
    } else {
        x
    };
    let kk = xc * std::f64::consts::LOG2_E + SHIFT;
    let k = kk - SHIFT;
    let r = xc - k * LN2_HI - k * LN2_LO;
    let mut p = 1.0 / 39_916_800.0;
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
    let scale = f64::from_bits(kk.to_bits().wrapping_add(1023) << 52);
    let y = p * scale;
    if x < -708.0 {
        0.0
    } else if x > 709.0 {
        f64::INFINITY
    } else {
        y
    }
}

#[inline(always)]
fn exp_loop(v: &mut [f64]) {
    for x in v.iter_mut() {
        *x = exp1(*x);
    }
}

#[inline(always)]
fn dot_loop(a: &[f64], b: &[f64]) -> f64 {
    crate::scalar::lane_dot(a, b)
}

#[inline(always)]
fn axpy_loop(acc: &mut [f64], x: &[f64], s: f64) {
    for (a, &v) in acc.iter_mut().zip(x) {
        *a += v * s;
    }
}

/// Defines a public entry point plus AVX-512 and AVX2 copies of a loop.
macro_rules! dispatch {
    ($name:ident, $body:ident, ($($arg:ident: $ty:ty),*) -> $ret:ty) => {
        pub(crate) fn $name($($arg: $ty),*) -> $ret {
            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx512f,avx512dq,avx512vl,avx2,fma")]
                unsafe fn wide($($arg: $ty),*) -> $ret {
                    $body($($arg),*)
                }
                #[target_feature(enable = "avx2,fma")]
                unsafe fn narrow($($arg: $ty),*) -> $ret {
                    $body($($arg),*)
                }
                match level() {
                    // SAFETY: `level` only reports detected features.
                    Level::Avx512 => return unsafe { wide($($arg),*) },
                    Level::Avx2 => return unsafe { narrow($($arg),*) },
                    Level::Base => {}
                }
            }
            $body($($arg),*)
        }
    };
}

#[derive(Clone, Copy)]
enum Level {
    Avx512,
    Avx2,
    Base,
}

fn level() -> Level {
    static LEVEL: std::sync::OnceLock<Level> = std::sync::OnceLock::new();
    *LEVEL.get_or_init(|| {
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx512f")
                && std::arch::is_x86_feature_detected!("avx512dq")
                && std::arch::is_x86_feature_detected!("avx512vl")
            {
                return Level::Avx512;
            }
            if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
                return Level::Avx2;
            }
        }
        Level::Base
    })
}

dispatch!(exp_slice, exp_loop, (v: &mut [f64]) -> ());
dispatch!(dot, dot_loop, (a: &[f64], b: &[f64]) -> f64);
dispatch!(axpy, axpy_loop, (acc: &mut [f64], x: &[f64], s: f64) -> ());
