//! Error-function family for real arguments.
//!
//! Rational Chebyshev approximations after W. J. Cody (Netlib SPECFUN
//! `CALERF`). The interval split is |x| ≤ 0.46875, 0.46875 < |x| ≤ 4 and
//! |x| > 4; `erfcx` never forms `exp(x²)` explicitly on the positive axis so it
//! stays finite where `erfc` underflows.

#![allow(clippy::excessive_precision)]

use std::f64::consts::PI;

const THRESH: f64 = 0.46875;
const FRAC_1_SQRT_PI: f64 = 5.641_895_835_477_563e-1;
const XNEG: f64 = -26.628;
const XBIG: f64 = 26.543;
const XHUGE: f64 = 6.71e7;
const XMAX: f64 = 2.53e307;

const A: [f64; 5] = [
    3.161_123_743_870_565_6e0,
    1.138_641_541_510_501_6e2,
    3.774_852_376_853_020_2e2,
    3.209_377_589_138_469_5e3,
    1.857_777_061_846_031_5e-1,
];
const B: [f64; 4] =
    [2.360_129_095_234_412_1e1, 2.440_246_379_344_441_7e2, 1.282_616_526_077_372_3e3, 2.844_236_833_439_170_6e3];
const C: [f64; 9] = [
    5.641_884_969_886_701e-1,
    8.883_149_794_388_376e0,
    6.611_919_063_714_163e1,
    2.986_351_381_974_001_3e2,
    8.819_522_212_417_691e2,
    1.712_047_612_634_070_6e3,
    2.051_078_377_826_071_5e3,
    1.230_339_354_797_997_2e3,
    2.153_115_354_744_038_5e-8,
];
const D: [f64; 8] = [
    1.574_492_611_070_983_5e1,
    1.176_939_508_913_125e2,
    5.371_811_018_620_099e2,
    1.621_389_574_566_690_2e3,
    3.290_799_235_733_459_7e3,
    4.362_619_090_143_247e3,
    3.439_367_674_143_721_6e3,
    1.230_339_354_803_749_5e3,
];
const P: [f64; 6] = [
    3.053_266_349_612_323_4e-1,
    3.603_448_999_498_044_4e-1,
    1.257_817_261_112_292_5e-1,
    1.608_378_514_874_227_7e-2,
    6.587_491_615_298_378e-4,
    1.631_538_713_730_209_8e-2,
];
const Q: [f64; 5] = [
    2.568_520_192_289_822_4e0,
    1.872_952_849_923_460_4e0,
    5.279_051_029_514_284e-1,
    6.051_834_131_244_132e-2,
    2.335_204_976_268_691_8e-3,
];

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Erf,
    Erfc,
    Erfcx,
}

/// exp(-y²) evaluated as exp(-ysq²)·exp(-del) with ysq = y truncated to 1/16,
/// which keeps the product accurate for moderate y.
fn exp_neg_sq(y: f64) -> f64 {
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp()
}

fn calerf(x: f64, kind: Kind) -> f64 {
    let y = x.abs();
    let mut result;
    if y <= THRESH {
        let ysq = if y > 1.11e-16 { y * y } else { 0.0 };
        let mut num = A[4] * ysq;
        let mut den = ysq;
        for i in 0..3 {
            num = (num + A[i]) * ysq;
            den = (den + B[i]) * ysq;
        }
        result = x * (num + A[3]) / (den + B[3]);
        if kind != Kind::Erf {
            result = 1.0 - result;
        }
        if kind == Kind::Erfcx {
            result *= ysq.exp();
        }
        return result;
    } else if y <= 4.0 {
        let mut num = C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + C[i]) * y;
            den = (den + D[i]) * y;
        }
        result = (num + C[7]) / (den + D[7]);
        if kind != Kind::Erfcx {
            result *= exp_neg_sq(y);
        }
    } else {
        result = 0.0;
        let mut done = false;
        if y >= XBIG {
            if kind != Kind::Erfcx || y >= XMAX {
                done = true;
            } else if y >= XHUGE {
                result = FRAC_1_SQRT_PI / y;
                done = true;
            }
        }
        if !done {
            let ysq = 1.0 / (y * y);
            let mut num = P[5] * ysq;
            let mut den = ysq;
            for i in 0..4 {
                num = (num + P[i]) * ysq;
                den = (den + Q[i]) * ysq;
            }
            result = ysq * (num + P[4]) / (den + Q[4]);
            result = (FRAC_1_SQRT_PI - result) / y;
            if kind != Kind::Erfcx {
                result *= exp_neg_sq(y);
            }
        }
    }

    match kind {
        Kind::Erf => {
            result = (0.5 - result) + 0.5;
            if x < 0.0 {
                result = -result;
            }
        }
        Kind::Erfc => {
            if x < 0.0 {
                result = 2.0 - result;
            }
        }
        Kind::Erfcx => {
            if x < 0.0 {
                if x < XNEG {
                    result = f64::INFINITY;
                } else {
                    let ysq = (x * 16.0).trunc() / 16.0;
                    let del = (x - ysq) * (x + ysq);
                    let e = (ysq * ysq).exp() * del.exp();
                    result = (e + e) - result;
                }
            }
        }
    }
    result
}

pub fn erf(x: f64) -> f64 {
    calerf(x, Kind::Erf)
}

pub fn erfc(x: f64) -> f64 {
    calerf(x, Kind::Erfc)
}

/// Scaled complementary error function `exp(x²)·erfc(x)`.
///
/// Returns `+inf` for x below about -26.6 where the value exceeds the f64
/// range. Callers that need a finite answer there should use [`ln_erfc`].
pub fn erfcx(x: f64) -> f64 {
    calerf(x, Kind::Erfcx)
}

/// `ln erfc(x)`, finite for every finite x.
///
/// For x > 0 this is `ln erfcx(x) - x²`; for x ≤ 0, erfc(x) ∈ [1, 2] and the
/// direct form is exact enough.
pub fn ln_erfc(x: f64) -> f64 {
    if x > 0.0 {
        erfcx(x).ln() - x * x
    } else {
        erfc(x).ln()
    }
}

/// `-d/dx ln erfc(x) = 2 exp(-x²) / (√π erfc(x))`.
///
/// Positive everywhere, tends to 0 as x → -∞ and to 2x as x → +∞.
pub fn neg_dln_erfc(x: f64) -> f64 {
    let s = erfcx(x);
    if s.is_infinite() {
        0.0
    } else {
        2.0 / (PI.sqrt() * s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erfcx_at_zero_is_one() {
        assert_eq!(erfcx(0.0), 1.0);
        assert_eq!(erfc(0.0), 1.0);
        assert_eq!(erf(0.0), 0.0);
    }

    #[test]
    fn erf_reference_values() {
        // Abramowitz & Stegun table 7.1
        assert!((erf(0.5) - 0.520_499_877_813_046_5).abs() < 1e-15);
        assert!((erf(1.0) - 0.842_700_792_949_714_9).abs() < 1e-15);
        assert!((erfc(2.0) - 4.677_734_981_047_266e-3).abs() < 1e-17);
        assert!((erf(-1.0) + erf(1.0)).abs() < 1e-16);
    }

    #[test]
    fn ln_erfc_matches_direct_form_where_representable() {
        for &x in &[-5.0, -1.0, 0.0, 0.3, 1.0, 3.0, 8.0, 20.0] {
            let direct = erfc(x).ln();
            assert!((ln_erfc(x) - direct).abs() < 1e-12 * direct.abs().max(1.0), "x={x}");
        }
        // erfc(40) underflows but its log is fine
        let v = ln_erfc(40.0);
        assert!(v.is_finite() && v < -1600.0);
    }

    #[test]
    fn erfcx_overflow_region_reports_infinity() {
        assert!(erfcx(-30.0).is_infinite());
        assert_eq!(neg_dln_erfc(-30.0), 0.0);
    }

    #[test]
    fn neg_dln_erfc_exceeds_two_x() {
        for i in -40..200 {
            let x = i as f64 * 0.1;
            let h = neg_dln_erfc(x);
            assert!(h > 2.0 * x, "x={x} h={h}");
        }
    }
}
