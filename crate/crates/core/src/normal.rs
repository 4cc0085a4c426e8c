//! Standard normal distribution function, upper-tail probability and quantile.
//!
//! Tail probabilities go through `erfc` directly so that `upper_tail(x)` stays
//! accurate for large `x` instead of cancelling in `1 - cdf(x)`.

use libm::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Φ(x).
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// 1 − Φ(x), the one-sided p-value of a standard normal statistic.
pub fn upper_tail(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// ln(1 − Φ(x)), finite far beyond the point where `upper_tail` underflows.
pub fn log_upper_tail(x: f64) -> f64 {
    if x < 30.0 {
        return upper_tail(x).ln();
    }
    // Mills-ratio expansion; the truncation error is far below f64 resolution here.
    let z = 1.0 / (x * x);
    let series = 1.0 - z + 3.0 * z * z - 15.0 * z * z * z + 105.0 * z * z * z * z;
    -0.5 * x * x - (x * (2.0 * PI).sqrt()).ln() + series.ln()
}

fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Φ⁻¹(p) for p in [0, 1]; returns ±∞ at the endpoints and NaN outside.
///
/// Acklam's rational approximation followed by two Halley refinement steps
/// against the erfc-based distribution function.
pub fn quantile(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    // Work in the lower half for accuracy and mirror afterwards.
    if p > 0.5 {
        return -lower_quantile(1.0 - p);
    }
    lower_quantile(p)
}

// `q` is the lower tail probability, q <= 0.5.
fn lower_quantile(q: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383_577_518_672_69e2,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let mut x = if q < P_LOW {
        let r = (-2.0 * q.ln()).sqrt();
        (((((C[0] * r + C[1]) * r + C[2]) * r + C[3]) * r + C[4]) * r + C[5])
            / ((((D[0] * r + D[1]) * r + D[2]) * r + D[3]) * r + 1.0)
    } else {
        let r = q - 0.5;
        let s = r * r;
        (((((A[0] * s + A[1]) * s + A[2]) * s + A[3]) * s + A[4]) * s + A[5]) * r
            / (((((B[0] * s + B[1]) * s + B[2]) * s + B[3]) * s + B[4]) * s + 1.0)
    };

    for _ in 0..2 {
        let density = pdf(x);
        if density == 0.0 || !density.is_finite() {
            break;
        }
        let e = cdf(x) - q;
        let u = e / density;
        x -= u / (1.0 + 0.5 * x * u);
    }
    x
}
