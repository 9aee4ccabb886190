//! Globally adaptive Gauss–Kronrod (7/15) quadrature.
//!
//! Used as the independent numerical route next to the closed-form
//! interference expressions.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("quadrature did not reach tolerance: estimate {estimate}, error {error} after {intervals} intervals")]
pub struct QuadError {
    pub estimate: f64,
    pub error: f64,
    pub intervals: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { abs: 1e-10, rel: 1e-12, max_intervals: 20_000 }
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

#[derive(Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Segment {
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(centre);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(centre - dx) + f(centre + dx);
        kronrod += WGK[j] * pair;
        // odd Kronrod nodes are the Gauss nodes
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    Segment { a, b, value: kronrod * half, error: ((kronrod - gauss) * half).abs() }
}

/// ∫ₐᵇ f(x) dx on a finite interval.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<f64, QuadError> {
    if a == b {
        return Ok(0.0);
    }
    let mut segments = vec![kronrod(&f, a, b)];
    loop {
        let value: f64 = segments.iter().map(|s| s.value).sum();
        let error: f64 = segments.iter().map(|s| s.error).sum();
        if error <= tol.abs.max(tol.rel * value.abs()) {
            return Ok(value);
        }
        if segments.len() >= tol.max_intervals {
            return Err(QuadError { estimate: value, error, intervals: segments.len() });
        }
        let (worst, _) = segments.iter().enumerate().max_by(|x, y| x.1.error.total_cmp(&y.1.error)).expect("non-empty");
        let seg = segments.swap_remove(worst);
        let mid = 0.5 * (seg.a + seg.b);
        segments.push(kronrod(&f, seg.a, mid));
        segments.push(kronrod(&f, mid, seg.b));
    }
}

/// ∫ₐ^∞ f(x) dx through the map x = a + u/(1−u), u ∈ [0, 1).
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64, tol: Tolerance) -> Result<f64, QuadError> {
    integrate(
        |u| {
            let one_minus = 1.0 - u;
            let x = a + u / one_minus;
            let jac = 1.0 / (one_minus * one_minus);
            let v = f(x) * jac;
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let v = integrate(|x| 3.0 * x * x + 1.0, 0.0, 2.0, Tolerance::default()).unwrap();
        assert!((v - 10.0).abs() < 1e-13);
    }

    #[test]
    fn gaussian_tail() {
        let v = integrate_to_infinity(|x| (-x * x).exp(), 0.0, Tolerance::default()).unwrap();
        assert!((v - 0.5 * std::f64::consts::PI.sqrt()).abs() < 1e-11);
    }

    #[test]
    fn kinked_integrand_converges() {
        let v = integrate(|x: f64| x.abs(), -1.0, 3.0, Tolerance::default()).unwrap();
        assert!((v - 5.0).abs() < 1e-10);
    }

    #[test]
    fn interval_cap_reports_error() {
        let tol = Tolerance { abs: 1e-300, rel: 0.0, max_intervals: 4 };
        let err = integrate(|x: f64| x.sin() * (50.0 * x).cos(), 0.0, 10.0, tol).unwrap_err();
        assert!(err.intervals >= 4);
    }
}
