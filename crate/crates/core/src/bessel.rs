//! Exponentially scaled modified Bessel functions of order 0 and 1.
//!
//! `i*e(x) = e^{-x} I(x)` and `k*e(x) = e^{x} K(x)` for x > 0.

use std::f64::consts::PI;

const SERIES_LIMIT: f64 = 40.0;
const K_ASYMPTOTIC_LIMIT: f64 = 40.0;
const K_STEP: f64 = 0.1;

/// (e^{-x} I0(x), e^{-x} I1(x)) for x >= 0.
pub fn i01e(x: f64) -> (f64, f64) {
    debug_assert!(x >= 0.0);
    if x <= SERIES_LIMIT {
        let q = 0.25 * x * x;
        let mut t0 = 1.0;
        let mut t1 = 0.5 * x;
        let mut s0 = t0;
        let mut s1 = t1;
        let mut k = 1.0;
        loop {
            t0 *= q / (k * k);
            t1 *= q / (k * (k + 1.0));
            s0 += t0;
            s1 += t1;
            if t0 < 1e-17 * s0 && t1 <= 1e-17 * s1 {
                break;
            }
            k += 1.0;
        }
        let e = (-x).exp();
        (s0 * e, s1 * e)
    } else {
        (i_asymptotic(0.0, x), i_asymptotic(1.0, x))
    }
}

pub fn i0e(x: f64) -> f64 {
    i01e(x).0
}

pub fn i1e(x: f64) -> f64 {
    i01e(x).1
}

fn i_asymptotic(nu: f64, x: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..40 {
        let kf = k as f64;
        let odd = 2.0 * kf - 1.0;
        let next = -term * (mu - odd * odd) / (kf * 8.0 * x);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum / (2.0 * PI * x).sqrt()
}

fn k_asymptotic(nu: f64, x: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..40 {
        let kf = k as f64;
        let odd = 2.0 * kf - 1.0;
        let next = term * (mu - odd * odd) / (kf * 8.0 * x);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum * (PI / (2.0 * x)).sqrt()
}

/// (e^{x} K0(x), e^{x} K1(x)) for x > 0.
///
/// Trapezoid rule on K_ν(x) e^x = ∫_0^∞ exp(-x(cosh t - 1)) cosh(νt) dt,
/// which converges geometrically in the step; asymptotic series for large x.
pub fn k01e(x: f64) -> (f64, f64) {
    debug_assert!(x > 0.0);
    if x >= K_ASYMPTOTIC_LIMIT {
        return (k_asymptotic(0.0, x), k_asymptotic(1.0, x));
    }
    let mut s0 = 0.5;
    let mut s1 = 0.5;
    let mut n = 1;
    loop {
        let t = n as f64 * K_STEP;
        let arg = x * (t.cosh() - 1.0);
        if arg > 46.0 {
            break;
        }
        let e = (-arg).exp();
        s0 += e;
        s1 += e * t.cosh();
        n += 1;
    }
    (s0 * K_STEP, s1 * K_STEP)
}

pub fn k0e(x: f64) -> f64 {
    k01e(x).0
}

pub fn k1e(x: f64) -> f64 {
    k01e(x).1
}
