//! Line-shape primitives: the Faddeeva function, Voigt, Gaussian and
//! Lorentzian profiles, and Voigt FWHM conventions.

use std::f64::consts::{PI, SQRT_2};
use std::sync::OnceLock;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;
const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// Gaussian FWHM per unit standard deviation, 2√(2 ln 2).
pub const GAUSS_FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

/// Olivero–Longbothum constants.
pub const OLIVERO_A: f64 = 0.5346;
pub const OLIVERO_B: f64 = 0.2166;

/// FWHM of the tied (γ = σ) Voigt profile in units of σ.
pub const TIED_FWHM_PER_SIGMA: f64 = 3.6013;

/// Below this σ/γ ratio the Voigt profile is evaluated as a pure Lorentzian.
const LORENTZ_BRANCH_RATIO: f64 = 1e-6;

const WEIDEMAN_N: usize = 32;
const CF_RADIUS_SQ: f64 = 64.0;
const CF_TERMS: usize = 14;

struct Weideman {
    l: f64,
    coeffs: [f64; WEIDEMAN_N],
}

fn weideman() -> &'static Weideman {
    static TABLE: OnceLock<Weideman> = OnceLock::new();
    TABLE.get_or_init(|| {
        // Weideman (1994) rational expansion; coefficients from a DFT of the
        // mapped integrand e^{-t^2}(L^2 + t^2) on 2M nodes.
        let n = WEIDEMAN_N;
        let m = 2 * n;
        let len = 2 * m;
        let l = (n as f64 / SQRT_2).sqrt();
        let mut f = vec![0.0; len];
        for (j, k) in (-(m as i64) + 1..m as i64).enumerate() {
            let theta = k as f64 * PI / m as f64;
            let t = l * (theta / 2.0).tan();
            f[j + 1] = (-t * t).exp() * (l * l + t * t);
        }
        // fftshift for an even-length buffer
        let shifted: Vec<f64> = (0..len).map(|j| f[(j + m) % len]).collect();
        let mut coeffs = [0.0; WEIDEMAN_N];
        for (slot, freq) in coeffs.iter_mut().zip(1..=n) {
            let re: f64 = shifted
                .iter()
                .enumerate()
                .map(|(j, v)| v * (2.0 * PI * (j * freq) as f64 / len as f64).cos())
                .sum();
            *slot = re / len as f64;
        }
        Weideman { l, coeffs }
    })
}

/// w(z) for Im z >= 0, no input checks.
#[inline]
pub(crate) fn faddeeva_upper(z: Complex64) -> Complex64 {
    if z.norm_sqr() >= CF_RADIUS_SQ {
        // Laplace continued fraction
        let mut t = Complex64::new(0.0, 0.0);
        for k in (1..=CF_TERMS).rev() {
            t = (k as f64 / 2.0) / (z - t);
        }
        return Complex64::new(0.0, FRAC_1_SQRT_PI) / (z - t);
    }
    let tab = weideman();
    let iz = Complex64::new(-z.im, z.re);
    let denom = tab.l - iz;
    let big_z = (tab.l + iz) / denom;
    let mut p = Complex64::new(0.0, 0.0);
    for &c in tab.coeffs.iter().rev() {
        p = p * big_z + c;
    }
    2.0 * p / (denom * denom) + FRAC_1_SQRT_PI / denom
}

/// The Faddeeva function w(z) = exp(-z²) erfc(-iz).
///
/// Relative error is below 1e-12 in the closed upper half-plane. The lower
/// half-plane is reached through w(z) = 2 exp(-z²) - w(-z) and overflows to
/// infinity once exp(-z²) does.
pub fn faddeeva(z: Complex64) -> Result<Complex64> {
    if !z.re.is_finite() || !z.im.is_finite() {
        return Err(Error::Domain(format!("faddeeva argument {z} is not finite")));
    }
    if z.im >= 0.0 {
        Ok(faddeeva_upper(z))
    } else {
        Ok(2.0 * (-z * z).exp() - faddeeva_upper(-z))
    }
}

/// Parameters of an area-normalised Voigt profile (frequencies in Hz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoigtParams {
    pub amplitude: f64,
    pub center: f64,
    pub sigma: f64,
    pub gamma: f64,
}

impl VoigtParams {
    pub fn new(amplitude: f64, center: f64, sigma: f64, gamma: f64) -> Result<Self> {
        let p = Self {
            amplitude,
            center,
            sigma,
            gamma,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.amplitude, self.center, self.sigma, self.gamma];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("voigt parameters must be finite"));
        }
        if self.sigma < 0.0 || self.gamma < 0.0 {
            return Err(Error::invalid("voigt widths must be non-negative"));
        }
        if self.sigma == 0.0 && self.gamma == 0.0 {
            return Err(Error::DegenerateProfile);
        }
        Ok(())
    }

    fn is_lorentzian(&self) -> bool {
        self.sigma < LORENTZ_BRANCH_RATIO * self.gamma
    }

    /// Profile value; parameters are assumed valid.
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        if self.is_lorentzian() {
            return self.amplitude * lorentzian_shape(x - self.center, self.gamma);
        }
        let s = self.sigma * SQRT_2;
        let z = Complex64::new((x - self.center) / s, self.gamma / s);
        self.amplitude * faddeeva_upper(z).re / (self.sigma * SQRT_2PI)
    }

    /// Value and gradient with respect to (amplitude, center, sigma, gamma).
    #[inline]
    pub fn value_and_grad(&self, x: f64) -> (f64, [f64; 4]) {
        let d = x - self.center;
        if self.is_lorentzian() {
            let g = self.gamma;
            let den = d * d + g * g;
            let shape = g / (PI * den);
            let a = self.amplitude;
            let d_center = a * 2.0 * g * d / (PI * den * den);
            let d_gamma = a * (den - 2.0 * g * g) / (PI * den * den);
            return (a * shape, [shape, d_center, 0.0, d_gamma]);
        }
        let sigma = self.sigma;
        let s = sigma * SQRT_2;
        let z = Complex64::new(d / s, self.gamma / s);
        let w = faddeeva_upper(z);
        let norm = 1.0 / (sigma * SQRT_2PI);
        let shape = w.re * norm;
        let a = self.amplitude;
        let f = a * shape;
        // dw = w'(z), h = w + z w'
        let (dw, h) = if z.norm_sqr() >= CF_RADIUS_SQ {
            // the closed forms below cancel catastrophically for large |z|
            asymptotic_derivatives(z)
        } else {
            let dw = -2.0 * z * w + Complex64::new(0.0, 2.0 * FRAC_1_SQRT_PI);
            (dw, w + z * dw)
        };
        let d_center = a * norm * (dw * Complex64::new(-1.0 / s, 0.0)).re;
        let d_gamma = a * norm * (dw * Complex64::new(0.0, 1.0 / s)).re;
        let d_sigma = -a * norm * h.re / sigma;
        (f, [shape, d_center, d_sigma, d_gamma])
    }

    pub fn fwhm(&self, mode: FwhmMode) -> Result<f64> {
        voigt_fwhm(self, mode)
    }
}

/// w'(z) and w(z) + z w'(z) from the asymptotic series
/// w(z) ~ (i/√π) Σ_k (2k-1)!!/2^k z^-(2k+1), differentiated term by term.
fn asymptotic_derivatives(z: Complex64) -> (Complex64, Complex64) {
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let mut pow = inv; // z^-(2k+1)
    let mut c = 1.0;
    let mut dw = Complex64::new(0.0, 0.0);
    let mut h = Complex64::new(0.0, 0.0);
    let mut last = f64::INFINITY;
    for k in 0..60 {
        if k > 0 {
            c *= (2 * k - 1) as f64 / 2.0;
            pow *= inv2;
        }
        let term = c * pow;
        let mag = term.norm_sqr();
        if mag > last {
            break;
        }
        last = mag;
        dw -= (2 * k + 1) as f64 * term * inv;
        h -= (2 * k) as f64 * term;
        if mag < 1e-36 * inv.norm_sqr() {
            break;
        }
    }
    let i_sqrt_pi = Complex64::new(0.0, FRAC_1_SQRT_PI);
    (i_sqrt_pi * dw, i_sqrt_pi * h)
}

#[inline]
fn lorentzian_shape(d: f64, gamma: f64) -> f64 {
    gamma / (PI * (d * d + gamma * gamma))
}

/// Voigt density scaled by the amplitude.
pub fn voigt_pdf(x: f64, p: &VoigtParams) -> Result<f64> {
    p.validate()?;
    if !x.is_finite() {
        return Err(Error::Domain("voigt_pdf abscissa is not finite".into()));
    }
    Ok(p.value(x))
}

/// Normal density with standard deviation `sigma`.
pub fn gaussian_pdf(x: f64, center: f64, sigma: f64) -> f64 {
    let u = (x - center) / sigma;
    (-0.5 * u * u).exp() / (sigma * SQRT_2PI)
}

/// Cauchy density with half-width `gamma`.
pub fn lorentzian_pdf(x: f64, center: f64, gamma: f64) -> f64 {
    lorentzian_shape(x - center, gamma)
}

/// Voigt FWHM conventions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FwhmMode {
    /// 3.6013 σ, valid only for the tied case γ = σ.
    Lmfit3p6013,
    /// Olivero–Longbothum empirical formula.
    Olivero,
    /// Half-maximum root found by bisection.
    Numeric,
}

pub fn voigt_fwhm(p: &VoigtParams, mode: FwhmMode) -> Result<f64> {
    if p.sigma < 0.0 || p.gamma < 0.0 || !p.sigma.is_finite() || !p.gamma.is_finite() {
        return Err(Error::invalid("voigt widths must be finite and non-negative"));
    }
    if p.sigma == 0.0 && p.gamma == 0.0 {
        return Err(Error::DegenerateProfile);
    }
    match mode {
        FwhmMode::Lmfit3p6013 => {
            let scale = p.sigma.max(p.gamma);
            if (p.sigma - p.gamma).abs() > 1e-12 * scale {
                return Err(Error::ModeMismatch(format!(
                    "3.6013σ rule needs γ = σ, got σ = {}, γ = {}",
                    p.sigma, p.gamma
                )));
            }
            Ok(TIED_FWHM_PER_SIGMA * p.sigma)
        }
        FwhmMode::Olivero => Ok(olivero_fwhm(p.sigma, p.gamma)),
        FwhmMode::Numeric => Ok(numeric_fwhm(p.sigma, p.gamma)),
    }
}

/// Olivero–Longbothum FWHM from the Gaussian σ and Lorentzian half-width γ.
pub fn olivero_fwhm(sigma: f64, gamma: f64) -> f64 {
    let fl = 2.0 * gamma;
    let fg = GAUSS_FWHM_PER_SIGMA * sigma;
    OLIVERO_A * fl + (OLIVERO_B * fl * fl + fg * fg).sqrt()
}

/// Partial derivatives of [`olivero_fwhm`] with respect to (σ, γ).
pub fn olivero_fwhm_grad(sigma: f64, gamma: f64) -> (f64, f64) {
    let fl = 2.0 * gamma;
    let fg = GAUSS_FWHM_PER_SIGMA * sigma;
    let root = (OLIVERO_B * fl * fl + fg * fg).sqrt();
    if root == 0.0 {
        return (GAUSS_FWHM_PER_SIGMA, 2.0 * (OLIVERO_A + OLIVERO_B.sqrt()));
    }
    let d_sigma = fg * GAUSS_FWHM_PER_SIGMA / root;
    let d_gamma = 2.0 * (OLIVERO_A + OLIVERO_B * fl / root);
    (d_sigma, d_gamma)
}

fn numeric_fwhm(sigma: f64, gamma: f64) -> f64 {
    let shape = VoigtParams {
        amplitude: 1.0,
        center: 0.0,
        sigma,
        gamma,
    };
    let half = 0.5 * shape.value(0.0);
    let mut lo = 0.0;
    let mut hi = 0.5 * olivero_fwhm(sigma, gamma);
    while shape.value(hi) > half {
        lo = hi;
        hi *= 2.0;
    }
    // relative bracket of 1e-12 on the half width
    while hi - lo > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        if shape.value(mid) > half {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo + hi
}

/// erfc(x) for real x through the Faddeeva function.
pub fn erfc(x: f64) -> f64 {
    if x >= 0.0 {
        (-x * x).exp() * faddeeva_upper(Complex64::new(0.0, x)).re
    } else {
        2.0 - erfc(-x)
    }
}

/// Standard normal cumulative distribution.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn faddeeva_at_origin_is_one() {
        let w = faddeeva(c(0.0, 0.0)).unwrap();
        assert!((w.re - 1.0).abs() < 1e-13 && w.im.abs() < 1e-15);
    }

    #[test]
    fn faddeeva_on_imaginary_axis_matches_scaled_erfc() {
        // e * erfc(1), erfc from its own series in the oracle below
        let w = faddeeva(c(0.0, 1.0)).unwrap();
        assert!((w.re - 0.427_583_576_155_807).abs() < 1e-12);
        assert!(w.im.abs() < 1e-14);
    }

    #[test]
    fn faddeeva_imag_part_is_odd_on_real_axis() {
        let a = faddeeva(c(1.0, 0.0)).unwrap();
        let b = faddeeva(c(-1.0, 0.0)).unwrap();
        assert!((a.im + b.im).abs() < 1e-15);
        assert!((a.re - b.re).abs() < 1e-15);
    }

    #[test]
    fn faddeeva_rejects_non_finite() {
        assert!(matches!(faddeeva(c(f64::NAN, 0.0)), Err(Error::Domain(_))));
        assert!(matches!(faddeeva(c(0.0, f64::INFINITY)), Err(Error::Domain(_))));
    }

    #[test]
    fn faddeeva_lower_half_plane_reflection() {
        // w(-i) = 2 e - w(i)... e^{1}·erfc(-1) = e (2 - erfc(1))
        let w = faddeeva(c(0.0, -1.0)).unwrap();
        let expected = std::f64::consts::E * (2.0 - 0.157_299_207_050_285_13);
        assert!((w.re - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn voigt_gaussian_limit_peak() {
        let p = VoigtParams::new(2.0, 5.0, 3.0, 0.0).unwrap();
        let expected = 2.0 / (3.0 * SQRT_2PI);
        assert!((voigt_pdf(5.0, &p).unwrap() - expected).abs() < 1e-13 * expected);
    }

    #[test]
    fn voigt_lorentzian_branch() {
        let p = VoigtParams::new(1.5, 0.0, 0.0, 7.0).unwrap();
        for x in [0.0, 3.0, -20.0] {
            let expected = 1.5 * (7.0 / PI) / (x * x + 49.0);
            assert!((voigt_pdf(x, &p).unwrap() - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn voigt_degenerate_rejected() {
        let p = VoigtParams {
            amplitude: 1.0,
            center: 0.0,
            sigma: 0.0,
            gamma: 0.0,
        };
        assert!(matches!(voigt_pdf(0.0, &p), Err(Error::DegenerateProfile)));
        assert!(matches!(VoigtParams::new(1.0, 0.0, 0.0, 0.0), Err(Error::DegenerateProfile)));
    }

    #[test]
    fn voigt_gradient_matches_finite_differences() {
        let p = VoigtParams::new(3.0, 1.0, 2.0, 1.5).unwrap();
        for x in [-4.0, 0.3, 1.0, 2.7, 9.0] {
            let (_, g) = p.value_and_grad(x);
            let h = 1e-6;
            let mut arr = [p.amplitude, p.center, p.sigma, p.gamma];
            for i in 0..4 {
                let orig = arr[i];
                arr[i] = orig + h;
                let up = VoigtParams { amplitude: arr[0], center: arr[1], sigma: arr[2], gamma: arr[3] }.value(x);
                arr[i] = orig - h;
                let dn = VoigtParams { amplitude: arr[0], center: arr[1], sigma: arr[2], gamma: arr[3] }.value(x);
                arr[i] = orig;
                let fd = (up - dn) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-7, "param {i} at x={x}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn sigma_derivative_in_the_lorentzian_regime() {
        // heat-equation identity ∂f/∂σ = σ ∂²f/∂x², with the Lorentzian
        // second derivative standing in for ∂²f/∂x² when σ ≪ γ
        let (a, g, sigma) = (2.0, 1.0, 1e-4);
        let p = VoigtParams::new(a, 0.0, sigma, g).unwrap();
        for x in [0.0, 0.4, 1.3, 5.0] {
            let l2 = a * g / PI * (6.0 * x * x - 2.0 * g * g) / (x * x + g * g).powi(3);
            let (_, grad) = p.value_and_grad(x);
            assert!((grad[2] - sigma * l2).abs() < 1e-6 * (sigma * l2).abs(), "x={x}");
        }
        // moderate |z| inside the asymptotic region against finite differences
        let p = VoigtParams::new(1.0, 0.0, 0.2, 3.0).unwrap();
        for x in [-2.0, 0.0, 4.0] {
            let h = 1e-5;
            let up = VoigtParams { sigma: 0.2 + h, ..p }.value(x);
            let dn = VoigtParams { sigma: 0.2 - h, ..p }.value(x);
            let (_, grad) = p.value_and_grad(x);
            assert!(((up - dn) / (2.0 * h) - grad[2]).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn fwhm_limits() {
        let mhz = 1e6;
        let g = VoigtParams::new(1.0, 0.0, 1.0 * mhz, 0.0).unwrap();
        let f = voigt_fwhm(&g, FwhmMode::Numeric).unwrap();
        assert!((f / mhz - 2.354_820_045).abs() < 1e-8);

        let l = VoigtParams::new(1.0, 0.0, 0.0, 7.0 * mhz).unwrap();
        let f = voigt_fwhm(&l, FwhmMode::Numeric).unwrap();
        assert!((f / mhz - 14.0).abs() < 1e-8);
    }

    #[test]
    fn fwhm_tied_rule_requires_tie() {
        let tied = VoigtParams::new(1.0, 0.0, 2.0, 2.0).unwrap();
        assert!((voigt_fwhm(&tied, FwhmMode::Lmfit3p6013).unwrap() - 7.2026).abs() < 1e-12);
        let untied = VoigtParams::new(1.0, 0.0, 2.0, 1.0).unwrap();
        assert!(matches!(
            voigt_fwhm(&untied, FwhmMode::Lmfit3p6013),
            Err(Error::ModeMismatch(_))
        ));
    }

    #[test]
    fn tied_rule_is_close_to_numeric() {
        let tied = VoigtParams::new(1.0, 0.0, 1.0, 1.0).unwrap();
        let numeric = voigt_fwhm(&tied, FwhmMode::Numeric).unwrap();
        assert!((numeric - 3.6013).abs() < 1e-3);
    }

    #[test]
    fn olivero_gradient_matches_finite_differences() {
        let (ds, dg) = olivero_fwhm_grad(3.0, 2.0);
        let h = 1e-6;
        let fs = (olivero_fwhm(3.0 + h, 2.0) - olivero_fwhm(3.0 - h, 2.0)) / (2.0 * h);
        let fg = (olivero_fwhm(3.0, 2.0 + h) - olivero_fwhm(3.0, 2.0 - h)) / (2.0 * h);
        assert!((ds - fs).abs() < 1e-7 && (dg - fg).abs() < 1e-7);
    }

    #[test]
    fn erfc_and_normal_cdf() {
        assert!((erfc(1.0) - 0.157_299_207_050_285_13).abs() < 1e-15);
        assert!((erfc(-0.5) - 1.520_499_877_813_046_5).abs() < 1e-14);
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-13);
        assert!((normal_cdf(1.96) - 0.975_002_104_851_780).abs() < 1e-12);
    }
}
