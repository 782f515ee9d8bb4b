//! Spectra built from many Lorentzian lines, as used for ensemble and
//! charge-noise broadening.

use crate::error::{Error, Result};
use crate::fitkit::{self, InitStrategy, VoigtFit, VoigtFitOptions};

/// Bin centers from `lo` to at least `hi` with spacing `pitch`.
pub fn uniform_grid(lo: f64, hi: f64, pitch: f64) -> Vec<f64> {
    let n = ((hi - lo) / pitch).ceil().max(0.0) as usize + 1;
    (0..n).map(|k| lo + k as f64 * pitch).collect()
}

/// Sum of unit-area Lorentzians of full width `fwhm` at `centers`, expressed
/// as lines per bin of width `pitch`.
pub fn lorentzian_sum(centers: &[f64], fwhm: f64, grid: &[f64], pitch: f64) -> Vec<f64> {
    let hw = 0.5 * fwhm;
    let scale = pitch * hw / std::f64::consts::PI;
    grid.iter()
        .map(|&x| {
            centers
                .iter()
                .map(|&c| {
                    let d = x - c;
                    scale / (d * d + hw * hw)
                })
                .sum()
        })
        .collect()
}

/// Grid spanning the line centers with `margin` on either side.
pub fn covering_grid(centers: &[f64], margin: f64, pitch: f64) -> Result<Vec<f64>> {
    if centers.is_empty() {
        return Err(Error::invalid("no line centers"));
    }
    let lo = centers.iter().cloned().fold(f64::INFINITY, f64::min) - margin;
    let hi = centers.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + margin;
    Ok(uniform_grid(lo, hi, pitch))
}

/// Voigt fit of a multi-line spectrum, started from its moments.
pub fn fit_ensemble_spectrum(grid: &[f64], y: &[f64]) -> Result<VoigtFit> {
    fitkit::fit_voigt(
        grid,
        y,
        &VoigtFitOptions {
            init: InitStrategy::Moments,
            ..VoigtFitOptions::default()
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::MHZ;

    #[test]
    fn single_line_fit_recovers_width() {
        let grid = covering_grid(&[0.0], 25.0 * 60.0 * MHZ, 4.0 * MHZ).unwrap();
        let y = lorentzian_sum(&[0.0], 60.0 * MHZ, &grid, 4.0 * MHZ);
        let total: f64 = y.iter().sum();
        // tails beyond ±25 FWHM hold 2·atan(1/50)/π ≈ 1.3% of the area
        assert!((total - (1.0 - 0.0127)).abs() < 1e-3);
        let f = fit_ensemble_spectrum(&grid, &y).unwrap();
        assert!(f.fit.converged);
        assert!((f.fwhm - 60.0 * MHZ).abs() < 1e-4 * 60.0 * MHZ);
    }
}
