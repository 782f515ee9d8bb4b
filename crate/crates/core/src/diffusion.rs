//! Stochastic spectral-diffusion models.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitkit::WeightedValue;
use crate::par::Exec;
use crate::ple::{Trajectory, TrajectoryEntry};
use crate::rng::{self, domain};
use crate::spectrum;
use crate::stats::{self, KsReport};
use crate::units::MHZ;

/// SDR quoted alongside η for 5 nW excitation and τ = 2.3 s.
pub const REFERENCE_ETA_SDR: f64 = 75.35 * MHZ;

/// ω(t + τ) = ω(t) + σ Z √τ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WienerSpec {
    /// Diffusion strength (Hz·s^-1/2).
    pub sigma: f64,
    /// Time step (s).
    pub tau: f64,
    pub n_steps: usize,
    /// Initial frequency (Hz).
    pub omega0: f64,
}

impl WienerSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::invalid("tau must be positive"));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid("sigma must be finite and non-negative"));
        }
        Ok(())
    }

    /// σ that produces a given SDR at this τ.
    pub fn sigma_for_sdr(sdr: f64, tau: f64) -> f64 {
        sdr * (PI * tau / 2.0).sqrt()
    }
}

fn unit_weight(v: f64) -> WeightedValue {
    WeightedValue {
        value: v,
        variance: 1.0,
    }
}

fn to_trajectory(omegas: Vec<f64>, tau: f64) -> Trajectory {
    let entries = omegas
        .into_iter()
        .enumerate()
        .map(|(k, w)| TrajectoryEntry {
            t: k as f64 * tau,
            center: unit_weight(w),
            fwhm: None,
            scan_id: k as u64,
        })
        .collect();
    Trajectory { entries, tau }
}

/// A Wiener trajectory of `n_steps` increments (n_steps + 1 points).
/// Centers carry unit variance so SDR averaging weights steps equally.
pub fn wiener_trajectory(spec: &WienerSpec, seed: u64) -> Result<Trajectory> {
    ou_trajectory(spec, 0.0, seed)
}

/// Ornstein–Uhlenbeck trajectory reverting to `omega0`, updated with the
/// exact discretisation. `reversion_rate = 0` gives the Wiener trajectory
/// drawn from the same stream.
pub fn ou_trajectory(spec: &WienerSpec, reversion_rate: f64, seed: u64) -> Result<Trajectory> {
    spec.validate()?;
    if !(reversion_rate >= 0.0) {
        return Err(Error::invalid("reversion rate must be non-negative"));
    }
    let (decay, step_sd) = if reversion_rate == 0.0 {
        (1.0, spec.sigma * spec.tau.sqrt())
    } else {
        let x = reversion_rate * spec.tau;
        let var = -(-2.0 * x).exp_m1() / (2.0 * reversion_rate);
        ((-x).exp(), spec.sigma * var.sqrt())
    };
    let mut rng = rng::stream(seed, domain::WIENER, 0);
    let mut omegas = Vec::with_capacity(spec.n_steps + 1);
    let mut w = spec.omega0;
    omegas.push(w);
    for _ in 0..spec.n_steps {
        let z: f64 = rng.sample(StandardNormal);
        w = spec.omega0 + (w - spec.omega0) * decay + step_sd * z;
        omegas.push(w);
    }
    Ok(to_trajectory(omegas, spec.tau))
}

/// Γ_SDR = σ √(2/(πτ)).
pub fn sdr_analytic(sigma: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::invalid("tau must be positive"));
    }
    Ok(sigma * (2.0 / (PI * tau)).sqrt())
}

/// Diffusion driven by excitation intensity through σ = √(η I).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityCoupling {
    /// Proportionality constant η (Hz² s per W at fixed τ and laser frequency).
    pub eta: f64,
    /// Excitation power I (W).
    pub excitation_power: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensitySdr {
    pub sigma: f64,
    pub sdr: f64,
}

pub fn sdr_from_intensity(c: &IntensityCoupling, tau: f64) -> Result<IntensitySdr> {
    if !(c.eta >= 0.0) || !(c.excitation_power >= 0.0) {
        return Err(Error::invalid("eta and power must be non-negative"));
    }
    let sigma = (c.eta * c.excitation_power).sqrt();
    Ok(IntensitySdr {
        sigma,
        sdr: sdr_analytic(sigma, tau)?,
    })
}

/// Computed SDR divided by the reference value quoted with η.
pub fn eta_reference_ratio(c: &IntensityCoupling, tau: f64) -> Result<f64> {
    Ok(sdr_from_intensity(c, tau)?.sdr / REFERENCE_ETA_SDR)
}

/// Mean |Δω|/τ of a trajectory with equal weights.
pub fn empirical_sdr(traj: &Trajectory) -> Result<f64> {
    let w = traj.centers();
    if w.len() < 2 {
        return Err(Error::InsufficientData("need at least two points".into()));
    }
    let mean_abs = w.windows(2).map(|p| (p[1] - p[0]).abs()).sum::<f64>() / (w.len() - 1) as f64;
    Ok(mean_abs / traj.tau)
}

/// Kolmogorov–Smirnov test of the increments Δω/τ against N(0, σ/√τ).
pub fn sdr_distribution_check(traj: &Trajectory, sigma: f64, tau: f64) -> Result<KsReport> {
    if !(sigma > 0.0) || !(tau > 0.0) {
        return Err(Error::invalid("sigma and tau must be positive"));
    }
    let w = traj.centers();
    if w.len() < 101 {
        return Err(Error::InsufficientData(format!(
            "{} increments; at least 100 required",
            w.len().saturating_sub(1)
        )));
    }
    let scale = sigma / tau.sqrt();
    let z: Vec<f64> = w.windows(2).map(|p| (p[1] - p[0]) / tau).collect();
    stats::ks_test(&z, |v| stats_cdf(v / scale))
}

fn stats_cdf(x: f64) -> f64 {
    crate::specfun::normal_cdf(x)
}

/// Settings for the trajectory-ensemble linewidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub n_lines: usize,
    /// Width of each Lorentzian line (Hz).
    pub line_fwhm: f64,
    pub n_ensembles: usize,
    /// Fit every k-th time step (k ≥ 1); step 0 is always included.
    pub record_every: usize,
    /// Spectrum bin width (Hz).
    pub pitch: f64,
    /// Grid margin beyond the outermost line, in line widths.
    pub margin_fwhms: f64,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            n_lines: 14,
            line_fwhm: 60.0 * MHZ,
            n_ensembles: 100,
            record_every: 1,
            pitch: 4.0 * MHZ,
            margin_fwhms: 25.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub t: Vec<f64>,
    pub mean_fwhm: Vec<f64>,
    pub std_fwhm: Vec<f64>,
    /// Successful fits per time point.
    pub n_ok: Vec<usize>,
    /// Failed fits over all time points.
    pub dropped: usize,
}

/// Snapshot linewidth of `n_lines` Lorentzians riding on independent Wiener
/// trajectories, averaged over `n_ensembles` groups.
pub fn ensemble_inhomogeneous(spec: &WienerSpec, ens: &EnsembleSpec, seed: u64, exec: Exec) -> Result<EnsembleResult> {
    spec.validate()?;
    if ens.n_lines < 2 {
        return Err(Error::invalid("an ensemble needs at least two lines"));
    }
    if ens.n_ensembles == 0 || ens.record_every == 0 || !(ens.line_fwhm > 0.0) || !(ens.pitch > 0.0) {
        return Err(Error::invalid("ensemble count, record stride, width and pitch must be positive"));
    }
    let recorded: Vec<usize> = (0..=spec.n_steps).step_by(ens.record_every).collect();
    let step_sd = spec.sigma * spec.tau.sqrt();
    let margin = ens.margin_fwhms * ens.line_fwhm;

    let per_ensemble: Vec<Vec<Option<f64>>> = exec.map(ens.n_ensembles, |e| {
        let mut rngs: Vec<_> = (0..ens.n_lines)
            .map(|l| rng::stream(seed, domain::ENSEMBLE, (e * ens.n_lines + l) as u64))
            .collect();
        let mut omegas = vec![spec.omega0; ens.n_lines];
        let mut out = Vec::with_capacity(recorded.len());
        let mut next = 0;
        for k in 0..=spec.n_steps {
            if k > 0 {
                for (w, r) in omegas.iter_mut().zip(rngs.iter_mut()) {
                    let z: f64 = r.sample(StandardNormal);
                    *w += step_sd * z;
                }
            }
            if next < recorded.len() && recorded[next] == k {
                next += 1;
                out.push(snapshot_fwhm(&omegas, ens.line_fwhm, margin, ens.pitch));
            }
        }
        out
    });

    let mut result = EnsembleResult {
        t: recorded.iter().map(|&k| k as f64 * spec.tau).collect(),
        mean_fwhm: Vec::with_capacity(recorded.len()),
        std_fwhm: Vec::with_capacity(recorded.len()),
        n_ok: Vec::with_capacity(recorded.len()),
        dropped: 0,
    };
    for j in 0..recorded.len() {
        let ok: Vec<f64> = per_ensemble.iter().filter_map(|v| v[j]).collect();
        result.dropped += ens.n_ensembles - ok.len();
        result.n_ok.push(ok.len());
        match ok.len() {
            0 => {
                result.mean_fwhm.push(f64::NAN);
                result.std_fwhm.push(f64::NAN);
            }
            1 => {
                result.mean_fwhm.push(ok[0]);
                result.std_fwhm.push(0.0);
            }
            _ => {
                result.mean_fwhm.push(stats::mean(&ok));
                result.std_fwhm.push(stats::std_dev(&ok));
            }
        }
    }
    Ok(result)
}

fn snapshot_fwhm(centers: &[f64], line_fwhm: f64, margin: f64, pitch: f64) -> Option<f64> {
    // grid anchored to the first line so a common offset moves the grid with it
    let lo = centers.iter().cloned().fold(f64::INFINITY, f64::min) - margin;
    let hi = centers.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + margin;
    let grid = spectrum::uniform_grid(lo, hi, pitch);
    let y = spectrum::lorentzian_sum(centers, line_fwhm, &grid, pitch);
    let fit = spectrum::fit_ensemble_spectrum(&grid, &y).ok()?;
    fit.fit.converged.then_some(fit.fwhm)
}

/// Power-law exponent of the mean FWHM over recorded times t ≥ `t_min`.
pub fn late_time_exponent(r: &EnsembleResult, t_min: f64) -> Result<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = r
        .t
        .iter()
        .zip(&r.mean_fwhm)
        .filter(|(t, f)| **t >= t_min && **t > 0.0 && f.is_finite())
        .map(|(t, f)| (*t, *f))
        .unzip();
    if x.len() < 3 {
        return Err(Error::InsufficientData("fewer than three late-time points".into()));
    }
    let fit = crate::fitkit::fit_power_law(&x, &y, false)?;
    fit.get("a")
        .ok_or_else(|| Error::Numerical("power-law fit has no exponent".into()))
}

#[derive(Debug, Serialize)]
struct TrajectoryRow {
    step: usize,
    t_s: f64,
    #[serde(rename = "omega_MHz")]
    omega_mhz: f64,
}

pub fn write_trajectory<W: std::io::Write>(writer: W, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for (k, e) in traj.entries.iter().enumerate() {
        w.serialize(TrajectoryRow {
            step: k,
            t_s: e.t,
            omega_mhz: e.center.value / MHZ,
        })
        .map_err(|e| Error::Numerical(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct EnsembleRow {
    t_s: f64,
    #[serde(rename = "mean_fwhm_MHz")]
    mean_fwhm_mhz: f64,
    #[serde(rename = "std_fwhm_MHz")]
    std_fwhm_mhz: f64,
    n_ok: usize,
}

pub fn write_ensemble<W: std::io::Write>(writer: W, r: &EnsembleResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for j in 0..r.t.len() {
        w.serialize(EnsembleRow {
            t_s: r.t[j],
            mean_fwhm_mhz: r.mean_fwhm[j] / MHZ,
            std_fwhm_mhz: r.std_fwhm[j] / MHZ,
            n_ok: r.n_ok[j],
        })
        .map_err(|e| Error::Numerical(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(sigma: f64, n: usize) -> WienerSpec {
        WienerSpec {
            sigma,
            tau: 1.0,
            n_steps: n,
            omega0: 3.0 * MHZ,
        }
    }

    #[test]
    fn zero_sigma_is_constant() {
        let t = wiener_trajectory(&spec(0.0, 50), 1).unwrap();
        assert_eq!(t.len(), 51);
        assert!(t.centers().iter().all(|&w| w == 3.0 * MHZ));
    }

    #[test]
    fn analytic_values() {
        assert!((sdr_analytic(100.0 * MHZ, 1.0).unwrap() - 79.788_456 * MHZ).abs() < 1.0);
        assert!(sdr_analytic(1.0, 0.0).is_err());
        let a = sdr_analytic(3.0, 2.0).unwrap();
        assert!((sdr_analytic(6.0, 2.0).unwrap() - 2.0 * a).abs() < 1e-15);
    }

    #[test]
    fn intensity_scaling() {
        let c = IntensityCoupling {
            eta: 3.41e24,
            excitation_power: 5e-9,
        };
        let one = sdr_from_intensity(&c, 2.3).unwrap();
        let four = sdr_from_intensity(
            &IntensityCoupling {
                excitation_power: 20e-9,
                ..c
            },
            2.3,
        )
        .unwrap();
        assert!((four.sdr - 2.0 * one.sdr).abs() < 1e-6 * one.sdr);
        let zero = sdr_from_intensity(&IntensityCoupling { excitation_power: 0.0, ..c }, 2.3).unwrap();
        assert_eq!(zero.sdr, 0.0);
        // sqrt(2·5e-9·3.41e24/(π·2.3)) = 68.70 MHz/s
        assert!((one.sdr / MHZ - 68.70).abs() < 0.01);
        let ratio = eta_reference_ratio(&c, 2.3).unwrap();
        assert!((ratio - 0.9118).abs() < 1e-3);
    }

    #[test]
    fn ou_zero_rate_matches_wiener() {
        let s = spec(2.0 * MHZ, 200);
        assert_eq!(wiener_trajectory(&s, 9).unwrap(), ou_trajectory(&s, 0.0, 9).unwrap());
    }

    #[test]
    fn ou_stays_bounded() {
        let s = spec(1.0 * MHZ, 20_000);
        let ou = ou_trajectory(&s, 5.0, 4).unwrap();
        let w = wiener_trajectory(&s, 4).unwrap();
        let spread = |t: &Trajectory| stats::std_dev(&t.centers());
        assert!(spread(&ou) < 0.1 * spread(&w));
    }

    #[test]
    fn ramp_fails_distribution_check() {
        let t = to_trajectory((0..1000).map(|k| k as f64 * 1e6).collect(), 1.0);
        let r = sdr_distribution_check(&t, 1e6, 1.0).unwrap();
        assert!(r.p_value < 1e-6);
        let short = to_trajectory(vec![0.0; 50], 1.0);
        assert!(matches!(sdr_distribution_check(&short, 1.0, 1.0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn ensemble_first_step_is_single_line() {
        let s = WienerSpec {
            sigma: 40.0 * MHZ,
            tau: 0.8,
            n_steps: 3,
            omega0: 0.0,
        };
        let ens = EnsembleSpec {
            n_ensembles: 3,
            ..EnsembleSpec::default()
        };
        let r = ensemble_inhomogeneous(&s, &ens, 1, Exec::Sequential).unwrap();
        assert!((r.mean_fwhm[0] - 60.0 * MHZ).abs() < 1e-3 * 60.0 * MHZ);
        assert!(r.mean_fwhm[3] > r.mean_fwhm[0]);
        let shifted = ensemble_inhomogeneous(&WienerSpec { omega0: 2.5e9, ..s }, &ens, 1, Exec::Sequential).unwrap();
        for (a, b) in r.mean_fwhm.iter().zip(&shifted.mean_fwhm) {
            assert!((a - b).abs() < 1e-5 * a);
        }
    }
}
