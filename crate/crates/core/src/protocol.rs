//! Entanglement-attempt budget for a pulsed protocol on a diffusing line.
//!
//! Between spectral re-alignments the emitter is driven with π-pulses.
//! Diffusion only acts while the laser is on, so the number of pulses that
//! fit before the line broadens by a fraction p follows from the diffusion
//! rate, the homogeneous width and the pulse length.

use std::f64::consts::{LN_2, PI};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{KHZ, MHZ, MS, NS, NW, US};

/// Voigt-width approximation constants used for the broadening budget.
pub const BROADENING_A: f64 = 0.5346;
pub const BROADENING_B: f64 = 0.2166;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmitterParams {
    /// Natural linewidth γ₀ (FWHM, Hz).
    pub natural_linewidth: f64,
    /// Excited-state lifetime τ_l (s).
    pub lifetime: f64,
    pub p_sat: f64,
    /// Purcell factor F ≥ 1.
    pub purcell: f64,
}

impl Default for EmitterParams {
    fn default() -> Self {
        Self {
            natural_linewidth: 14.2 * MHZ,
            lifetime: 11.2 * NS,
            p_sat: 5.0 * NW,
            purcell: 1.0,
        }
    }
}

impl EmitterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.natural_linewidth > 0.0) || !(self.lifetime > 0.0) || !(self.p_sat >= 0.0) {
            return Err(Error::invalid("linewidth and lifetime must be positive, P_sat non-negative"));
        }
        if !(self.purcell >= 1.0) || !self.purcell.is_finite() {
            return Err(Error::invalid("Purcell factor must be a finite value of at least 1"));
        }
        Ok(())
    }

    /// Homogeneous width σ_h = F·γ₀.
    pub fn homogeneous_width(&self) -> f64 {
        self.purcell * self.natural_linewidth
    }
}

/// Lifetime-limited lifetime for a FWHM linewidth, τ = 1/(2πγ).
pub fn lifetime_from_linewidth(linewidth: f64) -> f64 {
    1.0 / (2.0 * PI * linewidth)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolTiming {
    pub t_pi: f64,
    pub pulse_separation: f64,
    /// Spectral re-alignment time.
    pub t_spec_ctrl: f64,
    /// Re-initialization after ionization.
    pub t_init: f64,
    /// Ionization time under pulsed driving.
    pub t_ion: f64,
    /// Diffusion rate Γ under pulsed driving (Hz/s).
    pub sdr_pulse: f64,
    /// Reference time τ of the diffusion rate (s).
    pub tau_ref: f64,
    /// Allowed fractional broadening.
    pub p_broadening: f64,
}

impl Default for ProtocolTiming {
    fn default() -> Self {
        Self {
            t_pi: 2.0 * NS,
            pulse_separation: 2.0 * US,
            t_spec_ctrl: 5.0 * MS,
            t_init: 60.0 * MS,
            t_ion: 545.4 * MS,
            sdr_pulse: 640.0 * MHZ,
            tau_ref: 2.3,
            p_broadening: 0.01,
        }
    }
}

impl ProtocolTiming {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            self.t_pi,
            self.pulse_separation,
            self.t_spec_ctrl,
            self.t_init,
            self.sdr_pulse,
            self.tau_ref,
        ];
        if pos.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || !(self.t_ion >= 0.0) {
            return Err(Error::invalid("protocol times and rates must be positive"));
        }
        if !(self.p_broadening > 0.0 && self.p_broadening < 1.0) {
            return Err(Error::invalid("broadening fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// P_π = 2 (π τ_l / T_π)² P_sat.
pub fn pi_pulse_power(e: &EmitterParams, t_pi: f64) -> Result<f64> {
    if !(t_pi > 0.0) {
        return Err(Error::invalid("pulse duration must be positive"));
    }
    Ok(2.0 * (PI * e.lifetime / t_pi).powi(2) * e.p_sat)
}

pub fn average_pulse_power(p_pi: f64, t_pi: f64, rep_rate: f64) -> Result<f64> {
    let duty = t_pi * rep_rate;
    if !(duty >= 0.0) || duty > 1.0 {
        return Err(Error::Infeasible(format!("pulse duty cycle {duty} is outside [0, 1]")));
    }
    Ok(p_pi * duty)
}

/// Ionization time under continuous driving from one measured at `duty`.
pub fn cw_ionization_time(t_ion_ple: f64, duty: f64) -> Result<f64> {
    if !(duty > 0.0 && duty <= 1.0) {
        return Err(Error::invalid("duty cycle must lie in (0, 1]"));
    }
    Ok(t_ion_ple * duty)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BroadeningBudget {
    /// Driven time until the line broadens by p (s).
    pub t_p: f64,
    /// π-pulses that fit into t_p.
    pub n_p: u64,
}

/// t_p = ((1 + p − a)² − b) σ_h² / (4π ln2 Γ² τ), n_p = t_p / T_π rounded to nearest.
pub fn attempts_until_broadening(e: &EmitterParams, t: &ProtocolTiming) -> Result<BroadeningBudget> {
    e.validate()?;
    t.validate()?;
    let num = (1.0 + t.p_broadening - BROADENING_A).powi(2) - BROADENING_B;
    if !(num > 0.0) {
        return Err(Error::Infeasible(format!(
            "broadening fraction {} is too small for a positive budget",
            t.p_broadening
        )));
    }
    let sh = e.homogeneous_width();
    let t_p = num * sh * sh / (4.0 * PI * LN_2 * t.sdr_pulse * t.sdr_pulse * t.tau_ref);
    Ok(BroadeningBudget {
        t_p,
        n_p: (t_p / t.t_pi).round() as u64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttemptRate {
    pub n_p: u64,
    /// Attempts per ionization time.
    pub n_ion: f64,
    /// Attempts per second including re-initialization.
    pub rate: f64,
}

/// n_ion = n_p t_ion / (n_p Δt + t_SpecCtrl), rate = n_ion / (t_ion + t_init).
pub fn attempt_rate(e: &EmitterParams, t: &ProtocolTiming) -> Result<AttemptRate> {
    let b = attempts_until_broadening(e, t)?;
    let n_p = b.n_p as f64;
    let n_ion = n_p * t.t_ion / (n_p * t.pulse_separation + t.t_spec_ctrl);
    Ok(AttemptRate {
        n_p: b.n_p,
        n_ion,
        rate: n_ion / (t.t_ion + t.t_init),
    })
}

/// Rate when every pulse slot is used: (t_ion / Δt) / (t_ion + t_init).
pub fn rate_ceiling(t: &ProtocolTiming) -> f64 {
    (t.t_ion / t.pulse_separation) / (t.t_ion + t.t_init)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub purcell: f64,
    pub p: f64,
    pub t_p: f64,
    pub n_p: u64,
    pub n_ion: f64,
    pub rate: f64,
}

/// Budget and rate for every (F, p) pair, F-major.
pub fn purcell_sweep(e: &EmitterParams, t: &ProtocolTiming, factors: &[f64], p_values: &[f64]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(factors.len() * p_values.len());
    for &f in factors {
        for &p in p_values {
            let ep = EmitterParams { purcell: f, ..*e };
            let tp = ProtocolTiming {
                p_broadening: p,
                ..*t
            };
            let b = attempts_until_broadening(&ep, &tp)?;
            let r = attempt_rate(&ep, &tp)?;
            rows.push(SweepRow {
                purcell: f,
                p,
                t_p: b.t_p,
                n_p: b.n_p,
                n_ion: r.n_ion,
                rate: r.rate,
            });
        }
    }
    Ok(rows)
}

/// CSV: purcell, p_percent, t_p_s, n_p, n_ion, rate_kHz.
pub fn write_sweep<W: Write>(writer: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["purcell", "p_percent", "t_p_s", "n_p", "n_ion", "rate_kHz"])
        .map_err(err)?;
    for r in rows {
        w.write_record([
            r.purcell.to_string(),
            (r.p * 100.0).to_string(),
            r.t_p.to_string(),
            r.n_p.to_string(),
            r.n_ion.to_string(),
            (r.rate / KHZ).to_string(),
        ])
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}
