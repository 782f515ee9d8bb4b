//! Monte Carlo over fluctuating charge configurations in a pillar.
//!
//! Traps are placed once per layout. Each realization occupies a random
//! subset of traps with equal numbers of +1 and −1 charges, and the field
//! at the emitter becomes a Stark shift. The shifts are the centers of
//! lifetime-limited Lorentzians whose sum is fitted with a Voigt profile.
//!
//! Every trap's field per unit charge is computed once, so a realization
//! is a signed sum over its occupied traps.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cylfield::{
    self, Branch, CorrectionTable, PillarGeometry, PointCharge, StarkCoupling, Vec3,
};
use crate::error::{Error, Result};
use crate::fitkit;
use crate::par::Exec;
use crate::rng::{self, domain};
use crate::spectrum;
use crate::stats;
use crate::units::MHZ;

/// Bulk traps in the default pillar at 1 ppm.
pub const TRAPS_PER_PPM_DEFAULT: f64 = 13_800.0;
/// Lateral-surface traps in the default pillar.
pub const DEFAULT_SURFACE_TRAPS: usize = 6000;
/// Lifetime-limited line (FWHM).
pub const DEFAULT_LINE_FWHM: f64 = 14.0 * MHZ;
pub const SPECTRUM_PITCH: f64 = 4.0 * MHZ;
/// Half-width of the spectrum window in robust standard deviations.
pub const SPAN_SIGMAS: f64 = 6.0;
/// Minimum half-width of the spectrum window in line widths.
pub const SPAN_FLOOR_LINEWIDTHS: f64 = 20.0;
/// Calibration anchors: inhomogeneous FWHM and diffusion rate at 2000 bulk charges.
pub const ANCHOR_FWHM: f64 = 5.0e9;
pub const ANCHOR_SDR: f64 = 1730.0 * MHZ;
pub const ANCHOR_CHARGES: usize = 2000;

/// Trap position in cylindrical coordinates relative to the emitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trap {
    pub rho: f64,
    pub phi: f64,
    pub z: f64,
}

/// Inputs that determine a layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutSpec {
    pub geometry: PillarGeometry,
    pub bulk_density_ppm: f64,
    pub n_surface: usize,
    pub seed: u64,
}

impl Default for LayoutSpec {
    fn default() -> Self {
        Self {
            geometry: PillarGeometry::default(),
            bulk_density_ppm: 1.0,
            n_surface: DEFAULT_SURFACE_TRAPS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapLayout {
    pub bulk: Vec<Trap>,
    pub surface: Vec<Trap>,
    pub geometry: PillarGeometry,
    pub seed: u64,
}

impl TrapLayout {
    pub fn n_traps(&self) -> usize {
        self.bulk.len() + self.surface.len()
    }

    /// Trap `i` of the combined list (bulk first).
    pub fn trap(&self, i: usize) -> Trap {
        if i < self.bulk.len() {
            self.bulk[i]
        } else {
            self.surface[i - self.bulk.len()]
        }
    }
}

/// Bulk trap count for a density, scaled by volume from the default pillar.
pub fn bulk_trap_count(geom: &PillarGeometry, density_ppm: f64) -> usize {
    let v0 = PillarGeometry::default().volume();
    (density_ppm * TRAPS_PER_PPM_DEFAULT * geom.volume() / v0).round() as usize
}

/// Uniform traps in the volume (ρ = R0√u) and on the lateral surface.
pub fn build_layout(geom: &PillarGeometry, bulk_density_ppm: f64, n_surface: usize, seed: u64) -> Result<TrapLayout> {
    geom.validate()?;
    if !(bulk_density_ppm >= 0.0) || !bulk_density_ppm.is_finite() {
        return Err(Error::invalid("trap density must be non-negative"));
    }
    let n_bulk = bulk_trap_count(geom, bulk_density_ppm);
    let (r0, h) = (geom.radius, geom.height);
    let mut rng = rng::stream(seed, domain::LAYOUT_BULK, 0);
    let bulk = (0..n_bulk)
        .map(|_| Trap {
            rho: r0 * rng.random::<f64>().sqrt(),
            phi: 2.0 * PI * rng.random::<f64>(),
            z: h * (rng.random::<f64>() - 0.5),
        })
        .collect();
    let mut rng = rng::stream(seed, domain::LAYOUT_SURFACE, 0);
    let surface = (0..n_surface)
        .map(|_| Trap {
            rho: r0,
            phi: 2.0 * PI * rng.random::<f64>(),
            z: h * (rng.random::<f64>() - 0.5),
        })
        .collect();
    Ok(TrapLayout {
        bulk,
        surface,
        geometry: *geom,
        seed,
    })
}

pub fn build_layout_from(spec: &LayoutSpec) -> Result<TrapLayout> {
    build_layout(&spec.geometry, spec.bulk_density_ppm, spec.n_surface, spec.seed)
}

/// Lab-frame field per unit positive charge for every trap.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTable {
    pub fields: Vec<Vec3>,
    pub include_correction: bool,
}

impl FieldTable {
    pub fn new(layout: &TrapLayout, include_correction: bool, exec: Exec) -> Result<Self> {
        let geom = &layout.geometry;
        let corr = if include_correction {
            Some(CorrectionTable::new(geom, 0.5 * geom.height, cylfield::table_correction_quad())?)
        } else {
            None
        };
        let fields = exec.map(layout.n_traps(), |i| {
            let t = layout.trap(i);
            let c = PointCharge::new(1.0, t.rho, t.phi, t.z);
            let mut e = cylfield::direct_field(&c, geom)?;
            if let Some(ct) = &corr {
                let p = ct.correction(&c)?.field;
                for k in 0..3 {
                    e[k] += p[k];
                }
            }
            Ok(e)
        });
        Ok(Self {
            fields: fields.into_iter().collect::<Result<_>>()?,
            include_correction,
        })
    }
}

/// Charge counts and spectrum settings for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McRunSpec {
    pub n_bulk_charges: usize,
    pub n_surface_charges: usize,
    pub n_realizations: usize,
    /// FWHM of each realization's line (Hz).
    pub line_fwhm: f64,
    pub include_correction: bool,
    /// Time between configurations (s), once calibrated.
    pub tau_adhoc: Option<f64>,
}

impl Default for McRunSpec {
    fn default() -> Self {
        Self {
            n_bulk_charges: ANCHOR_CHARGES,
            n_surface_charges: 0,
            n_realizations: 10_000,
            line_fwhm: DEFAULT_LINE_FWHM,
            include_correction: true,
            tau_adhoc: None,
        }
    }
}

impl McRunSpec {
    pub fn validate(&self, layout: &TrapLayout) -> Result<()> {
        if self.n_bulk_charges % 2 != 0 || self.n_surface_charges % 2 != 0 {
            return Err(Error::invalid("charge counts must be even for neutrality"));
        }
        if self.n_bulk_charges > layout.bulk.len() || self.n_surface_charges > layout.surface.len() {
            return Err(Error::Capacity(format!(
                "{} bulk / {} surface charges for {} / {} traps",
                self.n_bulk_charges,
                self.n_surface_charges,
                layout.bulk.len(),
                layout.surface.len()
            )));
        }
        if self.n_realizations < 2 {
            return Err(Error::invalid("at least two realizations are needed"));
        }
        if !(self.line_fwhm > 0.0) {
            return Err(Error::invalid("line FWHM must be positive"));
        }
        if let Some(t) = self.tau_adhoc {
            if !(t > 0.0) {
                return Err(Error::invalid("time step must be positive"));
            }
        }
        Ok(())
    }
}

/// Occupied traps (combined indices) and their charges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChargeConfig {
    pub traps: Vec<u32>,
    pub charges: Vec<i8>,
}

impl ChargeConfig {
    pub fn is_empty(&self) -> bool {
        self.traps.is_empty()
    }

    pub fn net_charge(&self) -> i64 {
        self.charges.iter().map(|&q| q as i64).sum()
    }

    /// Every charge sign flipped.
    pub fn conjugate(&self) -> Self {
        Self {
            traps: self.traps.clone(),
            charges: self.charges.iter().map(|q| -q).collect(),
        }
    }
}

fn pick(rng: &mut ChaCha8Rng, n_traps: usize, n: usize, offset: usize, out: &mut ChargeConfig) {
    for (k, t) in index::sample(rng, n_traps, n).into_iter().enumerate() {
        out.traps.push((offset + t) as u32);
        out.charges.push(if k < n / 2 { 1 } else { -1 });
    }
}

fn sample_with(layout: &TrapLayout, spec: &McRunSpec, rng: &mut ChaCha8Rng) -> ChargeConfig {
    let mut cfg = ChargeConfig {
        traps: Vec::with_capacity(spec.n_bulk_charges + spec.n_surface_charges),
        charges: Vec::with_capacity(spec.n_bulk_charges + spec.n_surface_charges),
    };
    pick(rng, layout.bulk.len(), spec.n_bulk_charges, 0, &mut cfg);
    pick(rng, layout.surface.len(), spec.n_surface_charges, layout.bulk.len(), &mut cfg);
    cfg
}

/// Neutral configuration for realization `index` of `seed`.
pub fn sample_config_at(layout: &TrapLayout, spec: &McRunSpec, seed: u64, index: u64) -> Result<ChargeConfig> {
    spec.validate(layout)?;
    Ok(sample_with(layout, spec, &mut rng::stream(seed, domain::CHARGE_CONFIG, index)))
}

pub fn sample_config(layout: &TrapLayout, spec: &McRunSpec, seed: u64) -> Result<ChargeConfig> {
    sample_config_at(layout, spec, seed, 0)
}

/// Field at the emitter from a configuration, summed in trap-list order.
pub fn config_field(config: &ChargeConfig, table: &FieldTable) -> Vec3 {
    let mut e = [0.0; 3];
    for (&t, &q) in config.traps.iter().zip(&config.charges) {
        let f = &table.fields[t as usize];
        let q = q as f64;
        for k in 0..3 {
            e[k] += q * f[k];
        }
    }
    e
}

/// Point charges of a configuration, for independent field evaluation.
pub fn config_charges(config: &ChargeConfig, layout: &TrapLayout) -> Vec<PointCharge> {
    config
        .traps
        .iter()
        .zip(&config.charges)
        .map(|(&t, &q)| {
            let tr = layout.trap(t as usize);
            PointCharge::new(q as f64, tr.rho, tr.phi, tr.z)
        })
        .collect()
}

/// Δ₋ for a configuration.
pub fn config_shift(config: &ChargeConfig, table: &FieldTable, geom: &PillarGeometry, coupling: &StarkCoupling) -> f64 {
    let e = geom.to_nv_frame(config_field(config, table));
    cylfield::stark_shift(e, coupling, Branch::Minus)
}

/// Per-realization fields (emitter frame) for realizations 0..n.
pub fn realization_fields(layout: &TrapLayout, table: &FieldTable, spec: &McRunSpec, seed: u64, exec: Exec) -> Result<Vec<Vec3>> {
    spec.validate(layout)?;
    Ok(exec.map(spec.n_realizations, |i| {
        let cfg = sample_with(layout, spec, &mut rng::stream(seed, domain::CHARGE_CONFIG, i as u64));
        layout.geometry.to_nv_frame(config_field(&cfg, table))
    }))
}

pub fn shifts_from_fields(fields: &[Vec3], coupling: &StarkCoupling) -> Vec<f64> {
    fields.iter().map(|&e| cylfield::stark_shift(e, coupling, Branch::Minus)).collect()
}

/// Stark shifts for realizations 0..n.
pub fn realization_shifts(
    layout: &TrapLayout,
    table: &FieldTable,
    spec: &McRunSpec,
    coupling: &StarkCoupling,
    seed: u64,
    exec: Exec,
) -> Result<Vec<f64>> {
    Ok(shifts_from_fields(&realization_fields(layout, table, spec, seed, exec)?, coupling))
}

/// Fitted inhomogeneous line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineResult {
    pub fwhm: f64,
    pub fwhm_err: f64,
    /// RMS fit residual of the spectrum normalized to one line per realization.
    pub rmse: f64,
    pub n_realizations: usize,
    pub shift_median: f64,
    pub shift_sigma: f64,
}

/// Sum of Lorentzians at `shifts`, fitted with a Voigt profile.
pub fn inhomogeneous_linewidth(shifts: &[f64], line_fwhm: f64) -> Result<LineResult> {
    if shifts.len() < 2 {
        return Err(Error::invalid("at least two realizations are needed"));
    }
    let med = stats::median(shifts);
    let sigma = stats::robust_sigma(shifts);
    let half = (SPAN_SIGMAS * sigma).max(SPAN_FLOOR_LINEWIDTHS * line_fwhm);
    let grid = spectrum::uniform_grid(med - half, med + half, SPECTRUM_PITCH);
    let mut y = spectrum::lorentzian_sum(shifts, line_fwhm, &grid, SPECTRUM_PITCH);
    let n = shifts.len() as f64;
    y.iter_mut().for_each(|v| *v /= n);
    let fit = spectrum::fit_ensemble_spectrum(&grid, &y).map_err(|e| {
        Error::Numerical(format!(
            "spectrum fit failed ({e}); shifts: median {med:.4e} Hz, robust sigma {sigma:.4e} Hz, n {}",
            shifts.len()
        ))
    })?;
    if !fit.fit.converged {
        return Err(Error::Numerical(format!(
            "spectrum fit did not converge; shifts: median {med:.4e} Hz, robust sigma {sigma:.4e} Hz, n {}",
            shifts.len()
        )));
    }
    Ok(LineResult {
        fwhm: fit.fwhm,
        fwhm_err: fit.fwhm_stderr,
        rmse: fit.fit.rmse(),
        n_realizations: shifts.len(),
        shift_median: med,
        shift_sigma: sigma,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub n_realizations: usize,
    pub fwhm: f64,
    pub rmse: f64,
}

/// Linewidth from the first n shifts for each checkpoint n.
pub fn realization_convergence(shifts: &[f64], line_fwhm: f64, checkpoints: &[usize]) -> Result<Vec<ConvergencePoint>> {
    if checkpoints.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("checkpoints must be increasing"));
    }
    checkpoints
        .iter()
        .map(|&n| {
            if n > shifts.len() {
                return Err(Error::invalid(format!("checkpoint {n} exceeds {} realizations", shifts.len())));
            }
            let r = inhomogeneous_linewidth(&shifts[..n], line_fwhm)?;
            Ok(ConvergencePoint {
                n_realizations: n,
                fwhm: r.fwhm,
                rmse: r.rmse,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdrResult {
    /// Hz/s.
    pub sdr: f64,
    pub shift_diffs: Vec<f64>,
}

/// Mean |Δshift| between consecutive realizations divided by the time step.
pub fn sdr_between_configs(shifts: &[f64], tau: Option<f64>) -> Result<SdrResult> {
    let tau = tau.ok_or_else(|| Error::Configuration("no time step: calibrate first or set tau_adhoc".into()))?;
    if !(tau > 0.0) {
        return Err(Error::invalid("time step must be positive"));
    }
    if shifts.len() < 2 {
        return Err(Error::invalid("at least two realizations are needed"));
    }
    let diffs: Vec<f64> = shifts.windows(2).map(|w| w[1] - w[0]).collect();
    let mean_abs = diffs.iter().map(|d| d.abs()).sum::<f64>() / diffs.len() as f64;
    Ok(SdrResult {
        sdr: mean_abs / tau,
        shift_diffs: diffs,
    })
}

/// Factor c such that shifts scaled by c give a line of `target_fwhm`.
/// Shifts are linear in the coupling, so this is also the coupling scale.
pub fn calibrate_coupling(shifts: &[f64], line_fwhm: f64, target_fwhm: f64) -> Result<f64> {
    if !(target_fwhm > line_fwhm) {
        return Err(Error::Range(format!(
            "target FWHM {target_fwhm} Hz is not above the line width {line_fwhm} Hz"
        )));
    }
    let fwhm_at = |c: f64| -> Result<f64> {
        let s: Vec<f64> = shifts.iter().map(|x| x * c).collect();
        Ok(inhomogeneous_linewidth(&s, line_fwhm)?.fwhm)
    };
    let sigma = stats::robust_sigma(shifts);
    if !(sigma > 0.0) {
        return Err(Error::Range("shifts have no spread to calibrate against".into()));
    }
    // bracket in log space from the Gaussian guess, then bisect; the FWHM
    // grows monotonically with c
    let mut lo = target_fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt() * sigma);
    let mut hi = lo;
    while fwhm_at(lo)? > target_fwhm {
        lo *= 0.5;
    }
    while fwhm_at(hi)? < target_fwhm {
        hi *= 2.0;
    }
    for _ in 0..40 {
        let mid = (lo * hi).sqrt();
        if fwhm_at(mid)? < target_fwhm {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-6 {
            break;
        }
    }
    Ok((lo * hi).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimestepCalibration {
    pub tau_adhoc: f64,
    /// Bulk charge count whose line matches the target FWHM.
    pub n_charges: usize,
    pub fwhm: f64,
    pub mean_abs_diff: f64,
}

/// Charge count matching `target_fwhm` (bisection over even bulk counts),
/// then τ = mean|Δshift| / `target_sdr` at that count.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_timestep(
    layout: &TrapLayout,
    table: &FieldTable,
    spec: &McRunSpec,
    coupling: &StarkCoupling,
    target_sdr: f64,
    target_fwhm: f64,
    seed: u64,
    exec: Exec,
) -> Result<TimestepCalibration> {
    if !(target_sdr > 0.0) || !(target_fwhm > 0.0) {
        return Err(Error::invalid("calibration targets must be positive"));
    }
    let run = |n: usize| -> Result<(LineResult, Vec<f64>)> {
        let s = McRunSpec {
            n_bulk_charges: n,
            n_surface_charges: 0,
            ..*spec
        };
        let shifts = realization_shifts(layout, table, &s, coupling, seed, exec)?;
        Ok((inhomogeneous_linewidth(&shifts, spec.line_fwhm)?, shifts))
    };
    let cap = layout.bulk.len() / 2;
    let (top, _) = run(2 * cap)?;
    if top.fwhm < target_fwhm {
        return Err(Error::Range(format!(
            "target FWHM {target_fwhm:.4e} Hz exceeds {:.4e} Hz reached with all {} traps",
            top.fwhm,
            2 * cap
        )));
    }
    // pairs of charges
    let (mut lo, mut hi) = (0usize, cap);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if run(2 * mid)?.0.fwhm < target_fwhm {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (line, shifts) = run(2 * hi)?;
    let sdr = sdr_between_configs(&shifts, Some(1.0))?;
    Ok(TimestepCalibration {
        tau_adhoc: sdr.sdr / target_sdr,
        n_charges: 2 * hi,
        fwhm: line.fwhm,
        mean_abs_diff: sdr.sdr,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    BulkCharges,
    SurfaceCharges,
    TrapDensity,
    Radius,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bulk_charges" | "bulk-charges" => Ok(Self::BulkCharges),
            "surface_charges" | "surface-charges" => Ok(Self::SurfaceCharges),
            "trap_density" | "trap-density" => Ok(Self::TrapDensity),
            "radius" => Ok(Self::Radius),
            _ => Err(Error::invalid(format!("unknown sweep axis '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_value: f64,
    pub n_bulk: usize,
    pub n_surface: usize,
    pub fwhm: Option<f64>,
    pub fwhm_err: Option<f64>,
    pub sdr: Option<f64>,
    pub rmse: Option<f64>,
    pub seed: u64,
    pub error: Option<String>,
}

fn row_for(
    layout: &TrapLayout,
    table: &FieldTable,
    spec: &McRunSpec,
    coupling: &StarkCoupling,
    seed: u64,
    axis_value: f64,
    exec: Exec,
) -> SweepRow {
    let mut row = SweepRow {
        axis_value,
        n_bulk: spec.n_bulk_charges,
        n_surface: spec.n_surface_charges,
        fwhm: None,
        fwhm_err: None,
        sdr: None,
        rmse: None,
        seed,
        error: None,
    };
    let res = realization_shifts(layout, table, spec, coupling, seed, exec).and_then(|shifts| {
        let line = inhomogeneous_linewidth(&shifts, spec.line_fwhm)?;
        let sdr = match spec.tau_adhoc {
            Some(t) => Some(sdr_between_configs(&shifts, Some(t))?.sdr),
            None => None,
        };
        Ok((line, sdr))
    });
    match res {
        Ok((line, sdr)) => {
            row.fwhm = Some(line.fwhm);
            row.fwhm_err = Some(line.fwhm_err);
            row.rmse = Some(line.rmse);
            row.sdr = sdr;
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// One row per value. Charge axes reuse one layout; density and radius
/// rebuild it (surface trap count scales with the lateral area). Failed
/// points carry their error and the sweep continues.
pub fn sweep(
    template: &LayoutSpec,
    axis: SweepAxis,
    values: &[f64],
    spec: &McRunSpec,
    coupling: &StarkCoupling,
    seed: u64,
    exec: Exec,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Ok(Vec::new());
    }
    let mut rows = Vec::with_capacity(values.len());
    match axis {
        SweepAxis::BulkCharges | SweepAxis::SurfaceCharges => {
            let layout = build_layout_from(template)?;
            let table = FieldTable::new(&layout, spec.include_correction, exec)?;
            for &v in values {
                let n = v.round() as usize;
                let s = match axis {
                    SweepAxis::BulkCharges => McRunSpec {
                        n_bulk_charges: n,
                        ..*spec
                    },
                    _ => McRunSpec {
                        n_surface_charges: n,
                        ..*spec
                    },
                };
                rows.push(row_for(&layout, &table, &s, coupling, seed, v, exec));
            }
        }
        SweepAxis::TrapDensity | SweepAxis::Radius => {
            for &v in values {
                let ls = match axis {
                    SweepAxis::TrapDensity => LayoutSpec {
                        bulk_density_ppm: v,
                        ..*template
                    },
                    _ => LayoutSpec {
                        geometry: PillarGeometry {
                            radius: v,
                            ..template.geometry
                        },
                        n_surface: (template.n_surface as f64 * v / template.geometry.radius).round() as usize,
                        ..*template
                    },
                };
                let row = build_layout_from(&ls)
                    .and_then(|layout| Ok((FieldTable::new(&layout, spec.include_correction, exec)?, layout)))
                    .map(|(table, layout)| row_for(&layout, &table, spec, coupling, seed, v, exec));
                rows.push(row.unwrap_or_else(|e| SweepRow {
                    axis_value: v,
                    n_bulk: spec.n_bulk_charges,
                    n_surface: spec.n_surface_charges,
                    fwhm: None,
                    fwhm_err: None,
                    sdr: None,
                    rmse: None,
                    seed,
                    error: Some(e.to_string()),
                }));
            }
        }
    }
    Ok(rows)
}

/// Power-law fit b(x − x₀)^a over the successful rows.
pub fn sweep_power_law(rows: &[SweepRow], with_offset: bool) -> Result<fitkit::FitResult> {
    let (x, y): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter_map(|r| r.fwhm.map(|f| (r.axis_value, f)))
        .unzip();
    fitkit::fit_power_law(&x, &y, with_offset)
}

fn opt(v: Option<f64>, scale: f64) -> String {
    v.map(|x| format!("{}", x / scale)).unwrap_or_default()
}

/// CSV: axis_value, n_bulk, n_surface, fwhm_MHz, fwhm_err_MHz,
/// sdr_MHz_per_s, rmse, seed.
pub fn write_sweep<W: Write>(writer: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "axis_value",
        "n_bulk",
        "n_surface",
        "fwhm_MHz",
        "fwhm_err_MHz",
        "sdr_MHz_per_s",
        "rmse",
        "seed",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            format!("{}", r.axis_value),
            r.n_bulk.to_string(),
            r.n_surface.to_string(),
            opt(r.fwhm, MHZ),
            opt(r.fwhm_err, MHZ),
            opt(r.sdr, MHZ),
            opt(r.rmse, 1.0),
            r.seed.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_layout() -> TrapLayout {
        build_layout(&PillarGeometry::default(), 0.1, 300, 4).unwrap()
    }

    fn spec(n_bulk: usize, n_real: usize) -> McRunSpec {
        McRunSpec {
            n_bulk_charges: n_bulk,
            n_realizations: n_real,
            include_correction: false,
            ..McRunSpec::default()
        }
    }

    #[test]
    fn anchored_trap_count_and_placement() {
        let g = PillarGeometry::default();
        assert_eq!(bulk_trap_count(&g, 1.0), 13_800);
        assert_eq!(bulk_trap_count(&g, 0.0), 0);
        let l = small_layout();
        assert_eq!(l.bulk.len(), 1380);
        assert!(l.bulk.iter().all(|t| t.rho <= g.radius && t.z.abs() <= g.height / 2.0));
        assert!(l.surface.iter().all(|t| t.rho == g.radius));
        let ks = stats::ks_test(&l.bulk.iter().map(|t| t.rho).collect::<Vec<_>>(), |r| {
            (r / g.radius).powi(2).clamp(0.0, 1.0)
        })
        .unwrap();
        assert!(ks.p_value > 0.01, "{ks:?}");
    }

    #[test]
    fn configs_are_neutral_and_distinct() {
        let l = small_layout();
        assert!(sample_config(&l, &spec(0, 2), 1).unwrap().is_empty());
        let two = sample_config(&l, &spec(2, 2), 1).unwrap();
        assert_eq!(two.charges.iter().filter(|&&q| q == 1).count(), 1);
        let c = sample_config(&l, &McRunSpec { n_surface_charges: 10, ..spec(40, 2) }, 9).unwrap();
        assert_eq!(c.net_charge(), 0);
        let mut t = c.traps.clone();
        t.sort();
        t.dedup();
        assert_eq!(t.len(), 50);
        assert!(c.traps[40..].iter().all(|&i| i as usize >= l.bulk.len()));
        assert_ne!(c, sample_config(&l, &McRunSpec { n_surface_charges: 10, ..spec(40, 2) }, 10).unwrap());
        let over = sample_config(&l, &spec(2000, 2), 1);
        assert!(matches!(over, Err(Error::Capacity(_))));
    }

    #[test]
    fn shift_matches_independent_field_sum() {
        let l = small_layout();
        let table = FieldTable::new(&l, true, Exec::Sequential).unwrap();
        let k = StarkCoupling::with_scale(1.0);
        let cfg = sample_config(&l, &McRunSpec { n_surface_charges: 6, ..spec(20, 2) }, 3).unwrap();
        let e = config_field(&cfg, &table);
        let brute = cylfield::total_field(&config_charges(&cfg, &l), &l.geometry, true).unwrap();
        for i in 0..3 {
            assert!((e[i] - brute[i]).abs() <= 1e-9 * brute.iter().map(|v| v.abs()).sum::<f64>());
        }
        let conj = config_field(&cfg.conjugate(), &table);
        assert_eq!(conj, [-e[0], -e[1], -e[2]]);
        let empty = ChargeConfig { traps: vec![], charges: vec![] };
        assert_eq!(config_shift(&empty, &table, &l.geometry, &k), 0.0);
    }

    #[test]
    fn no_charges_gives_the_bare_line() {
        let r = inhomogeneous_linewidth(&[0.0; 50], DEFAULT_LINE_FWHM).unwrap();
        assert!((r.fwhm / DEFAULT_LINE_FWHM - 1.0).abs() < 0.01, "{}", r.fwhm);
        let s = sdr_between_configs(&[0.0; 50], Some(1.0)).unwrap();
        assert_eq!(s.sdr, 0.0);
        assert!(matches!(sdr_between_configs(&[0.0; 5], None), Err(Error::Configuration(_))));
    }

    #[test]
    fn coupling_calibration_hits_target() {
        let l = small_layout();
        let table = FieldTable::new(&l, false, Exec::Parallel).unwrap();
        let k = StarkCoupling::with_scale(1.0);
        let shifts = realization_shifts(&l, &table, &spec(200, 2000), &k, 2, Exec::Parallel).unwrap();
        let c = calibrate_coupling(&shifts, DEFAULT_LINE_FWHM, 1e9).unwrap();
        let scaled: Vec<f64> = realization_shifts(&l, &table, &spec(200, 2000), &k.scaled(c), 2, Exec::Parallel).unwrap();
        let r = inhomogeneous_linewidth(&scaled, DEFAULT_LINE_FWHM).unwrap();
        assert!((r.fwhm / 1e9 - 1.0).abs() < 1e-4, "{}", r.fwhm);
    }

    #[test]
    fn timestep_is_inverse_in_target_sdr() {
        let l = small_layout();
        let table = FieldTable::new(&l, false, Exec::Parallel).unwrap();
        let k = StarkCoupling::with_scale(1.0);
        let s = spec(0, 500);
        let shifts = realization_shifts(&l, &table, &spec(200, 500), &k, 5, Exec::Parallel).unwrap();
        let target = inhomogeneous_linewidth(&shifts, s.line_fwhm).unwrap().fwhm;
        let a = calibrate_timestep(&l, &table, &s, &k, 1e9, target, 5, Exec::Parallel).unwrap();
        let b = calibrate_timestep(&l, &table, &s, &k, 2e9, target, 5, Exec::Parallel).unwrap();
        assert_eq!(a.n_charges, b.n_charges);
        assert!((a.tau_adhoc / b.tau_adhoc - 2.0).abs() < 1e-12);
        let too_far = calibrate_timestep(&l, &table, &s, &k, 1e9, 1e6 * target, 5, Exec::Parallel);
        assert!(matches!(too_far, Err(Error::Range(_))));
    }

    #[test]
    fn empty_sweep() {
        let rows = sweep(
            &LayoutSpec::default(),
            SweepAxis::Radius,
            &[],
            &McRunSpec::default(),
            &StarkCoupling::default(),
            0,
            Exec::Parallel,
        )
        .unwrap();
        assert!(rows.is_empty());
    }

    #[test]
    fn sweep_csv_columns() {
        let row = SweepRow {
            axis_value: 100.0,
            n_bulk: 100,
            n_surface: 0,
            fwhm: Some(2e9),
            fwhm_err: Some(1e6),
            sdr: None,
            rmse: Some(1e-4),
            seed: 3,
            error: None,
        };
        let mut out = Vec::new();
        write_sweep(&mut out, &[row]).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert_eq!(
            s,
            "axis_value,n_bulk,n_surface,fwhm_MHz,fwhm_err_MHz,sdr_MHz_per_s,rmse,seed\n100,100,0,2000,1,,0.0001,3\n"
        );
    }
}
