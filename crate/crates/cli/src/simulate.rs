use clap::{Args, Subcommand};
use serde::{Deserialize, Serialize};

use nvspec::charge_mc::{self, LayoutSpec, McRunSpec, SweepAxis};
use nvspec::cylfield::{PillarGeometry, StarkCoupling, CALIBRATED_G};
use nvspec::diffusion::{self, EnsembleSpec, WienerSpec};
use nvspec::par::Exec;
use nvspec::units::{MHZ, NM};

use crate::config::{resolve, List};
use crate::error::CliError;
use crate::Ctx;

#[derive(Debug, Subcommand)]
pub enum Kind {
    /// One Wiener (or Ornstein-Uhlenbeck) frequency trajectory.
    Wiener(WienerFlags),
    /// Linewidth of an ensemble of diffusing lines versus time.
    Ensemble(EnsembleFlags),
    /// Stark-shift distribution from charges in a nanopillar.
    Charges(ChargeFlags),
    /// Charge-noise linewidth along one sweep axis.
    Sweep(SweepFlags),
}

pub fn run(ctx: &mut Ctx, kind: &Kind) -> Result<(), CliError> {
    match kind {
        Kind::Wiener(f) => wiener(ctx, f),
        Kind::Ensemble(f) => ensemble(ctx, f),
        Kind::Charges(f) => charges(ctx, f),
        Kind::Sweep(f) => sweep(ctx, f),
    }
}

#[derive(Debug, Args, Serialize)]
pub struct WienerFlags {
    /// Target diffusion rate; sets σ unless σ is given.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sdr_mhz_per_s: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_mhz_per_sqrt_s: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_s: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega0_mhz: Option<f64>,
    /// Mean reversion rate; 0 gives a pure Wiener process.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reversion_rate_per_s: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct WienerParams {
    pub sdr_mhz_per_s: f64,
    pub sigma_mhz_per_sqrt_s: Option<f64>,
    pub tau_s: f64,
    pub steps: usize,
    pub omega0_mhz: f64,
    pub reversion_rate_per_s: f64,
}

impl Default for WienerParams {
    fn default() -> Self {
        Self {
            sdr_mhz_per_s: 41.0,
            sigma_mhz_per_sqrt_s: None,
            tau_s: 0.8,
            steps: 1000,
            omega0_mhz: 0.0,
            reversion_rate_per_s: 0.0,
        }
    }
}

#[derive(Debug, Serialize)]
struct WienerResults {
    sigma_mhz_per_sqrt_s: f64,
    sdr_analytic_mhz_per_s: f64,
    sdr_empirical_mhz_per_s: Option<f64>,
}

fn wiener(ctx: &mut Ctx, flags: &WienerFlags) -> Result<(), CliError> {
    const COMMAND: &str = "simulate-wiener";
    let p: WienerParams = resolve(COMMAND, &ctx.config, flags)?;
    let sigma = match p.sigma_mhz_per_sqrt_s {
        Some(s) => s * MHZ,
        None => WienerSpec::sigma_for_sdr(p.sdr_mhz_per_s * MHZ, p.tau_s),
    };
    let spec = WienerSpec {
        sigma,
        tau: p.tau_s,
        n_steps: p.steps,
        omega0: p.omega0_mhz * MHZ,
    };
    let traj = diffusion::ou_trajectory(&spec, p.reversion_rate_per_s, ctx.seed)?;
    ctx.out.table("trajectory", |w| diffusion::write_trajectory(w, &traj))?;
    let results = WienerResults {
        sigma_mhz_per_sqrt_s: sigma / MHZ,
        sdr_analytic_mhz_per_s: diffusion::sdr_analytic(sigma, spec.tau)? / MHZ,
        sdr_empirical_mhz_per_s: diffusion::empirical_sdr(&traj).ok().map(|v| v / MHZ),
    };
    ctx.out.manifest(COMMAND, ctx.seed, &p, &results)
}

#[derive(Debug, Args, Serialize)]
pub struct EnsembleFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sdr_mhz_per_s: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_s: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Lines per ensemble.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lines: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line_fwhm_mhz: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensembles: Option<usize>,
    /// Fit every k-th step.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_every: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pitch_mhz: Option<f64>,
    /// Start of the window for the power-law exponent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub late_time_s: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleParams {
    pub sdr_mhz_per_s: f64,
    pub tau_s: f64,
    pub steps: usize,
    pub lines: usize,
    pub line_fwhm_mhz: f64,
    pub ensembles: usize,
    pub record_every: usize,
    pub pitch_mhz: f64,
    pub late_time_s: f64,
}

impl Default for EnsembleParams {
    fn default() -> Self {
        let e = EnsembleSpec::default();
        Self {
            sdr_mhz_per_s: 41.0,
            tau_s: 0.8,
            steps: 500,
            lines: e.n_lines,
            line_fwhm_mhz: e.line_fwhm / MHZ,
            ensembles: e.n_ensembles,
            record_every: 25,
            pitch_mhz: e.pitch / MHZ,
            late_time_s: 100.0,
        }
    }
}

#[derive(Debug, Serialize)]
struct EnsembleResults {
    exponent: Option<f64>,
    dropped_fits: usize,
}

fn ensemble(ctx: &mut Ctx, flags: &EnsembleFlags) -> Result<(), CliError> {
    const COMMAND: &str = "simulate-ensemble";
    let p: EnsembleParams = resolve(COMMAND, &ctx.config, flags)?;
    let spec = WienerSpec {
        sigma: WienerSpec::sigma_for_sdr(p.sdr_mhz_per_s * MHZ, p.tau_s),
        tau: p.tau_s,
        n_steps: p.steps,
        omega0: 0.0,
    };
    let ens = EnsembleSpec {
        n_lines: p.lines,
        line_fwhm: p.line_fwhm_mhz * MHZ,
        n_ensembles: p.ensembles,
        record_every: p.record_every,
        pitch: p.pitch_mhz * MHZ,
        ..EnsembleSpec::default()
    };
    let r = diffusion::ensemble_inhomogeneous(&spec, &ens, ctx.seed, Exec::Parallel)?;
    ctx.out.table("ensemble", |w| diffusion::write_ensemble(w, &r))?;
    let results = EnsembleResults {
        exponent: diffusion::late_time_exponent(&r, p.late_time_s).ok(),
        dropped_fits: r.dropped,
    };
    ctx.out.manifest(COMMAND, ctx.seed, &p, &results)
}

#[derive(Debug, Args, Serialize)]
pub struct ChargeFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius_nm: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub height_nm: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_inside: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_outside: Option<f64>,
    /// Bulk trap density.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density_ppm: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub surface_traps: Option<usize>,
    /// Seed of the trap positions (the master seed drives the occupations).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layout_seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bulk_charges: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub surface_charges: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub realizations: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line_fwhm_mhz: Option<f64>,
    /// Include the dielectric polarization correction (true/false).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correction: Option<bool>,
    /// Stark coupling scale g in Hz per V/m.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coupling_g: Option<f64>,
    /// Time between configurations; enables the diffusion-rate output.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_s: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ChargeParams {
    pub radius_nm: f64,
    pub height_nm: f64,
    pub eps_inside: f64,
    pub eps_outside: f64,
    pub density_ppm: f64,
    pub surface_traps: usize,
    pub layout_seed: u64,
    pub bulk_charges: usize,
    pub surface_charges: usize,
    pub realizations: usize,
    pub line_fwhm_mhz: f64,
    pub correction: bool,
    pub coupling_g: f64,
    pub tau_s: Option<f64>,
}

impl Default for ChargeParams {
    fn default() -> Self {
        let g = PillarGeometry::default();
        let l = LayoutSpec::default();
        let r = McRunSpec::default();
        Self {
            radius_nm: g.radius / NM,
            height_nm: g.height / NM,
            eps_inside: g.eps_inside,
            eps_outside: g.eps_outside,
            density_ppm: l.bulk_density_ppm,
            surface_traps: l.n_surface,
            layout_seed: l.seed,
            bulk_charges: r.n_bulk_charges,
            surface_charges: r.n_surface_charges,
            realizations: r.n_realizations,
            line_fwhm_mhz: r.line_fwhm / MHZ,
            correction: r.include_correction,
            coupling_g: CALIBRATED_G,
            tau_s: None,
        }
    }
}

impl ChargeParams {
    fn layout(&self) -> LayoutSpec {
        LayoutSpec {
            geometry: PillarGeometry {
                radius: self.radius_nm * NM,
                height: self.height_nm * NM,
                eps_inside: self.eps_inside,
                eps_outside: self.eps_outside,
                ..PillarGeometry::default()
            },
            bulk_density_ppm: self.density_ppm,
            n_surface: self.surface_traps,
            seed: self.layout_seed,
        }
    }

    fn run_spec(&self) -> McRunSpec {
        McRunSpec {
            n_bulk_charges: self.bulk_charges,
            n_surface_charges: self.surface_charges,
            n_realizations: self.realizations,
            line_fwhm: self.line_fwhm_mhz * MHZ,
            include_correction: self.correction,
            tau_adhoc: self.tau_s,
        }
    }

    fn coupling(&self) -> Result<StarkCoupling, CliError> {
        let k = StarkCoupling::with_scale(self.coupling_g);
        k.validate()?;
        Ok(k)
    }
}

#[derive(Debug, Serialize)]
struct ChargeResults {
    n_traps: usize,
    #[serde(rename = "fwhm_MHz")]
    fwhm_mhz: f64,
    #[serde(rename = "fwhm_err_MHz")]
    fwhm_err_mhz: f64,
    rmse: f64,
    #[serde(rename = "shift_sigma_MHz")]
    shift_sigma_mhz: f64,
    #[serde(rename = "sdr_MHz_per_s")]
    sdr_mhz_per_s: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ShiftRow {
    realization: usize,
    #[serde(rename = "shift_MHz")]
    shift_mhz: f64,
}

fn charges(ctx: &mut Ctx, flags: &ChargeFlags) -> Result<(), CliError> {
    const COMMAND: &str = "simulate-charges";
    let p: ChargeParams = resolve(COMMAND, &ctx.config, flags)?;
    let coupling = p.coupling()?;
    let layout = charge_mc::build_layout_from(&p.layout())?;
    let spec = p.run_spec();
    spec.validate(&layout)?;
    let table = charge_mc::FieldTable::new(&layout, spec.include_correction, Exec::Parallel)?;
    let shifts = charge_mc::realization_shifts(&layout, &table, &spec, &coupling, ctx.seed, Exec::Parallel)?;
    let line = charge_mc::inhomogeneous_linewidth(&shifts, spec.line_fwhm)?;
    let sdr = match spec.tau_adhoc {
        Some(t) => Some(charge_mc::sdr_between_configs(&shifts, Some(t))?.sdr / MHZ),
        None => None,
    };
    ctx.out.table("shifts", |w| {
        let mut cw = csv::Writer::from_writer(w);
        for (i, s) in shifts.iter().enumerate() {
            cw.serialize(ShiftRow {
                realization: i,
                shift_mhz: s / MHZ,
            })
            .map_err(|e| nvspec::Error::Io(std::io::Error::other(e)))?;
        }
        cw.flush()?;
        Ok(())
    })?;
    let results = ChargeResults {
        n_traps: layout.n_traps(),
        fwhm_mhz: line.fwhm / MHZ,
        fwhm_err_mhz: line.fwhm_err / MHZ,
        rmse: line.rmse,
        shift_sigma_mhz: line.shift_sigma / MHZ,
        sdr_mhz_per_s: sdr,
    };
    ctx.out.manifest(COMMAND, ctx.seed, &p, &results)
}

#[derive(Debug, Args, Serialize)]
pub struct SweepFlags {
    /// bulk-charges, surface-charges, trap-density or radius.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis: Option<String>,
    /// Axis values: charge counts, ppm, or nm for the radius.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<List>,
    /// Fit b(x - x0)^a instead of b x^a.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset: Option<bool>,
    #[command(flatten)]
    #[serde(flatten)]
    pub charges: ChargeFlags,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepParams {
    pub axis: String,
    pub values: List,
    pub offset: bool,
    #[serde(flatten)]
    pub charges: ChargeParams,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            axis: "bulk-charges".into(),
            values: List(vec![100.0, 200.0, 500.0, 1000.0, 2000.0, 4000.0, 6000.0]),
            offset: true,
            charges: ChargeParams::default(),
        }
    }
}

#[derive(Debug, Serialize)]
struct SweepResults {
    exponent: Option<f64>,
    prefactor: Option<f64>,
    offset: Option<f64>,
    failed_points: usize,
}

fn sweep(ctx: &mut Ctx, flags: &SweepFlags) -> Result<(), CliError> {
    const COMMAND: &str = "simulate-sweep";
    let p: SweepParams = resolve(COMMAND, &ctx.config, flags)?;
    let axis: SweepAxis = p.axis.parse()?;
    let scale = if axis == SweepAxis::Radius { NM } else { 1.0 };
    let values: Vec<f64> = p.values.0.iter().map(|v| v * scale).collect();
    let coupling = p.charges.coupling()?;
    let mut rows = charge_mc::sweep(
        &p.charges.layout(),
        axis,
        &values,
        &p.charges.run_spec(),
        &coupling,
        ctx.seed,
        Exec::Parallel,
    )?;
    rows.iter_mut().for_each(|r| r.axis_value /= scale);
    ctx.out.table("sweep", |w| charge_mc::write_sweep(w, &rows))?;
    let failed = rows.iter().filter(|r| r.fwhm.is_none()).count();
    for r in rows.iter().filter(|r| r.error.is_some()) {
        eprintln!("warning: axis value {}: {}", r.axis_value, r.error.as_deref().unwrap_or(""));
    }
    let fit = if rows.len() - failed >= 3 {
        charge_mc::sweep_power_law(&rows, p.offset).ok()
    } else {
        None
    };
    let results = SweepResults {
        exponent: fit.as_ref().and_then(|f| f.get("a")),
        prefactor: fit.as_ref().and_then(|f| f.get("b")),
        offset: fit.as_ref().and_then(|f| f.get("x_0")),
        failed_points: failed,
    };
    ctx.out.manifest(COMMAND, ctx.seed, &p, &results)
}
