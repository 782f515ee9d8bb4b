use std::path::Path;

use clap::Args;
use serde::{Deserialize, Serialize};

use nvspec::fitkit::VoigtFitOptions;
use nvspec::par::Exec;
use nvspec::ple::{self, Direction, Profile, ScanFilterPolicy, SdrMode};
use nvspec::units::MHZ;

use crate::error::CliError;
use crate::Ctx;

pub const COMMAND: &str = "analyze-ple";

#[derive(Debug, Args, Serialize)]
pub struct Flags {
    /// Scan CSV: scan_id, t_start_s, direction, power_nW, scan_speed_GHz_per_s, bin_center_MHz, counts.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bin_width_mhz: Option<f64>,
    /// Accept scans whose brightest bin has at least this many photons.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_photons: Option<u64>,
    /// gaussian or voigt.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    /// absolute or signed.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sdr_mode: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jump_threshold_mhz: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct Params {
    pub input: String,
    pub bin_width_mhz: f64,
    pub min_photons: u64,
    pub profile: Profile,
    pub sdr_mode: SdrMode,
    pub jump_threshold_mhz: f64,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            input: String::new(),
            bin_width_mhz: ple::DEFAULT_BIN_WIDTH / MHZ,
            min_photons: 3,
            profile: Profile::Gaussian,
            sdr_mode: SdrMode::Absolute,
            jump_threshold_mhz: ple::DEFAULT_JUMP_THRESHOLD / MHZ,
        }
    }
}

#[derive(Debug, Serialize)]
struct DirectionRate {
    direction: Direction,
    n_scans: usize,
    #[serde(rename = "sdr_MHz_per_s")]
    sdr_mhz_per_s: f64,
    #[serde(rename = "sdr_err_MHz_per_s")]
    sdr_err_mhz_per_s: f64,
}

#[derive(Debug, Serialize)]
struct CumulativeRow {
    n_scans: usize,
    #[serde(rename = "fwhm_MHz")]
    fwhm_mhz: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Results {
    n_scans: usize,
    n_accepted: usize,
    n_usable: usize,
    rates: Vec<DirectionRate>,
    #[serde(rename = "final_cumulative_fwhm_MHz")]
    final_cumulative_fwhm_mhz: Option<f64>,
    /// Rejected by the cumulative-linewidth jump criterion.
    rejected: bool,
}

fn write_rows<T: Serialize>(buf: &mut Vec<u8>, rows: &[T]) -> nvspec::Result<()> {
    let mut w = csv::Writer::from_writer(buf);
    for r in rows {
        w.serialize(r).map_err(|e| nvspec::Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(ctx: &mut Ctx, flags: &Flags) -> Result<(), CliError> {
    let p: Params = crate::config::resolve(COMMAND, &ctx.config, flags)?;
    if p.input.is_empty() {
        return Err(CliError::Input("--input is required".into()));
    }
    let policy = ScanFilterPolicy {
        min_photons_in_some_bin: p.min_photons,
        bin_width: p.bin_width_mhz * MHZ,
        ..ScanFilterPolicy::default()
    };
    policy.validate()?;
    let scans = ple::ingest_scans(Path::new(&p.input), policy.bin_width)
        .map_err(|e| CliError::Input(format!("{}: {e}", p.input)))?;
    if scans.is_empty() {
        return Err(CliError::Input(format!("{}: no scans", p.input)));
    }
    let fits = ple::fit_scans(&scans, &policy, &VoigtFitOptions::default(), Exec::Parallel);

    let mut rates = Vec::new();
    for dir in [Direction::Up, Direction::Down] {
        let traj = ple::build_trajectory(&fits, dir)?;
        if traj.len() < 2 {
            continue;
        }
        let sdr = ple::spectral_diffusion_rate(&traj, p.sdr_mode)?;
        rates.push(DirectionRate {
            direction: dir,
            n_scans: traj.len(),
            sdr_mhz_per_s: sdr.value / MHZ,
            sdr_err_mhz_per_s: sdr.stderr() / MHZ,
        });
    }

    let mut accepted: Vec<_> = scans.iter().filter(|s| ple::accept_scan(s, &policy)).cloned().collect();
    accepted.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));
    let series = ple::cumulative_inhomogeneous(&accepted, p.profile, accepted.len())?;
    let (_, rejected) = ple::postselect_trajectories(std::slice::from_ref(&series), p.jump_threshold_mhz * MHZ);
    let cumulative: Vec<CumulativeRow> = series
        .iter()
        .enumerate()
        .map(|(k, f)| CumulativeRow {
            n_scans: k + 1,
            fwhm_mhz: f.map(|v| v / MHZ),
        })
        .collect();

    ctx.out.table("binned_scans", |w| ple::write_scans(w, &scans))?;
    ctx.out.table("fits", |w| ple::write_fit_table(w, &fits))?;
    ctx.out.table("trajectories", |w| write_rows(w, &rates))?;
    ctx.out.table("cumulative", |w| write_rows(w, &cumulative))?;
    let results = Results {
        n_scans: scans.len(),
        n_accepted: accepted.len(),
        n_usable: fits.iter().filter(|f| f.usable).count(),
        rates,
        final_cumulative_fwhm_mhz: series.iter().rev().flatten().next().map(|v| v / MHZ),
        rejected: !rejected.is_empty(),
    };
    ctx.out.manifest(COMMAND, ctx.seed, &p, &results)
}
