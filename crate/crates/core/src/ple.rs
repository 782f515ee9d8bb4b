//! PLE line scans: ingestion, binning, acceptance, single-scan fits,
//! diffusion rates, cumulative linewidths and duty-cycle bookkeeping.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitkit::{self, inverse_variance_mean, VoigtFit, VoigtFitOptions, WeightedValue};
use crate::par::Exec;
use crate::units::{GHZ, MHZ, NW};

/// Default histogram pitch of raw PLE data.
pub const DEFAULT_BIN_WIDTH: f64 = 4.0 * MHZ;
/// Scans with fewer photons than this are fitted but flagged.
pub const LOW_COUNT_THRESHOLD: u64 = 20;
/// Cumulative-linewidth jump that rejects a trajectory.
pub const DEFAULT_JUMP_THRESHOLD: f64 = 200.0 * MHZ;

const PITCH_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

impl std::str::FromStr for Direction {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "up" => Ok(Direction::Up),
            "down" => Ok(Direction::Down),
            other => Err(format!("unknown scan direction {other:?}")),
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::Up => "up",
            Direction::Down => "down",
        })
    }
}

/// One binned PLE sweep. Bin centers are increasing and uniformly spaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineScan {
    pub scan_id: u64,
    pub t_start: f64,
    pub direction: Direction,
    pub power: f64,
    pub scan_speed: f64,
    pub bin_centers: Vec<f64>,
    pub counts: Vec<u64>,
}

impl LineScan {
    pub fn validate(&self) -> Result<()> {
        if self.bin_centers.len() != self.counts.len() {
            return Err(Error::invalid("bin centers and counts differ in length"));
        }
        if self.bin_centers.is_empty() {
            return Err(Error::invalid(format!("scan {} has no bins", self.scan_id)));
        }
        if !(self.scan_speed > 0.0) {
            return Err(Error::invalid(format!("scan {} has non-positive scan speed", self.scan_id)));
        }
        check_uniform(&self.bin_centers).map_err(Error::InvalidInput)
    }

    pub fn pitch(&self) -> f64 {
        pitch_of(&self.bin_centers)
    }

    /// Frequency range covered by the bins (edge to edge).
    pub fn span(&self) -> f64 {
        let n = self.bin_centers.len();
        self.bin_centers[n - 1] - self.bin_centers[0] + self.pitch()
    }

    pub fn duration(&self) -> f64 {
        self.span() / self.scan_speed
    }

    pub fn total_counts(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn max_count(&self) -> u64 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    /// Re-bin onto left-closed bins of `width` starting at the first raw
    /// bin's left edge. `width` must be a whole multiple of the current pitch;
    /// a partial trailing bin is dropped. Coarser or equal pitch is kept as is.
    pub fn rebin(&self, width: f64) -> Result<LineScan> {
        let pitch = self.pitch();
        if !(width > 0.0) {
            return Err(Error::invalid("bin width must be positive"));
        }
        if width <= pitch * (1.0 + PITCH_TOLERANCE) {
            return Ok(self.clone());
        }
        let ratio = width / pitch;
        let group = ratio.round() as usize;
        if (ratio - group as f64).abs() > 1e-6 * ratio {
            return Err(Error::invalid(format!(
                "bin width {width} Hz is not a multiple of the raw pitch {pitch} Hz"
            )));
        }
        let left = self.bin_centers[0] - 0.5 * pitch;
        let n_out = self.counts.len() / group;
        let bin_centers = (0..n_out).map(|k| left + (k as f64 + 0.5) * width).collect();
        let counts = self
            .counts
            .chunks_exact(group)
            .map(|c| c.iter().sum())
            .collect();
        Ok(LineScan {
            bin_centers,
            counts,
            ..self.clone()
        })
    }
}

fn pitch_of(centers: &[f64]) -> f64 {
    if centers.len() < 2 {
        return DEFAULT_BIN_WIDTH;
    }
    (centers[centers.len() - 1] - centers[0]) / (centers.len() - 1) as f64
}

fn check_uniform(centers: &[f64]) -> std::result::Result<(), String> {
    if centers.windows(2).any(|w| !(w[1] > w[0])) {
        return Err("bin frequencies are not strictly increasing".into());
    }
    let p = pitch_of(centers);
    for w in centers.windows(2) {
        if ((w[1] - w[0]) - p).abs() > PITCH_TOLERANCE * p.max(1.0) {
            return Err(format!("bin pitch {} deviates from the mean pitch {}", w[1] - w[0], p));
        }
    }
    Ok(())
}

/// Thresholds for accepting and fitting scans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanFilterPolicy {
    pub min_photons_in_some_bin: u64,
    pub min_photons_per_bin_for_fit: u64,
    pub bin_width: f64,
}

impl Default for ScanFilterPolicy {
    fn default() -> Self {
        Self {
            min_photons_in_some_bin: 3,
            min_photons_per_bin_for_fit: 5,
            bin_width: DEFAULT_BIN_WIDTH,
        }
    }
}

impl ScanFilterPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.min_photons_in_some_bin < 1 || self.min_photons_per_bin_for_fit < 1 {
            return Err(Error::invalid("photon thresholds must be at least 1"));
        }
        if !(self.bin_width > 0.0) {
            return Err(Error::invalid("bin width must be positive"));
        }
        Ok(())
    }
}

/// True iff some bin holds at least `min_photons_in_some_bin` photons.
pub fn accept_scan(scan: &LineScan, policy: &ScanFilterPolicy) -> bool {
    scan.max_count() >= policy.min_photons_in_some_bin
}

#[derive(Debug, Deserialize)]
struct ScanRow {
    scan_id: u64,
    t_start_s: f64,
    direction: String,
    #[serde(rename = "power_nW")]
    power_nw: f64,
    #[serde(rename = "scan_speed_GHz_per_s")]
    scan_speed_ghz_per_s: f64,
    #[serde(rename = "bin_center_MHz")]
    bin_center_mhz: f64,
    counts: u64,
}

#[derive(Debug, Serialize)]
struct ScanRowOut {
    scan_id: u64,
    t_start_s: f64,
    direction: Direction,
    #[serde(rename = "power_nW")]
    power_nw: f64,
    #[serde(rename = "scan_speed_GHz_per_s")]
    scan_speed_ghz_per_s: f64,
    #[serde(rename = "bin_center_MHz")]
    bin_center_mhz: f64,
    counts: u64,
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Format {
            line,
            message: format!("{kind:?}"),
        },
    }
}

struct Pending {
    first_line: u64,
    scan: LineScan,
}

fn finish(p: Pending, bin_width: f64) -> Result<LineScan> {
    let mut scan = p.scan;
    if scan.bin_centers.len() > 1 && scan.bin_centers[0] > scan.bin_centers[1] {
        scan.bin_centers.reverse();
        scan.counts.reverse();
    }
    check_uniform(&scan.bin_centers).map_err(|message| Error::Format {
        line: p.first_line,
        message: format!("scan {}: {message}", scan.scan_id),
    })?;
    if !(scan.scan_speed > 0.0) {
        return Err(Error::Format {
            line: p.first_line,
            message: format!("scan {}: scan speed must be positive", scan.scan_id),
        });
    }
    scan.rebin(bin_width).map_err(|e| Error::Format {
        line: p.first_line,
        message: e.to_string(),
    })
}

/// Parse scans from CSV text. Rows of one scan must be contiguous and list
/// bin frequencies monotonically; scans are re-binned to `bin_width`.
pub fn read_scans<R: Read>(reader: R, bin_width: f64) -> Result<Vec<LineScan>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut pending: Option<Pending> = None;
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let mut rec = csv::StringRecord::new();
    while rdr.read_record(&mut rec).map_err(csv_error)? {
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let row: ScanRow = rec.deserialize(Some(&headers)).map_err(|e| Error::Format {
            line,
            message: e.to_string(),
        })?;
        let direction: Direction = row.direction.parse().map_err(|message| Error::Format { line, message })?;
        if !row.bin_center_mhz.is_finite() || !row.t_start_s.is_finite() {
            return Err(Error::Format {
                line,
                message: "non-finite number".into(),
            });
        }
        let same = pending.as_ref().is_some_and(|p| p.scan.scan_id == row.scan_id);
        if !same {
            if let Some(p) = pending.take() {
                out.push(finish(p, bin_width)?);
            }
            if !seen.insert(row.scan_id) {
                return Err(Error::Format {
                    line,
                    message: format!("rows of scan {} are not contiguous", row.scan_id),
                });
            }
            pending = Some(Pending {
                first_line: line,
                scan: LineScan {
                    scan_id: row.scan_id,
                    t_start: row.t_start_s,
                    direction,
                    power: row.power_nw * NW,
                    scan_speed: row.scan_speed_ghz_per_s * GHZ,
                    bin_centers: Vec::new(),
                    counts: Vec::new(),
                },
            });
        }
        let p = pending.as_mut().expect("pending scan");
        let n = p.scan.bin_centers.len();
        let f = row.bin_center_mhz * MHZ;
        if n >= 1 {
            let prev = p.scan.bin_centers[n - 1];
            let rising = if n >= 2 {
                p.scan.bin_centers[1] > p.scan.bin_centers[0]
            } else {
                f > prev
            };
            if f == prev || (f > prev) != rising {
                return Err(Error::Format {
                    line,
                    message: format!("non-monotone frequency in scan {}", row.scan_id),
                });
            }
        }
        p.scan.bin_centers.push(f);
        p.scan.counts.push(row.counts);
    }
    if let Some(p) = pending.take() {
        out.push(finish(p, bin_width)?);
    }
    Ok(out)
}

pub fn ingest_scans(path: &Path, bin_width: f64) -> Result<Vec<LineScan>> {
    let file = std::fs::File::open(path)?;
    read_scans(std::io::BufReader::new(file), bin_width)
}

pub fn write_scans<W: Write>(writer: W, scans: &[LineScan]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for s in scans {
        for (&f, &c) in s.bin_centers.iter().zip(&s.counts) {
            w.serialize(ScanRowOut {
                scan_id: s.scan_id,
                t_start_s: s.t_start,
                direction: s.direction,
                power_nw: s.power / NW,
                scan_speed_ghz_per_s: s.scan_speed / GHZ,
                bin_center_mhz: f / MHZ,
                counts: c,
            })
            .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Voigt fit of one scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanFit {
    pub scan_id: u64,
    pub t_start: f64,
    pub direction: Direction,
    pub total_counts: u64,
    /// Fewer than 20 photons: the fit is biased towards narrow lines.
    pub low_count: bool,
    /// Converged with a valid covariance; only usable fits enter trajectories.
    pub usable: bool,
    pub fit: Option<VoigtFit>,
}

impl ScanFit {
    pub fn center(&self) -> Option<WeightedValue> {
        self.fit.as_ref().and_then(|f| f.center().ok())
    }

    pub fn fwhm(&self) -> Option<WeightedValue> {
        self.fit.as_ref().and_then(|f| f.fwhm_value().ok())
    }
}

pub fn fit_scan(scan: &LineScan, opts: &VoigtFitOptions) -> ScanFit {
    let x = &scan.bin_centers;
    let y: Vec<f64> = scan.counts.iter().map(|&c| c as f64).collect();
    let total = scan.total_counts();
    let fit = fitkit::fit_voigt(x, &y, opts).ok();
    let usable = fit.as_ref().is_some_and(|f| {
        f.fit.converged && f.fit.covariance_valid && f.center().is_ok() && f.fwhm_value().is_ok()
    });
    ScanFit {
        scan_id: scan.scan_id,
        t_start: scan.t_start,
        direction: scan.direction,
        total_counts: total,
        low_count: total < LOW_COUNT_THRESHOLD,
        usable,
        fit,
    }
}

/// Accept and fit scans; results come back in scan order.
pub fn fit_scans(scans: &[LineScan], policy: &ScanFilterPolicy, opts: &VoigtFitOptions, exec: Exec) -> Vec<ScanFit> {
    let accepted: Vec<&LineScan> = scans.iter().filter(|s| accept_scan(s, policy)).collect();
    exec.map(accepted.len(), |i| fit_scan(accepted[i], opts))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub t: f64,
    pub center: WeightedValue,
    pub fwhm: Option<WeightedValue>,
    pub scan_id: u64,
}

/// Time-ordered resonance centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub entries: Vec<TrajectoryEntry>,
    /// Nominal time between scans.
    pub tau: f64,
}

impl Trajectory {
    pub fn new(entries: Vec<TrajectoryEntry>, tau: f64) -> Result<Self> {
        if entries.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::invalid("trajectory times must be strictly increasing"));
        }
        Ok(Self { entries, tau })
    }

    pub fn centers(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.center.value).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Build a trajectory from usable fits of one scan direction.
/// The nominal τ is the median spacing of the surviving scans.
pub fn build_trajectory(fits: &[ScanFit], direction: Direction) -> Result<Trajectory> {
    let mut entries: Vec<TrajectoryEntry> = fits
        .iter()
        .filter(|f| f.usable && f.direction == direction)
        .filter_map(|f| {
            Some(TrajectoryEntry {
                t: f.t_start,
                center: f.center()?,
                fwhm: f.fwhm(),
                scan_id: f.scan_id,
            })
        })
        .collect();
    entries.sort_by(|a, b| a.t.total_cmp(&b.t));
    let mut gaps: Vec<f64> = entries.windows(2).map(|w| w[1].t - w[0].t).collect();
    gaps.sort_by(f64::total_cmp);
    let tau = gaps.get(gaps.len() / 2).copied().unwrap_or(0.0);
    Trajectory::new(entries, tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdrMode {
    Absolute,
    Signed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeBase {
    /// Actual timestamps of the surviving consecutive pairs.
    Timestamps,
    /// The trajectory's nominal τ.
    Nominal,
}

/// Inverse-variance averaged consecutive center difference divided by the
/// mean time between the paired scans.
pub fn spectral_diffusion_rate(traj: &Trajectory, mode: SdrMode) -> Result<WeightedValue> {
    spectral_diffusion_rate_with(traj, mode, TimeBase::Timestamps)
}

pub fn spectral_diffusion_rate_with(traj: &Trajectory, mode: SdrMode, time_base: TimeBase) -> Result<WeightedValue> {
    if traj.entries.len() < 2 {
        return Err(Error::InsufficientData("SDR needs at least two scans".into()));
    }
    let diffs: Vec<WeightedValue> = traj
        .entries
        .windows(2)
        .map(|w| {
            let d = w[1].center.value - w[0].center.value;
            WeightedValue {
                value: match mode {
                    SdrMode::Absolute => d.abs(),
                    SdrMode::Signed => d,
                },
                variance: w[0].center.variance + w[1].center.variance,
            }
        })
        .collect();
    let mean = inverse_variance_mean(&diffs)?;
    let dt = match time_base {
        TimeBase::Timestamps => {
            let e = &traj.entries;
            (e[e.len() - 1].t - e[0].t) / (e.len() - 1) as f64
        }
        TimeBase::Nominal => traj.tau,
    };
    if !(dt > 0.0) {
        return Err(Error::invalid("time between scans must be positive"));
    }
    Ok(WeightedValue {
        value: mean.value / dt,
        variance: mean.variance / (dt * dt),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Gaussian,
    Voigt,
}

/// Fit a summed spectrum and return its FWHM.
pub fn fit_profile_fwhm(x: &[f64], y: &[f64], profile: Profile) -> Result<WeightedValue> {
    match profile {
        Profile::Gaussian => {
            let (fit, fwhm) = fitkit::fit_gaussian(x, y)?;
            if !fit.converged {
                return Err(Error::Numerical("gaussian fit did not converge".into()));
            }
            Ok(fwhm)
        }
        Profile::Voigt => {
            let f = fitkit::fit_voigt(x, y, &VoigtFitOptions::default())?;
            if !f.fit.converged {
                return Err(Error::Numerical("voigt fit did not converge".into()));
            }
            Ok(WeightedValue {
                value: f.fwhm,
                variance: f.fwhm_stderr * f.fwhm_stderr,
            })
        }
    }
}

/// Put scans onto one common grid with the pitch of the first scan.
fn common_grid(scans: &[LineScan]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let pitch = scans[0].pitch();
    let origin = scans[0].bin_centers[0];
    let index = |f: f64| ((f - origin) / pitch).round() as i64;
    let mut lo = i64::MAX;
    let mut hi = i64::MIN;
    for s in scans {
        if ((s.pitch() - pitch) / pitch).abs() > 1e-6 {
            return Err(Error::invalid("scans must share a bin width"));
        }
        lo = lo.min(index(s.bin_centers[0]));
        hi = hi.max(index(s.bin_centers[s.bin_centers.len() - 1]));
    }
    let n = (hi - lo + 1) as usize;
    let grid = (0..n).map(|k| origin + (lo + k as i64) as f64 * pitch).collect();
    let rows = scans
        .iter()
        .map(|s| {
            let mut row = vec![0.0; n];
            for (&f, &c) in s.bin_centers.iter().zip(&s.counts) {
                row[(index(f) - lo) as usize] += c as f64;
            }
            row
        })
        .collect();
    Ok((grid, rows))
}

/// FWHM of the summed spectrum of scans 1..k for k = 1..=upto.
/// Entries whose fit fails are `None`; the series continues.
pub fn cumulative_inhomogeneous(scans: &[LineScan], profile: Profile, upto: usize) -> Result<Vec<Option<f64>>> {
    let upto = upto.min(scans.len());
    if upto == 0 {
        return Ok(Vec::new());
    }
    let (grid, rows) = common_grid(&scans[..upto])?;
    let mut sum = vec![0.0; grid.len()];
    let mut out = Vec::with_capacity(upto);
    for row in rows {
        for (s, r) in sum.iter_mut().zip(&row) {
            *s += r;
        }
        out.push(fit_profile_fwhm(&grid, &sum, profile).ok().map(|w| w.value));
    }
    Ok(out)
}

/// Indices of kept and rejected trajectories. A trajectory is rejected iff
/// its cumulative FWHM rises by more than `jump_threshold` between
/// consecutive successful fits.
pub fn postselect_trajectories(series: &[Vec<Option<f64>>], jump_threshold: f64) -> (Vec<usize>, Vec<usize>) {
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for (i, s) in series.iter().enumerate() {
        let vals: Vec<f64> = s.iter().flatten().copied().collect();
        if vals.windows(2).any(|w| w[1] - w[0] > jump_threshold) {
            rejected.push(i);
        } else {
            kept.push(i);
        }
    }
    (kept, rejected)
}

/// Time the laser spends within one linewidth of the line per sweep.
pub fn on_resonance_time(linewidth: f64, scan_speed: f64) -> Result<f64> {
    if !(scan_speed > 0.0) {
        return Err(Error::invalid("scan speed must be positive"));
    }
    Ok(linewidth / scan_speed)
}

/// Fraction of the scan cycle spent on resonance.
pub fn duty_cycle(linewidth: f64, scan_speed: f64, scan_span: f64, turnaround: f64, directions_used: u32) -> Result<f64> {
    let on = on_resonance_time(linewidth, scan_speed)?;
    if directions_used == 0 || !(scan_span > 0.0) || turnaround < 0.0 || linewidth < 0.0 {
        return Err(Error::invalid("duty cycle needs positive span and at least one direction"));
    }
    let d = directions_used as f64;
    Ok(on / (d * scan_span / scan_speed + d * turnaround))
}

/// Laser-induced spectral wandering during a resonant dwell.
pub fn resonance_dwell_diffusion(dwell: f64, sdr: f64) -> f64 {
    dwell * sdr
}

#[derive(Debug, Serialize)]
struct FitRowOut {
    scan_id: u64,
    #[serde(rename = "center_MHz")]
    center_mhz: f64,
    #[serde(rename = "center_err_MHz")]
    center_err_mhz: f64,
    #[serde(rename = "fwhm_MHz")]
    fwhm_mhz: f64,
    #[serde(rename = "fwhm_err_MHz")]
    fwhm_err_mhz: f64,
}

/// Per-scan fit table for usable fits.
pub fn write_fit_table<W: Write>(writer: W, fits: &[ScanFit]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for f in fits.iter().filter(|f| f.usable) {
        let vf = f.fit.as_ref().expect("usable fit");
        w.serialize(FitRowOut {
            scan_id: f.scan_id,
            center_mhz: vf.params.center / MHZ,
            center_err_mhz: vf.fit.stderrs[1] / MHZ,
            fwhm_mhz: vf.fwhm / MHZ,
            fwhm_err_mhz: vf.fwhm_stderr / MHZ,
        })
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectorySummary {
    #[serde(rename = "sdr_MHz_per_s")]
    pub sdr_mhz_per_s: f64,
    pub sdr_err: f64,
    pub n_scans: usize,
}

pub fn write_trajectory_summary<W: Write>(writer: W, rows: &[TrajectorySummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::VoigtParams;

    fn scan(counts: Vec<u64>, pitch: f64) -> LineScan {
        LineScan {
            scan_id: 0,
            t_start: 0.0,
            direction: Direction::Up,
            power: 5.0 * NW,
            scan_speed: 5.88 * GHZ,
            bin_centers: (0..counts.len()).map(|i| i as f64 * pitch).collect(),
            counts,
        }
    }

    fn wv(v: f64) -> WeightedValue {
        WeightedValue::new(v, 1.0).unwrap()
    }

    fn traj(centers: &[f64], dt: f64) -> Trajectory {
        let entries = centers
            .iter()
            .enumerate()
            .map(|(i, &c)| TrajectoryEntry {
                t: i as f64 * dt,
                center: wv(c),
                fwhm: None,
                scan_id: i as u64,
            })
            .collect();
        Trajectory::new(entries, dt).unwrap()
    }

    #[test]
    fn rebin_groups_of_four() {
        let s = scan(vec![1, 2, 3, 4, 5, 6, 7, 8], MHZ);
        let r = s.rebin(4.0 * MHZ).unwrap();
        assert_eq!(r.counts, vec![10, 26]);
        assert!((r.bin_centers[0] - 1.5 * MHZ).abs() < 1e-6);
        assert!((r.pitch() - 4.0 * MHZ).abs() < 1e-6);
    }

    #[test]
    fn rebin_drops_partial_trailing_bin() {
        let s = scan(vec![1, 1, 1, 1, 1, 9], MHZ);
        assert_eq!(s.rebin(4.0 * MHZ).unwrap().counts, vec![4]);
        assert!(s.rebin(2.5 * MHZ).is_err());
    }

    #[test]
    fn acceptance_threshold() {
        let p = ScanFilterPolicy::default();
        assert!(!accept_scan(&scan(vec![0; 10], 4.0 * MHZ), &p));
        assert!(accept_scan(&scan(vec![0, 1, 3, 1], 4.0 * MHZ), &p));
        assert!(!accept_scan(&scan(vec![0, 2, 2, 1], 4.0 * MHZ), &p));
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let text = "scan_id,t_start_s,direction,power_nW,scan_speed_GHz_per_s,bin_center_MHz,counts\n\
                    1,0.0,up,5,5.88,0,1\n1,0.0,up,5,5.88,1,2\n1,0.0,up,5,5.88,2,3\n1,0.0,up,5,5.88,3,4\n\
                    2,2.3,up,5,5.88,0,0\n2,2.3,up,5,5.88,1,0\n2,2.3,up,5,5.88,2,7\n2,2.3,up,5,5.88,3,0\n";
        let scans = read_scans(text.as_bytes(), 4.0 * MHZ).unwrap();
        assert_eq!(scans.len(), 2);
        assert_eq!(scans[0].counts, vec![10]);
        assert_eq!(scans[1].total_counts(), 7);

        let mut buf = Vec::new();
        write_scans(&mut buf, &scans).unwrap();
        let again = read_scans(buf.as_slice(), 4.0 * MHZ).unwrap();
        assert_eq!(again, scans);

        assert!(read_scans("scan_id,t_start_s,direction,power_nW,scan_speed_GHz_per_s,bin_center_MHz,counts\n".as_bytes(), 4.0 * MHZ)
            .unwrap()
            .is_empty());

        let bad = "scan_id,t_start_s,direction,power_nW,scan_speed_GHz_per_s,bin_center_MHz,counts\n\
                   1,0.0,up,5,5.88,0,1\n1,0.0,up,5,5.88,4,x\n";
        match read_scans(bad.as_bytes(), 4.0 * MHZ) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let nonmono = "scan_id,t_start_s,direction,power_nW,scan_speed_GHz_per_s,bin_center_MHz,counts\n\
                   1,0.0,up,5,5.88,0,1\n1,0.0,up,5,5.88,4,1\n1,0.0,up,5,5.88,2,1\n";
        match read_scans(nonmono.as_bytes(), 4.0 * MHZ) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sdr_examples() {
        let t = traj(&[0.0, 10.0 * MHZ, 4.0 * MHZ], 2.0);
        let r = spectral_diffusion_rate(&t, SdrMode::Absolute).unwrap();
        assert!((r.value - 4.0 * MHZ).abs() < 1e-6);
        let s = spectral_diffusion_rate(&t, SdrMode::Signed).unwrap();
        assert!((s.value - 1.0 * MHZ).abs() < 1e-6);
        let flat = traj(&[5.0; 4], 1.0);
        assert_eq!(spectral_diffusion_rate(&flat, SdrMode::Absolute).unwrap().value, 0.0);
        assert!(matches!(
            spectral_diffusion_rate(&traj(&[1.0], 1.0), SdrMode::Absolute),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn fit_scan_flags() {
        let truth = VoigtParams::new(1e6 * 4.0 * MHZ, 0.0, 5.0 * MHZ, 10.0 * MHZ).unwrap();
        let mut s = scan(vec![0; 101], 4.0 * MHZ);
        s.bin_centers = (-50..=50).map(|i| i as f64 * 4.0 * MHZ).collect();
        s.counts = s.bin_centers.iter().map(|&f| truth.value(f).round() as u64).collect();
        let f = fit_scan(&s, &VoigtFitOptions::default());
        assert!(f.usable && !f.low_count);

        let few = scan(vec![0, 1, 3, 6, 3, 1, 0, 0, 1, 0], 4.0 * MHZ);
        let f = fit_scan(&few, &VoigtFitOptions::default());
        assert!(f.low_count);

        let flat = scan(vec![4; 40], 4.0 * MHZ);
        assert!(!fit_scan(&flat, &VoigtFitOptions::default()).usable);
    }

    #[test]
    fn cumulative_of_identical_scans_is_constant() {
        let truth = VoigtParams::new(2e4 * 4.0 * MHZ, 100.0 * MHZ, 8.0 * MHZ, 6.0 * MHZ).unwrap();
        let mut s = scan(vec![0; 60], 4.0 * MHZ);
        s.counts = s.bin_centers.iter().map(|&f| truth.value(f).round() as u64).collect();
        let series = cumulative_inhomogeneous(&[s.clone(), s.clone(), s.clone()], Profile::Voigt, 3).unwrap();
        let first = series[0].unwrap();
        let single = fit_scan(&s, &VoigtFitOptions::default()).fit.unwrap().fwhm;
        assert!(((first - single) / single).abs() < 1e-9);
        for v in &series {
            assert!(((v.unwrap() - first) / first).abs() < 1e-6);
        }
    }

    #[test]
    fn postselection() {
        let gentle = vec![Some(60e6), Some(100e6), Some(150e6)];
        let jump = vec![Some(60e6), Some(360e6)];
        let (k, r) = postselect_trajectories(&[gentle.clone(), jump.clone()], DEFAULT_JUMP_THRESHOLD);
        assert_eq!((k, r), (vec![0], vec![1]));
        let (k, _) = postselect_trajectories(&[gentle, jump], f64::INFINITY);
        assert_eq!(k.len(), 2);
    }

    #[test]
    fn duty_cycle_examples() {
        assert_eq!(duty_cycle(6.0 * GHZ, 5.88 * GHZ, 6.0 * GHZ, 0.0, 1).unwrap(), 1.0);
        let on = on_resonance_time(29.0 * MHZ, 5.88 * GHZ).unwrap();
        assert!((on - 4.93e-3).abs() < 1e-5);
        let d = duty_cycle(29.0 * MHZ, 5.88 * GHZ, 6.0 * GHZ, 0.150, 2).unwrap();
        assert!((d - 0.0021).abs() < 0.0001);
        assert!(duty_cycle(1.0, 0.0, 1.0, 0.0, 1).is_err());
        assert!((resonance_dwell_diffusion(4.9e-3, 49.0 * MHZ) - 0.24 * MHZ).abs() < 0.001 * MHZ);
        assert_eq!(resonance_dwell_diffusion(0.0, 49.0 * MHZ), 0.0);
    }
}
