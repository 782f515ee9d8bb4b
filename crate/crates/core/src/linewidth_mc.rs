//! Monte Carlo estimate of the homogeneous linewidth from low-count scans.
//!
//! Synthetic scans are drawn from a Cauchy line plus uniform noise, fitted
//! exactly like measured scans, and the resulting FWHM histograms are
//! compared with the observed one through S = Σ (O − E)²/E on a (γ, N) grid.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitkit::VoigtFitOptions;
use crate::par::Exec;
use crate::ple::{self, Direction, LineScan, ScanFilterPolicy};
use crate::rng::{self, domain};
use crate::units::MHZ;

/// Fitted linewidths at or below this value share one histogram bin.
pub const DEFAULT_UNDERFLOW_CAP: f64 = 15.0 * MHZ;
/// Minimum occupation of a merged histogram bin.
pub const MIN_BIN_COUNT: f64 = 5.0;
/// Δχ² for a 99% region with two free parameters.
pub const DELTA_S_99: f64 = 9.21;

/// Generator settings for synthetic scans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanGenSpec {
    /// Cauchy half-width γ (Hz); the line FWHM is 2γ.
    pub true_gamma: f64,
    /// Expected signal detections per scan.
    pub mean_photons: f64,
    /// Expected background events per scan.
    pub noise_mean: f64,
    /// Frequency window (Hz).
    pub span: f64,
    pub bin_width: f64,
    pub n_iterations: usize,
}

impl ScanGenSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.true_gamma > 0.0) || !(self.mean_photons >= 0.0) || !(self.noise_mean >= 0.0) {
            return Err(Error::invalid("gamma must be positive and photon means non-negative"));
        }
        if !(self.bin_width > 0.0) || !(self.span >= 20.0 * self.true_gamma) {
            return Err(Error::invalid(format!(
                "span {} Hz must be at least 20 gamma ({} Hz)",
                self.span,
                20.0 * self.true_gamma
            )));
        }
        Ok(())
    }

    /// Odd number of bins so the line center sits in the middle of a bin.
    fn n_bins(&self) -> usize {
        let n = (self.span / self.bin_width).round().max(1.0) as usize;
        n | 1
    }
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0)
}

fn generate_with(spec: &ScanGenSpec, rng: &mut ChaCha8Rng, scan_id: u64) -> LineScan {
    let n = spec.n_bins();
    let w = spec.bin_width;
    let left = -(n as f64) * w / 2.0;
    let right = -left;
    let mut counts = vec![0u64; n];
    let put = |f: f64, counts: &mut Vec<u64>| {
        let k = ((f - left) / w).floor() as isize;
        if k >= 0 && (k as usize) < n {
            counts[k as usize] += 1;
        }
    };
    for _ in 0..poisson(rng, spec.mean_photons) {
        // Cauchy truncated to the window by rejection
        let f = loop {
            let u: f64 = rng.random();
            let f = spec.true_gamma * (std::f64::consts::PI * (u - 0.5)).tan();
            if f >= left && f < right {
                break f;
            }
        };
        put(f, &mut counts);
    }
    for _ in 0..poisson(rng, spec.noise_mean) {
        let f = left + rng.random::<f64>() * (right - left);
        put(f, &mut counts);
    }
    LineScan {
        scan_id,
        t_start: 0.0,
        direction: Direction::Up,
        power: 0.0,
        scan_speed: 1.0,
        bin_centers: (0..n).map(|k| left + (k as f64 + 0.5) * w).collect(),
        counts,
    }
}

/// One synthetic scan; deterministic in `seed`.
pub fn generate_scan(spec: &ScanGenSpec, seed: u64) -> LineScan {
    generate_with(spec, &mut rng::stream(seed, domain::SCAN_GEN, 0), 0)
}

/// Fitted FWHMs of the retained synthetic scans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedFwhms {
    pub fwhms: Vec<f64>,
    pub n_generated: usize,
}

impl SimulatedFwhms {
    pub fn retained_fraction(&self) -> f64 {
        self.fwhms.len() as f64 / self.n_generated.max(1) as f64
    }
}

/// FWHM of a scan if it passes the fit threshold and the fit is usable.
pub fn scan_fwhm(scan: &LineScan, policy: &ScanFilterPolicy) -> Option<f64> {
    if scan.max_count() < policy.min_photons_per_bin_for_fit {
        return None;
    }
    let f = ple::fit_scan(scan, &VoigtFitOptions::default());
    if f.usable {
        f.fit.map(|v| v.fwhm)
    } else {
        None
    }
}

/// Generate, filter and fit `spec.n_iterations` scans. Iteration `i` draws
/// from stream `i` of the key derived from (`seed`, `stream_key`).
pub fn simulate_fwhms(spec: &ScanGenSpec, policy: &ScanFilterPolicy, seed: u64, stream_key: u64, exec: Exec) -> Result<SimulatedFwhms> {
    spec.validate()?;
    let key = rng::mix(&[seed, stream_key]);
    let fits = exec.map(spec.n_iterations, |i| {
        let mut r = rng::stream(key, domain::SCAN_GEN, i as u64);
        scan_fwhm(&generate_with(spec, &mut r, i as u64), policy)
    });
    Ok(SimulatedFwhms {
        fwhms: fits.into_iter().flatten().collect(),
        n_generated: spec.n_iterations,
    })
}

/// Occurrences of fitted linewidths per bin. `edges` has one more entry
/// than `occurrences`; the first bin starts at 0 and the last ends at +∞.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinewidthHistogram {
    pub edges: Vec<f64>,
    pub occurrences: Vec<f64>,
    pub underflow_bin_cap: f64,
}

impl LinewidthHistogram {
    pub fn from_fwhms(fwhms: &[f64], edges: &[f64], underflow_bin_cap: f64) -> Self {
        let mut occ = vec![0.0; edges.len() - 1];
        for &f in fwhms {
            // bins are (e_k, e_k+1]; the first also takes everything down to 0
            let k = edges[1..].partition_point(|&e| e < f).min(occ.len() - 1);
            occ[k] += 1.0;
        }
        Self {
            edges: edges.to_vec(),
            occurrences: occ,
            underflow_bin_cap,
        }
    }

    pub fn total(&self) -> f64 {
        self.occurrences.iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            occurrences: self.occurrences.iter().map(|o| o * factor).collect(),
            ..self.clone()
        }
    }

    /// Center of the most populated bin (the open last bin reports its lower edge).
    pub fn mode(&self) -> f64 {
        let (k, _) = self
            .occurrences
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty histogram");
        let hi = self.edges[k + 1];
        if hi.is_finite() {
            0.5 * (self.edges[k] + hi)
        } else {
            self.edges[k]
        }
    }
}

/// Bin edges: one underflow bin up to `cap`, then `width` bins merged
/// rightward until each holds at least `min_count` of `fwhms`; the remainder
/// joins the last full bin, which extends to +∞.
pub fn adaptive_edges(fwhms: &[f64], cap: f64, width: f64, min_count: f64) -> Vec<f64> {
    let max = fwhms.iter().cloned().fold(cap, f64::max);
    let n_fine = ((max - cap) / width).ceil().max(0.0) as usize + 1;
    let fine: Vec<f64> = (0..=n_fine).map(|k| cap + k as f64 * width).collect();
    let mut counts = vec![0.0; n_fine];
    for &f in fwhms.iter().filter(|&&f| f > cap) {
        let k = fine[1..].partition_point(|&e| e < f).min(n_fine - 1);
        counts[k] += 1.0;
    }
    let mut edges = vec![0.0, cap];
    let mut acc = 0.0;
    for k in 0..n_fine {
        acc += counts[k];
        if acc >= min_count {
            edges.push(fine[k + 1]);
            acc = 0.0;
        }
    }
    if edges.len() > 2 {
        // the trailing remainder belongs to the last full bin
        edges.pop();
    }
    edges.push(f64::INFINITY);
    edges
}

/// S = Σ (O − E)²/E. Bins where both are empty are skipped; an empty
/// expected bin with observations makes S infinite.
pub fn chi2_statistic(observed: &LinewidthHistogram, expected: &LinewidthHistogram) -> Result<f64> {
    if observed.edges.len() != expected.edges.len()
        || observed
            .edges
            .iter()
            .zip(&expected.edges)
            .any(|(a, b)| a != b && !(a.is_infinite() && b.is_infinite()))
    {
        return Err(Error::BinMismatch);
    }
    let mut s = 0.0;
    for (&o, &e) in observed.occurrences.iter().zip(&expected.occurrences) {
        if e > 0.0 {
            s += (o - e) * (o - e) / e;
        } else if o > 0.0 {
            return Ok(f64::INFINITY);
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub gamma: f64,
    pub n: f64,
    pub s: f64,
    pub retained: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinewidthEstimate {
    pub gamma_best: f64,
    pub n_best: f64,
    /// Hull of γ with S ≤ S_min + 9.21.
    pub ci99: (f64, f64),
    pub s_min: f64,
    /// The minimum lies on the edge of the γ or N grid.
    pub boundary_warning: bool,
    pub grid: Vec<GridPoint>,
}

/// Simulated FWHMs for every (γ, N) pair, γ-major. Computing these once lets
/// many observed histograms be scored against the same expectations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationGrid {
    pub gammas: Vec<f64>,
    pub ns: Vec<f64>,
    pub sims: Vec<SimulatedFwhms>,
}

pub fn simulate_grid(
    gamma_grid: &[f64],
    n_grid: &[f64],
    template: &ScanGenSpec,
    policy: &ScanFilterPolicy,
    seed: u64,
    exec: Exec,
) -> Result<ExpectationGrid> {
    if gamma_grid.is_empty() || n_grid.is_empty() {
        return Err(Error::invalid("gamma and N grids must be non-empty"));
    }
    let specs: Vec<ScanGenSpec> = gamma_grid
        .iter()
        .flat_map(|&g| {
            n_grid.iter().map(move |&n| ScanGenSpec {
                true_gamma: g,
                mean_photons: n,
                ..*template
            })
        })
        .collect();
    for s in &specs {
        s.validate()?;
    }
    // parallelism lives inside each grid point so output order is trivial
    let sims = specs
        .iter()
        .enumerate()
        .map(|(gi, s)| simulate_fwhms(s, policy, seed, gi as u64, exec))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExpectationGrid {
        gammas: gamma_grid.to_vec(),
        ns: n_grid.to_vec(),
        sims,
    })
}

/// Histogram of measured linewidths with the adaptive edges every
/// expectation is compared on.
pub fn observed_histogram(fwhms: &[f64], bin_width: f64) -> Result<LinewidthHistogram> {
    if fwhms.is_empty() {
        return Err(Error::EmptyEnsemble("no observed linewidths".into()));
    }
    let edges = adaptive_edges(fwhms, DEFAULT_UNDERFLOW_CAP, bin_width, MIN_BIN_COUNT);
    Ok(LinewidthHistogram::from_fwhms(fwhms, &edges, DEFAULT_UNDERFLOW_CAP))
}

/// Score an observed histogram against a simulated grid.
pub fn estimate_from_grid(observed: &LinewidthHistogram, grid: &ExpectationGrid) -> Result<LinewidthEstimate> {
    let n_obs = observed.total();
    if n_obs <= 0.0 {
        return Err(Error::EmptyEnsemble("observed histogram is empty".into()));
    }
    let mut points = Vec::with_capacity(grid.sims.len());
    for (gi, sim) in grid.sims.iter().enumerate() {
        let gamma = grid.gammas[gi / grid.ns.len()];
        let n = grid.ns[gi % grid.ns.len()];
        let s = if sim.fwhms.is_empty() {
            f64::INFINITY
        } else {
            let e = LinewidthHistogram::from_fwhms(&sim.fwhms, &observed.edges, observed.underflow_bin_cap);
            chi2_statistic(observed, &e.scaled(n_obs / sim.fwhms.len() as f64))?
        };
        points.push(GridPoint {
            gamma,
            n,
            s,
            retained: sim.fwhms.len(),
        });
    }
    let best = points
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.s.total_cmp(&b.1.s))
        .map(|(i, _)| i)
        .expect("non-empty grid");
    let s_min = points[best].s;
    if !s_min.is_finite() {
        return Err(Error::EmptyEnsemble("no grid point reproduces the observed bins".into()));
    }
    let inside: Vec<f64> = points
        .iter()
        .filter(|p| p.s <= s_min + DELTA_S_99)
        .map(|p| p.gamma)
        .collect();
    let lo = inside.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = inside.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let gb = points[best].gamma;
    let nb = points[best].n;
    let edge = |v: f64, g: &[f64]| g.len() > 1 && (v == g[0] || v == g[g.len() - 1]);
    Ok(LinewidthEstimate {
        gamma_best: gb,
        n_best: nb,
        ci99: (lo, hi),
        s_min,
        boundary_warning: edge(gb, &grid.gammas) || edge(nb, &grid.ns),
        grid: points,
    })
}

/// Full estimate: simulate every grid point, then score.
pub fn estimate_linewidth(
    observed: &LinewidthHistogram,
    gamma_grid: &[f64],
    n_grid: &[f64],
    template: &ScanGenSpec,
    policy: &ScanFilterPolicy,
    seed: u64,
    exec: Exec,
) -> Result<LinewidthEstimate> {
    if (template.n_iterations as f64) < observed.total() {
        return Err(Error::invalid(
            "simulate at least as many iterations as there are observed scans",
        ));
    }
    let grid = simulate_grid(gamma_grid, n_grid, template, policy, seed, exec)?;
    estimate_from_grid(observed, &grid)
}

/// Simulated histogram for one spec, binned with adaptive edges of its own.
pub fn simulate_linewidth_histogram(spec: &ScanGenSpec, policy: &ScanFilterPolicy, seed: u64, exec: Exec) -> Result<LinewidthHistogram> {
    let sim = simulate_fwhms(spec, policy, seed, 0, exec)?;
    if sim.fwhms.is_empty() {
        return Err(Error::EmptyEnsemble(format!(
            "all {} iterations were rejected",
            sim.n_generated
        )));
    }
    let edges = adaptive_edges(&sim.fwhms, DEFAULT_UNDERFLOW_CAP, spec.bin_width, MIN_BIN_COUNT);
    Ok(LinewidthHistogram::from_fwhms(&sim.fwhms, &edges, DEFAULT_UNDERFLOW_CAP))
}
