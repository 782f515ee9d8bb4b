use clap::Args;
use serde::{Deserialize, Serialize};

use nvspec::linewidth_mc::{self, GridPoint, ScanGenSpec};
use nvspec::par::Exec;
use nvspec::ple::{ScanFilterPolicy, DEFAULT_BIN_WIDTH};
use nvspec::units::MHZ;

use crate::config::List;
use crate::error::CliError;
use crate::Ctx;

pub const COMMAND: &str = "estimate-linewidth";

#[derive(Debug, Args, Serialize)]
pub struct Flags {
    /// CSV with one measured FWHM per row (a fits table works).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    /// Column holding the FWHMs in MHz.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
    /// Candidate Cauchy half-widths γ in MHz, e.g. 11:17:1.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_grid_mhz: Option<List>,
    /// Candidate mean photon numbers per scan.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_grid: Option<List>,
    /// Simulated scans per grid point.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub span_mhz: Option<f64>,
    /// Expected background events per scan.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_mean: Option<f64>,
    /// Scan binning of the simulated scans.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bin_width_mhz: Option<f64>,
    /// Histogram bin width for the linewidth comparison.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hist_bin_width_mhz: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct Params {
    pub input: String,
    pub column: String,
    pub gamma_grid_mhz: List,
    pub n_grid: List,
    pub iterations: usize,
    pub span_mhz: f64,
    pub noise_mean: f64,
    pub bin_width_mhz: f64,
    pub hist_bin_width_mhz: f64,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            input: String::new(),
            column: "fwhm_MHz".into(),
            gamma_grid_mhz: List((11..=17).map(f64::from).collect()),
            n_grid: List(vec![25.0, 30.0, 35.0]),
            iterations: 6000,
            span_mhz: 480.0,
            noise_mean: 0.0,
            bin_width_mhz: DEFAULT_BIN_WIDTH / MHZ,
            hist_bin_width_mhz: DEFAULT_BIN_WIDTH / MHZ,
        }
    }
}

#[derive(Debug, Serialize)]
struct Results {
    n_observed: usize,
    #[serde(rename = "gamma_best_MHz")]
    gamma_best_mhz: f64,
    #[serde(rename = "fwhm_best_MHz")]
    fwhm_best_mhz: f64,
    n_best: f64,
    #[serde(rename = "ci99_gamma_MHz")]
    ci99_gamma_mhz: (f64, f64),
    #[serde(rename = "ci99_fwhm_MHz")]
    ci99_fwhm_mhz: (f64, f64),
    s_min: f64,
    boundary_warning: bool,
}

#[derive(Debug, Serialize)]
struct GridRow {
    #[serde(rename = "gamma_MHz")]
    gamma_mhz: f64,
    n: f64,
    s: f64,
    retained: usize,
}

fn read_fwhms(path: &str, column: &str) -> Result<Vec<f64>, CliError> {
    let ctx = |e: csv::Error| CliError::Input(format!("{path}: {e}"));
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(ctx)?;
    let col = rdr
        .headers()
        .map_err(ctx)?
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| CliError::Input(format!("{path}: no column '{column}'")))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(ctx)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let cell = rec.get(col).unwrap_or("");
        if cell.is_empty() {
            continue;
        }
        let v: f64 = cell
            .parse()
            .map_err(|_| CliError::Input(format!("{path}:{line}: '{cell}' is not a number")))?;
        if !(v > 0.0) || !v.is_finite() {
            return Err(CliError::Input(format!("{path}:{line}: FWHM must be positive")));
        }
        out.push(v * MHZ);
    }
    Ok(out)
}

pub fn run(ctx: &mut Ctx, flags: &Flags) -> Result<(), CliError> {
    let p: Params = crate::config::resolve(COMMAND, &ctx.config, flags)?;
    if p.input.is_empty() {
        return Err(CliError::Input("--input is required".into()));
    }
    let fwhms = read_fwhms(&p.input, &p.column)?;
    if fwhms.is_empty() {
        return Err(CliError::Input(format!("{}: no linewidths", p.input)));
    }
    let observed = linewidth_mc::observed_histogram(&fwhms, p.hist_bin_width_mhz * MHZ)?;
    let template = ScanGenSpec {
        true_gamma: p.gamma_grid_mhz.0[0] * MHZ,
        mean_photons: p.n_grid.0[0],
        noise_mean: p.noise_mean,
        span: p.span_mhz * MHZ,
        bin_width: p.bin_width_mhz * MHZ,
        n_iterations: p.iterations,
    };
    let gammas: Vec<f64> = p.gamma_grid_mhz.0.iter().map(|g| g * MHZ).collect();
    let est = linewidth_mc::estimate_linewidth(
        &observed,
        &gammas,
        &p.n_grid.0,
        &template,
        &ScanFilterPolicy::default(),
        ctx.seed,
        Exec::Parallel,
    )?;
    let rows: Vec<GridRow> = est
        .grid
        .iter()
        .map(|g: &GridPoint| GridRow {
            gamma_mhz: g.gamma / MHZ,
            n: g.n,
            s: g.s,
            retained: g.retained,
        })
        .collect();
    ctx.out.table("grid", |w| {
        let mut cw = csv::Writer::from_writer(w);
        for r in &rows {
            cw.serialize(r).map_err(|e| nvspec::Error::Io(std::io::Error::other(e)))?;
        }
        cw.flush()?;
        Ok(())
    })?;
    let results = Results {
        n_observed: fwhms.len(),
        gamma_best_mhz: est.gamma_best / MHZ,
        fwhm_best_mhz: 2.0 * est.gamma_best / MHZ,
        n_best: est.n_best,
        ci99_gamma_mhz: (est.ci99.0 / MHZ, est.ci99.1 / MHZ),
        ci99_fwhm_mhz: (2.0 * est.ci99.0 / MHZ, 2.0 * est.ci99.1 / MHZ),
        s_min: est.s_min,
        boundary_warning: est.boundary_warning,
    };
    ctx.out.manifest(COMMAND, ctx.seed, &p, &results)
}
