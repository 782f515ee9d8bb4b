//! Bounded Levenberg–Marquardt least squares, the model-specific fits built
//! on it, and inverse-variance averaging.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specfun::{self, FwhmMode, VoigtParams};

/// A value with its variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedValue {
    pub value: f64,
    pub variance: f64,
}

impl WeightedValue {
    pub fn new(value: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0) || !variance.is_finite() || !value.is_finite() {
            return Err(Error::invalid(format!(
                "weighted value needs a finite value and positive variance, got {value} ± {variance}"
            )));
        }
        Ok(Self { value, variance })
    }

    pub fn from_stderr(value: f64, stderr: f64) -> Result<Self> {
        Self::new(value, stderr * stderr)
    }

    pub fn stderr(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Σ(v/σ²)/Σ(1/σ²) with variance 1/Σ(1/σ²).
pub fn inverse_variance_mean(values: &[WeightedValue]) -> Result<WeightedValue> {
    if values.is_empty() {
        return Err(Error::InsufficientData("inverse-variance mean of an empty set".into()));
    }
    let mut wsum = 0.0;
    let mut vsum = 0.0;
    for v in values {
        if !(v.variance > 0.0) || !v.variance.is_finite() {
            return Err(Error::invalid(format!("variance must be positive, got {}", v.variance)));
        }
        let w = 1.0 / v.variance;
        wsum += w;
        vsum += w * v.value;
    }
    Ok(WeightedValue {
        value: vsum / wsum,
        variance: 1.0 / wsum,
    })
}

/// A model `f(x; θ)` with a parameter gradient.
pub trait Model: Sync {
    fn n_params(&self) -> usize;

    fn eval(&self, x: f64, p: &[f64]) -> f64;

    /// Writes ∂f/∂θ into `grad` and returns f. Central differences by default.
    fn eval_grad(&self, x: f64, p: &[f64], grad: &mut [f64]) -> f64 {
        let mut q = p.to_vec();
        for i in 0..p.len() {
            let h = 1e-7 * p[i].abs().max(1e-8);
            q[i] = p[i] + h;
            let fp = self.eval(x, &q);
            q[i] = p[i] - h;
            let fm = self.eval(x, &q);
            q[i] = p[i];
            grad[i] = (fp - fm) / (2.0 * h);
        }
        self.eval(x, p)
    }
}

/// Wraps a closure as a [`Model`] with finite-difference gradients.
pub struct FnModel<F> {
    n: usize,
    f: F,
}

impl<F: Fn(f64, &[f64]) -> f64 + Sync> FnModel<F> {
    pub fn new(n_params: usize, f: F) -> Self {
        Self { n: n_params, f }
    }
}

impl<F: Fn(f64, &[f64]) -> f64 + Sync> Model for FnModel<F> {
    fn n_params(&self) -> usize {
        self.n
    }
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        (self.f)(x, p)
    }
}

/// Closed interval per parameter; infinite ends are allowed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub lower: f64,
    pub upper: f64,
}

impl Bound {
    pub const FREE: Bound = Bound {
        lower: f64::NEG_INFINITY,
        upper: f64::INFINITY,
    };
    pub const POSITIVE: Bound = Bound {
        lower: 0.0,
        upper: f64::INFINITY,
    };

    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lower, self.upper)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    /// Relative (scaled) parameter-change tolerance.
    pub xtol: f64,
    /// Largest allowed cosine between the residual and any Jacobian column.
    pub gtol: f64,
    pub max_iter: usize,
    /// Keep the residual norm of every accepted iterate.
    pub record_trace: bool,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            xtol: 1e-8,
            gtol: 1e-6,
            max_iter: 200,
            record_trace: cfg!(debug_assertions),
        }
    }
}

/// Fitted parameters and their Gauss–Newton uncertainties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub params: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    /// Sum of squared residuals.
    pub residual_norm: f64,
    pub n_points: usize,
    pub converged: bool,
    pub covariance_valid: bool,
    pub iterations: usize,
    /// Residual norms of accepted iterates (empty unless recorded).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<f64>,
}

impl FitResult {
    fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.params[i])
    }

    pub fn stderr(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.stderrs[i])
    }

    /// Root-mean-square residual.
    pub fn rmse(&self) -> f64 {
        (self.residual_norm / self.n_points as f64).sqrt()
    }

    fn with_names(mut self, names: &[&str]) -> Self {
        self.names = names.iter().map(|s| s.to_string()).collect();
        self
    }
}

fn check_series(x: &[f64], y: &[f64], n_params: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!("x has {} points but y has {}", x.len(), y.len())));
    }
    if x.len() < n_params {
        return Err(Error::InsufficientData(format!(
            "{} points for {} parameters",
            x.len(),
            n_params
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in fit data"));
    }
    Ok(())
}

struct Linearization {
    jac: DMatrix<f64>,
    resid: DVector<f64>,
    cost: f64,
}

fn linearize<M: Model + ?Sized>(model: &M, x: &[f64], y: &[f64], p: &[f64]) -> Linearization {
    let n = x.len();
    let k = p.len();
    let mut jac = DMatrix::zeros(n, k);
    let mut resid = DVector::zeros(n);
    let mut g = vec![0.0; k];
    for i in 0..n {
        let f = model.eval_grad(x[i], p, &mut g);
        resid[i] = y[i] - f;
        for j in 0..k {
            jac[(i, j)] = g[j];
        }
    }
    let cost = resid.norm_squared();
    Linearization { jac, resid, cost }
}

fn cost_at<M: Model + ?Sized>(model: &M, x: &[f64], y: &[f64], p: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| (yi - model.eval(xi, p)).powi(2))
        .sum()
}

/// Parameters on (or within 1e-6 relative of) a bound with the descent
/// direction pointing out.
fn active_set(p: &[f64], bounds: &[Bound], g: &DVector<f64>) -> Vec<bool> {
    (0..p.len())
        .map(|i| {
            let tol = 1e-6 * p[i].abs();
            (p[i] - bounds[i].lower <= tol && g[i] <= 0.0) || (bounds[i].upper - p[i] <= tol && g[i] >= 0.0)
        })
        .collect()
}

/// Inverse of a symmetric positive-definite matrix via diagonal scaling and
/// Cholesky, or `None` when numerically singular.
fn spd_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let d: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    if d.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return None;
    }
    let s = DMatrix::from_fn(n, n, |i, j| a[(i, j)] / (d[i] * d[j]).sqrt());
    let chol = s.cholesky()?;
    let inv = chol.inverse();
    // reject near-singular systems
    let cond_proxy = inv.diagonal().max();
    if !cond_proxy.is_finite() || cond_proxy > 1e14 {
        return None;
    }
    Some(DMatrix::from_fn(n, n, |i, j| inv[(i, j)] / (d[i] * d[j]).sqrt()))
}

fn gradient_ok(lin: &Linearization, y: &[f64], free: &[bool], gtol: f64) -> bool {
    let rnorm = lin.cost.sqrt();
    let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    // residuals near the accuracy of the special functions carry no direction
    if rnorm <= 1e-8 * ynorm {
        return true;
    }
    let g = lin.jac.transpose() * &lin.resid;
    (0..free.len()).filter(|&j| free[j]).all(|j| {
        let cn = lin.jac.column(j).norm();
        cn == 0.0 || g[j].abs() / (cn * rnorm) <= gtol
    })
}

/// Minimise Σ(y − f(x; θ))² within `bounds` by projected Levenberg–Marquardt.
///
/// Parameters pinned to a bound at the solution are held fixed and carry zero
/// variance. A singular normal matrix on the free parameters yields a
/// non-converged result with `covariance_valid = false`.
pub fn fit_least_squares<M: Model + ?Sized>(
    model: &M,
    x: &[f64],
    y: &[f64],
    init: &[f64],
    bounds: &[Bound],
    opts: &LmOptions,
) -> Result<FitResult> {
    let k = model.n_params();
    check_series(x, y, k)?;
    if init.len() != k || bounds.len() != k {
        return Err(Error::invalid("parameter and bound counts must match the model"));
    }
    for (i, (&v, b)) in init.iter().zip(bounds).enumerate() {
        if !v.is_finite() || v < b.lower || v > b.upper {
            return Err(Error::invalid(format!("initial parameter {i} = {v} outside its bounds")));
        }
    }

    let mut p = init.to_vec();
    let mut lin = linearize(model, x, y, &p);
    let mut trace = Vec::new();
    if opts.record_trace {
        trace.push(lin.cost);
    }
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let jtj = lin.jac.transpose() * &lin.jac;
        let g = lin.jac.transpose() * &lin.resid;
        let active = active_set(&p, bounds, &g);
        let free: Vec<usize> = (0..k).filter(|&i| !active[i]).collect();
        if free.is_empty() || lin.cost == 0.0 {
            converged = true;
            break;
        }
        let m = free.len();
        let diag: Vec<f64> = free.iter().map(|&i| jtj[(i, i)].max(1e-300)).collect();

        let mut accepted = false;
        while lambda < 1e20 {
            let a = DMatrix::from_fn(m, m, |r, c| {
                let v = jtj[(free[r], free[c])];
                if r == c {
                    v + lambda * diag[r]
                } else {
                    v
                }
            });
            let b = DVector::from_fn(m, |r, _| g[free[r]]);
            let delta = match a.clone().cholesky() {
                Some(ch) => ch.solve(&b),
                None => match a.lu().solve(&b) {
                    Some(d) => d,
                    None => {
                        lambda *= 10.0;
                        continue;
                    }
                },
            };
            let mut trial = p.clone();
            for (r, &i) in free.iter().enumerate() {
                trial[i] = bounds[i].clamp(p[i] + delta[r]);
            }
            let c = cost_at(model, x, y, &trial);
            if c.is_finite() && c < lin.cost {
                let step: f64 = free
                    .iter()
                    .enumerate()
                    .map(|(r, &i)| diag[r] * (trial[i] - p[i]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let scale: f64 = free
                    .iter()
                    .enumerate()
                    .map(|(r, &i)| diag[r] * trial[i].powi(2))
                    .sum::<f64>()
                    .sqrt();
                p = trial;
                lin = linearize(model, x, y, &p);
                if opts.record_trace {
                    trace.push(lin.cost);
                }
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if step <= opts.xtol * scale {
                    // a small step alone can stall on a weakly coupled parameter
                    let g = lin.jac.transpose() * &lin.resid;
                    let free: Vec<bool> = active_set(&p, bounds, &g).iter().map(|a| !a).collect();
                    converged = gradient_ok(&lin, y, &free, opts.gtol);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no descent possible at machine precision: a stationary point
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }

    let g = lin.jac.transpose() * &lin.resid;
    let active = active_set(&p, bounds, &g);
    let free: Vec<usize> = (0..k).filter(|&i| !active[i]).collect();
    if converged && !gradient_ok(&lin, y, &active.iter().map(|a| !a).collect::<Vec<_>>(), opts.gtol) {
        converged = false;
    }

    let n = x.len();
    let dof = n.saturating_sub(free.len()).max(1);
    let s2 = lin.cost / dof as f64;
    let jtj = lin.jac.transpose() * &lin.jac;
    let sub = DMatrix::from_fn(free.len(), free.len(), |r, c| jtj[(free[r], free[c])]);
    let mut covariance = vec![vec![0.0; k]; k];
    let covariance_valid = match spd_inverse(&sub) {
        Some(inv) => {
            for (r, &i) in free.iter().enumerate() {
                for (c, &j) in free.iter().enumerate() {
                    covariance[i][j] = s2 * 0.5 * (inv[(r, c)] + inv[(c, r)]);
                }
            }
            true
        }
        None => free.is_empty(),
    };
    if !covariance_valid {
        converged = false;
        for row in covariance.iter_mut() {
            row.fill(f64::NAN);
        }
    }
    let stderrs = (0..k).map(|i| covariance[i][i].sqrt()).collect();

    Ok(FitResult {
        names: (0..k).map(|i| format!("p{i}")).collect(),
        params: p,
        stderrs,
        covariance,
        residual_norm: lin.cost,
        n_points: n,
        converged,
        covariance_valid,
        iterations,
        trace,
    })
}

/// Ordinary least-squares line y = slope·x + intercept.
fn linear_regression(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

fn distinct_count(x: &[f64]) -> usize {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

struct Saturation;

impl Model for Saturation {
    fn n_params(&self) -> usize {
        2
    }
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        p[0] * x / (x + p[1])
    }
    fn eval_grad(&self, x: f64, p: &[f64], g: &mut [f64]) -> f64 {
        let d = x + p[1];
        g[0] = x / d;
        g[1] = -p[0] * x / (d * d);
        p[0] * x / d
    }
}

/// Fit I = I_sat·P/(P + P_sat) to background-subtracted intensities.
pub fn fit_saturation(powers: &[f64], intensities: &[f64]) -> Result<FitResult> {
    check_series(powers, intensities, 2)?;
    if distinct_count(powers) < 3 {
        return Err(Error::InsufficientData("saturation fit needs at least 3 distinct powers".into()));
    }
    if intensities.iter().all(|&v| v == 0.0) {
        return Err(Error::NoSignal("all intensities are zero".into()));
    }
    // 1/I = 1/I_sat + (P_sat/I_sat)/P on the positive points
    let (ix, iy): (Vec<f64>, Vec<f64>) = powers
        .iter()
        .zip(intensities)
        .filter(|(p, i)| **p > 0.0 && **i > 0.0)
        .map(|(p, i)| (1.0 / p, 1.0 / i))
        .unzip();
    let imax = intensities.iter().cloned().fold(f64::MIN, f64::max);
    let pmid = {
        let mut s = powers.to_vec();
        s.sort_by(f64::total_cmp);
        s[s.len() / 2].max(f64::MIN_POSITIVE)
    };
    let mut init = [2.0 * imax, pmid];
    if ix.len() >= 2 {
        let (slope, icpt) = linear_regression(&ix, &iy);
        if icpt > 0.0 && slope > 0.0 {
            init = [1.0 / icpt, slope / icpt];
        }
    }
    let r = fit_least_squares(
        &Saturation,
        powers,
        intensities,
        &init,
        &[Bound::POSITIVE, Bound::POSITIVE],
        &LmOptions::default(),
    )?;
    Ok(r.with_names(&["I_sat", "P_sat"]))
}

struct PowerBroadening;

impl Model for PowerBroadening {
    fn n_params(&self) -> usize {
        2
    }
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        p[0] * (1.0 + x / p[1]).sqrt()
    }
    fn eval_grad(&self, x: f64, p: &[f64], g: &mut [f64]) -> f64 {
        let s = (1.0 + x / p[1]).sqrt();
        g[0] = s;
        g[1] = -p[0] * x / (2.0 * s * p[1] * p[1]);
        p[0] * s
    }
}

/// Fit γ = γ₀·√(1 + P/P_sat).
pub fn fit_power_broadening(powers: &[f64], fwhms: &[f64]) -> Result<FitResult> {
    check_series(powers, fwhms, 2)?;
    if powers.len() < 3 {
        return Err(Error::InsufficientData("power-broadening fit needs at least 3 points".into()));
    }
    if fwhms.iter().any(|&f| f <= 0.0) {
        return Err(Error::invalid("linewidths must be positive"));
    }
    // γ² = γ₀² + (γ₀²/P_sat)·P
    let sq: Vec<f64> = fwhms.iter().map(|f| f * f).collect();
    let (slope, icpt) = linear_regression(powers, &sq);
    let fmin = fwhms.iter().cloned().fold(f64::MAX, f64::min);
    let pmax = powers.iter().cloned().fold(f64::MIN, f64::max).max(f64::MIN_POSITIVE);
    let init = if icpt > 0.0 && slope > 0.0 {
        [icpt.sqrt(), icpt / slope]
    } else {
        [fmin, pmax]
    };
    let r = fit_least_squares(
        &PowerBroadening,
        powers,
        fwhms,
        &init,
        &[Bound::POSITIVE, Bound::new(f64::MIN_POSITIVE, f64::INFINITY)],
        &LmOptions::default(),
    )?;
    Ok(r.with_names(&["gamma_0", "P_sat"]))
}

struct PowerLaw {
    offset: bool,
}

impl Model for PowerLaw {
    fn n_params(&self) -> usize {
        if self.offset {
            3
        } else {
            2
        }
    }
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        let x0 = if self.offset { p[2] } else { 0.0 };
        p[0] * (x - x0).powf(p[1])
    }
    fn eval_grad(&self, x: f64, p: &[f64], g: &mut [f64]) -> f64 {
        let x0 = if self.offset { p[2] } else { 0.0 };
        let u = x - x0;
        let pw = u.powf(p[1]);
        g[0] = pw;
        g[1] = p[0] * pw * u.ln();
        if self.offset {
            g[2] = -p[0] * p[1] * pw / u;
        }
        p[0] * pw
    }
}

/// Fit f(x) = b·(x − x₀)^a with x₀ < min(x); `with_offset = false` pins x₀ = 0.
///
/// Starting values come from a log–log regression when every y is positive.
pub fn fit_power_law(x: &[f64], y: &[f64], with_offset: bool) -> Result<FitResult> {
    let model = PowerLaw { offset: with_offset };
    check_series(x, y, model.n_params())?;
    let xmin = x.iter().cloned().fold(f64::MAX, f64::min);
    let xmax = x.iter().cloned().fold(f64::MIN, f64::max);
    if !with_offset && xmin <= 0.0 {
        return Err(Error::invalid("power law without offset needs x > 0"));
    }
    let range = (xmax - xmin).max(xmin.abs()).max(f64::MIN_POSITIVE);
    let x0_upper = xmin - 1e-9 * range;
    let x0_init = if with_offset && xmin <= 0.0 {
        xmin - 0.1 * range
    } else {
        0.0_f64.min(x0_upper)
    };

    let mut init = vec![1.0, 1.0];
    if y.iter().all(|&v| v > 0.0) {
        let lx: Vec<f64> = x.iter().map(|v| (v - x0_init).ln()).collect();
        let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
        let (a, lb) = linear_regression(&lx, &ly);
        init = vec![lb.exp(), a];
    } else {
        let ymax = y.iter().cloned().fold(f64::MIN, f64::max);
        init[0] = ymax / (xmax - x0_init);
    }
    let mut bounds = vec![Bound::FREE, Bound::FREE];
    if with_offset {
        init.push(x0_init);
        bounds.push(Bound::new(f64::NEG_INFINITY, x0_upper));
    }
    let r = fit_least_squares(&model, x, y, &init, &bounds, &LmOptions::default())?;
    if with_offset {
        return Ok(r.with_names(&["b", "a", "x_0"]));
    }
    let mut r = r.with_names(&["b", "a"]);
    r.names.push("x_0".into());
    r.params.push(0.0);
    r.stderrs.push(0.0);
    for row in r.covariance.iter_mut() {
        row.push(0.0);
    }
    r.covariance.push(vec![0.0; 3]);
    Ok(r)
}

struct ExpDecay;

impl Model for ExpDecay {
    fn n_params(&self) -> usize {
        2
    }
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        p[0] * (-p[1] * x).exp()
    }
    fn eval_grad(&self, x: f64, p: &[f64], g: &mut [f64]) -> f64 {
        let e = (-p[1] * x).exp();
        g[0] = e;
        g[1] = -p[0] * x * e;
        p[0] * e
    }
}

/// Fit y = y₀·exp(−rate·x).
pub fn fit_exponential_decay(x: &[f64], y: &[f64]) -> Result<FitResult> {
    check_series(x, y, 2)?;
    if x.len() < 3 {
        return Err(Error::InsufficientData("exponential fit needs at least 3 points".into()));
    }
    if y.iter().any(|&v| v <= 0.0) {
        return Err(Error::invalid("exponential decay fit needs y > 0"));
    }
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (slope, icpt) = linear_regression(x, &ly);
    let r = fit_least_squares(
        &ExpDecay,
        x,
        y,
        &[icpt.exp(), -slope],
        &[Bound::POSITIVE, Bound::FREE],
        &LmOptions::default(),
    )?;
    Ok(r.with_names(&["y0", "rate"]))
}

struct GaussianModel;

impl Model for GaussianModel {
    fn n_params(&self) -> usize {
        3
    }
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        specfun::gaussian_pdf(x, p[1], p[2]) * p[0]
    }
    fn eval_grad(&self, x: f64, p: &[f64], g: &mut [f64]) -> f64 {
        let u = (x - p[1]) / p[2];
        let f = specfun::gaussian_pdf(x, p[1], p[2]);
        g[0] = f;
        g[1] = p[0] * f * u / p[2];
        g[2] = p[0] * f * (u * u - 1.0) / p[2];
        p[0] * f
    }
}

/// Area-normalised Gaussian fit with parameters (amplitude, center, sigma).
/// Returns the fit and its FWHM with standard error.
pub fn fit_gaussian(x: &[f64], y: &[f64]) -> Result<(FitResult, WeightedValue)> {
    check_series(x, y, 3)?;
    let init = voigt_initial_guess(x, y).ok_or_else(|| Error::NoSignal("no positive counts to fit".into()))?;
    let xmin = x.iter().cloned().fold(f64::MAX, f64::min);
    let xmax = x.iter().cloned().fold(f64::MIN, f64::max);
    let pitch = (xmax - xmin) / (x.len().max(2) - 1) as f64;
    let sigma0 = 2.0 * init[2];
    let a0 = init[0] * 0.5 * 1.064;
    let mut fit = fit_least_squares(
        &GaussianModel,
        x,
        y,
        &[a0, init[1], sigma0],
        &[Bound::POSITIVE, Bound::new(xmin, xmax), Bound::new(1e-4 * pitch, f64::INFINITY)],
        &LmOptions {
            record_trace: false,
            ..LmOptions::default()
        },
    )?
    .with_names(&["amplitude", "center", "sigma"]);
    let fwhm = specfun::GAUSS_FWHM_PER_SIGMA * fit.params[2];
    if !(fwhm < xmax - xmin) {
        fit.converged = false;
    }
    let err = specfun::GAUSS_FWHM_PER_SIGMA * fit.stderrs[2];
    let wv = WeightedValue {
        value: fwhm,
        variance: if err.is_finite() { err * err } else { f64::NAN },
    };
    Ok((fit, wv))
}

/// Voigt line model with parameters (A, µ, σ, γ).
pub struct VoigtModel;

impl Model for VoigtModel {
    fn n_params(&self) -> usize {
        4
    }
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        voigt_of(p).value(x)
    }
    fn eval_grad(&self, x: f64, p: &[f64], g: &mut [f64]) -> f64 {
        let (v, d) = voigt_of(p).value_and_grad(x);
        g.copy_from_slice(&d);
        v
    }
}

/// Voigt with σ = γ tied, parameters (A, µ, σ).
struct TiedVoigtModel;

impl Model for TiedVoigtModel {
    fn n_params(&self) -> usize {
        3
    }
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        voigt_of(&[p[0], p[1], p[2], p[2]]).value(x)
    }
    fn eval_grad(&self, x: f64, p: &[f64], g: &mut [f64]) -> f64 {
        let (v, d) = voigt_of(&[p[0], p[1], p[2], p[2]]).value_and_grad(x);
        g[0] = d[0];
        g[1] = d[1];
        g[2] = d[2] + d[3];
        v
    }
}

fn voigt_of(p: &[f64]) -> VoigtParams {
    VoigtParams {
        amplitude: p[0],
        center: p[1],
        sigma: p[2],
        gamma: p[3],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoigtFitOptions {
    /// Fit with σ = γ (reported through the 3.6013σ rule).
    pub tie_widths: bool,
    /// How the FWHM is derived from the untied fit.
    pub fwhm_mode: FwhmMode,
    pub init: InitStrategy,
}

/// How starting values are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// Brightest bin and width at half maximum; suited to single lines.
    #[default]
    HalfMax,
    /// Intensity-weighted mean and spread; suited to sums of many lines.
    Moments,
}

impl Default for VoigtFitOptions {
    fn default() -> Self {
        Self {
            tie_widths: false,
            fwhm_mode: FwhmMode::Olivero,
            init: InitStrategy::HalfMax,
        }
    }
}

/// Voigt fit with the derived FWHM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoigtFit {
    pub params: VoigtParams,
    pub fit: FitResult,
    pub fwhm: f64,
    /// Standard error of the FWHM (zero if the covariance is unavailable).
    pub fwhm_stderr: f64,
}

impl VoigtFit {
    pub fn center(&self) -> Result<WeightedValue> {
        WeightedValue::from_stderr(self.params.center, self.fit.stderrs[1])
    }

    pub fn fwhm_value(&self) -> Result<WeightedValue> {
        WeightedValue::from_stderr(self.fwhm, self.fwhm_stderr)
    }
}

/// Starting values for a single-peak Voigt fit.
///
/// µ is the brightest bin, the FWHM guess is the width at half maximum, and it
/// is split equally between the Gaussian and Lorentzian parts.
pub fn voigt_initial_guess(x: &[f64], y: &[f64]) -> Option<[f64; 4]> {
    let (imax, &peak) = y.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    if !(peak > 0.0) {
        return None;
    }
    let pitch = if x.len() > 1 {
        (x[x.len() - 1] - x[0]).abs() / (x.len() - 1) as f64
    } else {
        1.0
    };
    let half = 0.5 * peak;
    let mut lo = imax;
    while lo > 0 && y[lo - 1] >= half {
        lo -= 1;
    }
    let mut hi = imax;
    while hi + 1 < y.len() && y[hi + 1] >= half {
        hi += 1;
    }
    let fwhm = ((x[hi] - x[lo]).abs() + pitch).max(pitch);
    let sigma = 0.5 * fwhm / specfun::GAUSS_FWHM_PER_SIGMA;
    let gamma = 0.25 * fwhm;
    Some([peak * fwhm, x[imax], sigma, gamma])
}

/// Starting values from the intensity-weighted mean and standard deviation.
pub fn voigt_moments_guess(x: &[f64], y: &[f64]) -> Option<[f64; 4]> {
    let total: f64 = y.iter().filter(|v| **v > 0.0).sum();
    if !(total > 0.0) {
        return None;
    }
    let w = |v: f64| v.max(0.0);
    let mean = x.iter().zip(y).map(|(a, &b)| a * w(b)).sum::<f64>() / total;
    let var = x.iter().zip(y).map(|(a, &b)| (a - mean).powi(2) * w(b)).sum::<f64>() / total;
    let pitch = if x.len() > 1 {
        (x[x.len() - 1] - x[0]).abs() / (x.len() - 1) as f64
    } else {
        1.0
    };
    let fwhm = (specfun::GAUSS_FWHM_PER_SIGMA * var.sqrt()).max(pitch);
    Some([total * pitch, mean, 0.5 * fwhm / specfun::GAUSS_FWHM_PER_SIGMA, 0.25 * fwhm])
}

/// Least-squares Voigt fit of a single line.
///
/// A fit whose FWHM exceeds the sampled span is reported as not converged:
/// there is no resolved peak in the window.
pub fn fit_voigt(x: &[f64], y: &[f64], opts: &VoigtFitOptions) -> Result<VoigtFit> {
    check_series(x, y, if opts.tie_widths { 3 } else { 4 })?;
    let guess = match opts.init {
        InitStrategy::HalfMax => voigt_initial_guess(x, y),
        InitStrategy::Moments => voigt_moments_guess(x, y),
    };
    let init = guess.ok_or_else(|| Error::NoSignal("no positive counts to fit".into()))?;
    let xmin = x.iter().cloned().fold(f64::MAX, f64::min);
    let xmax = x.iter().cloned().fold(f64::MIN, f64::max);
    let span = xmax - xmin;
    let pitch = span / (x.len().max(2) - 1) as f64;
    let width_floor = 1e-4 * pitch.max(f64::MIN_POSITIVE);
    let width = Bound::new(width_floor, f64::INFINITY);
    let centre = Bound::new(xmin, xmax);
    let lm = LmOptions {
        record_trace: false,
        ..LmOptions::default()
    };

    let (params, fit, fwhm, fwhm_var) = if opts.tie_widths {
        let s0 = 0.5 * (init[2] + init[3]);
        let fit = fit_least_squares(
            &TiedVoigtModel,
            x,
            y,
            &[init[0], init[1], s0],
            &[Bound::POSITIVE, centre, width],
            &lm,
        )?
        .with_names(&["amplitude", "center", "sigma"]);
        let p = &fit.params;
        let vp = VoigtParams {
            amplitude: p[0],
            center: p[1],
            sigma: p[2],
            gamma: p[2],
        };
        let f = specfun::voigt_fwhm(&vp, FwhmMode::Lmfit3p6013)?;
        let var = specfun::TIED_FWHM_PER_SIGMA.powi(2) * fit.covariance[2][2];
        (vp, fit, f, var)
    } else {
        let init = [init[0], init[1], init[2].max(width_floor), init[3].max(width_floor)];
        let fit = fit_least_squares(
            &VoigtModel,
            x,
            y,
            &init,
            &[Bound::POSITIVE, centre, width, width],
            &lm,
        )?
        .with_names(&["amplitude", "center", "sigma", "gamma"]);
        let vp = voigt_of(&fit.params);
        let f = specfun::voigt_fwhm(&vp, opts.fwhm_mode)?;
        let (ds, dg) = specfun::olivero_fwhm_grad(vp.sigma, vp.gamma);
        let c = &fit.covariance;
        let var = ds * ds * c[2][2] + 2.0 * ds * dg * c[2][3] + dg * dg * c[3][3];
        (vp, fit, f, var)
    };

    let mut fit = fit;
    if !(fwhm < span) {
        fit.converged = false;
    }
    let fwhm_stderr = if fwhm_var.is_finite() { fwhm_var.max(0.0).sqrt() } else { 0.0 };
    Ok(VoigtFit {
        params,
        fit,
        fwhm,
        fwhm_stderr,
    })
}
