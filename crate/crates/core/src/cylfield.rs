//! Point charges in an infinite dielectric cylinder and the Stark response
//! of an emitter on its axis.
//!
//! The field at the emitter is the Coulomb field in the cylinder medium
//! plus a correction from the surface polarization charge. Only the m = 0
//! term of the cylinder Green's function contributes on the axis; its
//! z-component is a single oscillatory integral over k.
//!
//! The correction is normalized against the same Fourier representation as
//! the Coulomb term, 1/r = (2/π) ∫ K0(kρ) cos(kz) dk, and its sign follows
//! from E = −∇φ applied to the polarization potential.

use nalgebra::{Matrix2, Matrix6, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::bessel::{i01e, i0e, k01e};
use crate::error::{Error, Result};
use crate::quad::{self, FixedRule, QuadSpec};
use crate::units::{ELEMENTARY_CHARGE, EPSILON_0, NM};

/// Cartesian vector (x, y, z); fields in V/m.
pub type Vec3 = [f64; 3];

/// Upper limit of the k integral in units of 1/R0. The kernel falls off
/// like e^{-kR0} or faster, so e^{-30} is below 1e-12.
pub const K_MAX_R0: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PillarGeometry {
    /// Radius R0 (m).
    pub radius: f64,
    /// Height (m); only trap placement uses it.
    pub height: f64,
    /// Relative permittivity inside the pillar.
    pub eps_inside: f64,
    /// Relative permittivity outside.
    pub eps_outside: f64,
    /// Tilt of the emitter quantization axis from the cylinder axis (rad),
    /// as a rotation about x.
    pub nv_axis_tilt: f64,
}

impl Default for PillarGeometry {
    fn default() -> Self {
        Self {
            radius: 125.0 * NM,
            height: 1600.0 * NM,
            eps_inside: 5.7,
            eps_outside: 1.0,
            nv_axis_tilt: 0.0,
        }
    }
}

impl PillarGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !(self.height > 0.0) {
            return Err(Error::invalid("pillar radius and height must be positive"));
        }
        if !(self.eps_inside >= 1.0) || !(self.eps_outside >= 1.0) {
            return Err(Error::invalid("relative permittivities must be at least 1"));
        }
        if !self.nv_axis_tilt.is_finite() {
            return Err(Error::invalid("axis tilt must be finite"));
        }
        Ok(())
    }

    /// Express a lab-frame field in the emitter frame.
    pub fn to_nv_frame(&self, e: Vec3) -> Vec3 {
        if self.nv_axis_tilt == 0.0 {
            return e;
        }
        let (s, c) = self.nv_axis_tilt.sin_cos();
        [e[0], c * e[1] + s * e[2], -s * e[1] + c * e[2]]
    }

    pub fn volume(&self) -> f64 {
        PI * self.radius * self.radius * self.height
    }

    /// Lateral surface area.
    pub fn lateral_area(&self) -> f64 {
        2.0 * PI * self.radius * self.height
    }
}

/// A charge of `q` elementary charges at cylindrical (ρ', φ', z') relative
/// to the emitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointCharge {
    pub q: f64,
    pub rho: f64,
    pub phi: f64,
    pub z: f64,
}

impl PointCharge {
    pub fn new(q: f64, rho: f64, phi: f64, z: f64) -> Self {
        Self { q, rho, phi, z }
    }

    pub fn cartesian(&self) -> Vec3 {
        let (s, c) = self.phi.sin_cos();
        [self.rho * c, self.rho * s, self.z]
    }

    pub fn validate(&self, geom: &PillarGeometry) -> Result<()> {
        if ![self.q, self.rho, self.phi, self.z].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("charge coordinates must be finite"));
        }
        if self.q == 0.0 {
            return Err(Error::invalid("charge must be non-zero"));
        }
        if self.rho < 0.0 || self.rho > geom.radius * (1.0 + 1e-12) {
            return Err(Error::invalid(format!(
                "charge radius {} m outside the pillar (R0 = {} m)",
                self.rho, geom.radius
            )));
        }
        Ok(())
    }
}

/// Coulomb field at the emitter in a homogeneous medium of `eps_inside`.
pub fn direct_field(c: &PointCharge, geom: &PillarGeometry) -> Result<Vec3> {
    let r = c.cartesian();
    let r2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
    if r2 == 0.0 {
        return Err(Error::Singularity("charge sits on the emitter".into()));
    }
    let k = c.q * ELEMENTARY_CHARGE / (4.0 * PI * EPSILON_0 * geom.eps_inside);
    let s = -k / (r2 * r2.sqrt());
    Ok([s * r[0], s * r[1], s * r[2]])
}

/// q0(u) for u = kR0.
pub fn q0(u: f64, geom: &PillarGeometry) -> f64 {
    let ratio = geom.eps_inside / geom.eps_outside;
    if ratio == 1.0 {
        return 0.0;
    }
    let (i0, i1) = i01e(u);
    let (k0, k1) = k01e(u);
    // g0 = K0 I0' / (K0' I0) with I0' = I1, K0' = -K1
    let g0 = -(k0 * i1) / (k1 * i0);
    (1.0 - ratio) / (1.0 - g0 * ratio)
}

/// Geometry-only part of the integrand, q0 K0/(2 I0) with the e^{-2u}
/// factor removed.
fn radial_kernel(u: f64, geom: &PillarGeometry) -> f64 {
    let (i0, _) = i01e(u);
    let (k0, _) = k01e(u);
    q0(u, geom) * k0 / (2.0 * i0)
}

/// Remaining per-charge factor at u = kR0 for r = ρ'/R0, ζ = z'/R0.
#[inline]
fn charge_factor(u: f64, r: f64, zeta: f64) -> f64 {
    u * (u * zeta).sin() * i0e(u * r) * (-u * (2.0 - r)).exp()
}

fn correction_prefactor(c: &PointCharge, geom: &PillarGeometry) -> f64 {
    c.q * ELEMENTARY_CHARGE / (PI * PI * EPSILON_0 * geom.eps_inside * geom.radius * geom.radius)
}

/// Panel breaks on [0, K_MAX_R0] (in u = kR0) no wider than π/(4|ζ|) and
/// `max_width`.
fn correction_breaks(zeta: f64, max_width: f64) -> Vec<f64> {
    let mut w = max_width;
    if zeta != 0.0 {
        w = w.min(PI / (4.0 * zeta.abs()));
    }
    let n = (K_MAX_R0 / w).ceil().max(1.0) as usize;
    (0..=n).map(|k| K_MAX_R0 * k as f64 / n as f64).collect()
}

/// Surface-polarization field and its quadrature error estimate (V/m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub field: Vec3,
    pub error: f64,
}

/// Surface-polarization contribution to the field at the emitter.
///
/// Only the axial component survives on the axis; the radial component is
/// returned as zero.
pub fn polarization_correction(c: &PointCharge, geom: &PillarGeometry, quad: &QuadSpec) -> Result<Vec3> {
    polarization_correction_detail(c, geom, quad, 1.0).map(|r| r.field)
}

/// [`polarization_correction`] with an explicit upper bound on the initial
/// panel width (in units of 1/R0) and the error estimate.
pub fn polarization_correction_detail(c: &PointCharge, geom: &PillarGeometry, quad: &QuadSpec, max_width: f64) -> Result<Correction> {
    c.validate(geom)?;
    geom.validate()?;
    if geom.eps_inside == geom.eps_outside || c.z == 0.0 {
        return Ok(Correction {
            field: [0.0; 3],
            error: 0.0,
        });
    }
    let r = (c.rho / geom.radius).min(1.0);
    let zeta = c.z / geom.radius;
    let f = |u: f64| charge_factor(u, r, zeta) * radial_kernel(u, geom);
    let est = quad::integrate(f, &correction_breaks(zeta, max_width), quad)?;
    let pre = correction_prefactor(c, geom);
    Ok(Correction {
        field: [0.0, 0.0, pre * est.value],
        error: (pre * est.error).abs(),
    })
}

/// Precomputed kernel on a shared fixed rule, for evaluating the correction
/// of many charges in one geometry.
#[derive(Debug, Clone)]
pub struct CorrectionTable {
    geometry: PillarGeometry,
    rule: FixedRule,
    kernel: Vec<f64>,
    quad: QuadSpec,
}

impl CorrectionTable {
    /// Panels resolve oscillations for |z'| up to `z_max`.
    pub fn new(geom: &PillarGeometry, z_max: f64, quad: QuadSpec) -> Result<Self> {
        geom.validate()?;
        let zeta = (z_max / geom.radius).abs();
        // geometric panels resolve the logarithmic kernel near k = 0
        let mut breaks = vec![0.0, 1e-4, 1e-3, 1e-2];
        breaks.extend(correction_breaks(zeta, 1.0).into_iter().filter(|&u| u > 1e-2));
        let rule = FixedRule::new(&breaks)?;
        let kernel = rule.nodes.iter().map(|&u| radial_kernel(u, geom)).collect();
        Ok(Self {
            geometry: *geom,
            rule,
            kernel,
            quad,
        })
    }

    /// Correction for `c`; falls back to adaptive quadrature when the fixed
    /// rule misses the tolerance. The relative tolerance applies to the
    /// larger of the correction and the charge's direct field.
    pub fn correction(&self, c: &PointCharge) -> Result<Correction> {
        let geom = &self.geometry;
        c.validate(geom)?;
        if geom.eps_inside == geom.eps_outside || c.z == 0.0 {
            return Ok(Correction {
                field: [0.0; 3],
                error: 0.0,
            });
        }
        let r = (c.rho / geom.radius).min(1.0);
        let zeta = c.z / geom.radius;
        // e^{-u(2-r)} underflows the tolerance past this point
        let cut = 40.0 / (2.0 - r);
        let n = self.rule.nodes.partition_point(|&u| u < cut);
        let n = (n.div_ceil(15) * 15).min(self.rule.len());
        let vals: Vec<f64> = (0..self.rule.len())
            .map(|i| if i < n { charge_factor(self.rule.nodes[i], r, zeta) * self.kernel[i] } else { 0.0 })
            .collect();
        let est = self.rule.apply(&vals);
        // |direct field| in units of the correction prefactor
        let d2 = c.rho * c.rho + c.z * c.z;
        let direct_scale = 0.25 * PI * geom.radius * geom.radius / d2;
        let target = self
            .quad
            .abs_tol
            .max(self.quad.rel_tol * est.value.abs().max(direct_scale));
        if est.error > target {
            return polarization_correction_detail(c, geom, &self.quad, 1.0);
        }
        let pre = correction_prefactor(c, geom);
        Ok(Correction {
            field: [0.0, 0.0, pre * est.value],
            error: (pre * est.error).abs(),
        })
    }
}

/// Tolerance for per-trap tables, where the correction only needs to be
/// accurate relative to the trap's direct field.
pub fn table_correction_quad() -> QuadSpec {
    QuadSpec {
        abs_tol: 1e-12,
        rel_tol: 1e-7,
        max_panels: 20_000,
    }
}

/// Default tolerance for the dimensionless correction integral.
pub fn default_correction_quad() -> QuadSpec {
    QuadSpec {
        abs_tol: 1e-12,
        rel_tol: 1e-9,
        max_panels: 20_000,
    }
}

fn add(a: &mut Vec3, b: &Vec3) {
    for i in 0..3 {
        a[i] += b[i];
    }
}

/// Field at the emitter from a set of charges, summed in input order.
pub fn total_field(charges: &[PointCharge], geom: &PillarGeometry, include_correction: bool) -> Result<Vec3> {
    let quad = default_correction_quad();
    let mut e = [0.0; 3];
    for c in charges {
        add(&mut e, &direct_field(c, geom)?);
    }
    if include_correction {
        let mut corr = [0.0; 3];
        for c in charges {
            add(&mut corr, &polarization_correction(c, geom, &quad)?);
        }
        add(&mut e, &corr);
    }
    Ok(e)
}

/// Raw constants of the coupling Hamiltonians. `g` carries units of
/// Hz per V/m; `a`..`d` are dimensionless.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawCoupling {
    pub g: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

/// Relative coupling constants; the overall scale is fixed by calibration.
pub const RAW_A: f64 = 0.3;
pub const RAW_B: f64 = 0.3;
pub const RAW_C: f64 = 0.3;
pub const RAW_D: f64 = 3.0;

/// Coupling scale g (Hz per V/m) for which 2000 bulk charges in the default
/// pillar give a 5 GHz inhomogeneous line (layout seed 0, 10000
/// realizations, polarization correction included).
pub const CALIBRATED_G: f64 = 866.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StarkCoupling {
    /// Axial coupling (b − d)g (Hz per V/m).
    pub k_parallel: f64,
    /// Transverse coupling a·g (Hz per V/m).
    pub k_perp: f64,
    /// Ground-state coupling 2bg (Hz per V/m).
    pub k_ground: f64,
    pub raw: RawCoupling,
}

impl StarkCoupling {
    pub fn from_raw(raw: RawCoupling) -> Self {
        Self {
            k_parallel: (raw.b - raw.d) * raw.g,
            k_perp: raw.a * raw.g,
            k_ground: 2.0 * raw.b * raw.g,
            raw,
        }
    }

    /// Default ratios at coupling scale `g`.
    pub fn with_scale(g: f64) -> Self {
        Self::from_raw(RawCoupling {
            g,
            a: RAW_A,
            b: RAW_B,
            c: RAW_C,
            d: RAW_D,
        })
    }

    /// Every coupling multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self::from_raw(RawCoupling {
            g: self.raw.g * c,
            ..self.raw
        })
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.k_parallel, self.k_perp, self.k_ground, self.raw.g];
        if all.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid("stark couplings must be finite"))
        }
    }
}

impl Default for StarkCoupling {
    fn default() -> Self {
        Self::with_scale(CALIBRATED_G)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Branch {
    Plus,
    #[default]
    Minus,
}

/// Δ± = k_parallel E_z ± k_perp |E_⊥| (Hz), field in the emitter frame.
pub fn stark_shift(e: Vec3, k: &StarkCoupling, branch: Branch) -> f64 {
    let perp = e[0].hypot(e[1]);
    let sign = match branch {
        Branch::Plus => 1.0,
        Branch::Minus => -1.0,
    };
    k.k_parallel * e[2] + sign * k.k_perp * perp
}

/// Excited-state coupling matrix in the basis {A1, A2, Ẽx, Ẽy, E1, E2}.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitedHamiltonian {
    pub matrix: Matrix6<Complex64>,
    /// Eigenvalues of the Ẽ block, ascending (Hz).
    pub e_block_eigenvalues: [f64; 2],
    /// Ground-state shift 2gbE_z (Hz).
    pub ground_shift: f64,
}

pub fn excited_hamiltonian(e: Vec3, k: &StarkCoupling) -> ExcitedHamiltonian {
    let RawCoupling { g, a, b, d, .. } = k.raw;
    let [ex, ey, ez] = e;
    let z = Complex64::new(0.0, 0.0);
    let re = |v: f64| Complex64::new(v, 0.0);
    let mut m = Matrix6::from_element(z);
    // E_x·1 − E_y σ_y between the A and E blocks
    let off = [[re(ex), Complex64::new(0.0, ey)], [Complex64::new(0.0, -ey), re(ex)]];
    // E_x σ_z + E_y σ_x on the Ẽ block
    let mid = [[re(ex), re(ey)], [re(ey), re(-ex)]];
    for i in 0..2 {
        for j in 0..2 {
            m[(i, 4 + j)] = off[i][j];
            m[(4 + i, j)] = off[i][j];
            m[(2 + i, 2 + j)] = mid[i][j];
        }
    }
    let diag = g * (b + d) * ez;
    let h = m * re(g * a) + Matrix6::from_diagonal_element(re(diag));
    let block = Matrix2::new(h[(2, 2)].re, h[(2, 3)].re, h[(3, 2)].re, h[(3, 3)].re);
    let eig = SymmetricEigen::new(block).eigenvalues;
    let (lo, hi) = if eig[0] <= eig[1] { (eig[0], eig[1]) } else { (eig[1], eig[0]) };
    ExcitedHamiltonian {
        matrix: h,
        e_block_eigenvalues: [lo, hi],
        ground_shift: 2.0 * g * b * ez,
    }
}
