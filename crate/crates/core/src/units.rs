//! Unit helpers. Everything is stored in SI (Hz, s, W, m, V/m) internally.

pub const HZ: f64 = 1.0;
pub const KHZ: f64 = 1e3;
pub const MHZ: f64 = 1e6;
pub const GHZ: f64 = 1e9;

pub const NS: f64 = 1e-9;
pub const US: f64 = 1e-6;
pub const MS: f64 = 1e-3;

pub const NW: f64 = 1e-9;
pub const UW: f64 = 1e-6;

pub const NM: f64 = 1e-9;

/// Elementary charge (C).
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Vacuum permittivity (F/m).
pub const EPSILON_0: f64 = 8.854_187_8128e-12;
