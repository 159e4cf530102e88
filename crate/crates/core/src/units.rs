//! Physical constants (CODATA 2018) and unit helpers.

use std::f64::consts::PI;

/// Elementary charge in C.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Vacuum permittivity in F/m.
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;
/// Atomic mass unit in kg.
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
/// Mass of a singly ionized Yb-171 atom in kg (atomic mass minus one electron).
pub const YB171_ION_MASS: f64 = 170.936_331_5 * ATOMIC_MASS_UNIT - 9.109_383_701_5e-31;

/// `e² / (4π ε₀)` in J·m.
pub fn coulomb_constant(charge: f64) -> f64 {
    charge * charge / (4.0 * PI * VACUUM_PERMITTIVITY)
}

/// Cyclic frequency (Hz) to angular frequency (rad/s).
#[inline]
pub fn hz(f: f64) -> f64 {
    2.0 * PI * f
}

/// Angular frequency (rad/s) to cyclic frequency (Hz).
#[inline]
pub fn to_hz(w: f64) -> f64 {
    w / (2.0 * PI)
}

/// Microseconds to seconds.
#[inline]
pub fn us(t: f64) -> f64 {
    t * 1e-6
}
