//! Physical constants (CODATA 2018, 9 significant figures).

/// Elementary charge [C].
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_63e-19;

/// Vacuum permittivity [F/m].
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_81e-12;

/// Unified atomic mass unit [kg].
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_07e-27;

/// Coulomb constant 1/(4πε₀) [N·m²/C²].
pub fn coulomb_constant() -> f64 {
    1.0 / (4.0 * std::f64::consts::PI * VACUUM_PERMITTIVITY)
}

/// Converts an energy in joules to electron-volts.
pub fn joules_to_ev(energy: f64) -> f64 {
    energy / ELEMENTARY_CHARGE
}
