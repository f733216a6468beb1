//! Trapped species and the Coulomb length scale.

use crate::constants::{coulomb_constant, ATOMIC_MASS_UNIT, ELEMENTARY_CHARGE};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// A charged particle; mass in atomic mass units, charge in multiples of `e`
/// (fractional multiples allowed, e.g. for charged microspheres).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IonSpecies {
    pub name: String,
    pub mass_u: f64,
    pub charge_e: f64,
}

impl IonSpecies {
    pub fn new(name: impl Into<String>, mass_u: f64, charge_e: f64) -> Self {
        Self {
            name: name.into(),
            mass_u,
            charge_e,
        }
    }

    pub fn mg24() -> Self {
        Self::new("24Mg+", 23.985_041_7, 1.0)
    }

    pub fn ca40() -> Self {
        Self::new("40Ca+", 39.962_590_9, 1.0)
    }

    pub fn yb171() -> Self {
        Self::new("171Yb+", 170.936_326, 1.0)
    }

    /// 300 nm diameter polystyrene sphere (1050 kg/m³) carrying 1.6e-16 C.
    pub fn polystyrene_300nm() -> Self {
        let radius: f64 = 150e-9;
        let mass = 1050.0 * 4.0 / 3.0 * PI * radius.powi(3);
        Self::new("300 nm PS", mass / ATOMIC_MASS_UNIT, 1.6e-16 / ELEMENTARY_CHARGE)
    }

    pub fn mass_kg(&self) -> f64 {
        self.mass_u * ATOMIC_MASS_UNIT
    }

    pub fn charge_c(&self) -> f64 {
        self.charge_e * ELEMENTARY_CHARGE
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.mass_u.is_finite() && self.mass_u > 0.0) {
            return Err(format!("{}: mass must be positive", self.name));
        }
        if !(self.charge_e.is_finite() && self.charge_e != 0.0) {
            return Err(format!("{}: charge must be non-zero", self.name));
        }
        Ok(())
    }
}

/// Length at which Coulomb repulsion balances the radial confinement,
/// `(q²/(4πε₀) · 2/(m ω_r²))^(1/3)` [m].
pub fn r_star(species: &IonSpecies, omega_r: f64) -> f64 {
    let q = species.charge_c();
    (coulomb_constant() * q * q * 2.0 / (species.mass_kg() * omega_r * omega_r)).cbrt()
}

/// Energy unit `(1/2) m ω_r² r⋆²` [J].
pub fn energy_scale(species: &IonSpecies, omega_r: f64) -> f64 {
    let r = r_star(species, omega_r);
    0.5 * species.mass_kg() * omega_r * omega_r * r * r
}

/// One row of the scaled-radius table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesEntry {
    #[serde(flatten)]
    pub species: IonSpecies,
    /// Radial secular frequency ω_r / 2π.
    #[serde(rename = "omega_r_Hz")]
    pub omega_r_hz: f64,
}

/// Common configurations: Mg at 2 kHz, Ca at 1.5 kHz, Yb at 0.8 kHz and a
/// charged microsphere at 100 Hz.
pub fn default_table() -> Vec<SpeciesEntry> {
    vec![
        SpeciesEntry {
            species: IonSpecies::mg24(),
            omega_r_hz: 2.0e3,
        },
        SpeciesEntry {
            species: IonSpecies::ca40(),
            omega_r_hz: 1.5e3,
        },
        SpeciesEntry {
            species: IonSpecies::yb171(),
            omega_r_hz: 0.8e3,
        },
        SpeciesEntry {
            species: IonSpecies::polystyrene_300nm(),
            omega_r_hz: 100.0,
        },
    ]
}
