//! Ponderomotive pseudopotential, trap depth and secular frequencies.
//!
//! For an RF potential `V₀ cos(Ωt) V(r, z)` with `V` the unit-voltage
//! solution, the time-averaged potential energy is
//!
//! ```text
//! ψ = q² V₀² |∇V|² / (4 m Ω²)
//! ```
//!
//! Nodes that are conductors, or whose stencil touches one, are masked (NaN)
//! rather than filled with one-sided differences.

use crate::constants::joules_to_ev;
use crate::field::{FieldError, GridSpec, ScalarField};
use crate::fitting::{locate_trap_center, FitError};
use crate::species::IonSpecies;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PseudoError {
    #[error("invalid drive: {0}")]
    InvalidDrive(String),
    #[error("invalid species: {0}")]
    InvalidSpecies(String),
    #[error("pseudopotential has no maximum along the escape path")]
    SaddleNotFound,
    #[error("unstable trap: curvatures k_s = {k_s:e}, k_z = {k_z:e} J/m²")]
    Unstable { k_s: f64, k_z: f64 },
    #[error("too few unmasked samples in the secular fit window")]
    WindowTooSmall,
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// RF amplitude and angular frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveSettings {
    #[serde(rename = "V0_V")]
    pub v0: f64,
    #[serde(rename = "omega_T_rad_s")]
    pub omega_t: f64,
}

impl DriveSettings {
    /// 300 V at 2π × 80 MHz.
    pub fn reference() -> Self {
        Self {
            v0: 300.0,
            omega_t: 2.0 * std::f64::consts::PI * 80e6,
        }
    }

    pub fn validate(&self) -> Result<(), PseudoError> {
        if !(self.v0.is_finite() && self.v0 > 0.0) {
            return Err(PseudoError::InvalidDrive("V0 must be positive".into()));
        }
        if !(self.omega_t.is_finite() && self.omega_t > 0.0) {
            return Err(PseudoError::InvalidDrive("omega_T must be positive".into()));
        }
        Ok(())
    }
}

/// `q² V₀² / (4 m Ω²)` [J·m²/V²].
fn prefactor(species: &IonSpecies, drive: &DriveSettings) -> f64 {
    let q = species.charge_c();
    q * q * drive.v0 * drive.v0 / (4.0 * species.mass_kg() * drive.omega_t * drive.omega_t)
}

#[derive(Debug, Clone)]
pub struct PseudoMap {
    pub grid: GridSpec,
    /// ψ per node [eV]; NaN where masked.
    pub psi: Vec<f64>,
    pub node: (f64, f64),
    pub saddle: (f64, f64),
    /// ψ(saddle) − ψ(node) [eV].
    pub depth: f64,
    /// ψ at the node [eV].
    pub node_psi: f64,
    pub species: IonSpecies,
    pub drive: DriveSettings,
    rf: ScalarField,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoSummary {
    pub node_r_m: f64,
    pub saddle_r_m: f64,
    #[serde(rename = "depth_eV")]
    pub depth_ev: f64,
}

impl PseudoMap {
    pub fn psi_at(&self, i: usize, j: usize) -> Option<f64> {
        let v = self.psi[self.grid.index(i, j)];
        (!v.is_nan()).then_some(v)
    }

    pub fn summary(&self) -> PseudoSummary {
        PseudoSummary {
            node_r_m: self.node.0,
            saddle_r_m: self.saddle.0,
            depth_ev: self.depth,
        }
    }

    /// The unit-voltage RF field the map was built from.
    pub fn rf_field(&self) -> &ScalarField {
        &self.rf
    }
}

fn masked(field: &ScalarField, i: usize, j: usize) -> bool {
    let g = &field.grid;
    let raster = &field.raster;
    if raster.is_fixed(i, j) {
        return true;
    }
    let on_axis = i == 0 && g.r_min == 0.0;
    if (i == 0 && !on_axis) || i + 1 >= g.n_r || j == 0 || j + 1 >= g.n_z {
        return true;
    }
    (!on_axis && raster.is_fixed(i - 1, j))
        || raster.is_fixed(i + 1, j)
        || raster.is_fixed(i, j - 1)
        || raster.is_fixed(i, j + 1)
}

/// ψ at every node [J]; NaN where masked.
fn psi_joules(rf: &ScalarField, k: f64) -> Vec<f64> {
    let g = &rf.grid;
    let mut psi = vec![f64::NAN; g.len()];
    for i in 0..g.n_r {
        for j in 0..g.n_z {
            if !masked(rf, i, j) {
                let (dr, dz) = rf.node_gradient(i, j);
                psi[g.index(i, j)] = k * (dr * dr + dz * dz);
            }
        }
    }
    psi
}

/// Vertex `(offset, value)` of the parabola through three equally spaced samples.
fn parabola_vertex(fm: f64, f0: f64, fp: f64) -> (f64, f64) {
    let denom = fm - 2.0 * f0 + fp;
    if denom == 0.0 {
        return (0.0, f0);
    }
    let t = (0.5 * (fm - fp) / denom).clamp(-0.5, 0.5);
    (t, f0 + 0.5 * t * (fp - fm) + 0.5 * t * t * denom)
}

pub fn pseudopotential(
    rf_field: &ScalarField,
    species: &IonSpecies,
    drive: &DriveSettings,
) -> Result<PseudoMap, PseudoError> {
    drive.validate()?;
    species.validate().map_err(PseudoError::InvalidSpecies)?;
    let g = rf_field.grid;
    let k = prefactor(species, drive);
    let psi: Vec<f64> = psi_joules(rf_field, k)
        .into_iter()
        .map(joules_to_ev)
        .collect();

    let r_node = locate_trap_center(rf_field)?;
    let (dr, dz) = crate::field::gradient(rf_field, (r_node, 0.0))?;
    let node_psi = joules_to_ev(k * (dr * dr + dz * dz));
    let j0 = g.mid_plane().ok_or(FitError::NoNodeFound)?;

    // Walk outward from the node along z = 0 to the first local maximum.
    let start = ((r_node - g.r_min) / g.h).floor() as usize + 1;
    let mut row = Vec::new();
    for i in start..g.n_r {
        match psi[g.index(i, j0)] {
            v if v.is_nan() => break,
            v => row.push(v),
        }
    }
    let peak = (1..row.len().saturating_sub(1))
        .find(|&m| row[m - 1] < row[m] && row[m] >= row[m + 1])
        .ok_or(PseudoError::SaddleNotFound)?;
    let (t, psi_saddle) = parabola_vertex(row[peak - 1], row[peak], row[peak + 1]);
    let r_saddle = g.r(start + peak) + t * g.h;

    Ok(PseudoMap {
        grid: g,
        psi,
        node: (r_node, 0.0),
        saddle: (r_saddle, 0.0),
        depth: psi_saddle - node_psi,
        node_psi,
        species: species.clone(),
        drive: *drive,
        rf: rf_field.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecularFrequencies {
    #[serde(rename = "omega_s_rad_s")]
    pub omega_s: f64,
    #[serde(rename = "omega_z_rad_s")]
    pub omega_z: f64,
    /// `ω_z² / ω_s²`.
    pub alpha: f64,
}

/// Default half-width of the secular fit window [m].
pub const DEFAULT_SECULAR_WINDOW: f64 = 30e-6;

/// Secular frequencies about the node for `ψ + q · static_scale · U`.
pub fn secular_curvatures(
    pseudo: &PseudoMap,
    static_field: &ScalarField,
    static_scale: f64,
    species: &IonSpecies,
) -> Result<SecularFrequencies, PseudoError> {
    secular_curvatures_in_window(pseudo, static_field, static_scale, species, DEFAULT_SECULAR_WINDOW)
}

/// As [`secular_curvatures`] with a custom half-width `window` [m], widened
/// to three grid spacings on coarse grids.
///
/// The radial profile uses the mid-plane nodes directly; the axial profile
/// blends the two node columns around `R` linearly, which leaves the axial
/// curvature of any `a s² + b z²` form exact.
pub fn secular_curvatures_in_window(
    pseudo: &PseudoMap,
    static_field: &ScalarField,
    static_scale: f64,
    species: &IonSpecies,
    window: f64,
) -> Result<SecularFrequencies, PseudoError> {
    species.validate().map_err(PseudoError::InvalidSpecies)?;
    let rf = &pseudo.rf;
    let g = rf.grid;
    if static_field.grid != g {
        return Err(FieldError::GridMismatch.into());
    }
    let q = species.charge_c();
    let k = prefactor(species, &pseudo.drive);
    let psi = psi_joules(rf, k);
    let energy = |i: usize, j: usize| {
        psi[g.index(i, j)] + q * static_scale * static_field.at(i, j)
    };

    // Never fewer than seven samples per profile.
    let window = window.max(3.0 * g.h);
    let r_node = pseudo.node.0;
    let j0 = g.mid_plane().ok_or(FitError::NoNodeFound)?;
    let reach = (window / g.h).floor() as isize;

    let (i_lo, _) = g.nearest(r_node - window, 0.0);
    let mut s_samples = Vec::new();
    for i in i_lo..g.n_r {
        let s = g.r(i) - r_node;
        if s > window * (1.0 + 1e-12) {
            break;
        }
        if s >= -window * (1.0 + 1e-12) && !psi[g.index(i, j0)].is_nan() {
            s_samples.push((s, energy(i, j0)));
        }
    }

    let i0 = ((r_node - g.r_min) / g.h).floor() as usize;
    let t = (r_node - g.r(i0)) / g.h;
    let mut z_samples = Vec::new();
    for dj in -reach..=reach {
        let j = j0 as isize + dj;
        if j < 0 || j as usize >= g.n_z {
            continue;
        }
        let j = j as usize;
        if psi[g.index(i0, j)].is_nan() || psi[g.index(i0 + 1, j)].is_nan() {
            continue;
        }
        z_samples.push((g.z(j), (1.0 - t) * energy(i0, j) + t * energy(i0 + 1, j)));
    }

    let k_s = 2.0 * quadratic_coefficient(&s_samples)?;
    let k_z = 2.0 * quadratic_coefficient(&z_samples)?;
    if !(k_s > 0.0 && k_z > 0.0) {
        return Err(PseudoError::Unstable { k_s, k_z });
    }
    let m = species.mass_kg();
    let (omega_s, omega_z) = ((k_s / m).sqrt(), (k_z / m).sqrt());
    Ok(SecularFrequencies {
        omega_s,
        omega_z,
        alpha: k_z / k_s,
    })
}

/// Least-squares `c` in `a + b x + c x²`.
fn quadratic_coefficient(samples: &[(f64, f64)]) -> Result<f64, PseudoError> {
    if samples.len() < 5 {
        return Err(PseudoError::WindowTooSmall);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().map(|p| p.0).sum::<f64>() / n;
    let scale = samples.iter().fold(0.0f64, |m, p| m.max((p.0 - mean).abs()));
    // Normal equations in the centred, scaled variable u = (x - mean)/scale.
    let mut a = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    for &(x, y) in samples {
        let u = (x - mean) / scale;
        let basis = [1.0, u, u * u];
        for r in 0..3 {
            b[r] += basis[r] * y;
            for c in 0..3 {
                a[r][c] += basis[r] * basis[c];
            }
        }
    }
    let coeffs = solve3(a, b).ok_or(PseudoError::WindowTooSmall)?;
    Ok(coeffs[2] / (scale * scale))
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for c in col..3 {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let tail: f64 = (row + 1..3).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}
