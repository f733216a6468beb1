//! Shared fixtures for the integration tests.
#![allow(dead_code)]

// Coaxial capacitor: inner conductor radius a at 1 V, outer wall radius b
// at 0 V, long in z. Away from the ends V(r) = ln(b/r) / ln(b/a); end
// corrections decay like exp(-π z / (b - a)) and are below 1e-8 at z = 0.

use halo_trap::field::{solve_raster, GridSpec, Raster, ScalarField, SolverOptions, Voltages};
use halo_trap::geometry::{Electrode, ElectrodeBoundary};
use std::sync::Arc;

pub const A: f64 = 1e-3;
pub const B: f64 = 3e-3;
pub const HALF_LENGTH: f64 = 12e-3;

pub fn analytic(r: f64) -> f64 {
    (B / r).ln() / (B / A).ln()
}

/// Solves with `cells` radial cells over [0, b]; `cells` must be a multiple of 3.
pub fn solve_coax(cells: usize, tol: f64) -> ScalarField {
    assert_eq!(cells % 3, 0);
    let h = B / cells as f64;
    let half = (HALF_LENGTH / h).round() as usize;
    let grid = GridSpec::new(0.0, -(half as f64) * h, h, cells + 1, 2 * half + 1).unwrap();
    let zmax = grid.z_max;
    let mut boundary = ElectrodeBoundary::new();
    boundary.push_polygon(Electrode::NeedleTop, &[(0.0, 0.0), (A, 0.0), (A, zmax), (0.0, zmax)]);
    boundary.push_polygon(
        Electrode::NeedleBottom,
        &[(0.0, -zmax), (A, -zmax), (A, 0.0), (0.0, 0.0)],
    );
    let raster = Arc::new(Raster::new(&boundary, &grid));
    let voltages: Voltages = [(Electrode::NeedleTop, 1.0), (Electrode::NeedleBottom, 1.0)]
        .into_iter()
        .collect();
    let opts = SolverOptions {
        tol,
        ..SolverOptions::default()
    };
    solve_raster(&raster, &voltages, &opts).unwrap()
}

pub fn coax_error_at_2mm(field: &ScalarField) -> f64 {
    let v = field.interpolate(2e-3, 0.0).unwrap();
    (v - analytic(2e-3)).abs() / analytic(2e-3)
}


/// Reference geometry with a slight perturbation, used as an optimizer start.
pub fn perturbed_reference() -> halo_trap::geometry::DesignParams {
    halo_trap::geometry::DesignParams::from_array([0.70, 1.62, 2.10, 17.5])
}
