//! Axisymmetric Laplace solver.
//!
//! Potentials live on a uniform node-centred (r, z) grid. Conductors are
//! rasterized as fixed-value nodes; the remaining nodes are relaxed with
//! red-black successive over-relaxation on the five-point stencil of
//!
//! ```text
//! ∂²V/∂r² + (1/r) ∂V/∂r + ∂²V/∂z² = 0
//! ```
//!
//! using the regularized `4 ∂²V/∂r²`-style stencil on the axis. Solves start
//! from a prolongated coarse-grid solution when the grid allows it, and exploit
//! `z -> -z` (anti)symmetry of the boundary data by relaxing only `z >= 0`.

use crate::geometry::{Electrode, ElectrodeBoundary, ElectrodeGroup};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("solver did not converge after {iterations} sweeps (error estimate {residual:e} V)")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("fields are defined on different grids")]
    GridMismatch,
    #[error("point ({r:e}, {z:e}) m is not strictly inside the grid")]
    OutOfDomain { r: f64, z: f64 },
    #[error("solver tolerance must be positive")]
    InvalidTolerance,
}

/// Uniform node-centred grid over `[r_min, r_max] x [z_min, z_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub r_min: f64,
    pub r_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub n_r: usize,
    pub n_z: usize,
    pub h: f64,
}

/// Smallest node count per direction.
pub const MIN_NODES: usize = 16;

impl GridSpec {
    pub fn new(r_min: f64, z_min: f64, h: f64, n_r: usize, n_z: usize) -> Result<Self, FieldError> {
        let grid = Self {
            r_min,
            r_max: r_min + (n_r as f64 - 1.0) * h,
            z_min,
            z_max: z_min + (n_z as f64 - 1.0) * h,
            n_r,
            n_z,
            h,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid on `[0, r_max] x [-z_max, z_max]` with a node on `z = 0`.
    ///
    /// The spacing is `r_max / cells_r` where `cells_r` is the first multiple
    /// of 32 at or above `min_cells_r`; the axial half extent is rounded up to
    /// whole multiples of 32 cells so that the grid coarsens cleanly.
    pub fn covering(r_max: f64, z_max: f64, min_cells_r: usize) -> Result<Self, FieldError> {
        let cells_r = min_cells_r.max(MIN_NODES).div_ceil(32) * 32;
        let h = r_max / cells_r as f64;
        let half = ((z_max / h) * (1.0 - 1e-12)).ceil() as usize;
        let half = half.max(8).div_ceil(32) * 32;
        Self::new(0.0, -(half as f64) * h, h, cells_r + 1, 2 * half + 1)
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(FieldError::InvalidGrid("spacing must be positive".into()));
        }
        if self.r_min < 0.0 {
            return Err(FieldError::InvalidGrid("r_min must be >= 0".into()));
        }
        if self.n_r < MIN_NODES || self.n_z < MIN_NODES {
            return Err(FieldError::InvalidGrid(format!(
                "need at least {MIN_NODES} nodes per direction, got {} x {}",
                self.n_r, self.n_z
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n_r * self.n_z
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n_z + j
    }

    #[inline]
    pub fn r(&self, i: usize) -> f64 {
        self.r_min + i as f64 * self.h
    }

    #[inline]
    pub fn z(&self, j: usize) -> f64 {
        self.z_min + j as f64 * self.h
    }

    /// Nearest node indices to `(r, z)`, clamped to the grid.
    pub fn nearest(&self, r: f64, z: f64) -> (usize, usize) {
        let i = ((r - self.r_min) / self.h).round().clamp(0.0, (self.n_r - 1) as f64);
        let j = ((z - self.z_min) / self.h).round().clamp(0.0, (self.n_z - 1) as f64);
        (i as usize, j as usize)
    }

    /// Index of the node row at `z = 0` when the grid is mirror symmetric.
    pub fn mid_plane(&self) -> Option<usize> {
        if self.n_z.is_multiple_of(2) {
            return None;
        }
        let j0 = (self.n_z - 1) / 2;
        (self.z(j0).abs() <= 1e-9 * self.h).then_some(j0)
    }

    pub fn domain(&self) -> crate::geometry::Domain {
        crate::geometry::Domain {
            r_max: self.r_max,
            z_max: self.z_max.min(-self.z_min),
        }
    }

    fn same_as(&self, other: &GridSpec) -> bool {
        self.n_r == other.n_r
            && self.n_z == other.n_z
            && (self.h - other.h).abs() <= 1e-12 * self.h
            && (self.r_min - other.r_min).abs() <= 1e-12 * self.h
            && (self.z_min - other.z_min).abs() <= 1e-12 * self.h
    }
}

const FREE: u8 = u8::MAX;

/// Per-node conductor labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub grid: GridSpec,
    labels: Vec<u8>,
}

fn electrode_code(e: Electrode) -> u8 {
    Electrode::ALL.iter().position(|&x| x == e).unwrap() as u8
}

impl Raster {
    /// Marks nodes inside or on conductor polygons, then the box edge
    /// (except the axis) as far field.
    pub fn new(boundary: &ElectrodeBoundary, grid: &GridSpec) -> Self {
        let mut labels = vec![FREE; grid.len()];
        let eps = 1e-9 * grid.h;
        for label in Electrode::CONDUCTORS {
            let segs: Vec<_> = boundary.segments_for(label).collect();
            if segs.is_empty() {
                continue;
            }
            let (mut r_lo, mut r_hi, mut z_lo, mut z_hi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
            for s in &segs {
                for p in [s.start, s.end] {
                    r_lo = r_lo.min(p.0);
                    r_hi = r_hi.max(p.0);
                    z_lo = z_lo.min(p.1);
                    z_hi = z_hi.max(p.1);
                }
            }
            let code = electrode_code(label);
            for i in 0..grid.n_r {
                let r = grid.r(i);
                if r < r_lo - eps || r > r_hi + eps {
                    continue;
                }
                for j in 0..grid.n_z {
                    let z = grid.z(j);
                    if z < z_lo - eps || z > z_hi + eps {
                        continue;
                    }
                    let k = grid.index(i, j);
                    if labels[k] == FREE && boundary.contains(label, (r, z), eps) {
                        labels[k] = code;
                    }
                }
            }
        }
        let far = electrode_code(Electrode::FarField);
        for i in 0..grid.n_r {
            for j in 0..grid.n_z {
                let edge = i == grid.n_r - 1
                    || j == 0
                    || j == grid.n_z - 1
                    || (i == 0 && grid.r_min > 0.0);
                let k = grid.index(i, j);
                if edge && labels[k] == FREE {
                    labels[k] = far;
                }
            }
        }
        Self {
            grid: *grid,
            labels,
        }
    }

    #[inline]
    pub fn label(&self, i: usize, j: usize) -> Option<Electrode> {
        let c = self.labels[self.grid.index(i, j)];
        (c != FREE).then(|| Electrode::ALL[c as usize])
    }

    #[inline]
    pub fn is_fixed(&self, i: usize, j: usize) -> bool {
        self.labels[self.grid.index(i, j)] != FREE
    }

    /// True when the node is fixed and belongs to a conductor (not the box).
    #[inline]
    pub fn is_conductor(&self, i: usize, j: usize) -> bool {
        matches!(self.label(i, j), Some(e) if e != Electrode::FarField)
    }

    pub fn count(&self, label: Electrode) -> usize {
        let code = electrode_code(label);
        self.labels.iter().filter(|&&c| c == code).count()
    }

    /// Label pattern is invariant under `z -> -z` with top/bottom swapped.
    pub fn is_mirror_symmetric(&self) -> bool {
        if self.grid.mid_plane().is_none() {
            return false;
        }
        let n_z = self.grid.n_z;
        (0..self.grid.n_r).all(|i| {
            (0..n_z).all(|j| self.label(i, j) == self.label(i, n_z - 1 - j).map(Electrode::mirrored))
        })
    }
}

/// Applied electrode potentials [V]; unlisted electrodes are grounded.
pub type Voltages = BTreeMap<Electrode, f64>;

fn voltage(v: &Voltages, e: Electrode) -> f64 {
    v.get(&e).copied().unwrap_or(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Symmetry {
    None,
    Even,
    Odd,
}

fn voltage_symmetry(v: &Voltages) -> Symmetry {
    let even = Electrode::CONDUCTORS
        .iter()
        .all(|&e| voltage(v, e) == voltage(v, e.mirrored()));
    if even {
        return Symmetry::Even;
    }
    let odd = voltage(v, Electrode::FarField) == 0.0
        && Electrode::CONDUCTORS
            .iter()
            .all(|&e| voltage(v, e) == -voltage(v, e.mirrored()));
    if odd {
        Symmetry::Odd
    } else {
        Symmetry::None
    }
}

/// Potential sampled on a grid [V].
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub grid: GridSpec,
    /// Row-major, `z` fastest: `values[i * n_z + j]`.
    pub values: Vec<f64>,
    pub raster: Arc<Raster>,
    pub voltages: Voltages,
    /// Relaxation sweeps at the finest level (0 for derived fields).
    pub sweeps: usize,
}

impl ScalarField {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    /// Field built by evaluating `f(r, z)` on every node, with no conductors.
    pub fn from_fn(grid: &GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..grid.n_r {
            for j in 0..grid.n_z {
                values.push(f(grid.r(i), grid.z(j)));
            }
        }
        let raster = Raster::new(&ElectrodeBoundary::new(), grid);
        Self {
            grid: *grid,
            values,
            raster: Arc::new(raster),
            voltages: Voltages::new(),
            sweeps: 0,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Pointwise `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &ScalarField, b: f64) -> Result<ScalarField, FieldError> {
        if !self.grid.same_as(&other.grid) {
            return Err(FieldError::GridMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        let mut voltages = Voltages::new();
        for e in Electrode::ALL {
            let v = a * voltage(&self.voltages, e) + b * voltage(&other.voltages, e);
            if v != 0.0 {
                voltages.insert(e, v);
            }
        }
        Ok(ScalarField {
            grid: self.grid,
            values,
            raster: self.raster.clone(),
            voltages,
            sweeps: 0,
        })
    }

    pub fn scaled(&self, factor: f64) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().map(|v| v * factor).collect(),
            raster: self.raster.clone(),
            voltages: self.voltages.iter().map(|(&e, &v)| (e, v * factor)).collect(),
            sweeps: self.sweeps,
        }
    }

    /// Gradient `(∂V/∂r, ∂V/∂z)` at a node [V/m]: central differences in the
    /// interior, one-sided on the box edge, and `∂V/∂r = 0` on the axis.
    pub fn node_gradient(&self, i: usize, j: usize) -> (f64, f64) {
        let g = &self.grid;
        let h = g.h;
        let dr = if i == 0 && g.r_min == 0.0 {
            0.0
        } else if i == 0 {
            (self.at(1, j) - self.at(0, j)) / h
        } else if i == g.n_r - 1 {
            (self.at(i, j) - self.at(i - 1, j)) / h
        } else {
            (self.at(i + 1, j) - self.at(i - 1, j)) / (2.0 * h)
        };
        let dz = if j == 0 {
            (self.at(i, 1) - self.at(i, 0)) / h
        } else if j == g.n_z - 1 {
            (self.at(i, j) - self.at(i, j - 1)) / h
        } else {
            (self.at(i, j + 1) - self.at(i, j - 1)) / (2.0 * h)
        };
        (dr, dz)
    }

    /// Bilinear interpolation of the potential.
    pub fn interpolate(&self, r: f64, z: f64) -> Result<f64, FieldError> {
        let (i, j, tr, tz) = self.locate(r, z)?;
        let v00 = self.at(i, j);
        let v10 = self.at(i + 1, j);
        let v01 = self.at(i, j + 1);
        let v11 = self.at(i + 1, j + 1);
        Ok(bilinear(v00, v10, v01, v11, tr, tz))
    }

    fn locate(&self, r: f64, z: f64) -> Result<(usize, usize, f64, f64), FieldError> {
        let g = &self.grid;
        let inside = r > g.r_min && r < g.r_max && z > g.z_min && z < g.z_max;
        // On the axis the field is smooth by symmetry, so r = 0 is allowed.
        let on_axis = g.r_min == 0.0 && r == 0.0 && z > g.z_min && z < g.z_max;
        if !(inside || on_axis) {
            return Err(FieldError::OutOfDomain { r, z });
        }
        let x = (r - g.r_min) / g.h;
        let y = (z - g.z_min) / g.h;
        let i = (x.floor() as usize).min(g.n_r - 2);
        let j = (y.floor() as usize).min(g.n_z - 2);
        Ok((i, j, x - i as f64, y - j as f64))
    }
}

#[inline]
fn bilinear(v00: f64, v10: f64, v01: f64, v11: f64, tr: f64, tz: f64) -> f64 {
    (1.0 - tr) * (1.0 - tz) * v00 + tr * (1.0 - tz) * v10 + (1.0 - tr) * tz * v01 + tr * tz * v11
}

/// `(∂V/∂r, ∂V/∂z)` at an arbitrary point [V/m]; node gradients are
/// bilinearly interpolated.
pub fn gradient(field: &ScalarField, point: (f64, f64)) -> Result<(f64, f64), FieldError> {
    let (i, j, tr, tz) = field.locate(point.0, point.1)?;
    let g00 = field.node_gradient(i, j);
    let g10 = field.node_gradient(i + 1, j);
    let g01 = field.node_gradient(i, j + 1);
    let g11 = field.node_gradient(i + 1, j + 1);
    Ok((
        bilinear(g00.0, g10.0, g01.0, g11.0, tr, tz),
        bilinear(g00.1, g10.1, g01.1, g11.1, tr, tz),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    /// Convergence target relative to the largest applied voltage.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Over-relaxation factor; estimated from the grid size when absent.
    #[serde(default)]
    pub omega: Option<f64>,
    /// Start from a prolongated coarse-grid solution.
    #[serde(default = "yes")]
    pub nested: bool,
}

fn yes() -> bool {
    true
}

pub const DEFAULT_TOLERANCE: f64 = 1e-6;

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOLERANCE,
            max_sweeps: 200_000,
            omega: None,
            nested: true,
        }
    }
}

/// Solves with the default options at tolerance `tol`.
pub fn solve(
    boundary: &ElectrodeBoundary,
    voltages: &Voltages,
    grid: &GridSpec,
    tol: f64,
) -> Result<ScalarField, FieldError> {
    let raster = Arc::new(Raster::new(boundary, grid));
    let opts = SolverOptions {
        tol,
        ..SolverOptions::default()
    };
    solve_raster(&raster, voltages, &opts)
}

/// Solves on a pre-rasterized boundary.
///
/// Stops once the estimated distance to the discrete solution,
/// `max |correction| / (2 - ω)`, falls below `tol * max |V_applied|`; the
/// stencil residual is then bounded by the same amount.
pub fn solve_raster(
    raster: &Arc<Raster>,
    voltages: &Voltages,
    opts: &SolverOptions,
) -> Result<ScalarField, FieldError> {
    if !(opts.tol > 0.0) {
        return Err(FieldError::InvalidTolerance);
    }
    let grid = raster.grid;
    grid.validate()?;
    let v_max = voltages.values().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut values = vec![0.0; grid.len()];
    for i in 0..grid.n_r {
        for j in 0..grid.n_z {
            if let Some(e) = raster.label(i, j) {
                values[grid.index(i, j)] = voltage(voltages, e);
            }
        }
    }
    let mut field = ScalarField {
        grid,
        values,
        raster: raster.clone(),
        voltages: voltages.clone(),
        sweeps: 0,
    };
    if v_max == 0.0 {
        return Ok(field);
    }
    let tol_abs = opts.tol * v_max;

    let symmetry = match grid.mid_plane() {
        Some(_) if raster.is_mirror_symmetric() => voltage_symmetry(voltages),
        _ => Symmetry::None,
    };

    match (symmetry, grid.mid_plane()) {
        (Symmetry::Even | Symmetry::Odd, Some(j0)) => {
            // Relax the upper half only.
            let n_zh = grid.n_z - j0;
            let mut problem = Problem::from_window(&field, j0, n_zh);
            match symmetry {
                Symmetry::Even => problem.mirror_low = true,
                _ => {
                    for i in 0..problem.n_r {
                        let k = i * problem.n_z;
                        problem.fixed[k] = true;
                        problem.u[k] = 0.0;
                    }
                }
            }
            let sweeps = problem.solve(tol_abs, opts)?;
            for i in 0..grid.n_r {
                for jh in 0..n_zh {
                    let v = problem.u[i * n_zh + jh];
                    field.values[grid.index(i, j0 + jh)] = v;
                    let mirrored = if symmetry == Symmetry::Even { v } else { -v };
                    field.values[grid.index(i, j0 - jh)] = mirrored;
                }
            }
            field.sweeps = sweeps;
        }
        _ => {
            let mut problem = Problem::from_window(&field, 0, grid.n_z);
            field.sweeps = problem.solve(tol_abs, opts)?;
            field.values = problem.u;
        }
    }
    Ok(field)
}

/// Relaxation problem on a rectangular window of nodes.
struct Problem {
    n_r: usize,
    n_z: usize,
    h: f64,
    r_min: f64,
    fixed: Vec<bool>,
    u: Vec<f64>,
    /// Reflecting (∂V/∂z = 0) lower edge instead of fixed values.
    mirror_low: bool,
}

impl Problem {
    fn from_window(field: &ScalarField, j_start: usize, n_z: usize) -> Self {
        let g = &field.grid;
        let mut fixed = Vec::with_capacity(g.n_r * n_z);
        let mut u = Vec::with_capacity(g.n_r * n_z);
        for i in 0..g.n_r {
            for j in j_start..j_start + n_z {
                fixed.push(field.raster.is_fixed(i, j));
                u.push(field.at(i, j));
            }
        }
        Self {
            n_r: g.n_r,
            n_z,
            h: g.h,
            r_min: g.r_min,
            fixed,
            u,
            mirror_low: false,
        }
    }

    fn can_coarsen(&self) -> bool {
        (self.n_r - 1).is_multiple_of(2)
            && (self.n_z - 1).is_multiple_of(2)
            && (self.n_r - 1) / 2 + 1 >= MIN_NODES
            && (self.n_z - 1) / 2 + 1 >= MIN_NODES
    }

    fn restrict(&self) -> Problem {
        let n_r = (self.n_r - 1) / 2 + 1;
        let n_z = (self.n_z - 1) / 2 + 1;
        let mut fixed = Vec::with_capacity(n_r * n_z);
        let mut u = Vec::with_capacity(n_r * n_z);
        for i in 0..n_r {
            for j in 0..n_z {
                let k = (2 * i) * self.n_z + 2 * j;
                fixed.push(self.fixed[k]);
                u.push(self.u[k]);
            }
        }
        Problem {
            n_r,
            n_z,
            h: 2.0 * self.h,
            r_min: self.r_min,
            fixed,
            u,
            mirror_low: self.mirror_low,
        }
    }

    fn prolongate_from(&mut self, coarse: &Problem) {
        for i in 0..self.n_r {
            for j in 0..self.n_z {
                let k = i * self.n_z + j;
                if self.fixed[k] {
                    continue;
                }
                let (ci, ti) = (i / 2, i % 2);
                let (cj, tj) = (j / 2, j % 2);
                let c = |a: usize, b: usize| coarse.u[a * coarse.n_z + b];
                self.u[k] = match (ti, tj) {
                    (0, 0) => c(ci, cj),
                    (1, 0) => 0.5 * (c(ci, cj) + c(ci + 1, cj)),
                    (0, _) => 0.5 * (c(ci, cj) + c(ci, cj + 1)),
                    _ => 0.25 * (c(ci, cj) + c(ci + 1, cj) + c(ci, cj + 1) + c(ci + 1, cj + 1)),
                };
            }
        }
    }

    fn omega(&self) -> f64 {
        let n_z = if self.mirror_low { 2 * self.n_z } else { self.n_z };
        let n = self.n_r.max(n_z) as f64;
        let m = self.n_r.min(n_z) as f64;
        let rho = 0.5 * ((std::f64::consts::PI / n).cos() + (std::f64::consts::PI / m).cos());
        2.0 / (1.0 + (1.0 - rho * rho).sqrt())
    }

    fn solve(&mut self, tol_abs: f64, opts: &SolverOptions) -> Result<usize, FieldError> {
        if opts.nested && self.can_coarsen() {
            let mut coarse = self.restrict();
            coarse.solve(tol_abs, opts)?;
            self.prolongate_from(&coarse);
        }
        self.relax(tol_abs, opts)
    }

    fn relax(&mut self, tol_abs: f64, opts: &SolverOptions) -> Result<usize, FieldError> {
        let omega = opts.omega.unwrap_or_else(|| self.omega());
        let (n_r, n_z) = (self.n_r, self.n_z);
        // Stencil weights per radial row: (east, west, north/south, centre-normalizer).
        let weights: Vec<(f64, f64, f64)> = (0..n_r)
            .map(|i| {
                let r = self.r_min + i as f64 * self.h;
                if r == 0.0 {
                    (4.0 / 6.0, 0.0, 1.0 / 6.0)
                } else {
                    let a = self.h / (2.0 * r);
                    ((1.0 + a) / 4.0, (1.0 - a) / 4.0, 0.25)
                }
            })
            .collect();
        let mut estimate = f64::INFINITY;
        for sweep in 1..=opts.max_sweeps {
            let mut max_corr = 0.0f64;
            for color in 0..2 {
                for i in 0..n_r {
                    let (we, ww, wz) = weights[i];
                    let row = i * n_z;
                    let start = (i + color) % 2;
                    for j in (start..n_z).step_by(2) {
                        let k = row + j;
                        if self.fixed[k] {
                            continue;
                        }
                        // Free nodes never sit on the outer edge, except the
                        // axis column and a mirrored lower edge.
                        let east = self.u[k + n_z];
                        let west = if i > 0 { self.u[k - n_z] } else { 0.0 };
                        let north = self.u[k + 1];
                        let south = if j > 0 {
                            self.u[k - 1]
                        } else {
                            debug_assert!(self.mirror_low);
                            north
                        };
                        let target = we * east + ww * west + wz * (north + south);
                        let corr = target - self.u[k];
                        max_corr = max_corr.max(corr.abs());
                        self.u[k] += omega * corr;
                    }
                }
            }
            estimate = max_corr / (2.0 - omega).max(1e-3);
            if estimate <= tol_abs {
                return Ok(sweep);
            }
            if !estimate.is_finite() {
                break;
            }
        }
        Err(FieldError::NoConvergence {
            iterations: opts.max_sweeps,
            residual: estimate,
        })
    }
}

/// Largest stencil residual `|weighted neighbour mean - V|` over free nodes [V].
pub fn max_residual(field: &ScalarField) -> f64 {
    let g = &field.grid;
    let mut worst = 0.0f64;
    for i in 0..g.n_r {
        let r = g.r(i);
        for j in 0..g.n_z {
            if field.raster.is_fixed(i, j) {
                continue;
            }
            let north = field.at(i, j + 1);
            let south = field.at(i, j - 1);
            let target = if r == 0.0 {
                (4.0 * field.at(1, j) + north + south) / 6.0
            } else {
                let a = g.h / (2.0 * r);
                ((1.0 + a) * field.at(i + 1, j) + (1.0 - a) * field.at(i - 1, j) + north + south)
                    / 4.0
            };
            worst = worst.max((target - field.at(i, j)).abs());
        }
    }
    worst
}

/// Unit-voltage solutions for each electrode group, all others grounded.
#[derive(Debug, Clone)]
pub struct BasisFields {
    pub fields: BTreeMap<ElectrodeGroup, ScalarField>,
    pub tol: f64,
}

pub fn solve_basis(
    boundary: &ElectrodeBoundary,
    grid: &GridSpec,
    tol: f64,
) -> Result<BasisFields, FieldError> {
    let raster = Arc::new(Raster::new(boundary, grid));
    let opts = SolverOptions {
        tol,
        ..SolverOptions::default()
    };
    solve_basis_raster(&raster, &opts)
}

pub fn solve_basis_raster(
    raster: &Arc<Raster>,
    opts: &SolverOptions,
) -> Result<BasisFields, FieldError> {
    let mut fields = BTreeMap::new();
    for group in ElectrodeGroup::ALL {
        let voltages: Voltages = group.members().iter().map(|&e| (e, 1.0)).collect();
        fields.insert(group, solve_raster(raster, &voltages, opts)?);
    }
    Ok(BasisFields {
        fields,
        tol: opts.tol,
    })
}

/// Linear combination of basis fields; missing groups get zero.
pub fn superpose(
    basis: &BasisFields,
    coeffs: &BTreeMap<ElectrodeGroup, f64>,
) -> Result<ScalarField, FieldError> {
    let mut iter = basis.fields.values();
    let first = iter.next().ok_or(FieldError::GridMismatch)?;
    if iter.any(|f| !f.grid.same_as(&first.grid)) {
        return Err(FieldError::GridMismatch);
    }
    let mut values = vec![0.0; first.grid.len()];
    let mut voltages = Voltages::new();
    for (group, field) in &basis.fields {
        let c = coeffs.get(group).copied().unwrap_or(0.0);
        for e in group.members() {
            voltages.insert(e, c);
        }
        if c == 0.0 {
            continue;
        }
        for (v, b) in values.iter_mut().zip(&field.values) {
            *v += c * b;
        }
    }
    Ok(ScalarField {
        grid: first.grid,
        values,
        raster: first.raster.clone(),
        voltages,
        sweeps: 0,
    })
}
