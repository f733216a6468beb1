//! Two-ion Coulomb crystals on the halo ring.
//!
//! Lengths are in units of r⋆ and energies in units of E⋆ (see
//! [`crate::species`]). Two ions held at `(±x, 0, ±z)` have the reduced energy
//!
//! ```text
//! H(x, z) = 1 / (2 sqrt(x² + z²)) + 2 α z² + 2 (|x| - r₀)²
//! ```
//!
//! with `α = ω_z²/ω_r²` and `r₀ = R / r⋆`. Stationary points come in two
//! families: the in-plane crystal `z = 0` with `8x³ - 8 r₀ x² - 1 = 0`, and,
//! for `α < 1`, the off-plane crystal with `x (1 - α) = r₀` and
//! `x² + z² = (8α)^(-2/3)`. The off-plane pair exists below
//! `r₀ = |α - 1| / (2 α^(1/3))`, where it branches continuously from `z = 0`.

use crate::optim::NelderMead;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CrystalError {
    #[error("invalid trap: {0}")]
    InvalidTrap(String),
    #[error("energy is singular at the origin")]
    Singularity,
    #[error("ions {0} and {1} coincide")]
    CoincidentIons(usize, usize),
    #[error("invalid range: {0}")]
    InvalidRange(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledTrap {
    pub alpha: f64,
    pub r0: f64,
}

impl ScaledTrap {
    pub fn new(alpha: f64, r0: f64) -> Result<Self, CrystalError> {
        let t = Self { alpha, r0 };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), CrystalError> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(CrystalError::InvalidTrap(format!("alpha = {}", self.alpha)));
        }
        if !(self.r0.is_finite() && self.r0 >= 0.0) {
            return Err(CrystalError::InvalidTrap(format!("r0 = {}", self.r0)));
        }
        Ok(())
    }

    /// Builds the scaled trap from physical frequencies and ring radius.
    pub fn from_physical(
        species: &crate::species::IonSpecies,
        omega_r: f64,
        omega_z: f64,
        ring_radius: f64,
    ) -> Result<Self, CrystalError> {
        let r_star = crate::species::r_star(species, omega_r);
        Self::new((omega_z / omega_r).powi(2), ring_radius / r_star)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    InPlane,
    OffPlane,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::InPlane => "in_plane",
            Phase::OffPlane => "off_plane",
        }
    }
}

/// Equilibrium of ion 1; ion 2 sits at `(-x, -z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub trap: ScaledTrap,
    pub x: f64,
    pub z: f64,
    pub phase: Phase,
    pub energy: f64,
}

pub fn scaled_hamiltonian(x: f64, z: f64, trap: &ScaledTrap) -> Result<f64, CrystalError> {
    let rho = x.hypot(z);
    if rho == 0.0 {
        return Err(CrystalError::Singularity);
    }
    Ok(energy_unchecked(x, z, trap))
}

#[inline]
fn energy_unchecked(x: f64, z: f64, trap: &ScaledTrap) -> f64 {
    0.5 / x.hypot(z) + 2.0 * trap.alpha * z * z + 2.0 * (x.abs() - trap.r0).powi(2)
}

/// `(∂H/∂x, ∂H/∂z)` for `x > 0`.
pub fn hamiltonian_gradient(x: f64, z: f64, trap: &ScaledTrap) -> (f64, f64) {
    let rho3 = (x * x + z * z).powf(1.5);
    (
        -0.5 * x / rho3 + 4.0 * (x - trap.r0),
        -0.5 * z / rho3 + 4.0 * trap.alpha * z,
    )
}

/// Hessian `[[H_xx, H_xz], [H_xz, H_zz]]` for `x > 0`.
pub fn hamiltonian_hessian(x: f64, z: f64, trap: &ScaledTrap) -> [[f64; 2]; 2] {
    let rho2 = x * x + z * z;
    let rho5 = rho2.powf(2.5);
    let hxx = 0.5 * (2.0 * x * x - z * z) / rho5 + 4.0;
    let hzz = 0.5 * (2.0 * z * z - x * x) / rho5 + 4.0 * trap.alpha;
    let hxz = 1.5 * x * z / rho5;
    [[hxx, hxz], [hxz, hzz]]
}

/// `r₀` at which the in-plane crystal turns unstable, `|α - 1| / (2 α^(1/3))`.
pub fn phase_boundary(alpha: f64) -> f64 {
    (alpha - 1.0).abs() / (2.0 * alpha.cbrt())
}

/// The literal validity statement for the in-plane branch:
/// `r₀ > |α - 1| / (2 α^(1/3))` and `α > 1`.
pub fn literal_in_plane_condition(trap: &ScaledTrap) -> bool {
    trap.r0 > phase_boundary(trap.alpha) && trap.alpha > 1.0
}

/// Positive root of `8x³ - 8 r₀ x² - 1 = 0`.
///
/// Cube-root closed form with the difference
/// `27 + 16r₀³ - 3 sqrt(81 + 96 r₀³)` rewritten as
/// `256 r₀⁶ / (27 + 16r₀³ + 3 sqrt(81 + 96 r₀³))` to avoid cancellation,
/// followed by Newton polishing on the cubic.
pub fn in_plane_x(r0: f64) -> f64 {
    let r3 = r0 * r0 * r0;
    let denom = 27.0 + 16.0 * r3 + 3.0 * (81.0 + 96.0 * r3).sqrt();
    // c = (256 / denom)^(1/3) r0², the cube-root term of the closed form.
    let k = (256.0 / denom).cbrt();
    let mut x = r0 / 3.0 + 16f64.cbrt() / (3.0 * k) + k * r0 * r0 / 432f64.cbrt();
    for _ in 0..3 {
        let f = 8.0 * x * x * x - 8.0 * r0 * x * x - 1.0;
        let df = 24.0 * x * x - 16.0 * r0 * x;
        let step = f / df;
        x -= step;
        if step.abs() <= 1e-17 * x {
            break;
        }
    }
    x
}

/// Off-plane stationary point, when it exists (`α < 1`, `r₀` below the boundary).
pub fn off_plane_point(trap: &ScaledTrap) -> Option<(f64, f64)> {
    let a = trap.alpha;
    if a >= 1.0 {
        return None;
    }
    let am1 = (a - 1.0).abs();
    let a23 = a.powf(2.0 / 3.0);
    let num = am1 * am1 - 4.0 * trap.r0 * trap.r0 * a23;
    if num < 0.0 {
        return None;
    }
    let x = trap.r0 / am1;
    let z = 0.5 * (num / (am1 * am1 * a23)).sqrt();
    Some((x, z))
}

fn state(trap: &ScaledTrap, x: f64, z: f64) -> PhaseState {
    let z = z.abs();
    PhaseState {
        trap: *trap,
        x,
        z,
        phase: if z == 0.0 {
            Phase::InPlane
        } else {
            Phase::OffPlane
        },
        energy: energy_unchecked(x, z, trap),
    }
}

/// Ground-state two-ion crystal from the closed-form branches.
///
/// Every stationary branch that exists at `(α, r₀)` is evaluated and the one
/// with the lower energy is returned.
pub fn equilibrium(trap: &ScaledTrap) -> Result<PhaseState, CrystalError> {
    trap.validate()?;
    if trap.r0 == 0.0 {
        return Err(CrystalError::InvalidTrap("r0 must be positive".into()));
    }
    let in_plane = state(trap, in_plane_x(trap.r0), 0.0);
    match off_plane_point(trap) {
        Some((x, z)) if z > 0.0 => {
            let off = state(trap, x, z);
            Ok(if off.energy < in_plane.energy {
                off
            } else {
                in_plane
            })
        }
        _ => Ok(in_plane),
    }
}

/// Global minimum of `H` found without the closed forms: a grid scan over
/// `(0, r₀ + 3] x [0, 3]`, Nelder–Mead refinement, then Newton polishing on
/// the analytic gradient until `‖∇H‖ ≤ 1e-10` (usually far below).
pub fn brute_force_minimum(trap: &ScaledTrap) -> Result<PhaseState, CrystalError> {
    trap.validate()?;
    let n = 120;
    let x_max = trap.r0 + 3.0;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 1..=n {
        let x = x_max * i as f64 / n as f64;
        for j in 0..=n {
            let z = 3.0 * j as f64 / n as f64;
            let e = energy_unchecked(x, z, trap);
            if e < best.0 {
                best = (e, x, z);
            }
        }
    }
    let f = |p: &[f64]| {
        if p[0] <= 0.0 {
            f64::INFINITY
        } else {
            energy_unchecked(p[0], p[1], trap)
        }
    };
    // Nudge off z = 0 so the simplex can find an off-plane minimum.
    let start = [best.1, best.2.max(1e-3)];
    let nm = NelderMead {
        max_iterations: 4000,
        f_tol: 0.0,
        x_tol: 1e-11,
    }
    .minimize(f, &start, 0.05);
    let (x, z) = newton_polish(nm.x[0], nm.x[1].abs(), trap);
    Ok(state(trap, x, if z.abs() < 1e-12 { 0.0 } else { z }))
}

fn newton_polish(mut x: f64, mut z: f64, trap: &ScaledTrap) -> (f64, f64) {
    let norm = |g: (f64, f64)| g.0.hypot(g.1);
    for _ in 0..200 {
        let g = hamiltonian_gradient(x, z, trap);
        let gn = norm(g);
        if gn <= 1e-14 {
            break;
        }
        let [[a, b], [_, d]] = hamiltonian_hessian(x, z, trap);
        let det = a * d - b * b;
        let (mut dx, mut dz, by_energy) = if a > 0.0 && det > 0.0 {
            ((-d * g.0 + b * g.1) / det, (b * g.0 - a * g.1) / det, false)
        } else {
            // Indefinite: move along the most negative curvature direction.
            let tr = a + d;
            let lam = 0.5 * (tr - ((a - d).powi(2) + 4.0 * b * b).sqrt());
            let (mut vx, mut vz) = if b.abs() > 1e-300 { (lam - d, b) } else if a < d { (1.0, 0.0) } else { (0.0, 1.0) };
            let vn = vx.hypot(vz);
            vx /= vn;
            vz /= vn;
            if vz < 0.0 {
                vx = -vx;
                vz = -vz;
            }
            let len = 0.1 * (x.hypot(z));
            (len * vx - 1e-2 * g.0, len * vz - 1e-2 * g.1, true)
        };
        let e0 = energy_unchecked(x, z, trap);
        let mut accepted = false;
        for _ in 0..60 {
            let (nx, nz) = (x + dx, z + dz);
            if nx > 0.0 {
                let better = if by_energy {
                    energy_unchecked(nx, nz, trap) < e0
                } else {
                    norm(hamiltonian_gradient(nx, nz, trap)) < gn
                        || energy_unchecked(nx, nz, trap) < e0
                };
                if better {
                    x = nx;
                    z = nz;
                    accepted = true;
                    break;
                }
            }
            dx *= 0.5;
            dz *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (x, z.abs())
}

/// Ions at 3D scaled positions `(x, y, z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IonRing {
    pub positions: Vec<[f64; 3]>,
}

impl IonRing {
    /// `n` ions equally spaced on a circle of radius `radius` in the `z = 0` plane.
    pub fn equally_spaced(n: usize, radius: f64) -> Self {
        let positions = (0..n)
            .map(|k| {
                let phi = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                [radius * phi.cos(), radius * phi.sin(), 0.0]
            })
            .collect();
        Self { positions }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Scaled energy of `N` ions:
/// `Σ_{i<j} 1/|rᵢ - rⱼ| + Σᵢ [(ρᵢ - r₀)² + α zᵢ²]` with `ρ` the cylindrical radius.
pub fn n_ion_energy(ring: &IonRing, trap: &ScaledTrap) -> Result<f64, CrystalError> {
    trap.validate()?;
    if ring.is_empty() {
        return Err(CrystalError::InvalidTrap("need at least one ion".into()));
    }
    let mut energy = 0.0;
    for (i, a) in ring.positions.iter().enumerate() {
        if a.iter().any(|c| !c.is_finite()) {
            return Err(CrystalError::InvalidTrap(format!("ion {i} has a non-finite coordinate")));
        }
        for (j, b) in ring.positions.iter().enumerate().skip(i + 1) {
            let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
            if d == 0.0 {
                return Err(CrystalError::CoincidentIons(i, j));
            }
            energy += 1.0 / d;
        }
        let rho = a[0].hypot(a[1]);
        energy += (rho - trap.r0).powi(2) + trap.alpha * a[2] * a[2];
    }
    Ok(energy)
}

/// One cell of a phase map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseMapEntry {
    pub state: PhaseState,
    /// Whether the literal in-plane validity statement agrees with the label.
    pub literal_rule_agrees: bool,
}

/// Equilibria over an evenly spaced `resolution x resolution` grid, `α` outer.
pub fn phase_map(
    alpha_range: (f64, f64),
    r0_range: (f64, f64),
    resolution: usize,
) -> Result<Vec<PhaseMapEntry>, CrystalError> {
    let check = |name: &str, (lo, hi): (f64, f64)| {
        if lo > 0.0 && hi >= lo && hi.is_finite() {
            Ok(())
        } else {
            Err(CrystalError::InvalidRange(format!("{name} range [{lo}, {hi}]")))
        }
    };
    check("alpha", alpha_range)?;
    check("r0", r0_range)?;
    if resolution == 0 {
        return Err(CrystalError::InvalidRange("resolution must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(resolution * resolution);
    for a in linspace(alpha_range, resolution) {
        for r0 in linspace(r0_range, resolution) {
            let trap = ScaledTrap::new(a, r0)?;
            let state = equilibrium(&trap)?;
            let literal = literal_in_plane_condition(&trap);
            out.push(PhaseMapEntry {
                state,
                literal_rule_agrees: literal == (state.phase == Phase::InPlane),
            });
        }
    }
    Ok(out)
}

/// `n` evenly spaced values over `[lo, hi]` (just `lo` for `n = 1`).
pub fn linspace((lo, hi): (f64, f64), n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|k| {
            if k == n - 1 {
                hi
            } else {
                lo + (hi - lo) * k as f64 / (n - 1) as f64
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Bisection on the in-plane stationarity cubic, the oracle for `in_plane_x`.
    fn cubic_root_bisection(r0: f64) -> f64 {
        let f = |x: f64| 8.0 * x * x * x - 8.0 * r0 * x * x - 1.0;
        let (mut lo, mut hi) = (1e-9, r0 + 1.0);
        assert!(f(lo) < 0.0 && f(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn hamiltonian_values() {
        let t = ScaledTrap::new(2.0, 1.0).unwrap();
        assert_eq!(scaled_hamiltonian(1.0, 0.0, &t).unwrap(), 0.5);
        let t = ScaledTrap::new(0.7, 1.3).unwrap();
        assert_relative_eq!(scaled_hamiltonian(1.3, 0.0, &t).unwrap(), 1.0 / 2.6, max_relative = 1e-15);
        let h = scaled_hamiltonian(0.4, 0.9, &t).unwrap();
        assert_eq!(h, scaled_hamiltonian(0.4, -0.9, &t).unwrap());
        assert_eq!(h, scaled_hamiltonian(-0.4, 0.9, &t).unwrap());
        assert_eq!(scaled_hamiltonian(0.0, 0.0, &t), Err(CrystalError::Singularity));
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let t = ScaledTrap::new(0.63, 0.41).unwrap();
        for &(x, z) in &[(0.3, 0.2), (1.1, 0.0), (0.8, 0.55)] {
            let g = hamiltonian_gradient(x, z, &t);
            let h = 1e-6;
            let fd_x = (energy_unchecked(x + h, z, &t) - energy_unchecked(x - h, z, &t)) / (2.0 * h);
            let fd_z = (energy_unchecked(x, z + h, &t) - energy_unchecked(x, z - h, &t)) / (2.0 * h);
            assert!((g.0 - fd_x).abs() <= 1e-4 * g.0.abs().max(1e-3));
            assert!((g.1 - fd_z).abs() <= 1e-4 * g.1.abs().max(1e-3));
        }
    }

    #[test]
    fn in_plane_root_matches_bisection() {
        // x(r0 = 1) = 1.10266... from bisection of 8x³ - 8x² - 1.
        let oracle = cubic_root_bisection(1.0);
        assert!((oracle - 1.1027).abs() < 1e-4);
        for r0 in [1e-6, 1e-3, 0.05, 0.3, 1.0, 2.0, 10.0, 100.0] {
            assert_relative_eq!(in_plane_x(r0), cubic_root_bisection(r0), max_relative = 1e-13);
        }
        assert_relative_eq!(in_plane_x(0.0), 0.5, max_relative = 1e-15);
    }

    #[test]
    fn closed_form_without_polish_is_already_accurate() {
        // Raw cube-root formula, as written, for moderate r0 where it is well conditioned.
        let r0: f64 = 1.0;
        let c = (27.0 + 16.0 * r0.powi(3) - 3.0 * (81.0 + 96.0 * r0.powi(3)).sqrt()).cbrt();
        let x = r0 / 3.0 + 16f64.cbrt() * r0 * r0 / (3.0 * c) + c / 432f64.cbrt();
        assert_relative_eq!(x, cubic_root_bisection(1.0), max_relative = 1e-10);
    }

    #[test]
    fn equilibrium_in_plane_example() {
        let s = equilibrium(&ScaledTrap::new(2.0, 1.0).unwrap()).unwrap();
        assert_eq!(s.phase, Phase::InPlane);
        assert_eq!(s.z, 0.0);
        assert!((s.x - cubic_root_bisection(1.0)).abs() < 1e-12);
    }

    #[test]
    fn equilibrium_off_plane_example() {
        let t = ScaledTrap::new(0.5, 0.1).unwrap();
        let s = equilibrium(&t).unwrap();
        assert_eq!(s.phase, Phase::OffPlane);
        assert_relative_eq!(s.x, 0.2, max_relative = 1e-14);
        let z = 0.5 * ((0.25 - 4.0 * 0.01 * 0.5f64.powf(2.0 / 3.0)) / (0.25 * 0.5f64.powf(2.0 / 3.0))).sqrt();
        assert_relative_eq!(s.z, z, max_relative = 1e-14);
        let b = brute_force_minimum(&t).unwrap();
        assert!((b.x - s.x).abs() < 1e-6 && (b.z - s.z).abs() < 1e-6);
    }

    #[test]
    fn boundary_gives_zero_height() {
        let a: f64 = 0.3;
        let t = ScaledTrap { alpha: a, r0: phase_boundary(a) };
        let (_, z) = off_plane_point(&t).unwrap_or((0.0, 0.0));
        assert!(z < 1e-7, "z = {z}");
    }

    #[test]
    fn phase_boundary_values() {
        assert_eq!(phase_boundary(1.0), 0.0);
        // 0.5 / (2 * 0.5^(1/3)) and 3 / (2 * 4^(1/3))
        assert!((phase_boundary(0.5) - 0.314_980_262_5).abs() < 1e-9);
        assert!((phase_boundary(4.0) - 0.944_940_787_5).abs() < 1e-9);
    }

    #[test]
    fn phase_flip_at_boundary_matches_brute_force() {
        let a = 0.5;
        let b = phase_boundary(a);
        let below = brute_force_minimum(&ScaledTrap::new(a, b * 0.98).unwrap()).unwrap();
        let above = brute_force_minimum(&ScaledTrap::new(a, b * 1.02).unwrap()).unwrap();
        assert_eq!(below.phase, Phase::OffPlane);
        assert_eq!(above.phase, Phase::InPlane);
    }

    #[test]
    fn brute_force_matches_in_plane() {
        let t = ScaledTrap::new(2.0, 1.0).unwrap();
        let b = brute_force_minimum(&t).unwrap();
        let e = equilibrium(&t).unwrap();
        assert!((b.x - e.x).abs() < 1e-8 && (b.z - e.z).abs() < 1e-8);
        let g = hamiltonian_gradient(b.x, b.z, &t);
        assert!(g.0.hypot(g.1) <= 1e-10);
    }

    #[test]
    fn isotropic_trap_stays_in_plane() {
        for r0 in [0.05, 0.4, 1.7] {
            let b = brute_force_minimum(&ScaledTrap::new(1.0, r0).unwrap()).unwrap();
            assert_eq!(b.z, 0.0);
            assert_eq!(b.phase, Phase::InPlane);
        }
    }

    #[test]
    fn brute_force_beats_random_probes() {
        use rand::{Rng, SeedableRng};
        let t = ScaledTrap::new(0.35, 0.2).unwrap();
        let b = brute_force_minimum(&t).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let x: f64 = rng.gen_range(1e-3..4.0);
            let z: f64 = rng.gen_range(-3.0..3.0);
            assert!(b.energy <= energy_unchecked(x, z, &t) + 1e-14);
        }
    }

    #[test]
    fn in_plane_x_independent_of_alpha() {
        let r0 = 1.5;
        let a = equilibrium(&ScaledTrap::new(0.5, r0).unwrap()).unwrap();
        let b = equilibrium(&ScaledTrap::new(5.0, r0).unwrap()).unwrap();
        assert_eq!(a.phase, Phase::InPlane);
        assert_eq!(b.phase, Phase::InPlane);
        assert_eq!(a.x, b.x);
    }

    #[test]
    fn invalid_inputs() {
        assert!(ScaledTrap::new(0.0, 1.0).is_err());
        assert!(ScaledTrap::new(1.0, -1.0).is_err());
        assert!(matches!(
            equilibrium(&ScaledTrap::new(1.0, 0.0).unwrap()),
            Err(CrystalError::InvalidTrap(_))
        ));
    }

    #[test]
    fn n_ion_energy_cases() {
        let t = ScaledTrap::new(0.8, 0.6).unwrap();
        let (x, z) = (0.45, 0.21);
        let pair = IonRing {
            positions: vec![[x, 0.0, z], [-x, 0.0, -z]],
        };
        assert_relative_eq!(
            n_ion_energy(&pair, &t).unwrap(),
            scaled_hamiltonian(x, z, &t).unwrap(),
            max_relative = 1e-14
        );

        let t1 = ScaledTrap::new(1.0, 1.0).unwrap();
        let single = IonRing {
            positions: vec![[1.0, 0.0, 0.0]],
        };
        assert_eq!(n_ion_energy(&single, &t1).unwrap(), 0.0);

        // Four ions on the unit ring: four sides of length sqrt(2), two diagonals of length 2.
        let square = IonRing::equally_spaced(4, 1.0);
        let mut oracle = 0.0;
        let p = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        for i in 0..4 {
            for j in i + 1..4 {
                let d: f64 = f64::hypot(p[i][0] - p[j][0], p[i][1] - p[j][1]);
                oracle += 1.0 / d;
            }
        }
        assert_relative_eq!(oracle, 2.0 * 2f64.sqrt() + 1.0, max_relative = 1e-15);
        assert_relative_eq!(n_ion_energy(&square, &t1).unwrap(), oracle, max_relative = 1e-13);

        let clash = IonRing {
            positions: vec![[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
        };
        assert_eq!(n_ion_energy(&clash, &t1), Err(CrystalError::CoincidentIons(0, 1)));
    }

    #[test]
    fn phase_map_labels_follow_boundary() {
        let map = phase_map((0.1, 3.0), (0.05, 2.0), 12).unwrap();
        assert_eq!(map.len(), 144);
        for e in &map {
            let b = phase_boundary(e.state.trap.alpha);
            let expect = if e.state.trap.alpha < 1.0 && e.state.trap.r0 < b {
                Phase::OffPlane
            } else {
                Phase::InPlane
            };
            assert_eq!(e.state.phase, expect);
        }
        // The literal rule rejects in-plane crystals for alpha < 1 above the boundary.
        assert!(map.iter().any(|e| !e.literal_rule_agrees));
        assert!(phase_map((0.0, 1.0), (0.1, 1.0), 3).is_err());
        assert!(phase_map((0.5, 1.0), (0.1, 1.0), 0).is_err());
    }

    #[test]
    fn linspace_endpoints() {
        assert_eq!(linspace((0.1, 3.0), 20).last(), Some(&3.0));
        assert_eq!(linspace((0.1, 3.0), 1), vec![0.1]);
    }
}
