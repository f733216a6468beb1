//! Trap centre search and quadrupole fits.
//!
//! Near the RF node at `(R, 0)` the solved potentials are compared with
//!
//! ```text
//! V_RF(s, z)     = -2 V₀ s z / ℓ_RF²
//! U_static(s, z) = U_eff (s² - z²) / ℓ_static²      (U_eff = 1 V)
//! ```
//!
//! with `s = r - R`. Both fits are linear least squares in `1/ℓ²` over the
//! grid nodes inside a disc around the node; the static fit also carries a
//! free additive constant. The mismatch metric is the midpoint sum
//! `Σ (model - field)² h²` over the same nodes [V²·m²].

use crate::field::{FieldError, ScalarField};
use crate::geometry::Electrode;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("no RF node found along z = 0")]
    NoNodeFound,
    #[error("degenerate fit: {0}")]
    DegenerateFit(&'static str),
    #[error("fit region contains no grid nodes")]
    EmptyRegion,
    #[error("invalid fit region: {0}")]
    InvalidRegion(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Default fit disc radius [m].
pub const DEFAULT_REGION_RADIUS: f64 = 50e-6;

/// Disc of radius `radius` centred on `(center_r, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitRegion {
    pub center_r: f64,
    pub radius: f64,
}

impl FitRegion {
    pub fn new(center_r: f64, radius: f64) -> Self {
        Self { center_r, radius }
    }

    /// The disc must sit strictly inside the grid and contain no fixed node.
    pub fn validate(&self, field: &ScalarField) -> Result<(), FitError> {
        let g = &field.grid;
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(FitError::InvalidRegion("radius must be positive".into()));
        }
        let inside = self.center_r - self.radius > g.r_min
            && self.center_r + self.radius < g.r_max
            && -self.radius > g.z_min
            && self.radius < g.z_max;
        if !inside {
            return Err(FitError::InvalidRegion(format!(
                "disc at r = {:.3e} m, radius {:.3e} m leaves the grid",
                self.center_r, self.radius
            )));
        }
        let mut hit = None;
        self.for_each_node(field, |i, j, _, _| {
            if field.raster.is_fixed(i, j) {
                hit = Some((i, j));
            }
        });
        if let Some((i, j)) = hit {
            return Err(FitError::InvalidRegion(format!(
                "disc touches a conductor at r = {:.3e} m, z = {:.3e} m",
                g.r(i),
                g.z(j)
            )));
        }
        Ok(())
    }

    /// Visits nodes with `s² + z² <= radius²`, passing `(i, j, s, z)`.
    pub fn for_each_node(&self, field: &ScalarField, mut f: impl FnMut(usize, usize, f64, f64)) {
        let g = &field.grid;
        let (i0, _) = g.nearest(self.center_r - self.radius, 0.0);
        let (i1, _) = g.nearest(self.center_r + self.radius, 0.0);
        let (_, j0) = g.nearest(0.0, -self.radius);
        let (_, j1) = g.nearest(0.0, self.radius);
        let r2 = self.radius * self.radius * (1.0 + 1e-12);
        for i in i0.saturating_sub(1)..=(i1 + 1).min(g.n_r - 1) {
            let s = g.r(i) - self.center_r;
            for j in j0.saturating_sub(1)..=(j1 + 1).min(g.n_z - 1) {
                let z = g.z(j);
                if s * s + z * z <= r2 {
                    f(i, j, s, z);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    Rf,
    Static,
}

/// Result of a single-coefficient quadrupole fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadrupoleFit {
    pub model: FitModel,
    /// Normalization length ℓ [m].
    pub ell: f64,
    /// Mismatch metric [V²·m²].
    pub chi2: f64,
    pub region: FitRegion,
    /// V₀ for the RF model, U_eff for the static model [V].
    pub reference_voltage: f64,
    /// +1 when the fitted coefficient has the sign of the model as written.
    pub orientation: i8,
    /// Constant removed before computing χ² (static fits only) [V].
    pub offset: f64,
}

impl QuadrupoleFit {
    /// Fitted coefficient `±1/ℓ²` [1/m²].
    pub fn coefficient(&self) -> f64 {
        self.orientation as f64 / (self.ell * self.ell)
    }

    /// Model potential at `(s, z)`.
    pub fn predict(&self, s: f64, z: f64) -> f64 {
        let c = self.coefficient();
        match self.model {
            FitModel::Rf => -2.0 * self.reference_voltage * c * s * z,
            FitModel::Static => self.reference_voltage * c * (s * s - z * z) + self.offset,
        }
    }

    /// Serializable summary with SI unit suffixes.
    pub fn summary(&self) -> FitSummary {
        FitSummary {
            model: self.model,
            ell_m: self.ell,
            chi2_v2m2: self.chi2,
            center_r_m: self.region.center_r,
            region_radius_m: self.region.radius,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub model: FitModel,
    pub ell_m: f64,
    #[serde(rename = "chi2_V2m2")]
    pub chi2_v2m2: f64,
    pub center_r_m: f64,
    pub region_radius_m: f64,
}

/// `Σ (model(s, z) - V)² h²` over nodes in the disc.
pub fn chi2(
    field: &ScalarField,
    model: impl Fn(f64, f64) -> f64,
    region: &FitRegion,
) -> Result<f64, FitError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    region.for_each_node(field, |i, j, s, z| {
        let d = model(s, z) - field.at(i, j);
        sum += d * d;
        count += 1;
    });
    if count == 0 {
        return Err(FitError::EmptyRegion);
    }
    Ok(sum * field.grid.h * field.grid.h)
}

/// Largest applied conductor voltage, or 1 V for fields without conductors.
fn reference_voltage(field: &ScalarField) -> f64 {
    let v = field
        .voltages
        .iter()
        .filter(|(e, _)| **e != Electrode::FarField)
        .fold(0.0f64, |m, (_, v)| m.max(v.abs()));
    if v > 0.0 {
        v
    } else {
        1.0
    }
}

/// Fits `-2 V₀ s z / ℓ²` by least squares; `V₀` is the largest applied voltage.
pub fn fit_rf(field: &ScalarField, region: &FitRegion) -> Result<QuadrupoleFit, FitError> {
    region.validate(field)?;
    let v0 = reference_voltage(field);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    region.for_each_node(field, |i, j, s, z| {
        let x = -2.0 * v0 * s * z;
        let y = field.at(i, j);
        sxy += x * y;
        sxx += x * x;
        syy += y * y;
    });
    if sxx == 0.0 {
        return Err(FitError::EmptyRegion);
    }
    if sxy.abs() <= 1e-12 * (sxx * syy).sqrt() || sxy == 0.0 {
        return Err(FitError::DegenerateFit("field has no s·z component"));
    }
    let c = sxy / sxx;
    let mut fit = QuadrupoleFit {
        model: FitModel::Rf,
        ell: c.abs().powf(-0.5),
        chi2: 0.0,
        region: *region,
        reference_voltage: v0,
        orientation: if c > 0.0 { 1 } else { -1 },
        offset: 0.0,
    };
    fit.chi2 = chi2(field, |s, z| fit.predict(s, z), region)?;
    Ok(fit)
}

/// Fits `(s² - z²) / ℓ² + k` with `U_eff = 1 V`; `k` is discarded from the
/// reported length but removed before computing χ².
pub fn fit_static(field: &ScalarField, region: &FitRegion) -> Result<QuadrupoleFit, FitError> {
    region.validate(field)?;
    let (mut n, mut sx, mut sy, mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    region.for_each_node(field, |i, j, s, z| {
        let x = s * s - z * z;
        let y = field.at(i, j);
        n += 1.0;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
    });
    if n == 0.0 {
        return Err(FitError::EmptyRegion);
    }
    let var_x = n * sxx - sx * sx;
    let cov = n * sxy - sx * sy;
    let var_y = (n * syy - sy * sy).max(0.0);
    if var_x <= 0.0 {
        return Err(FitError::DegenerateFit("region too small for a curvature fit"));
    }
    if cov.abs() <= 1e-12 * (var_x * var_y).sqrt() || cov == 0.0 {
        return Err(FitError::DegenerateFit("field has no s² - z² component"));
    }
    let c = cov / var_x;
    let offset = (sy - c * sx) / n;
    let mut fit = QuadrupoleFit {
        model: FitModel::Static,
        ell: c.abs().powf(-0.5),
        chi2: 0.0,
        region: *region,
        reference_voltage: 1.0,
        orientation: if c > 0.0 { 1 } else { -1 },
        offset,
    };
    fit.chi2 = chi2(field, |s, z| fit.predict(s, z), region)?;
    Ok(fit)
}

/// Radial search window for the RF node: between the needle and the tube
/// when the field carries conductors, otherwise the whole mid-plane row.
fn node_search_window(field: &ScalarField, j0: usize) -> (usize, usize) {
    let g = &field.grid;
    let raster = &field.raster;
    let mut needle_edge = None;
    let mut tube_edge = None;
    for i in 0..g.n_r {
        for j in 0..g.n_z {
            match raster.label(i, j) {
                Some(Electrode::NeedleTop | Electrode::NeedleBottom) => {
                    needle_edge = Some(needle_edge.map_or(i, |e: usize| e.max(i)));
                }
                Some(Electrode::TubeTop | Electrode::TubeBottom) => {
                    tube_edge = Some(tube_edge.map_or(i, |e: usize| e.min(i)));
                }
                _ => {}
            }
        }
    }
    let lo = needle_edge.map_or(1, |e| e + 1);
    let mut hi = tube_edge.map_or(g.n_r - 2, |e| e.saturating_sub(1));
    // Stop at the first fixed node along the row.
    for i in lo..=hi.min(g.n_r - 1) {
        if raster.is_fixed(i, j0) {
            hi = i.saturating_sub(1);
            break;
        }
    }
    (lo, hi)
}

/// Radius of the RF node on the mid-plane.
///
/// Minimizes `|∇V|²` over mid-plane nodes between the needle and the tube and
/// refines with a parabola through the three lowest samples.
pub fn locate_trap_center(rf_field: &ScalarField) -> Result<f64, FitError> {
    let g = &rf_field.grid;
    let (j0, z_offset) = match g.mid_plane() {
        Some(j) => (j, 0.0),
        None => {
            let (_, j) = g.nearest(0.0, 0.0);
            (j, g.z(j))
        }
    };
    if z_offset.abs() > 1e-9 * g.h {
        return Err(FitError::InvalidRegion("grid has no node row on z = 0".into()));
    }
    let (lo, hi) = node_search_window(rf_field, j0);
    if hi < lo + 2 {
        return Err(FitError::NoNodeFound);
    }
    let mag2 = |i: usize| {
        let (dr, dz) = rf_field.node_gradient(i, j0);
        dr * dr + dz * dz
    };
    let values: Vec<f64> = (lo..=hi).map(mag2).collect();
    let k = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap();
    if k == 0 || k == values.len() - 1 {
        return Err(FitError::NoNodeFound);
    }
    let (fm, f0, fp) = (values[k - 1], values[k], values[k + 1]);
    let denom = fm - 2.0 * f0 + fp;
    let shift = if denom > 0.0 {
        (0.5 * (fm - fp) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let r_node = g.r(lo + k) + shift * g.h;

    // The node must be a genuine null: compare with the field halfway to the
    // ends of the search window.
    let at = |r: f64| -> Result<f64, FitError> {
        let (dr, dz) = crate::field::gradient(rf_field, (r, 0.0))?;
        Ok(dr.hypot(dz))
    };
    let center = at(r_node)?;
    let inner = at(0.5 * (r_node + g.r(lo)))?;
    let outer = at(0.5 * (r_node + g.r(hi)))?;
    if !(center <= 0.01 * inner.min(outer)) {
        return Err(FitError::NoNodeFound);
    }
    Ok(r_node)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::GridSpec;
    use approx::assert_relative_eq;

    fn grid() -> GridSpec {
        GridSpec::new(0.0, -6e-4, 4e-6, 301, 301).unwrap()
    }

    #[test]
    fn locate_planted_node() {
        let g = grid();
        let r0 = 431.3e-6;
        let f = ScalarField::from_fn(&g, |r, z| -2.0 * 7.0 * (r - r0) * z / (4e-4f64).powi(2));
        let r = locate_trap_center(&f).unwrap();
        assert!((r - r0).abs() < g.h / 10.0, "{r} vs {r0}");
        let f2 = f.scaled(13.0);
        assert_eq!(locate_trap_center(&f2).unwrap(), r);
    }

    #[test]
    fn locate_is_translation_invariant() {
        let r0 = 431.3e-6;
        let ell2 = (4e-4f64).powi(2);
        let g1 = GridSpec::new(0.0, -6e-4, 4e-6, 301, 301).unwrap();
        let g2 = GridSpec::new(40e-6, -6e-4, 4e-6, 301, 301).unwrap();
        let a = locate_trap_center(&ScalarField::from_fn(&g1, |r, z| -2.0 * (r - r0) * z / ell2)).unwrap();
        let b = locate_trap_center(&ScalarField::from_fn(&g2, |r, z| -2.0 * (r - r0) * z / ell2)).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn no_node_in_uniform_field() {
        let f = ScalarField::from_fn(&grid(), |_, z| 1000.0 * z);
        assert_eq!(locate_trap_center(&f), Err(FitError::NoNodeFound));
    }

    #[test]
    fn rf_self_fit() {
        let g = grid();
        let (r0, ell) = (400e-6, 413e-6);
        let f = ScalarField::from_fn(&g, |r, z| -2.0 * (r - r0) * z / (ell * ell));
        let fit = fit_rf(&f, &FitRegion::new(r0, 50e-6)).unwrap();
        assert_relative_eq!(fit.ell, ell, max_relative = 1e-10);
        assert!(fit.chi2 < 1e-20);
        assert_eq!(fit.orientation, 1);

        let wide = fit_rf(&f, &FitRegion::new(r0, 100e-6)).unwrap();
        assert!((wide.ell - fit.ell).abs() < 1e-3 * fit.ell);
    }

    #[test]
    fn static_self_fit_with_offset_and_sign_flip() {
        let g = grid();
        let (r0, ell, k) = (400e-6, 328e-6, 0.37);
        let f = ScalarField::from_fn(&g, |r, z| ((r - r0).powi(2) - z * z) / (ell * ell) + k);
        let fit = fit_static(&f, &FitRegion::new(r0, 50e-6)).unwrap();
        assert_relative_eq!(fit.ell, ell, max_relative = 1e-10);
        assert_relative_eq!(fit.offset, k, max_relative = 1e-10);
        assert!(fit.chi2 < 1e-20);
        assert_eq!(fit.orientation, 1);

        let flipped = fit_static(&f.scaled(-1.0), &FitRegion::new(r0, 50e-6)).unwrap();
        assert_relative_eq!(flipped.ell, ell, max_relative = 1e-10);
        assert_eq!(flipped.orientation, -1);
    }

    #[test]
    fn degenerate_fits() {
        let g = grid();
        let flat = ScalarField::from_fn(&g, |_, _| 0.25);
        let region = FitRegion::new(300e-6, 50e-6);
        assert!(matches!(fit_rf(&flat, &region), Err(FitError::DegenerateFit(_))));
        assert!(matches!(fit_static(&flat, &region), Err(FitError::DegenerateFit(_))));
    }

    #[test]
    fn region_must_fit_inside_grid() {
        let f = ScalarField::from_fn(&grid(), |_, _| 0.0);
        assert!(matches!(
            fit_rf(&f, &FitRegion::new(20e-6, 50e-6)),
            Err(FitError::InvalidRegion(_))
        ));
    }

    #[test]
    fn chi2_properties() {
        let g = grid();
        let f = ScalarField::from_fn(&g, |r, z| (r * 1e3).sin() * (z * 2e3).cos());
        let region = FitRegion::new(400e-6, 50e-6);
        assert_eq!(chi2(&f, |s, z| f.interpolate(400e-6 + s, z).unwrap(), &region).unwrap(), 0.0);

        let offset = chi2(
            &f,
            |s, z| f.interpolate(400e-6 + s, z).unwrap() + 1e-3,
            &region,
        )
        .unwrap();
        let area = std::f64::consts::PI * 50e-6f64.powi(2);
        let quantization = 2.0 * std::f64::consts::PI * 50e-6 * g.h;
        assert!((offset - 1e-6 * area).abs() <= 1e-6 * quantization, "{offset}");

        let tiny = FitRegion::new(400e-6 + 0.5 * g.h, 0.1 * g.h);
        assert_eq!(chi2(&f, |_, _| 0.0, &tiny), Err(FitError::EmptyRegion));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn chi2_nonnegative(a in -5.0f64..5.0, b in -5.0f64..5.0, c in -1.0f64..1.0) {
                let g = grid();
                let f = ScalarField::from_fn(&g, |r, z| a * r * 1e3 + b * z * z * 1e6 + c);
                let v = chi2(&f, |s, z| (s * z * 1e8).cos(), &FitRegion::new(300e-6, 40e-6)).unwrap();
                prop_assert!(v >= 0.0);
            }

            #[test]
            fn planted_lengths_recovered(ell in 100e-6f64..1e-3, r0 in 300e-6f64..500e-6) {
                let g = grid();
                let rf = ScalarField::from_fn(&g, |r, z| -2.0 * (r - r0) * z / (ell * ell));
                let st = ScalarField::from_fn(&g, |r, z| ((r - r0).powi(2) - z * z) / (ell * ell));
                let region = FitRegion::new(r0, 50e-6);
                let a = fit_rf(&rf, &region).unwrap();
                let b = fit_static(&st, &region).unwrap();
                prop_assert!((a.ell - ell).abs() <= 1e-3 * ell);
                prop_assert!((b.ell - ell).abs() <= 1e-3 * ell);
                prop_assert!(a.chi2 <= 1e-10 && b.chi2 <= 1e-10);
            }
        }
    }
}
