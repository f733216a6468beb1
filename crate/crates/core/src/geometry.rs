//! Halo trap electrode cross-section.
//!
//! The trap is three concentric conductors (a solid "needle" wire, a "control"
//! tube and an outer "tube"), each split into a top and bottom half separated by
//! a gap about `z = 0`. With the radii fixed by stock parts, the cross-section is
//! described by the three half-gaps `z_n`, `z_c`, `z_t` and the needle tip angle,
//! or equivalently by the dimensionless design parameters:
//!
//! ```text
//! A_h = (2 z_n + 2 z_t) / (2 R_t)     aspect
//! K_h = 2 z_t / 2 z_n                 keystone
//! V_h = (z_c - z_t) / z_n             control offset
//! ```
//!
//! where `R_t` is the midline radius of the outer tube.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("electrode radii must be strictly increasing and positive")]
    InvalidRadii,
    #[error("invalid design parameter: {0}")]
    InvalidParams(String),
    #[error("design parameters give a non-positive spacing ({name} = {value:e} m)")]
    NonPositiveSpacing { name: &'static str, value: f64 },
    #[error("domain too small: {0}")]
    DomainTooSmall(String),
}

/// Radii of the three conductors [m].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectrodeRadii {
    #[serde(rename = "needle_outer_radius_m")]
    pub needle_outer: f64,
    #[serde(rename = "control_inner_radius_m")]
    pub control_inner: f64,
    #[serde(rename = "control_outer_radius_m")]
    pub control_outer: f64,
    #[serde(rename = "tube_inner_radius_m")]
    pub tube_inner: f64,
    #[serde(rename = "tube_outer_radius_m")]
    pub tube_outer: f64,
}

/// Needle : control ID : control OD : tube ID : tube OD.
pub const STOCK_RATIOS: [f64; 5] = [1.0, 1.63, 2.16, 2.65, 3.24];

impl Default for ElectrodeRadii {
    /// The stock parts: 510 µm OD wire, 19 gauge (830/1100 µm) and
    /// 16 gauge (1350/1650 µm) hypodermic tubes.
    fn default() -> Self {
        Self {
            needle_outer: 255e-6,
            control_inner: 415e-6,
            control_outer: 550e-6,
            tube_inner: 675e-6,
            tube_outer: 825e-6,
        }
    }
}

impl ElectrodeRadii {
    /// Radii following the stock ratios for a given needle radius.
    pub fn from_ratios(needle_radius: f64) -> Self {
        let r = STOCK_RATIOS.map(|k| k * needle_radius);
        Self {
            needle_outer: r[0],
            control_inner: r[1],
            control_outer: r[2],
            tube_inner: r[3],
            tube_outer: r[4],
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let r = [
            self.needle_outer,
            self.control_inner,
            self.control_outer,
            self.tube_inner,
            self.tube_outer,
        ];
        let ok = r.iter().all(|v| v.is_finite())
            && r[0] > 0.0
            && r.windows(2).all(|w| w[0] < w[1]);
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidRadii)
        }
    }

    /// Midline radius of the control tube.
    pub fn control_midline(&self) -> f64 {
        0.5 * (self.control_inner + self.control_outer)
    }

    /// Midline radius of the outer tube (`R_t`).
    pub fn tube_midline(&self) -> f64 {
        0.5 * (self.tube_inner + self.tube_outer)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            needle_outer: self.needle_outer * factor,
            control_inner: self.control_inner * factor,
            control_outer: self.control_outer * factor,
            tube_inner: self.tube_inner * factor,
            tube_outer: self.tube_outer * factor,
        }
    }
}

/// The four dimensionless design parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignParams {
    #[serde(rename = "A_h")]
    pub aspect: f64,
    #[serde(rename = "K_h")]
    pub keystone: f64,
    #[serde(rename = "V_h")]
    pub control_offset: f64,
    #[serde(rename = "theta_n_deg")]
    pub needle_angle_deg: f64,
}

impl DesignParams {
    /// The optimized parameter set (A_h, K_h, V_h, θ_n) = (0.676, 1.68, 2.06, 16.7°).
    pub const OPTIMIZED: DesignParams = DesignParams {
        aspect: 0.676,
        keystone: 1.68,
        control_offset: 2.06,
        needle_angle_deg: 16.7,
    };

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |msg: String| Err(GeometryError::InvalidParams(msg));
        if !(self.aspect.is_finite() && self.aspect > 0.0) {
            return bad(format!("A_h must be > 0, got {}", self.aspect));
        }
        if !(self.keystone.is_finite() && self.keystone > 0.0) {
            return bad(format!("K_h must be > 0, got {}", self.keystone));
        }
        if !self.control_offset.is_finite() {
            return bad("V_h must be finite".into());
        }
        if !(self.needle_angle_deg > 0.0 && self.needle_angle_deg < 90.0) {
            return bad(format!(
                "theta_n must lie in (0, 90) degrees, got {}",
                self.needle_angle_deg
            ));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [
            self.aspect,
            self.keystone,
            self.control_offset,
            self.needle_angle_deg,
        ]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self {
            aspect: v[0],
            keystone: v[1],
            control_offset: v[2],
            needle_angle_deg: v[3],
        }
    }
}

impl fmt::Display for DesignParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "A_h={:.4} K_h={:.4} V_h={:.4} theta_n={:.3}deg",
            self.aspect, self.keystone, self.control_offset, self.needle_angle_deg
        )
    }
}

/// Full electrode cross-section.
///
/// Half-gaps are measured from the `z = 0` mid-plane to the nearest point of
/// each conductor. For the needle that is the apex of its conical tip, on axis;
/// the cone face rises by `needle_outer * tan(θ_n)` towards the wire edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapGeometry {
    pub radii: ElectrodeRadii,
    #[serde(rename = "half_gap_needle_m")]
    pub z_needle: f64,
    #[serde(rename = "half_gap_control_m")]
    pub z_control: f64,
    #[serde(rename = "half_gap_tube_m")]
    pub z_tube: f64,
    #[serde(rename = "needle_angle_deg")]
    pub needle_angle_deg: f64,
    #[serde(rename = "insulator_setback_m", default = "default_setback")]
    pub insulator_setback: f64,
}

fn default_setback() -> f64 {
    DEFAULT_INSULATOR_SETBACK
}

/// Insulators sit this far behind the electrode faces.
pub const DEFAULT_INSULATOR_SETBACK: f64 = 500e-6;

/// Builds the cross-section from design parameters.
pub fn build_geometry(
    params: &DesignParams,
    radii: &ElectrodeRadii,
) -> Result<TrapGeometry, GeometryError> {
    params.validate()?;
    radii.validate()?;
    let r_t = radii.tube_midline();
    let z_needle = params.aspect * r_t / (1.0 + params.keystone);
    let z_tube = params.keystone * z_needle;
    let z_control = z_tube + params.control_offset * z_needle;
    for (name, value) in [("z_n", z_needle), ("z_t", z_tube), ("z_c", z_control)] {
        if !(value > 0.0) {
            return Err(GeometryError::NonPositiveSpacing { name, value });
        }
    }
    Ok(TrapGeometry {
        radii: *radii,
        z_needle,
        z_control,
        z_tube,
        needle_angle_deg: params.needle_angle_deg,
        insulator_setback: DEFAULT_INSULATOR_SETBACK,
    })
}

/// Inverse of [`build_geometry`].
pub fn design_params(geometry: &TrapGeometry) -> DesignParams {
    let r_t = geometry.radii.tube_midline();
    DesignParams {
        aspect: (geometry.z_needle + geometry.z_tube) / r_t,
        keystone: geometry.z_tube / geometry.z_needle,
        control_offset: (geometry.z_control - geometry.z_tube) / geometry.z_needle,
        needle_angle_deg: geometry.needle_angle_deg,
    }
}

impl TrapGeometry {
    pub fn validate(&self) -> Result<(), GeometryError> {
        self.radii.validate()?;
        for (name, value) in [
            ("z_n", self.z_needle),
            ("z_t", self.z_tube),
            ("z_c", self.z_control),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(GeometryError::NonPositiveSpacing { name, value });
            }
        }
        if !(self.needle_angle_deg > 0.0 && self.needle_angle_deg < 90.0) {
            return Err(GeometryError::InvalidParams(format!(
                "needle angle must lie in (0, 90) degrees, got {}",
                self.needle_angle_deg
            )));
        }
        if !(self.insulator_setback.is_finite() && self.insulator_setback >= 0.0) {
            return Err(GeometryError::InvalidParams(
                "insulator setback must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Height of the needle face at the wire edge.
    pub fn needle_edge_z(&self) -> f64 {
        self.z_needle + self.radii.needle_outer * self.needle_angle_deg.to_radians().tan()
    }

    /// Largest `z` of any electrode face.
    pub fn max_face_z(&self) -> f64 {
        self.needle_edge_z().max(self.z_control).max(self.z_tube)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            radii: self.radii.scaled(factor),
            z_needle: self.z_needle * factor,
            z_control: self.z_control * factor,
            z_tube: self.z_tube * factor,
            needle_angle_deg: self.needle_angle_deg,
            insulator_setback: self.insulator_setback * factor,
        }
    }

    /// The smallest admissible simulation box: electrodes plus a margin of
    /// two tube outer radii.
    pub fn min_domain(&self) -> Domain {
        let margin = 2.0 * self.radii.tube_outer;
        Domain {
            r_max: self.radii.tube_outer + margin,
            z_max: self.max_face_z() + margin,
        }
    }

    /// Grounded box at `factor` times the tube outer radius.
    pub fn far_field_domain(&self, factor: f64) -> Domain {
        let min = self.min_domain();
        let extent = factor * self.radii.tube_outer;
        Domain {
            r_max: extent.max(min.r_max),
            z_max: extent.max(min.z_max),
        }
    }
}

/// Default far-field box size in units of the tube outer radius.
pub const DEFAULT_FAR_FIELD_FACTOR: f64 = 5.0;

/// Simulation rectangle `[0, r_max] x [-z_max, z_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub r_max: f64,
    pub z_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Electrode {
    NeedleTop,
    NeedleBottom,
    ControlTop,
    ControlBottom,
    TubeTop,
    TubeBottom,
    FarField,
}

impl Electrode {
    pub const ALL: [Electrode; 7] = [
        Electrode::NeedleTop,
        Electrode::NeedleBottom,
        Electrode::ControlTop,
        Electrode::ControlBottom,
        Electrode::TubeTop,
        Electrode::TubeBottom,
        Electrode::FarField,
    ];

    pub const CONDUCTORS: [Electrode; 6] = [
        Electrode::NeedleTop,
        Electrode::NeedleBottom,
        Electrode::ControlTop,
        Electrode::ControlBottom,
        Electrode::TubeTop,
        Electrode::TubeBottom,
    ];

    /// Label of the electrode's image under `z -> -z`.
    pub fn mirrored(self) -> Self {
        use Electrode::*;
        match self {
            NeedleTop => NeedleBottom,
            NeedleBottom => NeedleTop,
            ControlTop => ControlBottom,
            ControlBottom => ControlTop,
            TubeTop => TubeBottom,
            TubeBottom => TubeTop,
            FarField => FarField,
        }
    }

    pub fn group(self) -> Option<ElectrodeGroup> {
        use Electrode::*;
        match self {
            NeedleTop | NeedleBottom => Some(ElectrodeGroup::Needle),
            ControlTop | ControlBottom => Some(ElectrodeGroup::Control),
            TubeTop | TubeBottom => Some(ElectrodeGroup::Tube),
            FarField => None,
        }
    }

    pub fn name(self) -> &'static str {
        use Electrode::*;
        match self {
            NeedleTop => "needle_top",
            NeedleBottom => "needle_bottom",
            ControlTop => "control_top",
            ControlBottom => "control_bottom",
            TubeTop => "tube_top",
            TubeBottom => "tube_bottom",
            FarField => "far_field",
        }
    }
}

/// Top and bottom halves of one conductor, driven together by static biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElectrodeGroup {
    Needle,
    Control,
    Tube,
}

impl ElectrodeGroup {
    pub const ALL: [ElectrodeGroup; 3] = [
        ElectrodeGroup::Needle,
        ElectrodeGroup::Control,
        ElectrodeGroup::Tube,
    ];

    pub fn members(self) -> [Electrode; 2] {
        match self {
            ElectrodeGroup::Needle => [Electrode::NeedleTop, Electrode::NeedleBottom],
            ElectrodeGroup::Control => [Electrode::ControlTop, Electrode::ControlBottom],
            ElectrodeGroup::Tube => [Electrode::TubeTop, Electrode::TubeBottom],
        }
    }
}

/// A point in the (r, z) half-plane [m].
pub type Point = (f64, f64);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: Point,
    pub end: Point,
    pub label: Electrode,
}

/// Labeled boundary of the solve domain.
///
/// Each conductor is a closed polygon traversed in order; the far-field
/// segments cover the parts of the box edge not occupied by conductors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ElectrodeBoundary {
    pub segments: Vec<Segment>,
    /// Box the segments were built for; `None` for hand-assembled boundaries.
    pub domain: Option<Domain>,
}

impl ElectrodeBoundary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a closed polygon for one conductor.
    pub fn push_polygon(&mut self, label: Electrode, vertices: &[Point]) {
        let n = vertices.len();
        for k in 0..n {
            let start = vertices[k];
            let end = vertices[(k + 1) % n];
            if start != end {
                self.segments.push(Segment { start, end, label });
            }
        }
    }

    pub fn push_segment(&mut self, label: Electrode, start: Point, end: Point) {
        self.segments.push(Segment { start, end, label });
    }

    pub fn segments_for(&self, label: Electrode) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(move |s| s.label == label)
    }

    /// Image under `z -> -z` with top/bottom labels swapped.
    pub fn mirrored(&self) -> Self {
        Self {
            segments: self
                .segments
                .iter()
                .map(|s| Segment {
                    start: (s.start.0, -s.start.1),
                    end: (s.end.0, -s.end.1),
                    label: s.label.mirrored(),
                })
                .collect(),
            domain: self.domain,
        }
    }

    /// Even-odd containment test against the closed polygon of `label`.
    /// Points on an edge (within `eps`) count as inside.
    pub fn contains(&self, label: Electrode, p: Point, eps: f64) -> bool {
        let mut inside = false;
        for s in self.segments_for(label) {
            if point_segment_distance(p, s.start, s.end) <= eps {
                return true;
            }
            let (r1, z1) = s.start;
            let (r2, z2) = s.end;
            if (z1 > p.1) != (z2 > p.1) {
                let r_cross = r1 + (p.1 - z1) * (r2 - r1) / (z2 - z1);
                if p.0 < r_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dz) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dz * dz;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dz) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cr, cz) = (a.0 + t * dx, a.1 + t * dz);
    ((p.0 - cr).powi(2) + (p.1 - cz).powi(2)).sqrt()
}

/// Discretizes the cross-section into labeled boundary segments.
///
/// Conductors extend from their faces to the top (bottom) edge of the box.
/// The needle face is a cone with its apex on the axis at `z_n`.
pub fn boundary_segments(
    geometry: &TrapGeometry,
    domain: &Domain,
) -> Result<ElectrodeBoundary, GeometryError> {
    geometry.validate()?;
    let min = geometry.min_domain();
    if domain.r_max < min.r_max * (1.0 - 1e-12) || domain.z_max < min.z_max * (1.0 - 1e-12) {
        return Err(GeometryError::DomainTooSmall(format!(
            "need r_max >= {:.3e} m and z_max >= {:.3e} m, got {:.3e} m x {:.3e} m",
            min.r_max, min.z_max, domain.r_max, domain.z_max
        )));
    }
    let r = &geometry.radii;
    let top = domain.z_max;
    let mut boundary = ElectrodeBoundary {
        segments: Vec::new(),
        domain: Some(*domain),
    };

    let needle = [
        (0.0, geometry.z_needle),
        (r.needle_outer, geometry.needle_edge_z()),
        (r.needle_outer, top),
        (0.0, top),
    ];
    let control = [
        (r.control_inner, geometry.z_control),
        (r.control_outer, geometry.z_control),
        (r.control_outer, top),
        (r.control_inner, top),
    ];
    let tube = [
        (r.tube_inner, geometry.z_tube),
        (r.tube_outer, geometry.z_tube),
        (r.tube_outer, top),
        (r.tube_inner, top),
    ];
    let flip = |pts: &[Point]| -> Vec<Point> { pts.iter().map(|&(a, b)| (a, -b)).collect() };

    boundary.push_polygon(Electrode::NeedleTop, &needle);
    boundary.push_polygon(Electrode::NeedleBottom, &flip(&needle));
    boundary.push_polygon(Electrode::ControlTop, &control);
    boundary.push_polygon(Electrode::ControlBottom, &flip(&control));
    boundary.push_polygon(Electrode::TubeTop, &tube);
    boundary.push_polygon(Electrode::TubeBottom, &flip(&tube));

    // Box edges outside the conductor footprints.
    let gaps = [
        (r.needle_outer, r.control_inner),
        (r.control_outer, r.tube_inner),
        (r.tube_outer, domain.r_max),
    ];
    for &(a, b) in &gaps {
        boundary.push_segment(Electrode::FarField, (a, top), (b, top));
        boundary.push_segment(Electrode::FarField, (a, -top), (b, -top));
    }
    boundary.push_segment(Electrode::FarField, (domain.r_max, -top), (domain.r_max, top));
    Ok(boundary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rt() -> f64 {
        ElectrodeRadii::default().tube_midline()
    }

    #[test]
    fn equal_spacing_case() {
        let p = DesignParams {
            aspect: 2.0,
            keystone: 1.0,
            control_offset: 0.0,
            needle_angle_deg: 10.0,
        };
        let g = build_geometry(&p, &ElectrodeRadii::default()).unwrap();
        assert_relative_eq!(g.z_needle, rt(), max_relative = 1e-14);
        assert_relative_eq!(g.z_tube, rt(), max_relative = 1e-14);
        assert_relative_eq!(g.z_control, rt(), max_relative = 1e-14);
    }

    #[test]
    fn unit_parameter_case() {
        let p = DesignParams {
            aspect: 1.0,
            keystone: 1.0,
            control_offset: 1.0,
            needle_angle_deg: 10.0,
        };
        let g = build_geometry(&p, &ElectrodeRadii::default()).unwrap();
        assert_relative_eq!(g.z_needle, rt() / 2.0, max_relative = 1e-14);
        assert_relative_eq!(g.z_control, rt(), max_relative = 1e-14);
        assert_relative_eq!(g.z_tube, rt() / 2.0, max_relative = 1e-14);
    }

    #[test]
    fn optimized_spacings_match_hand_inversion() {
        // Hand inversion with R_t = 750 µm:
        //   z_n + z_t = 0.676 * 750 = 507.0, z_t = 1.68 z_n
        //   z_n = 507 / 2.68 = 189.179..., z_t = 317.820..., z_c = z_t + 2.06 z_n = 707.529...
        let g = build_geometry(&DesignParams::OPTIMIZED, &ElectrodeRadii::default()).unwrap();
        assert_relative_eq!(rt(), 750e-6, max_relative = 1e-14);
        assert!((g.z_needle - 189.179_104_5e-6).abs() < 1e-12);
        assert!((g.z_tube - 317.820_895_5e-6).abs() < 1e-12);
        assert!((g.z_control - 707.529_850_7e-6).abs() < 1e-12);
    }

    #[test]
    fn design_params_of_symmetric_geometry() {
        let r = ElectrodeRadii::default();
        let g = TrapGeometry {
            radii: r,
            z_needle: rt(),
            z_control: rt(),
            z_tube: rt(),
            needle_angle_deg: 15.0,
            insulator_setback: DEFAULT_INSULATOR_SETBACK,
        };
        let p = design_params(&g);
        assert_relative_eq!(p.aspect, 2.0, max_relative = 1e-14);
        assert_relative_eq!(p.keystone, 1.0, max_relative = 1e-14);
        assert!(p.control_offset.abs() < 1e-14);
    }

    #[test]
    fn optimized_geometry_roundtrip() {
        let g = build_geometry(&DesignParams::OPTIMIZED, &ElectrodeRadii::default()).unwrap();
        let p = design_params(&g);
        assert_relative_eq!(p.aspect, 0.676, max_relative = 1e-12);
        assert_relative_eq!(p.keystone, 1.68, max_relative = 1e-12);
        assert_relative_eq!(p.control_offset, 2.06, max_relative = 1e-12);
    }

    #[test]
    fn negative_control_offset_is_rejected() {
        let p = DesignParams {
            aspect: 1.0,
            keystone: 1.0,
            control_offset: -1.5,
            needle_angle_deg: 10.0,
        };
        let err = build_geometry(&p, &ElectrodeRadii::default()).unwrap_err();
        assert!(matches!(err, GeometryError::NonPositiveSpacing { name: "z_c", .. }));
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = DesignParams::OPTIMIZED;
        p.needle_angle_deg = 90.0;
        assert!(build_geometry(&p, &ElectrodeRadii::default()).is_err());
        p = DesignParams::OPTIMIZED;
        p.aspect = 0.0;
        assert!(build_geometry(&p, &ElectrodeRadii::default()).is_err());
    }

    #[test]
    fn stock_radii_follow_ratios() {
        let d = ElectrodeRadii::default();
        let from = ElectrodeRadii::from_ratios(255e-6);
        for (a, b) in [
            (d.control_inner, from.control_inner),
            (d.control_outer, from.control_outer),
            (d.tube_inner, from.tube_inner),
            (d.tube_outer, from.tube_outer),
        ] {
            assert_relative_eq!(a, b, max_relative = 3e-3);
        }
    }

    fn optimized_boundary() -> (TrapGeometry, Domain, ElectrodeBoundary) {
        let g = build_geometry(&DesignParams::OPTIMIZED, &ElectrodeRadii::default()).unwrap();
        let d = g.far_field_domain(DEFAULT_FAR_FIELD_FACTOR);
        let b = boundary_segments(&g, &d).unwrap();
        (g, d, b)
    }

    #[test]
    fn segments_are_mirror_symmetric() {
        let (_, _, b) = optimized_boundary();
        let m = b.mirrored();
        for s in &m.segments {
            let found = b.segments.iter().any(|t| {
                t.label == s.label
                    && ((t.start == s.start && t.end == s.end)
                        || (t.start == s.end && t.end == s.start))
            });
            assert!(found, "mirror image of {s:?} missing");
        }
    }

    #[test]
    fn segments_stay_inside_domain_and_cover_all_labels() {
        let (_, d, b) = optimized_boundary();
        for s in &b.segments {
            for p in [s.start, s.end] {
                assert!(p.0 >= 0.0 && p.0 <= d.r_max);
                assert!(p.1.abs() <= d.z_max);
            }
        }
        for label in Electrode::ALL {
            assert!(b.segments_for(label).count() > 0, "{label:?} missing");
        }
    }

    #[test]
    fn needle_face_is_cone_and_flattens_with_small_angle() {
        let (g, _, b) = optimized_boundary();
        let face = b.segments_for(Electrode::NeedleTop).next().unwrap();
        assert_eq!(face.start, (0.0, g.z_needle));
        let slope = (face.end.1 - face.start.1) / (face.end.0 - face.start.0);
        assert_relative_eq!(slope, 16.7f64.to_radians().tan(), max_relative = 1e-12);

        let mut flat = g;
        flat.needle_angle_deg = 1e-9;
        let b = boundary_segments(&flat, &flat.far_field_domain(5.0)).unwrap();
        let face = b.segments_for(Electrode::NeedleTop).next().unwrap();
        assert!((face.end.1 - face.start.1).abs() < 1e-12);
    }

    #[test]
    fn scaling_scales_coordinates() {
        let (g, d, b) = optimized_boundary();
        let lambda = 3.5;
        let d2 = Domain {
            r_max: d.r_max * lambda,
            z_max: d.z_max * lambda,
        };
        let b2 = boundary_segments(&g.scaled(lambda), &d2).unwrap();
        assert_eq!(b.segments.len(), b2.segments.len());
        for (s, t) in b.segments.iter().zip(&b2.segments) {
            assert_eq!(s.label, t.label);
            for (p, q) in [(s.start, t.start), (s.end, t.end)] {
                assert!((p.0 * lambda - q.0).abs() <= 1e-15 + 1e-12 * q.0.abs());
                assert!((p.1 * lambda - q.1).abs() <= 1e-15 + 1e-12 * q.1.abs());
            }
        }
    }

    #[test]
    fn small_domain_rejected() {
        let g = build_geometry(&DesignParams::OPTIMIZED, &ElectrodeRadii::default()).unwrap();
        let d = Domain {
            r_max: 1e-3,
            z_max: 5e-3,
        };
        assert!(matches!(
            boundary_segments(&g, &d),
            Err(GeometryError::DomainTooSmall(_))
        ));
    }

    #[test]
    fn containment() {
        let (g, _, b) = optimized_boundary();
        assert!(b.contains(Electrode::NeedleTop, (0.0, g.z_needle + 1e-6), 1e-12));
        assert!(!b.contains(Electrode::NeedleTop, (200e-6, g.z_needle + 1e-6), 1e-12));
        assert!(b.contains(Electrode::TubeBottom, (700e-6, -g.z_tube - 1e-6), 1e-12));
        assert!(!b.contains(Electrode::TubeBottom, (700e-6, 0.0), 1e-12));
    }

    #[test]
    fn json_roundtrip() {
        let (g, _, _) = optimized_boundary();
        let s = serde_json::to_string(&g).unwrap();
        assert!(s.contains("half_gap_needle_m"));
        let back: TrapGeometry = serde_json::from_str(&s).unwrap();
        assert_eq!(g, back);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn design_roundtrip(a in 0.3f64..3.0, k in 0.5f64..4.0, v in 0.0f64..5.0, th in 5.0f64..45.0) {
                let p = DesignParams { aspect: a, keystone: k, control_offset: v, needle_angle_deg: th };
                let g = build_geometry(&p, &ElectrodeRadii::default()).unwrap();
                let q = design_params(&g);
                prop_assert!((q.aspect - a).abs() <= 1e-12 * a);
                prop_assert!((q.keystone - k).abs() <= 1e-12 * k);
                prop_assert!((q.control_offset - v).abs() <= 1e-12 * v.max(1.0));
                prop_assert_eq!(q.needle_angle_deg, th);
            }
        }
    }
}
