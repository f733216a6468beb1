//! Full evaluation pipeline and the Monte Carlo geometry search.
//!
//! One evaluation: build the cross-section, solve the RF field and the three
//! static basis fields, locate the RF node `R`, retune the control voltage so
//! the static saddle sits at `R`, and fit both quadrupole models there.
//!
//! The search perturbs `(A_h, K_h, V_h, θ_n)` with Gaussian steps and keeps a
//! proposal only if it lowers the normalized objective
//! `w χ²_RF/χ²_RF,0 + (1 − w) χ²_static/χ²_static,0` without raising χ²_RF.

use crate::field::{
    gradient, solve_basis_raster, solve_raster, superpose, BasisFields, FieldError, GridSpec,
    Raster, ScalarField, SolverOptions, Voltages, DEFAULT_TOLERANCE,
};
use crate::fitting::{
    fit_rf, fit_static, locate_trap_center, FitError, FitRegion, QuadrupoleFit,
    DEFAULT_REGION_RADIUS,
};
use crate::geometry::{
    boundary_segments, build_geometry, DesignParams, Electrode, ElectrodeGroup, ElectrodeRadii,
    GeometryError, TrapGeometry, DEFAULT_FAR_FIELD_FACTOR,
};
use crate::io::fmt_f64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizeError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("control electrodes have no radial field at the node; saddle cannot be moved")]
    NoSolution,
    #[error("initial geometry is not a trap: {0}")]
    InfeasibleStart(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl OptimizeError {
    /// True for problems with the inputs rather than the numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Self::Geometry(_) | Self::InvalidConfig(_))
    }
}

/// Applied potentials. `u0` is the value placed on both control electrodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoltageSet {
    #[serde(rename = "V0_V")]
    pub v0: f64,
    #[serde(rename = "U0_V")]
    pub u0: f64,
    #[serde(rename = "U1_V")]
    pub u1: f64,
    #[serde(rename = "U2_V")]
    pub u2: f64,
}

impl VoltageSet {
    /// 300 V RF with the reference bias set (−42.97, 1.09, 1.03) V.
    pub const REFERENCE: VoltageSet = VoltageSet {
        v0: 300.0,
        u0: -42.97,
        u1: 1.09,
        u2: 1.03,
    };

    pub fn validate(&self) -> Result<(), OptimizeError> {
        let finite = [self.v0, self.u0, self.u1, self.u2].iter().all(|v| v.is_finite());
        if !finite || self.v0 <= 0.0 {
            return Err(OptimizeError::InvalidConfig(
                "voltages must be finite with V0 > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            v0: self.v0,
            u0: self.u0 * factor,
            u1: self.u1 * factor,
            u2: self.u2 * factor,
        }
    }

    /// Static coefficients per electrode group.
    pub fn static_coefficients(&self) -> BTreeMap<ElectrodeGroup, f64> {
        [
            (ElectrodeGroup::Needle, self.u1),
            (ElectrodeGroup::Control, self.u0),
            (ElectrodeGroup::Tube, self.u2),
        ]
        .into_iter()
        .collect()
    }
}

/// RF drive with amplitude `v0`: top needle and bottom tube in phase, the
/// other two in antiphase, so `z = 0` is an RF equipotential at 0 V.
pub fn rf_voltages(v0: f64) -> Voltages {
    [
        (Electrode::NeedleTop, v0),
        (Electrode::TubeBottom, v0),
        (Electrode::NeedleBottom, -v0),
        (Electrode::TubeTop, -v0),
    ]
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Minimum radial cell count (rounded up to a multiple of 32).
    pub min_cells_r: usize,
    /// Box size in tube outer radii.
    pub far_field_factor: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            min_cells_r: 416,
            far_field_factor: DEFAULT_FAR_FIELD_FACTOR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub radii: ElectrodeRadii,
    pub grid: GridConfig,
    pub solver_tol: f64,
    #[serde(rename = "fit_region_radius_m")]
    pub fit_radius: f64,
    /// U1 and U2 are held here; U0 is retuned per geometry.
    pub anchor: VoltageSet,
    /// Allowed `|∂U/∂r|(R, 0)` relative to the largest group contribution.
    pub saddle_tolerance: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            radii: ElectrodeRadii::default(),
            grid: GridConfig::default(),
            solver_tol: DEFAULT_TOLERANCE,
            fit_radius: DEFAULT_REGION_RADIUS,
            anchor: VoltageSet::REFERENCE,
            saddle_tolerance: 1e-4,
        }
    }
}

impl EvaluationConfig {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        self.radii.validate()?;
        self.anchor.validate()?;
        let bad = |m: &str| Err(OptimizeError::InvalidConfig(m.into()));
        if !(self.solver_tol > 0.0 && self.solver_tol < 1.0) {
            return bad("solver_tol must lie in (0, 1)");
        }
        if !(self.fit_radius > 0.0 && self.fit_radius.is_finite()) {
            return bad("fit_region_radius_m must be positive");
        }
        if !(self.grid.far_field_factor >= 1.0 && self.grid.far_field_factor.is_finite()) {
            return bad("far_field_factor must be at least 1");
        }
        if self.grid.min_cells_r < 32 {
            return bad("min_cells_r must be at least 32");
        }
        if !(self.saddle_tolerance > 0.0) {
            return bad("saddle_tolerance must be positive");
        }
        Ok(())
    }
}

/// Solved fields for one geometry.
#[derive(Debug, Clone)]
pub struct SolvedTrap {
    pub geometry: TrapGeometry,
    /// RF solution for a 1 V drive amplitude.
    pub rf: ScalarField,
    pub basis: BasisFields,
}

pub fn solve_trap(
    params: &DesignParams,
    config: &EvaluationConfig,
) -> Result<SolvedTrap, OptimizeError> {
    config.validate()?;
    let geometry = build_geometry(params, &config.radii)?;
    let domain = geometry.far_field_domain(config.grid.far_field_factor);
    let grid = GridSpec::covering(domain.r_max, domain.z_max, config.grid.min_cells_r)?;
    let boundary = boundary_segments(&geometry, &grid.domain())?;
    let raster = Arc::new(Raster::new(&boundary, &grid));
    let opts = SolverOptions {
        tol: config.solver_tol,
        ..SolverOptions::default()
    };
    let rf = solve_raster(&raster, &rf_voltages(1.0), &opts)?;
    let basis = solve_basis_raster(&raster, &opts)?;
    Ok(SolvedTrap {
        geometry,
        rf,
        basis,
    })
}

fn radial_gradients(basis: &BasisFields, r: f64) -> Result<[f64; 3], OptimizeError> {
    let g = |group| -> Result<f64, OptimizeError> {
        let field = basis.fields.get(&group).ok_or(FieldError::GridMismatch)?;
        Ok(gradient(field, (r, 0.0))?.0)
    };
    Ok([
        g(ElectrodeGroup::Needle)?,
        g(ElectrodeGroup::Control)?,
        g(ElectrodeGroup::Tube)?,
    ])
}

/// Holds U1, U2 at the anchor and solves for the control voltage that zeroes
/// `∂U/∂r` at `(r, 0)`.
pub fn tune_static_voltages(
    basis: &BasisFields,
    r: f64,
    anchor: &VoltageSet,
) -> Result<VoltageSet, OptimizeError> {
    let [gn, gc, gt] = radial_gradients(basis, r)?;
    let scale = gn.abs().max(gt.abs());
    if gc == 0.0 || gc.abs() <= 1e-12 * scale {
        return Err(OptimizeError::NoSolution);
    }
    Ok(VoltageSet {
        u0: -(anchor.u1 * gn + anchor.u2 * gt) / gc,
        ..*anchor
    })
}

/// Residual `∂U/∂r` at `(r, 0)` and the tolerance scale `max |U_k g_k|` [V/m].
pub fn saddle_residual(
    basis: &BasisFields,
    r: f64,
    voltages: &VoltageSet,
) -> Result<(f64, f64), OptimizeError> {
    let [gn, gc, gt] = radial_gradients(basis, r)?;
    let terms = [voltages.u1 * gn, voltages.u0 * gc, voltages.u2 * gt];
    let scale = terms.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    Ok((terms.iter().sum(), scale))
}

pub fn static_field(basis: &BasisFields, voltages: &VoltageSet) -> Result<ScalarField, OptimizeError> {
    Ok(superpose(basis, &voltages.static_coefficients())?)
}

/// Outcome of one pipeline pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub params: DesignParams,
    pub geometry: TrapGeometry,
    #[serde(rename = "ell_rf_m")]
    pub ell_rf: f64,
    #[serde(rename = "chi2_rf_V2m2")]
    pub chi2_rf: f64,
    #[serde(rename = "trap_center_R_m")]
    pub trap_center: f64,
    pub voltages: VoltageSet,
    #[serde(rename = "ell_static_m")]
    pub ell_static: f64,
    #[serde(rename = "chi2_static_V2m2")]
    pub chi2_static: f64,
    /// `∂U/∂r` at the node after tuning [V/m].
    #[serde(rename = "saddle_gradient_V_per_m")]
    pub saddle_gradient: f64,
    /// Largest single-group contribution to `∂U/∂r` at the node [V/m].
    #[serde(rename = "saddle_gradient_scale_V_per_m")]
    pub saddle_gradient_scale: f64,
}

impl Evaluation {
    pub fn saddle_ok(&self, tolerance: f64) -> bool {
        self.saddle_gradient.abs() <= tolerance * self.saddle_gradient_scale
    }
}

/// Evaluation together with the fields and fits it was derived from.
#[derive(Debug, Clone)]
pub struct DetailedEvaluation {
    pub evaluation: Evaluation,
    pub trap: SolvedTrap,
    pub static_field: ScalarField,
    pub rf_fit: QuadrupoleFit,
    pub static_fit: QuadrupoleFit,
}

pub fn evaluate_detailed(
    params: &DesignParams,
    config: &EvaluationConfig,
) -> Result<DetailedEvaluation, OptimizeError> {
    let trap = solve_trap(params, config)?;
    let r = locate_trap_center(&trap.rf)?;
    let region = FitRegion::new(r, config.fit_radius);
    let rf_fit = fit_rf(&trap.rf, &region)?;
    let voltages = tune_static_voltages(&trap.basis, r, &config.anchor)?;
    let stat = static_field(&trap.basis, &voltages)?;
    let static_fit = fit_static(&stat, &region)?;
    let (residual, scale) = saddle_residual(&trap.basis, r, &voltages)?;
    let evaluation = Evaluation {
        params: *params,
        geometry: trap.geometry,
        ell_rf: rf_fit.ell,
        chi2_rf: rf_fit.chi2,
        trap_center: r,
        voltages,
        ell_static: static_fit.ell,
        chi2_static: static_fit.chi2,
        saddle_gradient: residual,
        saddle_gradient_scale: scale,
    };
    Ok(DetailedEvaluation {
        evaluation,
        trap,
        static_field: stat,
        rf_fit,
        static_fit,
    })
}

pub fn evaluate(params: &DesignParams, config: &EvaluationConfig) -> Result<Evaluation, OptimizeError> {
    Ok(evaluate_detailed(params, config)?.evaluation)
}

/// Box constraints on `(A_h, K_h, V_h, θ_n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBounds {
    pub lower: [f64; 4],
    pub upper: [f64; 4],
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self {
            lower: [0.3, 0.5, 0.0, 5.0],
            upper: [3.0, 4.0, 5.0, 45.0],
        }
    }
}

impl ParamBounds {
    pub fn contains(&self, p: &[f64; 4]) -> bool {
        (0..4).all(|k| p[k] >= self.lower[k] && p[k] <= self.upper[k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub evaluation: EvaluationConfig,
    /// Step standard deviation as a fraction of each current parameter.
    pub proposal_scales: [f64; 4],
    /// Absolute lower limit on each step standard deviation.
    pub proposal_floors: [f64; 4],
    /// Weight `w` of the RF term in the objective.
    pub weight_rf: f64,
    pub bounds: ParamBounds,
    /// Consecutive rejections before the step scale is halved.
    pub halve_after: usize,
    /// Number of halvings that reach the minimum step scale.
    pub max_halvings: u32,
    /// Consecutive rejections at minimum scale that end the search.
    pub stop_after: usize,
    /// Reject proposals that raise χ²_RF even if the objective falls.
    pub require_rf_improvement: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            evaluation: EvaluationConfig::default(),
            proposal_scales: [0.05; 4],
            proposal_floors: [0.01, 0.01, 0.01, 0.5],
            weight_rf: 0.5,
            bounds: ParamBounds::default(),
            halve_after: 20,
            max_halvings: 4,
            stop_after: 50,
            require_rf_improvement: true,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        self.evaluation.validate()?;
        let bad = |m: &str| Err(OptimizeError::InvalidConfig(m.into()));
        if !(0.0..=1.0).contains(&self.weight_rf) {
            return bad("weight_rf must lie in [0, 1]");
        }
        if self
            .proposal_scales
            .iter()
            .chain(&self.proposal_floors)
            .any(|s| !(s.is_finite() && *s >= 0.0))
        {
            return bad("proposal scales must be finite and non-negative");
        }
        if (0..4).any(|k| self.bounds.lower[k] > self.bounds.upper[k]) {
            return bad("bounds must satisfy lower <= upper");
        }
        if self.halve_after == 0 || self.stop_after == 0 {
            return bad("halve_after and stop_after must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub params: DesignParams,
    #[serde(rename = "chi2_rf_V2m2")]
    pub chi2_rf: f64,
    #[serde(rename = "chi2_static_V2m2")]
    pub chi2_static: f64,
    pub objective: f64,
    pub accepted: bool,
    #[serde(rename = "saddle_gradient_V_per_m")]
    pub saddle_gradient: f64,
    #[serde(rename = "saddle_gradient_scale_V_per_m")]
    pub saddle_gradient_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Budget,
    Converged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub best_params: DesignParams,
    pub best_voltages: VoltageSet,
    #[serde(rename = "ell_rf_m")]
    pub ell_rf: f64,
    #[serde(rename = "ell_static_m")]
    pub ell_static: f64,
    #[serde(rename = "chi2_rf_V2m2")]
    pub chi2_rf: f64,
    #[serde(rename = "chi2_static_V2m2")]
    pub chi2_static: f64,
    #[serde(rename = "trap_center_R_m")]
    pub trap_center: f64,
    pub initial: Evaluation,
    pub best: Evaluation,
    pub rng_seed: u64,
    pub proposals: usize,
    pub evaluations: usize,
    pub stop_reason: StopReason,
    pub trace: Vec<TraceEntry>,
}

impl OptimizationReport {
    /// Trace as CSV `iter,A_h,K_h,V_h,theta_deg,chi2_rf,chi2_static,accepted`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iter,A_h,K_h,V_h,theta_deg,chi2_rf,chi2_static,accepted\n");
        for t in &self.trace {
            let p = t.params.as_array();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                t.iter,
                fmt_f64(p[0]),
                fmt_f64(p[1]),
                fmt_f64(p[2]),
                fmt_f64(p[3]),
                fmt_f64(t.chi2_rf),
                fmt_f64(t.chi2_static),
                t.accepted
            ));
        }
        out
    }
}

/// Greedy Monte Carlo search from `initial` using at most `budget` proposals.
///
/// Proposals that leave the bounds, or whose geometry has no usable RF node,
/// are rejected; solver failures abort the search.
pub fn optimize(
    initial: &DesignParams,
    budget: usize,
    seed: u64,
    config: &OptimizerConfig,
) -> Result<OptimizationReport, OptimizeError> {
    config.validate()?;
    initial.validate()?;
    let eval_cfg = &config.evaluation;
    let start = match evaluate(initial, eval_cfg) {
        Ok(e) => e,
        Err(OptimizeError::Fit(e)) => return Err(OptimizeError::InfeasibleStart(e.to_string())),
        Err(OptimizeError::NoSolution) => {
            return Err(OptimizeError::InfeasibleStart(
                OptimizeError::NoSolution.to_string(),
            ))
        }
        Err(e) => return Err(e),
    };
    let norm = |v: f64| if v > 0.0 { v } else { 1.0 };
    let (rf0, st0) = (norm(start.chi2_rf), norm(start.chi2_static));
    let w = config.weight_rf;
    let objective = |e: &Evaluation| w * e.chi2_rf / rf0 + (1.0 - w) * e.chi2_static / st0;

    let entry = |iter: usize, e: &Evaluation, accepted: bool| TraceEntry {
        iter,
        params: e.params,
        chi2_rf: e.chi2_rf,
        chi2_static: e.chi2_static,
        objective: objective(e),
        accepted,
        saddle_gradient: e.saddle_gradient,
        saddle_gradient_scale: e.saddle_gradient_scale,
    };

    let mut trace = vec![entry(0, &start, true)];
    let mut current = start.clone();
    let mut current_obj = objective(&current);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut halvings = 0u32;
    let mut rejections = 0usize;
    let mut evaluations = 1usize;
    let mut proposals = 0usize;
    let mut stop_reason = StopReason::Budget;

    while proposals < budget {
        proposals += 1;
        let step = 0.5f64.powi(halvings as i32);
        let x = current.params.as_array();
        let mut y = [0.0; 4];
        for k in 0..4 {
            let sd = (config.proposal_scales[k] * x[k].abs()).max(config.proposal_floors[k]) * step;
            let n: f64 = StandardNormal.sample(&mut rng);
            y[k] = x[k] + sd * n;
        }

        let mut accepted = false;
        if config.bounds.contains(&y) {
            let candidate = DesignParams::from_array(y);
            let outcome = match evaluate(&candidate, eval_cfg) {
                Ok(e) => Some(e),
                Err(OptimizeError::Field(e @ FieldError::NoConvergence { .. })) => {
                    return Err(e.into())
                }
                Err(_) => None,
            };
            if let Some(e) = outcome {
                evaluations += 1;
                let obj = objective(&e);
                let rf_ok = !config.require_rf_improvement || e.chi2_rf <= current.chi2_rf;
                accepted = obj < current_obj && rf_ok && e.saddle_ok(eval_cfg.saddle_tolerance);
                trace.push(entry(proposals, &e, accepted));
                if accepted {
                    current = e;
                    current_obj = obj;
                }
            }
        }

        if accepted {
            rejections = 0;
            continue;
        }
        rejections += 1;
        if halvings < config.max_halvings {
            if rejections >= config.halve_after {
                halvings += 1;
                rejections = 0;
            }
        } else if rejections >= config.stop_after {
            stop_reason = StopReason::Converged;
            break;
        }
    }

    Ok(OptimizationReport {
        best_params: current.params,
        best_voltages: current.voltages,
        ell_rf: current.ell_rf,
        ell_static: current.ell_static,
        chi2_rf: current.chi2_rf,
        chi2_static: current.chi2_static,
        trap_center: current.trap_center,
        initial: start,
        best: current,
        rng_seed: seed,
        proposals,
        evaluations,
        stop_reason,
        trace,
    })
}
