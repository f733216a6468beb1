//! Command-line front end.
//!
//! Every command reads an optional JSON config (unknown keys rejected),
//! applies flag overrides, validates everything, computes, and only then
//! writes its outputs (each via temp file + rename).

use crate::crystal::{self, linspace, phase_boundary};
use crate::field::{FieldError, ScalarField};
use crate::fitting::FitError;
use crate::geometry::{
    boundary_segments, build_geometry, design_params, DesignParams, ElectrodeRadii, TrapGeometry,
};
use crate::io::{write_atomic, write_grid_binary, write_grid_csv};
use crate::optimizer::{
    evaluate_detailed, optimize, EvaluationConfig, GridConfig, OptimizeError, OptimizerConfig,
    ParamBounds, VoltageSet,
};
use crate::pseudo::{pseudopotential, secular_curvatures, DriveSettings, PseudoError};
use crate::species::{default_table, r_star, IonSpecies, SpeciesEntry};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "halo", version, about = "Design and analysis of compact toroidal RF traps")]
pub struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for output files (created if missing).
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Random seed for stochastic commands.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve fields, fit both quadrupole models and compute the pseudopotential.
    Evaluate,
    /// Monte Carlo search over the design parameters.
    Optimize {
        /// Number of proposals (overrides the config).
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Two-ion crystal phase map and boundary curve.
    Phase {
        /// Points per axis (overrides the config).
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Coulomb length scale for a list of species.
    Species,
    /// Emit the trap geometry, or validate an existing geometry file.
    Geometry {
        #[arg(long)]
        validate: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Numerical(_) => 3,
            Self::Io(_) => 1,
        }
    }
}

impl From<OptimizeError> for CliError {
    fn from(e: OptimizeError) -> Self {
        if e.is_config_error() {
            Self::Config(e.to_string())
        } else {
            Self::Numerical(e.to_string())
        }
    }
}

impl From<PseudoError> for CliError {
    fn from(e: PseudoError) -> Self {
        match e {
            PseudoError::InvalidDrive(_) | PseudoError::InvalidSpecies(_) => {
                Self::Config(e.to_string())
            }
            _ => Self::Numerical(e.to_string()),
        }
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        Self::Numerical(e.to_string())
    }
}

impl From<FieldError> for CliError {
    fn from(e: FieldError) -> Self {
        Self::Numerical(e.to_string())
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: Option<GeometryBlock>,
    pub grid: Option<GridConfig>,
    pub tolerances: Option<Tolerances>,
    /// Anchor bias voltages; U0 is retuned per geometry.
    pub voltages: Option<VoltageSet>,
    pub drive: Option<DriveBlock>,
    pub optimizer: Option<OptimizerBlock>,
    pub phase: Option<PhaseBlock>,
    pub species: Option<Vec<SpeciesEntry>>,
    pub output: Option<OutputBlock>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryBlock {
    pub params: DesignParams,
    #[serde(default)]
    pub radii: ElectrodeRadii,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub solver_tol: f64,
    pub fit_region_radius_m: f64,
    pub saddle_tolerance: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let e = EvaluationConfig::default();
        Self {
            solver_tol: e.solver_tol,
            fit_region_radius_m: e.fit_radius,
            saddle_tolerance: e.saddle_tolerance,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveBlock {
    #[serde(default = "IonSpecies::mg24")]
    pub species: IonSpecies,
    /// Defaults to the V0 of the `voltages` block.
    #[serde(rename = "V0_V", default)]
    pub v0: Option<f64>,
    #[serde(rename = "omega_T_rad_s", default = "default_omega")]
    pub omega_t: f64,
    /// Multiplier on the tuned static field when computing secular frequencies.
    #[serde(default = "one")]
    pub static_scale: f64,
}

fn default_omega() -> f64 {
    DriveSettings::reference().omega_t
}

fn one() -> f64 {
    1.0
}

impl Default for DriveBlock {
    fn default() -> Self {
        Self {
            species: IonSpecies::mg24(),
            v0: None,
            omega_t: default_omega(),
            static_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    pub rf: f64,
    #[serde(rename = "static")]
    pub static_: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerBlock {
    pub initial_params: Option<DesignParams>,
    pub budget: Option<usize>,
    pub seed: Option<u64>,
    pub proposal_scales: Option<[f64; 4]>,
    pub proposal_floors: Option<[f64; 4]>,
    pub weights: Option<Weights>,
    pub bounds: Option<ParamBounds>,
    pub halve_after: Option<usize>,
    pub max_halvings: Option<u32>,
    pub stop_after: Option<usize>,
    pub require_rf_improvement: Option<bool>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseBlock {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub r0_min: f64,
    pub r0_max: f64,
    pub resolution: usize,
}

impl Default for PhaseBlock {
    fn default() -> Self {
        Self {
            alpha_min: 0.5,
            alpha_max: 4.5,
            r0_min: 0.1,
            r0_max: 2.1,
            resolution: 41,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    /// Write CSV and binary grid dumps.
    pub write_fields: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { write_fields: true }
    }
}

pub const DEFAULT_BUDGET: usize = 200;

pub fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn evaluation_config(cfg: &RunConfig, radii: ElectrodeRadii) -> EvaluationConfig {
    let tol = cfg.tolerances.unwrap_or_default();
    EvaluationConfig {
        radii,
        grid: cfg.grid.unwrap_or_default(),
        solver_tol: tol.solver_tol,
        fit_radius: tol.fit_region_radius_m,
        anchor: cfg.voltages.unwrap_or(VoltageSet::REFERENCE),
        saddle_tolerance: tol.saddle_tolerance,
    }
}

/// Collects named outputs and writes them only once all are ready.
#[derive(Default)]
struct Outputs(Vec<(String, Vec<u8>)>);

impl Outputs {
    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.0.push((name.to_string(), bytes));
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut text = serde_json::to_string_pretty(value).expect("serializable");
        text.push('\n');
        self.add(name, text.into_bytes());
    }

    fn grid(&mut self, stem: &str, field: &ScalarField, values: &[f64], column: &str) {
        let mut csv = Vec::new();
        let mut bin = Vec::new();
        write_grid_csv(&mut csv, &field.grid, values, column).expect("in-memory write");
        write_grid_binary(&mut bin, &field.grid, values).expect("in-memory write");
        self.add(&format!("{stem}.csv"), csv);
        self.add(&format!("{stem}.bin"), bin);
    }

    fn commit(self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (name, bytes) in self.0 {
            let path = dir.join(name);
            write_atomic(&path, &bytes)?;
            written.push(path);
        }
        Ok(written)
    }
}

#[derive(Serialize)]
struct PseudoOutput {
    node_r_m: f64,
    saddle_r_m: f64,
    #[serde(rename = "depth_eV")]
    depth_ev: f64,
}

/// Runs a parsed command line; returns the files written.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let cfg = load_config(cli.config.as_deref())?;
    let outputs = match &cli.command {
        Command::Evaluate => cmd_evaluate(&cfg)?,
        Command::Optimize { budget } => cmd_optimize(&cfg, *budget, cli.seed)?,
        Command::Phase { resolution } => cmd_phase(&cfg, *resolution)?,
        Command::Species => cmd_species(&cfg)?,
        Command::Geometry { validate } => cmd_geometry(&cfg, validate.as_deref())?,
    };
    outputs.commit(&cli.out_dir)
}

fn cmd_evaluate(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let block = cfg
        .geometry
        .as_ref()
        .ok_or_else(|| CliError::Config("evaluate needs a \"geometry\" block".into()))?;
    let eval_cfg = evaluation_config(cfg, block.radii);
    eval_cfg.validate()?;
    block.params.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let drive_block = cfg.drive.clone().unwrap_or_default();
    let drive = DriveSettings {
        v0: drive_block.v0.unwrap_or(eval_cfg.anchor.v0),
        omega_t: drive_block.omega_t,
    };
    drive.validate()?;
    drive_block
        .species
        .validate()
        .map_err(CliError::Config)?;
    let write_fields = cfg.output.unwrap_or_default().write_fields;

    let detailed = evaluate_detailed(&block.params, &eval_cfg)?;
    let pseudo = pseudopotential(&detailed.trap.rf, &drive_block.species, &drive)?;

    let mut out = Outputs::default();
    out.json("evaluation.json", &detailed.evaluation);
    out.json("fit_rf.json", &detailed.rf_fit.summary());
    out.json("fit_static.json", &detailed.static_fit.summary());
    let summary = pseudo.summary();
    out.json(
        "pseudo.json",
        &PseudoOutput {
            node_r_m: summary.node_r_m,
            saddle_r_m: summary.saddle_r_m,
            depth_ev: summary.depth_ev,
        },
    );
    match secular_curvatures(
        &pseudo,
        &detailed.static_field,
        drive_block.static_scale,
        &drive_block.species,
    ) {
        Ok(sec) => out.json("secular.json", &sec),
        Err(e) => eprintln!("warning: secular frequencies not written: {e}"),
    }
    if write_fields {
        let rf = detailed.trap.rf.scaled(drive.v0);
        out.grid("rf_field", &rf, &rf.values, "potential_V");
        let st = &detailed.static_field;
        out.grid("static_field", st, &st.values, "potential_V");
        out.grid("pseudo", &detailed.trap.rf, &pseudo.psi, "psi_eV");
    }
    Ok(out)
}

fn optimizer_config(cfg: &RunConfig, radii: ElectrodeRadii) -> Result<OptimizerConfig, CliError> {
    let mut oc = OptimizerConfig {
        evaluation: evaluation_config(cfg, radii),
        ..OptimizerConfig::default()
    };
    if let Some(b) = &cfg.optimizer {
        if let Some(v) = b.proposal_scales {
            oc.proposal_scales = v;
        }
        if let Some(v) = b.proposal_floors {
            oc.proposal_floors = v;
        }
        if let Some(w) = b.weights {
            let total = w.rf + w.static_;
            if !(w.rf >= 0.0 && w.static_ >= 0.0 && total > 0.0) {
                return Err(CliError::Config("weights must be non-negative".into()));
            }
            oc.weight_rf = w.rf / total;
        }
        if let Some(v) = b.bounds {
            oc.bounds = v;
        }
        if let Some(v) = b.halve_after {
            oc.halve_after = v;
        }
        if let Some(v) = b.max_halvings {
            oc.max_halvings = v;
        }
        if let Some(v) = b.stop_after {
            oc.stop_after = v;
        }
        if let Some(v) = b.require_rf_improvement {
            oc.require_rf_improvement = v;
        }
    }
    oc.validate()?;
    Ok(oc)
}

fn cmd_optimize(
    cfg: &RunConfig,
    budget_flag: Option<usize>,
    seed_flag: Option<u64>,
) -> Result<Outputs, CliError> {
    let block = cfg.optimizer.clone();
    let seed = seed_flag
        .or(block.as_ref().and_then(|b| b.seed))
        .ok_or_else(|| CliError::Config("optimize needs a seed (--seed or optimizer.seed)".into()))?;
    let budget = budget_flag
        .or(block.as_ref().and_then(|b| b.budget))
        .unwrap_or(DEFAULT_BUDGET);
    let radii = cfg.geometry.as_ref().map(|g| g.radii).unwrap_or_default();
    let initial = block
        .as_ref()
        .and_then(|b| b.initial_params)
        .or(cfg.geometry.as_ref().map(|g| g.params))
        .ok_or_else(|| {
            CliError::Config("optimize needs optimizer.initial_params or a geometry block".into())
        })?;
    initial.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let oc = optimizer_config(cfg, radii)?;

    let report = optimize(&initial, budget, seed, &oc)?;
    let mut out = Outputs::default();
    out.json("optimization.json", &report);
    out.add("trace.csv", report.trace_csv().into_bytes());
    Ok(out)
}

fn cmd_phase(cfg: &RunConfig, resolution: Option<usize>) -> Result<Outputs, CliError> {
    let mut p = cfg.phase.unwrap_or_default();
    if let Some(n) = resolution {
        p.resolution = n;
    }
    let map = crystal::phase_map((p.alpha_min, p.alpha_max), (p.r0_min, p.r0_max), p.resolution)
        .map_err(|e| match e {
            crystal::CrystalError::InvalidRange(_) | crystal::CrystalError::InvalidTrap(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        })?;

    let mut csv = String::from("alpha,r0,x,z,phase,energy\n");
    for e in &map {
        let s = &e.state;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            s.trap.alpha,
            s.trap.r0,
            s.x,
            s.z,
            s.phase.as_str(),
            s.energy
        );
    }
    let mut boundary = String::from("alpha,r0_critical\n");
    for a in linspace((p.alpha_min, p.alpha_max), p.resolution) {
        let _ = writeln!(boundary, "{},{}", a, phase_boundary(a));
    }
    let mut out = Outputs::default();
    out.add("phase_map.csv", csv.into_bytes());
    out.add("phase_boundary.csv", boundary.into_bytes());
    Ok(out)
}

fn cmd_species(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let table = cfg.species.clone().unwrap_or_else(default_table);
    let mut csv = String::from("ion,omega_r_Hz,r_star_um\n");
    for entry in &table {
        entry.species.validate().map_err(CliError::Config)?;
        if !(entry.omega_r_hz.is_finite() && entry.omega_r_hz > 0.0) {
            return Err(CliError::Config(format!(
                "{}: omega_r_Hz must be positive",
                entry.species.name
            )));
        }
        let r = r_star(&entry.species, 2.0 * PI * entry.omega_r_hz);
        let _ = writeln!(
            csv,
            "{},{},{:.1}",
            csv_field(&entry.species.name),
            entry.omega_r_hz,
            r * 1e6
        );
    }
    let mut out = Outputs::default();
    out.add("species.csv", csv.into_bytes());
    Ok(out)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn cmd_geometry(cfg: &RunConfig, validate: Option<&Path>) -> Result<Outputs, CliError> {
    let config_err = |e: crate::geometry::GeometryError| CliError::Config(e.to_string());
    let mut out = Outputs::default();
    let geometry = match validate {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            let g: TrapGeometry = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            g.validate().map_err(config_err)?;
            g
        }
        None => {
            let block = cfg.geometry.clone().unwrap_or(GeometryBlock {
                params: DesignParams::OPTIMIZED,
                radii: ElectrodeRadii::default(),
            });
            let g = build_geometry(&block.params, &block.radii).map_err(config_err)?;
            out.json("geometry.json", &g);
            g
        }
    };
    // Must also rasterize cleanly into the default box.
    let factor = cfg.grid.unwrap_or_default().far_field_factor;
    boundary_segments(&geometry, &geometry.far_field_domain(factor)).map_err(config_err)?;
    out.json("design_params.json", &design_params(&geometry));
    Ok(out)
}
