//! Run configuration: a JSON document with geometry, scaling, species,
//! surface-charge, solver and output sections.
//!
//! ```json
//! {
//!   "geometry": {"dimension": 2, "inclusion": {"kind": "disk",
//!                "params": {"center": [0.5, 0.5], "radius": 0.25}}, "m": 8, "r": 8},
//!   "scaling": {"alpha": 0, "beta": 0, "eta": 1, "p": 4, "t_final": 0.1, "dt": 1e-3},
//!   "species": [{"diffusivity": 1, "charge": 1, "initial": "1 + 0.5*cos(pi*x1)"}],
//!   "surface_charge": {"xi1": "0.5*cos(2*pi*y1)", "xi2": "0", "auto_balance": true}
//! }
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Expression, Variables};
use crate::geometry::{CellGeometry, InclusionShape};
use crate::nonlinearity::Nonlinearity;
use crate::transport::{SolverSettings, SpeciesParams};

fn default_dimension() -> usize {
    2
}

fn zero_expr() -> String {
    "0".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    pub inclusion: InclusionShape,
    /// Number of periods per edge, `eps = 1/m`.
    pub m: usize,
    /// Grid cells per period edge (also the cell-problem resolution).
    pub r: usize,
    /// Cells per edge of the homogenized grid; defaults to `m * r`.
    #[serde(default)]
    pub macro_resolution: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSection {
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
    pub eta: f64,
    pub p: f64,
    pub t_final: f64,
    /// Largest time step.
    pub dt: f64,
    /// `0` records only the initial and final states.
    #[serde(default)]
    pub output_interval: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesSection {
    pub diffusivity: f64,
    pub charge: i32,
    /// Initial concentration as an expression in `x1..xn`.
    pub initial: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceChargeSection {
    /// Hole-surface density, expression in `x1..xn, y1..yn` (periodic in `y`).
    #[serde(default = "zero_expr")]
    pub xi1: String,
    /// Outer-boundary density, expression in `x1..xn`.
    #[serde(default = "zero_expr")]
    pub xi2: String,
    /// Shift `xi2` by a constant so the total charge vanishes.
    #[serde(default)]
    pub auto_balance: bool,
}

impl Default for SurfaceChargeSection {
    fn default() -> Self {
        SurfaceChargeSection {
            xi1: zero_expr(),
            xi2: zero_expr(),
            auto_balance: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MacroMode {
    /// Drift retained in the homogenized transport (`alpha = beta`).
    Coupled,
    /// Drift dropped, potential still solved (`alpha < beta`).
    Decoupled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    /// Relative residual for potential solves.
    pub tol: f64,
    pub transport_tol: f64,
    pub cell_tol: f64,
    pub max_iter: Option<usize>,
    pub cfl: f64,
    pub dt_min: f64,
    pub poisson_every_step: bool,
    pub explicit_time: bool,
    /// Homogenized model; derived from `alpha`, `beta` when absent.
    pub mode: Option<MacroMode>,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            tol: 1e-10,
            transport_tol: 1e-10,
            cell_tol: 1e-10,
            max_iter: None,
            cfl: 0.4,
            dt_min: 1e-10,
            poisson_every_step: false,
            explicit_time: false,
            mode: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: Option<String>,
    /// Write a snapshot at every k-th output time (`0` disables snapshots
    /// except the final one).
    pub snapshot_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSection {
    pub m_list: Vec<usize>,
    #[serde(default)]
    pub macro_resolution: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmsSection {
    pub resolutions: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtaSweepSection {
    pub etas: Vec<f64>,
}

/// The document as written.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDoc {
    pub geometry: GeometrySection,
    pub scaling: ScalingSection,
    pub species: Vec<SpeciesSection>,
    #[serde(default)]
    pub surface_charge: SurfaceChargeSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub convergence: Option<ConvergenceSection>,
    #[serde(default)]
    pub mms: Option<MmsSection>,
    #[serde(default)]
    pub eta_sweep: Option<EtaSweepSection>,
}

/// Scaling and nonlinearity parameters of one micro problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScalingSpec {
    pub epsilon: f64,
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    pub p: f64,
    pub t_final: f64,
}

impl ScalingSpec {
    pub fn permittivity(&self) -> f64 {
        self.epsilon.powf(self.alpha)
    }

    pub fn drift_scale(&self) -> f64 {
        self.epsilon.powf(self.beta)
    }
}

/// Validated configuration with compiled expressions and the unit cell.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub doc: ConfigDoc,
    pub cell: CellGeometry,
    pub species: Vec<SpeciesParams>,
    pub initial: Vec<Expression>,
    pub xi1: Expression,
    pub xi2: Expression,
    pub nonlinearity: Nonlinearity,
    /// Constant added to `xi2` on the configured micro grid.
    pub balance_shift: f64,
    /// Compatibility residual before any shift.
    pub raw_residual: f64,
}

impl RunConfig {
    pub fn dim(&self) -> usize {
        self.doc.geometry.dimension
    }

    pub fn m(&self) -> usize {
        self.doc.geometry.m
    }

    pub fn r(&self) -> usize {
        self.doc.geometry.r
    }

    pub fn scaling(&self, m: usize) -> ScalingSpec {
        let s = &self.doc.scaling;
        ScalingSpec {
            epsilon: 1.0 / m as f64,
            alpha: s.alpha,
            beta: s.beta,
            eta: s.eta,
            p: s.p,
            t_final: s.t_final,
        }
    }

    pub fn mode(&self) -> MacroMode {
        self.doc
            .solver
            .mode
            .unwrap_or(if self.doc.scaling.alpha < self.doc.scaling.beta {
                MacroMode::Decoupled
            } else {
                MacroMode::Coupled
            })
    }

    pub fn solver_settings(&self) -> SolverSettings {
        let s = &self.doc.solver;
        SolverSettings {
            poisson_tol: s.tol,
            transport_tol: s.transport_tol,
            max_iter: s.max_iter,
            cfl: s.cfl,
            dt_min: s.dt_min,
        }
    }

    pub fn macro_resolution(&self) -> usize {
        self.doc
            .geometry
            .macro_resolution
            .unwrap_or(self.doc.geometry.m * self.doc.geometry.r)
    }

    /// Canonical JSON of the document; hashing it identifies the run.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(&self.doc).expect("config serializes")
    }

    /// Hash of the physical data only (everything except the period count,
    /// macro resolution, output and study sections).
    pub fn data_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut doc = self.doc.clone();
        doc.geometry.m = 0;
        doc.geometry.macro_resolution = None;
        doc.output = OutputSection::default();
        doc.convergence = None;
        doc.mms = None;
        doc.eta_sweep = None;
        let text = serde_json::to_string(&doc).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

pub fn parse_and_validate(text: &str) -> Result<RunConfig> {
    let doc: ConfigDoc =
        serde_json::from_str(text).map_err(|e| Error::Config(format!("schema violation: {e}")))?;
    validate(doc)
}

pub fn validate(doc: ConfigDoc) -> Result<RunConfig> {
    let g = &doc.geometry;
    if g.dimension != 2 && g.dimension != 3 {
        return Err(Error::Config(format!(
            "dimension must be 2 or 3, got {}",
            g.dimension
        )));
    }
    if let Some(d) = g.inclusion.dimension() {
        if d != g.dimension {
            return Err(Error::Config(format!(
                "inclusion parameters are {d}-dimensional but the domain is {}-dimensional",
                g.dimension
            )));
        }
    }
    if g.m == 0 {
        return Err(Error::Config("m must be at least 1".into()));
    }
    if g.macro_resolution == Some(0) {
        return Err(Error::Config("macro_resolution must be positive".into()));
    }
    let s = &doc.scaling;
    if !(s.alpha <= s.beta) {
        return Err(Error::Config(format!(
            "the scaling exponents must satisfy alpha <= beta (alpha = {}, beta = {})",
            s.alpha, s.beta
        )));
    }
    let nonlinearity = Nonlinearity::new(s.eta, s.p)
        .map_err(|e| Error::Config(format!("nonlinearity h_p(r) = r + eta r^p: {e}")))?;
    if !(s.t_final >= 0.0) {
        return Err(Error::Config(format!(
            "t_final must be nonnegative, got {}",
            s.t_final
        )));
    }
    if !(s.dt > 0.0) {
        return Err(Error::Config(format!("dt must be positive, got {}", s.dt)));
    }
    if !(s.output_interval >= 0.0) {
        return Err(Error::Config("output_interval must be nonnegative".into()));
    }
    if doc.species.is_empty() {
        return Err(Error::Config("at least one species is required".into()));
    }
    let sv = &doc.solver;
    if !(sv.tol > 0.0 && sv.transport_tol > 0.0 && sv.cell_tol > 0.0) {
        return Err(Error::Config("solver tolerances must be positive".into()));
    }
    if !(sv.cfl > 0.0 && sv.cfl <= 1.0) {
        return Err(Error::Config(format!(
            "cfl must lie in (0, 1], got {}",
            sv.cfl
        )));
    }
    if !(sv.dt_min > 0.0) {
        return Err(Error::Config("dt_min must be positive".into()));
    }
    match (sv.mode, s.alpha < s.beta) {
        (Some(MacroMode::Coupled), true) => {
            return Err(Error::Config(
                "coupled homogenized mode requires alpha = beta".into(),
            ))
        }
        (Some(MacroMode::Decoupled), false) => {
            return Err(Error::Config(
                "decoupled homogenized mode requires alpha < beta".into(),
            ))
        }
        _ => {}
    }
    if let Some(c) = &doc.convergence {
        if c.m_list.is_empty() || c.m_list.contains(&0) {
            return Err(Error::Config(
                "convergence m_list must hold positive integers".into(),
            ));
        }
        if c.m_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "convergence m_list must be strictly increasing (eps strictly decreasing)".into(),
            ));
        }
    }
    if let Some(e) = &doc.eta_sweep {
        if e.etas.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::Config("eta sweep values must be positive".into()));
        }
    }

    let dim = g.dimension;
    let mut species = Vec::with_capacity(doc.species.len());
    let mut initial = Vec::with_capacity(doc.species.len());
    for (i, sp) in doc.species.iter().enumerate() {
        if !(sp.diffusivity > 0.0) {
            return Err(Error::Config(format!(
                "species {i}: diffusivities must be positive, got {}",
                sp.diffusivity
            )));
        }
        species.push(SpeciesParams {
            diffusivity: sp.diffusivity,
            charge: sp.charge,
        });
        initial.push(Expression::parse(&sp.initial, Variables::Space(dim))?);
    }
    let xi1 = Expression::parse(&doc.surface_charge.xi1, Variables::SpaceAndCell(dim))?;
    let xi2 = Expression::parse(&doc.surface_charge.xi2, Variables::Space(dim))?;

    let cell = CellGeometry::build(g.inclusion.clone(), dim, g.r)?;
    let mut config = RunConfig {
        doc,
        cell,
        species,
        initial,
        xi1,
        xi2,
        nonlinearity,
        balance_shift: 0.0,
        raw_residual: 0.0,
    };
    // checks nonnegative initial data and compatibility on the configured grid
    let micro = crate::micro::MicroProblem::new(&config, config.m())?;
    config.balance_shift = micro.balance_shift;
    config.raw_residual = micro.raw_residual;
    Ok(config)
}
