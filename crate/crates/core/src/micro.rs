//! The perforated-domain model: transport of charged species in the fluid
//! part of `(0,1)^n` coupled to an `eps^alpha`-scaled Neumann Poisson problem.

use crate::config::{RunConfig, ScalingSpec};
use crate::error::{Error, Result};
use crate::geometry::{surface_charge_on_facets, FacetCharges, MaskedGrid};
use crate::tensor::Tensor;
use crate::transport::{RunOutput, RunSettings, SpeciesParams, State, Transport, TransportSpec};

/// Relative tolerance for accepting unbalanced data at parse time.
pub const PARSE_COMPATIBILITY_TOL: f64 = 1e-12;

pub type MicroState = State;

/// Discrete compatibility residual `sum_i z_i sum c_i h^n + sum xi area` and
/// the magnitude scale it is measured against.
pub fn validate_compatibility(
    grid: &MaskedGrid,
    species: &[SpeciesParams],
    conc: &[Vec<f64>],
    charges: &FacetCharges,
) -> (f64, f64) {
    let vol = grid.cell_volume();
    let area = grid.facet_area();
    let mut residual = charges.total(grid);
    let mut scale: f64 = charges
        .hole
        .iter()
        .chain(&charges.outer)
        .map(|v| v.abs() * area)
        .sum();
    for (s, c) in species.iter().zip(conc) {
        let z = s.charge as f64;
        residual += z * c.iter().sum::<f64>() * vol;
        scale += z.abs() * c.iter().map(|v| v.abs()).sum::<f64>() * vol;
    }
    (residual, scale)
}

/// Micro problem at one value of `eps = 1/m`.
#[derive(Clone, Debug)]
pub struct MicroProblem {
    pub grid: MaskedGrid,
    pub scaling: ScalingSpec,
    pub species: Vec<SpeciesParams>,
    pub initial: Vec<Vec<f64>>,
    pub charges: FacetCharges,
    pub balance_shift: f64,
    pub raw_residual: f64,
    config: RunConfig,
}

impl MicroProblem {
    pub fn new(config: &RunConfig, m: usize) -> Result<Self> {
        let grid = MaskedGrid::build(&config.cell, m, config.r())?;
        let initial: Vec<Vec<f64>> = config
            .initial
            .iter()
            .map(|e| grid.sample(e.space_fn()))
            .collect();
        for (i, c) in initial.iter().enumerate() {
            let min = c.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            if !(min >= 0.0) {
                return Err(Error::Config(format!(
                    "initial concentrations must be nonnegative: species {i} reaches {min} at a cell center"
                )));
            }
        }
        let mut charges =
            surface_charge_on_facets(&grid, config.xi1.two_scale_fn(), config.xi2.space_fn());
        let (raw_residual, scale) =
            validate_compatibility(&grid, &config.species, &initial, &charges);
        let mut balance_shift = 0.0;
        if config.doc.surface_charge.auto_balance {
            balance_shift = -raw_residual / grid.outer_area();
            charges.shift_outer(balance_shift);
        } else {
            let tolerance = PARSE_COMPATIBILITY_TOL * scale.max(1.0);
            if raw_residual.abs() > tolerance {
                return Err(Error::Incompatible {
                    residual: raw_residual,
                    tolerance,
                });
            }
        }
        Ok(MicroProblem {
            scaling: config.scaling(m),
            species: config.species.clone(),
            initial,
            charges,
            balance_shift,
            raw_residual,
            config: config.clone(),
            grid,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn epsilon(&self) -> f64 {
        self.scaling.epsilon
    }

    /// Residual after balancing.
    pub fn compatibility_residual(&self) -> f64 {
        validate_compatibility(&self.grid, &self.species, &self.initial, &self.charges).0
    }

    pub fn transport(&self) -> Result<Transport<'_>> {
        Transport::new(
            &self.grid,
            TransportSpec {
                tensor: Tensor::identity(self.grid.dim),
                permittivity: self.scaling.permittivity(),
                drift_scale: self.scaling.drift_scale(),
                species: self.species.clone(),
                nonlinearity: self.config.nonlinearity,
                bulk_charge: None,
                facet_charges: self.charges.clone(),
                settings: self.config.solver_settings(),
            },
        )
    }

    pub fn run_settings(&self, explicit: bool, keep_snapshots: bool) -> RunSettings {
        let s = &self.config.doc.scaling;
        RunSettings {
            t_final: s.t_final,
            dt: s.dt,
            output_interval: s.output_interval,
            explicit,
            potential_every_step: true,
            keep_snapshots,
        }
    }

    /// Integrates from the configured initial data to `t_final`.
    pub fn run(&self, explicit: bool, keep_snapshots: bool) -> Result<RunOutput> {
        let tr = self.transport()?;
        let s0 = tr.initial_state(self.initial.clone())?;
        Ok(tr.run(s0, &self.run_settings(explicit, keep_snapshots), None))
    }
}

/// Runs the micro model on the configured grid.
pub fn run_micro(config: &RunConfig) -> Result<RunOutput> {
    let problem = MicroProblem::new(config, config.m())?;
    problem.run(
        config.doc.solver.explicit_time,
        config.doc.output.snapshot_every > 0,
    )
}
