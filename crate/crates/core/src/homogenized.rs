//! Homogenized model on the unperforated domain with constant tensor `A`.
//!
//! ```text
//! d_t c_i = div( D_i A grad h_p(c_i) + s D_i z_i c_i A grad phi )
//! -div(A grad phi) = sum_i z_i c_i + (1/|Y^f|) int_Gamma xi1(x, y) dS(y)
//! A grad phi . nu = xi2 / |Y^f|
//! ```
//!
//! with `s = 1` in coupled mode and `s = 0` in decoupled mode.

use crate::cell_problem::{compute_effective_tensor, EffectiveTensor};
use crate::config::{MacroMode, RunConfig};
use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::geometry::{CellGeometry, FacetCharges, MaskedGrid};
use crate::tensor::Tensor;
use crate::transport::{
    cell_gradient, RunOutput, RunSettings, SpeciesParams, State, Transport, TransportSpec,
    COMPATIBILITY_TOL,
};

pub type MacroState = State;

/// Off-diagonal entries below this fraction of the largest entry are
/// treated as rounding noise.
pub const CROSS_TERM_CUTOFF: f64 = 1e-12;

/// Volumetric source and boundary flux of the homogenized Poisson problem.
#[derive(Clone, Debug)]
pub struct MacroSourceSpec {
    /// `s(x)` at every macro cell center.
    pub bulk: Vec<f64>,
    /// `xi2(x) / |Y^f|` at every outer facet midpoint, before balancing.
    pub boundary: Vec<f64>,
    pub porosity: f64,
}

/// `int_Gamma q(y) dS(y)` by staircase facet quadrature on the unit cell.
pub fn surface_integral<F: Fn(&[f64]) -> f64>(cell: &CellGeometry, q: F) -> f64 {
    let area = cell.facet_area();
    cell.hole_facets()
        .iter()
        .map(|f| q(&f.y[..cell.dim]) * area)
        .sum()
}

pub fn build_macro_source(
    cell: &CellGeometry,
    grid: &MaskedGrid,
    xi1: &Expression,
    xi2: &Expression,
) -> MacroSourceSpec {
    let d = cell.dim;
    let porosity = cell.porosity;
    let bulk = if xi1.is_zero() {
        vec![0.0; grid.fluid_count()]
    } else {
        let facets = cell.hole_facets();
        let area = cell.facet_area();
        let f1 = xi1.two_scale_fn();
        grid.sample(|x| facets.iter().map(|f| f1(x, &f.y[..d])).sum::<f64>() * area / porosity)
    };
    let f2 = xi2.space_fn();
    let boundary = grid
        .outer_facets
        .iter()
        .map(|f| f2(&f.x[..d]) / porosity)
        .collect();
    MacroSourceSpec {
        bulk,
        boundary,
        porosity,
    }
}

/// Symmetric part of the cell tensor with rounding-level cross terms removed.
pub fn macro_tensor(effective: &EffectiveTensor) -> Tensor {
    let mut t = effective.macro_tensor();
    let scale = (0..t.dim)
        .flat_map(|i| (0..t.dim).map(move |j| (i, j)))
        .fold(0.0f64, |m, (i, j)| m.max(t.m[i][j].abs()));
    for i in 0..t.dim {
        for j in 0..t.dim {
            if i != j && t.m[i][j].abs() <= CROSS_TERM_CUTOFF * scale {
                t.m[i][j] = 0.0;
            }
        }
    }
    t
}

#[derive(Clone, Debug)]
pub struct MacroProblem {
    pub grid: MaskedGrid,
    pub effective: EffectiveTensor,
    pub tensor: Tensor,
    pub source: MacroSourceSpec,
    pub charges: FacetCharges,
    pub species: Vec<SpeciesParams>,
    pub initial: Vec<Vec<f64>>,
    pub mode: MacroMode,
    pub balance_shift: f64,
    pub raw_residual: f64,
    config: RunConfig,
}

impl MacroProblem {
    /// Computes the cell tensor and builds the problem on an `n^dim` grid.
    pub fn new(config: &RunConfig, resolution: usize) -> Result<Self> {
        let effective = compute_effective_tensor(&config.cell, config.doc.solver.cell_tol)?;
        MacroProblem::with_tensor(config, resolution, effective)
    }

    pub fn with_tensor(
        config: &RunConfig,
        resolution: usize,
        effective: EffectiveTensor,
    ) -> Result<Self> {
        let grid = MaskedGrid::unperforated(config.dim(), resolution)?;
        let tensor = macro_tensor(&effective);
        let source = build_macro_source(&config.cell, &grid, &config.xi1, &config.xi2);
        let initial: Vec<Vec<f64>> = config
            .initial
            .iter()
            .map(|e| grid.sample(e.space_fn()))
            .collect();
        let mut charges = FacetCharges {
            hole: Vec::new(),
            outer: source.boundary.clone(),
            xi_star: 0.0,
        };
        charges.refresh_max();

        let vol = grid.cell_volume();
        let mut raw_residual = source.bulk.iter().sum::<f64>() * vol + charges.total(&grid);
        let mut scale = source.bulk.iter().map(|v| v.abs()).sum::<f64>() * vol
            + charges.outer.iter().map(|v| v.abs()).sum::<f64>() * grid.facet_area();
        for (s, c) in config.species.iter().zip(&initial) {
            let z = s.charge as f64;
            raw_residual += z * c.iter().sum::<f64>() * vol;
            scale += z.abs() * c.iter().map(|v| v.abs()).sum::<f64>() * vol;
        }
        let mut balance_shift = 0.0;
        if config.doc.surface_charge.auto_balance {
            balance_shift = -raw_residual / grid.outer_area();
            charges.shift_outer(balance_shift);
        } else {
            let tolerance = COMPATIBILITY_TOL * scale.max(1.0);
            if raw_residual.abs() > tolerance {
                return Err(Error::Incompatible {
                    residual: raw_residual,
                    tolerance,
                });
            }
        }
        Ok(MacroProblem {
            grid,
            effective,
            tensor,
            source,
            charges,
            species: config.species.clone(),
            initial,
            mode: config.mode(),
            balance_shift,
            raw_residual,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn transport(&self) -> Result<Transport<'_>> {
        Transport::new(
            &self.grid,
            TransportSpec {
                tensor: self.tensor,
                permittivity: 1.0,
                drift_scale: match self.mode {
                    MacroMode::Coupled => 1.0,
                    MacroMode::Decoupled => 0.0,
                },
                species: self.species.clone(),
                nonlinearity: self.config.nonlinearity,
                bulk_charge: Some(self.source.bulk.clone()),
                facet_charges: self.charges.clone(),
                settings: self.config.solver_settings(),
            },
        )
    }

    pub fn run_settings(
        &self,
        explicit: bool,
        poisson_every_step: bool,
        keep_snapshots: bool,
    ) -> RunSettings {
        let s = &self.config.doc.scaling;
        RunSettings {
            t_final: s.t_final,
            dt: s.dt,
            output_interval: s.output_interval,
            explicit,
            potential_every_step: self.mode == MacroMode::Coupled || poisson_every_step,
            keep_snapshots,
        }
    }

    pub fn run(
        &self,
        explicit: bool,
        poisson_every_step: bool,
        keep_snapshots: bool,
    ) -> Result<RunOutput> {
        let tr = self.transport()?;
        let s0 = tr.initial_state(self.initial.clone())?;
        Ok(tr.run(
            s0,
            &self.run_settings(explicit, poisson_every_step, keep_snapshots),
            None,
        ))
    }
}

/// Runs the homogenized model as configured.
pub fn run_macro(config: &RunConfig) -> Result<(MacroProblem, RunOutput)> {
    let problem = MacroProblem::new(config, config.macro_resolution())?;
    let out = problem.run(
        config.doc.solver.explicit_time,
        config.doc.solver.poisson_every_step,
        config.doc.output.snapshot_every > 0,
    )?;
    Ok((problem, out))
}

/// Restricts a macro field to the fluid cells of a micro grid: block
/// averages when the macro grid is finer, injection when it is coarser.
pub fn restrict_to_micro(
    macro_grid: &MaskedGrid,
    values: &[f64],
    micro: &MaskedGrid,
) -> Result<Vec<f64>> {
    let nm = macro_grid.cells_per_side();
    let nu = micro.cells_per_side();
    let d = micro.dim;
    if macro_grid.dim != d || !macro_grid.is_unperforated() {
        return Err(Error::Harness(
            "macro grid must be hole-free and of the same dimension".into(),
        ));
    }
    if nm >= nu {
        if !nm.is_multiple_of(nu) {
            return Err(Error::Harness(format!(
                "macro resolution {nm} is not a multiple of the micro resolution {nu}"
            )));
        }
        let k = nm / nu;
        let count = k.pow(d as u32) as f64;
        Ok((0..micro.fluid_count())
            .map(|f| {
                let c = micro.lattice.coords(micro.cell_of_fluid[f]);
                let mut sum = 0.0;
                for off in 0..k.pow(d as u32) {
                    let mut idx = [0usize; 3];
                    let mut rest = off;
                    for a in 0..d {
                        idx[a] = c[a] * k + rest % k;
                        rest /= k;
                    }
                    sum += values[macro_grid.lattice.index(&idx[..d])];
                }
                sum / count
            })
            .collect())
    } else {
        if !nu.is_multiple_of(nm) {
            return Err(Error::Harness(format!(
                "micro resolution {nu} is not a multiple of the macro resolution {nm}"
            )));
        }
        let k = nu / nm;
        Ok((0..micro.fluid_count())
            .map(|f| {
                let c = micro.lattice.coords(micro.cell_of_fluid[f]);
                let mut idx = [0usize; 3];
                for a in 0..d {
                    idx[a] = c[a] / k;
                }
                values[macro_grid.lattice.index(&idx[..d])]
            })
            .collect())
    }
}

/// `phi0(x) + eps sum_k d_k phi0(x) w_k(x/eps)` on the micro fluid cells.
pub fn reconstruct_corrector_potential(
    macro_grid: &MaskedGrid,
    phi0: &[f64],
    effective: &EffectiveTensor,
    micro: &MaskedGrid,
) -> Result<Vec<f64>> {
    if effective.resolution != micro.r {
        return Err(Error::Alignment {
            micro: micro.r,
            cell: effective.resolution,
        });
    }
    let base = restrict_to_micro(macro_grid, phi0, micro)?;
    let grad = cell_gradient(macro_grid, phi0);
    let eps = micro.epsilon();
    let mut out = base;
    for (k, w) in effective.correctors.iter().enumerate() {
        let gk: Vec<f64> = grad.iter().map(|g| g[k]).collect();
        let gk = restrict_to_micro(macro_grid, &gk, micro)?;
        for (f, v) in out.iter_mut().enumerate() {
            *v += eps * gk[f] * w.values[micro.local_index(f)];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_and_validate;
    use crate::expr::Variables;
    use crate::geometry::InclusionShape;
    use crate::micro::MicroProblem;

    fn disk_cell(r: usize) -> CellGeometry {
        CellGeometry::build(
            InclusionShape::Disk {
                center: vec![0.5, 0.5],
                radius: 0.25,
            },
            2,
            r,
        )
        .unwrap()
    }

    fn cfg(inclusion: &str, species: &str, xi: &str, extra: &str) -> RunConfig {
        parse_and_validate(&format!(
            r#"{{
            "geometry": {{"inclusion": {inclusion}, "m": 4, "r": 8}},
            "scaling": {{"eta": 1, "p": 4, "t_final": 0.01, "dt": 0.001 {extra}}},
            "species": [{species}],
            "surface_charge": {xi}
        }}"#
        ))
        .unwrap()
    }

    const DISK: &str = r#"{"kind": "disk", "params": {"center": [0.5, 0.5], "radius": 0.25}}"#;
    const NONE: &str = r#"{"kind": "none"}"#;

    #[test]
    fn zero_surface_density_gives_zero_source() {
        let cell = disk_cell(8);
        let grid = MaskedGrid::unperforated(2, 8).unwrap();
        let zero = Expression::parse("0", Variables::SpaceAndCell(2)).unwrap();
        let zero2 = Expression::parse("0", Variables::Space(2)).unwrap();
        let s = build_macro_source(&cell, &grid, &zero, &zero2);
        assert!(s.bulk.iter().all(|&v| v == 0.0));
        assert!(s.boundary.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_density_gives_perimeter_over_porosity() {
        let cell = disk_cell(16);
        let grid = MaskedGrid::unperforated(2, 4).unwrap();
        let one = Expression::parse("1", Variables::SpaceAndCell(2)).unwrap();
        let zero2 = Expression::parse("0", Variables::Space(2)).unwrap();
        let s = build_macro_source(&cell, &grid, &one, &zero2);
        let expected = cell.staircase_perimeter() / cell.porosity;
        assert!(s.bulk.iter().all(|&v| (v - expected).abs() < 1e-13));
    }

    #[test]
    fn staircase_perimeter_tends_to_l1_perimeter() {
        // the staircase measure of a disk converges to 8 R, not 2 pi R
        for r in [64, 128, 256] {
            let p = disk_cell(r).staircase_perimeter();
            assert!((p - 2.0).abs() < 0.1, "r = {r}: {p}");
            let smooth = 2.0 * std::f64::consts::PI * 0.25;
            assert!((p - smooth).abs() / smooth < 0.3);
        }
    }

    #[test]
    fn separable_density_is_separable() {
        let cell = disk_cell(16);
        let grid = MaskedGrid::unperforated(2, 4).unwrap();
        let q = Expression::parse("x1*cos(2*pi*y2)", Variables::SpaceAndCell(2)).unwrap();
        let zero2 = Expression::parse("0", Variables::Space(2)).unwrap();
        let s = build_macro_source(&cell, &grid, &q, &zero2);
        let qint = surface_integral(&cell, |y| (2.0 * std::f64::consts::PI * y[1]).cos());
        for (f, v) in s.bulk.iter().enumerate() {
            let x = grid.center(f);
            assert!((v - x[0] * qint / cell.porosity).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_tensor_matches_micro_on_hole_free_grid() {
        let c = cfg(
            NONE,
            r#"{"diffusivity": 1, "charge": 1, "initial": "1 + 0.5*cos(pi*x1)*cos(pi*x2)"}"#,
            r#"{"xi2": "x1 - 0.5", "auto_balance": true}"#,
            "",
        );
        let micro = MicroProblem::new(&c, 4).unwrap();
        let mac = MacroProblem::new(&c, 32).unwrap();
        assert_eq!(mac.tensor, Tensor::identity(2));
        let a = micro.run(false, false).unwrap().into_result().unwrap();
        let b = mac.run(false, false, false).unwrap().into_result().unwrap();
        for (x, y) in a.final_state.conc[0].iter().zip(&b.final_state.conc[0]) {
            assert!((x - y).abs() < 1e-10);
        }
        for (x, y) in a.final_state.phi.iter().zip(&b.final_state.phi) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn diagonal_tensor_scales_potential() {
        let c = cfg(
            NONE,
            r#"{"diffusivity": 1, "charge": 1, "initial": "1 + 0.5*cos(pi*x1)"},
               {"diffusivity": 1, "charge": -1, "initial": "1"}"#,
            "{}",
            "",
        );
        let mut mac = MacroProblem::new(&c, 16).unwrap();
        let phi1 = {
            let tr = mac.transport().unwrap();
            tr.initial_state(mac.initial.clone()).unwrap().phi
        };
        mac.tensor = Tensor::diagonal(2, 0.4);
        let tr = mac.transport().unwrap();
        let phi_a = tr.initial_state(mac.initial.clone()).unwrap().phi;
        for (a, b) in phi1.iter().zip(&phi_a) {
            assert!((a / 0.4 - b).abs() < 1e-8);
        }
    }

    #[test]
    fn decoupled_concentrations_ignore_charges() {
        let base = |z: i32, xi1: &str| {
            cfg(
                DISK,
                &format!(
                    r#"{{"diffusivity": 1, "charge": {z}, "initial": "1 + 0.5*cos(pi*x1)"}},
                       {{"diffusivity": 1, "charge": {}, "initial": "1 + 0.5*cos(pi*x2)"}}"#,
                    -z
                ),
                &format!(r#"{{"xi1": "{xi1}", "auto_balance": true}}"#),
                r#", "alpha": 0, "beta": 1"#,
            )
        };
        let a = MacroProblem::new(&base(1, "0.5*cos(2*pi*y1)"), 16).unwrap();
        let b = MacroProblem::new(&base(3, "x2*sin(2*pi*y2)"), 16).unwrap();
        assert_eq!(a.mode, MacroMode::Decoupled);
        let ra = a.run(false, false, false).unwrap().into_result().unwrap();
        let rb = b.run(false, true, false).unwrap().into_result().unwrap();
        assert_eq!(ra.final_state.conc, rb.final_state.conc);
    }

    #[test]
    fn symmetric_pair_has_zero_potential() {
        let c = cfg(
            DISK,
            r#"{"diffusivity": 1, "charge": 1, "initial": "1 + 0.5*cos(pi*x1)"},
               {"diffusivity": 1, "charge": -1, "initial": "1 + 0.5*cos(pi*x1)"}"#,
            "{}",
            "",
        );
        let mac = MacroProblem::new(&c, 16).unwrap();
        let out = mac.run(false, false, false).unwrap().into_result().unwrap();
        assert_eq!(out.final_state.conc[0], out.final_state.conc[1]);
        assert!(out.final_state.phi.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn uniform_state_is_stationary() {
        let c = cfg(
            DISK,
            r#"{"diffusivity": 1, "charge": 0, "initial": "0.8"}"#,
            "{}",
            "",
        );
        let mac = MacroProblem::new(&c, 16).unwrap();
        let out = mac.run(false, false, false).unwrap().into_result().unwrap();
        assert!(out.final_state.conc[0]
            .iter()
            .all(|v| (v - 0.8).abs() < 1e-12));
    }

    #[test]
    fn reconstruction_of_linear_potential() {
        let c = cfg(
            DISK,
            r#"{"diffusivity": 1, "charge": 0, "initial": "1"}"#,
            "{}",
            "",
        );
        let eff = compute_effective_tensor(&c.cell, 1e-10).unwrap();
        let micro = MicroProblem::new(&c, 4).unwrap();
        let mgrid = MaskedGrid::unperforated(2, 64).unwrap();
        let phi0 = mgrid.sample(|x| x[0]);
        let rec = reconstruct_corrector_potential(&mgrid, &phi0, &eff, &micro.grid).unwrap();
        for (f, v) in rec.iter().enumerate() {
            let x = micro.grid.center(f)[0];
            let w = eff.correctors[0].values[micro.grid.local_index(f)];
            assert!((v - (x + 0.25 * w)).abs() < 1e-12);
        }
    }

    #[test]
    fn reconstruction_without_inclusion_is_interpolant() {
        let c = cfg(
            NONE,
            r#"{"diffusivity": 1, "charge": 0, "initial": "1"}"#,
            "{}",
            "",
        );
        let eff = compute_effective_tensor(&c.cell, 1e-10).unwrap();
        let micro = MicroProblem::new(&c, 4).unwrap();
        let mgrid = MaskedGrid::unperforated(2, 32).unwrap();
        let phi0 = mgrid.sample(|x| (x[0] * 3.0).sin() * x[1]);
        let rec = reconstruct_corrector_potential(&mgrid, &phi0, &eff, &micro.grid).unwrap();
        assert_eq!(rec, phi0);
    }

    #[test]
    fn restriction_averages_blocks() {
        let fine = MaskedGrid::unperforated(2, 8).unwrap();
        let coarse = MaskedGrid::unperforated(2, 4).unwrap();
        let values = fine.sample(|x| x[0] + 2.0 * x[1]);
        let r = restrict_to_micro(&fine, &values, &coarse).unwrap();
        let expected = coarse.sample(|x| x[0] + 2.0 * x[1]);
        for (a, b) in r.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14);
        }
        let odd = MaskedGrid::unperforated(2, 6).unwrap();
        assert!(restrict_to_micro(&fine, &values, &odd).is_err());
    }
}
