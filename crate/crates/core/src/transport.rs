//! Finite-volume drift-diffusion engine shared by the perforated (micro)
//! and homogenized (macro) models.
//!
//! Unknowns live on fluid cells. The flux of species `i` through an interior
//! face is
//!
//! ```text
//! J = -D_i [ A grad h_p(c) ]_n  -  s D_i z_i c_up [ A grad phi ]_n
//! ```
//!
//! with `s` the drift scale (`eps^beta` for the micro model) and `c_up` the
//! upwind concentration. The potential solves the pure-Neumann problem
//! `kappa L phi = rho + boundary charge` with zero mean, `kappa` being the
//! permittivity scale. Boundary faces carry no species flux.
//!
//! `A` is the identity on perforated grids. A full tensor is accepted on
//! hole-free grids; its cross terms use averaged tangential differences.

use crate::error::{Error, Result};
use crate::geometry::{FacetCharges, MaskedGrid, MAX_DIM};
use crate::linalg::{remove_mean, solve, SolveStats, SolverOptions, SparseMatrix};
use crate::nonlinearity::Nonlinearity;
use crate::tensor::Tensor;

/// Lower bound accepted for concentrations after a step.
pub const NEGATIVITY_TOL: f64 = -1e-12;

/// Relative tolerance for the discrete compatibility residual.
pub const COMPATIBILITY_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpeciesParams {
    pub diffusivity: f64,
    pub charge: i32,
}

/// Concentrations and potential on the fluid cells at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub t: f64,
    pub conc: Vec<Vec<f64>>,
    pub phi: Vec<f64>,
}

/// Face fluxes per species, positive from `lo` to `hi`.
#[derive(Clone, Debug)]
pub struct FaceFluxSet {
    pub diffusive: Vec<Vec<f64>>,
    pub drift: Vec<Vec<f64>>,
}

impl FaceFluxSet {
    pub fn total(&self, species: usize) -> Vec<f64> {
        self.diffusive[species]
            .iter()
            .zip(&self.drift[species])
            .map(|(a, b)| a + b)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverSettings {
    pub poisson_tol: f64,
    pub transport_tol: f64,
    pub max_iter: Option<usize>,
    /// Drift CFL number: `dt <= cfl * h / max|v|`.
    pub cfl: f64,
    pub dt_min: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            poisson_tol: 1e-10,
            transport_tol: 1e-10,
            max_iter: None,
            cfl: 0.4,
            dt_min: 1e-10,
        }
    }
}

/// Source term `f(species, t, x)` added to the transport equations.
pub type SourceFn<'a> = &'a (dyn Fn(usize, f64, &[f64]) -> f64 + Sync);

#[derive(Clone, Copy, Default)]
pub struct StepOptions<'a> {
    /// Fully explicit update instead of implicit linearized diffusion.
    pub explicit: bool,
    /// Skip the potential solve after the transport update.
    pub skip_potential: bool,
    pub source: Option<SourceFn<'a>>,
}

// Linear combination of cell values giving [A grad u]_n on a face.
#[derive(Clone, Debug, Default)]
struct FaceStencils {
    ptr: Vec<usize>,
    idx: Vec<usize>,
    coef: Vec<f64>,
}

impl FaceStencils {
    #[inline]
    fn eval(&self, face: usize, u: &[f64]) -> f64 {
        (self.ptr[face]..self.ptr[face + 1])
            .map(|k| self.coef[k] * u[self.idx[k]])
            .sum()
    }

    fn entries(&self, face: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.ptr[face]..self.ptr[face + 1]).map(move |k| (self.idx[k], self.coef[k]))
    }
}

/// Second-order derivative stencil along `axis` at a cell of a hole-free grid.
fn cell_derivative(grid: &MaskedGrid, cell: usize, axis: usize) -> Vec<(usize, f64)> {
    let lat = &grid.lattice;
    let i = lat.coords(cell)[axis];
    let s = lat.stride(axis);
    let n = lat.n;
    let w = 0.5 / grid.spacing;
    if i > 0 && i + 1 < n {
        vec![(cell + s, w), (cell - s, -w)]
    } else if i == 0 {
        vec![(cell, -3.0 * w), (cell + s, 4.0 * w), (cell + 2 * s, -w)]
    } else {
        vec![(cell, 3.0 * w), (cell - s, -4.0 * w), (cell - 2 * s, w)]
    }
}

/// Cell-centered gradient of `u` on a hole-free grid.
pub fn cell_gradient(grid: &MaskedGrid, u: &[f64]) -> Vec<[f64; MAX_DIM]> {
    (0..grid.fluid_count())
        .map(|c| {
            let mut g = [0.0; MAX_DIM];
            for (axis, slot) in g.iter_mut().enumerate().take(grid.dim) {
                *slot = cell_derivative(grid, c, axis)
                    .into_iter()
                    .map(|(j, w)| w * u[j])
                    .sum();
            }
            g
        })
        .collect()
}

pub struct Transport<'g> {
    grid: &'g MaskedGrid,
    tensor: Tensor,
    permittivity: f64,
    drift_scale: f64,
    species: Vec<SpeciesParams>,
    nonlin: Nonlinearity,
    fixed_charge: Vec<f64>,
    stencils: FaceStencils,
    laplacian: SparseMatrix,
    poisson: SparseMatrix,
    symmetric: bool,
    settings: SolverSettings,
}

/// Physical coefficients of a transport problem.
#[derive(Clone, Debug)]
pub struct TransportSpec {
    pub tensor: Tensor,
    pub permittivity: f64,
    pub drift_scale: f64,
    pub species: Vec<SpeciesParams>,
    pub nonlinearity: Nonlinearity,
    /// Volumetric charge density per fluid cell (homogenized surface source).
    pub bulk_charge: Option<Vec<f64>>,
    pub facet_charges: FacetCharges,
    pub settings: SolverSettings,
}

impl<'g> Transport<'g> {
    pub fn new(grid: &'g MaskedGrid, spec: TransportSpec) -> Result<Self> {
        let TransportSpec {
            tensor,
            permittivity,
            drift_scale,
            species,
            nonlinearity,
            bulk_charge,
            facet_charges,
            settings,
        } = spec;
        if tensor.dim != grid.dim {
            return Err(Error::Config(format!(
                "tensor dimension {} does not match grid dimension {}",
                tensor.dim, grid.dim
            )));
        }
        let cross = tensor.has_cross_terms();
        if cross && !grid.is_unperforated() {
            return Err(Error::Config(
                "full tensors are only supported on hole-free grids".into(),
            ));
        }
        if cross && grid.cells_per_side() < 3 {
            return Err(Error::Config(
                "full tensors need at least 3 cells per side".into(),
            ));
        }
        if facet_charges.hole.len() != grid.hole_facets.len()
            || facet_charges.outer.len() != grid.outer_facets.len()
        {
            return Err(Error::Config(
                "facet charge arrays do not match the grid".into(),
            ));
        }
        for s in &species {
            if !(s.diffusivity > 0.0) {
                return Err(Error::Config(format!(
                    "diffusivity must be positive, got {}",
                    s.diffusivity
                )));
            }
        }

        let h = grid.spacing;
        let mut stencils = FaceStencils {
            ptr: vec![0],
            ..Default::default()
        };
        for face in &grid.interior_faces {
            let d = face.axis;
            let add = |st: &mut FaceStencils, j: usize, w: f64| {
                st.idx.push(j);
                st.coef.push(w);
            };
            add(&mut stencils, face.lo, -tensor.m[d][d] / h);
            add(&mut stencils, face.hi, tensor.m[d][d] / h);
            if cross {
                for e in (0..grid.dim).filter(|&e| e != d && tensor.m[d][e] != 0.0) {
                    for cell in [face.lo, face.hi] {
                        for (j, w) in cell_derivative(grid, cell, e) {
                            add(&mut stencils, j, 0.5 * tensor.m[d][e] * w);
                        }
                    }
                }
            }
            stencils.ptr.push(stencils.idx.len());
        }

        let n = grid.fluid_count();
        let vol = grid.cell_volume();
        let area = grid.facet_area();
        let mut fixed_charge = match bulk_charge {
            Some(b) if b.len() == n => b.iter().map(|v| v * vol).collect(),
            Some(b) => {
                return Err(Error::Config(format!(
                    "bulk charge has {} entries, expected {n}",
                    b.len()
                )))
            }
            None => vec![0.0; n],
        };
        for (f, q) in grid.hole_facets.iter().zip(&facet_charges.hole) {
            fixed_charge[f.cell] += q * area;
        }
        for (f, q) in grid.outer_facets.iter().zip(&facet_charges.outer) {
            fixed_charge[f.cell] += q * area;
        }

        let mut t = Transport {
            grid,
            tensor,
            permittivity,
            drift_scale,
            species,
            nonlin: nonlinearity,
            fixed_charge,
            stencils,
            laplacian: SparseMatrix::default(),
            poisson: SparseMatrix::default(),
            symmetric: !cross,
            settings,
        };
        t.laplacian = t.assemble(None);
        t.poisson = t.laplacian.clone();
        t.poisson.scale(permittivity);
        Ok(t)
    }

    pub fn grid(&self) -> &MaskedGrid {
        self.grid
    }

    pub fn species(&self) -> &[SpeciesParams] {
        &self.species
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        self.nonlin
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn permittivity(&self) -> f64 {
        self.permittivity
    }

    pub fn drift_scale(&self) -> f64 {
        self.drift_scale
    }

    pub fn settings(&self) -> &SolverSettings {
        &self.settings
    }

    /// Unscaled operator `L` (outward flux of `-A grad u`, summed per cell).
    pub fn laplacian(&self) -> &SparseMatrix {
        &self.laplacian
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    fn max_iter(&self) -> usize {
        self.settings
            .max_iter
            .unwrap_or_else(|| SolverOptions::default_max_iter(self.grid.fluid_count()))
    }

    // Operator with optional per-face weights.
    fn assemble(&self, weights: Option<&[f64]>) -> SparseMatrix {
        let n = self.grid.fluid_count();
        let area = self.grid.facet_area();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (k, face) in self.grid.interior_faces.iter().enumerate() {
            let w = weights.map_or(1.0, |w| w[k]) * area;
            for (j, c) in self.stencils.entries(k) {
                rows[face.lo].push((j, -w * c));
                rows[face.hi].push((j, w * c));
            }
        }
        SparseMatrix::from_rows(n, |row, push| {
            for &(j, v) in &rows[row] {
                push(j, v);
            }
        })
    }

    /// `[A grad u]_n` on every interior face.
    pub fn face_normal_gradient(&self, u: &[f64]) -> Vec<f64> {
        (0..self.grid.interior_faces.len())
            .map(|k| self.stencils.eval(k, u))
            .collect()
    }

    /// Fixed part of the Poisson right-hand side (surface and bulk sources).
    pub fn fixed_charge(&self) -> &[f64] {
        &self.fixed_charge
    }

    /// Cell charges `vol * sum_i z_i c_i + fixed charge`.
    pub fn poisson_rhs(&self, conc: &[Vec<f64>]) -> Vec<f64> {
        let vol = self.grid.cell_volume();
        let mut b = self.fixed_charge.clone();
        for (s, c) in self.species.iter().zip(conc) {
            if s.charge == 0 {
                continue;
            }
            let z = s.charge as f64;
            for (bi, ci) in b.iter_mut().zip(c) {
                *bi += vol * z * ci;
            }
        }
        b
    }

    /// Total charge (zero for compatible data) and its magnitude scale.
    pub fn compatibility(&self, conc: &[Vec<f64>]) -> (f64, f64) {
        let vol = self.grid.cell_volume();
        let mut scale: f64 = self.fixed_charge.iter().map(|v| v.abs()).sum();
        for (s, c) in self.species.iter().zip(conc) {
            scale += vol * (s.charge as f64).abs() * c.iter().map(|v| v.abs()).sum::<f64>();
        }
        let residual = self.poisson_rhs(conc).iter().sum();
        (residual, scale)
    }

    /// Solves for the zero-mean potential of the given concentrations.
    pub fn solve_potential(
        &self,
        conc: &[Vec<f64>],
        warm: &[f64],
    ) -> Result<(Vec<f64>, SolveStats)> {
        let (residual, scale) = self.compatibility(conc);
        let tolerance = COMPATIBILITY_TOL * scale.max(1.0);
        if residual.abs() > tolerance {
            return Err(Error::StateCorruption {
                residual,
                tolerance,
            });
        }
        let b = self.poisson_rhs(conc);
        self.solve_potential_rhs(&b, warm)
    }

    /// Projected solve of `kappa L phi = b`; the mean of `b` is discarded.
    pub fn solve_potential_rhs(&self, b: &[f64], warm: &[f64]) -> Result<(Vec<f64>, SolveStats)> {
        let mut phi = warm.to_vec();
        let opts = SolverOptions::new(self.settings.poisson_tol, self.max_iter()).singular();
        let stats = solve(&self.poisson, b, &mut phi, &opts, self.symmetric)?;
        remove_mean(&mut phi);
        Ok((phi, stats))
    }

    /// Drift velocity `-s D z [A grad phi]_n` per face.
    fn drift_velocity(&self, species: usize, grad_phi: &[f64]) -> Vec<f64> {
        let s = &self.species[species];
        let factor = -self.drift_scale * s.diffusivity * s.charge as f64;
        if factor == 0.0 {
            return vec![0.0; grad_phi.len()];
        }
        grad_phi.iter().map(|g| factor * g).collect()
    }

    fn drift_flux(&self, c: &[f64], velocity: &[f64]) -> Vec<f64> {
        self.grid
            .interior_faces
            .iter()
            .zip(velocity)
            .map(|(f, &v)| if v > 0.0 { v * c[f.lo] } else { v * c[f.hi] })
            .collect()
    }

    /// Explicit face fluxes of every species for the current state.
    pub fn compute_fluxes(&self, state: &State) -> FaceFluxSet {
        let grad_phi = self.face_normal_gradient(&state.phi);
        let mut diffusive = Vec::with_capacity(self.species.len());
        let mut drift = Vec::with_capacity(self.species.len());
        for (i, s) in self.species.iter().enumerate() {
            let hc: Vec<f64> = state.conc[i].iter().map(|&c| self.nonlin.h(c)).collect();
            diffusive.push(
                self.face_normal_gradient(&hc)
                    .into_iter()
                    .map(|g| -s.diffusivity * g)
                    .collect(),
            );
            let v = self.drift_velocity(i, &grad_phi);
            drift.push(self.drift_flux(&state.conc[i], &v));
        }
        FaceFluxSet { diffusive, drift }
    }

    /// Largest drift speed over all species and faces.
    pub fn max_drift_speed(&self, state: &State) -> f64 {
        if self.drift_scale == 0.0 {
            return 0.0;
        }
        let grad_phi = self.face_normal_gradient(&state.phi);
        let gmax = grad_phi.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        self.species
            .iter()
            .map(|s| (self.drift_scale * s.diffusivity * s.charge as f64).abs() * gmax)
            .fold(0.0, f64::max)
    }

    /// Drift CFL limit `cfl * h / max|v|` (infinite without drift).
    pub fn cfl_limit(&self, state: &State) -> f64 {
        let v = self.max_drift_speed(state);
        if v > 0.0 {
            self.settings.cfl * self.grid.spacing / v
        } else {
            f64::INFINITY
        }
    }

    /// Stability limit of the fully explicit diffusion update.
    pub fn explicit_limit(&self, state: &State) -> f64 {
        let h = self.grid.spacing;
        let amax = (0..self.grid.dim)
            .map(|d| {
                (0..self.grid.dim)
                    .map(|e| self.tensor.m[d][e].abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max);
        let mut k: f64 = 0.0;
        for (s, c) in self.species.iter().zip(&state.conc) {
            let cmax = c.iter().fold(0.0f64, |m, &v| m.max(v));
            k = k.max(s.diffusivity * self.nonlin.h_prime(cmax));
        }
        0.4 * h * h / (2.0 * self.grid.dim as f64 * k * amax)
    }

    // c[lo] -= dt/h F, c[hi] += dt/h F
    fn apply_fluxes(&self, c: &mut [f64], flux: &[f64], dt: f64) {
        let r = dt / self.grid.spacing;
        for (f, &q) in self.grid.interior_faces.iter().zip(flux) {
            c[f.lo] -= r * q;
            c[f.hi] += r * q;
        }
    }

    /// One time step. Drift is explicit (upwind), diffusion implicit with the
    /// face coefficient `h_p'` frozen at the old state, and the potential is
    /// re-solved from the new concentrations.
    pub fn step(&self, state: &State, dt: f64, opts: StepOptions<'_>) -> Result<State> {
        let grad_phi = self.face_normal_gradient(&state.phi);
        let vol = self.grid.cell_volume();
        let t_new = state.t + dt;
        let mut conc = Vec::with_capacity(self.species.len());
        for (i, s) in self.species.iter().enumerate() {
            let c_old = &state.conc[i];
            let mut c_star = c_old.clone();
            let v = self.drift_velocity(i, &grad_phi);
            if v.iter().any(|&x| x != 0.0) {
                let drift = self.drift_flux(c_old, &v);
                self.apply_fluxes(&mut c_star, &drift, dt);
            }
            if let Some(src) = opts.source {
                for (cell, value) in c_star.iter_mut().enumerate() {
                    let x = self.grid.center(cell);
                    *value += dt * src(i, t_new, &x[..self.grid.dim]);
                }
            }

            let c_new = if opts.explicit {
                let hc: Vec<f64> = c_old.iter().map(|&c| self.nonlin.h(c)).collect();
                let flux: Vec<f64> = self
                    .face_normal_gradient(&hc)
                    .into_iter()
                    .map(|g| -s.diffusivity * g)
                    .collect();
                let mut c = c_star;
                self.apply_fluxes(&mut c, &flux, dt);
                c
            } else {
                let weights: Vec<f64> = self
                    .grid
                    .interior_faces
                    .iter()
                    .map(|f| s.diffusivity * self.nonlin.h_prime(0.5 * (c_old[f.lo] + c_old[f.hi])))
                    .collect();
                let mut m = self.assemble(Some(&weights));
                // (vol/dt) I + D L_H
                let shift = vol / dt;
                for row in 0..m.n {
                    for k in m.row_ptr[row]..m.row_ptr[row + 1] {
                        if m.cols[k] == row {
                            m.vals[k] += shift;
                        }
                    }
                }
                // solve for the increment over c_old; steady states give b = 0
                let mc = m.mul(c_old);
                let b: Vec<f64> = c_star.iter().zip(&mc).map(|(c, q)| shift * c - q).collect();
                let mut delta = vec![0.0; b.len()];
                let sopts = SolverOptions::new(self.settings.transport_tol, self.max_iter());
                solve(&m, &b, &mut delta, &sopts, self.symmetric)?;
                let x: Vec<f64> = c_old.iter().zip(&delta).map(|(c, d)| c + d).collect();
                // recompute the update in flux form so mass telescopes exactly
                let flux: Vec<f64> = self
                    .face_normal_gradient(&x)
                    .into_iter()
                    .zip(&weights)
                    .map(|(g, w)| -w * g)
                    .collect();
                let mut c = c_star;
                self.apply_fluxes(&mut c, &flux, dt);
                c
            };
            let min = c_new.iter().fold(f64::INFINITY, |m, &v| m.min(v));
            if min < NEGATIVITY_TOL || min.is_nan() {
                return Err(Error::NegativeConcentration {
                    species: i,
                    min,
                    dt,
                });
            }
            conc.push(c_new);
        }
        let phi = if opts.skip_potential {
            state.phi.clone()
        } else {
            self.solve_potential(&conc, &state.phi)?.0
        };
        Ok(State {
            t: t_new,
            conc,
            phi,
        })
    }

    /// `(1/2) kappa s phi^T L phi + sum_i sum_cells Psi(c_i) vol`.
    pub fn energy(&self, state: &State) -> f64 {
        let weight = self.permittivity * self.drift_scale;
        let field = if weight != 0.0 {
            let lphi = self.laplacian.mul(&state.phi);
            0.5 * weight * state.phi.iter().zip(&lphi).map(|(a, b)| a * b).sum::<f64>()
        } else {
            0.0
        };
        let vol = self.grid.cell_volume();
        let entropy: f64 = state
            .conc
            .iter()
            .map(|c| c.iter().map(|&v| self.nonlin.psi(v)).sum::<f64>() * vol)
            .sum();
        field + entropy
    }

    /// Initial state: given concentrations plus the matching potential.
    pub fn initial_state(&self, conc: Vec<Vec<f64>>) -> Result<State> {
        let n = self.grid.fluid_count();
        if conc.len() != self.species.len() || conc.iter().any(|c| c.len() != n) {
            return Err(Error::Config(
                "initial concentration arrays do not match the grid".into(),
            ));
        }
        let (phi, _) = self.solve_potential(&conc, &vec![0.0; n])?;
        Ok(State { t: 0.0, conc, phi })
    }
}

/// Per-output-time record.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub mass: Vec<f64>,
    pub energy: f64,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub mean_phi: f64,
    pub compat_residual: f64,
    pub dt: f64,
    /// `kappa |grad phi|_2` from face differences.
    pub grad_phi_norm: f64,
    pub grad_c_norm: Vec<f64>,
    /// `sum c_i^p vol` per species.
    pub lp_power: Vec<f64>,
}

pub fn face_gradient_norm(grid: &MaskedGrid, u: &[f64]) -> f64 {
    let h = grid.spacing;
    let vol = grid.cell_volume();
    grid.interior_faces
        .iter()
        .map(|f| {
            let g = (u[f.hi] - u[f.lo]) / h;
            g * g * vol
        })
        .sum::<f64>()
        .sqrt()
}

impl Transport<'_> {
    pub fn sample(&self, state: &State, dt: f64) -> Sample {
        let vol = self.grid.cell_volume();
        let p = self.nonlin.p;
        let fold_min = |c: &Vec<f64>| c.iter().fold(f64::INFINITY, |m, &v| m.min(v));
        let fold_max = |c: &Vec<f64>| c.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        Sample {
            t: state.t,
            mass: state
                .conc
                .iter()
                .map(|c| c.iter().sum::<f64>() * vol)
                .collect(),
            energy: self.energy(state),
            min: state.conc.iter().map(fold_min).collect(),
            max: state.conc.iter().map(fold_max).collect(),
            mean_phi: self.grid.mean(&state.phi),
            compat_residual: self.compatibility(&state.conc).0,
            dt,
            grad_phi_norm: self.permittivity * face_gradient_norm(self.grid, &state.phi),
            grad_c_norm: state
                .conc
                .iter()
                .map(|c| face_gradient_norm(self.grid, c))
                .collect(),
            lp_power: state
                .conc
                .iter()
                .map(|c| c.iter().map(|&v| v.max(0.0).powf(p)).sum::<f64>() * vol)
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunSettings {
    pub t_final: f64,
    /// Largest step; the drift CFL limit may reduce it.
    pub dt: f64,
    /// Spacing of recorded samples; `0` records only the final time.
    pub output_interval: f64,
    pub explicit: bool,
    /// When false the potential is solved only at output times.
    pub potential_every_step: bool,
    pub keep_snapshots: bool,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub samples: Vec<Sample>,
    /// `(t, V)` after every accepted step, starting at `t = 0`.
    pub energy_trace: Vec<(f64, f64)>,
    /// States at the output times (when requested), starting at `t = 0`.
    pub snapshots: Vec<State>,
    pub final_state: State,
    pub steps: usize,
    pub rejections: usize,
    /// Set when the run stopped early; the other fields hold partial results.
    pub failure: Option<String>,
}

impl RunOutput {
    pub fn into_result(self) -> Result<Self> {
        match &self.failure {
            Some(msg) => Err(Error::Harness(format!(
                "run failed at t = {}: {msg}",
                self.final_state.t
            ))),
            None => Ok(self),
        }
    }
}

fn output_times(t_final: f64, interval: f64) -> Vec<f64> {
    if t_final <= 0.0 {
        return Vec::new();
    }
    if !(interval > 0.0) || interval >= t_final {
        return vec![t_final];
    }
    let count = (t_final / interval - 1e-9).ceil() as usize;
    let mut times: Vec<f64> = (1..count).map(|k| k as f64 * interval).collect();
    times.push(t_final);
    times
}

impl Transport<'_> {
    /// Integrates from `initial` to `t_final`, halving the step on
    /// nonnegativity rejections.
    pub fn run(
        &self,
        initial: State,
        settings: &RunSettings,
        source: Option<SourceFn<'_>>,
    ) -> RunOutput {
        let mut state = initial;
        let mut samples = vec![self.sample(&state, 0.0)];
        let mut energy_trace = vec![(state.t, self.energy(&state))];
        let mut snapshots = Vec::new();
        if settings.keep_snapshots {
            snapshots.push(state.clone());
        }
        let mut steps = 0;
        let mut rejections = 0;
        let mut failure = None;

        let t_end = settings.t_final;
        let eps_t = 1e-12 * t_end.max(1.0);
        'outer: for target in output_times(t_end, settings.output_interval) {
            let mut last_dt = 0.0;
            while state.t < target - eps_t {
                let mut dt = settings.dt.min(self.cfl_limit(&state));
                if settings.explicit {
                    dt = dt.min(self.explicit_limit(&state));
                }
                dt = dt.min(target - state.t);
                let opts = StepOptions {
                    explicit: settings.explicit,
                    skip_potential: !settings.potential_every_step,
                    source,
                };
                let next = loop {
                    match self.step(&state, dt, opts) {
                        Ok(next) => break next,
                        Err(Error::NegativeConcentration { .. }) => {
                            rejections += 1;
                            dt *= 0.5;
                            if dt < self.settings.dt_min {
                                failure = Some(
                                    Error::StepFloor {
                                        t: state.t,
                                        floor: self.settings.dt_min,
                                    }
                                    .to_string(),
                                );
                                break 'outer;
                            }
                        }
                        Err(e) => {
                            failure = Some(e.to_string());
                            break 'outer;
                        }
                    }
                };
                state = next;
                if target - state.t <= eps_t {
                    state.t = target;
                }
                steps += 1;
                last_dt = dt;
                energy_trace.push((state.t, self.energy(&state)));
            }
            if !settings.potential_every_step {
                match self.solve_potential(&state.conc, &state.phi) {
                    Ok((phi, _)) => state.phi = phi,
                    Err(e) => {
                        failure = Some(e.to_string());
                        break;
                    }
                }
            }
            samples.push(self.sample(&state, last_dt));
            if settings.keep_snapshots {
                snapshots.push(state.clone());
            }
        }
        RunOutput {
            samples,
            energy_trace,
            snapshots,
            final_state: state,
            steps,
            rejections,
            failure,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CellGeometry, InclusionShape};

    fn unperforated(n: usize) -> MaskedGrid {
        MaskedGrid::unperforated(2, n).unwrap()
    }

    fn spec(grid: &MaskedGrid, species: Vec<SpeciesParams>) -> TransportSpec {
        TransportSpec {
            tensor: Tensor::identity(grid.dim),
            permittivity: 1.0,
            drift_scale: 1.0,
            species,
            nonlinearity: Nonlinearity::new(1.0, 4.0).unwrap(),
            bulk_charge: None,
            facet_charges: FacetCharges::zero(grid),
            settings: SolverSettings::default(),
        }
    }

    #[test]
    fn output_schedule() {
        assert_eq!(output_times(0.0, 0.1), Vec::<f64>::new());
        assert_eq!(output_times(0.1, 0.0), vec![0.1]);
        let t = output_times(0.1, 0.025);
        assert_eq!(t.len(), 4);
        assert_eq!(*t.last().unwrap(), 0.1);
    }

    #[test]
    fn uniform_state_has_zero_flux() {
        let grid = unperforated(8);
        let tr = Transport::new(
            &grid,
            spec(
                &grid,
                vec![SpeciesParams {
                    diffusivity: 1.0,
                    charge: 1,
                }],
            ),
        )
        .unwrap();
        let state = State {
            t: 0.0,
            conc: vec![vec![0.7; 64]],
            phi: vec![0.0; 64],
        };
        let f = tr.compute_fluxes(&state);
        assert!(f.total(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn diffusive_flux_is_difference_of_h() {
        let grid = unperforated(8);
        let tr = Transport::new(
            &grid,
            spec(
                &grid,
                vec![SpeciesParams {
                    diffusivity: 2.0,
                    charge: 0,
                }],
            ),
        )
        .unwrap();
        let conc: Vec<f64> = (0..64).map(|i| 0.1 * (i % 8) as f64).collect();
        let state = State {
            t: 0.0,
            conc: vec![conc.clone()],
            phi: vec![0.0; 64],
        };
        let f = tr.compute_fluxes(&state);
        let nl = tr.nonlinearity();
        for (face, q) in grid.interior_faces.iter().zip(&f.diffusive[0]) {
            let expected = -2.0 * (nl.h(conc[face.hi]) - nl.h(conc[face.lo])) / grid.spacing;
            assert!((q - expected).abs() < 1e-12 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn upwind_picks_left_value() {
        let grid = unperforated(4);
        let tr = Transport::new(
            &grid,
            spec(
                &grid,
                vec![SpeciesParams {
                    diffusivity: 1.0,
                    charge: 1,
                }],
            ),
        )
        .unwrap();
        // face between cell 0 and cell 1 along x
        let k = grid
            .interior_faces
            .iter()
            .position(|f| f.lo == 0 && f.hi == 1)
            .unwrap();
        let mut conc = vec![0.0; 16];
        conc[0] = 1.0;
        let mut phi = vec![0.0; 16];
        phi[1] = -1.0;
        let state = State {
            t: 0.0,
            conc: vec![conc],
            phi,
        };
        let f = tr.compute_fluxes(&state);
        let v = 1.0 / grid.spacing;
        assert_eq!(f.drift[0][k], v);
    }

    #[test]
    fn zero_concentration_is_fixed_point() {
        let cell = CellGeometry::build(
            InclusionShape::Disk {
                center: vec![0.5, 0.5],
                radius: 0.25,
            },
            2,
            8,
        )
        .unwrap();
        let grid = MaskedGrid::build(&cell, 2, 8).unwrap();
        let n = grid.fluid_count();
        let tr = Transport::new(
            &grid,
            spec(
                &grid,
                vec![SpeciesParams {
                    diffusivity: 1.0,
                    charge: 2,
                }],
            ),
        )
        .unwrap();
        let s0 = tr.initial_state(vec![vec![0.0; n]]).unwrap();
        let s1 = tr.step(&s0, 0.01, StepOptions::default()).unwrap();
        assert!(s1.conc[0].iter().all(|&v| v == 0.0));
        assert!(s1.phi.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn incompatible_charge_is_rejected() {
        let grid = unperforated(6);
        let tr = Transport::new(
            &grid,
            spec(
                &grid,
                vec![SpeciesParams {
                    diffusivity: 1.0,
                    charge: 1,
                }],
            ),
        )
        .unwrap();
        let err = tr.initial_state(vec![vec![1.0; 36]]).unwrap_err();
        assert!(matches!(err, Error::StateCorruption { .. }));
    }

    #[test]
    fn cross_terms_rejected_on_perforated_grid() {
        let cell = CellGeometry::build(
            InclusionShape::Disk {
                center: vec![0.5, 0.5],
                radius: 0.25,
            },
            2,
            8,
        )
        .unwrap();
        let grid = MaskedGrid::build(&cell, 1, 8).unwrap();
        let mut s = spec(&grid, vec![]);
        s.tensor = Tensor::from_rows(&[vec![1.0, 0.1], vec![0.1, 1.0]]);
        assert!(Transport::new(&grid, s).is_err());
    }

    #[test]
    fn full_tensor_operator_conserves_and_kills_constants() {
        let grid = unperforated(10);
        let mut s = spec(&grid, vec![]);
        s.tensor = Tensor::from_rows(&[vec![1.0, 0.3], vec![0.3, 0.8]]);
        let tr = Transport::new(&grid, s).unwrap();
        let l = tr.laplacian();
        let ones = vec![1.0; 100];
        assert!(l.mul(&ones).iter().all(|v| v.abs() < 1e-10));
        // column sums vanish: interior fluxes telescope
        let u: Vec<f64> = (0..100).map(|i| ((i * 7) % 13) as f64).collect();
        let total: f64 = l.mul(&u).iter().sum();
        assert!(total.abs() < 1e-9);
        assert!(!tr.is_symmetric());
    }
}
