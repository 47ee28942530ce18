//! Manufactured-solution verification of the Poisson solvers and of the
//! nonlinear diffusion stepper on hole-free grids.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FacetCharges, MaskedGrid};
use crate::nonlinearity::Nonlinearity;
use crate::tensor::Tensor;
use crate::transport::{
    RunSettings, SolverSettings, SpeciesParams, State, Transport, TransportSpec,
};

/// Lower bound on the observed spatial order of the Poisson solvers.
pub const POISSON_ORDER_MIN: f64 = 1.8;
pub const POISSON_ORDER_MAX: f64 = 2.2;
pub const SPATIAL_ORDER_MIN: f64 = 1.8;
pub const TEMPORAL_ORDER_MIN: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MmsSolver {
    PoissonMicro,
    PoissonMacro,
    Diffusion,
}

#[derive(Clone, Debug, Serialize)]
pub struct OrderStudy {
    /// Grid spacings or time steps.
    pub steps: Vec<f64>,
    pub errors: Vec<f64>,
    pub order: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MmsReport {
    pub solver: MmsSolver,
    pub resolutions: Vec<usize>,
    pub spatial: OrderStudy,
    pub temporal: Option<OrderStudy>,
}

impl MmsReport {
    /// Fails when an observed order is outside its accepted range.
    pub fn check(&self) -> Result<()> {
        let s = self.spatial.order;
        match self.solver {
            MmsSolver::PoissonMicro | MmsSolver::PoissonMacro => {
                if !(POISSON_ORDER_MIN..=POISSON_ORDER_MAX).contains(&s) {
                    return Err(Error::Verification(format!(
                        "{:?}: observed order {s:.3} outside [{POISSON_ORDER_MIN}, {POISSON_ORDER_MAX}]",
                        self.solver
                    )));
                }
            }
            MmsSolver::Diffusion => {
                if !(s >= SPATIAL_ORDER_MIN) {
                    return Err(Error::Verification(format!(
                        "diffusion: spatial order {s:.3} below {SPATIAL_ORDER_MIN}"
                    )));
                }
                let t = self.temporal.as_ref().map_or(f64::NAN, |t| t.order);
                if !(t >= TEMPORAL_ORDER_MIN) {
                    return Err(Error::Verification(format!(
                        "diffusion: temporal order {t:.3} below {TEMPORAL_ORDER_MIN}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Least-squares slope of `log e` against `log h`.
pub fn observed_order(steps: &[f64], errors: &[f64]) -> f64 {
    let n = steps.len() as f64;
    let xs: Vec<f64> = steps.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn minus_mean(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    for x in v.iter_mut() {
        *x -= mean;
    }
}

fn tight_settings() -> SolverSettings {
    SolverSettings {
        poisson_tol: 1e-12,
        transport_tol: 1e-12,
        ..SolverSettings::default()
    }
}

fn potential_transport(
    grid: &MaskedGrid,
    tensor: Tensor,
    permittivity: f64,
) -> Result<Transport<'_>> {
    Transport::new(
        grid,
        TransportSpec {
            tensor,
            permittivity,
            drift_scale: 1.0,
            species: Vec::new(),
            nonlinearity: Nonlinearity::new(1.0, 4.0)?,
            bulk_charge: None,
            facet_charges: FacetCharges::zero(grid),
            settings: tight_settings(),
        },
    )
}

/// Max error of `kappa L phi = rho` against `cos(pi x1) cos(pi x2)` with
/// `kappa = eps^alpha = 1/2`.
pub fn poisson_micro_error(n: usize) -> Result<f64> {
    let grid = MaskedGrid::unperforated(2, n)?;
    let kappa = 0.5;
    let tr = potential_transport(&grid, Tensor::identity(2), kappa)?;
    let vol = grid.cell_volume();
    let b = grid.sample(|x| vol * 2.0 * PI * PI * kappa * (PI * x[0]).cos() * (PI * x[1]).cos());
    let (phi, _) = tr.solve_potential_rhs(&b, &vec![0.0; b.len()])?;
    let mut exact = grid.sample(|x| (PI * x[0]).cos() * (PI * x[1]).cos());
    minus_mean(&mut exact);
    Ok(max_abs_diff(&phi, &exact))
}

/// Tensor of the full-tensor manufactured problem.
pub fn mms_tensor() -> Tensor {
    Tensor::from_rows(&[vec![1.0, 0.3], vec![0.3, 0.8]])
}

/// Max error of `-div(A grad phi) = f`, `A grad phi . nu = g` against
/// `cos(pi x1) cos(2 pi x2)`.
pub fn poisson_macro_error(n: usize) -> Result<f64> {
    let grid = MaskedGrid::unperforated(2, n)?;
    let a = mms_tensor();
    let tr = potential_transport(&grid, a, 1.0)?;
    let (a11, a12, a22) = (a.m[0][0], a.m[0][1], a.m[1][1]);
    let phi = |x: &[f64]| (PI * x[0]).cos() * (2.0 * PI * x[1]).cos();
    let grad = |x: &[f64]| {
        [
            -PI * (PI * x[0]).sin() * (2.0 * PI * x[1]).cos(),
            -2.0 * PI * (PI * x[0]).cos() * (2.0 * PI * x[1]).sin(),
        ]
    };
    // -(a11 phi_11 + 2 a12 phi_12 + a22 phi_22)
    let f = |x: &[f64]| {
        let mixed = 2.0 * PI * PI * (PI * x[0]).sin() * (2.0 * PI * x[1]).sin();
        (a11 * PI * PI + a22 * 4.0 * PI * PI) * phi(x) - 2.0 * a12 * mixed
    };
    let vol = grid.cell_volume();
    let area = grid.facet_area();
    let mut b = grid.sample(|x| vol * f(x));
    for facet in &grid.outer_facets {
        let g = grad(&facet.x[..2]);
        let flux = (a.m[facet.axis][0] * g[0] + a.m[facet.axis][1] * g[1]) * facet.outward as f64;
        b[facet.cell] += area * flux;
    }
    minus_mean(&mut b);
    let (phi_h, _) = tr.solve_potential_rhs(&b, &vec![0.0; b.len()])?;
    let mut exact = grid.sample(phi);
    minus_mean(&mut exact);
    Ok(max_abs_diff(&phi_h, &exact))
}

const DIFF_ETA: f64 = 0.1;
const DIFF_P: f64 = 4.0;

fn diffusion_exact(t: f64, x: &[f64]) -> f64 {
    (-t).exp() * (2.0 + (PI * x[0]).cos())
}

/// `f = d_t c - div(h_p'(c) grad c)` for the manufactured concentration.
fn diffusion_source(t: f64, x: &[f64]) -> f64 {
    let e = (-t).exp();
    let c = e * (2.0 + (PI * x[0]).cos());
    let cx = -e * PI * (PI * x[0]).sin();
    let cxx = -e * PI * PI * (PI * x[0]).cos();
    let hp = 1.0 + DIFF_ETA * DIFF_P * c.powf(DIFF_P - 1.0);
    let hpp = DIFF_ETA * DIFF_P * (DIFF_P - 1.0) * c.powf(DIFF_P - 2.0);
    -c - (hpp * cx * cx + hp * cxx)
}

/// Max error at `t_final` of the IMEX stepper with step `dt` on an `n^2` grid.
pub fn diffusion_error(n: usize, dt: f64, t_final: f64) -> Result<f64> {
    let grid = MaskedGrid::unperforated(2, n)?;
    let tr = Transport::new(
        &grid,
        TransportSpec {
            tensor: Tensor::identity(2),
            permittivity: 1.0,
            drift_scale: 1.0,
            species: vec![SpeciesParams {
                diffusivity: 1.0,
                charge: 0,
            }],
            nonlinearity: Nonlinearity::new(DIFF_ETA, DIFF_P)?,
            bulk_charge: None,
            facet_charges: FacetCharges::zero(&grid),
            settings: tight_settings(),
        },
    )?;
    let c0 = grid.sample(|x| diffusion_exact(0.0, x));
    let s0 = tr.initial_state(vec![c0])?;
    let source = |_: usize, t: f64, x: &[f64]| diffusion_source(t, x);
    let settings = RunSettings {
        t_final,
        dt,
        output_interval: 0.0,
        explicit: false,
        potential_every_step: false,
        keep_snapshots: false,
    };
    let out = tr.run(s0, &settings, Some(&source)).into_result()?;
    let exact = grid.sample(|x| diffusion_exact(t_final, x));
    Ok(max_abs_diff(&out.final_state.conc[0], &exact))
}

/// Error of a constant state after a few steps with no source.
pub fn constant_solution_error(n: usize) -> Result<f64> {
    let grid = MaskedGrid::unperforated(2, n)?;
    let tr = Transport::new(
        &grid,
        TransportSpec {
            tensor: mms_tensor(),
            permittivity: 1.0,
            drift_scale: 1.0,
            species: vec![SpeciesParams {
                diffusivity: 1.0,
                charge: 0,
            }],
            nonlinearity: Nonlinearity::new(DIFF_ETA, DIFF_P)?,
            bulk_charge: None,
            facet_charges: FacetCharges::zero(&grid),
            settings: tight_settings(),
        },
    )?;
    let s0 = State {
        t: 0.0,
        conc: vec![vec![2.0; grid.fluid_count()]],
        phi: vec![0.0; grid.fluid_count()],
    };
    let settings = RunSettings {
        t_final: 0.05,
        dt: 0.01,
        output_interval: 0.0,
        explicit: false,
        potential_every_step: true,
        keep_snapshots: false,
    };
    let out = tr.run(s0, &settings, None).into_result()?;
    Ok(out.final_state.conc[0]
        .iter()
        .map(|v| (v - 2.0).abs())
        .fold(0.0, f64::max))
}

/// Time span and steps of the temporal study (spatial grid fixed and fine).
pub const TEMPORAL_T_FINAL: f64 = 0.2;
pub const TEMPORAL_DTS: [f64; 3] = [0.04, 0.02, 0.01];
pub const TEMPORAL_RESOLUTION: usize = 64;
/// Final time of the spatial study, run with `dt = h^2`.
pub const SPATIAL_T_FINAL: f64 = 0.05;

fn study(steps: Vec<f64>, errors: Vec<f64>) -> OrderStudy {
    let order = observed_order(&steps, &errors);
    OrderStudy {
        steps,
        errors,
        order,
    }
}

/// Runs the manufactured problem for `solver` at each resolution and returns
/// the observed orders without judging them.
pub fn run_mms(solver: MmsSolver, resolutions: &[usize]) -> Result<MmsReport> {
    if resolutions.len() < 2 {
        return Err(Error::Config("at least two resolutions are needed".into()));
    }
    let hs: Vec<f64> = resolutions.iter().map(|&n| 1.0 / n as f64).collect();
    let run_all = |f: &(dyn Fn(usize) -> Result<f64> + Sync)| -> Result<Vec<f64>> {
        std::thread::scope(|s| {
            let handles: Vec<_> = resolutions.iter().map(|&n| s.spawn(move || f(n))).collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(Error::Harness("mms run panicked".into())))
                })
                .collect()
        })
    };
    let (spatial, temporal) = match solver {
        MmsSolver::PoissonMicro => (study(hs, run_all(&poisson_micro_error)?), None),
        MmsSolver::PoissonMacro => (study(hs, run_all(&poisson_macro_error)?), None),
        MmsSolver::Diffusion => {
            let errors = run_all(&|n| {
                let h = 1.0 / n as f64;
                diffusion_error(n, h * h, SPATIAL_T_FINAL)
            })?;
            let t_errors = std::thread::scope(|s| {
                let handles: Vec<_> = TEMPORAL_DTS
                    .iter()
                    .map(|&dt| {
                        s.spawn(move || diffusion_error(TEMPORAL_RESOLUTION, dt, TEMPORAL_T_FINAL))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| {
                        h.join()
                            .unwrap_or_else(|_| Err(Error::Harness("mms run panicked".into())))
                    })
                    .collect::<Result<Vec<f64>>>()
            })?;
            (
                study(hs, errors),
                Some(study(TEMPORAL_DTS.to_vec(), t_errors)),
            )
        }
    };
    Ok(MmsReport {
        solver,
        resolutions: resolutions.to_vec(),
        spatial,
        temporal,
    })
}

/// `run_mms` followed by the order check.
pub fn run_mms_verification(solver: MmsSolver, resolutions: &[usize]) -> Result<MmsReport> {
    let report = run_mms(solver, resolutions)?;
    report.check()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_exact_power_law() {
        let hs = [0.1, 0.05, 0.025];
        let es: Vec<f64> = hs.iter().map(|h| 3.0 * h * h).collect();
        assert!((observed_order(&hs, &es) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn source_matches_finite_difference_of_exact_solution() {
        // f = c_t - d_x(h_p'(c) c_x), checked by central differences
        let (t, x, d) = (0.3, 0.37, 1e-4);
        let nl = Nonlinearity::new(DIFF_ETA, DIFF_P).unwrap();
        let c = |t: f64, x: f64| diffusion_exact(t, &[x, 0.0]);
        let ct = (c(t + d, x) - c(t - d, x)) / (2.0 * d);
        let hx = |x: f64| (nl.h(c(t, x + d)) - nl.h(c(t, x - d))) / (2.0 * d);
        let hxx = (hx(x + d) - hx(x - d)) / (2.0 * d);
        let f = diffusion_source(t, &[x, 0.5]);
        assert!((f - (ct - hxx)).abs() < 1e-5, "{f} vs {}", ct - hxx);
    }

    #[test]
    fn constant_solution_is_exact() {
        for n in [8, 16, 32] {
            assert!(constant_solution_error(n).unwrap() < 1e-13);
        }
    }

    #[test]
    fn poisson_errors_shrink() {
        let e1 = poisson_micro_error(16).unwrap();
        let e2 = poisson_micro_error(32).unwrap();
        assert!(e2 < e1 / 3.0, "{e1} {e2}");
        let e1 = poisson_macro_error(16).unwrap();
        let e2 = poisson_macro_error(32).unwrap();
        assert!(e2 < e1 / 3.0, "{e1} {e2}");
    }

    #[test]
    fn check_rejects_low_order() {
        let report = MmsReport {
            solver: MmsSolver::PoissonMicro,
            resolutions: vec![8, 16],
            spatial: OrderStudy {
                steps: vec![0.125, 0.0625],
                errors: vec![1.0, 0.5],
                order: 1.0,
            },
            temporal: None,
        };
        assert!(matches!(report.check(), Err(Error::Verification(_))));
    }
}
