//! Structural diagnostics (energy, masses, norms, compatibility) and the
//! micro-versus-homogenized convergence harness.

use std::time::Instant;

use serde::Serialize;

use crate::config::{MacroMode, RunConfig, ScalingSpec};
use crate::error::{Error, Result};
use crate::geometry::MaskedGrid;
use crate::homogenized::{reconstruct_corrector_potential, restrict_to_micro, MacroProblem};
use crate::micro::MicroProblem;
use crate::nonlinearity::Nonlinearity;
use crate::transport::{RunOutput, Sample, State};

pub use crate::nonlinearity::psi_eval;

/// `(1/2) eps^(alpha+beta) |grad phi|^2 + sum_i Psi(c_i)` summed over the
/// fluid cells, with face differences for the gradient.
pub fn energy_micro(state: &State, grid: &MaskedGrid, scaling: &ScalingSpec) -> Result<f64> {
    let nl = Nonlinearity::new(scaling.eta, scaling.p)?;
    let h = grid.spacing;
    let weight = scaling.epsilon.powf(scaling.alpha + scaling.beta);
    let share = h.powi(grid.dim as i32 - 2);
    let field: f64 = grid
        .interior_faces
        .iter()
        .map(|f| {
            let d = state.phi[f.hi] - state.phi[f.lo];
            d * d * share
        })
        .sum();
    let vol = grid.cell_volume();
    let entropy: f64 = state
        .conc
        .iter()
        .map(|c| c.iter().map(|&v| nl.psi(v)).sum::<f64>() * vol)
        .sum();
    Ok(0.5 * weight * field + entropy)
}

/// Time series of a run plus the checks asserted on it.
#[derive(Clone, Debug)]
pub struct DiagnosticsRecord {
    pub samples: Vec<Sample>,
    pub energy_trace: Vec<(f64, f64)>,
}

impl DiagnosticsRecord {
    pub fn from_run(out: &RunOutput) -> Self {
        DiagnosticsRecord {
            samples: out.samples.clone(),
            energy_trace: out.energy_trace.clone(),
        }
    }

    pub fn timestamps_increasing(&self) -> bool {
        self.samples.windows(2).all(|w| w[0].t < w[1].t)
    }

    /// Largest relative mass change of each species against `t = 0`.
    pub fn mass_drift(&self) -> Vec<f64> {
        let first = &self.samples[0].mass;
        (0..first.len())
            .map(|i| {
                self.samples
                    .iter()
                    .map(|s| (s.mass[i] - first[i]).abs() / first[i].abs().max(f64::MIN_POSITIVE))
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    pub fn max_compat_residual(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.compat_residual.abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_mean_phi(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.mean_phi.abs())
            .fold(0.0, f64::max)
    }

    /// Largest per-step energy increase relative to `V(0)`.
    pub fn max_energy_increase(&self) -> f64 {
        let v0 = self.energy_trace[0].1;
        self.energy_trace
            .windows(2)
            .map(|w| (w[1].1 - w[0].1) / v0)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_concentration(&self) -> f64 {
        self.samples
            .iter()
            .flat_map(|s| s.min.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest ratio `max_t max_x c_i / max_x c_i(0)` over species.
    pub fn max_growth(&self) -> f64 {
        let first = &self.samples[0].max;
        (0..first.len())
            .map(|i| {
                self.samples
                    .iter()
                    .map(|s| s.max[i])
                    .fold(f64::NEG_INFINITY, f64::max)
                    / first[i]
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest `eta/(p-1) |c_i|_p^p / V(0)` over output times and species.
    pub fn lp_bound_ratio(&self, nl: &Nonlinearity) -> f64 {
        let v0 = self.samples[0].energy;
        let k = nl.eta / (nl.p - 1.0);
        self.samples
            .iter()
            .flat_map(|s| s.lp_power.iter().map(move |&q| k * q / v0))
            .fold(0.0, f64::max)
    }

    pub fn max_energy(&self) -> f64 {
        self.energy_trace
            .iter()
            .map(|e| e.1)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Discrete `L^2` distance over fluid cells normalized by `|Omega_eps|^(1/2)`.
pub fn fluid_l2(grid: &MaskedGrid, a: &[f64], b: &[f64]) -> f64 {
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (sum / grid.fluid_count() as f64).sqrt()
}

fn minus_mean(grid: &MaskedGrid, v: &[f64]) -> Vec<f64> {
    let mean = grid.mean(v);
    v.iter().map(|x| x - mean).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceEntry {
    pub m: usize,
    pub epsilon: f64,
    /// Per species, micro versus homogenized concentration at `t_final`.
    pub conc_errors: Vec<f64>,
    /// Scaled micro potential `eps^alpha phi` against the homogenized one.
    pub phi_error: f64,
    pub phi_error_corrected: f64,
    pub initial_energy: f64,
    pub max_energy: f64,
    /// `max_t max_x c_i` per species.
    pub max_conc: Vec<f64>,
    pub mass_drift: Vec<f64>,
    pub steps: usize,
    pub balance_shift: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub data_hash: String,
    pub mode: MacroMode,
    pub t_final: f64,
    pub r: usize,
    pub macro_resolution: usize,
    pub porosity: f64,
    pub a_hom: Vec<Vec<f64>>,
    pub epsilons: Vec<f64>,
    pub entries: Vec<ConvergenceEntry>,
    /// Wall-clock seconds per micro run; excluded from the JSON report.
    #[serde(skip)]
    pub runtimes: Vec<f64>,
    /// Final homogenized concentrations on the macro grid.
    #[serde(skip)]
    pub macro_final: Vec<Vec<f64>>,
}

impl ConvergenceReport {
    /// Whether every species' error decreases strictly along the sweep.
    pub fn concentration_errors_decrease(&self) -> bool {
        let species = self.entries.first().map_or(0, |e| e.conc_errors.len());
        (0..species).all(|i| {
            self.entries
                .windows(2)
                .all(|w| w[1].conc_errors[i] < w[0].conc_errors[i])
        })
    }
}

/// Runs the micro model for each `m` in `m_list` (concurrently) and the
/// homogenized model once, and compares them at `t_final`.
pub fn run_convergence_study(
    config: &RunConfig,
    m_list: &[usize],
    macro_resolution: usize,
) -> Result<ConvergenceReport> {
    if m_list.is_empty() {
        return Err(Error::Harness("empty eps list".into()));
    }
    if m_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Harness(
            "eps list must be strictly decreasing".into(),
        ));
    }
    let hash = config.data_hash();
    let mut configs = Vec::with_capacity(m_list.len());
    for &m in m_list {
        let mut doc = config.doc.clone();
        doc.geometry.m = m;
        let c = crate::config::validate(doc)?;
        if c.data_hash() != hash {
            return Err(Error::Harness(format!("data hash mismatch for m = {m}")));
        }
        configs.push(c);
    }

    let macro_problem = MacroProblem::new(config, macro_resolution)?;
    type MicroRun = Result<(MicroProblem, RunOutput, f64)>;
    let (micro_runs, macro_run): (Vec<MicroRun>, Result<RunOutput>) = std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .iter()
            .map(|c| {
                s.spawn(move || -> MicroRun {
                    let start = Instant::now();
                    let p = MicroProblem::new(c, c.m())?;
                    let out = p.run(c.doc.solver.explicit_time, false)?.into_result()?;
                    Ok((p, out, start.elapsed().as_secs_f64()))
                })
            })
            .collect();
        let macro_run = macro_problem
            .run(
                config.doc.solver.explicit_time,
                config.doc.solver.poisson_every_step,
                false,
            )
            .and_then(RunOutput::into_result);
        let micro_runs = handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Harness("micro run panicked".into())))
            })
            .collect();
        (micro_runs, macro_run)
    });
    let macro_out = macro_run?;
    let mgrid = &macro_problem.grid;
    let mstate = &macro_out.final_state;
    let alpha = config.doc.scaling.alpha;

    let mut entries = Vec::with_capacity(m_list.len());
    let mut runtimes = Vec::with_capacity(m_list.len());
    for run in micro_runs {
        let (p, out, seconds) = run?;
        let grid = &p.grid;
        let fs = &out.final_state;
        let conc_errors = fs
            .conc
            .iter()
            .zip(&mstate.conc)
            .map(|(c, c0)| Ok(fluid_l2(grid, c, &restrict_to_micro(mgrid, c0, grid)?)))
            .collect::<Result<Vec<f64>>>()?;
        let scaled: Vec<f64> = fs.phi.iter().map(|v| p.epsilon().powf(alpha) * v).collect();
        let scaled = minus_mean(grid, &scaled);
        let plain = minus_mean(grid, &restrict_to_micro(mgrid, &mstate.phi, grid)?);
        let corrected = minus_mean(
            grid,
            &reconstruct_corrector_potential(mgrid, &mstate.phi, &macro_problem.effective, grid)?,
        );
        let record = DiagnosticsRecord::from_run(&out);
        entries.push(ConvergenceEntry {
            m: grid.m,
            epsilon: p.epsilon(),
            conc_errors,
            phi_error: fluid_l2(grid, &scaled, &plain),
            phi_error_corrected: fluid_l2(grid, &scaled, &corrected),
            initial_energy: record.energy_trace[0].1,
            max_energy: record.max_energy(),
            max_conc: (0..p.species.len())
                .map(|i| {
                    record
                        .samples
                        .iter()
                        .map(|s| s.max[i])
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect(),
            mass_drift: record.mass_drift(),
            steps: out.steps,
            balance_shift: p.balance_shift,
        });
        runtimes.push(seconds);
    }
    for e in &entries {
        let finite = e.conc_errors.iter().all(|v| v.is_finite())
            && e.phi_error.is_finite()
            && e.phi_error_corrected.is_finite();
        if !finite {
            return Err(Error::Harness(format!("non-finite error at m = {}", e.m)));
        }
    }
    Ok(ConvergenceReport {
        data_hash: hash,
        mode: macro_problem.mode,
        t_final: config.doc.scaling.t_final,
        r: config.r(),
        macro_resolution,
        porosity: macro_problem.effective.porosity,
        a_hom: macro_problem.tensor.rows(),
        epsilons: entries.iter().map(|e| e.epsilon).collect(),
        entries,
        runtimes,
        macro_final: macro_out.final_state.conc,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EtaSweepEntry {
    pub eta: f64,
    pub mass: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub final_energy: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EtaSweepReport {
    pub etas: Vec<f64>,
    pub entries: Vec<EtaSweepEntry>,
    /// Discrete `L^2` distance between successive final concentrations.
    pub distances: Vec<f64>,
    /// Logged only: whether the distances decrease.
    pub distances_decreasing: bool,
    #[serde(skip)]
    pub final_states: Vec<State>,
}

/// Runs the coupled homogenized model once per `eta` and reports distances
/// between successive final states.
pub fn run_eta_sweep(config: &RunConfig, etas: &[f64]) -> Result<EtaSweepReport> {
    if config.mode() != MacroMode::Coupled {
        return Err(Error::Config(
            "the eta sweep runs the coupled homogenized model".into(),
        ));
    }
    if etas.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::Config("eta values must be positive".into()));
    }
    if etas.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Config("eta values must be non-increasing".into()));
    }
    let base = MacroProblem::new(config, config.macro_resolution())?;
    let mut entries = Vec::with_capacity(etas.len());
    let mut final_states = Vec::with_capacity(etas.len());
    for &eta in etas {
        let mut doc = config.doc.clone();
        doc.scaling.eta = eta;
        let c = crate::config::validate(doc)?;
        let p = MacroProblem::with_tensor(&c, config.macro_resolution(), base.effective.clone())?;
        let out = p.run(false, false, false)?.into_result()?;
        let last = out.samples.last().expect("at least one sample");
        entries.push(EtaSweepEntry {
            eta,
            mass: last.mass.clone(),
            min: last.min.clone(),
            max: last.max.clone(),
            final_energy: last.energy,
        });
        final_states.push(out.final_state);
    }
    let grid = &base.grid;
    let distances: Vec<f64> = final_states
        .windows(2)
        .map(|w| {
            let a = w[0].conc.concat();
            let b = w[1].conc.concat();
            let sum: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
            (sum / grid.fluid_count() as f64).sqrt()
        })
        .collect();
    Ok(EtaSweepReport {
        etas: etas.to_vec(),
        entries,
        distances_decreasing: distances.windows(2).all(|w| w[1] < w[0]),
        distances,
        final_states,
    })
}
