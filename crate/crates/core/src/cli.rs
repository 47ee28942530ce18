//! Command-line front end: argument parsing, run directories and dispatch.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::cell_problem::{compute_effective_tensor, CellReport};
use crate::config::{parse_and_validate, ConfigDoc, RunConfig};
use crate::diagnostics::{run_convergence_study, run_eta_sweep, DiagnosticsRecord};
use crate::error::{Error, Result};
use crate::geometry::MaskedGrid;
use crate::homogenized::MacroProblem;
use crate::micro::MicroProblem;
use crate::mms::{run_mms, MmsSolver};
use crate::output::{
    config_hash, diagnostics_csv, fmt_float, snapshot_csv, snapshot_name, RunDir, RunManifest,
};
use crate::transport::{RunOutput, NEGATIVITY_TOL};

/// Relative mass drift allowed by the run checks.
pub const MASS_DRIFT_TOL: f64 = 1e-9;

pub const DEFAULT_M_LIST: [usize; 3] = [4, 8, 16];
pub const DEFAULT_MMS_RESOLUTIONS: [usize; 3] = [32, 64, 128];

/// Exit code when a run or a check failed (the manifest is still written).
pub const EXIT_FAILURE: i32 = 1;
/// Exit code when no run was attempted (bad arguments, invalid config).
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "hompnp",
    version,
    about = "Drift-diffusion in perforated domains and its homogenized limit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Run directory; defaults to the config's output directory, then
    /// `run_<subcommand>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Solve the potential after every step in decoupled mode too.
    #[arg(long)]
    pub poisson_every_step: bool,
    /// Fully explicit transport (cross-validation mode).
    #[arg(long)]
    pub explicit_time: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MmsTarget {
    PoissonMicro,
    PoissonMacro,
    Diffusion,
    All,
}

#[derive(Clone, Debug, Subcommand)]
pub enum Command {
    /// Periodic cell problems and the effective tensor.
    Cell {
        #[command(flatten)]
        common: CommonArgs,
        /// Also write each corrector as CSV.
        #[arg(long)]
        dump_correctors: bool,
    },
    /// Micro model on the perforated domain.
    Micro {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Homogenized model.
    Macro {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Micro runs over a list of periods against one homogenized run.
    Converge {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Manufactured-solution order checks.
    Mms {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum, default_value = "all")]
        solver: MmsTarget,
    },
    /// Homogenized runs over decreasing `eta`.
    EtaSweep {
        #[command(flatten)]
        common: CommonArgs,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Cell { .. } => "cell",
            Command::Micro { .. } => "micro",
            Command::Macro { .. } => "macro",
            Command::Converge { .. } => "converge",
            Command::Mms { .. } => "mms",
            Command::EtaSweep { .. } => "eta-sweep",
        }
    }

    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::Cell { common, .. }
            | Command::Micro { common }
            | Command::Macro { common }
            | Command::Converge { common }
            | Command::Mms { common, .. }
            | Command::EtaSweep { common } => common,
        }
    }
}

/// Result of a dispatched command.
#[derive(Debug)]
pub struct Outcome {
    pub exit_code: i32,
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
}

/// Reads and validates the config, applying the command-line flags.
pub fn load_config(common: &CommonArgs) -> Result<RunConfig> {
    let text = std::fs::read_to_string(&common.config)?;
    let mut doc: ConfigDoc =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("schema violation: {e}")))?;
    doc.solver.poisson_every_step |= common.poisson_every_step;
    doc.solver.explicit_time |= common.explicit_time;
    parse_and_validate(&serde_json::to_string(&doc)?)
}

fn out_dir(command: &Command, config: &RunConfig) -> PathBuf {
    let common = command.common();
    common
        .out
        .clone()
        .or_else(|| config.doc.output.directory.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(format!("run_{}", command.name())))
}

/// Runs `command` and writes its run directory. `Err` means nothing was run.
pub fn dispatch(command: &Command) -> Result<Outcome> {
    let config = load_config(command.common())?;
    let root = out_dir(command, &config);
    let mut dir = RunDir::create(&root)?;
    let result = match command {
        Command::Cell {
            dump_correctors, ..
        } => run_cell(&config, &mut dir, *dump_correctors),
        Command::Micro { .. } => run_micro(&config, &mut dir),
        Command::Macro { .. } => run_macro(&config, &mut dir),
        Command::Converge { .. } => run_converge(&config, &mut dir),
        Command::Mms { solver, .. } => run_mms_cmd(&config, &mut dir, *solver),
        Command::EtaSweep { .. } => run_eta(&config, &mut dir),
    };
    let (status, message, exit_code) = match result {
        Ok(failed) if failed.is_empty() => ("ok", None, 0),
        Ok(failed) => ("failed", Some(failed.join("; ")), EXIT_FAILURE),
        Err(e) => ("failed", Some(e.to_string()), EXIT_FAILURE),
    };
    let manifest = dir.finish(RunManifest {
        tool: "hompnp".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: command.name().into(),
        config_hash: Some(config_hash(&config.doc)),
        config: Some(config.doc.clone()),
        balance_shift: Some(config.balance_shift),
        status: status.into(),
        message,
        files: Vec::new(),
    })?;
    Ok(Outcome {
        exit_code,
        out_dir: root,
        manifest,
    })
}

/// Parses `args` (program name first), dispatches and returns the exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match dispatch(&cli.command) {
        Ok(outcome) => {
            if let Some(msg) = &outcome.manifest.message {
                eprintln!("hompnp {}: {msg}", cli.command.name());
            }
            eprintln!(
                "hompnp {}: {} ({})",
                cli.command.name(),
                outcome.manifest.status,
                outcome.out_dir.display()
            );
            outcome.exit_code
        }
        Err(e) => {
            eprintln!("hompnp {}: {e}", cli.command.name());
            EXIT_USAGE
        }
    }
}

/// Structural checks shared by the micro and macro runs; returns failures.
fn run_checks(out: &RunOutput) -> (serde_json::Value, Vec<String>) {
    let rec = DiagnosticsRecord::from_run(out);
    let drift = rec.mass_drift();
    let worst_drift = drift.iter().cloned().fold(0.0, f64::max);
    let min_c = rec.min_concentration();
    let mut failed = Vec::new();
    if !rec.timestamps_increasing() {
        failed.push("output times are not increasing".to_string());
    }
    if !(worst_drift <= MASS_DRIFT_TOL) {
        failed.push(format!(
            "relative mass drift {worst_drift:e} exceeds {MASS_DRIFT_TOL:e}"
        ));
    }
    if !(min_c >= NEGATIVITY_TOL) {
        failed.push(format!(
            "minimum concentration {min_c:e} below {NEGATIVITY_TOL:e}"
        ));
    }
    if let Some(msg) = &out.failure {
        failed.push(format!("run stopped at t = {}: {msg}", out.final_state.t));
    }
    let checks = json!({
        "mass_drift": drift,
        "max_compat_residual": rec.max_compat_residual(),
        "max_abs_mean_phi": rec.max_abs_mean_phi(),
        "min_concentration": min_c,
        "max_growth": rec.max_growth(),
        "max_energy_increase": rec.max_energy_increase(),
        "passed": failed.is_empty(),
    });
    (checks, failed)
}

fn write_time_series(
    dir: &mut RunDir,
    grid: &MaskedGrid,
    out: &RunOutput,
    every: usize,
    names: (&str, &str),
) -> Result<()> {
    dir.write("diagnostics.csv", diagnostics_csv(&out.samples).as_bytes())?;
    if every > 0 {
        for (k, snap) in out.snapshots.iter().enumerate() {
            if k % every == 0 {
                let text = snapshot_csv(grid, snap, names.0, names.1);
                dir.write(&snapshot_name(snap.t), text.as_bytes())?;
            }
        }
    }
    let last = &out.final_state;
    let text = snapshot_csv(grid, last, names.0, names.1);
    dir.write(&snapshot_name(last.t), text.as_bytes())
}

#[derive(Serialize)]
struct RunSummary {
    t_final: f64,
    steps: usize,
    rejections: usize,
    final_mass: Vec<f64>,
    final_energy: f64,
}

fn summary(out: &RunOutput) -> RunSummary {
    let last = out.samples.last();
    RunSummary {
        t_final: out.final_state.t,
        steps: out.steps,
        rejections: out.rejections,
        final_mass: last.map(|s| s.mass.clone()).unwrap_or_default(),
        final_energy: last.map_or(f64::NAN, |s| s.energy),
    }
}

fn run_cell(config: &RunConfig, dir: &mut RunDir, dump: bool) -> Result<Vec<String>> {
    let t = compute_effective_tensor(&config.cell, config.doc.solver.cell_tol)?;
    dir.write_json("report.json", &CellReport::new(&config.cell, &t))?;
    if dump {
        let cell = &config.cell;
        let h = cell.spacing();
        let lattice = cell.lattice();
        for c in &t.correctors {
            let mut text = String::from("cell");
            for a in 1..=cell.dim {
                text.push_str(&format!(",y{a}"));
            }
            text.push_str(",value\n");
            for (idx, &fluid) in cell.fluid_mask.iter().enumerate() {
                if !fluid {
                    continue;
                }
                text.push_str(&idx.to_string());
                let xy = lattice.coords(idx);
                for &i in &xy[..cell.dim] {
                    text.push_str(&format!(",{}", fmt_float((i as f64 + 0.5) * h)));
                }
                text.push_str(&format!(",{}\n", fmt_float(c.values[idx])));
            }
            dir.write(
                &format!("corrector_{}.csv", c.direction + 1),
                text.as_bytes(),
            )?;
        }
    }
    let mut failed = Vec::new();
    if !(t.min_eigenvalue() > 0.0) {
        failed.push(format!(
            "effective tensor is not positive definite (min eigenvalue {:e})",
            t.min_eigenvalue()
        ));
    }
    Ok(failed)
}

fn run_micro(config: &RunConfig, dir: &mut RunDir) -> Result<Vec<String>> {
    let problem = MicroProblem::new(config, config.m())?;
    let every = config.doc.output.snapshot_every;
    let out = problem.run(config.doc.solver.explicit_time, every > 0)?;
    write_time_series(dir, &problem.grid, &out, every, ("c", "phi"))?;
    let (checks, failed) = run_checks(&out);
    dir.write_json(
        "report.json",
        &json!({
            "model": "micro",
            "epsilon": problem.epsilon(),
            "fluid_cells": problem.grid.fluid_count(),
            "balance_shift": problem.balance_shift,
            "raw_residual": problem.raw_residual,
            "run": summary(&out),
            "checks": checks,
        }),
    )?;
    Ok(failed)
}

fn run_macro(config: &RunConfig, dir: &mut RunDir) -> Result<Vec<String>> {
    let problem = MacroProblem::new(config, config.macro_resolution())?;
    let every = config.doc.output.snapshot_every;
    let out = problem.run(
        config.doc.solver.explicit_time,
        config.doc.solver.poisson_every_step,
        every > 0,
    )?;
    write_time_series(dir, &problem.grid, &out, every, ("c0", "phi0"))?;
    let (checks, failed) = run_checks(&out);
    dir.write_json(
        "report.json",
        &json!({
            "model": "macro",
            "mode": problem.mode,
            "resolution": problem.grid.cells_per_side(),
            "porosity": problem.effective.porosity,
            "a_hom": problem.effective.a_hom.rows(),
            "tensor": problem.tensor.rows(),
            "balance_shift": problem.balance_shift,
            "raw_residual": problem.raw_residual,
            "run": summary(&out),
            "checks": checks,
        }),
    )?;
    Ok(failed)
}

fn run_converge(config: &RunConfig, dir: &mut RunDir) -> Result<Vec<String>> {
    let section = config.doc.convergence.as_ref();
    let m_list = section.map_or(DEFAULT_M_LIST.to_vec(), |s| s.m_list.clone());
    let macro_res = section
        .and_then(|s| s.macro_resolution)
        .or(config.doc.geometry.macro_resolution)
        .unwrap_or(m_list.iter().max().copied().unwrap_or(1) * config.r());
    let report = run_convergence_study(config, &m_list, macro_res)?;
    let species = report.entries.first().map_or(0, |e| e.conc_errors.len());
    let mut csv = String::from("m,epsilon");
    for i in 1..=species {
        csv.push_str(&format!(",conc_error_{i}"));
    }
    csv.push_str(",phi_error,phi_error_corrected\n");
    for e in &report.entries {
        csv.push_str(&format!("{},{}", e.m, fmt_float(e.epsilon)));
        for v in &e.conc_errors {
            csv.push_str(&format!(",{}", fmt_float(*v)));
        }
        csv.push_str(&format!(
            ",{},{}\n",
            fmt_float(e.phi_error),
            fmt_float(e.phi_error_corrected)
        ));
    }
    dir.write("errors.csv", csv.as_bytes())?;
    let decreasing = report.concentration_errors_decrease();
    dir.write_json(
        "report.json",
        &json!({ "study": report, "concentration_errors_decrease": decreasing }),
    )?;
    let mut failed = Vec::new();
    if !decreasing {
        failed.push("concentration errors do not decrease along the period list".to_string());
    }
    Ok(failed)
}

fn run_mms_cmd(config: &RunConfig, dir: &mut RunDir, target: MmsTarget) -> Result<Vec<String>> {
    let resolutions = config
        .doc
        .mms
        .as_ref()
        .map_or(DEFAULT_MMS_RESOLUTIONS.to_vec(), |s| s.resolutions.clone());
    let solvers: Vec<MmsSolver> = match target {
        MmsTarget::PoissonMicro => vec![MmsSolver::PoissonMicro],
        MmsTarget::PoissonMacro => vec![MmsSolver::PoissonMacro],
        MmsTarget::Diffusion => vec![MmsSolver::Diffusion],
        MmsTarget::All => vec![
            MmsSolver::PoissonMicro,
            MmsSolver::PoissonMacro,
            MmsSolver::Diffusion,
        ],
    };
    let mut reports = Vec::new();
    let mut failed = Vec::new();
    for s in solvers {
        let report = run_mms(s, &resolutions)?;
        if let Err(e) = report.check() {
            failed.push(e.to_string());
        }
        reports.push(report);
    }
    dir.write_json("report.json", &reports)?;
    Ok(failed)
}

fn run_eta(config: &RunConfig, dir: &mut RunDir) -> Result<Vec<String>> {
    let etas = config
        .doc
        .eta_sweep
        .as_ref()
        .map(|s| s.etas.clone())
        .ok_or_else(|| Error::Config("eta-sweep needs an `eta_sweep.etas` list".into()))?;
    let report = run_eta_sweep(config, &etas)?;
    dir.write_json("report.json", &report)?;
    Ok(Vec::new())
}

/// Convenience for tests and embedders: dispatch with a config path.
pub fn run_subcommand(name: &str, config: &Path, out: &Path) -> Result<Outcome> {
    let args = [
        "hompnp",
        name,
        "--config",
        config
            .to_str()
            .ok_or_else(|| Error::Config("non-UTF-8 path".into()))?,
        "--out",
        out.to_str()
            .ok_or_else(|| Error::Config("non-UTF-8 path".into()))?,
    ];
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    dispatch(&cli.command)
}
