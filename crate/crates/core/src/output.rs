//! Run directories: CSV time series and snapshots, JSON reports and the
//! manifest listing every written file with its SHA-256.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ConfigDoc;
use crate::error::Result;
use crate::geometry::MaskedGrid;
use crate::transport::{Sample, State};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the canonical serialization of a config document.
pub fn config_hash(doc: &ConfigDoc) -> String {
    sha256_hex(
        serde_json::to_string(doc)
            .expect("config serializes")
            .as_bytes(),
    )
}

/// Shortest round-trip text of `x`, in exponent form outside `[1e-4, 1e16)`.
pub fn fmt_float(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-4..1e16).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn diagnostics_csv(samples: &[Sample]) -> String {
    let species = samples.first().map_or(0, |s| s.mass.len());
    let mut out = String::from("t");
    for i in 1..=species {
        write!(out, ",mass_{i}").unwrap();
    }
    out.push_str(",energy");
    for i in 1..=species {
        write!(out, ",min_{i},max_{i}").unwrap();
    }
    out.push_str(",mean_phi,compat_residual,dt,grad_phi_norm");
    for i in 1..=species {
        write!(out, ",grad_c_norm_{i}").unwrap();
    }
    out.push('\n');
    for s in samples {
        write!(out, "{}", fmt_float(s.t)).unwrap();
        for m in &s.mass {
            write!(out, ",{}", fmt_float(*m)).unwrap();
        }
        write!(out, ",{}", fmt_float(s.energy)).unwrap();
        for (lo, hi) in s.min.iter().zip(&s.max) {
            write!(out, ",{},{}", fmt_float(*lo), fmt_float(*hi)).unwrap();
        }
        write!(
            out,
            ",{},{},{},{}",
            fmt_float(s.mean_phi),
            fmt_float(s.compat_residual),
            fmt_float(s.dt),
            fmt_float(s.grad_phi_norm)
        )
        .unwrap();
        for g in &s.grad_c_norm {
            write!(out, ",{}", fmt_float(*g)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Snapshot rows `cell, x1..xn, c_1..c_P, phi`; `prefix` names the fields
/// (`c`/`phi` for the micro model, `c0`/`phi0` for the homogenized one).
pub fn snapshot_csv(grid: &MaskedGrid, state: &State, conc_name: &str, phi_name: &str) -> String {
    let mut out = String::from("cell");
    for a in 1..=grid.dim {
        write!(out, ",x{a}").unwrap();
    }
    for i in 1..=state.conc.len() {
        write!(out, ",{conc_name}_{i}").unwrap();
    }
    writeln!(out, ",{phi_name}").unwrap();
    for f in 0..grid.fluid_count() {
        write!(out, "{}", grid.cell_of_fluid[f]).unwrap();
        let x = grid.center(f);
        for v in &x[..grid.dim] {
            write!(out, ",{}", fmt_float(*v)).unwrap();
        }
        for c in &state.conc {
            write!(out, ",{}", fmt_float(c[f])).unwrap();
        }
        writeln!(out, ",{}", fmt_float(state.phi[f])).unwrap();
    }
    out
}

pub fn snapshot_name(t: f64) -> String {
    format!("snapshot_{t:.6}.csv")
}

#[derive(Clone, Debug, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config_hash: Option<String>,
    pub config: Option<ConfigDoc>,
    /// Constant added to the outer surface charge to balance the data.
    pub balance_shift: Option<f64>,
    pub status: String,
    pub message: Option<String>,
    pub files: Vec<FileEntry>,
}

/// Output directory that records what it writes.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(RunDir {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<()> {
        fs::write(self.root.join(name), contents)?;
        self.files.retain(|f| f.name != name);
        self.files.push(FileEntry {
            name: name.to_string(),
            bytes: contents.len(),
            sha256: sha256_hex(contents),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    /// Writes `manifest.json` (not listed in itself).
    pub fn finish(self, mut manifest: RunManifest) -> Result<RunManifest> {
        manifest.files = self.files;
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.root.join("manifest.json"), text)?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.0, 1.0, -0.1, 1.5e-18, 3.0e20, 0.1 + 0.2, -7.25e-5] {
            let text = fmt_float(x);
            assert_eq!(text.parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_float(1.5e-18), "1.5e-18");
        assert_eq!(fmt_float(0.01), "0.01");
    }

    #[test]
    fn snapshot_names_are_fixed_width() {
        assert_eq!(snapshot_name(0.1), "snapshot_0.100000.csv");
        assert_eq!(snapshot_name(0.0), "snapshot_0.000000.csv");
    }

    #[test]
    fn run_dir_lists_written_files() {
        let tmp = tempfile::tempdir().unwrap();
        let mut dir = RunDir::create(tmp.path()).unwrap();
        dir.write("a.csv", b"x\n1\n").unwrap();
        dir.write("a.csv", b"x\n2\n").unwrap();
        dir.write_json("report.json", &vec![1.0, 2.5]).unwrap();
        let m = dir
            .finish(RunManifest {
                tool: "t".into(),
                version: "0".into(),
                subcommand: "cell".into(),
                config_hash: None,
                config: None,
                balance_shift: None,
                status: "ok".into(),
                message: None,
                files: Vec::new(),
            })
            .unwrap();
        assert_eq!(m.files.len(), 2);
        for f in &m.files {
            let bytes = fs::read(tmp.path().join(&f.name)).unwrap();
            assert_eq!(sha256_hex(&bytes), f.sha256);
        }
        assert!(tmp.path().join("manifest.json").exists());
    }

    #[test]
    fn csv_header_and_rows() {
        let grid = MaskedGrid::unperforated(2, 4).unwrap();
        let state = State {
            t: 0.0,
            conc: vec![vec![1.0; 16]],
            phi: vec![0.5; 16],
        };
        let text = snapshot_csv(&grid, &state, "c", "phi");
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("cell,x1,x2,c_1,phi"));
        assert_eq!(lines.next(), Some("0,0.125,0.125,1,0.5"));
        assert_eq!(text.lines().count(), 17);
    }
}
