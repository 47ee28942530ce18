mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;

use hompnp::cli::{run_subcommand, EXIT_FAILURE, EXIT_USAGE};
use hompnp::geometry::MaskedGrid;
use hompnp::output::sha256_hex;
use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hompnp"))
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn small() -> Value {
    let mut doc = common::canonical();
    doc["geometry"]["m"] = json!(2);
    doc["scaling"]["t_final"] = json!(0.02);
    doc["scaling"]["output_interval"] = json!(0.005);
    doc
}

fn assert_manifest_complete(dir: &Path) {
    let manifest = read_json(&dir.join("manifest.json"));
    let listed: BTreeSet<String> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| {
            let name = f["name"].as_str().unwrap();
            let bytes = std::fs::read(dir.join(name)).unwrap();
            assert_eq!(f["sha256"].as_str().unwrap(), sha256_hex(&bytes));
            assert_eq!(f["bytes"].as_u64().unwrap() as usize, bytes.len());
            name.to_string()
        })
        .collect();
    let on_disk: BTreeSet<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    assert_eq!(listed, on_disk);
}

#[test]
fn zero_final_time_writes_one_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    let mut doc = small();
    doc["scaling"]["t_final"] = json!(0.0);
    let config = common::write_config(tmp.path(), &doc);
    let out = tmp.path().join("run");
    let status = bin()
        .args(["micro", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let snaps: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("snapshot_"))
        .collect();
    assert_eq!(snaps, vec!["snapshot_0.000000.csv".to_string()]);
    let diag = std::fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    assert_eq!(diag.lines().count(), 2);
    assert_manifest_complete(&out);
}

#[test]
fn micro_run_directory_is_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let mut doc = small();
    doc["output"] = json!({ "snapshot_every": 2 });
    let config = common::write_config(tmp.path(), &doc);
    let out = tmp.path().join("run");
    let outcome = run_subcommand("micro", &config, &out).unwrap();
    assert_eq!(outcome.exit_code, 0);
    for name in [
        "snapshot_0.000000.csv",
        "snapshot_0.010000.csv",
        "snapshot_0.020000.csv",
    ] {
        assert!(out.join(name).exists(), "{name}");
    }
    assert!(!out.join("snapshot_0.005000.csv").exists());
    let header = std::fs::read_to_string(out.join("snapshot_0.020000.csv")).unwrap();
    assert!(header.starts_with("cell,x1,x2,c_1,c_2,phi\n"));
    let diag = std::fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    assert_eq!(diag.lines().count(), 6);
    assert_manifest_complete(&out);

    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["subcommand"], "micro");
    assert_eq!(manifest["config"], serde_json::to_value(common::config(&doc).doc).unwrap());
}

#[test]
fn config_hash_is_stable_across_replays() {
    let tmp = tempfile::tempdir().unwrap();
    let config = common::write_config(tmp.path(), &small());
    let a = run_subcommand("macro", &config, &tmp.path().join("a")).unwrap();
    let b = run_subcommand("macro", &config, &tmp.path().join("b")).unwrap();
    assert_eq!(a.manifest.config_hash, b.manifest.config_hash);
    assert!(a.manifest.config_hash.as_ref().unwrap().len() == 64);
    let header = std::fs::read_to_string(tmp.path().join("a/snapshot_0.020000.csv")).unwrap();
    assert!(header.starts_with("cell,x1,x2,c0_1,c0_2,phi0\n"));
}

#[test]
fn auto_balance_shift_is_recorded() {
    // z = 1, c = 1, xi = 0: the outer charge must carry -|Omega_eps| over |dOmega| = 4.
    let tmp = tempfile::tempdir().unwrap();
    let mut doc = small();
    doc["species"] = json!([{ "diffusivity": 1.0, "charge": 1, "initial": "1" }]);
    doc["surface_charge"] = json!({ "xi1": "0", "xi2": "0", "auto_balance": true });
    doc["scaling"]["t_final"] = json!(0.0);
    let config = common::write_config(tmp.path(), &doc);
    let outcome = run_subcommand("micro", &config, &tmp.path().join("run")).unwrap();
    assert_eq!(outcome.exit_code, 0);

    let cfg = common::config(&doc);
    let grid = MaskedGrid::build(&cfg.cell, 2, 8).unwrap();
    let fluid_volume = grid.fluid_count() as f64 / 256.0;
    let shift = outcome.manifest.balance_shift.unwrap();
    assert!((shift + fluid_volume / 4.0).abs() < 1e-14, "{shift}");
}

#[test]
fn cell_report_and_correctors() {
    let tmp = tempfile::tempdir().unwrap();
    let config = common::write_config(tmp.path(), &small());
    let out = tmp.path().join("cell");
    let status = bin()
        .args(["cell", "--dump-correctors", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let report = read_json(&out.join("report.json"));
    let cfg = common::config(&small());
    let fluid = cfg.cell.fluid_mask.iter().filter(|&&f| f).count();
    assert_eq!(report["porosity"].as_f64().unwrap(), fluid as f64 / 64.0);
    let a = &report["a_hom"];
    assert!(a[0][0].as_f64().unwrap() < 1.0 && a[0][0].as_f64().unwrap() > 0.0);
    for k in 1..=2 {
        let text = std::fs::read_to_string(out.join(format!("corrector_{k}.csv"))).unwrap();
        assert!(text.starts_with("cell,y1,y2,value\n"));
        assert_eq!(text.lines().count(), fluid + 1);
    }
    assert_manifest_complete(&out);
}

#[test]
fn alpha_above_beta_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut doc = small();
    doc["scaling"]["alpha"] = json!(1.0);
    let config = common::write_config(tmp.path(), &doc);
    let output = bin()
        .args(["micro", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(tmp.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&output.stderr).contains("alpha <= beta"));
    assert!(!tmp.path().join("run").exists());
}

#[test]
fn bad_invocations_are_usage_errors() {
    let status = bin().args(["relax", "--config", "x.json"]).status().unwrap();
    assert_eq!(status.code(), Some(EXIT_USAGE));
    let status = bin()
        .args(["micro", "--config", "/nonexistent/config.json"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(EXIT_USAGE));
}

#[test]
fn failed_run_flushes_partial_output() {
    let tmp = tempfile::tempdir().unwrap();
    let mut doc = small();
    doc["solver"] = json!({ "transport_tol": 1e-17 });
    let config = common::write_config(tmp.path(), &doc);
    let out = tmp.path().join("run");
    let outcome = run_subcommand("micro", &config, &out).unwrap();
    assert_eq!(outcome.exit_code, EXIT_FAILURE);
    assert_eq!(outcome.manifest.status, "failed");
    assert!(outcome.manifest.message.is_some());
    let diag = std::fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    assert!(diag.lines().count() >= 2);
    assert_manifest_complete(&out);
}

#[test]
fn eta_sweep_and_mms_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let mut doc = small();
    doc["eta_sweep"] = json!({ "etas": [1.0, 0.5] });
    doc["mms"] = json!({ "resolutions": [16, 32] });
    let config = common::write_config(tmp.path(), &doc);

    let out = tmp.path().join("eta");
    let outcome = run_subcommand("eta-sweep", &config, &out).unwrap();
    assert_eq!(outcome.exit_code, 0);
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["distances"].as_array().unwrap().len(), 1);

    let out = tmp.path().join("mms");
    let status = bin()
        .args(["mms", "--solver", "poisson-micro", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let report = read_json(&out.join("report.json"));
    let order = report[0]["spatial"]["order"].as_f64().unwrap();
    assert!((1.8..=2.2).contains(&order), "{order}");
    assert_manifest_complete(&out);
}
