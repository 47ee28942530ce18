#![allow(dead_code)]

use std::path::{Path, PathBuf};

use serde_json::{json, Value};

/// The reference setup: 2D, disk of radius 0.25, two species of opposite
/// charge, `eta = 1`, `p = 4`, `alpha = beta = 0`, `T = 0.1`.
pub fn canonical() -> Value {
    json!({
        "geometry": {
            "dimension": 2,
            "inclusion": { "kind": "disk", "params": { "center": [0.5, 0.5], "radius": 0.25 } },
            "m": 8,
            "r": 8
        },
        "scaling": {
            "alpha": 0.0,
            "beta": 0.0,
            "eta": 1.0,
            "p": 4.0,
            "t_final": 0.1,
            "dt": 0.001,
            "output_interval": 0.01
        },
        "species": [
            { "diffusivity": 1.0, "charge": 1, "initial": "1 + 0.5 * cos(pi * x1)" },
            { "diffusivity": 1.0, "charge": -1, "initial": "1 + 0.5 * cos(pi * x2)" }
        ],
        "surface_charge": { "xi1": "0.5 * cos(2 * pi * y1)", "xi2": "0", "auto_balance": true }
    })
}

pub fn config(doc: &Value) -> hompnp::config::RunConfig {
    hompnp::config::parse_and_validate(&doc.to_string()).expect("valid config")
}

pub fn write_config(dir: &Path, doc: &Value) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(doc).unwrap()).unwrap();
    path
}
