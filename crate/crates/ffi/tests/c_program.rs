//! Builds a small C program against the generated header and static library.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "hompnp.h"

static const char *CONFIG =
    "{\"geometry\": {\"inclusion\": {\"kind\": \"disk\", \"params\": "
    "{\"center\": [0.5, 0.5], \"radius\": 0.25}}, \"m\": 2, \"r\": 8},"
    " \"scaling\": {\"eta\": 1, \"p\": 4, \"t_final\": 0.01, \"dt\": 0.005},"
    " \"species\": [{\"diffusivity\": 1, \"charge\": 0, \"initial\": \"1\"}]}";

int main(void) {
    HompnpConfig *cfg = NULL;
    HompnpTensor *t = NULL;
    double a = 0.0, porosity = 0.0;
    size_t dim = 0;
    char msg[256];

    if (hompnp_config_parse("{", &cfg) != HOMPNP_STATUS_CONFIG) return 2;
    hompnp_last_error_message(msg, sizeof msg);
    if (strstr(msg, "schema") == NULL) return 3;

    if (hompnp_config_parse(CONFIG, &cfg) != HOMPNP_STATUS_OK) return 4;
    if (hompnp_cell_tensor(cfg, &t) != HOMPNP_STATUS_OK) return 5;
    if (hompnp_tensor_get(t, 0, 0, &a) != HOMPNP_STATUS_OK) return 6;
    if (hompnp_tensor_info(t, &dim, &porosity) != HOMPNP_STATUS_OK) return 7;
    printf("%s %zu %.17g %.17g\n", hompnp_version(), dim, porosity, a);
    hompnp_tensor_free(t);
    hompnp_config_free(cfg);
    return 0;
}
"#;

#[test]
fn c_program_links_and_runs() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let profile_dir = std::env::current_exe()
        .unwrap()
        .parent()
        .and_then(|deps| deps.parent())
        .unwrap()
        .to_path_buf();
    let lib = profile_dir.join("libhompnp_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());

    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("main.c");
    let exe = tmp.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let build = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(crate_dir.join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .expect("C compiler available");
    assert!(
        build.status.success(),
        "{}",
        String::from_utf8_lossy(&build.stderr)
    );

    let run = Command::new(&exe).output().unwrap();
    assert_eq!(run.status.code(), Some(0));
    let stdout = String::from_utf8(run.stdout).unwrap();
    let fields: Vec<&str> = stdout.split_whitespace().collect();
    assert_eq!(fields[0], env!("CARGO_PKG_VERSION"));
    assert_eq!(fields[1], "2");
    // 12 of 64 unit-cell cells are solid for this disk
    assert_eq!(fields[2].parse::<f64>().unwrap(), 52.0 / 64.0);
    let a: f64 = fields[3].parse().unwrap();
    assert!(a > 0.5 && a < 1.0, "{a}");
}
