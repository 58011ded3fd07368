//! End-to-end checks of the binary: config handling, snapshot round trips,
//! geometry export, bound reports and distinct error exit codes.

use std::path::Path;
use std::process::Command;

fn idla() -> Command {
    Command::new(env!("CARGO_BIN_EXE_idla"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, body).unwrap();
    path
}

const BASE_CONFIG: &str = r#"
[graph]
family = "cycle"
n = 8

[rng]
master_seed = 11

[experiment]
t = 16
replicates = 4
y0 = 1.0
modes = [{ k = 2, family = "const", params = [1.0] }]
"#;

#[test]
fn simulate_writes_snapshot_that_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), BASE_CONFIG);
    let out = dir.path().join("run");
    let status = idla()
        .args(["simulate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());

    let snap_path = out.join("cluster.snapshot");
    let text = std::fs::read_to_string(&snap_path).unwrap();
    let (header, cluster) = idla_core::snapshot::parse_snapshot(&text).unwrap();
    assert_eq!(header.t, 16);
    assert_eq!(cluster.above_zero_count(), 16);
    let g = idla_core::snapshot::graph_from_header(&header.graph).unwrap();
    assert_eq!(idla_core::snapshot::write_snapshot(&cluster, &g), text);

    // Manifest exists and lists the snapshot with its hash.
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("cluster.snapshot"));
    assert!(manifest.contains(&idla_core::snapshot::content_hash(&text)));

    // Geometry export from the snapshot.
    let geo_out = dir.path().join("geo");
    let status = idla()
        .arg("export-geometry")
        .arg(&snap_path)
        .arg("--out")
        .arg(&geo_out)
        .status()
        .unwrap();
    assert!(status.success());
    let geometry = std::fs::read_to_string(geo_out.join("geometry.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&geometry).unwrap();
    assert_eq!(parsed["n"], 8);
    assert_eq!(parsed["sites"].as_array().unwrap().len(), 16);
    // Cycle embedding is a point on the unit circle.
    let e = parsed["sites"][0]["embedding"].as_array().unwrap();
    let norm = e[0].as_f64().unwrap().hypot(e[1].as_f64().unwrap());
    assert!((norm - 1.0).abs() < 1e-12);
}

#[test]
fn spectrum_csv_has_expected_columns() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), BASE_CONFIG);
    let out = dir.path().join("spec");
    let output = idla()
        .args(["spectrum", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let csv = std::fs::read_to_string(out.join("spectrum.csv")).unwrap();
    assert!(csv.starts_with("k,lambda_k,nu_k,q_k,q_k_rescaled,gamma_k_estimate"));
    assert_eq!(csv.lines().count(), 9); // header + one row per eigenvalue
    let first = csv.lines().nth(1).unwrap();
    assert!(first.starts_with("1,1,0,0,0,"));
}

#[test]
fn gff_experiment_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), BASE_CONFIG);
    let out = dir.path().join("gff");
    let status = idla()
        .args(["experiment", "gff_clt", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let summary = std::fs::read_to_string(out.join("summary.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert!(parsed["phi"]["variance"].as_f64().unwrap().is_finite());
    let csv = std::fs::read_to_string(out.join("replicates.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn bounds_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), BASE_CONFIG);
    let out = dir.path().join("bounds");
    let output = idla()
        .args(["bounds", "--t", "4096", "--nu", "1", "--c", "2"])
        .args(["--heights", "3,5"])
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("bounds.json")).unwrap()).unwrap();
    assert_eq!(parsed["t"], 4096);
    assert!(parsed["delta_n"].as_f64().unwrap() > 0.0);
    assert_eq!(parsed["apriori"].as_array().unwrap().len(), 2);
}

#[test]
fn distinct_error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();

    // Unknown config key: parse error, code 2.
    let bad = write_config(dir.path(), &BASE_CONFIG.replace("master_seed", "masterseed"));
    let output = idla()
        .args(["simulate", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(dir.path().join("o1"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("\"error\":\"parse\""), "{stderr}");

    // Missing config file: io error, code 3.
    let output = idla()
        .args(["simulate", "--config"])
        .arg(dir.path().join("nowhere.toml"))
        .arg("--out")
        .arg(dir.path().join("o2"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));

    // Invalid graph parameter: code 4.
    let bad = write_config(dir.path(), &BASE_CONFIG.replace("n = 8", "n = 2"));
    let output = idla()
        .args(["simulate", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(dir.path().join("o3"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(4));

    // Unknown experiment name: code 2.
    let good = write_config(dir.path(), BASE_CONFIG);
    let output = idla()
        .args(["experiment", "nosuch", "--config"])
        .arg(&good)
        .arg("--out")
        .arg(dir.path().join("o4"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn seed_override_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), BASE_CONFIG);
    let run = |seed: Option<&str>, tag: &str| {
        let out = dir.path().join(tag);
        let mut cmd = idla();
        cmd.args(["simulate", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out);
        if let Some(s) = seed {
            cmd.args(["--seed", s]);
        }
        assert!(cmd.status().unwrap().success());
        std::fs::read_to_string(out.join("cluster.snapshot")).unwrap()
    };
    let default = run(None, "a");
    let same = run(Some("11"), "b");
    let different = run(Some("12"), "c");
    assert_eq!(default, same); // config seed is 11
    assert_ne!(default, different);
}
