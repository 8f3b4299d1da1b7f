use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

fn quenched(args: &[&str], cfg: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quenched"))
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn small_lattice() -> Value {
    json!({
        "name": "small_lattice",
        "base": { "alphabet_size": 1, "mode": "iid", "weights": [1.0], "master_seed": 5 },
        "maps": [ { "kind": "multiply", "factor": 2 } ],
        "grid": { "resolution": 256, "depth": 32, "n_fibers": 100, "h_max": 10, "decay_horizon": 20 },
        "observable": { "function": { "kind": "indicator_step" }, "center": false },
        "harness": { "samples": 2000, "n_variance": 100, "lclt_n": [100, 400] }
    })
}

fn two_maps(factor: u32, weights: [f64; 2]) -> Value {
    json!({
        "name": "two_maps",
        "base": { "alphabet_size": 2, "mode": "iid", "weights": weights, "master_seed": 1 },
        "maps": [ { "kind": "multiply", "factor": factor }, { "kind": "scale", "factor": 0.5 } ],
        "grid": { "resolution": 256 },
        "observable": { "function": { "kind": "cos" } }
    })
}

fn write_cfg(dir: &Path, cfg: &Value) -> std::path::PathBuf {
    let path = dir.join("scenario.cfg");
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn weights_not_summing_to_one_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), &two_maps(3, [0.6, 0.3]));
    let o = quenched(&["validate"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("base.weights"), "{}", stderr(&o));
}

#[test]
fn malformed_config_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("broken.cfg");
    fs::write(&cfg, "{ \"name\": ").unwrap();
    assert_eq!(quenched(&["validate"], &cfg, dir.path()).status.code(), Some(2));

    let mut unknown = small_lattice();
    unknown["grid"]["resolutoin"] = json!(128);
    let cfg = write_cfg(dir.path(), &unknown);
    assert_eq!(quenched(&["validate"], &cfg, dir.path()).status.code(), Some(2));
}

#[test]
fn validate_reports_expansion_on_average() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");

    let cfg = write_cfg(dir.path(), &two_maps(2, [0.4, 0.6]));
    let o = quenched(&["validate"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("expanding_on_average: false"));

    let cfg = write_cfg(dir.path(), &two_maps(3, [0.7, 0.3]));
    let o = quenched(&["validate"], &cfg, &out);
    let text = stdout(&o);
    assert!(text.contains("expanding_on_average: true"));
    let mean: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("mean_log_lambda: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((mean - 0.5611).abs() < 1e-4, "{mean}");

    let cfg = write_cfg(dir.path(), &small_lattice());
    let o = quenched(&["validate"], &cfg, &out);
    assert!(stdout(&o).contains("expanding_on_average: true"));
}

#[test]
fn run_refuses_non_expanding_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), &two_maps(2, [0.4, 0.6]));
    let o = quenched(&["density"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("maps"), "{}", stderr(&o));
}

#[test]
fn lattice_lclt_is_refused_without_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_cfg(dir.path(), &small_lattice());
    let o = quenched(&["lclt"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest: Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    let lclt = manifest["stages"]
        .as_array()
        .unwrap()
        .iter()
        .find(|s| s["name"] == "lclt")
        .unwrap();
    assert_eq!(lclt["status"], "refused");
    assert_eq!(manifest["results"]["aperiodic"], false);
}

#[test]
fn manifest_digests_match_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_cfg(dir.path(), &small_lattice());
    let o = quenched(&["density"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest: Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    let files = manifest["files"].as_array().unwrap();
    assert!(files.iter().any(|f| f["name"] == "density.csv"));
    for f in files {
        let bytes = fs::read(out.join(f["name"].as_str().unwrap())).unwrap();
        assert_eq!(f["bytes"], bytes.len() as u64);
        assert_eq!(f["sha256"], format!("{:x}", Sha256::digest(&bytes)));
    }
    assert_eq!(manifest["config"]["name"], "small_lattice");
    assert_eq!(manifest["verb"], "density");

    let rows = fs::read_to_string(out.join("density.csv")).unwrap();
    let mut lines = rows.lines();
    assert_eq!(lines.next(), Some("index,x,density"));
    assert_eq!(lines.count(), 256);
}
