use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn plab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plab"))
        .args(args)
        .output()
        .expect("plab runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const THRESHOLD: &str = r#"
seed = 4
n_list = [8, 10]
alpha_grid = "0.4:0.4:1.6"
replicates = 100

[model]
activation = "symmetric_interval:0.674490"
disorder = "rademacher"
"#;

#[test]
fn enumerate_prints_one_csv_row() {
    let out = plab(&["enumerate", "--n", "5", "--m", "0"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n,m,alpha,z,log_z,log_trunc,seconds");
    assert!(lines[1].starts_with("5,0,0.00000000e0,32,"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("never");
    let cap = plab(&["enumerate", "--n", "40", "--m", "1", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(cap.status.code(), Some(3));
    assert!(!out_dir.exists());

    let unknown = write_config(tmp.path(), "bad.toml", "seed = 1\nn = 8\nbogus = 2\n");
    assert_eq!(plab(&["threshold", "--config", &unknown]).status.code(), Some(2));

    let missing = tmp.path().join("absent.toml");
    assert_eq!(
        plab(&["threshold", "--config", missing.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );

    assert_eq!(plab(&["formulas", "eval", "k2", "t=3"]).status.code(), Some(2));
    assert_eq!(
        plab(&["enumerate", "--n", "4", "--m", "1", "--activation", "interval:2,1"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn manifest_checksums_match_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "t.toml", THRESHOLD);
    let dir = tmp.path().join("run");
    let out = plab(&["threshold", "--config", &config, "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "threshold");
    assert_eq!(manifest["config"]["seed"], 4);
    let files = manifest["files"].as_array().unwrap();
    assert!(!files.is_empty());
    for f in files {
        let bytes = fs::read(dir.join(f["name"].as_str().unwrap())).unwrap();
        assert_eq!(f["bytes"].as_u64().unwrap() as usize, bytes.len());
        assert_eq!(f["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
    }
    let csv = fs::read_to_string(dir.join("results.csv")).unwrap();
    assert!(csv.starts_with("n,alpha,m,solvable,"));
    assert!(csv.ends_with('\n') && !csv.contains('\r'));
    assert_eq!(csv.lines().count(), 1 + 2 * 4);
}

#[test]
fn results_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "t.toml", THRESHOLD);
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let dir = tmp.path().join(format!("run{threads}"));
        let out = plab(&[
            "--threads",
            threads,
            "threshold",
            "--config",
            &config,
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(out.status.success());
        outputs.push(fs::read(dir.join("results.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn separation_writes_certificate() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "s.toml",
        "seed = 2\nn = 12\nl = 3\neps = 0.25\nsource = \"cube\"\n",
    );
    let dir = tmp.path().join("sep");
    let out = plab(&["separation", "--config", &config, "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cert: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("certificate.json")).unwrap()).unwrap();
    assert_eq!(cert["verified"], true);
    let size = cert["omega_size"].as_u64().unwrap();
    assert!(size >= 2);
    assert_eq!(cert["configurations"].as_array().unwrap().len() as u64, size);
}

#[test]
fn formulas_eval_prints_assignments() {
    let out = plab(&["formulas", "eval", "all_fail_bound", "eps=1", "n=16"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let values: Vec<(&str, f64)> = text
        .lines()
        .map(|l| {
            let (k, v) = l.split_once('=').unwrap();
            (k, v.parse().unwrap())
        })
        .collect();
    assert_eq!(values[0].0, "threshold");
    assert!((values[0].1 - 0.832554611).abs() < 1e-9);
    assert_eq!(values[1].0, "probability_bound");
    assert!((values[1].1 - (-16f64.ln() / 50.0).exp()).abs() < 1e-15);
}
