use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_poresurr"))
}

fn run(config: &Path, args: &[&str]) -> Output {
    let out = bin()
        .arg("--config")
        .arg(config)
        .args(["--threads", "2"])
        .args(args)
        .output()
        .expect("binary runs");
    out
}

fn ok(config: &Path, args: &[&str]) -> Output {
    let out = run(config, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

fn workspace() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let p = |s: &str| root.join(s).display().to_string();
    let cfg = json!({
        "paths": {
            "geometry_dir": p("geoms"),
            "features": p("features.csv"),
            "pca_dir": p("pca"),
            "dataset_dir": p("data"),
            "models_dir": p("models"),
            "reports_dir": p("reports"),
        },
        "design": { "count": 14, "n_h": 10, "seed": 7 },
        "cdr": { "n_t": 16 },
        "experiment": {
            "train_count": 10,
            "split_seeds": [0, 1],
            "pca_components": 3,
            "n_greedy": 6,
            "grid": { "shapes": [1.0, 0.25], "lambdas": [1e-2, 1e-4] },
            "two_layer": { "n_epochs": 15, "batch_size": 5 }
        },
        "sweep_nf": [1, 2]
    });
    let config = root.join("config.json");
    fs::write(&config, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    Workspace {
        _dir: dir,
        root,
        config,
    }
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn prepare(ws: &Workspace) {
    ok(&ws.config, &["gen-geoms"]);
    ok(&ws.config, &["fom"]);
}

#[test]
fn full_pipeline_produces_a_valid_reproducible_report() {
    let ws = workspace();
    let c = &ws.config;
    prepare(&ws);
    let pvx = fs::read_dir(ws.root.join("geoms"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pvx"))
        .count();
    assert_eq!(pvx, 14);

    ok(c, &["features"]);
    let features = fs::read_to_string(ws.root.join("features.csv")).unwrap();
    assert_eq!(features.lines().next().unwrap(), "id,eps,eps_w,V,S,c_f,ct_f");
    assert_eq!(features.lines().count(), 15);

    let curves = fs::read_to_string(ws.root.join("data/curves.csv")).unwrap();
    assert_eq!(curves.lines().next().unwrap().split(',').count(), 17);
    let manifest = read_json(&ws.root.join("data/manifest.json"));
    assert_eq!(manifest["samples"].as_array().unwrap().len(), 14);

    ok(c, &["train"]);
    let models = ws.root.join("models");
    for k in ["mf", "pca"] {
        for l in ["1L", "2L"] {
            for s in 0..2 {
                assert!(models.join(format!("{k}-{l}-split{s}.json")).exists());
            }
        }
    }
    assert!(ws.root.join("pca/split0.pcab").exists());
    let first: Vec<(String, Vec<u8>)> = ["mf-2L-split1.json", "pca-1L-split0.json", "results.json"]
        .iter()
        .map(|n| (n.to_string(), fs::read(models.join(n)).unwrap()))
        .collect();

    ok(c, &["report"]);
    let report = read_json(&ws.root.join("reports/report.json"));
    let schema: Value =
        serde_json::from_str(include_str!("../schema/report.schema.json")).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(&report).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");
    assert_eq!(report["splits"].as_array().unwrap().len(), 8);
    assert_eq!(report["means"].as_array().unwrap().len(), 4);

    // the report recomputes test errors from the stored models
    let results = read_json(&models.join("results.json"));
    for r in results.as_array().unwrap() {
        let row = report["splits"]
            .as_array()
            .unwrap()
            .iter()
            .find(|x| x["feature"] == r["feature"] && x["layers"] == r["layers"] && x["split"] == r["split"])
            .unwrap();
        let (a, b) = (r["e_rel"].as_f64().unwrap(), row["e_rel"].as_f64().unwrap());
        assert!((a - b).abs() <= 1e-12 * a.max(1e-300), "{a} vs {b}");
    }
    let report_bytes = fs::read(ws.root.join("reports/report.json")).unwrap();

    ok(c, &["train"]);
    for (name, bytes) in &first {
        assert_eq!(&fs::read(models.join(name)).unwrap(), bytes, "{name} changed between runs");
    }
    ok(c, &["report"]);
    assert_eq!(fs::read(ws.root.join("reports/report.json")).unwrap(), report_bytes);

    ok(c, &["sweep-nf"]);
    let sweep = fs::read_to_string(ws.root.join("reports/sweep_nf.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 2 * 2);

    let basis = ws.root.join("fit.pcab");
    let out = ok(c, &["pca-fit", "--split", "0", "--n-f", "3", "--out", basis.to_str().unwrap()]);
    let printed = String::from_utf8(out.stdout).unwrap();
    let stored = read_json(&models.join("pca-1L-split0.json"));
    assert_eq!(
        printed.split_whitespace().next().unwrap(),
        stored["feature_map"]["sha256"].as_str().unwrap()
    );
    let proj = ws.root.join("proj.csv");
    ok(
        c,
        &["pca-project", "--basis", basis.to_str().unwrap(), "--out", proj.to_str().unwrap()],
    );
    let proj = fs::read_to_string(proj).unwrap();
    assert_eq!(proj.lines().next().unwrap(), "id,pc_0,pc_1,pc_2");
    assert_eq!(proj.lines().count(), 15);
}

#[test]
fn tampered_basis_is_a_missing_artifact() {
    let ws = workspace();
    let c = &ws.config;
    prepare(&ws);
    ok(c, &["train"]);
    let basis = ws.root.join("pca/split0.pcab");
    let mut bytes = fs::read(&basis).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&basis, bytes).unwrap();
    let out = run(c, &["report"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hash"));
}

#[test]
fn exit_codes_follow_error_classes() {
    let ws = workspace();
    let c = &ws.config;

    // nothing generated yet
    assert_eq!(run(c, &["train"]).status.code(), Some(4));
    assert_eq!(run(c, &["report"]).status.code(), Some(4));

    let bad = ws.root.join("bad.json");
    fs::write(&bad, r#"{"experiment": {"pca_components": 0}}"#).unwrap();
    assert_eq!(run(&bad, &["gen-geoms"]).status.code(), Some(2));
    fs::write(&bad, "{not json").unwrap();
    assert_eq!(run(&bad, &["gen-geoms"]).status.code(), Some(2));
    assert_eq!(run(c, &["gen-geoms", "--n-h", "2"]).status.code(), Some(2));
    assert_eq!(run(c, &["fom", "--pe", "-1"]).status.code(), Some(2));

    // a held lock blocks a second writer
    let geoms = ws.root.join("geoms");
    fs::create_dir_all(&geoms).unwrap();
    fs::write(geoms.join(".poresurr.lock"), "").unwrap();
    let out = run(c, &["gen-geoms"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("locked"));
    fs::remove_file(geoms.join(".poresurr.lock")).unwrap();
    ok(c, &["gen-geoms", "--count", "3"]);
    assert!(!geoms.join(".poresurr.lock").exists());
}
