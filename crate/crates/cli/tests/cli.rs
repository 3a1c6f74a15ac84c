use std::path::Path;
use std::process::{Command, Output};

fn specemu(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_specemu"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .env_remove("SPECEMU_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}\n{}", out.status.code(), String::from_utf8_lossy(&out.stderr));
}

fn line_count(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

fn manifest_files(path: &Path) -> Vec<(String, String)> {
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    m["files"].as_array().unwrap().iter().map(|f| (f["path"].as_str().unwrap().to_string(), f["sha256"].as_str().unwrap().to_string())).collect()
}

#[test]
fn synth_writes_documented_layout_reproducibly() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = |dir: &str| specemu(&["synth", "--out", dir, "--seed", "9", "--set", "synth.runs=10", "--set", "synth.jacobians=null"], tmp.path());
    ok(&synth("a"));
    ok(&synth("b"));
    let a = tmp.path().join("a");
    assert_eq!(line_count(&a.join("design.csv")), 11);
    assert!(header(&a.join("design.csv")).starts_with("run_id,x_1,x_2,"));
    for band in ["o2", "wco2", "sco2"] {
        assert_eq!(line_count(&a.join(format!("spectra_{band}.csv"))), 11);
    }
    assert_eq!(header(&a.join("noise.csv")), "band,wavelength,variance");
    assert_eq!(std::fs::read_dir(a.join("jacobians")).unwrap().count(), 10);

    let files = manifest_files(&a.join("manifest_synth.json"));
    assert_eq!(files.len(), 15);
    for (rel, sha) in &files {
        let (got, _) = specemu::pipeline::file_sha256(&a.join(rel)).unwrap();
        assert_eq!(&got, sha, "{rel}");
        let other = std::fs::read(tmp.path().join("b").join(rel)).unwrap();
        assert_eq!(std::fs::read(a.join(rel)).unwrap(), other, "{rel} differs between runs");
    }
}

#[test]
fn tiny_pipeline_runs_every_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.json");
    std::fs::write(
        &config,
        r#"{
  "data_dir": "data",
  "out_dir": "out",
  "holdout": 10,
  "synth": {"runs": 110, "jacobians": 60},
  "subspace": {"samples": 60},
  "emulator": {"estimation": "map", "map_evaluations": 80},
  "prediction": {"draws": 100}
}"#,
    )
    .unwrap();
    let run = |cmd: &str, extra: &[&str]| {
        let mut args = vec![cmd, "--config", "config.json", "--threads", "1"];
        args.extend_from_slice(extra);
        let out = specemu(&args, tmp.path());
        ok(&out);
    };
    run("synth", &[]);
    run("fpca", &["--out", "stages"]);
    run("subspace", &["--out", "stages"]);
    let stages = tmp.path().join("stages");
    assert_eq!(header(&stages.join("fpca_eigenvalues.csv")), "band,component,eigenvalue,explained,cumulative,retained");
    assert_eq!(header(&stages.join("subspace_eigenvalues.csv")), "component,eigenvalue,retained");
    assert_eq!(line_count(&stages.join("projection.csv")), 63);

    run("train", &[]);
    let out = tmp.path().join("out");
    let ckpt = specemu::pipeline::Checkpoint::read(&out.join("checkpoint.json")).unwrap();
    assert_eq!(ckpt.holdout_runs.len(), 10);
    assert!(ckpt.bases.iter().all(|b| b.n_components() >= 1));
    let first = std::fs::read(out.join("checkpoint.json")).unwrap();
    run("train", &[]);
    assert_eq!(std::fs::read(out.join("checkpoint.json")).unwrap(), first);

    run("predict", &[]);
    let pred = out.join("predictions.csv");
    assert_eq!(header(&pred), "run_id,band,wavelength,mean,sd,q025,q975");
    let grid: usize = ckpt.wavelengths.iter().map(Vec::len).sum();
    assert_eq!(line_count(&pred), 1 + 10 * grid);

    run("validate", &[]);
    assert_eq!(header(&out.join("pointwise_rmspe.csv")), "wavelength,band,rmspe");
    let metrics: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["n_test"], 10);
    assert_eq!(metrics["radiance"].as_array().unwrap().len(), 3);

    // a tampered checkpoint fails the manifest check with the data exit code
    std::fs::write(out.join("checkpoint.json"), b"{}").unwrap();
    let out = specemu(&["predict", "--config", "config.json"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn exit_codes_follow_error_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_key = specemu(&["train", "--set", "no_such_key=1"], tmp.path());
    assert_eq!(bad_key.status.code(), Some(2));
    let bad_value = specemu(&["train", "--set", "emulator.neighbors=0"], tmp.path());
    assert_eq!(bad_value.status.code(), Some(2));
    let missing = specemu(&["train", "--set", "data_dir=nowhere"], tmp.path());
    assert_eq!(missing.status.code(), Some(3));
}
