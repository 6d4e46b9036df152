use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn clefov(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clefov")).args(args).output().unwrap()
}

fn ok_json(args: &[&str]) -> Value {
    let out = clefov(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn small_dataset(dir: &Path) -> String {
    let data = dir.join("data");
    ok_json(&["gen", "--out", data.to_str().unwrap(), "--patients", "3", "--frames-per-patient", "4"]);
    data.join("manifest.tsv").display().to_string()
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.display().to_string(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn unknown_flags_are_usage_errors() {
    assert_eq!(clefov(&["gen", "--bogus"]).status.code(), Some(2));
    assert_eq!(clefov(&["eval", "--experiment", "nope", "--method", "ppf"]).status.code(), Some(2));
    assert_eq!(clefov(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn validation_failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.tsv");
    let out = clefov(&[
        "eval", "--dataset", missing.to_str().unwrap(), "--experiment", "oc", "--method", "ppf", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn stats_by_site_histograms_sum_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path());
    let before = tree(&dir.path().join("data"));
    let summary = ok_json(&["stats", "--dataset", &manifest, "--by-site"]);
    let sites = summary["sites"].as_array().unwrap();
    assert_eq!(sites.len(), 4);
    for s in sites {
        let bins: f64 = s["bins"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
        let total = bins + s["underflow"].as_f64().unwrap() + s["overflow"].as_f64().unwrap();
        assert!((total - 1.0).abs() < 1e-9);
    }
    assert_eq!(summary["frames"], 24);
    assert_eq!(tree(&dir.path().join("data")), before);
}

#[test]
fn preprocess_writes_a_loadable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path());
    let out = dir.path().join("pre");
    let summary = ok_json(&["preprocess", "--dataset", &manifest, "--out", out.to_str().unwrap()]);
    assert_eq!(summary["frames"], 24);
    let stats = ok_json(&["stats", "--dataset", out.join("manifest.tsv").to_str().unwrap()]);
    assert_eq!(stats["frames"], 24);
}

#[test]
fn reruns_refuse_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path());
    let runs = dir.path().join("runs");
    let args = [
        "train", "--dataset", &manifest, "--method", "ppf", "--epochs", "1", "--out", runs.to_str().unwrap(),
    ];
    let first = ok_json(&args);
    let run_dir = Path::new(first["run_dir"].as_str().unwrap()).to_path_buf();
    for f in ["config.json", "run.json", "version.txt", "model.ckpt", "model.manifest.json", "training.json"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let again = clefov(&args);
    assert_eq!(again.status.code(), Some(1));
}

#[test]
fn cam_export_matches_eval_logits() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path());
    let runs = dir.path().join("runs");
    let summary = ok_json(&[
        "eval", "--dataset", &manifest, "--experiment", "vc", "--method", "image", "--seed", "4", "--out",
        runs.to_str().unwrap(),
    ]);
    let run_dir = Path::new(summary["run_dir"].as_str().unwrap()).to_path_buf();
    let results = std::fs::read_to_string(run_dir.join("results.tsv")).unwrap();
    let plan: Value = serde_json::from_slice(&std::fs::read(run_dir.join("plan.json")).unwrap()).unwrap();
    let test_patient = plan["folds"][0]["test"][0].as_str().unwrap().to_string();
    let line = results
        .lines()
        .skip(1)
        .find(|l| l.split('\t').nth(1) == Some(test_patient.as_str()))
        .unwrap();
    let cols: Vec<&str> = line.split('\t').collect();
    let (frame_id, p_eval): (&str, f64) = (cols[0], cols[3].parse().unwrap());

    let cam_dir = dir.path().join("cam");
    let cam = ok_json(&[
        "cam",
        "--checkpoint",
        run_dir.join("checkpoints/fold-00.ckpt").to_str().unwrap(),
        "--dataset",
        &manifest,
        "--frame",
        frame_id,
        "--out",
        cam_dir.to_str().unwrap(),
    ]);
    let logits: Vec<f64> = cam["logits"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let means: Vec<f64> = cam["cam_masked_mean_scores"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    for (l, m) in logits.iter().zip(&means) {
        assert!((l - m).abs() <= 1e-5 * l.abs().max(m.abs()).max(1.0), "{l} vs {m}");
    }
    assert!((cam["p_carcinoma"].as_f64().unwrap() - p_eval).abs() < 1e-9);
    let grid = std::fs::read_to_string(cam_dir.join("cam_grid.tsv")).unwrap();
    let s = cam["cam_size"].as_u64().unwrap() as usize;
    assert_eq!(grid.lines().count(), s);
    assert!(grid.lines().all(|l| l.split('\t').count() == s));
    for png in ["cam_heatmap.png", "cam_overlay.png"] {
        assert!(std::fs::metadata(cam_dir.join(png)).unwrap().len() > 0);
    }
}
