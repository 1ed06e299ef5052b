use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use splitsim_core::pipeline::ForceConfig;
use splitsim_core::{Preset, RunConfig};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splitsim"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn splitsim")
}

fn ok(args: &[&str]) -> Value {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("summary JSON")
}

/// Error JSON on stderr of a failing invocation.
fn err(args: &[&str]) -> Value {
    let out = run(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("no error JSON in {text}"));
    serde_json::from_str(line).unwrap()
}

#[test]
fn help_and_usage_errors() {
    let out = run(&["--help"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("train-projection"));
    assert_eq!(err(&["no-such-command"])["kind"], "usage");
    assert_eq!(err(&["train-force", "--config", "not_a_config"])["kind"], "usage");
    assert_eq!(err(&["train-projection", "--direction", "m2i", "--mode", "sideways"])["kind"], "usage");
}

#[test]
fn missing_and_invalid_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_str().unwrap();
    let e = err(&["evaluate", "--root", root]);
    assert_eq!(e["kind"], "missing");
    assert!(e["message"].as_str().unwrap().contains("dataset"));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"dataset": "d", "checkpoints": "c", "out": "o", "preset": "tiny", "typo": 1}"#).unwrap();
    assert_eq!(err(&["gen-data", "--config", bad.to_str().unwrap()])["kind"], "config");

    let e = err(&["calibrate", "--modulus=-5", "--trials", "1"]);
    assert_eq!(e["kind"], "invalid_argument");
}

fn small_run(root: &Path) -> std::path::PathBuf {
    let mut cfg = RunConfig::new(Preset::Tiny, root);
    cfg.seeds = vec![0];
    cfg.force_seeds = vec![0, 1];
    cfg.force_configs = vec![ForceConfig::ImageLatentSplit];
    cfg.max_eval_samples = 16;
    cfg.cycles = 4;
    cfg.cycle_starts = 1;
    cfg.transfer_images = 4;
    std::fs::create_dir_all(root).unwrap();
    let path = root.join("run.json");
    cfg.save(&path).unwrap();
    path
}

#[test]
fn every_command_runs_on_a_tiny_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_run(dir.path());
    let c = cfg.to_str().unwrap();

    let meta = ok(&["gen-data", "--config", c]);
    assert_eq!(meta["sensors"], 3);
    ok(&["train-mesh-vae", "--config", c]);
    ok(&["train-image-vae", "--config", c]);
    assert!(dir.path().join("checkpoints/profiles.json").exists());
    for d in ["m2i", "i2m"] {
        for m in ["split", "nosplit"] {
            let rows = ok(&["train-projection", "--config", c, "--direction", d, "--mode", m]);
            assert_eq!(rows.as_array().unwrap().len(), 1);
        }
    }
    let tables = ok(&["train-force", "--run-config", c, "--config", "image_latent_split"]);
    assert_eq!(tables[0]["per_seed"].as_array().unwrap().len(), 2);

    ok(&["evaluate", "--config", c]);
    for f in ["table1_image.csv", "table2_alignment.csv", "table4_mesh.csv", "table5_force.csv", "drift.csv", "report.json"] {
        assert!(dir.path().join("reports").join(f).exists(), "{f}");
    }

    let sim = ok(&["simulate", "--config", c, "--limit", "3", "--sensor", "sensor_00"]);
    assert_eq!(sim["images"], 3);
    let rec = ok(&["reconstruct", "--config", c, "--limit", "3", "--mode", "nosplit"]);
    assert!(rec["error_mm"]["rmse"].as_f64().unwrap().is_finite());
    let tr = ok(&["transfer", "--config", c, "--source", "sensor_00", "--target", "sensor_01", "--partition", "train"]);
    assert!(tr["images"].as_u64().unwrap() > 0);
    let cy = ok(&["cycle", "--config", c, "--n", "3"]);
    assert_eq!(cy["drift"]["step_ssim"].as_array().unwrap().len(), 3);
    let ex = ok(&["export-latents", "--config", c, "--kind", "mesh"]);
    let text = std::fs::read_to_string(ex["path"].as_str().unwrap()).unwrap();
    assert!(text.starts_with("trajectory,sensor,indenter,frame"));
    assert_eq!(text.lines().count() as u64, ex["rows"].as_u64().unwrap() + 1);

    // Single files: image -> mesh -> image of another sensor.
    let png = first_png(&dir.path().join("data")).expect("dataset images");
    let one = dir.path().join("one");
    let o = one.to_str().unwrap();
    let rec = ok(&["reconstruct", "--config", c, "--image", png.to_str().unwrap(), "--sensor", "sensor_00", "--out", o]);
    let mesh = rec["written"][0].as_str().unwrap().to_string();
    let sim = ok(&["simulate", "--config", c, "--mesh", &mesh, "--sensor", "sensor_01", "--out", o]);
    assert!(Path::new(sim["written"][0].as_str().unwrap()).exists());
    assert_eq!(err(&["simulate", "--config", c, "--mesh", &mesh])["kind"], "invalid_argument");
}

fn first_png(dir: &Path) -> Option<std::path::PathBuf> {
    let mut entries: Vec<_> = std::fs::read_dir(dir).ok()?.map(|e| e.unwrap().path()).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            if let Some(f) = first_png(&p) {
                return Some(f);
            }
        } else if p.extension().is_some_and(|e| e == "png") {
            return Some(p);
        }
    }
    None
}

#[test]
fn calibrate_writes_log_and_result() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cal");
    let v = ok(&["calibrate", "--trials", "12", "--trajectories", "3", "--per-trial", "2", "--frames", "5", "--out", out.to_str().unwrap()]);
    assert!(v["best_loss"].as_f64().unwrap() <= v["midpoint_loss"].as_f64().unwrap() * 10.0);
    let log = std::fs::read_to_string(out.join("trials.csv")).unwrap();
    assert_eq!(log.lines().count(), 13);
    assert!(out.join("calibration.json").exists());
}
