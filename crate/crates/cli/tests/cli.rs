use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ghostqc::manifest::RunManifest;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

fn ghostqc(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ghostqc")).args(args).current_dir(dir).output().expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = ghostqc(args, dir);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn base(object: &str, m: usize) -> Value {
    json!({
        "object": object,
        "patterns": { "count": m, "seed": 5 },
        "model": { "encoding": "angle_reupload", "qubits_per_patch": 8, "layers": 3, "seed": 7 },
        "train": { "max_iterations": 20 },
        "output": "out"
    })
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn floats(text: &str) -> Vec<Vec<f64>> {
    text.lines().filter(|l| !l.is_empty()).map(|l| l.split(',').map(|t| t.parse().unwrap()).collect()).collect()
}

/// Σ_i H_ji T_i computed straight from the written files.
fn forward_from_files(dir: &Path) -> Vec<f64> {
    let truth: Vec<f64> = floats(&fs::read_to_string(dir.join("truth.csv")).unwrap()).concat();
    floats(&fs::read_to_string(dir.join("patterns.csv")).unwrap())
        .iter()
        .map(|row| row.iter().zip(&truth).map(|(h, t)| h * t).sum())
        .collect()
}

#[test]
fn simulate_hits_the_requested_dsnr() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = base("builtin:glyph:16", 4000);
    cfg["detection"] = json!({ "dsnr": 20.0, "seed": 9 });
    let c = write_config(tmp.path(), "c.json", &cfg);
    ok(&["simulate", "--config", c.to_str().unwrap(), "--out", "sim"], tmp.path());
    let sim = tmp.path().join("sim");
    let clean = forward_from_files(&sim);
    let noisy: Vec<f64> = floats(&fs::read_to_string(sim.join("buckets.csv")).unwrap()).concat();
    let m = clean.len() as f64;
    let mean = clean.iter().sum::<f64>() / m;
    let sigma = (noisy.iter().zip(&clean).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / m).sqrt();
    let dsnr = 10.0 * (mean / sigma).log10();
    assert!((dsnr - 20.0).abs() < 0.5, "re-estimated dSNR {dsnr}");
}

#[test]
fn noiseless_simulation_is_the_forward_model_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = base("builtin:glyph:16", 50);
    cfg["detection"] = json!({ "sigma": 0.0, "seed": 1 });
    let c = write_config(tmp.path(), "c.json", &cfg);
    ok(&["simulate", "--config", c.to_str().unwrap(), "--out", "a"], tmp.path());
    ok(&["simulate", "--config", c.to_str().unwrap(), "--out", "b"], tmp.path());
    let a = tmp.path().join("a");
    let buckets: Vec<f64> = floats(&fs::read_to_string(a.join("buckets.csv")).unwrap()).concat();
    assert_eq!(buckets, forward_from_files(&a));
    let (ma, mb) = (manifest(&a), manifest(&tmp.path().join("b")));
    assert_eq!(ma.artifacts, mb.artifacts);
    let listed: Vec<&str> = ma.artifacts.iter().map(|x| x.path.as_str()).collect();
    for f in ["patterns.csv", "buckets.csv", "truth.pgm", "truth.csv", "simulation.json"] {
        assert!(listed.contains(&f), "{f} missing from manifest");
    }
    for art in &ma.artifacts {
        let bytes = fs::read(a.join(&art.path)).unwrap();
        assert_eq!(art.sha256, hex::encode(Sha256::digest(&bytes)));
    }
}

#[test]
fn reconstruction_reproduces_from_its_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let c = write_config(tmp.path(), "c.json", &base("builtin:glyph:16", 32));
    ok(&["reconstruct", "--config", c.to_str().unwrap(), "--method", "qcsgi", "--seed", "13", "--out", "r1"], tmp.path());
    let m1 = manifest(&tmp.path().join("r1"));
    assert_eq!(m1.seeds["model"], 13);
    let echo = write_config(tmp.path(), "echo.json", &m1.config);
    ok(&["reconstruct", "--config", echo.to_str().unwrap(), "--method", "qcsgi", "--out", "r2"], tmp.path());
    assert_eq!(m1.artifacts, manifest(&tmp.path().join("r2")).artifacts);
    assert!(m1.artifacts.iter().any(|a| a.path == "checkpoint.bin"));
}

#[test]
fn dgi_single_pixel_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let t = 0.8;
    fs::write(tmp.path().join("p.csv"), "1\n0\n").unwrap();
    fs::write(tmp.path().join("b.csv"), format!("{t}\n0\n")).unwrap();
    let mut cfg = base("builtin:glyph:16", 2);
    cfg.as_object_mut().unwrap().remove("object");
    cfg["data"] = json!({ "patterns": "p.csv", "buckets": "b.csv" });
    let c = write_config(tmp.path(), "c.json", &cfg);
    let out = ghostqc(&["reconstruct", "--config", c.to_str().unwrap(), "--method", "dgi", "--out", "d"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ignores the `train` section"));
    let raw: f64 = fs::read_to_string(tmp.path().join("d/correlation_raw.csv")).unwrap().trim().parse().unwrap();
    assert!((raw - t / 4.0).abs() < 1e-15, "raw {raw}");
}

#[test]
fn cnn_prints_the_substitute_layer_count() {
    let tmp = tempfile::tempdir().unwrap();
    let c = write_config(tmp.path(), "c.json", &base("builtin:glyph:16", 64));
    let stdout = ok(&["reconstruct", "--config", c.to_str().unwrap(), "--method", "cnn", "--out", "c"], tmp.path());
    assert!(stdout.contains("substitute linear 4160,"), "{stdout}");
    let report: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("c/report.json")).unwrap()).unwrap();
    let p = &report["parameters"];
    assert_eq!(p["substitute_linear"], 64 * 64 + 64);
    assert_eq!(p["quantum"], 0);
    let sum = p["substitute_linear"].as_u64().unwrap() + p["projection"].as_u64().unwrap() + p["trunk"].as_u64().unwrap();
    assert_eq!(p["total"].as_u64().unwrap(), sum);
}

/// Recorded from a reference run of the fixture below.
const SMOKE_LOSS_TRACE_SHA256: &str = "7fa709e26fd041291eff8d5a665ea7ac71ba831db0c58f52e1ddc4f5b0008863";

#[test]
fn qcsgi_smoke_reproduces_recorded_loss_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let c = write_config(tmp.path(), "c.json", &base("builtin:glyph:16", 64));
    ok(&["reconstruct", "--config", c.to_str().unwrap(), "--method", "qcsgi", "--out", "q"], tmp.path());
    let report: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("q/report.json")).unwrap()).unwrap();
    let losses = report["training"]["losses"].as_array().unwrap();
    assert_eq!(losses.len(), 21);
    let trace: String = losses.iter().map(|l| format!("{:.16e}\n", l.as_f64().unwrap())).collect();
    let digest = hex::encode(Sha256::digest(trace.as_bytes()));
    assert_eq!(digest, SMOKE_LOSS_TRACE_SHA256);
}

fn sweep_rows(dir: &Path) -> Vec<Value> {
    serde_json::from_str::<Vec<Value>>(&fs::read_to_string(dir.join("sweep.json")).unwrap()).unwrap()
}

#[test]
fn measurement_sweep_has_one_row_per_value_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = base("builtin:glyph:16", 64);
    cfg["train"]["max_iterations"] = json!(3);
    let c = write_config(tmp.path(), "c.json", &cfg);
    ok(&["sweep", "--config", c.to_str().unwrap(), "--axis", "measurements", "--values", "64,128,256", "--seed", "1,2", "--out", "s"], tmp.path());
    let rows = sweep_rows(&tmp.path().join("s"));
    for seed in [1, 2] {
        let m: Vec<u64> = rows.iter().filter(|r| r["seed"] == seed).map(|r| r["measurements"].as_u64().unwrap()).collect();
        assert_eq!(m, [64, 128, 256]);
    }
    let csv = fs::read_to_string(tmp.path().join("s/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    let top = manifest(&tmp.path().join("s"));
    assert!(top.artifacts.iter().any(|a| a.path == "measurements=128/seed=2/report.json"));
    assert!(top.artifacts.iter().any(|a| a.path == "measurements=64/seed=1/manifest.json"));
}

#[test]
fn dsnr_sweep_sigma_decreases() {
    let tmp = tempfile::tempdir().unwrap();
    let c = write_config(tmp.path(), "c.json", &base("builtin:glyph:16", 64));
    ok(&["sweep", "--config", c.to_str().unwrap(), "--axis", "dsnr", "--values", "12,16,20", "--method", "dgi", "--out", "s"], tmp.path());
    let sigmas: Vec<f64> = sweep_rows(&tmp.path().join("s")).iter().map(|r| r["sigma"].as_f64().unwrap()).collect();
    assert_eq!(sigmas.len(), 3);
    assert!(sigmas.windows(2).all(|w| w[1] < w[0]), "{sigmas:?}");
}

#[test]
fn quantum_noise_sweep_emits_three_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = base("builtin:glyph:16", 16);
    cfg["model"]["qubits_per_patch"] = json!(4);
    cfg["model"]["layers"] = json!(2);
    cfg["train"] = json!({ "max_iterations": 2, "backend": "parameter_shift" });
    let c = write_config(tmp.path(), "c.json", &cfg);
    ok(&["sweep", "--config", c.to_str().unwrap(), "--axis", "quantum_noise", "--values", "0.05,0.01,0.005", "--out", "s"], tmp.path());
    for v in ["0.05", "0.01", "0.005"] {
        assert!(tmp.path().join(format!("s/quantum_noise={v}/seed=7/report.json")).exists());
    }
    // the adjoint backend cannot differentiate a noisy circuit
    cfg["train"]["backend"] = json!("adjoint");
    let c = write_config(tmp.path(), "c.json", &cfg);
    let out = ghostqc(&["sweep", "--config", c.to_str().unwrap(), "--axis", "quantum_noise", "--values", "0.01", "--out", "t"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bp_variance_single_trial_is_zero_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["bp-variance", "--qubits", "2,3", "--layers", "1,2", "--trials", "1", "--seed", "4"];
    ok(&[&args[..], &["--out", "a"]].concat(), tmp.path());
    ok(&[&args[..], &["--out", "b"]].concat(), tmp.path());
    for name in ["local_variance.csv", "entangling_variance.csv"] {
        let text = fs::read_to_string(tmp.path().join("a").join(name)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("layers\\qubits,2,3"));
        for line in lines {
            assert!(line.split(',').skip(1).all(|v| v.parse::<f64>().unwrap() == 0.0), "{line}");
        }
    }
    assert_eq!(manifest(&tmp.path().join("a")).artifacts, manifest(&tmp.path().join("b")).artifacts);
    ok(&["bp-variance", "--qubits", "2", "--layers", "1", "--trials", "4", "--seed", "4", "--out", "c"], tmp.path());
    let text = fs::read_to_string(tmp.path().join("c/local_variance.csv")).unwrap();
    let v: f64 = text.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(v > 0.0);
}

#[test]
fn metrics_command() {
    let tmp = tempfile::tempdir().unwrap();
    let a: Vec<f64> = (0..256).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
    let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| (v + 0.05 * ((i % 7) as f64 - 3.0) / 3.0).clamp(0.0, 1.0)).collect();
    let csv = |v: &[f64]| v.chunks(16).map(|r| r.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(",") + "\n").collect::<String>();
    fs::write(tmp.path().join("a.csv"), csv(&a)).unwrap();
    fs::write(tmp.path().join("b.csv"), csv(&b)).unwrap();
    fs::write(tmp.path().join("small.csv"), "0,1\n1,0\n").unwrap();

    let same: Value = serde_json::from_str(&ok(&["metrics", "a.csv", "a.csv"], tmp.path())).unwrap();
    assert_eq!(same["ssim"], 1.0);
    assert_eq!(same["psnr"], 100.0);

    let pair: Value = serde_json::from_str(&ok(&["metrics", "a.csv", "b.csv", "--out", "m"], tmp.path())).unwrap();
    let mse = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 256.0;
    let direct_psnr = 10.0 * (1.0 / mse).log10();
    assert!((pair["psnr"].as_f64().unwrap() - direct_psnr).abs() < 1e-9);
    let (ia, ib) = (
        ghostqc_core::imaging::Image::new(16, 16, a).unwrap(),
        ghostqc_core::imaging::Image::new(16, 16, b).unwrap(),
    );
    let oracle = ghostqc_core::imaging::ssim(&ia, &ib).unwrap();
    assert!((pair["ssim"].as_f64().unwrap() - oracle).abs() < 1e-12);
    assert!(tmp.path().join("m/metrics.json").exists());

    let bad = ghostqc(&["metrics", "a.csv", "small.csv"], tmp.path());
    assert_eq!(bad.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("shapes differ"));
}

#[test]
fn config_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = base("builtin:glyph:16", 8);
    cfg["model"]["colour"] = json!("red");
    let c = write_config(tmp.path(), "c.json", &cfg);
    let out = ghostqc(&["reconstruct", "--config", c.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));

    let mut cfg = base("builtin:glyph:16", 8);
    cfg["detection"] = json!({ "dsnr": 20.0, "sigma": 0.1, "seed": 1 });
    let c = write_config(tmp.path(), "c.json", &cfg);
    assert_eq!(ghostqc(&["simulate", "--config", c.to_str().unwrap()], tmp.path()).status.code(), Some(2));

    let mut cfg = base("builtin:glyph:16", 8);
    cfg["patterns"].as_object_mut().unwrap().remove("seed");
    let c = write_config(tmp.path(), "c.json", &cfg);
    assert_eq!(ghostqc(&["simulate", "--config", c.to_str().unwrap()], tmp.path()).status.code(), Some(2));

    assert_eq!(ghostqc(&["sweep", "--axis", "bogus"], tmp.path()).status.code(), Some(2));
    let missing = ghostqc(&["metrics", "nope.csv", "nope.csv"], tmp.path());
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            ghostqc::config::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 3);
}
