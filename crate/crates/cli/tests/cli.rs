use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wavetomo"))
        .args(args)
        .env("WAVETOMO_OUTPUT_DIR", out)
        .output()
        .expect("spawn wavetomo")
}

fn run_config(sub: &str, config: &Path, out: &Path) -> Output {
    let out = run(&[sub, config.to_str().unwrap()], out);
    assert!(
        out.status.success(),
        "{sub} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn free_simulation_conserves_mass() {
    let dir = tempfile::tempdir().unwrap();
    run_config("simulate", &configs().join("free.toml"), dir.path());
    let text = fs::read_to_string(dir.path().join("monitors.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,l2,wiener,sup"));
    let l2: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(l2.len() > 10);
    for v in &l2 {
        assert!((v - l2[0]).abs() <= 1e-10 * l2[0]);
    }
    assert!(dir.path().join("final_abs.png").exists());
    assert!(dir.path().join("field_016.bin").exists());
}

#[test]
fn outputs_are_deterministic_and_snapshot_reproduces_them() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let config = configs().join("free.toml");
    run_config("simulate", &config, a.path());
    run_config("simulate", &config, b.path());
    run_config("simulate", &a.path().join("config.toml"), c.path());
    for name in ["monitors.csv", "summary.json", "field_000.bin", "field_008.bin", "field_016.bin"] {
        let first = fs::read(a.path().join(name)).unwrap();
        assert_eq!(first, fs::read(b.path().join(name)).unwrap(), "{name} differs between runs");
        assert_eq!(first, fs::read(c.path().join(name)).unwrap(), "{name} differs from snapshot run");
    }
}

#[test]
fn oracle_reconstruction_meets_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    run_config("reconstruct", &configs().join("recover_oracle.toml"), dir.path());
    let err = json(&dir.path().join("reconstruction.json"))["relative_l2_error"].as_f64().unwrap();
    assert!(err <= 0.05, "{err}");
    for name in ["sinogram.csv", "mask.csv", "reconstruction.bin", "reconstruction.png", "config.toml"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }

    // Reconstructing from the saved sinogram gives the same number.
    let again = tempfile::tempdir().unwrap();
    let sino = dir.path().join("sinogram.csv");
    let config = configs().join("recover_oracle.toml");
    let out = run(&["reconstruct", config.to_str().unwrap(), "--sinogram", sino.to_str().unwrap()], again.path());
    assert!(out.status.success());
    let err2 = json(&again.path().join("reconstruction.json"))["relative_l2_error"].as_f64().unwrap();
    assert_eq!(err, err2);
}

#[test]
fn oracle_sinogram_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let config = configs().join("recover_oracle.toml");
    run_config("sinogram", &config, a.path());
    run(&["--workers", "1", "sinogram", config.to_str().unwrap()], b.path());
    for name in ["sinogram.csv", "mask.csv", "sinogram.json"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn invalid_config_lists_every_guard_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("sweep_p2.toml"))
        .unwrap()
        .replace("height = 43.366", "height = 4000.0")
        .replace("n = 512", "n = 512\nbox_half_width = 20.0")
        .replace("radius = 2.0", "radius = 3.5");
    let path = dir.path().join("bad.toml");
    fs::write(&path, text).unwrap();
    let out = run(&["simulate", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for needle in ["phase-wrap", "box half-width", "phantom support"] {
        assert!(err.contains(needle), "missing {needle} in {err}");
    }
}

#[test]
fn unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("free.toml")).unwrap().replace("p = 2.0", "p = 2.0\nsigmaa = 1.0");
    let path = dir.path().join("typo.toml");
    fs::write(&path, text).unwrap();
    let out = run(&["simulate", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigmaa"));
}

#[test]
fn large_data_picard_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("picard.toml"))
        .unwrap()
        .replace("direction = [1.0, 0.0]", "direction = [1.0, 0.0]\n\n[packet.envelope]\namplitude = 4.0\nwidth = 1.0");
    let path = dir.path().join("big.toml");
    fs::write(&path, text).unwrap();
    let out = run(&["picard-check", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn picard_check_reports_cross_validation() {
    let dir = tempfile::tempdir().unwrap();
    run_config("picard-check", &configs().join("picard.toml"), dir.path());
    let v = json(&dir.path().join("picard_check.json"));
    assert!(v["max_ratio"].as_f64().unwrap() <= 0.5);
    assert!(v["fine_distance"].as_f64().unwrap() < v["coarse_distance"].as_f64().unwrap());
}

#[test]
fn residual_check_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = configs().join("residual.toml");
    let out = run(&["residual-check", config.to_str().unwrap(), "--times", "-5,0,5"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&dir.path().join("residual_check.json"));
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r["relative_linf"].as_f64().unwrap() <= 1e-5));
}

#[test]
fn p2_sweep_slope_in_window() {
    let dir = tempfile::tempdir().unwrap();
    run_config("sweep", &configs().join("sweep_p2.toml"), dir.path());
    let v = json(&dir.path().join("sweep.json"));
    let slope = v["fit_sup"]["slope"].as_f64().unwrap();
    assert!((3.5..=4.5).contains(&slope), "{slope}");
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("epsilon,error_sup,error_wiener,residual_norm,runtime_s"));
    assert_eq!(csv.lines().count(), 5);
    assert!(dir.path().join("sweep.png").exists());
}
