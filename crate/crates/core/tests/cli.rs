mod common;

use std::path::Path;
use std::process::Command;

use common::small_config_text;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nmor-sim"))
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let p = dir.join("exp.conf");
    std::fs::write(&p, small_config_text(extra)).unwrap();
    p
}

#[test]
fn outputs_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[sweep]\nac_amplitudes_tesla = 1e-8, 3e-8, 1e-7\n");
    let mut outs = Vec::new();
    for workers in ["1", "4"] {
        let out = dir.path().join(format!("w{workers}"));
        for cmd in ["simulate", "sweep"] {
            let st = bin()
                .args([cmd, "--workers", workers, "--seed", "17", "--config"])
                .arg(&cfg)
                .arg("--out-dir")
                .arg(&out)
                .status()
                .unwrap();
            assert!(st.success());
        }
        outs.push(out);
    }
    for f in ["spectrum.csv", "report.json", "sweep.csv", "sweep_report.json"] {
        let a = std::fs::read(outs[0].join(f)).unwrap();
        let b = std::fs::read(outs[1].join(f)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{f} differs");
    }
    let spectrum = std::fs::read_to_string(outs[0].join("spectrum.csv")).unwrap();
    assert!(spectrum.starts_with("frequency_hz,psd_db_rel_snl\n"));
    let sweep = std::fs::read_to_string(outs[0].join("sweep.csv")).unwrap();
    assert!(sweep.starts_with(
        "applied_field,snr_snl_db,snr_squeezed_db,sensitivity_snl,sensitivity_squeezed\n"
    ));
    assert_eq!(sweep.lines().count(), 4);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(outs[0].join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 17);
    assert!(report["tool_version"].is_string());
}

#[test]
fn out_dir_defaults_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("env_out");
    let st = bin()
        .args(["simulate", "--format", "json", "--config"])
        .arg(&cfg)
        .env("NMOR_SIM_OUT_DIR", &out)
        .status()
        .unwrap();
    assert!(st.success());
    let table: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("spectrum.json")).unwrap()).unwrap();
    assert!(table["frequency_hz"].as_array().unwrap().len() > 10);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let run = |extra: &str| {
        let cfg = write_config(dir.path(), extra);
        bin()
            .args(["simulate", "--config"])
            .arg(&cfg)
            .arg("--out-dir")
            .arg(dir.path())
            .output()
            .unwrap()
    };
    assert_eq!(run("[chain]\nbogus = 1\n").status.code(), Some(2));
    assert_eq!(run("[scenario]\nsample_rate_hz = 1e6\n").status.code(), Some(3));
    let out = run("[scenario]\nrotation_gain_rad_per_tesla = 1e8\n");
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run("[scenario]\nrotation_gain_rad_per_tesla = 0\n");
    assert_eq!(out.status.code(), Some(4));
    let missing = bin().args(["simulate", "--config", "/nonexistent.conf"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn state_and_calibrate_print_metrics() {
    let out = bin().args(["state", "--gain", "12.6", "--eta-probe", "1", "--eta-conjugate", "1", "--format", "json"]).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["noise_power_ratio"].as_f64().unwrap() - 1.0 / 24.2).abs() < 1e-9);

    let out = bin().args(["calibrate"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("rotation_gain_rad_per_tesla = "), "{text}");
}
