//! End-to-end CLI checks: exit codes, determinism of emitted files, snapshot
//! round trips through the `info` subcommand.

use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_nlchb");

const SMALL_RUN: &str = r#"
[grid]
nx = 16
ny = 16

[kernel]
kind = "gaussian"
width = 0.04
strength = 5.0

[potential]

[flow]
viscosity = 0.1
permeability = 1.0

[stepper]
dt = 1e-3

[initial]
kind = "random"
amplitude = 0.05
smoothing_passes = 2

[experiment]
mode = "chhs"
t_end = 0.01
snapshot_cadence = 5
seed = 9
"#;

fn write_cfg(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn run_writes_outputs_and_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), SMALL_RUN);
    let out1 = dir.path().join("out1");
    let out2 = dir.path().join("out2");
    for out in [&out1, &out2] {
        let status = Command::new(BIN)
            .args(["run"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .arg("--threads")
            .arg("1")
            .status()
            .unwrap();
        assert!(status.success());
    }
    let csv1 = std::fs::read(out1.join("diagnostics.csv")).unwrap();
    let csv2 = std::fs::read(out2.join("diagnostics.csv")).unwrap();
    assert!(!csv1.is_empty());
    assert_eq!(csv1, csv2, "same config + seed must reproduce the CSV byte for byte");
    assert!(out1.join("resolved.toml").exists());
    assert!(out1.join("final_phi.nlcb").exists());
    assert!(out1.join("phi_000000.nlcb").exists());
    assert!(out1.join("phi_000005.nlcb").exists());

    // different thread count: identical too (ordered reductions)
    let out3 = dir.path().join("out3");
    let status = Command::new(BIN)
        .args(["run"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out3)
        .arg("--threads")
        .arg("2")
        .status()
        .unwrap();
    assert!(status.success());
    let csv3 = std::fs::read(out3.join("diagnostics.csv")).unwrap();
    assert_eq!(csv1, csv3);
}

#[test]
fn unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), &SMALL_RUN.replace("dt = 1e-3", "dt = 1e-3\nmobilty = 1.0"));
    let out = Command::new(BIN)
        .args(["run"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("mobilty"), "{stderr}");
}

#[test]
fn hypothesis_violation_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        &SMALL_RUN.replace("permeability = 1.0", "permeability = 0.0"),
    );
    let out = Command::new(BIN)
        .args(["run"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("H8"));
}

#[test]
fn seed_override_changes_the_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), SMALL_RUN);
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    for (out, seed) in [(&out1, "9"), (&out2, "10")] {
        let status = Command::new(BIN)
            .args(["run"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .arg("--seed")
            .arg(seed)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let csv1 = std::fs::read(out1.join("diagnostics.csv")).unwrap();
    let csv2 = std::fs::read(out2.join("diagnostics.csv")).unwrap();
    assert_ne!(csv1, csv2);
}

#[test]
fn info_reports_snapshot_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), SMALL_RUN);
    let out = dir.path().join("out");
    assert!(Command::new(BIN)
        .args(["run"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let info = Command::new(BIN)
        .args(["info"])
        .arg(out.join("final_phi.nlcb"))
        .output()
        .unwrap();
    assert!(info.status.success());
    let text = String::from_utf8_lossy(&info.stdout);
    assert!(text.contains("scalar field: 16x16"), "{text}");
    assert!(text.contains("mean ="), "{text}");
}

#[test]
fn selftest_quick_passes_and_bump_kernel_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .args(["selftest", "--level", "quick"])
        .arg("--out")
        .arg(dir.path().join("st"))
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(stdout.contains("[PASS] convolve_fft_vs_direct_16"), "{stdout}");
    assert!(dir.path().join("st/selftest_report.json").exists());

    // tabulated kernel with a bump: admissibility check fails, exit 5
    let mut rows = String::from("r,J\n");
    for i in 0..50 {
        let r = i as f64 * 0.01;
        let v = 30.0 * ((1.0 - r / 0.49).max(0.0) + 0.3 * (-((r - 0.3) / 0.02f64).powi(2)).exp());
        rows.push_str(&format!("{r},{v}\n"));
    }
    std::fs::write(dir.path().join("bump.csv"), rows).unwrap();
    let cfg = write_cfg(
        dir.path(),
        &SMALL_RUN.replace(
            "kind = \"gaussian\"\nwidth = 0.04\nstrength = 5.0",
            "kind = \"tabulated\"\npath = \"bump.csv\"",
        ),
    );
    let out = Command::new(BIN)
        .args(["selftest", "--level", "quick", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("st2"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stdout).contains("[FAIL] kernel_admissibility"));
}

#[test]
fn sweep_rejects_insufficient_nu_span() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        &SMALL_RUN.replace("seed = 9", "seed = 9\nnu_values = [1e-1, 1e-2]"),
    );
    let out = Command::new(BIN)
        .args(["sweep-nu"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("decades"));
}

#[test]
fn range_violation_exits_4() {
    // initial snapshot outside the validated range: the range monitor
    // rejects the run with a numerical-failure exit code
    let dir = tempfile::tempdir().unwrap();
    let g = nlchb::grid::GridSpec::new(16, 16, 1.0, 1.0).unwrap();
    let phi = nlchb::grid::ScalarField::constant(g, 5.0); // beyond s_max = 3
    nlchb::snapshot::write_scalar(&dir.path().join("big.nlcb"), &phi).unwrap();
    let cfg = write_cfg(
        dir.path(),
        &SMALL_RUN.replace(
            "kind = \"random\"\namplitude = 0.05\nsmoothing_passes = 2",
            "kind = \"file\"\npath = \"big.nlcb\"",
        ),
    );
    let out = Command::new(BIN)
        .args(["run"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("range"));
}
