//! Drives the `halo` binary end to end.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn halo(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_halo"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run halo")
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

const COARSE_EVAL: &str = r#"{
  "geometry": {"params": {"A_h": 0.676, "K_h": 1.68, "V_h": 2.06, "theta_n_deg": 16.7}},
  "grid": {"min_cells_r": 192},
  "output": {"write_fields": false}
}"#;

#[test]
fn evaluate_writes_reports_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "cfg.json", COARSE_EVAL);
    for out in ["a", "b"] {
        let o = halo(dir.path(), &["--config", "cfg.json", "--out-dir", out, "evaluate"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["evaluation.json", "fit_rf.json", "fit_static.json", "pseudo.json", "secular.json"] {
        let a = fs::read(dir.path().join("a").join(name)).unwrap();
        let b = fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    let fit: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("a/fit_rf.json")).unwrap()).unwrap();
    assert_eq!(fit["model"], "rf");
    for key in ["ell_m", "chi2_V2m2", "center_r_m", "region_radius_m"] {
        assert!(fit[key].as_f64().unwrap() > 0.0, "{key}");
    }
    let pseudo: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("a/pseudo.json")).unwrap()).unwrap();
    assert!(pseudo["depth_eV"].as_f64().unwrap() > 0.0);
    assert!(!dir.path().join("a/rf_field.csv").exists());
}

#[test]
fn evaluate_field_dumps() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "cfg.json",
        &COARSE_EVAL.replace("\"write_fields\": false", "\"write_fields\": true").replace("192", "128"),
    );
    let o = halo(dir.path(), &["--config", "cfg.json", "--out-dir", "out", "evaluate"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("out/rf_field.csv")).unwrap();
    assert!(csv.starts_with("r_m,z_m,potential_V\n"));
    let bin = fs::read(dir.path().join("out/rf_field.bin")).unwrap();
    let (grid, values) = halo_trap::io::read_grid_binary(&bin[..]).unwrap();
    assert_eq!(csv.lines().count(), 1 + grid.len());
    assert_eq!(values.len(), grid.len());
    // CSV and binary agree value for value.
    for (line, v) in csv.lines().skip(1).zip(&values).step_by(97) {
        let parsed: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(parsed, *v);
    }
    assert!(dir.path().join("out/pseudo.csv").exists());
    let leftovers = fs::read_dir(dir.path().join("out"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".tmp"))
        .count();
    assert_eq!(leftovers, 0);
}

#[test]
fn config_errors_exit_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "empty.json", "{}");
    write(dir.path(), "typo.json", r#"{"geometry": {"params": {"A_h": 1, "K_h": 1, "V_h": 1, "theta_n_deg": 10}, "colour": 1}}"#);
    write(dir.path(), "badtheta.json", r#"{"geometry": {"params": {"A_h": 1, "K_h": 1, "V_h": 1, "theta_n_deg": 95}}}"#);
    for cfg in ["empty.json", "typo.json", "badtheta.json", "missing.json"] {
        let o = halo(dir.path(), &["--config", cfg, "--out-dir", "out", "evaluate"]);
        assert_eq!(o.status.code(), Some(2), "{cfg}");
        assert!(!o.stderr.is_empty());
    }
    assert!(!dir.path().join("out").exists());

    let o = halo(dir.path(), &["--out-dir", "out", "optimize", "--budget", "0"]);
    assert_eq!(o.status.code(), Some(2));
    let o = halo(dir.path(), &["--out-dir", "out", "frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn optimize_zero_budget_and_seeded_repeat() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "opt.json",
        r#"{"optimizer": {"initial_params": {"A_h": 0.70, "K_h": 1.62, "V_h": 2.1, "theta_n_deg": 17.5}},
            "grid": {"min_cells_r": 128}}"#,
    );
    let o = halo(dir.path(), &["--config", "opt.json", "--seed", "5", "--out-dir", "z", "optimize", "--budget", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(dir.path().join("z/trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 2);
    assert!(trace.starts_with("iter,A_h,K_h,V_h,theta_deg,chi2_rf,chi2_static,accepted\n"));

    for out in ["a", "b"] {
        let o = halo(dir.path(), &["--config", "opt.json", "--seed", "9", "--out-dir", out, "optimize", "--budget", "6"]);
        assert!(o.status.success());
    }
    let a = fs::read(dir.path().join("a/trace.csv")).unwrap();
    let b = fs::read(dir.path().join("b/trace.csv")).unwrap();
    assert_eq!(a, b);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("a/optimization.json")).unwrap()).unwrap();
    assert_eq!(report["rng_seed"], 9);
    assert!(report["chi2_rf_V2m2"].as_f64().unwrap() <= report["initial"]["chi2_rf_V2m2"].as_f64().unwrap());
}

#[test]
fn phase_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = halo(dir.path(), &["--out-dir", "p", "phase"]);
    assert!(o.status.success());
    let map = fs::read_to_string(dir.path().join("p/phase_map.csv")).unwrap();
    assert_eq!(map.lines().next(), Some("alpha,r0,x,z,phase,energy"));
    assert_eq!(map.lines().count(), 1 + 41 * 41);
    let row = map.lines().find(|l| l.starts_with("2,1,")).expect("alpha = 2, r0 = 1 row");
    let cols: Vec<&str> = row.split(',').collect();
    assert_eq!(cols[4], "in_plane");
    assert!((cols[2].parse::<f64>().unwrap() - 1.1027).abs() < 1e-4);
    let boundary = fs::read_to_string(dir.path().join("p/phase_boundary.csv")).unwrap();
    assert!(boundary.lines().any(|l| l == "1,0"));

    write(dir.path(), "bad.json", r#"{"phase": {"alpha_min": 2, "alpha_max": 1, "r0_min": 0.1, "r0_max": 1, "resolution": 3}}"#);
    let o = halo(dir.path(), &["--config", "bad.json", "--out-dir", "q", "phase"]);
    assert_eq!(o.status.code(), Some(2));
    let o = halo(dir.path(), &["--out-dir", "r", "phase", "--resolution", "7"]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(dir.path().join("r/phase_map.csv")).unwrap().lines().count(), 50);
}

#[test]
fn species_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = halo(dir.path(), &["--out-dir", "s", "species"]);
    assert!(o.status.success());
    let csv = fs::read_to_string(dir.path().join("s/species.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    for (row, expected) in rows.iter().zip([419.0, 428.0, 401.0, 429.0]) {
        let v: f64 = row[2].parse().unwrap();
        assert!((v - expected).abs() <= 0.01 * expected, "{row:?}");
    }
    write(dir.path(), "empty.json", r#"{"species": []}"#);
    let o = halo(dir.path(), &["--config", "empty.json", "--out-dir", "e", "species"]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(dir.path().join("e/species.csv")).unwrap(), "ion,omega_r_Hz,r_star_um\n");
    write(dir.path(), "bad.json", r#"{"species": [{"name": "x", "mass_u": 1, "charge_e": 1, "omega_r_Hz": 0}]}"#);
    let o = halo(dir.path(), &["--config", "bad.json", "--out-dir", "b", "species"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn geometry_emit_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let o = halo(dir.path(), &["--out-dir", "g", "geometry"]);
    assert!(o.status.success());
    let o = halo(dir.path(), &["--out-dir", "v", "geometry", "--validate", "g/geometry.json"]);
    assert!(o.status.success());
    let params: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("v/design_params.json")).unwrap()).unwrap();
    assert!((params["A_h"].as_f64().unwrap() - 0.676).abs() < 1e-12);

    let text = fs::read_to_string(dir.path().join("g/geometry.json")).unwrap();
    write(dir.path(), "neg.json", &text.replace("\"half_gap_tube_m\": 0.", "\"half_gap_tube_m\": -0."));
    let o = halo(dir.path(), &["--out-dir", "w", "geometry", "--validate", "neg.json"]);
    assert_eq!(o.status.code(), Some(2));
}
