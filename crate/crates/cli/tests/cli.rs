use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use wifield::dataset::{ComboSpec, DatasetConfig, DatasetManifest};
use wifield::greens::{default_layout, incident_field, wavenumber, AntennaModel};
use wifield::io::{read_pgm, read_wfld, FieldsJson};
use wifield::measure::{GainTable, MeasurementSet};
use wifield::scene::{Material, Point, Scene, SensingDomain, Target};
use wifield::Complex64 as C64;

fn wifield(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wifield"))
        .args(args)
        .current_dir(dir)
        .env_remove("WIFIELD_SEED")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = wifield(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn report(path: impl AsRef<Path>) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn write_scenes(dir: &Path) {
    let domain = SensingDomain::new(Point::new(0.0, 0.0), 1.0, 16).unwrap();
    Scene::empty(domain).save(dir.join("empty.json")).unwrap();
    let mut scene = Scene::empty(domain);
    scene.materials.push(Material::new("block", 9, C64::new(2.5, -0.1)));
    scene.targets.push(Target::rect(9, Point::new(0.4, 0.55), 0.15, 0.1));
    scene.save(dir.join("target.json")).unwrap();
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["forward", "--bogus"][..], &["no-such-command"], &[], &["render", "--out", "x.pgm"]] {
        let out = wifield(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"), "{args:?}");
    }
    assert_eq!(wifield(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(wifield(dir.path(), &["--threads", "0", "render", "--chi", "a", "--out", "b"]).status.code(), Some(2));
}

#[test]
fn forward_on_empty_scene_returns_the_incident_field() {
    let dir = tempfile::tempdir().unwrap();
    write_scenes(dir.path());
    ok(dir.path(), &["forward", "--scene", "empty.json", "--tones", "2", "--out", "f.json"]);
    let fields: FieldsJson = serde_json::from_slice(&std::fs::read(dir.path().join("f.json")).unwrap()).unwrap();
    let domain = Scene::load(dir.path().join("empty.json")).unwrap().domain;
    let layout = default_layout(&domain, 2);
    assert_eq!(fields.tones_hz, layout.tones_hz);
    for (t, f) in layout.tones_hz.iter().enumerate() {
        for (p, tx) in layout.tx.iter().enumerate() {
            let e_i = incident_field(&AntennaModel::default(), *tx, &layout.rx, wavenumber(*f)).unwrap();
            assert_eq!(fields.e_total_rx[t][p], e_i);
            assert!(fields.e_s_rx[t][p].iter().all(|v| v.norm() == 0.0));
        }
    }
    let rep = report(dir.path().join("f.report.json"));
    assert_eq!(rep["command"], "forward");
    assert_eq!(rep["outputs"][0], "f.json");
    assert!(rep["error"].is_null());
}

#[test]
fn measurement_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_scenes(d);
    let common = ["--tones", "2"];
    let run = |extra: &[&str]| ok(d, &[extra, &common].concat());
    run(&["--seed", "4", "simulate", "--scene", "empty.json", "--sigma", "0.01", "--samples", "60", "--out", "empty_m.json"]);
    run(&["calibrate", "--meas", "empty_m.json", "--scene", "empty.json", "--out", "g.json"]);
    run(&["--seed", "5", "simulate", "--scene", "target.json", "--samples", "60", "--out", "m.json"]);
    run(&["invert-phaseless", "--meas", "m.json", "--gains", "g.json", "--scene", "target.json", "--iters", "40", "--out", "pre.wfld"]);
    ok(d, &["render", "--chi", "pre.wfld", "--tone", "1", "--out", "img.pgm"]);

    assert!(MeasurementSet::load(d.join("empty_m.json")).unwrap().empty_scene);
    assert!(!MeasurementSet::load(d.join("m.json")).unwrap().empty_scene);
    let gains = GainTable::load(d.join("g.json")).unwrap();
    assert!(gains.gains.iter().all(|g| (g - 1.0).abs() < 0.01));
    let pre = read_wfld(d.join("pre.wfld")).unwrap();
    assert_eq!((pre.n_tone, pre.n), (2, 16));
    let (rows, cols, pixels) = read_pgm(d.join("img.pgm")).unwrap();
    assert_eq!((rows, cols), (16, 16));
    assert_eq!((pixels.iter().min(), pixels.iter().max()), (Some(&0), Some(&255)));
    assert_eq!(report(d.join("pre.report.json"))["metrics"]["tones"], 2.0);
}

#[test]
fn seed_flag_overrides_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_scenes(d);
    let sim = |run: &str, seed_flag: Option<&str>, env: Option<&str>| {
        let sub = d.join(run);
        std::fs::create_dir(&sub).unwrap();
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_wifield"));
        cmd.current_dir(&sub).env_remove("WIFIELD_SEED");
        if let Some(e) = env {
            cmd.env("WIFIELD_SEED", e);
        }
        if let Some(s) = seed_flag {
            cmd.args(["--seed", s]);
        }
        cmd.args(["simulate", "--scene", "../target.json", "--tones", "1", "--sigma", "0.05", "--samples", "5", "--out", "m.json"]);
        assert!(cmd.status().unwrap().success());
        (std::fs::read(sub.join("m.json")).unwrap(), report(sub.join("m.report.json")))
    };
    let (a, ra) = sim("a", Some("7"), None);
    let (b, rb) = sim("b", None, Some("7"));
    let (c, rc) = sim("c", Some("7"), Some("8"));
    let (e, re) = sim("e", None, Some("8"));
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_ne!(a, e);
    assert_eq!([&ra["seed"], &rb["seed"], &rc["seed"], &re["seed"]], [7, 7, 7, 8]);
    assert_eq!(ra["config_hash"], rc["config_hash"]);
    assert_ne!(ra["config_hash"], re["config_hash"]);

    let bad = Command::new(env!("CARGO_BIN_EXE_wifield"))
        .current_dir(d)
        .env("WIFIELD_SEED", "not-a-number")
        .args(["simulate", "--scene", "target.json", "--out", "x.json"])
        .status()
        .unwrap();
    assert_eq!(bad.code(), Some(2));
}

#[test]
fn failures_still_write_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_scenes(d);
    let out = wifield(d, &["forward", "--scene", "missing.json", "--out", "f.json"]);
    assert_eq!(out.status.code(), Some(2));
    let rep = report(d.join("f.report.json"));
    assert!(rep["error"].as_str().unwrap().contains("No such file"));
    assert_eq!(rep["outputs"].as_array().unwrap().len(), 0);

    ok(d, &["forward", "--scene", "target.json", "--tones", "1", "--out", "f.json"]);
    // an unregularized Born solve on 160 equations for 256 unknowns is rank deficient
    let out = wifield(d, &["invert-born", "--fields", "f.json", "--scene", "target.json", "--tones", "1", "--alpha", "0", "--out", "b.wfld"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(report(d.join("b.report.json"))["error"].as_str().unwrap().contains("rank deficient"));

    ok(d, &["invert-born", "--fields", "f.json", "--scene", "target.json", "--tones", "1", "--alpha", "1e-3", "--out", "b.wfld"]);
    assert_eq!(read_wfld(d.join("b.wfld")).unwrap().n_tone, 1);
    assert!(report(d.join("b.report.json"))["metrics"]["rel_err"].as_f64().unwrap().is_finite());
}

#[test]
fn oracle_cylinder_reports_small_error() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["oracle-cylinder", "--out", "cyl.json"]);
    let body = report(dir.path().join("cyl.json"));
    assert_eq!(body["series"].as_array().unwrap().len(), 40);
    let err = report(dir.path().join("cyl.report.json"))["metrics"]["rel_err"].as_f64().unwrap();
    assert!(err < 0.03 && err == body["rel_err"].as_f64().unwrap());
}

#[test]
fn compare_ray_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["compare-ray", "--l", "0.5,1", "--d", "0.1,0.3", "--cpw", "16", "--out", "err.csv"]);
    let csv = std::fs::read_to_string(dir.path().join("err.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("l_over_lambda,d_m,rel_err"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!((rows[0][0], rows[3][0], rows[3][1]), (0.5, 1.0, 0.3));
    let summary = report(dir.path().join("err.summary.json"));
    let max_half = rows[..2].iter().map(|r| r[2]).fold(0.0, f64::max);
    assert_eq!(summary["max_err_at_halflambda"].as_f64().unwrap(), max_half);
}

#[test]
fn gen_dataset_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut cfg = DatasetConfig {
        combos: vec![ComboSpec { materials: vec!["wood".into()], positions: 2 }],
        reps: 2,
        n_tone: 1,
        n_class: 2,
        ..DatasetConfig::default()
    };
    cfg.pipeline.n_samples = 20;
    cfg.pipeline.inversion.max_iters = 20;
    std::fs::write(d.join("cfg.json"), serde_json::to_string(&cfg).unwrap()).unwrap();
    ok(d, &["--seed", "11", "gen-dataset", "--config", "cfg.json", "--limit", "3", "--out", "ds"]);
    let manifest = DatasetManifest::load(d.join("ds/manifest.json")).unwrap();
    assert_eq!(manifest.records.len(), 3);
    assert!(!manifest.complete);
    let rep = report(d.join("ds/run_report.json"));
    assert_eq!(rep["metrics"]["planned_records"], 4.0);
    assert_eq!(rep["metrics"]["complete"], 0.0);
    ok(d, &["render", "--labels", &format!("ds/{}", manifest.records[0].label), "--out", "lbl.pgm"]);
    assert_eq!(read_pgm(d.join("lbl.pgm")).unwrap().0, 40);
}
