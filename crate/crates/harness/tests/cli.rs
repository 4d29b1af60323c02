use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use shelab::manifest::RunManifest;

const MINIMAL: &str = r#"
[run]
seed = 5
replicas = 4
[grid]
half_width = 5.0
cells = 100
[time]
horizon = 0.1
dt = 1e-3
[coefficients]
family = "kpz"
"#;

fn shelab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shelab"))
        .args(args)
        .env_remove("SHELAB_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn simulate_writes_profiles_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "min.toml", MINIMAL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let o = shelab(&["simulate", "--config", s(&cfg), "--out", s(&a)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = shelab(&["simulate", "--config", s(&cfg), "--out", s(&b), "--jobs", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let ma = RunManifest::load(&a).unwrap();
    let mb = RunManifest::load(&b).unwrap();
    assert_eq!(ma.files.len(), 4);
    assert_eq!(ma.config_hash, mb.config_hash);
    assert_eq!(ma.files, mb.files);
    for f in &ma.files {
        assert_eq!(fs::read(a.join(&f.path)).unwrap(), fs::read(b.join(&f.path)).unwrap());
    }
    let text = fs::read_to_string(a.join(&ma.files[0].path)).unwrap();
    assert_eq!(text.lines().next(), Some("x,value"));
    assert_eq!(text.lines().count(), 102);
}

#[test]
fn replica_zero_does_not_depend_on_replica_count() {
    let tmp = tempfile::tempdir().unwrap();
    let two = write_config(tmp.path(), "two.toml", &MINIMAL.replace("replicas = 4", "replicas = 2"));
    let four = write_config(tmp.path(), "four.toml", MINIMAL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(shelab(&["simulate", "--config", s(&two), "--out", s(&a)]).status.code(), Some(0));
    assert_eq!(shelab(&["simulate", "--config", s(&four), "--out", s(&b)]).status.code(), Some(0));
    let f = "trajectories/r0000_t0.100000.csv";
    assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
}

#[test]
fn seed_override_changes_trajectories() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "min.toml", MINIMAL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    shelab(&["simulate", "--config", s(&cfg), "--out", s(&a)]);
    shelab(&["simulate", "--config", s(&cfg), "--out", s(&b), "--seed", "6"]);
    let f = "trajectories/r0000_t0.100000.csv";
    assert_ne!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "min.toml", MINIMAL);
    let root = tmp.path().join("root");
    let o = Command::new(env!("CARGO_BIN_EXE_shelab"))
        .args(["simulate", "--config", s(&cfg)])
        .env("SHELAB_OUTPUT_ROOT", &root)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let dirs: Vec<_> = fs::read_dir(&root).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(dirs.len(), 1);
    assert!(dirs[0].to_str().unwrap().starts_with("simulate-"));
}

#[test]
fn unstable_time_step_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &MINIMAL.replace("dt = 1e-3", "dt = 2e-2"));
    let o = shelab(&["simulate", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("time.dt"), "{}", stderr(&o));
}

#[test]
fn missing_inputs_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = shelab(&["verify", "--manifest", s(&tmp.path().join("nothing")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let o = shelab(&["simulate", "--config", s(&tmp.path().join("nothing.toml")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let cfg = write_config(tmp.path(), "typo.toml", &format!("{MINIMAL}\n[extra]\nx = 1\n"));
    let o = shelab(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn standalone_lemma_suite_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("v");
    let o = shelab(&["verify", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let verdicts = fs::read_to_string(out.join("verdicts.csv")).unwrap();
    assert!(verdicts.starts_with("test_id,statistic,se,threshold,verdict\n"));
    assert_eq!(verdicts.lines().count(), 13);
    assert!(verdicts.lines().skip(1).all(|l| l.ends_with(",pass")));
}

const ENSEMBLE: &str = r#"
[run]
seed = 3
replicas = 300
[grid]
half_width = 5.0
cells = 100
[time]
horizon = 0.25
dt = 1e-3
[coefficients]
family = "kpz"
[verify]
suites = ["martingale"]
times = [0.25]
"#;

#[test]
fn martingale_suite_separates_right_and_wrong_drift() {
    let tmp = tempfile::tempdir().unwrap();
    let good = write_config(tmp.path(), "good.toml", ENSEMBLE);
    let bad = write_config(
        tmp.path(),
        "bad.toml",
        &ENSEMBLE.replace("times = [0.25]", "times = [0.25]\ndrift_shift = 1.0"),
    );
    let o = shelab(&["verify", "--config", s(&good), "--out", s(&tmp.path().join("g"))]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = shelab(&["verify", "--config", s(&bad), "--out", s(&tmp.path().join("b"))]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let m = RunManifest::load(&tmp.path().join("b")).unwrap();
    assert!(m.verdicts.iter().any(|v| !v.passed));
}

#[test]
fn frozen_gamma_qv_on_a_direct_run_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "fg.toml",
        &ENSEMBLE.replace("times = [0.25]", "times = [0.25]\nqv_mode = \"frozen_gamma\""),
    );
    let o = shelab(&["verify", "--config", s(&cfg), "--suite", "qv", "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn verify_from_manifest_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "e.toml", &ENSEMBLE.replace("replicas = 300", "replicas = 200"));
    let run = tmp.path().join("run");
    assert_eq!(shelab(&["simulate", "--config", s(&cfg), "--out", s(&run)]).status.code(), Some(0));
    let o = shelab(&["verify", "--manifest", s(&run), "--out", s(&tmp.path().join("v"))]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    // tampering with a dump is detected before any re-simulation
    let f = run.join("trajectories/r0007_t0.250000.csv");
    let mut text = fs::read_to_string(&f).unwrap();
    text.push_str("0,0\n");
    fs::write(&f, text).unwrap();
    let o = shelab(&["verify", "--manifest", s(&run), "--out", s(&tmp.path().join("w"))]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn sweep_rejects_empty_lists() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "sw.toml",
        &format!("{MINIMAL}\n[sweep]\nvariable = \"n\"\nvalues = []\n"),
    );
    let o = shelab(&["sweep", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sweep.values"));
}

#[test]
fn dx_sweep_shows_second_order_convergence() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"
[grid]
half_width = 5.0
cells = 50
[time]
horizon = 0.25
dt = 2e-3
[coefficients]
b = "0.5"
sigma = "0"
beta = 0.5
growth = { theta = 1.0, r = 1.0, upper_b = 0.5, lower_b = 0.0, l_sigma = 1.0 }
[sweep]
variable = "dx"
values = [50, 100, 200]
"#;
    let cfg = write_config(tmp.path(), "dx.toml", text);
    let out = tmp.path().join("o");
    let o = shelab(&["sweep", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = RunManifest::load(&out).unwrap();
    let ratios: Vec<f64> = m
        .sweep
        .iter()
        .filter(|r| r.statistic == "error_ratio")
        .map(|r| r.estimate)
        .collect();
    assert_eq!(ratios.len(), 2);
    for r in ratios {
        assert!((3.5..4.5).contains(&r), "{r}");
    }
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(csv.starts_with("variable,value,statistic,estimate,se\n"));
}

#[test]
fn report_merges_manifests_and_flags_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let direct = write_config(tmp.path(), "d.toml", MINIMAL);
    let slab = write_config(
        tmp.path(),
        "s.toml",
        &format!("{MINIMAL}\n[scheme]\nkind = \"slab(8)\"\n"),
    );
    let bad = write_config(
        tmp.path(),
        "bad.toml",
        &ENSEMBLE.replace("times = [0.25]", "times = [0.25]\ndrift_shift = 1.0"),
    );
    let (d, sl, b) = (tmp.path().join("d"), tmp.path().join("s"), tmp.path().join("b"));
    assert_eq!(shelab(&["simulate", "--config", s(&direct), "--out", s(&d)]).status.code(), Some(0));
    assert_eq!(shelab(&["simulate", "--config", s(&slab), "--out", s(&sl)]).status.code(), Some(0));
    shelab(&["verify", "--config", s(&bad), "--out", s(&b)]);

    let r = tmp.path().join("r1");
    let o = shelab(&["report", "--manifest", s(&d), s(&sl), "--out", s(&r)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let md = fs::read_to_string(r.join("report.md")).unwrap();
    assert!(md.contains("Side by side"));
    assert!(md.contains("slab(8)"));
    assert!(!md.contains("CONFLICT"));
    let long = fs::read_to_string(r.join("report_long.csv")).unwrap();
    assert!(long.starts_with("source,kind,key,time,estimate,se\n"));

    let r = tmp.path().join("r2");
    let o = shelab(&["report", "--manifest", s(&d), s(&b), "--out", s(&r)]);
    assert_eq!(o.status.code(), Some(1));
    let md = fs::read_to_string(r.join("report.md")).unwrap();
    assert!(md.contains("FAILED"));
}
