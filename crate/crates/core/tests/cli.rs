use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

const SMOKE: &str = r#"
[model]
sites = 4

[run]
steps = 10
trajectories = 3
seed = 11
densities = true

[cluster]
ells = [1, 2, 3]
tau_max = 3

[fit]
range = [1.0, 3.0]

[two_cluster]
ell = 1
tau = 2
delta_i = [0, 1]
delta_t = [0, 2]

[autocorr]
delta_max = 3
"#;

fn trajstat(dir: &Path, args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_trajstat"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs");
    out.status.code().unwrap_or(-1)
}

fn setup(body: &str) -> tempfile::TempDir {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("run.toml"), body).unwrap();
    d
}

fn records(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir.join("records"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "rec"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn records_do_not_depend_on_thread_count() {
    let d = setup(SMOKE);
    let p = d.path();
    assert_eq!(
        trajstat(
            p,
            &[
                "trajectory",
                "--config",
                "run.toml",
                "--out",
                "a",
                "--threads",
                "1"
            ]
        ),
        0
    );
    assert_eq!(
        trajstat(
            p,
            &[
                "trajectory",
                "--config",
                "run.toml",
                "--out",
                "b",
                "--threads",
                "4"
            ]
        ),
        0
    );
    let (a, b) = (records(&p.join("a")), records(&p.join("b")));
    assert_eq!(a.len(), 3);
    assert_eq!(a, b);
    assert_eq!(
        fs::read(p.join("a/manifest.csv")).unwrap(),
        fs::read(p.join("b/manifest.csv")).unwrap()
    );
}

#[test]
fn seed_flag_changes_the_records() {
    let d = setup(SMOKE);
    let p = d.path();
    assert_eq!(
        trajstat(p, &["trajectory", "--config", "run.toml", "--out", "a"]),
        0
    );
    assert_eq!(
        trajstat(
            p,
            &[
                "trajectory",
                "--config",
                "run.toml",
                "--out",
                "b",
                "--seed",
                "12"
            ]
        ),
        0
    );
    assert_ne!(records(&p.join("a")), records(&p.join("b")));
}

#[test]
fn resume_keeps_finished_records() {
    let d = setup(SMOKE);
    let p = d.path();
    assert_eq!(
        trajstat(p, &["trajectory", "--config", "run.toml", "--out", "o"]),
        0
    );
    let first = records(&p.join("o"));
    let victim = p.join("o/records").join(&first[1].0);
    fs::remove_file(&victim).unwrap();
    let kept = p.join("o/records").join(&first[0].0);
    let stamp = fs::metadata(&kept).unwrap().modified().unwrap();
    assert_eq!(
        trajstat(
            p,
            &[
                "trajectory",
                "--config",
                "run.toml",
                "--out",
                "o",
                "--resume"
            ]
        ),
        0
    );
    assert_eq!(records(&p.join("o")), first);
    assert_eq!(fs::metadata(&kept).unwrap().modified().unwrap(), stamp);
}

#[test]
fn every_subcommand_runs_on_the_smoke_config() {
    let d = setup(SMOKE);
    let p = d.path();
    let start = Instant::now();
    for cmd in [
        "trajectory",
        "cluster",
        "two-cluster",
        "autocorr",
        "fit",
        "empirical",
    ] {
        assert_eq!(
            trajstat(p, &[cmd, "--config", "run.toml", "--out", "o"]),
            0,
            "{cmd}"
        );
    }
    for f in [
        "manifest.csv",
        "cluster.csv",
        "two_cluster.csv",
        "autocorr.csv",
        "fits.csv",
        "empirical_cluster.csv",
        "config.toml",
    ] {
        assert!(p.join("o").join(f).exists(), "{f}");
    }
    let cluster = fs::read_to_string(p.join("o/cluster.csv")).unwrap();
    assert_eq!(cluster.lines().count(), 1 + 3 * 3);
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn exit_codes() {
    let d = setup(SMOKE);
    let p = d.path();
    assert_eq!(trajstat(p, &["cluster"]), 1);
    assert_eq!(trajstat(p, &["cluster", "--config", "missing.toml"]), 1);
    fs::write(p.join("bad.toml"), "[model]\nsites = 4\ngamma = -1.0\n").unwrap();
    assert_eq!(trajstat(p, &["cluster", "--config", "bad.toml"]), 1);
    fs::write(p.join("typo.toml"), "[model]\nsites = 4\nsubsteps_ = 3\n").unwrap();
    assert_eq!(trajstat(p, &["cluster", "--config", "typo.toml"]), 1);
    fs::write(p.join("big.toml"), "[model]\nsites = 8\n").unwrap();
    assert_eq!(trajstat(p, &["validate", "--config", "big.toml"]), 1);
}

#[test]
fn fit_outside_the_grid_is_a_compute_failure() {
    let d = setup("[model]\nsites = 4\n[cluster]\nells = [1, 2]\ntau_max = 3\n");
    let p = d.path();
    assert_eq!(
        trajstat(p, &["cluster", "--config", "run.toml", "--out", "o"]),
        0
    );
    assert_eq!(
        trajstat(p, &["fit", "--config", "run.toml", "--out", "o"]),
        2
    );
    assert!(fs::read_to_string(p.join("o/failures.log"))
        .unwrap()
        .contains("fit"));
}

#[test]
fn validate_reports_invariant_failures() {
    let d = setup("[model]\nsites = 3\n[validate]\nsteps = 20\n");
    let p = d.path();
    assert_eq!(
        trajstat(p, &["validate", "--config", "run.toml", "--out", "ok"]),
        0
    );
    assert!(fs::read_to_string(p.join("ok/validate.txt"))
        .unwrap()
        .contains("PASS"));

    fs::write(
        p.join("corrupt.toml"),
        "[model]\nsites = 3\n[validate]\nsteps = 20\ncorrupt_gate_order = true\n",
    )
    .unwrap();
    assert_eq!(
        trajstat(p, &["validate", "--config", "corrupt.toml", "--out", "bad"]),
        3
    );
    assert!(fs::read_to_string(p.join("bad/validate.txt"))
        .unwrap()
        .contains("FAIL trotter consistency"));

    fs::write(
        p.join("chi2.toml"),
        "[model]\nsites = 5\n[truncation]\nmax_bond = 2\n[validate]\nsteps = 5\n",
    )
    .unwrap();
    assert_eq!(
        trajstat(p, &["validate", "--config", "chi2.toml", "--out", "chi"]),
        3
    );
}
