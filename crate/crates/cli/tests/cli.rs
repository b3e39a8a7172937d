use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_smallarea");
const FAST: [&str; 6] = ["--chains", "2", "--iterations", "2000", "--burn-in", "1000"];

fn demo_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo/demo.cfg")
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn run_in(out: &Path, args: &[&str], extra: &[&str]) -> Output {
    let config = demo_config();
    let mut all: Vec<&str> = args.to_vec();
    all.extend([
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    all.extend(extra);
    run(&all)
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["pipeline"], &FAST);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "records.csv",
        "boundaries.geojson",
        "truth.csv",
        "direct.csv",
        "graph.toml",
        "posterior.csv",
        "fig1_sample_size.svg",
        "fig2_prevalence.svg",
        "fig3_country_zoom.svg",
        "fig4_5_comparison.svg",
    ] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let posterior = fs::read_to_string(dir.path().join("posterior.csv")).unwrap();
    assert!(posterior.starts_with("# generator: smallarea "));
    assert!(posterior.contains("# seed: 7\n"));
    assert!(posterior.contains("# config_sha256: "));
    // header line plus 45 regions
    assert_eq!(posterior.lines().filter(|l| !l.starts_with('#')).count(), 46);
    let svg = fs::read_to_string(dir.path().join("fig1_sample_size.svg")).unwrap();
    assert!(svg.contains("<!-- seed: 7 -->"));
    let geo = fs::read_to_string(dir.path().join("boundaries.geojson")).unwrap();
    assert!(geo.contains("\"seed\":\"7\""));
}

#[test]
fn pipeline_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert_eq!(run_in(d.path(), &["pipeline"], &FAST).status.code(), Some(0));
    }
    assert_eq!(files(a.path()), files(b.path()));
}

#[test]
fn pipeline_equals_step_sequence() {
    let whole = tempfile::tempdir().unwrap();
    assert_eq!(run_in(whole.path(), &["pipeline"], &FAST).status.code(), Some(0));
    let steps = tempfile::tempdir().unwrap();
    for (cmd, extra) in [
        ("simulate", &[][..]),
        ("direct", &[][..]),
        ("adjacency", &[][..]),
        ("smooth", &FAST[..]),
        ("render", &[][..]),
        ("compare", &[][..]),
    ] {
        let out = run_in(steps.path(), &[cmd], extra);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{cmd}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    assert_eq!(files(whole.path()), files(steps.path()));
}

#[test]
fn seed_changes_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(run_in(a.path(), &["simulate"], &[]).status.code(), Some(0));
    let config = demo_config();
    let out = run(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "8",
        "--out",
        b.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_ne!(
        fs::read(a.path().join("records.csv")).unwrap(),
        fs::read(b.path().join("records.csv")).unwrap()
    );
}

#[test]
fn strict_non_convergence_exits_3_and_still_writes() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["simulate", "direct", "adjacency"] {
        assert_eq!(run_in(dir.path(), &[cmd], &[]).status.code(), Some(0));
    }
    // 2 chains of 500 retained draws cannot reach the ESS threshold for the
    // variance components
    let short = ["--chains", "2", "--iterations", "520", "--burn-in", "20"];
    let mut args = short.to_vec();
    args.push("--strict");
    let out = run_in(dir.path(), &["smooth"], &args);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ESS"));
    let posterior = fs::read_to_string(dir.path().join("posterior.csv")).unwrap();
    assert!(posterior.contains("rhat_theta,ess_theta"));

    // without --strict the same run succeeds
    let out = run_in(dir.path(), &["smooth"], &short);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn usage_and_validation_errors_exit_2() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["direct", "--no-such-flag"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = run(&["direct", "--out", d, "--records", "/definitely/missing.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.csv"));
    // simulate needs a scenario
    assert_eq!(run(&["simulate", "--out", d]).status.code(), Some(2));
    // invalid MCMC settings are a validation error
    let out = run_in(dir.path(), &["pipeline"], &["--chains", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    let text = fs::read_to_string(demo_config()).unwrap() + "\nmystery = 1\n";
    fs::write(&cfg, text).unwrap();
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mystery"));
}
