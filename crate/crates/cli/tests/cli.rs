use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use aggdiff::cartesian::CartesianField;
use aggdiff_cli::summary::validate;
use serde_json::Value;

fn aggdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aggdiff")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn list_shows_the_registry() {
    let o = aggdiff(&["list"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 10);
    for name in ["stationary-profile", "rearrangement-3d", "envelope-ode"] {
        assert!(out.contains(name), "{out}");
    }
}

#[test]
fn help_exits_zero() {
    for args in [&["--help"][..], &["run", "--help"], &["evolve", "--help"]] {
        let o = aggdiff(args);
        assert!(o.status.success(), "{args:?}");
        assert!(stdout(&o).contains("Usage"));
    }
}

#[test]
fn unknown_experiment_lists_the_registry() {
    let o = aggdiff(&["run", "no-such-experiment"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("no-such-experiment") && err.contains("stationary-profile"), "{err}");
}

#[test]
fn config_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "# comment\nparams.m = 2\nparams.d = three\n").unwrap();
    let o = aggdiff(&["run", "stationary-profile", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    fs::write(&cfg, "params.m = 2\nparams.nope = 1\n").unwrap();
    let o = aggdiff(&["run", "stationary-profile", "--config", cfg.to_str().unwrap()]);
    assert!(stderr(&o).contains("line 2") && stderr(&o).contains("params.nope"), "{}", stderr(&o));
}

#[test]
fn fast_experiments_write_a_valid_run_directory() {
    let root = tempfile::tempdir().unwrap();
    for name in ["envelope-ode", "stationary-profile"] {
        let dir = root.path().join(name);
        let o = aggdiff(&["run", name, "--out", dir.to_str().unwrap()]);
        assert!(o.status.success(), "{name}: {}{}", stdout(&o), stderr(&o));
        assert!(stdout(&o).contains("PASS"));
        for sub in ["config.resolved", "summary.json", "series", "snapshots"] {
            assert!(dir.join(sub).exists(), "{name}: missing {sub}");
        }
        let s = summary(&dir);
        assert_eq!(validate(&s), Ok(()));
        assert_eq!(s["experiment"], name);
        assert_eq!(s["pass"], true);
        let o = aggdiff(&["validate", dir.join("summary.json").to_str().unwrap()]);
        assert!(o.status.success());
    }
}

#[test]
fn failing_criterion_sets_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("strict");
    let o = aggdiff(&["run", "stationary-profile", "--set", "threshold.stationary_rel=1e-30", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert_eq!(summary(&out)["pass"], false);
}

#[test]
fn runs_are_deterministic() {
    let root = tempfile::tempdir().unwrap();
    let read = |d: &Path| {
        let mut files = Vec::new();
        for sub in ["summary.json", "config.resolved", "series/contraction.csv", "series/chaining.csv"] {
            files.push(fs::read_to_string(d.join(sub)).unwrap_or_default());
        }
        files
    };
    let mut outputs = Vec::new();
    for i in 0..2 {
        let dir = root.path().join(format!("r{i}"));
        let o = aggdiff(&["run", "implicit-onestep", "--set", "seed=7", "--set", "implicit.pairs=20", "--out", dir.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push(read(&dir));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn monotonicity_counterexample_crosses_the_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cx");
    let o = aggdiff(&["run", "counterexample-monotonicity", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stdout(&o));
    let s = summary(&out);
    let crit = s["criteria"].as_array().unwrap();
    assert!(crit.iter().all(|c| c["pass"] == true));
    let analysed = aggdiff(&["analyze", "--metric", "monotonicity", "--in", out.to_str().unwrap()]);
    assert!(analysed.status.success(), "{}", stderr(&analysed));
    let worst = stdout(&analysed)
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
        .fold(0.0, f64::max);
    assert!(worst > 1e-10, "{worst}");
}

#[test]
fn evolve_and_analyze_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ev");
    let o = aggdiff(&[
        "evolve", "--init", "uniform-ball:2", "--t-end", "0.5", "--n", "100", "--domain-radius", "8",
        "--snapshots", "0.25,0.5", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let header = fs::read_to_string(out.join("series/diagnostics.csv")).unwrap();
    assert!(header.starts_with("t,mass,energy,sup_norm,support_radius,sup_mass_err,w2_to_target"));
    let w2 = stdout(&aggdiff(&["analyze", "--metric", "w2", "--in", out.to_str().unwrap()]));
    let rows: Vec<&str> = w2.lines().collect();
    assert_eq!(rows[0], "t,w2");
    assert_eq!(rows.len(), 3);
    assert!(rows[2].ends_with(",0.0000000000000000e0"));
}

#[test]
fn cartesian_writes_field_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ca");
    let o = aggdiff(&["cartesian", "--n", "16", "--h", "0.5", "--t-end", "0.02", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let meta: Value = serde_json::from_str(&fs::read_to_string(out.join("snapshots/field_final.json")).unwrap()).unwrap();
    assert_eq!(meta["n"], 16);
    assert!((meta["mass"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    let csv = fs::File::open(out.join("snapshots/field_final.csv")).unwrap();
    let field = CartesianField::read_csv(std::io::BufReader::new(csv), 16, 0.5).unwrap();
    assert!((field.total_mass() - meta["mass"].as_f64().unwrap()).abs() < 1e-12);
}

#[test]
fn stationary_and_envelope_write_csv() {
    let o = aggdiff(&["stationary", "--n", "50"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.starts_with("r,rho,M\n"));
    assert_eq!(out.lines().count(), 51);
    let o = aggdiff(&["envelope", "--kind", "super", "--k0", "2", "--t-end", "1", "--n", "200"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("t,k,rate_fit\n"));
}

#[test]
fn parallel_jobs_write_one_directory_per_experiment() {
    let root = tempfile::tempdir().unwrap();
    let o = aggdiff(&["run", "envelope-ode", "stationary-profile", "--jobs", "2", "--out", root.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    for name in ["envelope-ode", "stationary-profile"] {
        assert_eq!(validate(&summary(&root.path().join(name))), Ok(()));
        assert!(stdout(&o).contains(&format!("{name}: PASS")));
    }
}
