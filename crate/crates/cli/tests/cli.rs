use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use assim_cli::presets::{find, PRESETS};
use assim_cli::{parse_config, CliError};

fn assim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_assim")).args(args).output().expect("binary runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/configs")
}

fn golden(name: &str) -> Vec<u8> {
    std::fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap()
}

fn read(dir: &Path, file: &str) -> String {
    std::fs::read_to_string(dir.join(file)).unwrap()
}

fn run_preset(dir: &Path, name: &str, extra: &[&str]) -> Output {
    let mut args = vec!["preset", name, "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    assim(&args)
}

#[test]
fn registry_has_cited_presets() {
    assert!(PRESETS.len() >= 15);
    let out = assim(&["list"]);
    assert!(out.status.success());
    let listing = String::from_utf8(out.stdout).unwrap();
    for p in PRESETS {
        assert!(p.program.starts_with('p') && p.program.ends_with(".m"), "{}", p.name);
        assert!(listing.contains(p.name));
        let cfg = p.config(&[]).unwrap();
        assert_eq!(cfg.program.as_deref(), Some(p.program));
        assert_eq!(cfg.name, p.name);
    }
}

#[test]
fn preset_parameters_match_their_programs() {
    let p9 = find("p9_3dvar_logistic").unwrap().raw();
    assert_eq!(p9.get("model.r").unwrap().to_string(), "4");
    assert_eq!(p9.get("noise.gamma").unwrap().to_string(), "0.1");
    assert_eq!(p9.get("algorithm.eta").unwrap().to_string(), "0.2");
    let p12 = find("p12_enkf_sin").unwrap().raw();
    for (k, v) in [("model.alpha", "2.5"), ("noise.sigma", "0.3"), ("noise.gamma", "1"), ("algorithm.members", "100")] {
        assert_eq!(p12.get(k).unwrap().to_string(), v, "{k}");
    }
    let p1 = find("p1_sin_dynamics").unwrap().raw();
    assert_eq!(p1.get("noise.sigma").unwrap().to_string(), "0.25");
    let p2 = find("p2_grid_logistic_r2").unwrap().raw();
    for (k, v) in [("model.r", "2"), ("prior.c0", "0.01"), ("noise.gamma", "0.1")] {
        assert_eq!(p2.get(k).unwrap().to_string(), v, "{k}");
    }
}

#[test]
fn p3_config_round_trips_to_normal_form() {
    let messy = std::fs::read_to_string(configs().join("p3_messy.cfg")).unwrap();
    let normalized = std::fs::read_to_string(configs().join("p3_normalized.cfg")).unwrap();
    let cfg = parse_config(&messy).unwrap();
    assert_eq!(cfg.serialize(), normalized);
    assert_eq!(parse_config(&cfg.serialize()).unwrap(), cfg);
    assert_eq!(parse_config(&cfg.echo()).unwrap().echo().lines().skip(2).collect::<Vec<_>>(), cfg.echo().lines().skip(2).collect::<Vec<_>>());
}

#[test]
fn fig_kf_matches_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_preset(dir.path(), "fig_kf", &["--override", "experiment.steps=20"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let series = read(dir.path(), "fig_kf_series.csv");
    assert_eq!(series.lines().nth(1).unwrap(), "j,truth1,truth2,mean1,mean2,trace_cov,error");
    assert!(!series.contains('\r'));
    assert_eq!(series.into_bytes(), golden("fig_kf_series.csv"));
    assert_eq!(std::fs::read(dir.path().join("fig_kf_summary.csv")).unwrap(), golden("fig_kf_summary.csv"));
    for f in ["fig_kf.gp", "fig_kf_config_echo.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn grid_and_chain_match_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_preset(dir.path(), "p2_grid_logistic_r2", &["--override", "grid.step=0.05"]).status.success());
    assert_eq!(std::fs::read(dir.path().join("p2_grid_logistic_r2_series.csv")).unwrap(), golden("p2_grid_logistic_r2_series.csv"));
    let out = run_preset(dir.path(), "p3_rwm_logistic", &["--override", "algorithm.samples=200", "--override", "output.trace_stride=20"]);
    assert!(out.status.success());
    assert_eq!(std::fs::read(dir.path().join("p3_rwm_logistic_series.csv")).unwrap(), golden("p3_rwm_logistic_series.csv"));
    assert_eq!(std::fs::read(dir.path().join("p3_rwm_logistic_summary.csv")).unwrap(), golden("p3_rwm_logistic_summary.csv"));
}

#[test]
fn fig_mcmc1_emits_grid_and_histogram_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_preset(dir.path(), "fig_mcmc1", &["--override", "algorithm.samples=20000"]);
    assert!(out.status.success());
    let series = read(dir.path(), "fig_mcmc1_series.csv");
    let lines: Vec<&str> = series.lines().collect();
    assert_eq!(lines[1], "v0,grid_posterior,histogram");
    assert_eq!(lines.len() - 2, 1961);
    assert!(lines[2].starts_with("1.0000000000000000e-2,"));
    assert!(read(dir.path(), "fig_mcmc1_summary.csv").contains("tv_distance,"));
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for name in ["p12_enkf_sin", "p5_pcn_sin", "p7_w4dvar_sin"] {
        assert!(run_preset(a.path(), name, &[]).status.success());
        assert!(run_preset(b.path(), name, &[]).status.success());
        for suffix in ["_series.csv", "_summary.csv"] {
            let f = format!("{name}{suffix}");
            assert_eq!(read(a.path(), &f), read(b.path(), &f), "{f}");
        }
    }
}

#[test]
fn config_echo_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_preset(dir.path(), "p14_sirs_sin", &["--override", "experiment.steps=200"]).status.success());
    let echo = dir.path().join("p14_sirs_sin_config_echo.txt");
    let again = tempfile::tempdir().unwrap();
    let out = assim(&["run", echo.to_str().unwrap(), "--out", again.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read(dir.path(), "p14_sirs_sin_series.csv"), read(again.path(), "p14_sirs_sin_series.csv"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(assim(&["preset", "p1_sin_dynamics", "--out", d]).status.code(), Some(0));
    assert_eq!(assim(&["preset", "fig_kf", "--override", "noise.gama=1"]).status.code(), Some(2));
    assert_eq!(assim(&["preset", "fig_kf", "--override", "noise.gamma=-1"]).status.code(), Some(2));
    assert_eq!(assim(&["preset", "no_such_preset"]).status.code(), Some(2));
    let bu = assim(&["run", configs().join("blowup.cfg").to_str().unwrap(), "--out", d]);
    assert_eq!(bu.status.code(), Some(3));
    let record = read(dir.path(), "blowup_error.txt");
    assert!(record.contains("error.kind = blow_up") && record.contains("error.exit_code = 3"), "{record}");
    let failing = ["--override", "check.mse_max=1e-9", "--override", "experiment.steps=200"];
    assert_eq!(run_preset(dir.path(), "p9_3dvar_logistic", &failing).status.code(), Some(0));
    let mut with_check = failing.to_vec();
    with_check.push("--check");
    assert_eq!(run_preset(dir.path(), "p9_3dvar_logistic", &with_check).status.code(), Some(4));
    assert!(read(dir.path(), "p9_3dvar_logistic_error.txt").contains("error.kind = check"));
}

#[test]
fn validate_reports_defaults_and_errors() {
    let out = assim(&["validate", configs().join("p3_messy.cfg").to_str().unwrap()]);
    assert!(out.status.success());
    let echo = String::from_utf8(out.stdout).unwrap();
    assert!(echo.contains("# defaulted: ") && echo.contains("algorithm.burn_in = 10000"));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "experiment.name = x\nexperiment.knd = filter\n").unwrap();
    let out = assim(&["validate", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert!(matches!(parse_config("experiment.knd = filter\n"), Err(CliError::Parse { line: 1, .. })));
}

#[test]
fn batch_mode_runs_configs_in_parallel() {
    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for (i, name) in ["p1_sin_dynamics", "p11_exkf_sin", "p16_lorenz63"].iter().enumerate() {
        let path = dir.path().join(format!("c{i}.cfg"));
        std::fs::write(&path, find(name).unwrap().full_text()).unwrap();
        paths.push(path.to_str().unwrap().to_string());
    }
    let out_dir = dir.path().join("out");
    let mut args = vec!["run", "--jobs", "3", "--out", out_dir.to_str().unwrap()];
    args.extend(paths.iter().map(String::as_str));
    assert_eq!(assim(&args).status.code(), Some(0));
    for name in ["p1_sin_dynamics", "p11_exkf_sin", "p16_lorenz63"] {
        assert!(out_dir.join(format!("{name}_series.csv")).exists());
    }
    let dup = vec!["run", "--jobs", "2", paths[0].as_str(), paths[0].as_str()];
    assert_eq!(assim(&dup).status.code(), Some(2));
}
