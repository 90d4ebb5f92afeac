use std::path::{Path, PathBuf};
use std::process::Command;

use linsoc::cli::*;
use linsoc::model::BoundDirection;
use linsoc::sdp::read_dump;

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("problems").join(name)
}

fn scalar() -> (linsoc::model::SocProblem, SolverSection) {
    load_problem(&bundled("scalar1d.json")).unwrap()
}

fn linsoc(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_linsoc")).args(args).output().unwrap()
}

fn write_temp(dir: &tempfile::TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn bundled_problems_round_trip() {
    for name in ["scalar1d.json", "twodim.json"] {
        let file = ProblemFile::load(&bundled(name)).unwrap();
        let problem = file.to_problem().unwrap();
        let again = ProblemFile::from_problem(&problem, file.solver.clone());
        let text = again.to_json();
        let reparsed = ProblemFile::from_json(&text).unwrap();
        assert_eq!(reparsed, again);
        assert_eq!(reparsed.to_problem().unwrap(), problem, "{name}");
    }
}

#[test]
fn malformed_polynomial_names_its_field() {
    let text = std::fs::read_to_string(bundled("twodim.json")).unwrap().replace("6*x + x^3", "6*x + * x^3");
    let err = ProblemFile::from_json(&text).unwrap().to_problem().unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let CliError::Parse { field, .. } = &err else { panic!("{err}") };
    assert_eq!(field, "dynamics.drift[1]");
}

#[test]
fn json_errors_carry_a_line() {
    let err = ProblemFile::from_json("{\n  \"schema_version\": 1,\n  \"name\": 3\n}").unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");
    let err = ProblemFile::from_json(&std::fs::read_to_string(bundled("scalar1d.json")).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 9")).unwrap_err();
    assert!(matches!(err, CliError::Parse { ref field, .. } if field == "schema_version"));
    let err = ProblemFile::from_json(&std::fs::read_to_string(bundled("scalar1d.json")).unwrap().replace("\"name\"", "\"nmae\"")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn noise_mismatch_is_a_model_error() {
    let text = std::fs::read_to_string(bundled("scalar1d.json")).unwrap().replace("\"noise_gain\": [[\"1\"]]", "\"noise_gain\": [[\"x\"]]");
    let err = ProblemFile::from_json(&text).unwrap().to_problem().unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
}

#[test]
fn quadratic_lower_bound() {
    let (problem, section) = scalar();
    let r = run_solve(&problem, &section, 2, 2, BoundDirection::Lower, &SolveOptions::default()).unwrap();
    assert!((r.gamma - 0.8545).abs() < 1e-3, "{}", r.gamma);
    assert!(r.certificate.passed && r.sandwich.passed);
    let capped = SolverSection { cap_sigma0: Some(true), ..section };
    let r = run_solve(&problem, &capped, 2, 2, BoundDirection::Lower, &SolveOptions::default()).unwrap();
    assert!((r.gamma - 1.0).abs() < 1e-6, "{}", r.gamma);
}

#[test]
fn solves_are_reproducible() {
    let (problem, section) = scalar();
    let run = || {
        let mut r = run_solve(&problem, &section, 6, 6, BoundDirection::Upper, &SolveOptions::default()).unwrap();
        r.wall_time_s = 0.0;
        r
    };
    assert_eq!(run(), run());
}

#[test]
fn single_cell_hierarchy_matches_solve() {
    let (problem, section) = scalar();
    let table = run_hierarchy(&problem, &section, &[4], &[4], BoundDirection::Lower, 0);
    let mut cell = table.cells[0][0].report.clone().unwrap();
    let mut solo = run_solve(&problem, &section, 4, 4, BoundDirection::Lower, &SolveOptions::default()).unwrap();
    cell.wall_time_s = 0.0;
    solo.wall_time_s = 0.0;
    assert_eq!(cell, solo);
    assert!(table.violations.is_empty());
    assert_eq!(table.gamma(4, 4), Some(solo.gamma));
}

#[test]
fn hierarchy_table_layout() {
    let (problem, section) = scalar();
    let table = run_hierarchy(&problem, &section, &[2, 4], &[2, 4], BoundDirection::Upper, 0);
    let text = table.to_text();
    assert!(text.lines().nth(1).unwrap().ends_with("2         4"), "{text}");
    let csv = table.to_csv();
    assert_eq!(csv.lines().count(), 2 + 4);
    assert!(csv.lines().nth(2).unwrap().starts_with("2,2,upper,"));
}

#[test]
fn range_parsing() {
    assert_eq!(parse_range("2:10:2").unwrap(), vec![2, 4, 6, 8, 10]);
    assert_eq!(parse_range("4").unwrap(), vec![4]);
    assert_eq!(parse_range("3:5").unwrap(), vec![3, 4, 5]);
    assert!(parse_range("5:3:1").is_err());
    assert!(parse_range("2:4:0").is_err());
    assert!(parse_range("a:b").is_err());
}

fn report_with_psi(psi: &str) -> RunReport {
    let (problem, section) = scalar();
    let mut r = run_solve(&problem, &section, 2, 2, BoundDirection::Lower, &SolveOptions::default()).unwrap();
    r.psi = psi.into();
    r
}

#[test]
fn samples_of_unit_desirability_have_zero_value() {
    let (problem, _) = scalar();
    let csv = emit_samples(&report_with_psi("1"), &problem, 201).unwrap();
    let rows: Vec<&str> = csv.lines().skip(2).collect();
    assert_eq!(rows.len(), 201);
    assert!(rows.iter().all(|r| r.ends_with(",1.0,0.0,0")), "{}", rows[0]);
    assert!(rows[0].starts_with("-1.0,") && rows[200].starts_with("1.0,"));
}

#[test]
fn nonpositive_desirability_is_flagged() {
    let (problem, _) = scalar();
    let csv = emit_samples(&report_with_psi("x"), &problem, 5).unwrap();
    let rows: Vec<&str> = csv.lines().skip(2).collect();
    assert_eq!(rows[0], "-1.0,-1.0,inf,1");
    assert_eq!(rows[2], "0.0,0.0,inf,1");
    assert!(rows[4].ends_with(",0"));
}

#[test]
fn verify_rejects_coarse_grid_with_hint() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(bundled("scalar1d.json")).unwrap().replace("x^3 + 5*x^2 + x", "40*x");
    let path = write_temp(&dir, "fast.json", &text);
    let (problem, section) = load_problem(&path).unwrap();
    let low = run_solve(&problem, &section, 2, 2, BoundDirection::Lower, &SolveOptions::default()).unwrap();
    let err = run_verify(&problem, Some(&low), None, &VerifyOptions { grid: Some(11), ..VerifyOptions::default() }).unwrap_err();
    assert_eq!(err.exit_code(), 6);
    assert!(err.to_string().contains("nodes on that axis suffice"), "{err}");
}

#[test]
fn verify_passes_on_trivial_bounds() {
    let (problem, _) = scalar();
    let low = report_with_psi("0");
    let mut up = report_with_psi("1");
    up.direction = BoundDirection::Upper;
    let rollout = RolloutOptions { n_traj: 50, dt: 1e-3, seed: 1, starts: vec![vec![0.0]] };
    let v = run_verify(&problem, Some(&low), Some(&up), &VerifyOptions { grid: Some(201), rollout: Some(rollout), ..VerifyOptions::default() }).unwrap();
    assert!(v.passed, "{v:?}");
    assert_eq!(v.fd_grid, Some(vec![201]));
    assert_eq!(v.rollouts[0].value_lower_bound, Some(0.0));
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_temp(&dir, "bad.json", "{ not json");
    assert_eq!(linsoc(&[bad.to_str().unwrap()]).status.code(), Some(2));
    let missing = dir.path().join("missing.json");
    assert_eq!(linsoc(&[missing.to_str().unwrap()]).status.code(), Some(2));
    let text = std::fs::read_to_string(bundled("scalar1d.json")).unwrap().replace("\"noise_gain\": [[\"1\"]]", "\"noise_gain\": [[\"x\"]]");
    let model = write_temp(&dir, "model.json", &text);
    assert_eq!(linsoc(&[model.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn binary_solve_writes_report_and_dump() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let dump = dir.path().join("prog.txt");
    let samples = dir.path().join("samples.csv");
    let problem = bundled("scalar1d.json");
    let o = linsoc(&[
        problem.to_str().unwrap(),
        "--deg-psi",
        "4",
        "--direction",
        "both",
        "--out",
        out.to_str().unwrap(),
        "--dump-sdp",
        dump.to_str().unwrap(),
        "--samples",
        samples.to_str().unwrap(),
        "--sample-points",
        "11",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("lower bound, degree 4/4: gamma = 0.5440"), "{stdout}");
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc["schema_version"], 1);
    let reports: Vec<RunReport> = serde_json::from_value(doc["reports"].clone()).unwrap();
    assert_eq!(reports.len(), 2);
    assert!(reports.iter().all(|r| r.certificate.passed));
    for suffix in ["lower", "upper"] {
        let path = format!("{}.{suffix}", dump.display());
        let prog = read_dump(std::io::BufReader::new(std::fs::File::open(path).unwrap())).unwrap();
        assert!(prog.num_vars() > 0);
        let csv = std::fs::read_to_string(format!("{}.{suffix}", samples.display())).unwrap();
        assert_eq!(csv.lines().count(), 2 + 11);
    }
}

#[test]
fn binary_hierarchy_and_verify() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("table.csv");
    let problem = bundled("scalar1d.json");
    let o = linsoc(&[problem.to_str().unwrap(), "--hierarchy", "2:4:2", "--csv", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("lower bound γ") && !text.contains("violation"), "{text}");
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 2 + 4);

    let o = linsoc(&[problem.to_str().unwrap(), "--direction", "both", "--verify", "--grid", "401", "--rollouts", "100", "--dt", "1e-3"]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(o.status.code(), Some(0), "{text}");
    assert!(text.contains("PASS"));
}
