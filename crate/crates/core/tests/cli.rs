use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn vsie(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vsie"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("VSIE_OUT")
        .output()
        .expect("binary runs")
}

fn run_fixture(sub: &str, name: &str, extra: &[&str]) -> (TempDir, Output) {
    let dir = TempDir::new().unwrap();
    let path = fixture(name);
    let mut args = vec![sub, path.to_str().unwrap()];
    args.extend_from_slice(extra);
    let out = vsie(dir.path(), &args);
    (dir, out)
}

fn json(dir: &TempDir, name: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.path().join(name)).unwrap()).unwrap()
}

fn csv_rows(dir: &TempDir) -> (String, Vec<Vec<f64>>) {
    let text = fs::read_to_string(dir.path().join("solution.csv")).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn check_forced_quadratic_certifies() {
    let (dir, out) = run_fixture("check", "forced_quadratic.prob", &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report = json(&dir, "report.json");
    let checks = report["checks"].as_array().unwrap();
    let get = |name: &str| checks.iter().find(|c| c["name"] == name).unwrap();
    let c = get("contraction");
    assert_eq!(c["holds"], "holds");
    assert!((c["value"].as_f64().unwrap() - 1.0 / 81.0).abs() < 1e-6);
    assert!(get("x0")["value"].as_f64().unwrap() <= 3.0);
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.starts_with("hypothesis"));
}

#[test]
fn forced_asymptotics_profile_runs_its_set() {
    let (dir, out) = run_fixture("check", "forced_quadratic.prob", &["--profile", "thm-2.4"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report = json(&dir, "report.json");
    assert_eq!(report["profile"], "thm-2.4");
    let names: Vec<&str> = report["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(
        names,
        ["forcing_lower_bound", "zero_response_moment", "forcing_moment", "lipschitz_envelope", "x0"]
    );
}

#[test]
fn fixpoint_reaches_unit_solution() {
    let (dir, out) = run_fixture("fixpoint", "unit_fixed_point.prob", &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let (header, rows) = csv_rows(&dir);
    assert_eq!(header, "x,y,yprime");
    let err = rows.iter().map(|r| (r[1] - 1.0).abs()).fold(0.0, f64::max);
    assert!(err <= 1e-8, "{err}");
    assert_eq!(json(&dir, "report.json")["iteration"]["converged"], true);
}

#[test]
fn missing_file_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let out = vsie(dir.path(), &["solve", "missing.prob"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("file not found"));
}

#[test]
fn reports_are_deterministic() {
    let (a, _) = run_fixture("check", "unit_fixed_point.prob", &[]);
    let (b, _) = run_fixture("check", "unit_fixed_point.prob", &[]);
    let read = |d: &TempDir| fs::read(d.path().join("report.json")).unwrap();
    assert_eq!(read(&a), read(&b));
    let (a, _) = run_fixture("fixpoint", "forced_quadratic.prob", &[]);
    let (b, _) = run_fixture("fixpoint", "forced_quadratic.prob", &[]);
    assert_eq!(read(&a), read(&b));
}

#[test]
fn divergent_nehari_tail_fails_check() {
    let (dir, out) = run_fixture("check", "nehari_divergent.prob", &[]);
    assert_eq!(out.status.code(), Some(1));
    let report = json(&dir, "report.json");
    assert_eq!(report["all_hold"], false);
    assert_ne!(report["checks"][0]["holds"], "holds");
}

#[test]
fn nehari_and_linear_growth_profiles() {
    let (dir, out) = run_fixture("check", "nehari.prob", &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!((json(&dir, "report.json")["checks"][0]["value"].as_f64().unwrap() - 1.0).abs() < 1e-8);
    let (_, out) = run_fixture("check", "linear_growth.prob", &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    // M = 1 is below the linear-growth profile's M > 1 requirement
    let (_, out) = run_fixture("check", "nehari_divergent.prob", &["--profile", "thm-4.2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("M > 1"));
}

#[test]
fn solve_matches_exact_solution() {
    let (dir, out) = run_fixture("solve", "sine_forcing.prob", &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let (_, rows) = csv_rows(&dir);
    let err = rows
        .iter()
        .map(|r| (r[1] - (r[0].sin() - 1.0 / (6.0 * (r[0] + 1.0).powi(2)))).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-6, "{err}");
    assert_eq!(rows.last().unwrap()[0], 50.0);
}

#[test]
fn discrete_and_step_measure_agree() {
    let (d1, o1) = run_fixture("discrete", "recurrence.prob", &[]);
    let (d2, o2) = run_fixture("solve", "recurrence_as_measure.prob", &[]);
    assert_eq!(o1.status.code(), Some(0), "{}", stderr(&o1));
    assert_eq!(o2.status.code(), Some(0), "{}", stderr(&o2));
    let (_, rec) = csv_rows(&d1);
    let (_, ivp) = csv_rows(&d2);
    assert_eq!(rec.iter().map(|r| r[1]).collect::<Vec<_>>(), [1.0, 1.0, 0.0, -1.0, -1.0, 0.0, 1.0, 1.0, 0.0, -1.0, -1.0]);
    for r in &rec {
        let v = ivp.iter().find(|s| s[0] == r[0]).unwrap();
        assert!((v[1] - r[1]).abs() < 1e-12);
    }
}

#[test]
fn three_term_normalization_output() {
    let (dir, out) = run_fixture("discrete", "three_term.prob", &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let norm = json(&dir, "normalization.json");
    assert_eq!(norm["alpha"].as_array().unwrap().len(), 21);
    assert_eq!(norm["beta"].as_array().unwrap().len(), 20);
}

#[test]
fn classify_outputs() {
    let (dir, out) = run_fixture("classify", "oscillator.prob", &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let c = json(&dir, "classification.json");
    assert_eq!(c["classification"]["class"]["kind"], "Oscillatory");
    assert!(c["classification"]["class"]["sign_changes"].as_u64().unwrap() >= 17);
    let energy = fs::read_to_string(dir.path().join("energy.csv")).unwrap();
    assert!(energy.starts_with("x,E,work\n"));

    let (dir, out) = run_fixture("classify", "unforced_linear.prob", &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(json(&dir, "classification.json")["classification"]["class"]["kind"], "Linear");
}

#[test]
fn input_errors_carry_positions() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.prob");
    fs::write(&bad, "[problem]\nF = \"y +\"\n").unwrap();
    let out = vsie(dir.path(), &["solve", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bad.prob:2:"), "{}", stderr(&out));

    fs::write(&bad, "[problem]\nF = \"y\"\n\n[solver]\ny0 = 1\n").unwrap();
    let out = vsie(dir.path(), &["solve", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("bad.prob:4:") && err.contains("yp0"), "{err}");

    let out = vsie(dir.path(), &["fixpoint", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("`f`"));

    let out = vsie(dir.path(), &["check", bad.to_str().unwrap(), "--profile", "thm-9.9"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unconverged_iteration_is_a_numerical_failure() {
    let (_, out) = run_fixture("fixpoint", "unit_fixed_point.prob", &["--max-iter", "2"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn output_directory_from_environment() {
    let dir = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_vsie"))
        .args(["discrete", fixture("recurrence.prob").to_str().unwrap()])
        .env("VSIE_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("solution.csv").exists());
}
