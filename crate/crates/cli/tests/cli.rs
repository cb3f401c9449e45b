use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neumann-ocp")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn coercivity_verdicts_have_distinct_exit_codes() {
    let o = run(&["check-coercivity"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stdout(&o).contains("NON-COERCIVE (lambda_min < 0)"));
    assert!(stdout(&o).contains("level 4"));

    let o = run(&["check-coercivity", "--delta", "0", "--coercivity.a0=1", "--levels", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("coercive (lambda_min > 0)"));
    let value = out.split("lambda_min = ").nth(1).unwrap().split_whitespace().next().unwrap();
    assert!(value.parse::<f64>().unwrap() > 0.0);
}

#[test]
fn mesh_reports_zero_violations_and_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["mesh", "--mu", "0.5", "--levels", "1..3", "--out", path(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("grading violations: 0"));
    for l in 1..=3 {
        let dump = fs::read_to_string(dir.path().join(format!("mesh_level{l}.txt"))).unwrap();
        assert!(dump.starts_with("# nodes"));
    }
}

#[test]
fn config_errors_exit_with_one() {
    let bad: [&[&str]; 6] = [
        &["mesh", "--mu", "1.5"],
        &["mesh", "--domain=[[0,0],[1,1],[1,0],[0,1]]"],
        &["study", "--levels", "3..2"],
        &["study", "--dleta=6"],
        &["study", "--config", "/nonexistent/config.json"],
        &[],
    ];
    for args in bad {
        let o = run(args);
        assert_eq!(code(&o), 1, "{args:?}: {}", stderr(&o));
        assert!(stderr(&o).starts_with("error:"), "{args:?}");
    }
}

#[test]
fn numerical_failure_exits_with_two() {
    let o = run(&["solve-bvp", "--levels", "2", "--solver.method=gmres", "--solver.max_iter=1"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("level 2"));
}

#[test]
fn study_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["study", "--levels", "1..2", "--out", path(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("1.20e-01"), "{}", stdout(&o));

    let csv = fs::read_to_string(dir.path().join("study.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(
        lines[0],
        "level,h,ndof,err_y_L2,eoc_y_L2,err_y_H1,eoc_y_H1,err_phi_L2,eoc_phi_L2,err_phi_H1,eoc_phi_H1,err_u_L2G,eoc_u_L2G"
    );
    let first: Vec<&str> = lines[1].split(',').collect();
    let second: Vec<&str> = lines[2].split(',').collect();
    assert_eq!(first.len(), 13);
    assert_eq!(second.len(), 13);
    for c in [4, 6, 8, 10, 12] {
        assert!(first[c].is_empty());
        assert!(second[c].parse::<f64>().unwrap() > 0.0);
    }
    assert!(lines[3].starts_with("# expected"));
}

#[test]
fn study_output_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let o = run(&["study", "--levels", "1..3", "--quiet", "--out", path(a.path())]);
    assert_eq!(code(&o), 0);
    let o = run(&["study", "--levels", "1..3", "--quiet", "--study.parallel=false", "--out", path(b.path())]);
    assert_eq!(code(&o), 0);
    let (x, y) = (fs::read(a.path().join("study.csv")).unwrap(), fs::read(b.path().join("study.csv")).unwrap());
    assert_eq!(x, y);
}

#[test]
fn config_file_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"command": "study", "delta": "6", "alpha": "-1.25", "levels": "1..2", "quiet": true}"#)
        .unwrap();
    let out = dir.path().join("out");
    let o = run(&["--config", path(&cfg), "--levels", "1..3", "--out", path(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("study.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    // quiet keeps the summary line only
    assert_eq!(stdout(&o).lines().count(), 1);
}

#[test]
fn assert_miss_exits_with_three() {
    // three coarse levels are far from the asymptotic orders
    let o = run(&["study", "--levels", "1..3", "--assert", "--quiet"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("acceptance miss"));
}

#[test]
fn solve_bvp_writes_coo_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["solve-bvp", "--levels", "2", "--out", path(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("err_phi_H1"));
    let coo = fs::read_to_string(dir.path().join("matrix_K.coo")).unwrap();
    let mut lines = coo.lines();
    let header: Vec<usize> = lines.next().unwrap().split(' ').map(|t| t.parse().unwrap()).collect();
    let entries: Vec<&str> = lines.collect();
    assert_eq!(header[1], entries.len());
    for e in entries {
        let t: Vec<&str> = e.split(' ').collect();
        assert_eq!(t.len(), 3);
        assert!(t[0].parse::<usize>().unwrap() < header[0]);
        assert!(t[1].parse::<usize>().unwrap() < header[0]);
        t[2].parse::<f64>().unwrap();
    }
}

#[test]
fn solve_ocp_respects_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["solve-ocp", "--levels", "2", "--ocp.u_min=-0.5", "--ocp.u_max=0.5", "--out", path(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("control.csv")).unwrap();
    let controls: Vec<f64> = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert!(!controls.is_empty());
    assert!(controls.iter().all(|u| (-0.5..=0.5).contains(u)));
    assert!(controls.iter().any(|&u| u == 0.5 || u == -0.5));
}
