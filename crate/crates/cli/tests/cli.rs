use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lrsdp"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn lrsdp")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn field(out: &str, key: &str) -> f64 {
    out.lines()
        .find_map(|l| l.strip_prefix(key))
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or_else(|| panic!("no numeric '{key}' in:\n{out}"))
}

#[test]
fn generate_writes_header_and_entries() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.mci");
    let o = run(&["generate", "--p", "2", "--q", "2", "--k", "1", "--m", "4", "--seed", "0", "--out", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "MCI 1");
    assert_eq!(lines[1], "2 2 1 4 0");
    assert_eq!(lines.len(), 6);
}

#[test]
fn generate_rejects_too_many_observations() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.mci");
    let o = run(&["generate", "--p", "2", "--q", "2", "--k", "1", "--m", "5", "--out", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!path.exists());
}

#[test]
fn scalar_fixture_solves_to_two() {
    let dir = tempfile::tempdir().unwrap();
    let sol = dir.path().join("sol.txt");
    let o = run(&[
        "solve",
        fixture("scalar.dat-s").to_str().unwrap(),
        "--start",
        fixture("scalar.start").to_str().unwrap(),
        "--solution",
        sol.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!((field(&stdout(&o), "objective") - 2.0).abs() <= 1e-7);
    let x = std::fs::read_to_string(&sol)
        .unwrap()
        .lines()
        .find_map(|l| l.strip_prefix("X 1 1 ").map(|v| v.parse::<f64>().unwrap()))
        .unwrap();
    assert!((x - 2.0).abs() <= 1e-7);
}

#[test]
fn sdpa_without_start_is_a_usage_error() {
    let o = run(&["solve", fixture("scalar.dat-s").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--start"));
}

#[test]
fn malformed_instance_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.mci");
    std::fs::write(&path, "MCI 1\n2 2 1 2 0\n1 1 0.5\n1 x 0.25\n").unwrap();
    let o = run(&["solve", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
}

#[test]
fn two_block_sdpa_is_unsupported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("two.dat-s");
    std::fs::write(&path, "1\n2\n1 1\n1.0\n1 1 1 1 1.0\n1 2 1 1 1.0\n").unwrap();
    let o = run(&["solve", path.to_str().unwrap(), "--start", fixture("scalar.start").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).to_lowercase().contains("unsupported"), "{}", stderr(&o));
}

#[test]
fn missing_input_file_fails_cleanly() {
    let o = run(&["solve", "/nonexistent/instance.mci"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/nonexistent/instance.mci"));
}

#[test]
fn max_iter_exit_code_and_log_rows() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("i.mci");
    let log = dir.path().join("log.csv");
    assert!(run(&["generate", "--p", "6", "--q", "6", "--k", "1", "--m", "24", "--out", inst.to_str().unwrap()]).status.success());
    let o = run(&["solve", inst.to_str().unwrap(), "--max-iter", "3", "--log", log.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let text = std::fs::read_to_string(&log).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "iter,mu,gap,pinf,dinf,ktilde,tau,kappaW0,pcg_iters,pcg_status,alpha,time_ms");
    assert_eq!(lines.count(), 3);
}

#[test]
fn config_file_is_layered_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("i.mci");
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, format!("[solver]\nmax_iter = 2\n\n[solve]\ninput = {:?}\n", inst.to_str().unwrap())).unwrap();
    assert!(run(&["generate", "--p", "4", "--q", "4", "--k", "1", "--m", "10", "--out", inst.to_str().unwrap()]).status.success());
    let o = run(&["--config", cfg.to_str().unwrap(), "solve"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["--config", cfg.to_str().unwrap(), "solve", "--max-iter", "200"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    std::fs::write(&cfg, "[solver]\nmax_iters = 2\n").unwrap();
    let o = run(&["--config", cfg.to_str().unwrap(), "solve", inst.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("max_iters"));
}

#[test]
fn bench_emits_one_row_per_point() {
    let o = run(&["bench", "--sizes", "5,6", "--m", "1n,20", "--preconds", "augmented,smw", "--iters", "2", "--oracle-cap", "15"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let mut rows = csv::Reader::from_reader(out.as_bytes());
    let records: Vec<csv::StringRecord> = rows.records().map(|r| r.unwrap()).collect();
    // dense joins only where m = n (10 or 12) is within the cap
    assert_eq!(records.len(), 2 * (2 + 1) + 2 * 2);
    assert!(records.iter().all(|r| ["maxiter", "optimal"].contains(&&r[5])));
}
