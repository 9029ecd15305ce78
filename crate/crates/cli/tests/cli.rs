use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cyclegain"))
}

fn work_dir(test: &str) -> PathBuf {
    let dir = std::env::temp_dir()
        .join(format!("cyclegain_cli_{}", std::process::id()))
        .join(test);
    fs::create_dir_all(&dir).expect("create test dir");
    dir
}

fn write_cfg(dir: &PathBuf, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).expect("write config");
    path
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const REFERENCE_BUCK: &str = "topology = buck_const_on\n\
    Vin = 12\n\
    Vout = 2.2\n\
    L = 240n\n\
    C = 100u\n\
    Ton = 100n\n";

fn degenerate_cfg(load: &str, sector: &str) -> String {
    format!(
        "{REFERENCE_BUCK}R = {load}\n\
         Toff_min = 445.454545454545n\n\
         Toff_max = 445.454545454545n\n\
         sector = {sector}\n"
    )
}

#[test]
fn certify_low_load_sector_certifies_with_expected_threshold() {
    let dir = work_dir("certify_low");
    let cfg = write_cfg(&dir, "case.cfg", &degenerate_cfg("0.05", "0.3"));
    let out = bin().arg("certify").arg(&cfg).output().expect("run certify");
    let text = stdout(&out);
    assert_eq!(
        out.status.code(),
        Some(0),
        "expected exit 0, got {:?}; stderr: {}",
        out.status.code(),
        stderr(&out)
    );
    assert!(
        text.contains("verdict=Certified"),
        "missing certified verdict in:\n{text}"
    );
    assert!(
        text.contains("check.gain.rhs=8.891666667e0"),
        "missing gain threshold 8.8917 in:\n{text}"
    );
    assert!(
        text.contains("lambda = 5e-1"),
        "defaults must be echoed in the resolved configuration:\n{text}"
    );
}

#[test]
fn certify_high_load_wide_sector_rejects() {
    let dir = work_dir("certify_high");
    let cfg = write_cfg(&dir, "case.cfg", &degenerate_cfg("0.4", "0.48"));
    let out = bin().arg("certify").arg(&cfg).output().expect("run certify");
    assert_eq!(
        out.status.code(),
        Some(1),
        "expected exit 1; stdout: {}",
        stdout(&out)
    );
    assert!(
        stdout(&out).contains("verdict=NotCertified"),
        "missing rejection verdict in:\n{}",
        stdout(&out)
    );
}

#[test]
fn missing_capacitance_is_a_config_error() {
    let dir = work_dir("missing_c");
    let body = REFERENCE_BUCK.replace("C = 100u\n", "");
    let cfg = write_cfg(&dir, "noc.cfg", &format!("{body}R = 0.4\n"));
    let out = bin().arg("simulate").arg(&cfg).output().expect("run simulate");
    assert_eq!(out.status.code(), Some(2), "stdout: {}", stdout(&out));
    assert!(
        stderr(&out).contains("missing required key `C`"),
        "stderr must name the missing key: {}",
        stderr(&out)
    );
}

#[test]
fn lambda_out_of_range_is_rejected() {
    let dir = work_dir("bad_lambda");
    let cfg = write_cfg(
        &dir,
        "lam.cfg",
        &format!("{REFERENCE_BUCK}R = 0.4\nlambda = 1.5\n"),
    );
    let out = bin().arg("equilibrium").arg(&cfg).output().expect("run");
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("lambda"),
        "stderr must name the offending parameter: {}",
        stderr(&out)
    );
}

#[test]
fn unknown_key_error_names_the_line() {
    let dir = work_dir("unknown_key");
    let cfg = write_cfg(
        &dir,
        "bad.cfg",
        "topology = buck_const_on\nbogus = 1\n",
    );
    let out = bin().arg("equilibrium").arg(&cfg).output().expect("run");
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(
        err.contains("line 2") && err.contains("bogus"),
        "stderr must cite line and key: {err}"
    );
}

#[test]
fn bad_unit_suffix_error_names_the_line() {
    let dir = work_dir("bad_unit");
    let cfg = write_cfg(
        &dir,
        "bad.cfg",
        "topology = buck_const_on\nVin = 12\nVout = 2.2\nL = 240x\n",
    );
    let out = bin().arg("equilibrium").arg(&cfg).output().expect("run");
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(
        err.contains("line 4") && err.contains("240x"),
        "stderr must cite line and value: {err}"
    );
}

#[test]
fn si_suffixes_resolve_and_echo() {
    let dir = work_dir("si_echo");
    let cfg = write_cfg(&dir, "eq.cfg", &format!("{REFERENCE_BUCK}R = 0.4\n"));
    let out = bin().arg("equilibrium").arg(&cfg).output().expect("run");
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(
        text.contains("L = 2.4") && text.contains("e-7"),
        "L = 240n must resolve to 2.4e-7 in the echo:\n{text}"
    );
    assert!(
        text.contains("i_valley_A = 3.458333333e0"),
        "valley current missing from:\n{text}"
    );
}

#[test]
fn gain_surface_reports_zero_cell_and_is_deterministic() {
    let dir = work_dir("surface");
    let cfg = write_cfg(
        &dir,
        "grid.cfg",
        &format!(
            "{REFERENCE_BUCK}R = 0.4\n\
             grid_alpha_min = -0.3\ngrid_alpha_max = 0\n\
             grid_beta_min = 0\ngrid_beta_max = 0.3\n\
             grid_points = 2\n"
        ),
    );
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    for out_dir in [&out_a, &out_b] {
        let out = bin()
            .arg("gain-surface")
            .arg(&cfg)
            .arg("--out")
            .arg(out_dir)
            .output()
            .expect("run gain-surface");
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    }
    let csv_a = fs::read(out_a.join("gain_surface.csv")).expect("read surface A");
    let csv_b = fs::read(out_b.join("gain_surface.csv")).expect("read surface B");
    assert_eq!(csv_a, csv_b, "identical config must give byte-identical CSV");

    let text = String::from_utf8(csv_a).expect("utf8 csv");
    let zero_row = text
        .lines()
        .find(|l| l.starts_with("0.000000000e0,0.000000000e0,"))
        .unwrap_or_else(|| panic!("no zero-sector row in:\n{text}"));
    let gamma: f64 = zero_row
        .rsplit(',')
        .next()
        .expect("gamma column")
        .parse()
        .expect("numeric gamma");
    assert!(
        gamma <= 1e-4,
        "zero-sector cell must certify at most 1e-4, got {gamma:.3e}"
    );
}

#[test]
fn simulate_writes_trace_and_reports_stable() {
    let dir = work_dir("simulate");
    let cfg = write_cfg(
        &dir,
        "sim.cfg",
        &format!(
            "{REFERENCE_BUCK}R = 0.4\n\
             cycles = 1200\nsettle_window = 300\n\
             command = pulse\ncmd_base = 0\ncmd_amplitude = 1\ncmd_start = 10\ncmd_width = 100\n"
        ),
    );
    let out = bin()
        .arg("simulate")
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .output()
        .expect("run simulate");
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(
        text.contains("classification = stable"),
        "pulse without interference must settle:\n{text}"
    );
    let trace = fs::read_to_string(dir.join("trace.csv")).expect("trace artifact");
    let mut lines = trace.lines();
    assert_eq!(
        lines.next(),
        Some("n,i_tilde_A,v_tilde_V,t_off_s,clamped"),
        "unexpected CSV header"
    );
    assert_eq!(
        trace.lines().count(),
        1202,
        "1200 cycles must produce 1201 states plus header"
    );
}

#[test]
fn validate_tables_prints_two_case_rows() {
    let out = bin().arg("validate-tables").output().expect("run validate-tables");
    let text = stdout(&out);
    let case_rows: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with("case1") || l.starts_with("case2"))
        .collect();
    assert_eq!(case_rows.len(), 2, "summary must have two case rows:\n{text}");
    for row in &case_rows {
        assert!(
            row.contains("expected_verdict=") && row.contains("observed_verdict="),
            "row must compare verdicts: {row}"
        );
        assert!(
            row.contains("expected_max_sector=") && row.contains("observed_max_sector="),
            "row must compare thresholds: {row}"
        );
    }
    assert!(
        out.status.code() == Some(0) || out.status.code() == Some(1),
        "validation must complete with a verdict comparison, got {:?}; stderr: {}",
        out.status.code(),
        stderr(&out)
    );
}
