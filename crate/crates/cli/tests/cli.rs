use std::path::Path;
use std::process::{Command, Output};

fn reldiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reldiff")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// Rows of a CSV as floats, keyed by header.
fn parse_csv(text: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(|c| c.parse::<f64>().unwrap()).collect()).collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

#[test]
fn model_exit_codes() {
    assert_eq!(code(&reldiff(&["model", "--model", "roup", "--beta", "1"])), 0);
    assert_eq!(code(&reldiff(&["model", "--model", "dh", "--beta", "0.5"])), 0);
    let bad = reldiff(&["model", "--model", "nosuch"]);
    assert_eq!(code(&bad), 1);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("nosuch"));
}

#[test]
fn model_report_is_json() {
    let out = reldiff(&["model", "--model", "dh", "--beta", "2"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["model"], "dh");
    assert_eq!(v["sigma_ok"], true);
}

#[test]
fn help_and_bad_flags() {
    assert_eq!(code(&reldiff(&["--help"])), 0);
    assert_eq!(code(&reldiff(&["psi", "--beta", "abc"])), 1);
    assert_eq!(code(&reldiff(&["frobnicate"])), 1);
    assert_eq!(code(&reldiff(&["psi", "--beta", "-1"])), 1);
}

#[test]
fn roup_psi_column_is_r() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("psi.csv");
    let out = reldiff(&["psi", "--model", "roup", "--d", "1", "--beta", "1", "--out", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let (header, rows) = parse_csv(&std::fs::read_to_string(&path).unwrap());
    assert_eq!(header, ["r", "psi", "psi_prime", "residual"]);
    let (r, psi) = (column(&header, "r"), column(&header, "psi"));
    for row in &rows {
        assert!((row[psi] - row[r]).abs() <= 1e-6 * row[r].max(1.0), "{row:?}");
    }
    assert!(Path::new(&format!("{}.manifest.json", path.display())).exists());
    assert!(String::from_utf8_lossy(&out.stdout).contains("residual_sup"));
}

#[test]
fn dh_psi_residual_within_tolerance() {
    let out = reldiff(&["psi", "--model", "dh", "--d", "1", "--beta", "1"]);
    assert_eq!(code(&out), 0);
    let (header, rows) = parse_csv(&String::from_utf8(out.stdout).unwrap());
    let res = column(&header, "residual");
    let sup = rows.iter().map(|r| r[res]).filter(|v| !v.is_nan()).fold(0.0, f64::max);
    assert!(sup < 1e-4, "{sup}");
}

#[test]
fn psi_bad_out_path() {
    assert_eq!(code(&reldiff(&["psi", "--out", "/definitely/not/here/psi.csv"])), 1);
}

#[test]
fn sigma2_roup_values() {
    let out = reldiff(&["sigma2", "--model", "roup", "--beta-list", "0.5,1,2", "--methods", "prop2"]);
    assert_eq!(code(&out), 0);
    let (header, rows) = parse_csv(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(header, ["beta", "sigma2_prop2", "sigma2_lemma2", "sigma2_dh_d1", "asymptote", "error_estimate"]);
    let col = column(&header, "sigma2_prop2");
    for (row, want) in rows.iter().zip([4.0, 2.0, 1.0]) {
        assert!((row[col] - want).abs() < 1e-3 * want, "{row:?}");
    }
}

#[test]
fn sigma2_dh_large_beta() {
    let out = reldiff(&["sigma2", "--model", "dh", "--d", "1", "--beta-list", "100", "--methods", "dh_d1,asymptotic"]);
    assert_eq!(code(&out), 0);
    let (header, rows) = parse_csv(&String::from_utf8(out.stdout).unwrap());
    let (q, a) = (rows[0][column(&header, "sigma2_dh_d1")], rows[0][column(&header, "asymptote")]);
    assert!((q - 0.02).abs() < 0.002 && (a - 0.02).abs() < 0.002);
    assert!((q - a).abs() < 0.1 * a);
}

#[test]
fn sigma2_method_conflicts() {
    let out = reldiff(&["sigma2", "--model", "roup", "--methods", "dh_d1"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("dh_d1"));
    assert_eq!(code(&reldiff(&["sigma2", "--model", "dh", "--d", "3", "--methods", "dh_d1"])), 1);
    assert_eq!(code(&reldiff(&["sigma2", "--methods", "simpson"])), 1);
}

#[test]
fn simulate_rejects_empty_ensemble() {
    assert_eq!(code(&reldiff(&["simulate", "--N", "0"])), 1);
    assert_eq!(code(&reldiff(&["simulate", "--dt", "0"])), 1);
}

#[test]
fn simulate_is_reproducible_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let csv = dir.path().join(name);
        let hist = dir.path().join(format!("{name}.hist.csv"));
        let out = reldiff(&[
            "simulate",
            "--model",
            "roup",
            "--beta",
            "1",
            "--T",
            "50",
            "--N",
            "64",
            "--seed",
            "3",
            "--check-clt",
            "--histogram",
            hist.to_str().unwrap(),
            "--out",
            csv.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        (std::fs::read(&csv).unwrap(), std::fs::read_to_string(&hist).unwrap(), csv)
    };
    let (a, hist, csv) = run("a.csv");
    let (b, _, _) = run("b.csv");
    assert_eq!(a, b);
    let (header, rows) = parse_csv(std::str::from_utf8(&a).unwrap());
    assert_eq!(
        header,
        ["beta", "log10_inv_beta", "msd_over_t", "stderr", "sigma2_quadrature", "conjecture_2_over_2_plus_beta"]
    );
    assert_eq!(rows.len(), 1);
    assert!((rows[0][column(&header, "sigma2_quadrature")] - 2.0).abs() < 1e-6);

    let (hh, hrows) = parse_csv(&hist);
    assert_eq!(hh, ["beta", "r_lo", "r_hi", "count", "empirical_density", "equilibrium_density"]);
    // 26 recorded times in [25, 50] per path, minus overflow
    let total: f64 = hrows.iter().map(|r| r[3]).sum();
    assert!(total <= 64.0 * 26.0 && total > 0.9 * 64.0 * 26.0, "{total}");
    let mass: f64 = hrows.iter().map(|r| r[4] * (r[2] - r[1])).sum();
    let eq_mass: f64 = hrows.iter().map(|r| r[5] * (r[2] - r[1])).sum();
    assert!((mass - 1.0).abs() < 1e-9, "{mass}");
    assert!(eq_mass > 0.99 && eq_mass <= 1.0 + 1e-9, "{eq_mass}");

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(format!("{}.summary.json", csv.display())).unwrap()).unwrap();
    assert!(summary["rows"][0]["normality"]["pass"].is_boolean());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(format!("{}.manifest.json", csv.display())).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn sweep_rows_follow_beta_list() {
    let out = reldiff(&["simulate", "--model", "roup", "--sweep", "0.5,2", "--T", "20", "--N", "16", "--seed", "1"]);
    assert_eq!(code(&out), 0);
    let (header, rows) = parse_csv(&String::from_utf8(out.stdout).unwrap());
    let b = column(&header, "beta");
    assert_eq!(rows.iter().map(|r| r[b]).collect::<Vec<_>>(), [0.5, 2.0]);
    let c = column(&header, "conjecture_2_over_2_plus_beta");
    assert!((rows[1][c] - 0.5).abs() < 1e-15);
}

#[test]
fn bad_thread_count_is_config_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_reldiff"))
        .args(["sigma2", "--model", "roup"])
        .env("RELDIFF_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
}
