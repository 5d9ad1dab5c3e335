use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use excursion_core::gauss::gauss_tail;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_excursion-kit");

fn cosine(lower: &str, upper: &str) -> String {
    format!(r#"{{"field":{{"type":"cosine"}},"domain":{{"lower":{lower},"upper":{upper}}}}}"#)
}

struct Scratch {
    dir: TempDir,
}

impl Scratch {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn config(&self, name: &str, body: &str) -> PathBuf {
        let p = self.dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn run(cmd: &str, config: &Path, extra: &[&str]) -> Output {
    Command::new(BIN)
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .args(extra)
        .env_remove("EXK_THREADS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

fn column(text: &str, name: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].parse().unwrap()).collect()
}

#[test]
fn faces_lists_three_to_the_n() {
    let s = Scratch::new();
    let c2 = s.config("c2.json", &cosine("[0,0]", "[1,1]"));
    let o = run("faces", &c2, &[]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 9);

    let c3 = s.config(
        "c3.json",
        r#"{"field":{"type":"gaussian_increment","dim":3},"domain":{"lower":[0,0,0],"upper":[1,1,1]}}"#,
    );
    let o = run("faces", &c3, &[]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 27);
}

#[test]
fn malformed_domain_is_a_config_error() {
    let s = Scratch::new();
    let c = s.config("bad.json", &cosine("[0,2]", "[1,1]"));
    let o = run("faces", &c, &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("axis 2"), "{err}");

    let c = s.config("junk.json", "{ not json");
    assert_eq!(run("faces", &c, &[]).status.code(), Some(2));
    let c = s.config("ok.json", &cosine("[0,0]", "[1,1]"));
    assert_eq!(run("compute", &c, &["--levels", "1:2"]).status.code(), Some(2));
    assert_eq!(run("compute", &c, &["--levels", "1:2:1", "--method", "bogus"]).status.code(), Some(2));
}

#[test]
fn mu_approx_rows_decrease() {
    let s = Scratch::new();
    let c = s.config("c.json", &cosine("[0,0]", r#"["3*pi/2","3*pi/2"]"#));
    let o = run("compute", &c, &["--levels", "5:9:1", "--method", "mu_approx"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let totals = column(&text, "total");
    assert_eq!(totals.len(), 5);
    assert!(totals.windows(2).all(|w| w[1] < w[0]), "{totals:?}");

    // header: level, method, total, nine faces, err_est
    let header = text.lines().next().unwrap();
    let mut r = csv::Reader::from_reader(header.as_bytes());
    assert_eq!(r.headers().unwrap().len(), 13);
    // the per-face columns add up to the total
    for row in csv_rows(&text) {
        let total: f64 = row[2].parse().unwrap();
        let sum: f64 = row[3..12].iter().map(|x| x.parse::<f64>().unwrap()).sum();
        assert!((sum - total).abs() <= 1e-12 * total);
        // 17 significant digits
        assert_eq!(row[2].split('e').next().unwrap().len(), 18);
    }
}

#[test]
fn laplace_interior_closed_form() {
    let s = Scratch::new();
    let c = s.config("c.json", &cosine("[0,0]", r#"["3*pi/2","3*pi/2"]"#));
    let o = run("compute", &c, &["--levels", "8:8:1", "--method", "laplace"]);
    assert_eq!(o.status.code(), Some(0));
    let total = column(&stdout(&o), "total")[0];
    let want = 2.0 * gauss_tail(8.0 / 5f64.sqrt());
    // Θ comes from finite differences, good to ~1e-8 here
    assert!((total / want - 1.0).abs() < 1e-6, "{total} vs {want}");
}

#[test]
fn mean_ec_matches_mu_approx_for_interior_maximum() {
    let s = Scratch::new();
    let c = s.config("c.json", &cosine("[0,0]", r#"["2*pi","2*pi"]"#));
    let mu = column(&stdout(&run("compute", &c, &["--levels", "8:8:1"])), "total")[0];
    let ec = column(
        &stdout(&run("compute", &c, &["--levels", "8:8:1", "--method", "mean_ec"])),
        "total",
    )[0];
    assert!((ec / mu - 1.0).abs() < 0.02, "mean_ec {ec} mu_approx {mu}");
}

#[test]
fn dimension_cap_is_a_capability_error() {
    let s = Scratch::new();
    let c = s.config(
        "c.json",
        r#"{"field":{"type":"gaussian_increment","dim":4},"domain":{"lower":[1,1,1,1],"upper":[2,2,2,2]},"levels":[3]}"#,
    );
    assert_eq!(run("compute", &c, &["--method", "mean_ec"]).status.code(), Some(3));
}

#[test]
fn singular_model_is_a_numeric_error() {
    let s = Scratch::new();
    let c = s.config(
        "c.json",
        r#"{"field":{"type":"spectral_sum","atoms":[{"freq":[1,0],"weight":0.5},{"freq":[0,0],"weight":0.5}],"offset_var":1},
            "domain":{"lower":[0,0],"upper":[3,3]},"levels":[4]}"#,
    );
    let o = run("compute", &c, &[]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("face"));
}

#[test]
fn mc_rows_and_stderr() {
    let s = Scratch::new();
    let c = s.config("c.json", &cosine("[0,0]", r#"["pi","pi"]"#));
    let o = run("mc", &c, &["--levels", "1:3:1", "--reps", "100", "--grid", "16"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let p = column(&text, "p_hat");
    let se = column(&text, "stderr");
    assert_eq!(p.len(), 3);
    for (p, se) in p.iter().zip(&se) {
        assert!((se - (p * (1.0 - p) / 100.0).sqrt()).abs() < 1e-15);
    }
    assert!(p.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(column(&text, "reps"), vec![100.0; 3]);
    assert!(text.lines().next().unwrap().contains("bias_flag"));
}

#[test]
fn mc_is_byte_identical_across_runs_and_threads() {
    let s = Scratch::new();
    let c = s.config("c.json", &cosine("[0,0]", r#"["pi","pi"]"#));
    let args = ["--levels", "1:3:1", "--reps", "700", "--grid", "12", "--seed", "11"];
    let a = run("mc", &c, &args);
    let b = run("mc", &c, &args);
    let mut with_threads = args.to_vec();
    with_threads.extend(["--threads", "3"]);
    let t = run("mc", &c, &with_threads);
    let e = Command::new(BIN)
        .args(["mc", "--config"])
        .arg(&c)
        .args(args)
        .env("EXK_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, t.stdout);
    assert_eq!(a.stdout, e.stdout);
    let other = run("mc", &c, &["--levels", "1:3:1", "--reps", "700", "--grid", "12", "--seed", "12"]);
    assert_ne!(a.stdout, other.stdout);
}

#[test]
fn mc_needs_spectral_model() {
    let s = Scratch::new();
    let c = s.config(
        "c.json",
        r#"{"field":{"type":"gaussian_increment","dim":2},"domain":{"lower":[0,0],"upper":[1,1]},"levels":[1]}"#,
    );
    assert_eq!(run("mc", &c, &["--reps", "100"]).status.code(), Some(3));
}

#[test]
fn out_and_report_files() {
    let s = Scratch::new();
    let c = s.config("c.json", &cosine("[0,0]", r#"["pi/2","pi/2"]"#));
    let out = s.path("rows.csv");
    let rep = s.path("rows.json");
    let o = run(
        "compute",
        &c,
        &["--levels", "4:6:1", "--out", out.to_str().unwrap(), "--report", rep.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    let csv_text = fs::read_to_string(&out).unwrap();
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&rep).unwrap()).unwrap();
    let totals = column(&csv_text, "total");
    let rows = json["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for (row, t) in rows.iter().zip(&totals) {
        assert_eq!(row["total"].as_f64().unwrap(), *t);
        assert_eq!(row["per_face"].as_array().unwrap().len(), 9);
    }
}

#[test]
fn config_method_mc_routes_compute_to_monte_carlo() {
    let s = Scratch::new();
    let c = s.config(
        "c.json",
        r#"{"field":{"type":"cosine"},"domain":{"lower":[0,0],"upper":[1,1]},"levels":[1],"method":"mc","mc":{"grid":8,"reps":200}}"#,
    );
    let o = run("compute", &c, &[]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("level,p_hat"));
}

#[test]
fn validate_default_passes() {
    let s = Scratch::new();
    let c = s.config("c.json", &cosine("[0,0]", r#"["pi","pi"]"#));
    let o = run("validate", &c, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    for suite in ["hermite", "lambda", "derivatives", "conditioning", "ec_oracle", "h2", "condition"] {
        assert!(text.contains(suite), "missing {suite}");
    }
    assert!(!text.contains("FAIL"));
}

#[test]
fn validate_flags_zero_frequency_atom() {
    let s = Scratch::new();
    let c = s.config(
        "c.json",
        r#"{"field":{"type":"spectral_sum","atoms":[{"freq":[1,0],"weight":0.5},{"freq":[0,0],"weight":0.5}],"offset_var":1},
            "domain":{"lower":[0,0],"upper":[3,3]}}"#,
    );
    let o = run("validate", &c, &[]);
    assert_eq!(o.status.code(), Some(5));
    assert!(stdout(&o).lines().any(|l| l.starts_with("FAIL") && l.contains("h2")));
}
