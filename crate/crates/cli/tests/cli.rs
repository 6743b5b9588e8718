use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use dce_core::ResponseDataset;

const BIN: &str = env!("CARGO_BIN_EXE_dce");

const FIGURE_ONE: &[&str] = &[
    "design",
    "--levels",
    "3,2,3,3",
    "--alts",
    "2",
    "--sets",
    "16",
    "--opt-out",
    "--bayesian",
    "--priors",
    "0,0,0,0,0,0,0",
    "--seed",
    "9999",
];

const TABLE_ONE: &str = r#"{"attributes": [
  {"name": "Efficacy", "levels": ["30%", "50%", "70%"]},
  {"name": "Side effects", "levels": ["Mild", "Severe"]},
  {"name": "Duration", "levels": ["6 months", "1 year", "2 years"]},
  {"name": "Cost", "levels": ["100", "150", "200"]}
]}"#;

fn dce(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn with_out<'a>(base: &[&'a str], out: &'a str) -> Vec<&'a str> {
    let mut v = base.to_vec();
    v.extend(["--out", out]);
    v
}

#[test]
fn design_is_reproducible_and_reports_k() {
    let dir = tempfile::tempdir().unwrap();
    let a = dce(dir.path(), &with_out(FIGURE_ONE, "a.json"));
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert!(stdout(&a).contains("K=7"));
    let b = dce(dir.path(), &with_out(FIGURE_ONE, "b.json"));
    assert!(b.status.success());
    let (a, b) = (
        std::fs::read(dir.path().join("a.json")).unwrap(),
        std::fs::read(dir.path().join("b.json")).unwrap(),
    );
    assert_eq!(a, b);
}

#[test]
fn validation_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = FIGURE_ONE.to_vec();
    let p = args.iter().position(|a| *a == "0,0,0,0,0,0,0").unwrap();
    args[p] = "0,0,0,0,0,0";
    let o = dce(dir.path(), &with_out(&args, "x.json"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("priors"));
    assert!(!dir.path().join("x.json").exists());

    let o = dce(
        dir.path(),
        &[
            "design", "--levels", "3,2,3,3", "--alts", "2", "--sets", "3", "--out", "y.json",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("too few sets"));

    assert_eq!(dce(dir.path(), &["design"]).status.code(), Some(2));
    assert_eq!(dce(dir.path(), &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn decode_with_names() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("names.json"), TABLE_ONE).unwrap();
    assert!(dce(dir.path(), &with_out(FIGURE_ONE, "d.json"))
        .status
        .success());
    let o = dce(
        dir.path(),
        &[
            "decode",
            "--in",
            "d.json",
            "--names",
            "names.json",
            "--out",
            "d.txt",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("d.txt")).unwrap();
    assert!(text.starts_with("Choice set 1\n  Option 1:\n    Efficacy: "));
    assert_eq!(text.matches("Choice set ").count(), 16);
    assert_eq!(text.matches("    Side effects: ").count(), 32);

    let o = dce(
        dir.path(),
        &["decode", "--in", "d.json", "--names", "missing.json"],
    );
    assert_eq!(o.status.code(), Some(2));

    // csv export decodes to the same sets once names are supplied
    let mut csv_args = with_out(FIGURE_ONE, "d.csv");
    csv_args.extend(["--format", "csv"]);
    assert!(dce(dir.path(), &csv_args).status.success());
    let o = dce(
        dir.path(),
        &["decode", "--in", "d.csv", "--names", "names.json"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o), text);
}

#[test]
fn simulate_estimate_wtp() {
    let dir = tempfile::tempdir().unwrap();
    assert!(dce(dir.path(), &with_out(FIGURE_ONE, "d.json"))
        .status
        .success());
    let beta = [0.6, -0.4, 0.3, 0.5, -0.2, -0.3, -0.5];
    let beta_arg = beta.map(|b| b.to_string()).join(",");
    let o = dce(
        dir.path(),
        &[
            "simulate",
            "--design",
            "d.json",
            "--beta",
            &beta_arg,
            "--respondents",
            "1000",
            "--seed",
            "4",
            "--out",
            "r.csv",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let o = dce(
        dir.path(),
        &["estimate", "--data", "r.csv", "--json", "fit.json"],
    );
    assert!(o.status.success());
    assert!(stdout(&o).contains("log-likelihood:"));
    let fit: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("fit.json")).unwrap()).unwrap();
    for (k, truth) in beta.iter().enumerate() {
        let b = fit["estimation"]["coefficients"]["beta"][k]
            .as_f64()
            .unwrap();
        let se = fit["estimation"]["std_errors"][k].as_f64().unwrap();
        assert!(
            (b - truth).abs() < 3.0 * se,
            "coefficient {k}: {b} vs {truth} (se {se})"
        );
    }

    let o = dce(
        dir.path(),
        &[
            "estimate",
            "--data",
            "r.csv",
            "--price-levels",
            "100,150,200",
        ],
    );
    assert!(o.status.success());
    assert!(stdout(&o).lines().any(|l| l.starts_with("cont_price ")));

    let o = dce(
        dir.path(),
        &["wtp", "--data", "r.csv", "--price-levels", "100,150,200"],
    );
    assert!(o.status.success());
    assert!(stdout(&o).contains("att1.2"));
    let o = dce(
        dir.path(),
        &[
            "wtp",
            "--data",
            "r.csv",
            "--price-levels",
            "100,150,200",
            "--targets",
            "cont_price",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    assert!(dce(dir.path(), &with_out(FIGURE_ONE, "d.json"))
        .status
        .success());
    let o = dce(
        dir.path(),
        &[
            "simulate",
            "--design",
            "d.json",
            "--beta",
            "0,0,0,0,0,0,0",
            "--respondents",
            "20",
            "--out",
            "r.csv",
        ],
    );
    assert!(o.status.success());
    let mut data =
        ResponseDataset::read_csv(std::fs::File::open(dir.path().join("r.csv")).unwrap()).unwrap();
    data.covariate_names.push("dup".into());
    for row in &mut data.rows {
        let v = row.covariates[0];
        row.covariates.push(v);
    }
    std::fs::write(dir.path().join("dup.csv"), data.to_csv_string()).unwrap();
    let o = dce(dir.path(), &["estimate", "--data", "dup.csv"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("rank deficient"));
}

#[test]
fn serve_reports_address() {
    let dir = tempfile::tempdir().unwrap();
    let mut child = Command::new(BIN)
        .args(["serve", "--port", "0"])
        .env("DCE_DATA_DIR", dir.path().join("data"))
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .expect(&line)
        .to_string();
    let body = ureq::get(&format!("http://{addr}/health"))
        .call()
        .unwrap()
        .body_mut()
        .read_to_string()
        .unwrap();
    assert_eq!(body, "ok");
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(dir.path().join("data/designs").is_dir());
}
