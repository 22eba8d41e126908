use std::path::PathBuf;
use std::process::{Command, Output};

use tdo_cli::{Problem, ProblemFile};

fn tdo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tdo-mpc"))
        .args(args)
        .env_remove("TDO_MPC_TOL")
        .output()
        .expect("binary runs")
}

fn code(args: &[&str]) -> i32 {
    tdo(args).status.code().expect("exit code")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("tdo-cli-tests-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn csv_column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().to_string()).collect()
}

fn numbers(column: Vec<String>) -> Vec<f64> {
    column.iter().map(|v| v.parse().unwrap()).collect()
}

#[test]
fn certify_exit_codes() {
    assert_eq!(code(&["certify", "--bench", "jones", "--solver", "pgm", "--ell", "20", "--precondition"]), 0);
    assert_eq!(code(&["certify", "--bench", "pendulum", "--solver", "pgm", "--ell", "1"]), 2);
    assert_eq!(code(&["certify", "--bench", "jones", "--ell", "0"]), 1);
    assert_eq!(code(&["certify", "--bench", "nowhere"]), 1);
    assert_eq!(code(&["certify", "--bench", "jones", "--solver", "newton"]), 1);
    assert_eq!(code(&["certify"]), 1);
}

#[test]
fn certify_writes_json_and_csv() {
    let (json, csv) = (scratch("cert.json"), scratch("cert.csv"));
    let status = tdo(&[
        "certify",
        "--bench",
        "jones",
        "--ell",
        "20",
        "--precondition",
        "--out",
        json.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
    ])
    .status;
    assert_eq!(status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["verdict"], "stable");
    assert_eq!(report["ell"], 20);
    let table = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(
        lines[0],
        "kappa,eta,ell_bar,b,beta,gamma1,zeta,zeta_a,ell_star,ell_star_a,smallgain_at_ell,verdict"
    );
    assert!(lines[1].ends_with(",stable"));
}

#[test]
fn simulate_exit_codes() {
    assert_eq!(code(&["simulate", "--bench", "pendulum", "--solver", "apgm", "--ell", "8000", "--precondition"]), 0);
    assert_eq!(code(&["simulate", "--bench", "jones", "--solver", "pgm", "--ell", "10"]), 0);
    assert_eq!(code(&["simulate", "--bench", "pendulum", "--solver", "pgm", "--ell", "1"]), 2);
    assert_eq!(code(&["simulate", "--bench", "jones", "--shrink-tol", "2"]), 1);
}

#[test]
fn simulation_csv_layout() {
    let out = tdo(&["simulate", "--bench", "jones", "--ell", "10", "--steps", "20"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let meta: serde_json::Value = serde_json::from_str(lines[0].strip_prefix("# ").unwrap()).unwrap();
    assert_eq!(meta["kind"], "pgm");
    assert_eq!(meta["ell"], 10);
    assert_eq!(meta["steps"], 20);
    assert_eq!(lines[1], "k,x_1,x_2,x_3,x_4,u_1,u_2,e_norm,psi");
    assert_eq!(lines.len(), 2 + 21);
    for row in &lines[2..22] {
        for u in row.split(',').skip(5).take(2) {
            assert!(u.parse::<f64>().unwrap().abs() <= 1.0);
        }
    }
}

#[test]
fn output_is_deterministic() {
    let args = ["sweep", "--bench", "jones", "--axis", "ell", "--grid", "1:12", "--solver", "apgm", "--jobs", "3"];
    let first = tdo(&args).stdout;
    let second = tdo(&args).stdout;
    assert!(!first.is_empty());
    assert_eq!(first, second);
    let sim = ["simulate", "--bench", "jones", "--ell", "5", "--steps", "30"];
    assert_eq!(tdo(&sim).stdout, tdo(&sim).stdout);
}

#[test]
fn jones_horizon_sweep_stays_in_band() {
    let out = tdo(&["sweep", "--bench", "jones", "--axis", "horizon", "--grid", "1:10", "--solver", "pgm", "--precondition"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8(out.stdout).unwrap();
    let bounds = numbers(csv_column(&csv, "ell_star"));
    assert_eq!(bounds.len(), 10);
    assert!(bounds.iter().all(|b| (1.0..=20.0).contains(b)));
    assert!(bounds.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn pendulum_cost_sweep_shows_inflection() {
    let out = tdo(&["sweep", "--bench", "pendulum", "--axis", "rscale", "--grid", "logspace(-2,6,17)", "--solver", "apgm"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8(out.stdout).unwrap();
    let gamma1 = numbers(csv_column(&csv, "gamma1"));
    assert!(gamma1[8..].windows(2).all(|w| w[1] > w[0]));
    let product = numbers(csv_column(&csv, "smallgain_at_ell"));
    let (argmin, _) = product
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    assert!(argmin > 0 && argmin < product.len() - 1, "minimum at {argmin}");
}

#[test]
fn problem_file_matches_benchmark() {
    let path = scratch("jones.json");
    let file = ProblemFile::from_problem(&Problem::benchmark("jones").unwrap());
    std::fs::write(&path, file.to_json()).unwrap();
    let from_file = tdo(&["certify", "--problem", path.to_str().unwrap(), "--ell", "10", "--csv", "/dev/null"]);
    let from_bench = tdo(&["certify", "--bench", "jones", "--ell", "10", "--csv", "/dev/null"]);
    assert_eq!(from_file.status.code(), from_bench.status.code());
    assert_eq!(from_file.stdout, from_bench.stdout);
    // Problem files carry no nominal budget.
    assert_eq!(code(&["certify", "--problem", path.to_str().unwrap()]), 1);
}

#[test]
fn identity_hessian_toy_problem() {
    let path = scratch("toy.json");
    std::fs::write(
        &path,
        r#"{"A":[[0.0]],"B":[[1.0]],"Q":[[1.0]],"R":[[1.0]],"N":1,"box_lower":[-1.0],"box_upper":[1.0],"x0":[1.0]}"#,
    )
    .unwrap();
    let out = tdo(&["sweep", "--problem", path.to_str().unwrap(), "--axis", "ell", "--grid", "1:1"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert_eq!(csv_column(&csv, "verdict"), vec!["stable"]);
    assert_eq!(csv_column(&csv, "kappa"), vec!["1.00000000000e0"]);
}

#[test]
fn malformed_inputs_exit_with_one() {
    let path = scratch("broken.json");
    std::fs::write(&path, "{\"A\": [[1]]}").unwrap();
    assert_eq!(code(&["certify", "--problem", path.to_str().unwrap(), "--ell", "3"]), 1);
    assert_eq!(code(&["certify", "--problem", "/nonexistent/problem.json", "--ell", "3"]), 1);
    assert_eq!(code(&["sweep", "--bench", "jones", "--axis", "ell", "--grid", "3:1"]), 1);
    assert_eq!(code(&["sweep", "--bench", "jones", "--axis", "horizon", "--grid", "logspace(0,1,3)"]), 1);
    assert_eq!(code(&["certify", "--bench", "jones", "--tol", "nonsense"]), 1);
    let bad_env = Command::new(env!("CARGO_BIN_EXE_tdo-mpc"))
        .args(["certify", "--bench", "jones"])
        .env("TDO_MPC_TOL", "oracle=abc")
        .output()
        .unwrap();
    assert_eq!(bad_env.status.code(), Some(1));
}

#[test]
fn empirical_column_is_bounded_by_theory() {
    let out = tdo(&[
        "sweep",
        "--bench",
        "jones",
        "--axis",
        "horizon",
        "--grid",
        "1:4",
        "--precondition",
        "--empirical",
        "--ell-max",
        "64",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8(out.stdout).unwrap();
    let empirical = numbers(csv_column(&csv, "empirical_min_iterations"));
    let bound = numbers(csv_column(&csv, "ell_star"));
    for (e, b) in empirical.iter().zip(&bound) {
        assert!(*e <= b.ceil());
    }
}
