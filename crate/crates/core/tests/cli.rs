use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BASE: &str = r#"
[model]
lambda = 1.0
gamma = 0.8
beta = 4.0

[resource]
states = [0.0, 1.0]
rates = [[0.0, 0.5], [0.5, 0.0]]

[sharing]
kind = "power"
alpha = 1.0
level_payoffs = [0.2, 1.0]

[solver]
L = 60
"#;

fn nomad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nomad-mfe")).args(args).output().unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solve_writes_the_result_fields() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "s.toml", BASE);
    let out = nomad(&["solve", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["x_star", "V_sw_star", "kappa_star", "dist", "accepted"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["accepted"], Value::Bool(true));
    assert!(v["dist"].as_f64().unwrap() <= 1e-8);
    assert_eq!(v["x_star"].as_array().unwrap().len(), 2);
}

#[test]
fn missing_key_is_named() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "s.toml", &BASE.replace("gamma = 0.8\n", ""));
    let out = nomad(&["solve", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.gamma"));
    assert!(out.stdout.is_empty());

    let cfg = write(&dir, "u.toml", &format!("{BASE}bogus = 1\n"));
    let out = nomad(&["solve", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("solver.bogus"));

    let out = nomad(&["solve", "--config", path_str(&dir.path().join("absent.toml"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn out_of_range_value_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "s.toml", &BASE.replace("gamma = 0.8", "gamma = 1.0"));
    let out = nomad(&["solve", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model"));
}

#[test]
fn unaccepted_search_still_writes_the_best_point() {
    let dir = TempDir::new().unwrap();
    let starved = format!("{BASE}k = 1\nmax_restarts = 1\nmax_refinements = 0\nnm_max_iterations = 1\n");
    let cfg = write(&dir, "s.toml", &starved);
    let result = dir.path().join("r.json");
    let out = nomad(&["solve", "--config", &cfg, "--out", path_str(&result)]);
    assert_eq!(out.status.code(), Some(3));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&result).unwrap()).unwrap();
    assert_eq!(v["accepted"], Value::Bool(false));
    assert!(v["dist"].as_f64().unwrap() > 1e-8);
}

#[test]
fn sweep_csv_is_stable() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "w.toml", &format!("{BASE}\n[sweep]\nparameter = \"mu\"\nvalues = [0.5, 1.0]\n"));
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let out = nomad(&["sweep", "--config", &cfg, "--format", "csv", "--out", path_str(p)]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ta, tb);
    let text = String::from_utf8(ta).unwrap();
    assert!(!text.contains('\r'));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "param,value,x_0,x_1,V_sw,kappa,W_L,W_A,dist,accepted");
    assert_eq!(lines.len(), 3);
    let first: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(first[0], "mu");
    assert_eq!(first[1], "0.500000000000");
    assert_eq!(first[9], "true");
    // Twelve significant digits.
    let digits = first[4].chars().filter(|c| c.is_ascii_digit()).collect::<String>();
    assert_eq!(digits.trim_start_matches('0').len(), 12, "{}", first[4]);
}

#[test]
fn validate_reproduces_the_recorded_distance() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "s.toml", BASE);
    let result = dir.path().join("r.json");
    let out = nomad(&["solve", "--config", &cfg, "--out", path_str(&result)]);
    assert_eq!(out.status.code(), Some(0));
    let out = nomad(&["validate", "--config", &cfg, "--result", path_str(&result)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["dist_difference"].as_f64().unwrap() <= 1e-12, "{v}");
    assert_eq!(v["report"]["accepted"], Value::Bool(true));
}

#[test]
fn seed_override_changes_only_the_simulation() {
    let dir = TempDir::new().unwrap();
    let sim = "\n[simulate]\nhorizon = 100.0\nreplications = 5\nK = 4\nwarmup = 10.0\nevents = 20000\nx = [2.0, 5.0]\n";
    let cfg = write(&dir, "m.toml", &format!("{BASE}{sim}"));
    let run = |seed: &str| {
        let out = nomad(&["simulate", "--config", &cfg, "--seed", seed]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        serde_json::from_slice::<Value>(&out.stdout).unwrap()
    };
    let (a, b, c) = (run("1"), run("1"), run("2"));
    assert_eq!(a, b);
    assert_ne!(a["location_tv"], c["location_tv"]);
    assert_eq!(a["x"], c["x"]);
    assert_eq!(a["coupled_sandwich_held"], a["coupled_runs"]);
    assert_eq!(a["finite_conservation_violations"], Value::from(0));
}

#[test]
fn unknown_subcommand_is_rejected() {
    let out = nomad(&["optimize", "--config", "x.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            let text = std::fs::read_to_string(&p).unwrap();
            nomad_mfe::cli::parse_config(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            seen += 1;
        }
    }
    assert!(seen >= 5);
}
