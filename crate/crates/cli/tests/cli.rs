use std::path::Path;
use std::process::{Command, Output};

fn specrank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_specrank")).args(args).env_remove("SPECRANK_SEED").output().unwrap()
}

fn write_matrix(path: &Path, n: usize, p: usize, signal: usize) {
    // Deterministic pseudo-noise from a small LCG keeps the test free of extra crates.
    let mut state: u64 = 12345;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    };
    let factors: Vec<Vec<f64>> = (0..n).map(|_| (0..signal).map(|_| 4.0 * next()).collect()).collect();
    let mut text = String::new();
    for row in &factors {
        let cells: Vec<String> = (0..p)
            .map(|j| {
                let s = if j < signal { row[j] * 3.0 } else { 0.0 };
                format!("{}", s + next() * 1.7)
            })
            .collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn estimate_reports_json() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.csv");
    write_matrix(&input, 100, 300, 3);
    let v = json(&specrank(&["estimate", "--input", input.to_str().unwrap(), "--seed", "4"]));
    assert_eq!(v["k"], 3);
    let n_prime = v["n_prime"].as_u64().unwrap() as usize;
    for key in ["eigenvalues", "mp_samples", "deviation", "posterior", "double_posterior"] {
        assert_eq!(v[key].as_array().unwrap().len(), n_prime, "{key}");
    }
    assert!(v["sigma2"].as_f64().unwrap() > 0.0);
    assert!(v["runtime_s"].is_number());
}

#[test]
fn estimate_is_reproducible_apart_from_timing() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.csv");
    write_matrix(&input, 60, 120, 2);
    let run = || {
        let mut v = json(&specrank(&["estimate", "--input", input.to_str().unwrap(), "--seed", "9"]));
        v.as_object_mut().unwrap().remove("runtime_s");
        v
    };
    assert_eq!(run(), run());
}

#[test]
fn seed_can_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.csv");
    write_matrix(&input, 40, 80, 2);
    let by_flag = specrank(&["spectrum", "--input", input.to_str().unwrap(), "--seed", "21"]);
    let by_env = Command::new(env!("CARGO_BIN_EXE_specrank"))
        .args(["spectrum", "--input", input.to_str().unwrap()])
        .env("SPECRANK_SEED", "21")
        .output()
        .unwrap();
    assert!(by_flag.status.success());
    assert_eq!(by_flag.stdout, by_env.stdout);
}

#[test]
fn estimate_writes_csv_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.csv");
    let out = dir.path().join("out.csv");
    write_matrix(&input, 50, 100, 2);
    let o = specrank(&["estimate", "--input", input.to_str().unwrap(), "--csv", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(out).unwrap();
    assert!(text.starts_with("index,eigenvalue,mp_sample,deviation,posterior,double_posterior\n"));
}

#[test]
fn spectrum_lists_eigenvalues_and_noise_draws() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.csv");
    write_matrix(&input, 30, 60, 1);
    let o = specrank(&["spectrum", "--input", input.to_str().unwrap(), "--n-prime", "10"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("index,eigenvalue,mp_sample"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 10);
    assert!(rows[0].starts_with("1,"));
}

#[test]
fn simulate_writes_bench_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = specrank(&[
        "simulate", "--preset", "table1-row1", "--replicates", "4", "--seed", "3", "--out-dir", dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert!(csv.starts_with("kind,k_true,n,p,sigmas,acc,mae,time_s\n"));
    assert!(csv.contains("x1,3,100,10,\""));
    assert!(dir.path().join("bench.json").exists());
}

#[test]
fn simulate_accepts_explicit_settings() {
    let dir = tempfile::tempdir().unwrap();
    let o = specrank(&[
        "simulate", "--kind", "x2", "--n", "60", "--p", "120", "--k", "2", "--sigmas", "5", "--replicates", "2",
        "--out-dir", dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn usage_and_input_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let bad_csv = dir.path().join("bad.csv");
    std::fs::write(&bad_csv, "1,2,3\n4,x,6\n").unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["estimate"],
        vec!["estimate", "--input", "/definitely/missing.csv"],
        vec!["estimate", "--input", bad_csv.to_str().unwrap()],
        vec!["estimate", "--input", bad_csv.to_str().unwrap(), "--delta", "1.5"],
        vec!["simulate", "--preset", "table1-row42", "--out-dir", d],
        vec!["simulate", "--kind", "x2", "--n", "10", "--p", "5", "--k", "8", "--sigmas", "2", "--out-dir", d],
        vec!["simulate", "--preset", "table1-row1", "--replicates", "0", "--out-dir", d],
        vec!["bogus"],
    ];
    for args in cases {
        let o = specrank(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn constant_matrix_reports_zero_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("flat.csv");
    let row = ["1.5"; 8].join(",");
    std::fs::write(&input, vec![row; 10].join("\n")).unwrap();
    let o = specrank(&["estimate", "--input", input.to_str().unwrap()]);
    let v = json(&o);
    assert_eq!(v["k"], 0);
    assert!(!v["warnings"].as_array().unwrap().is_empty());
}
