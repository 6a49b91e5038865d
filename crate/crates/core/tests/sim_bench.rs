use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use specrank::sim_bench::{gen_x1, gen_x2, run_benchmark, run_replicate, write_bench, SimKind, SimSetting};
use specrank::RankConfig;

fn setting(kind: SimKind, k: usize, n: usize, p: usize, sigmas: Vec<f64>) -> SimSetting {
    SimSetting { kind, k_true: k, n, p, sigmas, replicates: 5, seed: 11 }
}

fn covariance(x: &nalgebra::DMatrix<f64>) -> nalgebra::DMatrix<f64> {
    let n = x.nrows() as f64;
    let mut centered = x.clone();
    for mut col in centered.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    centered.transpose() * &centered / (n - 1.0)
}

#[test]
fn x1_covariance_matches_population() {
    let s = setting(SimKind::X1, 3, 100_000, 10, vec![2.0, 1.0, 1.0]);
    let m = gen_x1(&s, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let cov = covariance(m.values());
    let target = s.column_variances();
    for i in 0..10 {
        for j in 0..10 {
            let want = if i == j { target[i] } else { 0.0 };
            assert!((cov[(i, j)] - want).abs() < 0.05, "entry ({i},{j}) = {} want {want}", cov[(i, j)]);
        }
    }
    assert!((target[0] - 2.2916).abs() < 1e-12 && (target[3] - 0.2916).abs() < 1e-12);
}

#[test]
fn x2_column_variances() {
    let s = setting(SimKind::X2, 3, 50_000, 6, vec![3.0]);
    let m = gen_x2(&s, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let cov = covariance(m.values());
    for (j, want) in s.column_variances().iter().enumerate() {
        assert!((cov[(j, j)] - want).abs() / want < 0.03, "column {j}: {} want {want}", cov[(j, j)]);
    }
}

#[test]
fn zero_signal_is_pure_noise() {
    let s = setting(SimKind::X2, 3, 20_000, 4, vec![0.0]);
    let m = gen_x2(&s, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let cov = covariance(m.values());
    for j in 0..4 {
        assert!((cov[(j, j)] - 1.0).abs() < 0.05);
    }
}

#[test]
fn adding_replicates_keeps_earlier_outcomes() {
    let cfg = RankConfig::default();
    let mut s = setting(SimKind::X1, 3, 100, 10, vec![2.0, 1.0, 1.0]);
    let short = run_benchmark(std::slice::from_ref(&s), &cfg, 1).unwrap().remove(0);
    s.replicates = 6;
    let long = run_benchmark(std::slice::from_ref(&s), &cfg, 2).unwrap().remove(0);
    assert_eq!(short.estimates[..], long.estimates[..5]);
    assert_eq!(run_replicate(&s, &cfg, 2).k, short.estimates[2]);
}

#[test]
fn single_replicate_has_integer_error() {
    let mut s = setting(SimKind::X2, 2, 60, 120, vec![4.0]);
    s.replicates = 1;
    let row = run_benchmark(&[s], &RankConfig::default(), 1).unwrap().remove(0);
    assert!(row.accuracy == 0.0 || row.accuracy == 1.0);
    assert_eq!(row.mae.fract(), 0.0);
}

#[test]
fn bench_files_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let rows = run_benchmark(&[setting(SimKind::X1, 3, 100, 10, vec![2.0, 1.0, 1.0])], &RankConfig::default(), 1).unwrap();
    write_bench(&rows, dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert!(csv.starts_with("kind,k_true,n,p,sigmas,acc,mae,time_s\n"));
    assert_eq!(csv.lines().count(), 2);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("bench.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 1);
}
