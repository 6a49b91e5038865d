//! Simulation matrices and replicate benchmarks.
//!
//! `X1` draws rows from N(0, diag(sigmas, 0, …) + 0.54²·I). `X2` adds
//! standard normal noise to a signal block whose first k columns have
//! i.i.d. N(0, sigma) entries.

use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{fmt17, to_json_string};
use crate::matrix_io::DataMatrix;
use crate::rank_estimator::{estimate_rank, RankConfig};
use crate::seed::derive_seed;

/// Noise variance of the X1 construction, 0.54².
pub const X1_NOISE_VARIANCE: f64 = 0.54 * 0.54;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimKind {
    X1,
    X2,
}

impl FromStr for SimKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x1" => Ok(SimKind::X1),
            "x2" => Ok(SimKind::X2),
            other => Err(Error::InvalidSetting(format!("unknown kind {other:?}"))),
        }
    }
}

impl SimKind {
    pub fn name(self) -> &'static str {
        match self {
            SimKind::X1 => "x1",
            SimKind::X2 => "x2",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSetting {
    pub kind: SimKind,
    pub k_true: usize,
    pub n: usize,
    pub p: usize,
    /// X1: one variance per signal direction. X2: a single signal variance.
    pub sigmas: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
}

impl SimSetting {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSetting(msg));
        if self.n == 0 || self.p == 0 {
            return bad(format!("dimensions must be positive, got n={} p={}", self.n, self.p));
        }
        if self.k_true > self.n.min(self.p) {
            return bad(format!("k={} exceeds min(n, p)={}", self.k_true, self.n.min(self.p)));
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        let want = match self.kind {
            SimKind::X1 => self.k_true,
            SimKind::X2 => 1,
        };
        if self.sigmas.len() != want {
            return bad(format!(
                "{} needs {want} sigma value(s), got {}",
                self.kind.name(),
                self.sigmas.len()
            ));
        }
        if let Some(s) = self.sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return bad(format!("sigma values must be non-negative, got {s}"));
        }
        Ok(())
    }

    /// Population variance of each column.
    pub fn column_variances(&self) -> Vec<f64> {
        (0..self.p)
            .map(|j| match self.kind {
                SimKind::X1 => self.sigmas.get(j).copied().unwrap_or(0.0) + X1_NOISE_VARIANCE,
                SimKind::X2 => 1.0 + if j < self.k_true { self.sigmas[0] } else { 0.0 },
            })
            .collect()
    }
}

fn normal_matrix<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// X1: independent columns with variance `sigmas[j] + 0.2916`.
pub fn gen_x1<R: Rng + ?Sized>(setting: &SimSetting, rng: &mut R) -> Result<DataMatrix> {
    if setting.kind != SimKind::X1 {
        return Err(Error::InvalidSetting("gen_x1 needs kind x1".into()));
    }
    setting.validate()?;
    let sd: Vec<f64> = setting.column_variances().iter().map(|v| v.sqrt()).collect();
    let mut x = normal_matrix(setting.n, setting.p, rng);
    for (j, s) in sd.iter().enumerate() {
        x.column_mut(j).scale_mut(*s);
    }
    DataMatrix::new(x)
}

/// X2: signal block plus standard normal noise.
pub fn gen_x2<R: Rng + ?Sized>(setting: &SimSetting, rng: &mut R) -> Result<DataMatrix> {
    if setting.kind != SimKind::X2 {
        return Err(Error::InvalidSetting("gen_x2 needs kind x2".into()));
    }
    setting.validate()?;
    let sd = setting.sigmas[0].sqrt();
    let signal = normal_matrix(setting.n, setting.k_true, rng) * sd;
    let mut x = normal_matrix(setting.n, setting.p, rng);
    x.columns_mut(0, setting.k_true).zip_apply(&signal, |e, s| *e += s);
    DataMatrix::new(x)
}

pub fn generate<R: Rng + ?Sized>(setting: &SimSetting, rng: &mut R) -> Result<DataMatrix> {
    match setting.kind {
        SimKind::X1 => gen_x1(setting, rng),
        SimKind::X2 => gen_x2(setting, rng),
    }
}

/// Result of one replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub index: usize,
    /// None when the estimator failed.
    pub k: Option<usize>,
    pub time_s: f64,
    pub warning: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub setting: SimSetting,
    pub accuracy: f64,
    pub mae: f64,
    /// Mean wall time of successful estimator calls.
    pub mean_time_s: f64,
    pub failures: usize,
    pub estimates: Vec<Option<usize>>,
    pub warnings: Vec<String>,
}

/// Runs one replicate. Its seed depends only on the master seed and index.
pub fn run_replicate(setting: &SimSetting, cfg: &RankConfig, index: usize) -> ReplicateOutcome {
    let seed = derive_seed(setting.seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    let m = match generate(setting, &mut rng) {
        Ok(m) => m,
        Err(e) => return ReplicateOutcome { index, k: None, time_s: 0.0, warning: Some(e.to_string()) },
    };
    let cfg = RankConfig { seed: derive_seed(seed, 1), ..cfg.clone() };
    let start = Instant::now();
    let result = estimate_rank(&m, &cfg);
    let time_s = start.elapsed().as_secs_f64();
    match result {
        Ok(d) => ReplicateOutcome { index, k: Some(d.k), time_s, warning: None },
        Err(e) => ReplicateOutcome {
            index,
            k: None,
            time_s: 0.0,
            warning: Some(format!("replicate {index}: {e}")),
        },
    }
}

/// Runs every setting's replicates on `workers` threads and aggregates them
/// in replicate order.
pub fn run_benchmark(settings: &[SimSetting], cfg: &RankConfig, workers: usize) -> Result<Vec<BenchRow>> {
    for s in settings {
        s.validate()?;
    }
    let workers = workers.max(1);
    let mut rows = Vec::with_capacity(settings.len());
    for setting in settings {
        let mut outcomes: Vec<ReplicateOutcome> = if workers == 1 {
            (0..setting.replicates).map(|i| run_replicate(setting, cfg, i)).collect()
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = (0..workers)
                    .map(|w| {
                        scope.spawn(move || {
                            (w..setting.replicates)
                                .step_by(workers)
                                .map(|i| run_replicate(setting, cfg, i))
                                .collect::<Vec<_>>()
                        })
                    })
                    .collect();
                handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
            })
        };
        outcomes.sort_by_key(|o| o.index);
        rows.push(aggregate(setting, &outcomes));
    }
    Ok(rows)
}

/// Failed replicates count as incorrect and enter the MAE as k = 0.
pub fn aggregate(setting: &SimSetting, outcomes: &[ReplicateOutcome]) -> BenchRow {
    let total = outcomes.len().max(1) as f64;
    let mut correct = 0usize;
    let mut abs_err = 0.0;
    let mut time = 0.0;
    let mut ok = 0usize;
    for o in outcomes {
        let k = o.k.unwrap_or(0);
        if o.k == Some(setting.k_true) {
            correct += 1;
        }
        abs_err += (k as f64 - setting.k_true as f64).abs();
        if o.k.is_some() {
            time += o.time_s;
            ok += 1;
        }
    }
    BenchRow {
        setting: setting.clone(),
        accuracy: correct as f64 / total,
        mae: abs_err / total,
        mean_time_s: if ok > 0 { time / ok as f64 } else { 0.0 },
        failures: outcomes.len() - ok,
        estimates: outcomes.iter().map(|o| o.k).collect(),
        warnings: outcomes.iter().filter_map(|o| o.warning.clone()).collect(),
    }
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("kind,k_true,n,p,sigmas,acc,mae,time_s\n");
    for r in rows {
        let s = &r.setting;
        let sigmas: Vec<String> = s.sigmas.iter().map(|v| v.to_string()).collect();
        out.push_str(&format!(
            "{},{},{},{},\"{}\",{},{},{}\n",
            s.kind.name(),
            s.k_true,
            s.n,
            s.p,
            sigmas.join(","),
            fmt17(r.accuracy),
            fmt17(r.mae),
            fmt17(r.mean_time_s)
        ));
    }
    out
}

/// Writes `bench.csv` and `bench.json` into `dir`.
pub fn write_bench(rows: &[BenchRow], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("bench.csv"), bench_csv(rows))?;
    fs::write(dir.join("bench.json"), to_json_string(rows)?)?;
    Ok(())
}

/// Preset benchmark settings, numbered from 1.
pub fn table1_preset(row: usize, replicates: usize, seed: u64) -> Option<SimSetting> {
    use SimKind::*;
    let (kind, k_true, n, p, sigmas): (SimKind, usize, usize, usize, Vec<f64>) = match row {
        1 => (X1, 3, 100, 10, vec![2.0, 1.0, 1.0]),
        2 => (X1, 3, 1000, 10, vec![2.0, 1.0, 1.0]),
        3 => (X1, 3, 10000, 10, vec![2.0, 1.0, 1.0]),
        4 => (X1, 3, 10, 100, vec![2.0, 1.0, 1.0]),
        5 => (X1, 3, 10, 1000, vec![2.0, 1.0, 1.0]),
        6 => (X2, 3, 10, 100, vec![6.0]),
        7 => (X2, 3, 10, 1000, vec![6.0]),
        8 => (X2, 3, 10, 10000, vec![6.0]),
        9 => (X1, 10, 500, 100, vec![2.0; 10]),
        10 => (X2, 10, 500, 100, vec![2.0]),
        11 => (X2, 10, 5000, 100, vec![2.0]),
        12 => (X2, 10, 50000, 100, vec![2.0]),
        13 => (X2, 10, 100, 500, vec![6.0]),
        14 => (X2, 10, 100, 5000, vec![6.0]),
        15 => (X2, 10, 100, 50000, vec![6.0]),
        16 => (X2, 10, 100, 500, vec![10.0]),
        17 => (X2, 10, 100, 5000, vec![10.0]),
        18 => (X2, 10, 100, 50000, vec![100.0]),
        _ => return None,
    };
    Some(SimSetting { kind, k_true, n, p, sigmas, replicates, seed })
}

/// Parses `table1-rowN`.
pub fn preset_by_name(name: &str, replicates: usize, seed: u64) -> Result<SimSetting> {
    name.strip_prefix("table1-row")
        .and_then(|r| r.parse::<usize>().ok())
        .and_then(|r| table1_preset(r, replicates, seed))
        .ok_or_else(|| Error::InvalidSetting(format!("unknown preset {name:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x1() -> SimSetting {
        SimSetting { kind: SimKind::X1, k_true: 3, n: 100, p: 10, sigmas: vec![2.0, 1.0, 1.0], replicates: 1, seed: 1 }
    }

    #[test]
    fn population_variances() {
        let v = x1().column_variances();
        assert!((v[0] - 2.2916).abs() < 1e-12);
        assert!((v[3] - 0.2916).abs() < 1e-12);
        let x2 = SimSetting { kind: SimKind::X2, sigmas: vec![3.0], ..x1() };
        let v = x2.column_variances();
        assert_eq!((v[0], v[3]), (4.0, 1.0));
    }

    #[test]
    fn validation() {
        assert!(x1().validate().is_ok());
        assert!(SimSetting { k_true: 11, ..x1() }.validate().is_err());
        assert!(SimSetting { replicates: 0, ..x1() }.validate().is_err());
        assert!(SimSetting { sigmas: vec![1.0], ..x1() }.validate().is_err());
        let x2 = SimSetting { kind: SimKind::X2, k_true: 5, p: 3, sigmas: vec![1.0], ..x1() };
        assert!(x2.validate().is_err());
        assert!(preset_by_name("table1-row19", 1, 0).is_err());
        assert!(preset_by_name("table1-row1", 1, 0).is_ok());
        for r in 1..=18 {
            table1_preset(r, 1, 0).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn generators_have_requested_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = gen_x1(&x1(), &mut rng).unwrap();
        assert_eq!((m.n(), m.p()), (100, 10));
        let x2 = SimSetting { kind: SimKind::X2, sigmas: vec![0.0], ..x1() };
        assert!(gen_x1(&x2, &mut rng).is_err());
        let m = gen_x2(&x2, &mut rng).unwrap();
        assert_eq!((m.n(), m.p()), (100, 10));
    }

    #[test]
    fn single_replicate_arithmetic() {
        let s = x1();
        let row = aggregate(&s, &[ReplicateOutcome { index: 0, k: Some(2), time_s: 0.5, warning: None }]);
        assert_eq!((row.accuracy, row.mae, row.mean_time_s), (0.0, 1.0, 0.5));
        let row = aggregate(&s, &[ReplicateOutcome { index: 0, k: None, time_s: 0.0, warning: Some("x".into()) }]);
        assert_eq!((row.accuracy, row.mae, row.failures), (0.0, 3.0, 1));
    }

    #[test]
    fn csv_layout() {
        let row = aggregate(&x1(), &[ReplicateOutcome { index: 0, k: Some(3), time_s: 0.25, warning: None }]);
        let csv = bench_csv(&[row]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("kind,k_true,n,p,sigmas,acc,mae,time_s"));
        assert!(lines.next().unwrap().starts_with("x1,3,100,10,\"2,1,1\",1.0000000000000000e0,"));
    }
}
