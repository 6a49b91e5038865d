use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use specrank::format::{fmt17, to_json_string};
use specrank::matrix_io::{load_matrix, standardize_columns, DataMatrix, Format, Orientation};
use specrank::sim_bench::{preset_by_name, run_benchmark, bench_csv, write_bench, SimKind, SimSetting};
use specrank::{estimate_rank, Error, RankConfig, RankDecision};

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "specrank", version, about = "Estimate the number of signal dimensions in a data matrix")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the signal rank of a matrix file.
    Estimate(EstimateArgs),
    /// Run simulation benchmarks and write bench.csv / bench.json.
    Simulate(SimulateArgs),
    /// Write observed eigenvalues next to noise-model samples.
    Spectrum(SpectrumArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Tsv,
    Mm,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrientationArg {
    Rows,
    Cols,
}

#[derive(Args)]
struct InputArgs {
    #[arg(long)]
    input: PathBuf,
    /// Defaults to a guess from the file extension.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long, value_enum, default_value = "rows")]
    orientation: OrientationArg,
    #[arg(long)]
    n_prime: Option<usize>,
    #[arg(long, env = "SPECRANK_SEED", default_value_t = 0)]
    seed: u64,
    /// Noise fourth moment relative to the squared variance (3 for Gaussian).
    #[arg(long, default_value_t = 3.0)]
    gamma4: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = 0.9)]
    delta: f64,
    /// Scale every column to unit variance before estimating.
    #[arg(long)]
    standardize: bool,
    #[arg(long, conflicts_with = "csv")]
    json: bool,
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Preset benchmark setting, e.g. table1-row1.
    #[arg(long, conflicts_with_all = ["kind", "n", "p", "k", "sigmas"])]
    preset: Option<String>,
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// Comma-separated signal variances.
    #[arg(long, value_delimiter = ',')]
    sigmas: Option<Vec<f64>>,
    #[arg(long, default_value_t = 100)]
    replicates: usize,
    #[arg(long, env = "SPECRANK_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Directory receiving bench.csv and bench.json.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SpectrumArgs {
    #[command(flatten)]
    input: InputArgs,
}

/// Serialized outcome of `estimate`.
#[derive(Serialize)]
struct CliResult {
    k: usize,
    sigma2: f64,
    n_prime: usize,
    eigenvalues: Vec<f64>,
    mp_samples: Vec<f64>,
    deviation: Vec<f64>,
    posterior: Vec<f64>,
    double_posterior: Vec<f64>,
    candidates: Vec<usize>,
    warnings: Vec<String>,
    runtime_s: f64,
}

impl CliResult {
    fn new(d: RankDecision, runtime_s: f64) -> Self {
        CliResult {
            k: d.k,
            sigma2: d.sigma2_used,
            n_prime: d.n_prime,
            eigenvalues: d.eigenvalues,
            mp_samples: d.mp_samples,
            deviation: d.deviation,
            posterior: d.first_trace.probs,
            double_posterior: d.second_trace.probs,
            candidates: d.candidates,
            warnings: d.warnings,
            runtime_s,
        }
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure { code: EXIT_INPUT, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::ConvergenceFailure(_)
            | Error::DegenerateSpectrum
            | Error::DegenerateScale
            | Error::NotCentered => EXIT_NUMERIC,
            _ => EXIT_INPUT,
        };
        Failure { code, message: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Spectrum(a) => cmd_spectrum(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load(a: &InputArgs) -> Result<DataMatrix, Failure> {
    let format = match a.format {
        Some(FormatArg::Csv) => Format::Csv,
        Some(FormatArg::Tsv) => Format::Tsv,
        Some(FormatArg::Mm) => Format::MatrixMarketDense,
        None => Format::from_path(&a.input),
    };
    let orientation = match a.orientation {
        OrientationArg::Rows => Orientation::SamplesAsRows,
        OrientationArg::Cols => Orientation::SamplesAsColumns,
    };
    Ok(load_matrix(&a.input, format, orientation)?)
}

fn rank_config(a: &InputArgs, delta: f64) -> Result<RankConfig, Failure> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Failure::input(format!("--delta must lie in [0, 1], got {delta}")));
    }
    if a.n_prime.is_some_and(|k| k < 3) {
        return Err(Failure::input("--n-prime must be at least 3"));
    }
    if !(a.gamma4 >= 1.0 && a.gamma4.is_finite()) {
        return Err(Failure::input(format!("--gamma4 must be at least 1, got {}", a.gamma4)));
    }
    Ok(RankConfig { n_prime: a.n_prime, delta, seed: a.seed, kurtosis: a.gamma4, ..RankConfig::default() })
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::input(format!("{}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(|e| Failure::input(e.to_string()))
        }
    }
}

fn cmd_estimate(a: EstimateArgs) -> Result<(), Failure> {
    let cfg = rank_config(&a.input, a.delta)?;
    let mut m = load(&a.input)?;
    if a.standardize {
        let s = standardize_columns(&m);
        if !s.constant_columns.is_empty() {
            eprintln!("warning: {} constant column(s) set to zero", s.constant_columns.len());
        }
        m = s.matrix;
    }
    let start = Instant::now();
    let decision = estimate_rank(&m, &cfg)?;
    let runtime_s = start.elapsed().as_secs_f64();
    for w in &decision.warnings {
        eprintln!("warning: {w}");
    }
    let result = CliResult::new(decision, runtime_s);
    let text = if a.csv {
        eprintln!("k = {}", result.k);
        let mut s = String::from("index,eigenvalue,mp_sample,deviation,posterior,double_posterior\n");
        for i in 0..result.n_prime {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                i + 1,
                fmt17(result.eigenvalues[i]),
                fmt17(result.mp_samples[i]),
                fmt17(result.deviation[i]),
                fmt17(result.posterior[i]),
                fmt17(result.double_posterior[i])
            ));
        }
        s
    } else {
        let mut s = to_json_string(&result).map_err(Error::from)?;
        s.push('\n');
        s
    };
    emit(&text, a.input.out.as_deref())
}

fn cmd_spectrum(a: SpectrumArgs) -> Result<(), Failure> {
    let cfg = rank_config(&a.input, 0.9)?;
    let m = load(&a.input)?;
    let d = estimate_rank(&m, &cfg)?;
    let mut s = String::from("index,eigenvalue,mp_sample\n");
    for (i, (e, n)) in d.eigenvalues.iter().zip(&d.mp_samples).enumerate() {
        s.push_str(&format!("{},{},{}\n", i + 1, fmt17(*e), fmt17(*n)));
    }
    emit(&s, a.input.out.as_deref())
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), Failure> {
    if a.replicates == 0 {
        return Err(Failure::input("--replicates must be at least 1"));
    }
    let setting = match &a.preset {
        Some(name) => preset_by_name(name, a.replicates, a.seed)?,
        None => {
            let need = |v: Option<usize>, flag: &str| v.ok_or_else(|| Failure::input(format!("--{flag} is required without --preset")));
            let kind: SimKind = a
                .kind
                .as_deref()
                .ok_or_else(|| Failure::input("--kind is required without --preset"))?
                .parse()?;
            SimSetting {
                kind,
                k_true: need(a.k, "k")?,
                n: need(a.n, "n")?,
                p: need(a.p, "p")?,
                sigmas: a.sigmas.clone().ok_or_else(|| Failure::input("--sigmas is required without --preset"))?,
                replicates: a.replicates,
                seed: a.seed,
            }
        }
    };
    setting.validate()?;
    let rows = run_benchmark(std::slice::from_ref(&setting), &RankConfig::default(), a.workers)?;
    for w in rows.iter().flat_map(|r| &r.warnings) {
        eprintln!("warning: {w}");
    }
    write_bench(&rows, &a.out_dir)?;
    emit(&bench_csv(&rows), None)
}
