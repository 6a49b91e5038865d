//! End-to-end rank estimation.
//!
//! The observed scaled eigenvalues are compared position by position with a
//! sorted draw from the calibrated Marchenko–Pastur law. The deviation
//! sequence drops to noise level at the signal/bulk crossover, which a
//! change-point model locates; a second change-point pass over the first
//! pass's probabilities sharpens the choice.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::changepoint::{bcp_posterior, double_posterior, BcpConfig, PosteriorTrace};
use crate::error::{Error, Result};
use crate::matrix_io::{center_columns, DataMatrix};
use crate::mp_law::{estimate_noise_variance, MpModel, MpSampler, NoiseVarianceOptions};
use crate::seed::derive_seed;
use crate::spectra::{compute_spectrum, default_n_prime, EigMethod, EigOptions, SpectrumEstimate, SpectrumOptions};

/// Thresholds of the flat-run / edge-spike alarm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlarmConfig {
    /// Probabilities below this count as flat.
    pub flat_eps: f64,
    /// Minimum flat-run length; the effective length is
    /// max(min_run, ⌈run_fraction·len⌉).
    pub min_run: usize,
    pub run_fraction: f64,
    /// Probabilities at or above this count as a spike.
    pub spike: f64,
}

impl Default for AlarmConfig {
    fn default() -> Self {
        AlarmConfig { flat_eps: 0.05, min_run: 5, run_fraction: 0.2, spike: 0.5 }
    }
}

impl AlarmConfig {
    pub fn run_length(&self, len: usize) -> usize {
        self.min_run.max((self.run_fraction * len as f64).ceil() as usize)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankConfig {
    /// Number of leading eigenvalues analyzed; min(n, p, 100) when unset.
    pub n_prime: Option<usize>,
    pub delta: f64,
    /// Confidence of the noise bound that caps the variance estimate.
    pub confidence: f64,
    /// Noise kurtosis γ⁴/σ⁴.
    pub kurtosis: f64,
    pub sweeps: usize,
    pub burnin: usize,
    pub seed: u64,
    /// First nonzero value of the linearly decreasing change prior.
    pub prior_start: f64,
    pub alarm: AlarmConfig,
    pub eig_method: EigMethod,
    /// Upper end of the signal-to-noise prior of both change-point passes.
    pub w0: f64,
    /// W floor of the first pass, as a fraction of the total sum of squares.
    /// Steps in the deviation far below the signal's own spread are then
    /// treated as noise.
    pub floor: f64,
    /// W floor of the second pass. Its input is a sequence of sampling
    /// frequencies with many exact ties at 0 and 1.
    pub second_floor: f64,
    /// Second-pass probabilities this close to the maximum count as tied.
    /// They are sampling frequencies, so exact ties are rare.
    pub tie_tol: f64,
}

impl Default for RankConfig {
    fn default() -> Self {
        RankConfig {
            n_prime: None,
            delta: 0.9,
            confidence: 0.99,
            kurtosis: 3.0,
            sweeps: 500,
            burnin: 50,
            seed: 0,
            prior_start: 0.9,
            alarm: AlarmConfig::default(),
            eig_method: EigMethod::Auto,
            w0: BcpConfig::default().w0,
            floor: 7e-3,
            second_floor: BcpConfig::default().floor,
            tie_tol: 0.02,
        }
    }
}

impl RankConfig {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::Domain(format!("delta must lie in [0, 1], got {}", self.delta)));
        }
        if !(0.0..1.0).contains(&self.prior_start) {
            return Err(Error::Domain(format!("prior_start must lie in [0, 1), got {}", self.prior_start)));
        }
        if self.sweeps == 0 {
            return Err(Error::Domain("sweeps must be at least 1".into()));
        }
        if let Some(k) = self.n_prime {
            if k < 3 {
                return Err(Error::Domain(format!("n_prime must be at least 3, got {k}")));
            }
        }
        Ok(())
    }

    fn bcp(&self) -> BcpConfig {
        BcpConfig { sweeps: self.sweeps, burnin: self.burnin, w0: self.w0, floor: self.floor }
    }
}

/// Outcome of [`estimate_rank`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RankDecision {
    pub k: usize,
    /// Positions whose second-pass probability is within the tie tolerance of the maximum.
    pub candidates: Vec<usize>,
    /// Observed scaled eigenvalues, non-increasing.
    pub eigenvalues: Vec<f64>,
    /// Sorted noise-model draws aligned with `eigenvalues`.
    pub mp_samples: Vec<f64>,
    /// `eigenvalues − mp_samples`.
    pub deviation: Vec<f64>,
    pub first_trace: PosteriorTrace,
    pub second_trace: PosteriorTrace,
    /// Half-open range of positions considered by the selection rule.
    pub trimmed_range: Range<usize>,
    pub sigma2_used: f64,
    pub n_prime: usize,
    pub warnings: Vec<String>,
}

/// Linear prior 0.9·(1 − i/(n′−1)) with position 0 pinned to zero.
pub fn linear_prior(len: usize, start: f64) -> Vec<f64> {
    let last = (len.max(2) - 1) as f64;
    let mut prior: Vec<f64> = (0..len).map(|i| start * (1.0 - i as f64 / last)).collect();
    prior[0] = 0.0;
    prior
}

/// Runs the full estimator on a data matrix. Deterministic for a fixed seed.
pub fn estimate_rank(m: &DataMatrix, cfg: &RankConfig) -> Result<RankDecision> {
    cfg.validate()?;
    let centered;
    let m = if m.is_centered() {
        m
    } else {
        centered = center_columns(m);
        &centered
    };
    let side = m.n().min(m.p());
    if side < 4 || m.n() < 5 {
        return Err(Error::Domain(format!(
            "need at least 5 samples and 4 features, got {}×{}",
            m.n(),
            m.p()
        )));
    }
    // Centering leaves at most n − 1 nonzero eigenvalues; the structural
    // zeros carry no information and would read as a step at the tail.
    let rank = side.min(m.n() - 1);
    let n_prime = cfg.n_prime.unwrap_or_else(|| default_n_prime(m.n(), m.p())).min(rank);
    let spectrum = compute_spectrum(
        m,
        &SpectrumOptions {
            n_prime: Some(n_prime),
            eig: EigOptions { seed: derive_seed(cfg.seed, 0), method: cfg.eig_method, ..EigOptions::default() },
        },
    )?;
    let n_prime = spectrum.eigenvalues.len();
    if n_prime < 3 {
        return Err(Error::Domain(format!("need at least 3 eigenvalues, have {n_prime}")));
    }
    let noise_opts = NoiseVarianceOptions { confidence: cfg.confidence, kurtosis: cfg.kurtosis };
    match estimate_noise_variance(&spectrum, &noise_opts) {
        Ok(noise) => {
            let mut warnings = Vec::new();
            if noise.capped {
                warnings.push(format!(
                    "noise variance lowered from {:.6e} to {:.6e} by the largest-eigenvalue bound",
                    noise.trailing_estimate, noise.sigma2
                ));
            }
            let samples = noise_samples(&spectrum, noise.sigma2, cfg.seed)?;
            finish(&spectrum, samples, noise.sigma2, cfg, warnings)
        }
        Err(Error::DegenerateSpectrum) => degenerate(&spectrum, cfg),
        Err(e) => Err(e),
    }
}

/// Sorted draws from the calibrated law. A full spectrum's worth is drawn and
/// the top n′ kept, so sample ranks line up with eigenvalue ranks.
fn noise_samples(spectrum: &SpectrumEstimate, sigma2: f64, seed: u64) -> Result<Vec<f64>> {
    let model = MpModel::new(spectrum.mp_ratio(), sigma2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let count = spectrum.effective_rank.max(spectrum.eigenvalues.len());
    let mut samples = MpSampler::new(model).sample(count, &mut rng);
    samples.truncate(spectrum.eigenvalues.len());
    Ok(samples)
}

fn finish(
    spectrum: &SpectrumEstimate,
    mp_samples: Vec<f64>,
    sigma2: f64,
    cfg: &RankConfig,
    mut warnings: Vec<String>,
) -> Result<RankDecision> {
    let eigenvalues = spectrum.eigenvalues.clone();
    let n_prime = eigenvalues.len();
    let deviation: Vec<f64> = eigenvalues.iter().zip(&mp_samples).map(|(x, n)| x - n).collect();
    let prior = linear_prior(n_prime, cfg.prior_start);
    let bcp = cfg.bcp();
    let first = bcp_posterior(&deviation, &prior, &bcp, derive_seed(cfg.seed, 2))?;
    let second_cfg = BcpConfig { floor: cfg.second_floor, ..bcp };
    let second = double_posterior(&first, &second_cfg, derive_seed(cfg.seed, 3))?;

    let (k, candidates, trimmed_range) = if mp_samples[0] > eigenvalues[0] {
        warnings.push("largest noise sample exceeds largest eigenvalue; no signal detected".into());
        (0, Vec::new(), 0..n_prime)
    } else {
        let range = trim_alarm(&first.probs, &cfg.alarm);
        if range.end < n_prime {
            warnings.push(format!(
                "alarm: flat posterior run from position {} trimmed from selection",
                range.end
            ));
        }
        let (mut k, candidates) = select_k(&first, &second, cfg.delta, cfg.tie_tol, range.clone());
        if let Some(i) = deviation[..k].iter().position(|&d| d < 0.0) {
            warnings.push(format!(
                "noise sample exceeds eigenvalue {} inside the selected {k} dimensions; k = 0",
                i + 1
            ));
            k = 0;
        } else if k == 0 {
            warnings.push("no change point selected; reporting k = 0".into());
        }
        (k, candidates, range)
    };
    Ok(RankDecision {
        k,
        candidates,
        eigenvalues,
        mp_samples,
        deviation,
        first_trace: first,
        second_trace: second,
        trimmed_range,
        sigma2_used: sigma2,
        n_prime,
        warnings,
    })
}

/// No usable noise floor: either the matrix is zero or it is noiselessly
/// low rank. The numerical rank is reported.
fn degenerate(spectrum: &SpectrumEstimate, cfg: &RankConfig) -> Result<RankDecision> {
    let top = spectrum.eigenvalues[0];
    let rank = spectrum.eigenvalues.iter().filter(|&&v| v > 1e-10 * top && top > 0.0).count();
    let warning = if rank == 0 {
        "matrix is zero after centering; k = 0".to_string()
    } else {
        format!("spectrum has no noise floor; reporting numerical rank {rank}")
    };
    let zeros = vec![0.0; spectrum.eigenvalues.len()];
    let mut decision = finish(spectrum, zeros, 0.0, cfg, vec![warning])?;
    decision.k = rank;
    decision.candidates = Vec::new();
    Ok(decision)
}

/// Range of positions kept for selection.
///
/// Scanning from the end, positions at or above the spike threshold are
/// skipped, then positions below the flat threshold are counted. If that
/// flat run is at least the alarm length, selection stops where it begins
/// (but always keeps position 0). Otherwise the full range is kept.
pub fn trim_alarm(probs: &[f64], alarm: &AlarmConfig) -> Range<usize> {
    let len = probs.len();
    let mut end = len;
    while end > 0 && probs[end - 1] >= alarm.spike {
        end -= 1;
    }
    let mut start = end;
    while start > 0 && probs[start - 1] < alarm.flat_eps {
        start -= 1;
    }
    if end - start >= alarm.run_length(len) {
        0..start.max(1)
    } else {
        0..len
    }
}

/// Applies the δ rule inside `range`.
///
/// Candidates are the positions where the second-pass probability (of a
/// step right after that position) is within `tie_tol` of its maximum. Among them, those whose first-pass probability reaches
/// `delta` times the first-pass maximum qualify, and k is the largest one.
/// When none qualifies, k is the position of the first-pass maximum (largest
/// position on ties). A change at position i means i signal dimensions.
pub fn select_k(
    first: &PosteriorTrace,
    second: &PosteriorTrace,
    delta: f64,
    tie_tol: f64,
    range: Range<usize>,
) -> (usize, Vec<usize>) {
    let second = &second.probs;
    let range = range.start..range.end.min(first.probs.len()).min(second.len());
    if range.is_empty() {
        return (0, Vec::new());
    }
    let top_second = second[range.clone()].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let candidates: Vec<usize> = range.clone().filter(|&i| second[i] >= top_second - tie_tol).collect();
    let top_first = first.probs[range.clone()].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let threshold = delta * top_first;
    if let Some(&k) = candidates.iter().rev().find(|&&i| first.probs[i] >= threshold) {
        return (k, candidates);
    }
    let k = range.rev().find(|&i| first.probs[i] == top_first).unwrap_or(0);
    (k, candidates)
}
