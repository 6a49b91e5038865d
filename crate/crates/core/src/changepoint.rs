//! Univariate Bayesian change-point analysis under the Barry–Hartigan
//! product-partition model.
//!
//! A partition ρ splits the series into b contiguous blocks with normal block
//! means. Integrating out the means, the noise variance and the
//! signal-to-noise ratio w ~ U(0, w0) leaves
//!
//! ```text
//! f(x | ρ) ∝ ∫₀^{w0} w^{(b−1)/2} (W + B·w)^{−(m−1)/2} dw
//! ```
//!
//! with W the within-block and B the between-block sum of squares. Each
//! position i ≥ 1 carries an independent prior change probability; a change
//! at i means element i starts a new block, and position 0 never changes.
//!
//! [`bcp_posterior`] estimates the posterior change probabilities with the
//! partial-sums Gibbs sampler. [`exact_posterior_small`] enumerates every
//! partition of short series and serves as its oracle; the two evaluate the
//! integral by different numerical routes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::error::{Error, Result};

/// Longest series accepted by [`exact_posterior_small`].
pub const MAX_EXACT_LEN: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BcpConfig {
    /// Retained sweeps after burn-in.
    pub sweeps: usize,
    pub burnin: usize,
    /// Upper end of the uniform prior on the signal-to-noise ratio w.
    pub w0: f64,
    /// Fraction of the total sum of squares added to W. Keeps partitions
    /// whose blocks are exactly constant from having unbounded likelihood.
    pub floor: f64,
}

impl Default for BcpConfig {
    fn default() -> Self {
        BcpConfig { sweeps: 500, burnin: 50, w0: 0.2, floor: 1e-8 }
    }
}

/// Posterior change probabilities of one series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorTrace {
    pub series: Vec<f64>,
    pub prior: Vec<f64>,
    /// `probs[i]` = P(element i starts a new block); `probs[0] = 0`.
    pub probs: Vec<f64>,
    pub posterior_means: Vec<f64>,
    pub sweeps: usize,
    pub burnin: usize,
    pub seed: u64,
}

impl PosteriorTrace {
    /// Index of the largest probability; lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

fn validate(series: &[f64], prior: &[f64]) -> Result<()> {
    if series.len() < 3 {
        return Err(Error::SeriesTooShort(series.len()));
    }
    if prior.len() != series.len() {
        return Err(Error::PriorLengthMismatch { series: series.len(), prior: prior.len() });
    }
    if let Some(v) = series.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("series contains non-finite value {v}")));
    }
    if let Some(v) = prior.iter().find(|&&v| !(0.0..1.0).contains(&v)) {
        return Err(Error::Domain(format!("prior probabilities must lie in [0, 1), got {v}")));
    }
    Ok(())
}

/// Shared model quantities for one series.
struct Model {
    m: usize,
    /// Exponent (m − 1)/2.
    e: f64,
    tss: f64,
    flat: bool,
    floor: f64,
    w0: f64,
    mean: f64,
}

impl Model {
    fn new(series: &[f64], cfg: &BcpConfig) -> Model {
        let m = series.len();
        let mean = series.iter().sum::<f64>() / m as f64;
        let tss: f64 = series.iter().map(|v| (v - mean) * (v - mean)).sum();
        let max_abs = series.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let flat = tss <= 1e-20 * m as f64 * max_abs * max_abs || tss == 0.0;
        Model { m, e: 0.5 * (m as f64 - 1.0), tss, flat, floor: cfg.floor, w0: cfg.w0, mean }
    }

    fn effective_w(&self, within: f64) -> f64 {
        within.max(0.0) + self.floor * self.tss
    }

    /// Log likelihood of a partition with `blocks` blocks, up to a constant.
    fn log_lik(&self, within: f64, between: f64, blocks: usize) -> f64 {
        if self.flat {
            return 0.0;
        }
        let a = 0.5 * (blocks as f64 - 1.0);
        log_marginal(self.effective_w(within), between.max(0.0), a, self.e, self.w0)
    }

    fn log_lik_quadrature(&self, within: f64, between: f64, blocks: usize) -> f64 {
        if self.flat {
            return 0.0;
        }
        let a = 0.5 * (blocks as f64 - 1.0);
        log_marginal_quadrature(self.effective_w(within), between.max(0.0), a, self.e, self.w0)
    }

    /// Posterior mean of w given the partition.
    fn shrinkage(&self, within: f64, between: f64, blocks: usize) -> f64 {
        if self.flat {
            return 0.0;
        }
        let a = 0.5 * (blocks as f64 - 1.0);
        let w = self.effective_w(within);
        let b = between.max(0.0);
        (log_marginal(w, b, a + 1.0, self.e, self.w0) - log_marginal(w, b, a, self.e, self.w0)).exp()
    }
}

/// `ln ∫₀^{w0} w^a (W + B·w)^{−e} dw` for W > 0.
///
/// Maps onto a regularized incomplete beta function when e − a − 1 > 0 and
/// falls back to quadrature otherwise.
pub fn log_marginal(within: f64, between: f64, a: f64, e: f64, w0: f64) -> f64 {
    if between <= 0.0 {
        return -e * within.ln() + (a + 1.0) * w0.ln() - (a + 1.0).ln();
    }
    let alpha = a + 1.0;
    let beta = e - a - 1.0;
    if beta <= 0.0 {
        return log_marginal_quadrature(within, between, a, e, w0);
    }
    let denom = within + between * w0;
    let x = between * w0 / denom;
    let one_minus_x = within / denom;
    -e * within.ln()
        + alpha * (within.ln() - between.ln())
        + ln_beta(alpha, beta)
        + ln_beta_reg(alpha, beta, x, one_minus_x)
}

/// Same integral by trapezoid quadrature after `w = w0 / (1 + eᵘ)`, which
/// maps (0, w0) onto the real line with exponentially decaying tails.
pub fn log_marginal_quadrature(within: f64, between: f64, a: f64, e: f64, w0: f64) -> f64 {
    let ln_w0 = w0.ln();
    let ln_within = within.ln();
    let ln_between = if between > 0.0 { between.ln() } else { f64::NEG_INFINITY };
    let psi = |u: f64| {
        let sp = softplus(u);
        let ln_w = ln_w0 - sp;
        let ln_mix = log_add_exp(ln_within, ln_between + ln_w);
        a * ln_w - e * ln_mix + ln_w0 + u - 2.0 * sp
    };
    let knee = if between > 0.0 { (ln_between + ln_w0 - ln_within).max(0.0) } else { 0.0 };
    let upper = knee + 60.0 / (a + 1.0) + 10.0;
    let lower = -50.0;
    let h = 0.125;
    let steps = ((upper - lower) / h).ceil() as usize;
    let values: Vec<f64> = (0..=steps).map(|k| psi(lower + k as f64 * h)).collect();
    let peak = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values.iter().map(|v| (v - peak).exp()).sum();
    peak + (sum * h).ln()
}

fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

fn log_add_exp(x: f64, y: f64) -> f64 {
    let (hi, lo) = if x > y { (x, y) } else { (y, x) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln I_x(a, b)`, the log regularized incomplete beta function, computed
/// without forming `I_x` itself so tiny values do not underflow.
/// `one_minus_x` must equal 1 − x; passing it separately keeps precision
/// when x is close to one.
pub fn ln_beta_reg(a: f64, b: f64, x: f64, one_minus_x: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if one_minus_x <= 0.0 {
        return 0.0;
    }
    let front = |a: f64, b: f64, x: f64, y: f64| a * x.ln() + b * y.ln() - a.ln() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        front(a, b, x, one_minus_x) + beta_cf(a, b, x).ln()
    } else {
        let complement = front(b, a, one_minus_x, x) + beta_cf(b, a, one_minus_x).ln();
        (-complement.exp()).ln_1p()
    }
}

// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let fix = |v: f64| if v.abs() < TINY { TINY } else { v };
    let mut c = 1.0;
    let mut d = 1.0 / fix(1.0 - qab * x / qap);
    let mut h = d;
    for m in 1..5000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / fix(1.0 + aa * d);
        c = fix(1.0 + aa / c);
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / fix(1.0 + aa * d);
        c = fix(1.0 + aa / c);
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Gibbs-sampled posterior change probabilities.
///
/// Runs `cfg.burnin` sweeps followed by `cfg.sweeps` retained sweeps; each
/// sweep visits positions 1..m and redraws the change indicator from its full
/// conditional. Deterministic for a fixed seed.
pub fn bcp_posterior(
    series: &[f64],
    prior: &[f64],
    cfg: &BcpConfig,
    seed: u64,
) -> Result<PosteriorTrace> {
    validate(series, prior)?;
    if cfg.sweeps == 0 {
        return Err(Error::Domain("sweeps must be at least 1".into()));
    }
    let model = Model::new(series, cfg);
    let m = model.m;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Prefix sums of the centered series.
    let mut prefix = vec![0.0; m + 1];
    for i in 0..m {
        prefix[i + 1] = prefix[i] + (series[i] - model.mean);
    }
    let seg = |l: usize, r: usize| {
        let s = prefix[r] - prefix[l];
        s * s / (r - l) as f64
    };

    let mut change = vec![false; m];
    let mut counts = vec![0usize; m];
    let mut mean_acc = vec![0.0; m];

    for sweep in 0..(cfg.burnin + cfg.sweeps) {
        // Exact recomputation once per sweep avoids drift in B.
        let mut between = 0.0;
        let mut blocks = 0;
        let mut start = 0;
        for i in 1..=m {
            if i == m || change[i] {
                between += seg(start, i);
                blocks += 1;
                start = i;
            }
        }

        let mut last_start = 0;
        for i in 1..m {
            let mut r = i + 1;
            while r < m && !change[r] {
                r += 1;
            }
            let l = last_start;
            let joined = seg(l, r);
            let split = seg(l, i) + seg(i, r);
            let rest = between - if change[i] { split } else { joined };
            let blocks_without = blocks - usize::from(change[i]);

            let new_state = if prior[i] <= 0.0 {
                false
            } else {
                let b_with = rest + split;
                let b_without = rest + joined;
                let log_odds = prior[i].ln() - (-prior[i]).ln_1p()
                    + model.log_lik(model.tss - b_with, b_with, blocks_without + 1)
                    - model.log_lik(model.tss - b_without, b_without, blocks_without);
                let p = 1.0 / (1.0 + (-log_odds).exp());
                rng.random::<f64>() < p
            };
            change[i] = new_state;
            if new_state {
                between = rest + split;
                blocks = blocks_without + 1;
                last_start = i;
            } else {
                between = rest + joined;
                blocks = blocks_without;
            }
        }

        if sweep >= cfg.burnin {
            for (c, &flag) in counts.iter_mut().zip(&change) {
                *c += usize::from(flag);
            }
            accumulate_means(series, &change, &model, 1.0, &mut mean_acc);
        }
    }

    let total = cfg.sweeps as f64;
    let mut probs: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
    probs[0] = 0.0;
    Ok(PosteriorTrace {
        series: series.to_vec(),
        prior: prior.to_vec(),
        probs,
        posterior_means: mean_acc.iter().map(|v| v / total).collect(),
        sweeps: cfg.sweeps,
        burnin: cfg.burnin,
        seed,
    })
}

/// Adds `weight ×` the posterior block means under partition `change`.
fn accumulate_means(series: &[f64], change: &[bool], model: &Model, weight: f64, acc: &mut [f64]) {
    let m = series.len();
    let mut bounds = vec![0];
    bounds.extend((1..m).filter(|&i| change[i]));
    bounds.push(m);
    let mut within = 0.0;
    let mut between = 0.0;
    let mut means = Vec::with_capacity(bounds.len() - 1);
    for w in bounds.windows(2) {
        let block = &series[w[0]..w[1]];
        let mu = block.iter().sum::<f64>() / block.len() as f64;
        within += block.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
        between += block.len() as f64 * (mu - model.mean) * (mu - model.mean);
        means.push(mu);
    }
    let shrink = model.shrinkage(within, between, means.len());
    for (w, mu) in bounds.windows(2).zip(means) {
        let fitted = (1.0 - shrink) * mu + shrink * model.mean;
        for slot in &mut acc[w[0]..w[1]] {
            *slot += weight * fitted;
        }
    }
}

/// Exact posterior over all 2^(m−1) partitions of a short series.
#[derive(Clone, Debug)]
pub struct ExactPosterior {
    pub trace: PosteriorTrace,
    /// Normalized posterior of each partition; bit i−1 of the index is set
    /// when element i starts a block.
    pub partition_probs: Vec<f64>,
}

/// Exact change probabilities by enumeration, for 3 ≤ m ≤ 14.
pub fn exact_posterior_small(series: &[f64], prior: &[f64], cfg: &BcpConfig) -> Result<ExactPosterior> {
    validate(series, prior)?;
    let m = series.len();
    if m > MAX_EXACT_LEN {
        return Err(Error::SeriesTooLong(m));
    }
    let model = Model::new(series, cfg);
    let count = 1usize << (m - 1);
    let mut log_post = vec![f64::NEG_INFINITY; count];
    for (mask, slot) in log_post.iter_mut().enumerate() {
        let mut lp = 0.0;
        for i in 1..m {
            let on = mask >> (i - 1) & 1 == 1;
            lp += if on { prior[i].ln() } else { (-prior[i]).ln_1p() };
        }
        if lp == f64::NEG_INFINITY {
            continue;
        }
        let (within, between, blocks) = direct_sums(series, mask, model.mean);
        *slot = lp + model.log_lik_quadrature(within, between, blocks);
    }
    let peak = log_post.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_post.iter().map(|v| (v - peak).exp()).collect();
    let z: f64 = weights.iter().sum();
    let partition_probs: Vec<f64> = weights.iter().map(|w| w / z).collect();

    let mut probs = vec![0.0; m];
    let mut means = vec![0.0; m];
    let mut change = vec![false; m];
    for (mask, &pp) in partition_probs.iter().enumerate() {
        if pp == 0.0 {
            continue;
        }
        for i in 1..m {
            change[i] = mask >> (i - 1) & 1 == 1;
            if change[i] {
                probs[i] += pp;
            }
        }
        accumulate_means(series, &change, &model, pp, &mut means);
    }
    Ok(ExactPosterior {
        trace: PosteriorTrace {
            series: series.to_vec(),
            prior: prior.to_vec(),
            probs,
            posterior_means: means,
            sweeps: 0,
            burnin: 0,
            seed: 0,
        },
        partition_probs,
    })
}

fn direct_sums(series: &[f64], mask: usize, grand_mean: f64) -> (f64, f64, usize) {
    let m = series.len();
    let mut within = 0.0;
    let mut between = 0.0;
    let mut blocks = 0;
    let mut start = 0;
    for i in 1..=m {
        if i == m || mask >> (i - 1) & 1 == 1 {
            let block = &series[start..i];
            let mu = block.iter().sum::<f64>() / block.len() as f64;
            within += block.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
            between += block.len() as f64 * (mu - grand_mean) * (mu - grand_mean);
            blocks += 1;
            start = i;
        }
    }
    (within, between, blocks)
}

/// Runs the sampler a second time on the first pass's probabilities.
///
/// The pinned `probs[0]` is left out so it cannot register as a step. The
/// result is re-indexed so that `probs[i]` is the probability that the
/// first-pass sequence changes between positions i and i+1; the last entry
/// is 0. Position i of the second pass then carries the first pass's prior
/// at position i.
pub fn double_posterior(trace: &PosteriorTrace, cfg: &BcpConfig, seed: u64) -> Result<PosteriorTrace> {
    let (series, prior) = second_level_inputs(trace);
    let raw = bcp_posterior(series, prior, cfg, seed)?;
    Ok(reindex_second(trace, raw))
}

/// The first-pass probabilities without the pinned position, with the prior
/// shifted to match.
pub fn second_level_inputs(trace: &PosteriorTrace) -> (&[f64], &[f64]) {
    let m = trace.probs.len();
    (&trace.probs[1.min(m)..], &trace.prior[..m.saturating_sub(1)])
}

/// Maps a posterior over `probs[1..]` back onto the first pass's positions.
pub fn reindex_second(trace: &PosteriorTrace, raw: PosteriorTrace) -> PosteriorTrace {
    let mut probs = raw.probs;
    probs.push(0.0);
    let mut posterior_means = Vec::with_capacity(probs.len());
    posterior_means.push(trace.probs[0]);
    posterior_means.extend(raw.posterior_means);
    PosteriorTrace {
        series: trace.probs.clone(),
        prior: trace.prior.clone(),
        probs,
        posterior_means,
        ..raw
    }
}
