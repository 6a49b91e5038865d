//! The Marchenko–Pastur law and the noise-variance estimate that calibrates it.
//!
//! With ratio c and noise variance σ² the continuous part of the law lives on
//! `[σ²(1−√c)², σ²(1+√c)²]` with density
//!
//! ```text
//! f(y) = √((y − c₋)(c₊ − y)) / (2π σ² c y)
//! ```
//!
//! For c > 1 this part carries mass 1/c (the rest is a point mass at zero,
//! which is not modelled); the density here is renormalized to integrate to one.
//!
//! Integrals use the substitution `y = c₋ + 2h·sin²(θ/2)`, h = (c₊ − c₋)/2,
//! which turns the square-root edges into a smooth integrand on `[0, π]`.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rmt_bounds::{gershgorin_upper, EntryMoments, NoiseBound};
use crate::spectra::{ScaleSide, SpectrumEstimate};

/// Upper and lower support edges `σ²(1 ± √c)²`.
pub fn mp_support(c: f64, sigma2: f64) -> Result<(f64, f64)> {
    if !(c > 0.0 && c.is_finite()) || !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::Domain(format!("need c > 0 and sigma2 > 0, got c={c}, sigma2={sigma2}")));
    }
    let r = c.sqrt();
    Ok((sigma2 * (1.0 - r) * (1.0 - r), sigma2 * (1.0 + r) * (1.0 + r)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MpModel {
    pub c: f64,
    pub sigma2: f64,
    pub c_minus: f64,
    pub c_plus: f64,
}

// 10-point Gauss–Legendre on [-1, 1].
const GL_NODES: [f64; 5] = [
    0.148_874_338_981_631_2,
    0.433_395_394_129_247_2,
    0.679_409_568_299_024_4,
    0.865_063_366_688_984_5,
    0.973_906_528_517_171_7,
];
const GL_WEIGHTS: [f64; 5] = [
    0.295_524_224_714_752_9,
    0.269_266_719_309_996_4,
    0.219_086_362_515_982,
    0.149_451_349_150_580_6,
    0.066_671_344_308_688_1,
];

/// Number of Gauss–Legendre panels spanning the full `[0, π]` range.
const PANELS: usize = 64;

impl MpModel {
    pub fn new(c: f64, sigma2: f64) -> Result<Self> {
        let (c_minus, c_plus) = mp_support(c, sigma2)?;
        Ok(MpModel { c, sigma2, c_minus, c_plus })
    }

    fn half_width(&self) -> f64 {
        0.5 * (self.c_plus - self.c_minus)
    }

    /// Mass of the continuous part relative to f, i.e. 1 / min(1, 1/c).
    fn renorm(&self) -> f64 {
        self.c.max(1.0)
    }

    fn y_of(&self, theta: f64) -> f64 {
        let s = (0.5 * theta).sin();
        self.c_minus + 2.0 * self.half_width() * s * s
    }

    fn theta_of(&self, y: f64) -> f64 {
        let h = self.half_width();
        let s = ((y - self.c_minus) / (2.0 * h)).clamp(0.0, 1.0).sqrt();
        2.0 * s.asin()
    }

    /// Density in θ: f(y(θ))·dy/dθ.
    fn theta_density(&self, theta: f64) -> f64 {
        let h = self.half_width();
        let sin = theta.sin();
        let y = self.y_of(theta);
        if y <= 0.0 {
            // Only reachable at θ = 0 when c = 1; the limit is finite.
            return self.renorm() * h * h * 2.0 / (2.0 * PI * self.sigma2 * self.c * h);
        }
        self.renorm() * h * h * sin * sin / (2.0 * PI * self.sigma2 * self.c * y)
    }

    fn integrate_theta(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let panels = (((b - a) / PI) * PANELS as f64).ceil().max(1.0) as usize;
        let width = (b - a) / panels as f64;
        let mut total = 0.0;
        for k in 0..panels {
            let lo = a + k as f64 * width;
            let mid = lo + 0.5 * width;
            let half = 0.5 * width;
            let mut s = 0.0;
            for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
                s += w * (self.theta_density(mid - half * x) + self.theta_density(mid + half * x));
            }
            total += s * half;
        }
        total
    }

    pub fn pdf(&self, y: f64) -> f64 {
        if !(y > self.c_minus && y < self.c_plus) || y <= 0.0 {
            return 0.0;
        }
        let root = ((y - self.c_minus) * (self.c_plus - y)).sqrt();
        self.renorm() * root / (2.0 * PI * self.sigma2 * self.c * y)
    }

    /// CDF by quadrature of the density.
    pub fn cdf(&self, y: f64) -> f64 {
        if y <= self.c_minus {
            return 0.0;
        }
        if y >= self.c_plus {
            return 1.0;
        }
        self.integrate_theta(0.0, self.theta_of(y)).clamp(0.0, 1.0)
    }

    /// Inverse CDF by bisection on the quadrature CDF.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Domain(format!("quantile level must be in (0,1), got {q}")));
        }
        let (mut lo, mut hi) = (0.0, PI);
        while self.y_of(hi) - self.y_of(lo) > 1e-10 * self.sigma2.max(1e-300) && hi - lo > 1e-15 {
            let mid = 0.5 * (lo + hi);
            if self.integrate_theta(0.0, mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(self.y_of(0.5 * (lo + hi)))
    }

    /// E[y · 1{y ≤ Q(q)}] / q, the mean of the lowest fraction q of the law.
    pub fn lower_tail_mean(&self, q: f64) -> Result<f64> {
        if q >= 1.0 {
            return Ok(self.mean());
        }
        let y = self.quantile(q)?;
        let theta = self.theta_of(y);
        // y·f(y)·dy/dθ reduces to a multiple of sin²θ.
        let h = self.half_width();
        let partial = self.renorm() * h * h / (2.0 * PI * self.sigma2 * self.c)
            * (0.5 * theta - 0.25 * (2.0 * theta).sin());
        Ok(partial / q)
    }

    /// Mean of the (renormalized) continuous part: σ² for c ≤ 1, cσ² above.
    pub fn mean(&self) -> f64 {
        self.sigma2 * self.c.max(1.0)
    }

    /// `count` i.i.d. draws by inverse CDF, sorted descending.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<f64> {
        MpSampler::new(*self).sample(count, rng)
    }
}

/// Inverse-CDF sampler with a precomputed cumulative table.
#[derive(Clone, Debug)]
pub struct MpSampler {
    model: MpModel,
    /// Cumulative mass at θ = kπ/TABLE for k = 0..=TABLE.
    cumulative: Vec<f64>,
}

const TABLE: usize = 512;

impl MpSampler {
    pub fn new(model: MpModel) -> Self {
        let step = PI / TABLE as f64;
        let mut cumulative = Vec::with_capacity(TABLE + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for k in 0..TABLE {
            acc += model.integrate_theta(k as f64 * step, (k + 1) as f64 * step);
            cumulative.push(acc);
        }
        MpSampler { model, cumulative }
    }

    pub fn model(&self) -> &MpModel {
        &self.model
    }

    /// Inverse CDF: table lookup, then bisection inside one cell until the
    /// bracket is narrower than 1e-10 in y (relative to σ²).
    pub fn quantile(&self, q: f64) -> f64 {
        let total = self.cumulative[TABLE];
        let target = q.clamp(0.0, 1.0) * total;
        let cell = self.cumulative.partition_point(|&v| v <= target).clamp(1, TABLE) - 1;
        let step = PI / TABLE as f64;
        let base = self.cumulative[cell];
        let (mut lo, mut hi) = (cell as f64 * step, (cell + 1) as f64 * step);
        let start = lo;
        let width = 1e-10 * self.model.sigma2;
        while self.model.y_of(hi) - self.model.y_of(lo) > width && hi - lo > 1e-16 {
            let mid = 0.5 * (lo + hi);
            if base + self.model.integrate_theta(start, mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        self.model.y_of(0.5 * (lo + hi))
    }

    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<f64> {
        let mut out: Vec<f64> = (0..count).map(|_| self.quantile(rng.random::<f64>())).collect();
        out.sort_by(|a, b| b.total_cmp(a));
        out
    }
}

/// Settings for [`estimate_noise_variance`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseVarianceOptions {
    /// Confidence of the Gershgorin bound that caps the MP upper edge.
    pub confidence: f64,
    /// Noise kurtosis γ⁴/σ⁴; 3 for Gaussian noise.
    pub kurtosis: f64,
}

impl Default for NoiseVarianceOptions {
    fn default() -> Self {
        NoiseVarianceOptions { confidence: 0.99, kurtosis: 3.0 }
    }
}

#[derive(Clone, Debug)]
pub struct NoiseVariance {
    /// The corrected variance to use for the noise model.
    pub sigma2: f64,
    /// Tail-matched estimate before the cap.
    pub trailing_estimate: f64,
    /// Mean of the trailing eigenvalues used.
    pub trailing_mean: f64,
    pub trailing_count: usize,
    /// Bound evaluated at the trailing estimate, when the shape allows one.
    pub bound: Option<NoiseBound>,
    /// True when the Gershgorin bound lowered the estimate.
    pub capped: bool,
}

/// Estimates the noise variance from the trailing part of a spectrum.
///
/// The lowest ⌈r/2⌉ of the r structurally nonzero eigenvalues are averaged
/// and divided by the mean of the same lower fraction of a unit-variance
/// MP law with the spectrum's ratio, which makes the estimate consistent
/// for pure noise. When only n′ < r eigenvalues were computed, the trailing
/// sum comes from the trace identity instead. Finally the MP upper edge is
/// kept at or below the Gershgorin–GEV bound for noise of that variance.
pub fn estimate_noise_variance(
    spectrum: &SpectrumEstimate,
    opts: &NoiseVarianceOptions,
) -> Result<NoiseVariance> {
    let rank = spectrum.effective_rank.min(spectrum.side);
    if rank < 4 {
        return Err(Error::Domain(format!("need at least 4 eigenvalues, have {rank}")));
    }
    let eig = &spectrum.eigenvalues;
    let half = rank.div_ceil(2);
    let head = rank - half;
    let (trailing_sum, count) = if eig.len() >= head {
        let lead: f64 = eig[..head].iter().sum();
        let sum = if eig.len() >= rank {
            eig[head..rank].iter().sum()
        } else {
            spectrum.trace - lead
        };
        (sum, half)
    } else {
        let lead: f64 = eig.iter().sum();
        (spectrum.trace - lead, rank - eig.len())
    };
    let trailing_mean = trailing_sum.max(0.0) / count as f64;
    let top = eig.first().copied().unwrap_or(0.0);
    if !(top > 0.0) || trailing_mean <= 1e-12 * top {
        return Err(Error::DegenerateSpectrum);
    }

    let c = spectrum.mp_ratio();
    let unit = MpModel::new(c, 1.0)?;
    let factor = unit.lower_tail_mean(count as f64 / rank as f64)?;
    let trailing_estimate = trailing_mean / factor;

    // Gram side plays the role of n, the other dimension that of p.
    let (rows, cols) = match spectrum.scale_side {
        ScaleSide::DivideByP => (rank, spectrum.p),
        ScaleSide::DivideByN => (spectrum.p, spectrum.n.saturating_sub(1).max(1)),
    };
    let moments = EntryMoments::with_kurtosis(trailing_estimate, opts.kurtosis, rows, cols)?;
    let bound = match gershgorin_upper(&moments, opts.confidence) {
        Ok(b) => Some(b),
        Err(Error::DegenerateScale) => None,
        Err(e) => return Err(e),
    };
    let mut sigma2 = trailing_estimate;
    let mut capped = false;
    if let Some(b) = bound {
        let edge_factor = (1.0 + c.sqrt()).powi(2);
        if trailing_estimate * edge_factor > b.lambda_max_bound {
            sigma2 = b.lambda_max_bound / edge_factor;
            capped = true;
        }
    }
    Ok(NoiseVariance { sigma2, trailing_estimate, trailing_mean, trailing_count: count, bound, capped })
}
