//! Distributional facts about the noise Gram matrix `W = (1/p)·N·Nᵀ`.
//!
//! For i.i.d. noise entries with variance σ² and fourth moment γ⁴:
//!
//! ```text
//! diagonal entries      ~ N(σ², (γ⁴ − σ⁴)/p)
//! off-diagonal entries  ~ N(0,  (γ⁴ + σ⁴)/(4p))
//! max diagonal          ~ Gumbel(σ², √((γ⁴ − σ⁴)/p))
//! max Gershgorin radius ~ Gumbel(μ_R, σ_R)
//!     μ_R = √((n−1)²(γ⁴+σ⁴)/(2pπ)),  σ_R² = (n−1)(π−2)(γ⁴+σ⁴)/(4pπ)
//! ```
//!
//! Every eigenvalue of W lies in a Gershgorin disc, so the largest one is
//! bounded by the largest center plus the largest radius. Combining the two
//! Gumbel quantiles at a confidence level gives [`NoiseBound`].
//!
//! The Gumbel forms carry no sample-size dependent centering. They are kept
//! exactly in this form; the bound is conservative in practice, not exact.
//! For n ≥ p the same formulas apply with n and p swapped.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Second and fourth moments of the noise entries plus the matrix shape.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryMoments {
    pub sigma2: f64,
    pub gamma4: f64,
    pub n: usize,
    pub p: usize,
}

impl EntryMoments {
    pub fn new(sigma2: f64, gamma4: f64, n: usize, p: usize) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::Domain(format!("sigma2 must be positive, got {sigma2}")));
        }
        // Jensen: E[x⁴] ≥ E[x²]², allowing for rounding.
        if !gamma4.is_finite() || gamma4 < sigma2 * sigma2 * (1.0 - 1e-12) {
            return Err(Error::Domain(format!("gamma4 {gamma4} is below sigma2^2")));
        }
        if n == 0 || p == 0 {
            return Err(Error::Domain("n and p must be positive".into()));
        }
        Ok(EntryMoments { sigma2, gamma4, n, p })
    }

    /// Gaussian entries: γ⁴ = 3σ⁴.
    pub fn gaussian(sigma2: f64, n: usize, p: usize) -> Result<Self> {
        EntryMoments::new(sigma2, 3.0 * sigma2 * sigma2, n, p)
    }

    /// Entries with the given kurtosis γ⁴/σ⁴.
    pub fn with_kurtosis(sigma2: f64, kurtosis: f64, n: usize, p: usize) -> Result<Self> {
        EntryMoments::new(sigma2, kurtosis * sigma2 * sigma2, n, p)
    }

    fn sigma4(&self) -> f64 {
        self.sigma2 * self.sigma2
    }
}

/// Generalized extreme value parameters. Only the Gumbel family (shape 0) is
/// produced here.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GevParams {
    pub location: f64,
    pub scale: f64,
    pub shape: f64,
}

impl GevParams {
    pub fn gumbel(location: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() || !location.is_finite() {
            return Err(Error::DegenerateScale);
        }
        Ok(GevParams { location, scale, shape: 0.0 })
    }

    /// Standardized argument `(x − location)/scale`.
    pub fn standardize(&self, x: f64) -> f64 {
        (x - self.location) / self.scale
    }

    /// `exp(−exp(−(x − μ)/β))`.
    pub fn cdf(&self, x: f64) -> f64 {
        (-(-self.standardize(x)).exp()).exp()
    }

    pub fn quantile(&self, q: f64) -> f64 {
        self.location + self.scale * gumbel_standard_quantile(q)
    }
}

/// Quantile of the standard Gumbel law, `−ln(−ln q)`.
pub fn gumbel_standard_quantile(q: f64) -> f64 {
    -(-q.ln()).ln()
}

/// Gershgorin–GEV upper bound on the largest noise eigenvalue.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseBound {
    pub diag_max: GevParams,
    pub radius_max: GevParams,
    pub confidence: f64,
    pub lambda_max_bound: f64,
    /// √((n−1)/p), the rate at which the radius shrinks.
    pub convergence_rate: f64,
}

/// Mean and variance of a diagonal entry of W.
pub fn diag_entry_dist(m: &EntryMoments) -> (f64, f64) {
    (m.sigma2, (m.gamma4 - m.sigma4()) / m.p as f64)
}

/// Mean and variance of an off-diagonal entry of W.
pub fn offdiag_entry_dist(m: &EntryMoments) -> (f64, f64) {
    (0.0, (m.gamma4 + m.sigma4()) / (4.0 * m.p as f64))
}

/// Gumbel law of the largest diagonal entry.
pub fn gev_max_diag(m: &EntryMoments) -> Result<GevParams> {
    let (mean, var) = diag_entry_dist(m);
    if var <= 0.0 {
        return Err(Error::DegenerateScale);
    }
    GevParams::gumbel(mean, var.sqrt())
}

/// Gumbel law of the largest Gershgorin radius, from half-normal sums.
pub fn gev_max_radius(m: &EntryMoments) -> GevParams {
    let n1 = m.n.saturating_sub(1) as f64;
    let p = m.p as f64;
    let s = m.gamma4 + m.sigma4();
    let location = (n1 * n1 * s / (2.0 * p * PI)).sqrt();
    let scale = (n1 * (PI - 2.0) * s / (4.0 * p * PI)).sqrt();
    // A single row has no off-diagonal entries; the radius is identically 0.
    GevParams { location, scale, shape: 0.0 }
}

/// Upper bound on the largest eigenvalue of W at `confidence`.
pub fn gershgorin_upper(m: &EntryMoments, confidence: f64) -> Result<NoiseBound> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Domain(format!("confidence must be in (0,1), got {confidence}")));
    }
    let diag_max = gev_max_diag(m)?;
    let radius_max = gev_max_radius(m);
    let lambda_max_bound = diag_max.quantile(confidence) + radius_max.quantile(confidence);
    Ok(NoiseBound {
        diag_max,
        radius_max,
        confidence,
        lambda_max_bound,
        convergence_rate: (m.n.saturating_sub(1) as f64 / m.p as f64).sqrt(),
    })
}

/// The Gumbel value `e^{−e^{−a}}` and its bound `e^{e^{−2a}} − e^{−a}`,
/// from `e^x ≤ e^{x²} + x`.
pub fn exceedance_inequality(a: f64) -> (f64, f64) {
    let exact = (-(-a).exp()).exp();
    let bound = (-2.0 * a).exp().exp() - (-a).exp();
    (exact, bound)
}

/// Diagonal values of E[W] and E[W²] for standardized entries.
pub fn wp_expected_moments(n: usize, p: usize) -> (f64, f64) {
    (1.0, 1.0 + (n as f64 + 1.0) / p as f64)
}

/// Log normalizer of the real Wishart eigenvalue density, from Selberg's
/// integral. Normalizes the symmetric density over all of (0, ∞)ⁿ.
pub fn wishart_log_normalizer(n: usize, p: usize) -> f64 {
    let (nf, pf) = (n as f64, p as f64);
    let mut z = -(nf * pf / 2.0) * 2f64.ln();
    for j in 1..=n {
        let jf = j as f64;
        z += ln_gamma(1.5) - ln_gamma(jf / 2.0 + 1.0) - ln_gamma(0.5 * (pf - nf + jf));
    }
    z
}

/// Log density of the n ordered eigenvalues of `N·Nᵀ` for an n×p standard
/// normal N (β = 1):
///
/// ```text
/// log n! + log Z − ½ Σλᵢ + ½(p−n−1) Σ log λᵢ + Σ_{j<k} log|λⱼ − λₖ|
/// ```
///
/// The `log n!` term makes the density integrate to one over the ordered
/// region λ₁ > … > λₙ. The value does not depend on the order `eigs` is
/// given in. Repeated eigenvalues give `−∞`.
pub fn wishart_log_density(eigs: &[f64], n: usize, p: usize) -> Result<f64> {
    if n == 0 || n > p {
        return Err(Error::Domain(format!("need 1 <= n <= p, got n={n}, p={p}")));
    }
    if eigs.len() != n {
        return Err(Error::Domain(format!("expected {n} eigenvalues, got {}", eigs.len())));
    }
    if let Some(bad) = eigs.iter().find(|&&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!("eigenvalues must be positive, got {bad}")));
    }
    // Canonical order makes the floating-point sums order independent.
    let mut eigs = eigs.to_vec();
    eigs.sort_by(|a, b| b.total_cmp(a));
    let mut vandermonde = 0.0;
    for j in 0..n {
        for k in (j + 1)..n {
            let gap = (eigs[j] - eigs[k]).abs();
            if gap == 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            vandermonde += gap.ln();
        }
    }
    let log_n_fact = ln_gamma(n as f64 + 1.0);
    let sum: f64 = eigs.iter().sum();
    let sum_log: f64 = eigs.iter().map(|v| v.ln()).sum();
    Ok(log_n_fact + wishart_log_normalizer(n, p) - 0.5 * sum
        + 0.5 * (p as f64 - n as f64 - 1.0) * sum_log
        + vandermonde)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn entry_distributions() {
        let g = EntryMoments::gaussian(1.0, 100, 500).unwrap();
        let (m, v) = diag_entry_dist(&g);
        assert!(close(m, 1.0, 0.0) && close(v, 0.004, 1e-15));
        let (m, v) = offdiag_entry_dist(&g);
        assert!(m == 0.0 && close(v, 0.002, 1e-15));

        let pm = EntryMoments::new(1.0, 1.0, 10, 500).unwrap();
        assert_eq!(diag_entry_dist(&pm), (1.0, 0.0));
        let pm1 = EntryMoments::new(1.0, 1.0, 2, 1).unwrap();
        assert_eq!(offdiag_entry_dist(&pm1), (0.0, 0.5));

        // Uniform(−√3, √3): E x² = 1, E x⁴ = 9/5.
        let u = EntryMoments::new(1.0, 9.0 / 5.0, 10, 100).unwrap();
        let (m, v) = diag_entry_dist(&u);
        assert!(m == 1.0 && close(v, 0.008, 1e-15));
    }

    #[test]
    fn rejects_bad_moments() {
        assert!(EntryMoments::new(1.0, 0.5, 10, 10).is_err());
        assert!(EntryMoments::new(0.0, 1.0, 10, 10).is_err());
        assert!(EntryMoments::new(1.0, 3.0, 0, 10).is_err());
    }

    #[test]
    fn diagonal_gumbel() {
        let g = gev_max_diag(&EntryMoments::gaussian(1.0, 100, 500).unwrap()).unwrap();
        assert_eq!(g.location, 1.0);
        assert!(close(g.scale, 0.004f64.sqrt(), 1e-15));
        assert!(close(g.scale, 0.0632455, 1e-7));
        assert!(close(g.cdf(g.location), (-1f64).exp(), 1e-15));
        assert_eq!(g.shape, 0.0);
        let degenerate = EntryMoments::new(1.0, 1.0, 10, 10).unwrap();
        assert!(matches!(gev_max_diag(&degenerate), Err(Error::DegenerateScale)));
    }

    #[test]
    fn radius_gumbel() {
        let r = gev_max_radius(&EntryMoments::gaussian(1.0, 100, 500).unwrap());
        assert!(close(r.location, 3.532_565_75, 1e-8), "{}", r.location);
        assert!(close(r.scale, 0.268233, 1e-6), "{}", r.scale);

        let two = gev_max_radius(&EntryMoments::gaussian(1.0, 2, 500).unwrap());
        assert!(close(two.location, (4.0 / (2.0 * 500.0 * PI)).sqrt(), 1e-15));

        let wide = gev_max_radius(&EntryMoments::gaussian(1.0, 100, 2000).unwrap());
        assert!(close(r.location / wide.location, 2.0, 1e-12));
    }

    #[test]
    fn gershgorin_bound_values() {
        let m = EntryMoments::gaussian(1.0, 100, 500).unwrap();
        let b = gershgorin_upper(&m, 0.99).unwrap();
        let q = gumbel_standard_quantile(0.99);
        assert!(close(q, 4.60015, 1e-5));
        let expected = (1.0 + 0.004f64.sqrt() * q) + (b.radius_max.location + b.radius_max.scale * q);
        assert!(close(b.lambda_max_bound, expected, 1e-12));
        assert!(close(b.lambda_max_bound, 6.057_419_5, 1e-7), "{}", b.lambda_max_bound);
        assert!(close(b.convergence_rate, (99.0f64 / 500.0).sqrt(), 1e-15));

        let at_loc = gershgorin_upper(&m, (-1f64).exp()).unwrap();
        assert!(close(at_loc.lambda_max_bound, 1.0 + 3.532_565_75, 1e-8));
        assert!(gershgorin_upper(&m, 1.0).is_err());
    }

    #[test]
    fn inequality_examples() {
        let (e, b) = exceedance_inequality(0.0);
        assert!(close(e, 0.367879, 1e-6) && close(b, 1.718282, 1e-6));
        let (e, b) = exceedance_inequality(10.0);
        assert!(e <= b && (1.0 - e) < 5e-5 && (1.0 - b).abs() < 5e-5);
        let (e, b) = exceedance_inequality(-3.0);
        assert!(e < 2e-9 && b > 1e100);
    }

    #[test]
    fn expected_moments() {
        assert_eq!(wp_expected_moments(100, 500), (1.0, 1.202));
        let (a, b) = wp_expected_moments(10, usize::MAX);
        assert_eq!(a, 1.0);
        assert!(close(b, 1.0, 1e-15));
    }

    #[test]
    fn wishart_density_edge_cases() {
        assert_eq!(wishart_log_density(&[2.0, 2.0], 2, 3).unwrap(), f64::NEG_INFINITY);
        assert!(wishart_log_density(&[2.0, -1.0], 2, 3).is_err());
        assert!(wishart_log_density(&[2.0], 2, 3).is_err());
        assert!(wishart_log_density(&[2.0, 1.0], 3, 2).is_err());
        let a = wishart_log_density(&[3.0, 1.0, 0.5], 3, 6).unwrap();
        let b = wishart_log_density(&[0.5, 3.0, 1.0], 3, 6).unwrap();
        assert_eq!(a, b);
    }
}
