//! Scaled Gram matrices and their leading eigenvalues.
//!
//! For an n×p centered matrix X the Gram matrix is `(1/p)·X·Xᵀ` when p > n and
//! `(1/n)·Xᵀ·X` otherwise, so its side is always min(n, p). Eigenvalues are
//! returned in non-increasing order, clamped at zero.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix_io::DataMatrix;

/// Sides above this use the Lanczos solver when `EigMethod::Auto` is selected.
pub const DENSE_CUTOFF: usize = 500;

/// Default cap on the number of leading eigenvalues.
pub const DEFAULT_N_PRIME_CAP: usize = 100;

/// Which product the Gram matrix was built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleSide {
    /// `(1/p)·X·Xᵀ`, used when p > n.
    DivideByP,
    /// `(1/n)·Xᵀ·X`, used when n ≥ p.
    DivideByN,
}

impl ScaleSide {
    pub fn for_shape(n: usize, p: usize) -> ScaleSide {
        if p > n {
            ScaleSide::DivideByP
        } else {
            ScaleSide::DivideByN
        }
    }
}

/// Leading scaled eigenvalues of a data matrix plus the metadata needed to
/// compare them against a noise model.
#[derive(Clone, Debug)]
pub struct SpectrumEstimate {
    pub eigenvalues: Vec<f64>,
    pub n_prime: usize,
    pub n: usize,
    pub p: usize,
    /// n / p, exactly.
    pub rect_ratio: f64,
    pub scale_side: ScaleSide,
    /// Side of the Gram matrix, min(n, p).
    pub side: usize,
    /// Trace of the scaled Gram matrix, i.e. the sum of all `side` eigenvalues.
    pub trace: f64,
    /// Number of eigenvalues that can be nonzero: column centering removes
    /// one degree of freedom from the sample dimension.
    pub effective_rank: usize,
    /// n×n′ (or p×n′ when n ≥ p) orthonormal eigenvectors, when requested.
    pub eigenvectors: Option<DMatrix<f64>>,
}

impl SpectrumEstimate {
    /// Ratio of the Gram side to the other dimension, using the centered
    /// sample count. This is the Marchenko–Pastur ratio of the spectrum.
    pub fn mp_ratio(&self) -> f64 {
        let samples = self.n.saturating_sub(1).max(1) as f64;
        let features = self.p as f64;
        samples.min(features) / samples.max(features)
    }

    /// Returns a copy with every eigenvalue (and the trace) multiplied by `k`.
    pub fn scaled(&self, k: f64) -> SpectrumEstimate {
        SpectrumEstimate {
            eigenvalues: self.eigenvalues.iter().map(|v| v * k).collect(),
            trace: self.trace * k,
            ..self.clone()
        }
    }
}

/// Builds the scaled Gram matrix of a centered data matrix.
pub fn scaled_gram(m: &DataMatrix) -> Result<DMatrix<f64>> {
    if !m.is_centered() {
        return Err(Error::NotCentered);
    }
    Ok(gram_unchecked(m.values()))
}

fn gram_unchecked(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let mut g = match ScaleSide::for_shape(n, p) {
        ScaleSide::DivideByP => (x * x.transpose()) / p as f64,
        ScaleSide::DivideByN => (x.transpose() * x) / n as f64,
    };
    symmetrize(&mut g);
    g
}

fn symmetrize(g: &mut DMatrix<f64>) {
    let s = g.nrows();
    for i in 0..s {
        for j in (i + 1)..s {
            let v = 0.5 * (g[(i, j)] + g[(j, i)]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EigMethod {
    /// Dense below [`DENSE_CUTOFF`], Lanczos above.
    #[default]
    Auto,
    Dense,
    Lanczos,
}

#[derive(Clone, Debug)]
pub struct EigOptions {
    /// Relative accuracy target, as a fraction of the largest eigenvalue.
    pub tol: f64,
    pub seed: u64,
    pub method: EigMethod,
    pub want_vectors: bool,
}

impl Default for EigOptions {
    fn default() -> Self {
        EigOptions { tol: 1e-10, seed: 0, method: EigMethod::Auto, want_vectors: false }
    }
}

/// Leading eigenpairs of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct Eigenpairs {
    pub values: Vec<f64>,
    pub vectors: Option<DMatrix<f64>>,
    pub iterations: usize,
}

/// The `n_prime` largest eigenvalues of a symmetric matrix, descending,
/// negative round-off clamped to zero.
pub fn eig_truncated(g: &DMatrix<f64>, n_prime: usize, opts: &EigOptions) -> Result<Eigenpairs> {
    let side = g.nrows();
    if g.ncols() != side {
        return Err(Error::ShapeMismatch(format!("{}x{} is not square", side, g.ncols())));
    }
    if n_prime == 0 || n_prime > side {
        return Err(Error::Domain(format!("n_prime must be in 1..={side}, got {n_prime}")));
    }
    let method = match opts.method {
        EigMethod::Auto if side > DENSE_CUTOFF => EigMethod::Lanczos,
        EigMethod::Auto => EigMethod::Dense,
        m => m,
    };
    let mut pairs = match method {
        EigMethod::Lanczos => lanczos(g, n_prime, opts)?,
        _ => dense(g, n_prime, opts.want_vectors),
    };
    for v in &mut pairs.values {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(pairs)
}

fn dense(g: &DMatrix<f64>, n_prime: usize, want_vectors: bool) -> Eigenpairs {
    let eig = SymmetricEigen::new(g.clone());
    let mut order: Vec<usize> = (0..g.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    order.truncate(n_prime);
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = want_vectors.then(|| {
        DMatrix::from_fn(g.nrows(), n_prime, |r, c| eig.eigenvectors[(r, order[c])])
    });
    Eigenpairs { values, vectors, iterations: 1 }
}

/// Lanczos with full reorthogonalization. Restarts with a fresh random
/// direction whenever an invariant subspace is found, so it terminates
/// exactly after `side` steps in the worst case.
fn lanczos(g: &DMatrix<f64>, n_prime: usize, opts: &EigOptions) -> Result<Eigenpairs> {
    let side = g.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut random_unit = |basis: &[DVector<f64>]| -> Option<DVector<f64>> {
        for _ in 0..8 {
            let mut v = DVector::from_fn(side, |_, _| StandardNormal.sample(&mut rng));
            orthogonalize(&mut v, basis);
            orthogonalize(&mut v, basis);
            let norm = v.norm();
            if norm > 1e-8 {
                return Some(v / norm);
            }
        }
        None
    };

    let scale = g.amax().max(f64::MIN_POSITIVE);
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(side.min(4 * n_prime + 40));
    let mut alpha: Vec<f64> = Vec::new();
    // beta[j] couples basis[j] and basis[j + 1].
    let mut beta: Vec<f64> = Vec::new();

    let first = random_unit(&basis).ok_or(Error::ConvergenceFailure(0))?;
    basis.push(first);
    let mut next_check = (2 * n_prime + 20).min(side);

    loop {
        let j = basis.len() - 1;
        let mut w = g * &basis[j];
        let a = basis[j].dot(&w);
        alpha.push(a);
        w.axpy(-a, &basis[j], 1.0);
        if j > 0 {
            w.axpy(-beta[j - 1], &basis[j - 1], 1.0);
        }
        orthogonalize(&mut w, &basis);
        orthogonalize(&mut w, &basis);
        let k = basis.len();

        if k >= next_check || k == side {
            let t = tridiagonal(&alpha, &beta);
            let eig = SymmetricEigen::new(t);
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
            let lam_max = eig.eigenvalues[order[0]].abs().max(scale * f64::EPSILON);
            let b_next = w.norm();
            let converged = k == side
                || order.iter().take(n_prime).all(|&i| {
                    (b_next * eig.eigenvectors[(k - 1, i)]).abs() <= opts.tol * lam_max
                });
            if converged && k >= n_prime {
                let top: Vec<usize> = order.into_iter().take(n_prime).collect();
                let values = top.iter().map(|&i| eig.eigenvalues[i]).collect();
                let vectors = opts.want_vectors.then(|| {
                    let mut out = DMatrix::zeros(side, n_prime);
                    for (c, &i) in top.iter().enumerate() {
                        let mut col = out.column_mut(c);
                        for (r, q) in basis.iter().enumerate() {
                            col.axpy(eig.eigenvectors[(r, i)], q, 1.0);
                        }
                    }
                    out
                });
                return Ok(Eigenpairs { values, vectors, iterations: k });
            }
            if k == side {
                return Err(Error::ConvergenceFailure(k));
            }
            next_check = (k + k / 2 + 10).min(side);
        }

        let b = w.norm();
        if b > 1e-12 * scale {
            beta.push(b);
            basis.push(w / b);
        } else {
            match random_unit(&basis) {
                Some(v) => {
                    beta.push(0.0);
                    basis.push(v);
                }
                None => return Err(Error::ConvergenceFailure(k)),
            }
        }
    }
}

fn orthogonalize(v: &mut DVector<f64>, basis: &[DVector<f64>]) {
    for q in basis {
        let c = q.dot(v);
        v.axpy(-c, q, 1.0);
    }
}

fn tridiagonal(alpha: &[f64], beta: &[f64]) -> DMatrix<f64> {
    let k = alpha.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    t
}

/// Options for [`compute_spectrum`].
#[derive(Clone, Debug, Default)]
pub struct SpectrumOptions {
    /// Defaults to min(n, p, 100).
    pub n_prime: Option<usize>,
    pub eig: EigOptions,
}

pub fn default_n_prime(n: usize, p: usize) -> usize {
    n.min(p).min(DEFAULT_N_PRIME_CAP)
}

/// Gram matrix plus truncated eigendecomposition of a centered matrix.
pub fn compute_spectrum(m: &DataMatrix, opts: &SpectrumOptions) -> Result<SpectrumEstimate> {
    let g = scaled_gram(m)?;
    let (n, p) = (m.n(), m.p());
    let side = g.nrows();
    let n_prime = opts.n_prime.unwrap_or_else(|| default_n_prime(n, p)).clamp(1, side);
    let trace = g.trace();
    let pairs = match eig_truncated(&g, n_prime, &opts.eig) {
        Ok(pairs) => pairs,
        // Dense fallback always succeeds.
        Err(Error::ConvergenceFailure(_)) => {
            eig_truncated(&g, n_prime, &EigOptions { method: EigMethod::Dense, ..opts.eig.clone() })?
        }
        Err(e) => return Err(e),
    };
    Ok(SpectrumEstimate {
        eigenvalues: pairs.values,
        n_prime,
        n,
        p,
        rect_ratio: n as f64 / p as f64,
        scale_side: ScaleSide::for_shape(n, p),
        side,
        trace,
        effective_rank: side.min(n.saturating_sub(1)).max(1),
        eigenvectors: pairs.vectors,
    })
}

/// Largest absolute entry of `(1/p)·S·Nᵀ`, the signal/noise cross term.
pub fn cross_term_norm(s: &DMatrix<f64>, noise: &DMatrix<f64>) -> Result<f64> {
    if s.shape() != noise.shape() {
        return Err(Error::ShapeMismatch(format!(
            "signal is {:?} but noise is {:?}",
            s.shape(),
            noise.shape()
        )));
    }
    let p = s.ncols() as f64;
    Ok((s * noise.transpose()).amax() / p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix_io::center_columns;
    use rand::Rng;

    fn random_matrix(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn gram_requires_centering() {
        let m = DataMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(scaled_gram(&m), Err(Error::NotCentered)));
    }

    #[test]
    fn gram_of_centered_identity() {
        let m = center_columns(&DataMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let g = scaled_gram(&m).unwrap();
        // Centered X = [[.5,-.5],[-.5,.5]], n = p = 2 so G = XᵀX / 2.
        let x = [[0.5, -0.5], [-0.5, 0.5]];
        for i in 0..2 {
            for j in 0..2 {
                let direct: f64 = (0..2).map(|r| x[r][i] * x[r][j]).sum::<f64>() / 2.0;
                assert!((g[(i, j)] - direct).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gram_shapes_and_zero() {
        let zero = DataMatrix::new(DMatrix::zeros(3, 4)).unwrap().assume_centered();
        assert!(scaled_gram(&zero).unwrap().iter().all(|&v| v == 0.0));

        let x = random_matrix(3, 5, 1);
        let g = scaled_gram(&DataMatrix::new(x.clone()).unwrap().assume_centered()).unwrap();
        assert_eq!(g.shape(), (3, 3));
        let direct: f64 = (0..5).map(|k| x[(0, k)] * x[(1, k)]).sum::<f64>() / 5.0;
        assert!((g[(0, 1)] - direct).abs() < 1e-14);

        let xt = x.transpose();
        let g2 = scaled_gram(&DataMatrix::new(xt.clone()).unwrap().assume_centered()).unwrap();
        assert_eq!(g2.shape(), (3, 3));
        let direct: f64 = (0..5).map(|k| xt[(k, 0)] * xt[(k, 1)]).sum::<f64>() / 5.0;
        assert!((g2[(0, 1)] - direct).abs() < 1e-14);
        assert_eq!(g2, g2.transpose());
    }

    #[test]
    fn diagonal_and_identity() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0, 2.0]));
        let e = eig_truncated(&d, 2, &EigOptions::default()).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-14 && (e.values[1] - 2.0).abs() < 1e-14);
        let i5 = DMatrix::<f64>::identity(5, 5);
        let e = eig_truncated(&i5, 5, &EigOptions::default()).unwrap();
        assert!(e.values.iter().all(|v| (v - 1.0).abs() < 1e-14));
        let e = eig_truncated(&i5, 3, &EigOptions { method: EigMethod::Lanczos, ..Default::default() })
            .unwrap();
        assert!(e.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn rejects_bad_n_prime() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert!(eig_truncated(&i, 0, &EigOptions::default()).is_err());
        assert!(eig_truncated(&i, 4, &EigOptions::default()).is_err());
    }

    #[test]
    fn lanczos_matches_dense() {
        let x = random_matrix(50, 80, 7);
        let g = &x * x.transpose() / 80.0;
        let dense = eig_truncated(&g, 10, &EigOptions { method: EigMethod::Dense, ..Default::default() })
            .unwrap();
        let opts = EigOptions { method: EigMethod::Lanczos, want_vectors: true, ..Default::default() };
        let lz = eig_truncated(&g, 10, &opts).unwrap();
        for (a, b) in dense.values.iter().zip(&lz.values) {
            assert!((a - b).abs() <= 1e-8 * dense.values[0], "{a} vs {b}");
        }
        let v = lz.vectors.unwrap();
        let gram = v.transpose() * &v;
        assert!((gram - DMatrix::<f64>::identity(10, 10)).amax() < 1e-8);
    }

    #[test]
    fn lanczos_is_seed_deterministic() {
        let x = random_matrix(30, 60, 3);
        let g = &x * x.transpose();
        let opts = EigOptions { method: EigMethod::Lanczos, seed: 11, ..Default::default() };
        let a = eig_truncated(&g, 5, &opts).unwrap();
        let b = eig_truncated(&g, 5, &opts).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn cross_term() {
        let s = random_matrix(4, 6, 2);
        let zero = DMatrix::zeros(4, 6);
        assert_eq!(cross_term_norm(&s, &zero).unwrap(), 0.0);
        let same = cross_term_norm(&s, &s).unwrap();
        assert_eq!(same, (&s * s.transpose()).amax() / 6.0);
        assert!(cross_term_norm(&s, &DMatrix::zeros(4, 5)).is_err());
    }

    #[test]
    fn spectrum_metadata() {
        let x = random_matrix(20, 40, 5);
        let m = center_columns(&DataMatrix::new(x).unwrap());
        let s = compute_spectrum(&m, &SpectrumOptions::default()).unwrap();
        assert_eq!((s.n_prime, s.side, s.effective_rank), (20, 20, 19));
        assert_eq!(s.scale_side, ScaleSide::DivideByP);
        assert_eq!(s.rect_ratio, 0.5);
        assert!(s.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        let sum: f64 = s.eigenvalues.iter().sum();
        assert!((sum - s.trace).abs() <= 1e-8 * s.trace);
    }
}
