//! Pairwise-deletion moments and the shrinkage covariance
//! `Σ̂ = (1 − λ)Û + λD̂` with a diagonal target of sample variances.
//!
//! The shrinkage weight is the analytic minimizer of the estimator's mean
//! squared error for the "diagonal, unequal variance" target:
//!
//! ```text
//! λ = Σ_{k≠l} Var(s_kl) / Σ_{k≠l} s_kl²
//! ```
//!
//! with `s_kl` the unbiased covariance over the rows where both cells are
//! present and `Var(s_kl) = n_kl / (n_kl − 1)³ · Σ_i (w_ikl − w̄_kl)²`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::data::EncodedMatrix;
use crate::error::{Error, Result};

/// Divisor used for `Û` entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Divisor {
    /// `n_kl`, the number of rows where both cells are present.
    #[default]
    PairCount,
    /// `n_kl − 1`.
    PairCountMinusOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ShrinkageOptions {
    /// Overrides the analytic shrinkage weight.
    pub lambda: Option<f64>,
    pub divisor: Divisor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// `n_kl`; pairs with fewer than two rows carry a zero covariance.
    pub counts: DMatrix<usize>,
}

impl PairwiseMoments {
    pub fn is_degenerate(&self, k: usize, l: usize) -> bool {
        self.counts[(k, l)] < 2
    }
}

/// Column means over non-missing cells and pairwise covariances over rows
/// where both cells are present.
pub fn pairwise_moments(m: &EncodedMatrix) -> Result<PairwiseMoments> {
    pairwise_moments_with(m, Divisor::PairCount)
}

pub fn pairwise_moments_with(m: &EncodedMatrix, divisor: Divisor) -> Result<PairwiseMoments> {
    let (n, p) = m.values.shape();
    let x = &m.values;
    let mut mean = DVector::zeros(p);
    for k in 0..p {
        let (sum, cnt) = (0..n)
            .filter_map(|i| (!x[(i, k)].is_nan()).then_some(x[(i, k)]))
            .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
        if cnt == 0 {
            return Err(Error::EmptyColumn(m.columns[k].name.clone()));
        }
        mean[k] = sum / cnt as f64;
    }
    let mut cov = DMatrix::zeros(p, p);
    let mut counts = DMatrix::from_element(p, p, 0usize);
    for k in 0..p {
        for l in k..p {
            let mut sum = 0.0;
            let mut cnt = 0usize;
            for i in 0..n {
                let (a, b) = (x[(i, k)], x[(i, l)]);
                if !a.is_nan() && !b.is_nan() {
                    sum += (a - mean[k]) * (b - mean[l]);
                    cnt += 1;
                }
            }
            let denom = match divisor {
                Divisor::PairCount => cnt as f64,
                Divisor::PairCountMinusOne => cnt as f64 - 1.0,
            };
            let u = if cnt >= 2 { sum / denom } else { 0.0 };
            cov[(k, l)] = u;
            cov[(l, k)] = u;
            counts[(k, l)] = cnt;
            counts[(l, k)] = cnt;
        }
    }
    Ok(PairwiseMoments { mean, cov, counts })
}

/// Analytic shrinkage weight toward the diagonal target, clamped to `[0, 1]`.
pub fn shrinkage_lambda(m: &EncodedMatrix, moments: &PairwiseMoments) -> f64 {
    let (n, p) = m.values.shape();
    if p < 2 {
        return 0.0;
    }
    let x = &m.values;
    let mean = &moments.mean;
    let mut num = 0.0;
    let mut den = 0.0;
    let mut w = Vec::with_capacity(n);
    for k in 0..p {
        for l in (k + 1)..p {
            w.clear();
            for i in 0..n {
                let (a, b) = (x[(i, k)], x[(i, l)]);
                if !a.is_nan() && !b.is_nan() {
                    w.push((a - mean[k]) * (b - mean[l]));
                }
            }
            let nkl = w.len();
            if nkl < 2 {
                continue;
            }
            let nf = nkl as f64;
            let wbar = w.iter().sum::<f64>() / nf;
            let ss: f64 = w.iter().map(|v| (v - wbar) * (v - wbar)).sum();
            let s = nf / (nf - 1.0) * wbar;
            num += nf / (nf - 1.0).powi(3) * ss;
            den += s * s;
        }
    }
    if den == 0.0 {
        return 1.0;
    }
    (num / den).clamp(0.0, 1.0)
}

/// Shrinkage covariance with its Cholesky factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrunkCovariance {
    pub mean: DVector<f64>,
    pub sample_cov: DMatrix<f64>,
    /// Diagonal of the target `D̂` (the sample variances).
    pub target: DVector<f64>,
    pub lambda: f64,
    pub sigma: DMatrix<f64>,
    pub pair_counts: DMatrix<usize>,
    /// Lower-triangular `L` with `Σ̂ = LLᵀ`.
    pub chol: DMatrix<f64>,
}

pub fn shrunk_covariance(m: &EncodedMatrix) -> Result<ShrunkCovariance> {
    shrunk_covariance_with(m, ShrinkageOptions::default())
}

pub fn shrunk_covariance_with(m: &EncodedMatrix, opts: ShrinkageOptions) -> Result<ShrunkCovariance> {
    let moments = pairwise_moments_with(m, opts.divisor)?;
    let p = m.dim();
    let target = moments.cov.diagonal();
    if let Some(k) = (0..p).find(|&k| !(target[k] > 0.0)) {
        return Err(Error::ZeroVariance(m.columns[k].name.clone()));
    }
    let lambda = match opts.lambda {
        Some(l) if (0.0..=1.0).contains(&l) => l,
        Some(l) => return Err(Error::InvalidArgument(format!("lambda {l} outside [0, 1]"))),
        None => shrinkage_lambda(m, &moments),
    };
    let mut sigma = &moments.cov * (1.0 - lambda);
    for k in 0..p {
        sigma[(k, k)] = target[k];
    }
    let chol = factorize(&sigma)?;
    Ok(ShrunkCovariance {
        mean: moments.mean,
        sample_cov: moments.cov,
        target,
        lambda,
        sigma,
        pair_counts: moments.counts,
        chol,
    })
}

/// Cholesky factor, retrying once with a `1e−10·max(diag)` jitter.
fn factorize(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(c) = Cholesky::new(sigma.clone()) {
        return Ok(c.l());
    }
    let jitter = 1e-10 * sigma.diagonal().max();
    let mut s = sigma.clone();
    for k in 0..s.nrows() {
        s[(k, k)] += jitter;
    }
    Cholesky::new(s).map(|c| c.l()).ok_or(Error::NotPositiveDefinite)
}

impl ShrunkCovariance {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn cholesky(&self) -> Cholesky<f64, Dyn> {
        Cholesky::pack_dirty(self.chol.clone())
    }

    /// `dᵀΣ̂⁻¹d`.
    pub fn quad_form(&self, d: &DVector<f64>) -> f64 {
        let z = self
            .chol
            .solve_lower_triangular(d)
            .expect("cholesky factor has a positive diagonal");
        z.norm_squared()
    }

    /// `Σ̂⁻¹d`.
    pub fn solve(&self, d: &DVector<f64>) -> DVector<f64> {
        self.cholesky().solve(d)
    }

    pub fn precision(&self) -> DMatrix<f64> {
        self.cholesky().inverse()
    }

    /// Smallest eigenvalue of `Σ̂`.
    pub fn min_eigenvalue(&self) -> f64 {
        self.sigma.clone().symmetric_eigenvalues().min()
    }
}
