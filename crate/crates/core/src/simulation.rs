//! Low-rank simulation study of extrapolation detection: synthetic factor
//! matrices, labelled extrapolation grids, and TPR/FPR aggregation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::{Column, ColumnValues, Dataset, EncodedMatrix, FactorDef, FactorSpace, FactorValue};
use crate::error::{Error, Result};
use crate::extrapolation::{fit_regt2_model, mean_sd};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricVariant {
    #[default]
    Regularized,
    /// Hotelling's T² with the Moore–Penrose inverse of the sample covariance.
    PseudoInverse,
}

/// Shape of the additive noise in `X = U D + e`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseShape {
    /// Independent noise in every cell.
    #[default]
    Full,
    /// One noise draw per row shared by all columns.
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationScenario {
    pub n: usize,
    pub p: usize,
    pub r: usize,
    pub p_cat: usize,
    pub n_grid: usize,
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    pub variant: MetricVariant,
    pub noise: NoiseShape,
    /// Fresh in-distribution points per replicate; `None` uses `n`.
    pub n_test: Option<usize>,
    pub grid_pair: PairChoice,
}

/// Columns eligible for the grid's correlated pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairChoice {
    /// Continuous columns only, when at least two remain.
    #[default]
    Continuous,
    Any,
}

impl Default for SimulationScenario {
    fn default() -> Self {
        Self {
            n: 100,
            p: 20,
            r: 10,
            p_cat: 0,
            n_grid: 20,
            replicates: 100,
            alpha: 0.05,
            seed: 0,
            variant: MetricVariant::Regularized,
            noise: NoiseShape::Full,
            n_test: None,
            grid_pair: PairChoice::Continuous,
        }
    }
}

impl SimulationScenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.p < 2 {
            return bad(format!("p must be at least 2 (got {})", self.p));
        }
        if self.r > self.p {
            return bad(format!("rank r={} exceeds p={}", self.r, self.p));
        }
        if self.p_cat > self.p {
            return bad(format!("p_cat={} exceeds p={}", self.p_cat, self.p));
        }
        if self.n < 3 {
            return bad(format!("n must be at least 3 (got {})", self.n));
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.n_grid < 2 {
            return bad("n_grid must be at least 2".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} outside (0, 1)", self.alpha));
        }
        if self.n_test == Some(0) {
            return bad("n_test must be positive".into());
        }
        Ok(())
    }
}

/// `X = U D + e` with standard normal `U`, `D` and noise.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankModel {
    pub d: DMatrix<f64>,
    pub noise: NoiseShape,
}

impl LowRankModel {
    pub fn random(p: usize, r: usize, noise: NoiseShape, rng: &mut impl Rng) -> Self {
        Self {
            d: DMatrix::from_fn(r, p, |_, _| rng.sample(StandardNormal)),
            noise,
        }
    }

    pub fn p(&self) -> usize {
        self.d.ncols()
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let (r, p) = self.d.shape();
        let u = DMatrix::from_fn(n, r, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut x = if r == 0 { DMatrix::zeros(n, p) } else { u * &self.d };
        match self.noise {
            NoiseShape::Full => x.iter_mut().for_each(|v| *v += rng.sample::<f64, _>(StandardNormal)),
            NoiseShape::Shared => {
                for i in 0..n {
                    let e: f64 = rng.sample(StandardNormal);
                    x.row_mut(i).add_scalar_mut(e);
                }
            }
        }
        x
    }

    /// `DᵀD + I`, or `DᵀD + J` for shared noise.
    pub fn true_sigma(&self) -> DMatrix<f64> {
        let p = self.p();
        let mut s = self.d.transpose() * &self.d;
        for i in 0..p {
            for j in 0..p {
                if i == j || self.noise == NoiseShape::Shared {
                    s[(i, j)] += 1.0;
                }
            }
        }
        s
    }
}

pub fn simulate_factor_matrix(n: usize, p: usize, r: usize, seed: u64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if r > n.min(p) {
        return Err(Error::InvalidArgument(format!("rank r={r} exceeds min(n, p)={}", n.min(p))));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = LowRankModel::random(p, r, NoiseShape::Full, &mut rng);
    Ok((model.sample(n, &mut rng), model.true_sigma()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    /// 1 at the data center, `n_grid` at the corner.
    pub rank: usize,
    pub point: Vec<f64>,
    pub t2_true: f64,
    pub extrapolated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationGrid {
    pub pair: (usize, usize),
    pub correlation: f64,
    pub chi2_limit: f64,
    pub points: Vec<GridPoint>,
}

/// Column pair with the largest absolute sample correlation.
pub fn most_correlated_pair(x: &DMatrix<f64>) -> ((usize, usize), f64) {
    most_correlated_pair_among(x, &(0..x.ncols()).collect::<Vec<_>>())
}

pub fn most_correlated_pair_among(x: &DMatrix<f64>, candidates: &[usize]) -> ((usize, usize), f64) {
    let (n, p) = x.shape();
    let means: Vec<f64> = (0..p).map(|j| x.column(j).mean()).collect();
    let centered = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - means[j]);
    let cross = centered.transpose() * &centered;
    let mut best = ((0, 1), 0.0f64);
    let mut best_abs = -1.0;
    for (i, &a) in candidates.iter().enumerate() {
        for &b in &candidates[i + 1..] {
            let denom = (cross[(a, a)] * cross[(b, b)]).sqrt();
            let c = if denom > 0.0 { cross[(a, b)] / denom } else { 0.0 };
            if c.abs() > best_abs {
                best_abs = c.abs();
                best = ((a, b), c);
            }
        }
    }
    best
}

/// `xᵀ Σ⁻¹ x` against the true (zero) mean.
pub fn true_t2(sigma_chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>, x: &[f64]) -> f64 {
    let v = DVector::from_column_slice(x);
    v.dot(&sigma_chol.solve(&v))
}

pub fn chi2_limit(p: usize, alpha: f64) -> Result<f64> {
    let chi = ChiSquared::new(p as f64).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(chi.inverse_cdf(1.0 - alpha))
}

/// Equally spaced points from the column means to the box corner that
/// breaks the sign of the strongest correlation; other coordinates stay at
/// their means. Labels come from the χ² tail of the true T².
pub fn extrapolation_grid(
    x: &DMatrix<f64>,
    true_sigma: &DMatrix<f64>,
    n_grid: usize,
    alpha: f64,
) -> Result<ExtrapolationGrid> {
    extrapolation_grid_among(x, true_sigma, n_grid, alpha, &(0..x.ncols()).collect::<Vec<_>>())
}

/// As [`extrapolation_grid`], choosing the pair from `candidates` only.
pub fn extrapolation_grid_among(
    x: &DMatrix<f64>,
    true_sigma: &DMatrix<f64>,
    n_grid: usize,
    alpha: f64,
    candidates: &[usize],
) -> Result<ExtrapolationGrid> {
    let (n, p) = x.shape();
    if p < 2 || n < 2 || candidates.len() < 2 {
        return Err(Error::InvalidArgument("grid needs at least two rows and two columns".into()));
    }
    if n_grid < 2 {
        return Err(Error::InvalidArgument("n_grid must be at least 2".into()));
    }
    let chol = true_sigma.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let limit = chi2_limit(p, alpha)?;
    let ((a, b), corr) = most_correlated_pair_among(x, candidates);
    let center: Vec<f64> = (0..p).map(|j| x.column(j).mean()).collect();
    let min = |j: usize| x.column(j).min();
    let max = |j: usize| x.column(j).max();
    let corner_b = if corr >= 0.0 { min(b) } else { max(b) };
    let corner = (max(a), corner_b);
    let points = (0..n_grid)
        .map(|i| {
            let t = i as f64 / (n_grid - 1) as f64;
            let mut pt = center.clone();
            pt[a] += t * (corner.0 - center[a]);
            pt[b] += t * (corner.1 - center[b]);
            let t2 = true_t2(&chol, &pt);
            GridPoint {
                rank: i + 1,
                point: pt,
                t2_true: t2,
                extrapolated: t2 > limit,
            }
        })
        .collect();
    Ok(ExtrapolationGrid {
        pair: (a, b),
        correlation: corr,
        chi2_limit: limit,
        points,
    })
}

/// Columns turned categorical, with their quantile cut points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discretization {
    pub p: usize,
    /// `(column, ascending cuts)`; a column with `k` levels has `k − 1` cuts.
    pub columns: Vec<(usize, Vec<f64>)>,
}

/// Linear-interpolation sample quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn level_name(l: usize) -> String {
    format!("L{}", l + 1)
}

pub fn column_name(j: usize) -> String {
    format!("x{}", j + 1)
}

impl Discretization {
    pub fn fit(x: &DMatrix<f64>, p_cat: usize, rng: &mut impl Rng) -> Result<Self> {
        let p = x.ncols();
        if p_cat > p {
            return Err(Error::InvalidArgument(format!("p_cat={p_cat} exceeds p={p}")));
        }
        let mut chosen = rand::seq::index::sample(rng, p, p_cat).into_vec();
        chosen.sort_unstable();
        let columns = chosen
            .into_iter()
            .map(|j| {
                let k = rng.random_range(2..=4usize);
                let mut v: Vec<f64> = x.column(j).iter().copied().collect();
                v.sort_by(f64::total_cmp);
                (j, (1..k).map(|c| quantile(&v, c as f64 / k as f64)).collect())
            })
            .collect();
        Ok(Self { p, columns })
    }

    pub fn cuts(&self, j: usize) -> Option<&[f64]> {
        self.columns.iter().find(|(c, _)| *c == j).map(|(_, cuts)| cuts.as_slice())
    }

    pub fn level(cuts: &[f64], v: f64) -> usize {
        cuts.iter().filter(|c| v > **c).count()
    }

    /// Factor space with continuous boxes taken from `x`.
    pub fn space(&self, x: &DMatrix<f64>) -> Result<FactorSpace> {
        let factors = (0..self.p)
            .map(|j| match self.cuts(j) {
                Some(cuts) => FactorDef::categorical(column_name(j), (0..=cuts.len()).map(level_name)),
                None => FactorDef::continuous(column_name(j), x.column(j).min(), x.column(j).max()),
            })
            .collect();
        FactorSpace::new(factors)
    }

    pub fn settings(&self, row: &[f64]) -> Vec<FactorValue> {
        row.iter()
            .enumerate()
            .map(|(j, v)| match self.cuts(j) {
                Some(cuts) => FactorValue::Level(Self::level(cuts, *v)),
                None => FactorValue::Real(*v),
            })
            .collect()
    }

    pub fn dataset(&self, x: &DMatrix<f64>) -> Result<Dataset> {
        let columns = (0..self.p)
            .map(|j| {
                let col = x.column(j);
                match self.cuts(j) {
                    Some(cuts) => Column {
                        name: column_name(j),
                        values: ColumnValues::Levels {
                            levels: (0..=cuts.len()).map(level_name).collect(),
                            codes: col.iter().map(|v| Some(Self::level(cuts, *v))).collect(),
                        },
                    },
                    None => Column::real(column_name(j), col.iter().map(|v| Some(*v)).collect()),
                }
            })
            .collect();
        Dataset::new(columns)
    }
}

/// Turns `p_cat` random columns into 2–4 level factors cut at equally
/// spaced sample quantiles.
pub fn discretize(x: &DMatrix<f64>, p_cat: usize, seed: u64) -> Result<(Dataset, Discretization)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let disc = Discretization::fit(x, p_cat, &mut rng)?;
    Ok((disc.dataset(x)?, disc))
}

/// A fitted detector: metric of an encoded point and its threshold.
enum Detector {
    Regularized(crate::extrapolation::RegT2Model),
    PseudoInverse {
        mean: DVector<f64>,
        precision: DMatrix<f64>,
        threshold: f64,
        t2_train: Vec<f64>,
    },
}

impl Detector {
    fn fit(variant: MetricVariant, encoded: &DMatrix<f64>) -> Result<Self> {
        match variant {
            MetricVariant::Regularized => Ok(Detector::Regularized(fit_regt2_model(&EncodedMatrix::from_matrix(
                encoded.clone(),
            ))?)),
            MetricVariant::PseudoInverse => {
                let (n, p) = encoded.shape();
                let mean = DVector::from_fn(p, |j, _| encoded.column(j).mean());
                let centered = DMatrix::from_fn(n, p, |i, j| encoded[(i, j)] - mean[j]);
                let s = centered.transpose() * &centered / (n as f64 - 1.0);
                let svd = s.svd(true, true);
                let tol = svd.singular_values.max() * (p.max(n) as f64) * f64::EPSILON;
                let precision = svd.pseudo_inverse(tol).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                let t2_train: Vec<f64> = (0..n)
                    .map(|i| {
                        let d = centered.row(i).transpose();
                        d.dot(&(&precision * &d))
                    })
                    .collect();
                let (m, sd) = mean_sd(&t2_train);
                Ok(Detector::PseudoInverse {
                    mean,
                    precision,
                    threshold: m + 3.0 * sd,
                    t2_train,
                })
            }
        }
    }

    fn threshold(&self) -> f64 {
        match self {
            Detector::Regularized(m) => m.ucl,
            Detector::PseudoInverse { threshold, .. } => *threshold,
        }
    }

    fn t2_train(&self) -> &[f64] {
        match self {
            Detector::Regularized(m) => &m.t2_train,
            Detector::PseudoInverse { t2_train, .. } => t2_train,
        }
    }

    fn metric(&self, x: &[f64]) -> Result<f64> {
        match self {
            Detector::Regularized(m) => m.t2(x),
            Detector::PseudoInverse { mean, precision, .. } => {
                let d = DVector::from_iterator(x.len(), x.iter().zip(mean.iter()).map(|(v, m)| if v.is_nan() { 0.0 } else { v - m }));
                Ok(d.dot(&(precision * &d)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub rank: usize,
    pub t2_true: f64,
    pub oracle: bool,
    pub metric: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub threshold: f64,
    pub lambda: Option<f64>,
    pub t2_train_mean: f64,
    pub t2_train_sd: f64,
    pub pair: (usize, usize),
    pub test_negatives: usize,
    pub test_false_positives: usize,
    pub grid: Vec<GridOutcome>,
}

impl ReplicateRecord {
    /// Flagged fraction of the grid points the oracle calls in-distribution.
    pub fn fpr(&self) -> Option<f64> {
        let neg = self.grid.iter().filter(|g| !g.oracle).count();
        let fp = self.grid.iter().filter(|g| !g.oracle && g.flagged).count();
        (neg > 0).then(|| fp as f64 / neg as f64)
    }

    /// Flagged fraction of the fresh in-distribution sample (oracle negatives
    /// only).
    pub fn fresh_fpr(&self) -> Option<f64> {
        (self.test_negatives > 0).then(|| self.test_false_positives as f64 / self.test_negatives as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub rate: f64,
    pub ci: (f64, f64),
    pub count: usize,
}

/// Proportion with a normal-approximation 95% interval, clamped to `[0, 1]`.
pub fn proportion(hits: usize, count: usize) -> Option<Rate> {
    if count == 0 {
        return None;
    }
    let p = hits as f64 / count as f64;
    let half = Z95 * (p * (1.0 - p) / count as f64).sqrt();
    Some(Rate {
        rate: p,
        ci: ((p - half).max(0.0), (p + half).min(1.0)),
        count,
    })
}

/// Mean of per-replicate rates with a normal-approximation 95% interval.
pub fn mean_rate(values: &[f64]) -> Option<Rate> {
    match values.len() {
        0 => None,
        1 => Some(Rate {
            rate: values[0],
            ci: (values[0], values[0]),
            count: 1,
        }),
        k => {
            let (m, sd) = mean_sd(values);
            let half = Z95 * sd / (k as f64).sqrt();
            Some(Rate {
                rate: m,
                ci: ((m - half).max(0.0), (m + half).min(1.0)),
                count: k,
            })
        }
    }
}

const Z95: f64 = 1.959963984540054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub rank: usize,
    /// Over replicates where the oracle labels the point extrapolated.
    pub tpr: Option<Rate>,
    /// Over replicates where it does not.
    pub fpr: Option<Rate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub v: u32,
    pub scenario: SimulationScenario,
    pub ranks: Vec<RankSummary>,
    /// Over oracle-negative grid points.
    pub fpr: Rate,
    /// Over oracle-negative points of a fresh sample from the training
    /// distribution.
    pub fresh_fpr: Rate,
    /// Common training T² when it is constant (to 1e-8 relative) in every
    /// replicate.
    pub training_t2_constant: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub summary: StudySummary,
    pub replicates: Vec<ReplicateRecord>,
}

fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

pub fn run_replicate(scenario: &SimulationScenario, replicate: usize) -> Result<ReplicateRecord> {
    let s = scenario;
    let mut rng = replicate_rng(s.seed, replicate);
    let model = LowRankModel::random(s.p, s.r, s.noise, &mut rng);
    let x = model.sample(s.n, &mut rng);
    let sigma = model.true_sigma();
    let chol = sigma.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let limit = chi2_limit(s.p, s.alpha)?;
    let disc = Discretization::fit(&x, s.p_cat, &mut rng)?;
    let space = disc.space(&x)?;
    let encode_row = |row: &[f64]| space.encode_point(&disc.settings(row));

    let encoded = {
        let rows: Vec<Vec<f64>> = (0..s.n)
            .map(|i| encode_row(&x.row(i).iter().copied().collect::<Vec<_>>()))
            .collect();
        DMatrix::from_fn(s.n, space.encoded_dim(), |i, j| rows[i][j])
    };
    let detector = Detector::fit(s.variant, &encoded)?;
    let threshold = detector.threshold();

    let continuous: Vec<usize> = (0..s.p).filter(|j| disc.cuts(*j).is_none()).collect();
    let candidates: Vec<usize> = match s.grid_pair {
        PairChoice::Continuous if continuous.len() >= 2 => continuous,
        _ => (0..s.p).collect(),
    };
    let grid = extrapolation_grid_among(&x, &sigma, s.n_grid, s.alpha, &candidates)?;
    // Categorical coordinates off the ray sit at their encoded training mean.
    let (a, b) = grid.pair;
    let encode_grid = |row: &[f64]| {
        let settings: Vec<Option<FactorValue>> = disc
            .settings(row)
            .into_iter()
            .enumerate()
            .map(|(j, v)| (j == a || j == b || disc.cuts(j).is_none()).then_some(v))
            .collect();
        space.encode_partial(&settings)
    };
    let grid_out = grid
        .points
        .iter()
        .map(|g| {
            let metric = detector.metric(&encode_grid(&g.point))?;
            Ok(GridOutcome {
                rank: g.rank,
                t2_true: g.t2_true,
                oracle: g.extrapolated,
                metric,
                flagged: metric > threshold,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let test = model.sample(s.n_test.unwrap_or(s.n), &mut rng);
    let (mut negatives, mut false_pos) = (0, 0);
    for i in 0..test.nrows() {
        let row: Vec<f64> = test.row(i).iter().copied().collect();
        if true_t2(&chol, &row) > limit {
            continue;
        }
        negatives += 1;
        if detector.metric(&encode_row(&row))? > threshold {
            false_pos += 1;
        }
    }
    let (t2_mean, t2_sd) = mean_sd(detector.t2_train());
    Ok(ReplicateRecord {
        replicate,
        threshold,
        lambda: match &detector {
            Detector::Regularized(m) => Some(m.cov.lambda),
            Detector::PseudoInverse { .. } => None,
        },
        t2_train_mean: t2_mean,
        t2_train_sd: t2_sd,
        pair: grid.pair,
        test_negatives: negatives,
        test_false_positives: false_pos,
        grid: grid_out,
    })
}

/// Runs every replicate in parallel; each replicate draws from its own
/// stream of the scenario seed, so results do not depend on scheduling.
pub fn run_study(scenario: &SimulationScenario) -> Result<StudyResult> {
    scenario.validate()?;
    let replicates = (0..scenario.replicates)
        .into_par_iter()
        .map(|i| run_replicate(scenario, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(StudyResult {
        summary: summarize(scenario, &replicates),
        replicates,
    })
}

pub fn summarize(scenario: &SimulationScenario, replicates: &[ReplicateRecord]) -> StudySummary {
    let ranks = (1..=scenario.n_grid)
        .map(|rank| {
            let cells: Vec<&GridOutcome> = replicates
                .iter()
                .filter_map(|r| r.grid.iter().find(|g| g.rank == rank))
                .collect();
            let pos: Vec<_> = cells.iter().filter(|g| g.oracle).collect();
            let neg: Vec<_> = cells.iter().filter(|g| !g.oracle).collect();
            RankSummary {
                rank,
                tpr: proportion(pos.iter().filter(|g| g.flagged).count(), pos.len()),
                fpr: proportion(neg.iter().filter(|g| g.flagged).count(), neg.len()),
            }
        })
        .collect();
    let rate_of = |f: fn(&ReplicateRecord) -> Option<f64>| {
        let v: Vec<f64> = replicates.iter().filter_map(f).collect();
        mean_rate(&v).unwrap_or(Rate {
            rate: 0.0,
            ci: (0.0, 0.0),
            count: 0,
        })
    };
    let constant = replicates.iter().all(|r| r.t2_train_sd <= 1e-8 * r.t2_train_mean.abs());
    StudySummary {
        v: 1,
        scenario: *scenario,
        ranks,
        fpr: rate_of(ReplicateRecord::fpr),
        fresh_fpr: rate_of(ReplicateRecord::fresh_fpr),
        training_t2_constant: (constant && !replicates.is_empty())
            .then(|| replicates.iter().map(|r| r.t2_train_mean).sum::<f64>() / replicates.len() as f64),
    }
}

#[derive(Serialize)]
struct CsvRow {
    replicate: usize,
    rank: usize,
    t2_true: f64,
    oracle_extrapolated: bool,
    metric: f64,
    threshold: f64,
    flagged: bool,
}

impl StudyResult {
    /// One row per replicate and grid rank.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.replicates {
            for g in &r.grid {
                out.serialize(CsvRow {
                    replicate: r.replicate,
                    rank: g.rank,
                    t2_true: g.t2_true,
                    oracle_extrapolated: g.oracle,
                    metric: g.metric,
                    threshold: r.threshold,
                    flagged: g.flagged,
                })?;
            }
        }
        out.flush().map_err(|source| Error::Io {
            path: "<csv>".into(),
            source,
        })?;
        Ok(())
    }

    /// TPR at the highest rank, if any replicate labels it extrapolated.
    pub fn top_tpr(&self) -> Option<f64> {
        self.summary.ranks.last().and_then(|r| r.tpr).map(|t| t.rate)
    }
}
