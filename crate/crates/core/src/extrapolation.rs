//! Extrapolation metrics, thresholds and feasible regions.
//!
//! Least-squares models use leverage `h = xᵀ(XᵀX)⁻¹x` on the intercept
//! design. Other models use regularized T² `(x − x̄)ᵀΣ̂⁻¹(x − x̄)` with the
//! shrinkage covariance and an upper control limit `T̄² + 3σ̂_{T²}` computed
//! from the training T² values. Both metrics are quadratic along any factor
//! axis, which makes the feasible set of a trace an interval that can be
//! solved for exactly.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::covariance::{shrunk_covariance_with, ShrinkageOptions, ShrunkCovariance};
use crate::data::{EncodedMatrix, FactorKind, FactorSpace, FactorValue};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum LeverageRule {
    /// `h > k · max(hᵢᵢ)`.
    MaxLeverage { k: f64 },
    /// `h > l · p/n`.
    AverageLeverage { l: f64 },
}

impl Default for LeverageRule {
    fn default() -> Self {
        LeverageRule::MaxLeverage { k: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeverageModel {
    pub xtx_inv: DMatrix<f64>,
    pub max_h: f64,
    pub avg_h: f64,
    pub p: usize,
    pub n: usize,
    pub rule: LeverageRule,
}

/// Fits the leverage model on a design matrix whose first column is the
/// intercept.
pub fn fit_leverage_model(design: &DMatrix<f64>, rule: LeverageRule) -> Result<LeverageModel> {
    let (n, p) = design.shape();
    if n < p {
        return Err(Error::SingularDesign);
    }
    let xtx = design.tr_mul(design);
    let chol = Cholesky::new(xtx).ok_or(Error::SingularDesign)?;
    let diag = chol.l_dirty().diagonal();
    if diag.min() <= 1e-8 * diag.max() {
        return Err(Error::SingularDesign);
    }
    let xtx_inv = chol.inverse();
    let h = hat_diagonal(design, &xtx_inv);
    let max_h = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let model = LeverageModel {
        xtx_inv,
        max_h,
        avg_h: p as f64 / n as f64,
        p,
        n,
        rule,
    };
    if !(model.threshold() > 0.0) {
        return Err(Error::InvalidArgument("leverage threshold must be positive".into()));
    }
    Ok(model)
}

/// `hᵢᵢ = xᵢᵀ(XᵀX)⁻¹xᵢ` for every row.
pub fn hat_diagonal(design: &DMatrix<f64>, xtx_inv: &DMatrix<f64>) -> Vec<f64> {
    let xa = design * xtx_inv;
    (0..design.nrows())
        .map(|i| xa.row(i).dot(&design.row(i)))
        .collect()
}

impl LeverageModel {
    pub fn threshold(&self) -> f64 {
        match self.rule {
            LeverageRule::MaxLeverage { k } => k * self.max_h,
            LeverageRule::AverageLeverage { l } => l * self.avg_h,
        }
    }

    /// Leverage of a design point (intercept slot included).
    pub fn leverage(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.p {
            return Err(Error::Dimension {
                expected: self.p,
                found: x.len(),
            });
        }
        let v = DVector::from_column_slice(x);
        Ok((v.transpose() * &self.xtx_inv * &v)[0].max(0.0))
    }
}

/// Leverage of a new point; `x` includes the intercept slot.
pub fn leverage(model: &LeverageModel, x: &[f64]) -> Result<f64> {
    model.leverage(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegT2Model {
    pub cov: ShrunkCovariance,
    pub t2_train: Vec<f64>,
    pub t2_mean: f64,
    pub t2_sd: f64,
    pub sigma_multiplier: f64,
    pub ucl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegT2Options {
    pub shrinkage: ShrinkageOptions,
    pub sigma_multiplier: f64,
}

impl Default for RegT2Options {
    fn default() -> Self {
        Self {
            shrinkage: ShrinkageOptions::default(),
            sigma_multiplier: 3.0,
        }
    }
}

pub fn fit_regt2_model(m: &EncodedMatrix) -> Result<RegT2Model> {
    fit_regt2_model_with(m, RegT2Options::default())
}

pub fn fit_regt2_model_with(m: &EncodedMatrix, opts: RegT2Options) -> Result<RegT2Model> {
    if m.n_rows() < 3 {
        return Err(Error::InsufficientData("regularized T² needs at least three rows".into()));
    }
    let cov = shrunk_covariance_with(m, opts.shrinkage)?;
    let t2_train: Vec<f64> = (0..m.n_rows())
        .map(|i| t2_imputed(&cov, m.values.row(i).iter().copied()))
        .collect();
    let (t2_mean, t2_sd) = mean_sd(&t2_train);
    Ok(RegT2Model {
        ucl: t2_mean + opts.sigma_multiplier * t2_sd,
        cov,
        t2_train,
        t2_mean,
        t2_sd,
        sigma_multiplier: opts.sigma_multiplier,
    })
}

/// Mean and `n − 1` standard deviation.
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// 3-sigma style limit from a set of training T² values.
pub fn control_limit(t2_train: &[f64], sigma_multiplier: f64) -> f64 {
    let (m, s) = mean_sd(t2_train);
    m + sigma_multiplier * s
}

fn t2_imputed(cov: &ShrunkCovariance, x: impl Iterator<Item = f64>) -> f64 {
    let d = DVector::from_iterator(
        cov.dim(),
        x.zip(cov.mean.iter()).map(|(v, m)| if v.is_nan() { 0.0 } else { v - m }),
    );
    cov.quad_form(&d).max(0.0)
}

impl RegT2Model {
    /// T² of an encoded point. Missing (`NaN`) coordinates take the training
    /// mean; an all-missing point is an error.
    pub fn t2(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.cov.dim() {
            return Err(Error::Dimension {
                expected: self.cov.dim(),
                found: x.len(),
            });
        }
        if x.iter().all(|v| v.is_nan()) {
            return Err(Error::InvalidArgument("all coordinates are missing".into()));
        }
        Ok(t2_imputed(&self.cov, x.iter().copied()))
    }
}

pub fn t2(model: &RegT2Model, x: &[f64]) -> Result<f64> {
    model.t2(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Leverage,
    Regt2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationStatus {
    pub metric: f64,
    pub threshold: f64,
    pub extrapolated: bool,
    pub kind: MetricKind,
}

/// Strict comparison: a point exactly at the threshold is not extrapolation.
pub fn classify(kind: MetricKind, metric: f64, threshold: f64) -> ExtrapolationStatus {
    ExtrapolationStatus {
        metric,
        threshold,
        extrapolated: metric > threshold,
        kind,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ExtrapolationModel {
    Leverage(LeverageModel),
    Regt2(RegT2Model),
}

/// Feasible part of a profile trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum FeasibleSet {
    Interval { low: f64, high: f64 },
    Empty,
    /// Feasible level indices, ascending.
    Levels { levels: Vec<usize> },
}

impl FeasibleSet {
    pub fn contains(&self, v: FactorValue) -> bool {
        match (self, v) {
            (FeasibleSet::Interval { low, high }, FactorValue::Real(x)) => x >= *low && x <= *high,
            (FeasibleSet::Levels { levels }, FactorValue::Level(l)) => levels.contains(&l),
            _ => false,
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            FeasibleSet::Empty => true,
            FeasibleSet::Levels { levels } => levels.is_empty(),
            FeasibleSet::Interval { .. } => false,
        }
    }
}

impl ExtrapolationModel {
    pub fn kind(&self) -> MetricKind {
        match self {
            ExtrapolationModel::Leverage(_) => MetricKind::Leverage,
            ExtrapolationModel::Regt2(_) => MetricKind::Regt2,
        }
    }

    pub fn threshold(&self) -> f64 {
        match self {
            ExtrapolationModel::Leverage(m) => m.threshold(),
            ExtrapolationModel::Regt2(m) => m.ucl,
        }
    }

    /// Encoded factor dimension (without the intercept).
    pub fn dim(&self) -> usize {
        match self {
            ExtrapolationModel::Leverage(m) => m.p - 1,
            ExtrapolationModel::Regt2(m) => m.cov.dim(),
        }
    }

    /// Metric of an encoded factor vector (no intercept slot). Missing
    /// coordinates take the training mean for T²; leverage requires a
    /// complete point.
    pub fn metric(&self, x: &[f64]) -> Result<f64> {
        match self {
            ExtrapolationModel::Leverage(m) => {
                if x.iter().any(|v| v.is_nan()) {
                    return Err(Error::InvalidArgument("leverage needs a complete point".into()));
                }
                let mut z = Vec::with_capacity(x.len() + 1);
                z.push(1.0);
                z.extend_from_slice(x);
                m.leverage(&z)
            }
            ExtrapolationModel::Regt2(m) => m.t2(x),
        }
    }

    pub fn status(&self, x: &[f64]) -> Result<ExtrapolationStatus> {
        Ok(classify(self.kind(), self.metric(x)?, self.threshold()))
    }

    /// Coefficients `(a, b, c)` with `metric(x with x[col] = v) = a v² + b v + c`.
    pub fn quadratic_along(&self, x: &[f64], col: usize) -> Result<(f64, f64, f64)> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                found: x.len(),
            });
        }
        match self {
            ExtrapolationModel::Leverage(m) => {
                let mut z = DVector::zeros(m.p);
                z[0] = 1.0;
                for (j, v) in x.iter().enumerate() {
                    z[j + 1] = *v;
                }
                let c_idx = col + 1;
                z[c_idx] = 0.0;
                let az = &m.xtx_inv * &z;
                Ok((m.xtx_inv[(c_idx, c_idx)], 2.0 * az[c_idx], z.dot(&az)))
            }
            ExtrapolationModel::Regt2(m) => {
                let cov = &m.cov;
                let mut d = DVector::from_iterator(
                    cov.dim(),
                    x.iter().zip(cov.mean.iter()).map(|(v, mu)| if v.is_nan() { 0.0 } else { v - mu }),
                );
                // d(v) = d0 + v·e_col with d0[col] = −x̄_col
                d[col] = -cov.mean[col];
                let ad = cov.solve(&d);
                let mut e = DVector::zeros(cov.dim());
                e[col] = 1.0;
                let a = cov.quad_form(&e);
                Ok((a, 2.0 * ad[col], d.dot(&ad)))
            }
        }
    }
}

/// Solves `a t² + b t + c ≤ 0` on `[low, high]`.
pub fn solve_quadratic_interval(a: f64, b: f64, c: f64, low: f64, high: f64) -> FeasibleSet {
    let clip = |lo: f64, hi: f64| {
        let (lo, hi) = (lo.max(low), hi.min(high));
        if lo <= hi {
            FeasibleSet::Interval { low: lo, high: hi }
        } else {
            FeasibleSet::Empty
        }
    };
    let scale = a.abs().max(b.abs()).max(c.abs()).max(f64::MIN_POSITIVE);
    if a.abs() <= 1e-14 * scale {
        if b == 0.0 {
            return if c <= 0.0 { clip(low, high) } else { FeasibleSet::Empty };
        }
        let root = -c / b;
        return if b > 0.0 { clip(low, root) } else { clip(root, high) };
    }
    let disc = b * b - 4.0 * a * c;
    if a > 0.0 {
        if disc < 0.0 {
            return FeasibleSet::Empty;
        }
        let sq = disc.sqrt();
        // Numerically stable pair of roots.
        let q = -0.5 * (b + b.signum() * sq);
        let (r1, r2) = if q == 0.0 {
            (0.0, 0.0)
        } else {
            let (x1, x2) = (q / a, c / q);
            (x1.min(x2), x1.max(x2))
        };
        clip(r1, r2)
    } else {
        // Concave case cannot arise for positive semidefinite forms; the
        // feasible set is the complement of an interval, so keep the larger
        // clipped piece.
        if disc <= 0.0 {
            return clip(low, high);
        }
        let sq = disc.sqrt();
        let q = -0.5 * (b + b.signum() * sq);
        let (x1, x2) = (q / a, c / q);
        let (r1, r2) = (x1.min(x2), x1.max(x2));
        let left = clip(low, r1);
        let right = clip(r2, high);
        match (left, right) {
            (FeasibleSet::Interval { low: a0, high: a1 }, FeasibleSet::Interval { low: b0, high: b1 }) => {
                if a1 - a0 >= b1 - b0 {
                    FeasibleSet::Interval { low: a0, high: a1 }
                } else {
                    FeasibleSet::Interval { low: b0, high: b1 }
                }
            }
            (FeasibleSet::Empty, r) => r,
            (l, _) => l,
        }
    }
}

/// Feasible values of factor `factor` with every other factor held at
/// `settings`.
pub fn feasible_interval(
    model: &ExtrapolationModel,
    space: &FactorSpace,
    settings: &[FactorValue],
    factor: usize,
) -> Result<FeasibleSet> {
    space.check_settings(settings)?;
    let threshold = model.threshold();
    let def = &space.factors[factor];
    match &def.kind {
        FactorKind::Continuous { low, high } => {
            let x = space.encode_point(settings);
            let col = space.column_ranges()[factor].start;
            let (a, b, c) = model.quadratic_along(&x, col)?;
            Ok(solve_quadratic_interval(a, b, c - threshold, *low, *high))
        }
        FactorKind::Categorical { levels } | FactorKind::Ordinal { levels, .. } => {
            let mut s = settings.to_vec();
            let mut feasible = Vec::new();
            for l in 0..levels.len() {
                s[factor] = FactorValue::Level(l);
                if model.metric(&space.encode_point(&s))? <= threshold {
                    feasible.push(l);
                }
            }
            Ok(FeasibleSet::Levels { levels: feasible })
        }
    }
}

/// Exact multivariate-normal threshold
/// `(n+1)(n−1)p / (n(n−p)) · F_{1−α}(p, n−p)` for comparison.
pub fn f_limit(p: usize, n: usize, alpha: f64) -> Result<f64> {
    if n <= p || p == 0 {
        return Err(Error::InvalidArgument(format!("F limit needs 0 < p < n (p={p}, n={n})")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside (0, 1)")));
    }
    let (pf, nf) = (p as f64, n as f64);
    let f = FisherSnedecor::new(pf, nf - pf)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?
        .inverse_cdf(1.0 - alpha);
    Ok((nf + 1.0) * (nf - 1.0) * pf / (nf * (nf - pf)) * f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FactorDef;
    use approx::assert_abs_diff_eq;

    fn design(xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(xs.len(), 2, |i, j| if j == 0 { 1.0 } else { xs[i] })
    }

    #[test]
    fn intercept_only_leverage() {
        let x = DMatrix::from_element(3, 1, 1.0);
        let m = fit_leverage_model(&x, LeverageRule::default()).unwrap();
        let h = hat_diagonal(&x, &m.xtx_inv);
        for v in h {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(m.avg_h, 1.0 / 3.0);
    }

    #[test]
    fn simple_regression_hat_values() {
        let x = design(&[0.0, 1.0, 2.0]);
        let m = fit_leverage_model(&x, LeverageRule::default()).unwrap();
        let h = hat_diagonal(&x, &m.xtx_inv);
        assert_abs_diff_eq!(h[0], 5.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h[1], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h[2], 5.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.max_h, 5.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.leverage(&[1.0, 2.0]).unwrap(), h[2], epsilon = 1e-12);
        assert!(m.leverage(&[1.0, 9.0]).unwrap() > m.max_h);
        assert!(matches!(m.leverage(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn average_leverage_rule_threshold() {
        let mut m = fit_leverage_model(&design(&[0.0, 1.0, 2.0]), LeverageRule::default()).unwrap();
        m.rule = LeverageRule::AverageLeverage { l: 2.0 };
        m.p = 11;
        m.n = 309;
        m.avg_h = 11.0 / 309.0;
        assert_abs_diff_eq!(m.threshold(), 22.0 / 309.0, epsilon = 1e-15);
    }

    #[test]
    fn singular_design_is_rejected() {
        let x = DMatrix::from_fn(4, 3, |i, j| match j {
            0 => 1.0,
            _ => i as f64,
        });
        assert!(matches!(
            fit_leverage_model(&x, LeverageRule::default()),
            Err(Error::SingularDesign)
        ));
    }

    #[test]
    fn ucl_from_training_t2() {
        assert_eq!(control_limit(&[1.0, 2.0, 3.0], 3.0), 5.0);
    }

    #[test]
    fn classify_boundary_is_feasible() {
        assert!(!classify(MetricKind::Regt2, 5.0, 5.0).extrapolated);
        assert!(classify(MetricKind::Regt2, 5.01, 5.0).extrapolated);
        assert!(classify(MetricKind::Leverage, 8.62, 0.18).extrapolated);
    }

    #[test]
    fn status_json_shape() {
        let s = classify(MetricKind::Leverage, 0.5, 0.25);
        assert_eq!(
            serde_json::to_string(&s).unwrap(),
            r#"{"metric":0.5,"threshold":0.25,"extrapolated":true,"kind":"leverage"}"#
        );
    }

    fn unit_t2(mean: &[f64], ucl: f64) -> RegT2Model {
        let p = mean.len();
        let cov = ShrunkCovariance {
            mean: DVector::from_column_slice(mean),
            sample_cov: DMatrix::identity(p, p),
            target: DVector::from_element(p, 1.0),
            lambda: 1.0,
            sigma: DMatrix::identity(p, p),
            pair_counts: DMatrix::from_element(p, p, 10),
            chol: DMatrix::identity(p, p),
        };
        RegT2Model {
            cov,
            t2_train: vec![],
            t2_mean: 0.0,
            t2_sd: 0.0,
            sigma_multiplier: 3.0,
            ucl,
        }
    }

    #[test]
    fn t2_of_center_and_missing() {
        let m = unit_t2(&[1.0, 2.0], 4.0);
        assert_eq!(m.t2(&[1.0, 2.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(m.t2(&[3.0, f64::NAN]).unwrap(), 4.0);
        assert!(m.t2(&[f64::NAN, f64::NAN]).is_err());
    }

    #[test]
    fn unit_covariance_interval() {
        let m = ExtrapolationModel::Regt2(unit_t2(&[1.0, 2.0], 4.0));
        let space = FactorSpace::new(vec![
            FactorDef::continuous("a", -10.0, 10.0),
            FactorDef::continuous("b", -10.0, 2.5),
        ])
        .unwrap();
        let s = [FactorValue::Real(1.0), FactorValue::Real(2.0)];
        match feasible_interval(&m, &space, &s, 0).unwrap() {
            FeasibleSet::Interval { low, high } => {
                assert_abs_diff_eq!(low, -1.0, epsilon = 1e-12);
                assert_abs_diff_eq!(high, 3.0, epsilon = 1e-12);
            }
            other => panic!("{other:?}"),
        }
        // clipped by the box on the upper side
        match feasible_interval(&m, &space, &s, 1).unwrap() {
            FeasibleSet::Interval { low, high } => {
                assert_abs_diff_eq!(low, 0.0, epsilon = 1e-12);
                assert_eq!(high, 2.5);
            }
            other => panic!("{other:?}"),
        }
        // other coordinate already beyond the limit
        let far = [FactorValue::Real(1.0), FactorValue::Real(-5.0)];
        assert_eq!(feasible_interval(&m, &space, &far, 0).unwrap(), FeasibleSet::Empty);
    }

    #[test]
    fn linear_case() {
        assert_eq!(
            solve_quadratic_interval(0.0, 2.0, -4.0, -10.0, 10.0),
            FeasibleSet::Interval { low: -10.0, high: 2.0 }
        );
        assert_eq!(
            solve_quadratic_interval(0.0, 0.0, 1.0, -10.0, 10.0),
            FeasibleSet::Empty
        );
    }

    #[test]
    fn f_limit_behaviour() {
        let a = f_limit(2, 100, 0.05).unwrap();
        let scale = 101.0 * 99.0 * 2.0 / (100.0 * 98.0);
        // F_{0.95}(2, 98) = 3.0892
        assert_abs_diff_eq!(a / scale, 3.0892, epsilon = 5e-4);
        assert!(f_limit(2, 100, 0.01).unwrap() > a);
        assert!(f_limit(5, 5, 0.05).is_err());
        assert!(f_limit(6, 5, 0.05).is_err());
    }
}
