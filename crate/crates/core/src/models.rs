//! Predictors explored by the profiler.
//!
//! * [`LeastSquaresModel`]: main-effects least squares over the encoded
//!   design, with its leverage model attached.
//! * [`BoostedTanhNet`]: gradient boosting of single-hidden-layer tanh
//!   networks fit to residuals.
//! * [`ModelArtifact`]: one or more response models over a common factor
//!   space together with the extrapolation model; this is the JSON document
//!   shared by the CLI and the service.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{encode, Column, ColumnValues, Dataset, FactorDef, FactorKind, FactorSpace, FactorValue};
use crate::error::{Error, Result};
use crate::extrapolation::{
    fit_leverage_model, fit_regt2_model_with, ExtrapolationModel, LeverageModel, LeverageRule, MetricKind,
    RegT2Options,
};

/// Maps factor settings to one prediction per response.
pub trait Predictor: Send + Sync {
    fn space(&self) -> &FactorSpace;
    fn response_names(&self) -> Vec<String>;
    fn predict(&self, settings: &[FactorValue]) -> Result<Vec<f64>>;
}

/// Coefficient of determination of `pred` against `y`.
pub fn r_squared(y: &[f64], pred: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let sse: f64 = y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - sse / sst
}

fn response_values(data: &Dataset, response: &str) -> Result<Vec<Option<f64>>> {
    Ok(data.reals(response)?.to_vec())
}

/// Rows with every factor cell present (and the response, if given).
fn complete_rows(data: &Dataset, space: &FactorSpace, response: Option<&[Option<f64>]>) -> Result<(Vec<usize>, DMatrix<f64>)> {
    let m = encode(data, space)?;
    let rows: Vec<usize> = (0..data.n_rows())
        .filter(|&i| {
            m.values.row(i).iter().all(|v| !v.is_nan()) && response.is_none_or(|y| y[i].is_some())
        })
        .collect();
    let p = space.encoded_dim();
    let design = DMatrix::from_fn(rows.len(), p + 1, |r, c| if c == 0 { 1.0 } else { m.values[(rows[r], c - 1)] });
    Ok((rows, design))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeastSquaresModel {
    pub response: String,
    /// Intercept first, then one coefficient per encoded column.
    pub coefficients: Vec<f64>,
    pub r2: f64,
    pub leverage: LeverageModel,
}

impl LeastSquaresModel {
    pub fn predict_encoded(&self, x: &[f64]) -> f64 {
        self.coefficients[0] + self.coefficients[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

/// Least squares on complete rows (incomplete rows are dropped).
pub fn fit_least_squares(train: &Dataset, space: &FactorSpace, response: &str) -> Result<LeastSquaresModel> {
    fit_least_squares_with(train, space, response, LeverageRule::default())
}

pub fn fit_least_squares_with(
    train: &Dataset,
    space: &FactorSpace,
    response: &str,
    rule: LeverageRule,
) -> Result<LeastSquaresModel> {
    let y_all = response_values(train, response)?;
    let (rows, design) = complete_rows(train, space, Some(&y_all))?;
    let p = design.ncols();
    if rows.len() < p + 1 {
        return Err(Error::InsufficientData(format!(
            "{} complete rows for {} coefficients",
            rows.len(),
            p
        )));
    }
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| y_all[i].expect("complete row")));
    let leverage = fit_leverage_model(&design, rule)?;
    let beta = solve_least_squares(&design, &y)?;
    let fitted = &design * &beta;
    let r2 = r_squared(y.as_slice(), fitted.as_slice()).clamp(0.0, 1.0);
    Ok(LeastSquaresModel {
        response: response.to_string(),
        coefficients: beta.iter().copied().collect(),
        r2,
        leverage,
    })
}

/// Householder QR solve of `min ‖Xβ − y‖`.
pub fn solve_least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let qr = x.clone().qr();
    let r = qr.r();
    let qty = qr.q().tr_mul(y);
    let diag = r.diagonal().abs();
    if diag.min() <= 1e-12 * diag.max() {
        return Err(Error::SingularDesign);
    }
    r.solve_upper_triangular(&qty).ok_or(Error::SingularDesign)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MissingPolicy {
    pub informative_missing: bool,
}

/// Name of the indicator factor added for `factor`.
pub fn missing_indicator_name(factor: &str) -> String {
    format!("{factor} (missing)")
}

/// Informative-missing preprocessing: every factor with missing cells is
/// imputed (mean for continuous, most frequent level otherwise) and gains a
/// 0/1 indicator factor. With the policy off, data and space are returned
/// unchanged.
pub fn apply_missing_policy(data: &Dataset, space: &FactorSpace, policy: MissingPolicy) -> Result<(Dataset, FactorSpace)> {
    if !policy.informative_missing {
        return Ok((data.clone(), space.clone()));
    }
    let mut out = data.without(&space.factors.iter().map(|f| f.name.as_str()).collect::<Vec<_>>());
    let mut factors = space.factors.clone();
    let mut indicators = Vec::new();
    for f in &space.factors {
        let col = data.column(&f.name)?;
        let missing: Vec<bool> = (0..data.n_rows()).map(|i| col.values.is_missing(i)).collect();
        if !missing.iter().any(|m| *m) {
            out = out.with_column(col.clone())?;
            continue;
        }
        let imputed = match &col.values {
            ColumnValues::Real(v) => {
                let present: Vec<f64> = v.iter().flatten().copied().collect();
                if present.is_empty() {
                    return Err(Error::EmptyColumn(f.name.clone()));
                }
                let mean = present.iter().sum::<f64>() / present.len() as f64;
                ColumnValues::Real(v.iter().map(|c| Some(c.unwrap_or(mean))).collect())
            }
            ColumnValues::Levels { levels, codes } => {
                let mut counts = vec![0usize; levels.len()];
                for c in codes.iter().flatten() {
                    counts[*c] += 1;
                }
                let mode = argmax_first(&counts);
                ColumnValues::Levels {
                    levels: levels.clone(),
                    codes: codes.iter().map(|c| Some(c.unwrap_or(mode))).collect(),
                }
            }
        };
        out = out.with_column(Column {
            name: f.name.clone(),
            values: imputed,
        })?;
        let name = missing_indicator_name(&f.name);
        indicators.push(Column::real(
            name.clone(),
            missing.iter().map(|m| Some(if *m { 1.0 } else { 0.0 })).collect(),
        ));
        factors.push(FactorDef::continuous(name, 0.0, 1.0));
    }
    for c in indicators {
        out = out.with_column(c)?;
    }
    Ok((out, FactorSpace::new(factors)?))
}

fn argmax_first(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, c) in counts.iter().enumerate() {
        if *c > counts[best] {
            best = i;
        }
    }
    best
}

/// Blanks a random `fraction` of the cells of `columns` (missing completely
/// at random).
pub fn inject_missing(data: &Dataset, columns: &[&str], fraction: f64, seed: u64) -> Result<Dataset> {
    let n = data.n_rows();
    let total = n * columns.len();
    let k = ((fraction.clamp(0.0, 1.0) * total as f64).round() as usize).min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = vec![false; total];
    for i in sample(&mut rng, total, k) {
        mask[i] = true;
    }
    let mut out = data.clone();
    let mut cols: Vec<Column> = out.columns().to_vec();
    for (ci, name) in columns.iter().enumerate() {
        let col = cols
            .iter_mut()
            .find(|c| c.name == *name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
        let blank = |i: usize| mask[ci * n + i];
        match &mut col.values {
            ColumnValues::Real(v) => v.iter_mut().enumerate().filter(|(i, _)| blank(*i)).for_each(|(_, c)| *c = None),
            ColumnValues::Levels { codes, .. } => codes
                .iter_mut()
                .enumerate()
                .filter(|(i, _)| blank(*i))
                .for_each(|(_, c)| *c = None),
        }
    }
    out = Dataset::new(cols)?;
    Ok(out)
}

/// One weak learner: `b2 + Σⱼ w2ⱼ tanh(w1ⱼ·x + b1ⱼ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TanhNet {
    pub inputs: usize,
    pub hidden: usize,
    /// Row-major `hidden × inputs`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl TanhNet {
    pub fn random(inputs: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut normal = || -> f64 { StandardNormal.sample(rng) };
        let s1 = 1.0 / (inputs as f64).sqrt();
        let w1 = (0..hidden * inputs).map(|_| normal() * s1).collect();
        let b1 = (0..hidden).map(|_| normal() * 0.5).collect();
        let w2 = (0..hidden).map(|_| normal() * 0.1).collect();
        Self {
            inputs,
            hidden,
            w1,
            b1,
            w2,
            b2: 0.0,
        }
    }

    fn activation(&self, j: usize, x: &[f64]) -> f64 {
        let row = &self.w1[j * self.inputs..(j + 1) * self.inputs];
        (row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b1[j]).tanh()
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        self.b2 + (0..self.hidden).map(|j| self.w2[j] * self.activation(j, x)).sum::<f64>()
    }

    pub fn n_params(&self) -> usize {
        self.hidden * self.inputs + 2 * self.hidden + 1
    }

    /// Flattened as `[w1, b1, w2, b2]`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        p.extend_from_slice(&self.w1);
        p.extend_from_slice(&self.b1);
        p.extend_from_slice(&self.w2);
        p.push(self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let (a, rest) = p.split_at(self.hidden * self.inputs);
        let (b, rest) = rest.split_at(self.hidden);
        let (c, d) = rest.split_at(self.hidden);
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2 = d[0];
    }

    /// `L = (1/2n) Σᵢ (f(xᵢ) − rᵢ)² + (decay/2)(‖w1‖² + ‖w2‖²)` and its
    /// gradient in [`params`](Self::params) order. `xs` holds one sample per
    /// row.
    pub fn loss_and_gradient(&self, xs: &DMatrix<f64>, r: &[f64], decay: f64) -> (f64, Vec<f64>) {
        let (n, d) = xs.shape();
        let h = self.hidden;
        let mut grad = vec![0.0; self.n_params()];
        let mut sse = 0.0;
        let mut act = vec![0.0; h];
        let mut x = vec![0.0; d];
        for i in 0..n {
            for (k, v) in x.iter_mut().enumerate() {
                *v = xs[(i, k)];
            }
            for (j, a) in act.iter_mut().enumerate() {
                let row = &self.w1[j * d..(j + 1) * d];
                *a = (row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + self.b1[j]).tanh();
            }
            let f = self.b2 + act.iter().zip(&self.w2).map(|(a, w)| a * w).sum::<f64>();
            let e = f - r[i];
            sse += e * e;
            let g = e / n as f64;
            let off_b1 = h * d;
            let off_w2 = off_b1 + h;
            for j in 0..h {
                grad[off_w2 + j] += g * act[j];
                let gz = g * self.w2[j] * (1.0 - act[j] * act[j]);
                grad[off_b1 + j] += gz;
                for (k, v) in x.iter().enumerate() {
                    grad[j * d + k] += gz * v;
                }
            }
            grad[off_w2 + h] += g;
        }
        let mut penalty = 0.0;
        for (k, w) in self.w1.iter().enumerate() {
            penalty += w * w;
            grad[k] += decay * w;
        }
        let off_w2 = h * d + h;
        for (j, w) in self.w2.iter().enumerate() {
            penalty += w * w;
            grad[off_w2 + j] += decay * w;
        }
        (sse / (2.0 * n as f64) + 0.5 * decay * penalty, grad)
    }

    /// Exact ridge refit of the output layer on fixed hidden activations.
    fn refit_output(&mut self, xs: &DMatrix<f64>, r: &[f64], decay: f64) {
        let n = xs.nrows();
        let h = self.hidden;
        let mut feats = DMatrix::zeros(n, h + 1);
        for i in 0..n {
            let row: Vec<f64> = xs.row(i).iter().copied().collect();
            feats[(i, 0)] = 1.0;
            for j in 0..h {
                feats[(i, j + 1)] = self.activation(j, &row);
            }
        }
        let mut gram = feats.tr_mul(&feats);
        for j in 1..=h {
            gram[(j, j)] += decay * n as f64;
        }
        let rhs = feats.tr_mul(&DVector::from_column_slice(r));
        if let Some(sol) = gram.cholesky().map(|c| c.solve(&rhs)) {
            if sol.iter().all(|v| v.is_finite()) {
                self.b2 = sol[0];
                self.w2.copy_from_slice(&sol.as_slice()[1..]);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostConfig {
    pub neurons: usize,
    pub stages: usize,
    /// Shrinkage applied to every stage's output.
    pub learning_rate: f64,
    /// Gradient-descent iterations per stage.
    pub epochs: usize,
    pub step_size: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub informative_missing: bool,
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self {
            neurons: 3,
            stages: 20,
            learning_rate: 0.5,
            epochs: 400,
            step_size: 0.5,
            weight_decay: 1e-4,
            seed: 0,
            informative_missing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedTanhNet {
    pub response: String,
    pub policy: MissingPolicy,
    /// Indicator inputs appended after the encoded factors; zero at
    /// prediction time since profiler settings are never missing.
    pub n_indicators: usize,
    pub input_center: Vec<f64>,
    pub input_scale: Vec<f64>,
    /// Training mean of the response.
    pub base: f64,
    pub y_scale: f64,
    pub learning_rate: f64,
    pub stages: Vec<TanhNet>,
    /// Training mean squared error after 0, 1, …, `stages` stages.
    pub loss_history: Vec<f64>,
}

impl BoostedTanhNet {
    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = x.to_vec();
        z.resize(self.input_center.len(), 0.0);
        z.iter_mut()
            .zip(self.input_center.iter().zip(&self.input_scale))
            .for_each(|(v, (c, s))| *v = (*v - c) / s);
        z
    }

    /// Contribution of each stage at an encoded point.
    pub fn stage_contributions(&self, x: &[f64]) -> Vec<f64> {
        let z = self.standardize(x);
        self.stages
            .iter()
            .map(|s| self.y_scale * self.learning_rate * s.forward(&z))
            .collect()
    }

    pub fn predict_encoded(&self, x: &[f64]) -> f64 {
        self.base + self.stage_contributions(x).iter().sum::<f64>()
    }
}

/// Boosts `config.stages` tanh networks on residuals.
///
/// Rows with a missing response are dropped. With informative missing on,
/// factor cells are imputed and indicator inputs added; otherwise rows with
/// missing factor cells are dropped.
pub fn fit_boosted_tanh(train: &Dataset, space: &FactorSpace, response: &str, config: BoostConfig) -> Result<BoostedTanhNet> {
    let policy = MissingPolicy {
        informative_missing: config.informative_missing,
    };
    let y_all = response_values(train, response)?;
    let keep: Vec<usize> = (0..train.n_rows()).filter(|&i| y_all[i].is_some()).collect();
    let data = train.take_rows(&keep);
    let (data, aug_space) = apply_missing_policy(&data, space, policy)?;
    let y_all: Vec<Option<f64>> = keep.iter().map(|&i| y_all[i]).collect();
    let m = encode(&data, &aug_space)?;
    let rows: Vec<usize> = (0..data.n_rows())
        .filter(|&i| m.values.row(i).iter().all(|v| !v.is_nan()))
        .collect();
    if rows.len() < 20 {
        return Err(Error::InsufficientData(format!("{} usable rows; boosting needs 20", rows.len())));
    }
    let d = aug_space.encoded_dim();
    let n = rows.len();
    let mut xs = DMatrix::from_fn(n, d, |i, j| m.values[(rows[i], j)]);
    let y: Vec<f64> = rows.iter().map(|&i| y_all[i].expect("kept rows have a response")).collect();

    let mut center = vec![0.0; d];
    let mut scale = vec![1.0; d];
    for j in 0..d {
        let col = xs.column(j);
        let mean = col.mean();
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        center[j] = mean;
        scale[j] = if sd > 0.0 { sd } else { 1.0 };
    }
    for j in 0..d {
        for i in 0..n {
            xs[(i, j)] = (xs[(i, j)] - center[j]) / scale[j];
        }
    }
    let base = y.iter().sum::<f64>() / n as f64;
    let y_sd = (y.iter().map(|v| (v - base).powi(2)).sum::<f64>() / n as f64).sqrt();
    let y_scale = if y_sd > 0.0 { y_sd } else { 1.0 };
    let mut resid: Vec<f64> = y.iter().map(|v| (v - base) / y_scale).collect();

    let mse = |r: &[f64]| y_scale * y_scale * r.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let mut loss_history = vec![mse(&resid)];
    let mut stages = Vec::with_capacity(config.stages);
    for stage in 0..config.stages {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(stage as u64));
        let mut net = TanhNet::random(d, config.neurons, &mut rng);
        let mut params = net.params();
        for _ in 0..config.epochs {
            let (loss, grad) = net.loss_and_gradient(&xs, &resid, config.weight_decay);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss(stage));
            }
            params.iter_mut().zip(&grad).for_each(|(p, g)| *p -= config.step_size * g);
            net.set_params(&params);
        }
        net.refit_output(&xs, &resid, config.weight_decay);
        let mut z = vec![0.0; d];
        for i in 0..n {
            for (k, v) in z.iter_mut().enumerate() {
                *v = xs[(i, k)];
            }
            resid[i] -= config.learning_rate * net.forward(&z);
        }
        let loss = mse(&resid);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(stage));
        }
        loss_history.push(loss);
        stages.push(net);
    }
    Ok(BoostedTanhNet {
        response: response.to_string(),
        policy,
        n_indicators: aug_space.len() - space.len(),
        input_center: center,
        input_scale: scale,
        base,
        y_scale,
        learning_rate: config.learning_rate,
        stages,
        loss_history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ResponseModel {
    LeastSquares(LeastSquaresModel),
    BoostedTanh(BoostedTanhNet),
}

impl ResponseModel {
    pub fn response(&self) -> &str {
        match self {
            ResponseModel::LeastSquares(m) => &m.response,
            ResponseModel::BoostedTanh(m) => &m.response,
        }
    }

    pub fn predict_encoded(&self, x: &[f64]) -> f64 {
        match self {
            ResponseModel::LeastSquares(m) => m.predict_encoded(x),
            ResponseModel::BoostedTanh(m) => m.predict_encoded(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelSpec {
    LeastSquares,
    Boosted(BoostConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Metric override; least squares defaults to leverage, everything else
    /// to regularized T².
    pub metric: Option<MetricKind>,
    pub leverage_rule: LeverageRule,
    pub regt2: RegT2Options,
    /// Cap on training rows kept as optimizer seeds.
    pub max_seed_points: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            metric: None,
            leverage_rule: LeverageRule::default(),
            regt2: RegT2Options::default(),
            max_seed_points: 1000,
        }
    }
}

/// Fitted models over one factor space plus the extrapolation model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub v: u32,
    pub space: FactorSpace,
    pub responses: Vec<ResponseModel>,
    pub extrapolation: ExtrapolationModel,
    /// Training means (continuous) and most frequent levels.
    pub defaults: Vec<FactorValue>,
    /// Training rows with missing cells replaced by `defaults`.
    pub seed_points: Vec<Vec<FactorValue>>,
    /// Observed `(min, max)` of each response.
    pub response_ranges: Vec<(f64, f64)>,
}

pub fn fit_artifact(
    train: &Dataset,
    space: &FactorSpace,
    responses: &[&str],
    spec: ModelSpec,
    opts: FitOptions,
) -> Result<ModelArtifact> {
    if responses.is_empty() {
        return Err(Error::InvalidArgument("at least one response is required".into()));
    }
    let mut models = Vec::with_capacity(responses.len());
    let mut ranges = Vec::with_capacity(responses.len());
    for r in responses {
        let y: Vec<f64> = train.reals(r)?.iter().flatten().copied().collect();
        if y.is_empty() {
            return Err(Error::EmptyColumn(r.to_string()));
        }
        ranges.push((
            y.iter().copied().fold(f64::INFINITY, f64::min),
            y.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ));
        models.push(match spec {
            ModelSpec::LeastSquares => ResponseModel::LeastSquares(fit_least_squares_with(train, space, r, opts.leverage_rule)?),
            ModelSpec::Boosted(cfg) => ResponseModel::BoostedTanh(fit_boosted_tanh(train, space, r, cfg)?),
        });
    }
    let metric = opts.metric.unwrap_or(match spec {
        ModelSpec::LeastSquares => MetricKind::Leverage,
        ModelSpec::Boosted(_) => MetricKind::Regt2,
    });
    let extrapolation = match metric {
        MetricKind::Leverage => {
            let (_, design) = complete_rows(train, space, None)?;
            ExtrapolationModel::Leverage(fit_leverage_model(&design, opts.leverage_rule)?)
        }
        MetricKind::Regt2 => ExtrapolationModel::Regt2(fit_regt2_model_with(&encode(train, space)?, opts.regt2)?),
    };
    let defaults = factor_defaults(train, space)?;
    let step = train.n_rows().div_ceil(opts.max_seed_points.max(1)).max(1);
    let seed_points = (0..train.n_rows())
        .step_by(step)
        .map(|i| {
            train.row_settings(space, i).map(|row| {
                row.into_iter()
                    .zip(&defaults)
                    .map(|(v, d)| v.unwrap_or(*d))
                    .collect::<Vec<_>>()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelArtifact {
        v: 1,
        space: space.clone(),
        responses: models,
        extrapolation,
        defaults,
        seed_points,
        response_ranges: ranges,
    })
}

/// Training means for continuous factors (clamped to the box) and the most
/// frequent level, first level on ties, for the others.
pub fn factor_defaults(data: &Dataset, space: &FactorSpace) -> Result<Vec<FactorValue>> {
    let mut out = Vec::with_capacity(space.len());
    for (fi, f) in space.factors.iter().enumerate() {
        let cells: Vec<FactorValue> = (0..data.n_rows())
            .filter_map(|i| data.row_settings(space, i).map(|r| r[fi]).transpose())
            .collect::<Result<_>>()?;
        if cells.is_empty() {
            return Err(Error::EmptyColumn(f.name.clone()));
        }
        out.push(match &f.kind {
            FactorKind::Continuous { low, high } => {
                let mean = cells.iter().filter_map(|v| v.as_real()).sum::<f64>() / cells.len() as f64;
                FactorValue::Real(mean.clamp(*low, *high))
            }
            FactorKind::Categorical { levels } | FactorKind::Ordinal { levels, .. } => {
                let mut counts = vec![0usize; levels.len()];
                for v in &cells {
                    if let Some(l) = v.as_level() {
                        counts[l] += 1;
                    }
                }
                FactorValue::Level(argmax_first(&counts))
            }
        });
    }
    Ok(out)
}

impl ModelArtifact {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string(self)?).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let a: Self = serde_json::from_str(text)?;
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        if self.v != 1 {
            return Err(Error::InvalidArgument(format!("unsupported artifact version {}", self.v)));
        }
        if self.extrapolation.dim() != self.space.encoded_dim() {
            return Err(Error::Dimension {
                expected: self.space.encoded_dim(),
                found: self.extrapolation.dim(),
            });
        }
        if self.response_ranges.len() != self.responses.len() {
            return Err(Error::InvalidArgument("one response range per response".into()));
        }
        self.space.check_settings(&self.defaults)
    }

    /// Predictions at an encoded point.
    pub fn predict_encoded(&self, x: &[f64]) -> Vec<f64> {
        self.responses.iter().map(|m| m.predict_encoded(x)).collect()
    }

    /// Extrapolation metric at a setting.
    pub fn metric(&self, settings: &[FactorValue]) -> Result<f64> {
        self.extrapolation.metric(&self.space.encode_point(settings))
    }
}

impl Predictor for ModelArtifact {
    fn space(&self) -> &FactorSpace {
        &self.space
    }

    fn response_names(&self) -> Vec<String> {
        self.responses.iter().map(|r| r.response().to_string()).collect()
    }

    fn predict(&self, settings: &[FactorValue]) -> Result<Vec<f64>> {
        self.space.check_settings(settings)?;
        Ok(self.predict_encoded(&self.space.encode_point(settings)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn xy(xs: &[f64], ys: &[f64]) -> (Dataset, FactorSpace) {
        let d = Dataset::new(vec![
            Column::real("x", xs.iter().map(|v| Some(*v)).collect()),
            Column::real("y", ys.iter().map(|v| Some(*v)).collect()),
        ])
        .unwrap();
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (d, FactorSpace::new(vec![FactorDef::continuous("x", lo, hi)]).unwrap())
    }

    #[test]
    fn exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let (d, s) = xy(&xs, &ys);
        let m = fit_least_squares(&d, &s, "y").unwrap();
        assert_abs_diff_eq!(m.coefficients[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.coefficients[1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.r2, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.predict_encoded(&[3.0]), 7.0, epsilon = 1e-12);
    }

    #[test]
    fn orthogonal_response_has_zero_slope() {
        let xs = [-1.0, 0.0, 1.0, -1.0, 0.0, 1.0];
        let ys = [1.0, -2.0, 1.0, 3.0, 0.0, 3.0];
        // Sxy = Σ (x − x̄) y = −1 + 1 − 3 + 3 = 0
        let (d, s) = xy(&xs, &ys);
        let m = fit_least_squares(&d, &s, "y").unwrap();
        assert_abs_diff_eq!(m.coefficients[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.predict_encoded(&[0.0]), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn missing_response_column() {
        let (d, s) = xy(&[0.0, 1.0, 2.0], &[1.0, 2.0, 3.0]);
        assert!(matches!(fit_least_squares(&d, &s, "z"), Err(Error::MissingColumn(_))));
    }

    #[test]
    fn informative_missing_imputes_and_flags() {
        let d = Dataset::new(vec![
            Column::real("a", vec![Some(1.0), None, Some(3.0)]),
            Column::real("b", vec![Some(1.0), Some(2.0), Some(4.0)]),
        ])
        .unwrap();
        let s = FactorSpace::new(vec![
            FactorDef::continuous("a", 1.0, 3.0),
            FactorDef::continuous("b", 1.0, 4.0),
        ])
        .unwrap();
        let (d2, s2) = apply_missing_policy(&d, &s, MissingPolicy { informative_missing: true }).unwrap();
        assert_eq!(d2.reals("a").unwrap(), &[Some(1.0), Some(2.0), Some(3.0)]);
        assert_eq!(d2.reals("a (missing)").unwrap(), &[Some(0.0), Some(1.0), Some(0.0)]);
        assert_eq!(d2.missing_count(), 0);
        assert_eq!(s2.len(), 3);

        let complete = d.without(&["a"]);
        let sb = FactorSpace::new(vec![FactorDef::continuous("b", 1.0, 4.0)]).unwrap();
        let (d3, s3) = apply_missing_policy(&complete, &sb, MissingPolicy { informative_missing: true }).unwrap();
        assert_eq!(d3, complete);
        assert_eq!(s3, sb);
    }

    #[test]
    fn missing_injection_is_reproducible() {
        let d = Dataset::new(vec![
            Column::real("a", (0..100).map(|i| Some(i as f64)).collect()),
            Column::real("b", (0..100).map(|i| Some(i as f64)).collect()),
        ])
        .unwrap();
        let m1 = inject_missing(&d, &["a", "b"], 0.5, 9).unwrap();
        let m2 = inject_missing(&d, &["a", "b"], 0.5, 9).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(m1.missing_count(), 100);
    }

    #[test]
    fn zero_stages_predict_the_mean() {
        let xs: Vec<f64> = (0..30).map(|i| i as f64 / 10.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let (d, s) = xy(&xs, &ys);
        let cfg = BoostConfig {
            stages: 0,
            ..Default::default()
        };
        let m = fit_boosted_tanh(&d, &s, "y", cfg).unwrap();
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        assert_eq!(m.predict_encoded(&[0.7]), mean);
        assert_eq!(m.loss_history.len(), 1);
    }

    #[test]
    fn boosting_needs_twenty_rows() {
        let (d, s) = xy(&[0.0, 1.0, 2.0], &[1.0, 2.0, 3.0]);
        assert!(matches!(
            fit_boosted_tanh(&d, &s, "y", BoostConfig::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn boosting_telescopes_and_is_reproducible() {
        let xs: Vec<f64> = (0..40).map(|i| i as f64 / 8.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.cos()).collect();
        let (d, s) = xy(&xs, &ys);
        let cfg = BoostConfig {
            stages: 4,
            epochs: 50,
            seed: 3,
            ..Default::default()
        };
        let a = fit_boosted_tanh(&d, &s, "y", cfg).unwrap();
        let b = fit_boosted_tanh(&d, &s, "y", cfg).unwrap();
        assert_eq!(a, b);
        let parts = a.stage_contributions(&[1.3]);
        assert_eq!(parts.len(), 4);
        assert_eq!(a.predict_encoded(&[1.3]), a.base + parts.iter().sum::<f64>());
    }

    #[test]
    fn artifact_defaults_use_means_and_modes() {
        let d = Dataset::new(vec![
            Column::real("x", (0..10).map(|i| Some(i as f64)).collect()),
            Column::levels("c", &[Some("a"), Some("a"), Some("b"), Some("a"), Some("b"), Some("a"), Some("a"), Some("b"), Some("a"), Some("a")]),
        ])
        .unwrap();
        let s = crate::data::infer_factor_space(&d).unwrap();
        let defaults = factor_defaults(&d, &s).unwrap();
        assert_eq!(defaults, vec![FactorValue::Real(4.5), FactorValue::Level(0)]);
    }
}
