//! Interactive profiler state: factor settings, traces, and the off / warn /
//! constrain extrapolation modes.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FactorDef, FactorKind, FactorValue};
use crate::desirability::{overall_desirability, Goal};
use crate::error::{Error, Result};
use crate::extrapolation::{classify, feasible_interval, ExtrapolationStatus, FeasibleSet};
use crate::models::ModelArtifact;
use crate::optimizer::{optimize, GaConfig, OptimumReport};

pub const DEFAULT_RESOLUTION: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Off,
    #[default]
    Warn,
    Constrain,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(Mode::Off),
            "warn" => Ok(Mode::Warn),
            "constrain" => Ok(Mode::Constrain),
            other => Err(Error::InvalidArgument(format!("unknown mode {other:?}"))),
        }
    }
}

/// One cross-section of the response surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileTrace {
    pub factor: String,
    pub grid: Vec<FactorValue>,
    /// `predictions[i][r]` is response `r` at `grid[i]`.
    pub predictions: Vec<Vec<f64>>,
    pub desirability: Option<Vec<f64>>,
    pub metric: Vec<f64>,
    pub feasible: Vec<bool>,
    pub feasible_set: FeasibleSet,
    pub current: FactorValue,
    pub current_predictions: Vec<f64>,
}

/// Result of a single slider move.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorUpdate {
    pub factor: String,
    pub requested: FactorValue,
    pub stored: FactorValue,
    pub clamped: bool,
    pub status: ExtrapolationStatus,
    pub warning: bool,
}

/// Serializable view of a profiler state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub v: u32,
    pub mode: Mode,
    pub factors: Vec<FactorDef>,
    pub responses: Vec<String>,
    pub settings: Vec<FactorValue>,
    pub predictions: Vec<f64>,
    pub desirability: Option<f64>,
    pub goals: Vec<Goal>,
    pub status: ExtrapolationStatus,
    pub warning: bool,
    pub resolution: usize,
    pub traces: Vec<ProfileTrace>,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ProfilerState {
    artifact: Arc<ModelArtifact>,
    mode: Mode,
    settings: Vec<FactorValue>,
    goals: Vec<Goal>,
    resolution: usize,
    status: ExtrapolationStatus,
    diagnostics: Vec<String>,
}

/// Starts at training means and modal levels. In constrain mode an
/// extrapolated start moves to the least extrapolated training row.
pub fn init_state(artifact: Arc<ModelArtifact>, goals: Vec<Goal>, mode: Mode) -> Result<ProfilerState> {
    artifact.validate()?;
    if !goals.is_empty() && goals.len() != artifact.responses.len() {
        return Err(Error::Dimension {
            expected: artifact.responses.len(),
            found: goals.len(),
        });
    }
    for g in &goals {
        g.validate()?;
    }
    let settings = artifact.defaults.clone();
    let status = status_of(&artifact, &settings)?;
    let mut state = ProfilerState {
        artifact,
        mode,
        settings,
        goals,
        resolution: DEFAULT_RESOLUTION,
        status,
        diagnostics: Vec::new(),
    };
    if mode == Mode::Constrain {
        state.enter_feasible_region()?;
    }
    Ok(state)
}

fn status_of(artifact: &ModelArtifact, settings: &[FactorValue]) -> Result<ExtrapolationStatus> {
    let m = &artifact.extrapolation;
    Ok(classify(m.kind(), artifact.metric(settings)?, m.threshold()))
}

impl ProfilerState {
    pub fn artifact(&self) -> &Arc<ModelArtifact> {
        &self.artifact
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn settings(&self) -> &[FactorValue] {
        &self.settings
    }

    pub fn goals(&self) -> &[Goal] {
        &self.goals
    }

    pub fn status(&self) -> ExtrapolationStatus {
        self.status
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn diagnostics(&self) -> &[String] {
        &self.diagnostics
    }

    /// True when the current setting is extrapolated and the mode reports it.
    pub fn warning(&self) -> bool {
        self.mode != Mode::Off && self.status.extrapolated
    }

    pub fn set_resolution(&mut self, resolution: usize) -> Result<()> {
        if resolution < 2 {
            return Err(Error::InvalidArgument("trace resolution must be at least 2".into()));
        }
        self.resolution = resolution;
        Ok(())
    }

    pub fn set_goals(&mut self, goals: Vec<Goal>) -> Result<()> {
        if goals.len() != self.artifact.responses.len() {
            return Err(Error::Dimension {
                expected: self.artifact.responses.len(),
                found: goals.len(),
            });
        }
        for g in &goals {
            g.validate()?;
        }
        self.goals = goals;
        Ok(())
    }

    pub fn set_mode(&mut self, mode: Mode) -> Result<()> {
        self.mode = mode;
        if mode == Mode::Constrain {
            self.enter_feasible_region()?;
        }
        Ok(())
    }

    fn enter_feasible_region(&mut self) -> Result<()> {
        if !self.status.extrapolated {
            return Ok(());
        }
        let mut best: Option<(f64, &Vec<FactorValue>)> = None;
        for s in &self.artifact.seed_points {
            let m = self.artifact.metric(s)?;
            if best.is_none_or(|(b, _)| m < b) {
                best = Some((m, s));
            }
        }
        match best {
            Some((m, s)) if m <= self.artifact.extrapolation.threshold() => {
                self.settings = s.clone();
                self.status = status_of(&self.artifact, &self.settings)?;
                self.diagnostics
                    .push("default settings are extrapolated; started from the least extrapolated training row".into());
                Ok(())
            }
            _ => Err(Error::InvalidArgument("no training row satisfies the extrapolation threshold".into())),
        }
    }

    pub fn predictions(&self) -> Vec<f64> {
        self.artifact
            .predict_encoded(&self.artifact.space.encode_point(&self.settings))
    }

    pub fn desirability(&self) -> Option<f64> {
        self.desirability_of(&self.predictions())
    }

    fn desirability_of(&self, predictions: &[f64]) -> Option<f64> {
        if self.goals.is_empty() {
            None
        } else {
            overall_desirability(&self.goals, predictions).ok()
        }
    }

    /// Moves one factor. Constrain mode clamps continuous values to the
    /// nearest feasible endpoint and never leaves the feasible region.
    pub fn set_factor(&mut self, name: &str, value: FactorValue) -> Result<FactorUpdate> {
        let space = &self.artifact.space;
        let fi = space
            .index_of(name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
        let mut trial = self.settings.clone();
        trial[fi] = value;
        space.check_settings(&trial)?;

        let stored = if self.mode == Mode::Constrain {
            self.constrained_value(fi, value)?
        } else {
            value
        };
        self.settings[fi] = stored;
        self.status = status_of(&self.artifact, &self.settings)?;
        Ok(FactorUpdate {
            factor: name.to_string(),
            requested: value,
            stored,
            clamped: stored != value,
            status: self.status,
            warning: self.warning(),
        })
    }

    fn constrained_value(&mut self, fi: usize, value: FactorValue) -> Result<FactorValue> {
        let art = Arc::clone(&self.artifact);
        let def = &art.space.factors[fi];
        let current = self.settings[fi];
        let set = feasible_interval(&art.extrapolation, &art.space, &self.settings, fi)?;
        let candidate = match (&set, value) {
            (FeasibleSet::Interval { low, high }, FactorValue::Real(v)) => FactorValue::Real(v.clamp(*low, *high)),
            (FeasibleSet::Levels { levels }, FactorValue::Level(l)) if !levels.contains(&l) => {
                match &def.kind {
                    FactorKind::Ordinal { scores, .. } if !levels.is_empty() => {
                        let target = scores[l];
                        let nearest = levels
                            .iter()
                            .copied()
                            .min_by(|a, b| (scores[*a] - target).abs().total_cmp(&(scores[*b] - target).abs()))
                            .unwrap_or(l);
                        FactorValue::Level(nearest)
                    }
                    _ => {
                        self.diagnostics.push(format!(
                            "{} = {} is extrapolated; kept {}",
                            def.name,
                            art.space.describe(fi, value),
                            art.space.describe(fi, current)
                        ));
                        current
                    }
                }
            }
            (FeasibleSet::Levels { .. }, FactorValue::Level(_)) => value,
            _ => {
                self.diagnostics
                    .push(format!("{} has no feasible values at the other settings; frozen", def.name));
                current
            }
        };
        self.pull_inside(fi, current, candidate)
    }

    /// Guards the clamped endpoint against rounding: bisects back toward the
    /// (feasible) current value until the metric is within the threshold.
    fn pull_inside(&self, fi: usize, current: FactorValue, candidate: FactorValue) -> Result<FactorValue> {
        let threshold = self.artifact.extrapolation.threshold();
        let mut s = self.settings.clone();
        s[fi] = candidate;
        if self.artifact.metric(&s)? <= threshold {
            return Ok(candidate);
        }
        let (FactorValue::Real(from), FactorValue::Real(to)) = (current, candidate) else {
            return Ok(current);
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            s[fi] = FactorValue::Real(from + mid * (to - from));
            if self.artifact.metric(&s)? <= threshold {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(FactorValue::Real(from + lo * (to - from)))
    }

    fn grid(&self, fi: usize) -> Vec<FactorValue> {
        match &self.artifact.space.factors[fi].kind {
            FactorKind::Continuous { low, high } => {
                let n = self.resolution;
                (0..n)
                    .map(|i| {
                        let t = i as f64 / (n - 1) as f64;
                        FactorValue::Real(if i + 1 == n { *high } else { low + t * (high - low) })
                    })
                    .collect()
            }
            FactorKind::Categorical { levels } | FactorKind::Ordinal { levels, .. } => {
                (0..levels.len()).map(FactorValue::Level).collect()
            }
        }
    }

    pub fn trace(&self, fi: usize) -> Result<ProfileTrace> {
        let art = &self.artifact;
        let threshold = art.extrapolation.threshold();
        let grid = self.grid(fi);
        let mut s = self.settings.clone();
        let mut predictions = Vec::with_capacity(grid.len());
        let mut metric = Vec::with_capacity(grid.len());
        for g in &grid {
            s[fi] = *g;
            let x = art.space.encode_point(&s);
            predictions.push(art.predict_encoded(&x));
            metric.push(art.extrapolation.metric(&x)?);
        }
        let desirability = if self.goals.is_empty() {
            None
        } else {
            Some(predictions.iter().map(|p| self.desirability_of(p).unwrap_or(0.0)).collect())
        };
        Ok(ProfileTrace {
            factor: art.space.factors[fi].name.clone(),
            feasible: metric.iter().map(|m| *m <= threshold).collect(),
            feasible_set: feasible_interval(&art.extrapolation, &art.space, &self.settings, fi)?,
            grid,
            predictions,
            desirability,
            metric,
            current: self.settings[fi],
            current_predictions: self.predictions(),
        })
    }

    pub fn traces(&self) -> Result<Vec<ProfileTrace>> {
        (0..self.artifact.space.len()).into_par_iter().map(|i| self.trace(i)).collect()
    }

    pub fn snapshot(&self) -> Result<StateSnapshot> {
        let predictions = self.predictions();
        Ok(StateSnapshot {
            v: 1,
            mode: self.mode,
            factors: self.artifact.space.factors.clone(),
            responses: self.artifact.responses.iter().map(|r| r.response().to_string()).collect(),
            settings: self.settings.clone(),
            desirability: self.desirability_of(&predictions),
            predictions,
            goals: self.goals.clone(),
            status: self.status,
            warning: self.warning(),
            resolution: self.resolution,
            traces: self.traces()?,
            diagnostics: self.diagnostics.clone(),
        })
    }

    /// Maximizes overall desirability, under the extrapolation constraint in
    /// constrain mode, and moves the state to the optimum.
    pub fn optimize_desirability(&mut self, config: &GaConfig) -> Result<OptimumReport> {
        if self.goals.is_empty() {
            return Err(Error::InvalidArgument("optimization needs a goal for every response".into()));
        }
        let art = Arc::clone(&self.artifact);
        let goals = self.goals.clone();
        let objective = |s: &[FactorValue]| {
            let y = art.predict_encoded(&art.space.encode_point(s));
            overall_desirability(&goals, &y).unwrap_or(0.0)
        };
        let threshold = art.extrapolation.threshold();
        let constraint = |s: &[FactorValue]| (art.metric(s).unwrap_or(f64::INFINITY), threshold);
        let mut seeds = Vec::with_capacity(art.seed_points.len() + 1);
        seeds.push(self.settings.clone());
        seeds.extend(art.seed_points.iter().cloned());

        let mut report = if self.mode == Mode::Constrain {
            optimize(objective, Some(constraint), &art.space, &seeds, config)?
        } else {
            optimize(objective, None::<fn(&[FactorValue]) -> (f64, f64)>, &art.space, &seeds, config)?
        };
        if report.metric.is_none() {
            report.metric = Some(art.metric(&report.settings)?);
            report.threshold = Some(threshold);
        }
        if self.mode == Mode::Constrain && !report.feasible {
            self.diagnostics
                .push("optimizer found no feasible settings; state unchanged".into());
            return Ok(report);
        }
        self.settings = report.settings.clone();
        self.status = status_of(&art, &self.settings)?;
        Ok(report)
    }
}
