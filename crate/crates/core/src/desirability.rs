//! Response desirability functions and their importance-weighted geometric
//! mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GoalKind {
    Maximize { low: f64, high: f64 },
    Minimize { low: f64, high: f64 },
    MatchTarget { low: f64, target: f64, high: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    #[serde(flatten)]
    pub kind: GoalKind,
    #[serde(default = "default_importance")]
    pub importance: f64,
}

fn default_importance() -> f64 {
    1.0
}

impl Goal {
    pub fn maximize(low: f64, high: f64) -> Self {
        Self {
            kind: GoalKind::Maximize { low, high },
            importance: 1.0,
        }
    }

    pub fn minimize(low: f64, high: f64) -> Self {
        Self {
            kind: GoalKind::Minimize { low, high },
            importance: 1.0,
        }
    }

    pub fn match_target(low: f64, target: f64, high: f64) -> Self {
        Self {
            kind: GoalKind::MatchTarget { low, target, high },
            importance: 1.0,
        }
    }

    pub fn with_importance(mut self, importance: f64) -> Self {
        self.importance = importance;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            GoalKind::Maximize { low, high } | GoalKind::Minimize { low, high } => low < high,
            GoalKind::MatchTarget { low, target, high } => low < target && target < high,
        };
        if !ok || !(self.importance > 0.0) || !self.importance.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid goal {self:?}")));
        }
        Ok(())
    }

    pub fn desirability(&self, y: f64) -> f64 {
        desirability(self, y)
    }
}

/// Piecewise-linear desirability in `[0, 1]`.
pub fn desirability(goal: &Goal, y: f64) -> f64 {
    if y.is_nan() {
        return 0.0;
    }
    let d = match goal.kind {
        GoalKind::Maximize { low, high } => (y - low) / (high - low),
        GoalKind::Minimize { low, high } => (high - y) / (high - low),
        GoalKind::MatchTarget { low, target, high } => {
            if y <= target {
                (y - low) / (target - low)
            } else {
                (high - y) / (high - target)
            }
        }
    };
    d.clamp(0.0, 1.0)
}

/// `(∏ dᵢ^{wᵢ})^{1/Σwᵢ}`; zero when any desirability is zero.
pub fn overall_desirability(goals: &[Goal], responses: &[f64]) -> Result<f64> {
    if goals.len() != responses.len() {
        return Err(Error::Dimension {
            expected: goals.len(),
            found: responses.len(),
        });
    }
    if goals.is_empty() {
        return Err(Error::InvalidArgument("no goals".into()));
    }
    let mut log_sum = 0.0;
    let mut weight = 0.0;
    for (g, y) in goals.iter().zip(responses) {
        let d = desirability(g, *y);
        if d == 0.0 {
            return Ok(0.0);
        }
        log_sum += g.importance * d.ln();
        weight += g.importance;
    }
    Ok((log_sum / weight).exp().clamp(0.0, 1.0))
}
