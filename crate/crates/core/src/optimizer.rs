//! Genetic algorithm over mixed factor spaces with an optional nonlinear
//! extrapolation constraint.
//!
//! Constraint handling uses a feasibility-rule tournament: a feasible genome
//! beats an infeasible one, two infeasible genomes compare by violation
//! `metric − threshold`, and two feasible genomes compare by objective.
//! Fitness evaluation runs in parallel; all random draws come from one
//! seeded stream on the calling thread, so results do not depend on the
//! number of worker threads.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FactorKind, FactorSpace, FactorValue};
use crate::error::{Error, Result};

const REPAIR_BISECTIONS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    /// Per-gene mutation probability; `None` means `1/p` for `p` genes.
    pub mutation_rate: Option<f64>,
    pub tournament_size: usize,
    pub elitism: usize,
    pub seed: u64,
    /// Stop after this many generations without improvement of the best.
    pub stall_limit: usize,
    /// Gaussian mutation scale as a fraction of each continuous range.
    pub mutation_scale: f64,
    /// Pull infeasible offspring back onto the constraint boundary along the
    /// segment toward the best feasible genome.
    pub boundary_repair: bool,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 200,
            generations: 300,
            crossover_rate: 0.9,
            mutation_rate: None,
            tournament_size: 3,
            elitism: 2,
            seed: 0,
            stall_limit: 50,
            mutation_scale: 0.05,
            boundary_repair: true,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let rate_ok = |r: f64| (0.0..=1.0).contains(&r);
        if self.population < 4
            || !rate_ok(self.crossover_rate)
            || !self.mutation_rate.is_none_or(rate_ok)
            || self.tournament_size == 0
            || self.elitism >= self.population
            || !(self.mutation_scale > 0.0)
        {
            return Err(Error::InvalidArgument(format!("invalid GA configuration {self:?}")));
        }
        Ok(())
    }
}

/// Result of one optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimumReport {
    pub settings: Vec<FactorValue>,
    /// Objective value (overall desirability when driven by the profiler).
    pub desirability: f64,
    pub metric: Option<f64>,
    pub threshold: Option<f64>,
    pub feasible: bool,
    pub generations: usize,
    pub stalled: bool,
    /// Best objective after each generation.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Individual {
    genes: Vec<FactorValue>,
    objective: f64,
    metric: Option<f64>,
    threshold: Option<f64>,
}

impl Individual {
    fn violation(&self) -> f64 {
        match (self.metric, self.threshold) {
            (Some(m), Some(t)) => (m - t).max(0.0),
            _ => 0.0,
        }
    }

    fn feasible(&self) -> bool {
        self.violation() == 0.0
    }
}

/// `Less` when `a` ranks ahead of `b`.
fn rank(a: &Individual, b: &Individual) -> Ordering {
    match (a.feasible(), b.feasible()) {
        (true, false) => Ordering::Less,
        (false, true) => Ordering::Greater,
        (false, false) => a.violation().total_cmp(&b.violation()),
        (true, true) => b.objective.total_cmp(&a.objective),
    }
}

/// Maximizes `objective` over `space`, keeping `constraint(x) = (metric,
/// threshold)` at `metric ≤ threshold` when given. `seeds` (typically the
/// training rows) are placed in the initial population, up to half of it.
pub fn optimize<F, C>(
    objective: F,
    constraint: Option<C>,
    space: &FactorSpace,
    seeds: &[Vec<FactorValue>],
    config: &GaConfig,
) -> Result<OptimumReport>
where
    F: Fn(&[FactorValue]) -> f64 + Sync,
    C: Fn(&[FactorValue]) -> (f64, f64) + Sync,
{
    config.validate()?;
    space.validate()?;
    for s in seeds {
        space.check_settings(s)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let ops = Operators::new(space, config);

    let evaluate = |genes: Vec<FactorValue>| {
        let obj = objective(&genes);
        let (metric, threshold) = match &constraint {
            Some(c) => {
                let (m, t) = c(&genes);
                (Some(m), Some(t))
            }
            None => (None, None),
        };
        Individual {
            objective: if obj.is_nan() { f64::NEG_INFINITY } else { obj },
            genes,
            metric,
            threshold,
        }
    };
    // Bisection toward `anchor` for offspring that violate the constraint.
    let evaluate_repaired = |genes: Vec<FactorValue>, anchor: Option<&[FactorValue]>| {
        let first = evaluate(genes);
        let (Some(anchor), Some(c)) = (anchor, &constraint) else {
            return first;
        };
        if first.feasible() {
            return first;
        }
        let blend = |t: f64| -> Vec<FactorValue> {
            first
                .genes
                .iter()
                .zip(anchor)
                .map(|(z, r)| match (z, r) {
                    (FactorValue::Real(z), FactorValue::Real(r)) => FactorValue::Real(r + t * (z - r)),
                    _ => *z,
                })
                .collect()
        };
        let feasible_at = |t: f64| {
            let (m, th) = c(&blend(t));
            m <= th
        };
        if !feasible_at(0.0) {
            return first;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..REPAIR_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            if feasible_at(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        evaluate(blend(lo))
    };

    let n_seed = seeds.len().min(config.population / 2);
    let mut genomes: Vec<Vec<FactorValue>> = (0..n_seed)
        .map(|k| seeds[k * seeds.len() / n_seed.max(1)].clone())
        .collect();
    while genomes.len() < config.population {
        genomes.push(ops.random(&mut rng));
    }

    let mut population: Vec<Individual> = genomes.into_par_iter().map(&evaluate).collect();
    population.sort_by(rank);

    let mut history = Vec::with_capacity(config.generations);
    let mut best_key = (population[0].feasible(), population[0].violation(), population[0].objective);
    let mut since_improvement = 0;
    let mut generations = 0;
    let mut stalled = false;

    for _ in 0..config.generations {
        let n_children = config.population - config.elitism;
        let mut children: Vec<Vec<FactorValue>> = Vec::with_capacity(n_children);
        while children.len() < n_children {
            let a = tournament(&population, config.tournament_size, &mut rng);
            let b = tournament(&population, config.tournament_size, &mut rng);
            let mut child = if rng.random::<f64>() < config.crossover_rate {
                ops.crossover(&population[a].genes, &population[b].genes, &mut rng)
            } else {
                population[a].genes.clone()
            };
            ops.mutate(&mut child, &mut rng);
            children.push(child);
        }
        let anchor: Option<Vec<FactorValue>> = (config.boundary_repair && population[0].feasible())
            .then(|| population[0].genes.clone());
        let fresh: Vec<Individual> = children
            .into_par_iter()
            .map(|g| evaluate_repaired(g, anchor.as_deref()))
            .collect();
        population.truncate(config.elitism);
        population.extend(fresh);
        population.sort_by(rank);
        generations += 1;
        history.push(population[0].objective);

        let key = (population[0].feasible(), population[0].violation(), population[0].objective);
        let improved = key != best_key;
        best_key = key;
        if improved {
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if config.stall_limit > 0 && since_improvement >= config.stall_limit {
                stalled = true;
                break;
            }
        }
    }

    let best = &population[0];
    Ok(OptimumReport {
        settings: best.genes.clone(),
        desirability: best.objective,
        metric: best.metric,
        threshold: best.threshold,
        feasible: best.feasible(),
        generations,
        stalled,
        history,
    })
}

fn tournament(pop: &[Individual], size: usize, rng: &mut ChaCha8Rng) -> usize {
    let mut best = rng.random_range(0..pop.len());
    for _ in 1..size {
        let c = rng.random_range(0..pop.len());
        if rank(&pop[c], &pop[best]) == Ordering::Less {
            best = c;
        }
    }
    best
}

/// Gene bounds derived from the factor space.
#[derive(Debug, Clone)]
enum Gene {
    Real { low: f64, high: f64, sd: f64 },
    Level { count: usize },
}

struct Operators {
    genes: Vec<Gene>,
    mutation_rate: f64,
}

impl Operators {
    fn new(space: &FactorSpace, config: &GaConfig) -> Self {
        let genes: Vec<Gene> = space
            .factors
            .iter()
            .map(|f| match &f.kind {
                FactorKind::Continuous { low, high } => Gene::Real {
                    low: *low,
                    high: *high,
                    sd: config.mutation_scale * (high - low),
                },
                FactorKind::Categorical { levels } | FactorKind::Ordinal { levels, .. } => Gene::Level { count: levels.len() },
            })
            .collect();
        let mutation_rate = config.mutation_rate.unwrap_or(1.0 / genes.len().max(1) as f64);
        Self { genes, mutation_rate }
    }

    fn random(&self, rng: &mut ChaCha8Rng) -> Vec<FactorValue> {
        self.genes
            .iter()
            .map(|g| match g {
                Gene::Real { low, high, .. } => FactorValue::Real(rng.random_range(*low..=*high)),
                Gene::Level { count } => FactorValue::Level(rng.random_range(0..*count)),
            })
            .collect()
    }

    /// BLX-0.5 for continuous genes (clipped to the box), uniform swap for
    /// discrete ones.
    fn crossover(&self, a: &[FactorValue], b: &[FactorValue], rng: &mut ChaCha8Rng) -> Vec<FactorValue> {
        self.genes
            .iter()
            .zip(a.iter().zip(b))
            .map(|(g, (x, y))| match (g, x, y) {
                (Gene::Real { low, high, .. }, FactorValue::Real(x), FactorValue::Real(y)) => {
                    let (lo, hi) = (x.min(*y), x.max(*y));
                    let d = hi - lo;
                    let u: f64 = rng.random();
                    let v = lo - 0.5 * d + u * 2.0 * d;
                    FactorValue::Real(v.clamp(*low, *high))
                }
                _ => {
                    if rng.random::<bool>() {
                        *x
                    } else {
                        *y
                    }
                }
            })
            .collect()
    }

    fn mutate(&self, genes: &mut [FactorValue], rng: &mut ChaCha8Rng) {
        for (g, v) in self.genes.iter().zip(genes.iter_mut()) {
            if rng.random::<f64>() >= self.mutation_rate {
                continue;
            }
            match (g, v) {
                (Gene::Real { low, high, sd }, FactorValue::Real(x)) => {
                    let step: f64 = Normal::new(0.0, *sd).expect("positive sd").sample(rng);
                    *x = (*x + step).clamp(*low, *high);
                }
                (Gene::Level { count }, v) => *v = FactorValue::Level(rng.random_range(0..*count)),
                _ => {}
            }
        }
    }
}
