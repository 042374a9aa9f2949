//! Deterministic surrogate landscapes standing in for trained accuracy.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{parallel_map, EvalError, EvalResponse, EvalTask, Evaluator, Status};
use crate::compiler::{count_params, decode};
use crate::genome::{random_genome, DatasetDescriptor, Genome, GenomeConstraints, GenomeError, Unit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    TargetDistance,
    ParamBudget,
}

impl FromStr for SurrogateKind {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "target_distance" => Ok(SurrogateKind::TargetDistance),
            "param_budget" => Ok(SurrogateKind::ParamBudget),
            other => Err(EvalError::UnknownSurrogate(other.to_string())),
        }
    }
}

impl fmt::Display for SurrogateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SurrogateKind::TargetDistance => "target_distance",
            SurrogateKind::ParamBudget => "param_budget",
        })
    }
}

/// Tunables for both landscapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateSpec {
    /// Seed of the hidden target genome for `target_distance`.
    pub target_seed: u64,
    /// Target `log10(parameter count)` for `param_budget`.
    pub target_log10: f64,
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        Self {
            target_seed: 2018,
            target_log10: 6.0,
        }
    }
}

/// Unit-level Levenshtein distance; units match only on full field equality.
pub fn edit_distance(a: &[Unit], b: &[Unit]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut row = vec![0; b.len() + 1];
    for (i, ua) in a.iter().enumerate() {
        row[0] = i + 1;
        for (j, ub) in b.iter().enumerate() {
            let substitute = prev[j] + usize::from(ua != ub);
            row[j + 1] = substitute.min(prev[j + 1] + 1).min(row[j] + 1);
        }
        std::mem::swap(&mut prev, &mut row);
    }
    prev[b.len()]
}

pub fn target_distance_fitness(g: &Genome, target: &Genome) -> f64 {
    1.0 / (1.0 + edit_distance(&g.units, &target.units) as f64)
}

pub fn param_budget_fitness(params: u64, target_log10: f64) -> f64 {
    1.0 / (1.0 + ((params as f64).log10() - target_log10).abs())
}

#[derive(Debug, Clone)]
enum Landscape {
    TargetDistance { target: Genome },
    ParamBudget { target_log10: f64 },
}

#[derive(Debug, Clone)]
pub struct SurrogateEvaluator {
    landscape: Landscape,
    dataset: DatasetDescriptor,
    constraints: GenomeConstraints,
}

impl SurrogateEvaluator {
    pub fn new(
        kind: SurrogateKind,
        spec: &SurrogateSpec,
        dataset: &DatasetDescriptor,
        constraints: &GenomeConstraints,
    ) -> Result<Self, GenomeError> {
        let landscape = match kind {
            SurrogateKind::TargetDistance => Landscape::TargetDistance {
                target: hidden_target(spec.target_seed, dataset, constraints)?,
            },
            SurrogateKind::ParamBudget => Landscape::ParamBudget {
                target_log10: spec.target_log10,
            },
        };
        Ok(Self {
            landscape,
            dataset: dataset.clone(),
            constraints: constraints.clone(),
        })
    }

    /// Target-distance landscape around an explicit genome.
    pub fn with_target(target: Genome, dataset: &DatasetDescriptor, constraints: &GenomeConstraints) -> Self {
        Self {
            landscape: Landscape::TargetDistance { target },
            dataset: dataset.clone(),
            constraints: constraints.clone(),
        }
    }

    pub fn target(&self) -> Option<&Genome> {
        match &self.landscape {
            Landscape::TargetDistance { target } => Some(target),
            Landscape::ParamBudget { .. } => None,
        }
    }

    /// Fitness in `(0, 1]`; `None` if the genome cannot be compiled.
    pub fn fitness(&self, g: &Genome) -> Option<f64> {
        match &self.landscape {
            Landscape::TargetDistance { target } => Some(target_distance_fitness(g, target)),
            Landscape::ParamBudget { target_log10 } => {
                let graph = decode(g, &self.dataset, &self.constraints).ok()?;
                Some(param_budget_fitness(count_params(&graph), *target_log10))
            }
        }
    }
}

pub fn hidden_target(
    seed: u64,
    dataset: &DatasetDescriptor,
    constraints: &GenomeConstraints,
) -> Result<Genome, GenomeError> {
    random_genome(&mut ChaCha8Rng::seed_from_u64(seed), dataset, constraints)
}

impl Evaluator for SurrogateEvaluator {
    fn evaluate(&self, tasks: &[EvalTask], parallel_limit: usize) -> Result<Vec<EvalResponse>, EvalError> {
        Ok(parallel_map(tasks, parallel_limit, |task| {
            match self.fitness(&task.genome) {
                Some(f) => EvalResponse::ok(&task.id, f),
                None => EvalResponse::failed(&task.id, Status::Error, "genome does not compile"),
            }
        }))
    }

    fn describe(&self) -> String {
        match self.landscape {
            Landscape::TargetDistance { .. } => "surrogate:target_distance".into(),
            Landscape::ParamBudget { .. } => "surrogate:param_budget".into(),
        }
    }
}
