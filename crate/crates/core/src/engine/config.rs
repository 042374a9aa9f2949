use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EngineError;
use crate::evaluators::{
    Evaluator, EvaluatorBinding, ExternalEvaluator, SurrogateEvaluator, SurrogateKind, SurrogateSpec,
};
use crate::genome::{DatasetDescriptor, GenomeConstraints};
use crate::operators::OperatorConfig;

/// Knobs that change how a run executes but never what it computes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecutionOptions {
    /// Maximum concurrent evaluator calls.
    pub parallel: usize,
    /// Write a checkpoint every this many generations (and always at the end).
    pub checkpoint_every: usize,
}

impl Default for ExecutionOptions {
    fn default() -> Self {
        Self {
            parallel: 1,
            checkpoint_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolutionConfig {
    pub population: usize,
    pub generations: usize,
    pub seed: u64,
    pub dataset: DatasetDescriptor,
    pub operators: OperatorConfig,
    pub constraints: GenomeConstraints,
    pub evaluator: EvaluatorBinding,
    pub surrogate: SurrogateSpec,
    /// Training epochs requested from external evaluators.
    pub epochs: u32,
    /// Per-request timeout for external evaluators.
    pub timeout_secs: f64,
    pub execution: ExecutionOptions,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            population: 20,
            generations: 20,
            seed: 0,
            dataset: DatasetDescriptor::cifar10(),
            operators: OperatorConfig::default(),
            constraints: GenomeConstraints::default(),
            evaluator: EvaluatorBinding::Surrogate(SurrogateKind::TargetDistance),
            surrogate: SurrogateSpec::default(),
            epochs: 1,
            timeout_secs: 3600.0,
            execution: ExecutionOptions::default(),
        }
    }
}

impl EvolutionConfig {
    pub fn check(&self) -> Result<(), EngineError> {
        let bad = |field: &str, why: String| Err(EngineError::Config(format!("{field}: {why}")));
        if self.population < 2 || !self.population.is_multiple_of(2) {
            return bad(
                "population",
                format!("{} must be even and at least 2", self.population),
            );
        }
        if self.generations < 1 {
            return bad("generations", "must be at least 1".into());
        }
        if self.epochs < 1 {
            return bad("epochs", "must be at least 1".into());
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return bad("timeout_secs", format!("{} must be positive", self.timeout_secs));
        }
        if self.execution.parallel < 1 {
            return bad("execution.parallel", "must be at least 1".into());
        }
        if self.execution.checkpoint_every < 1 {
            return bad("execution.checkpoint_every", "must be at least 1".into());
        }
        if !(self.surrogate.target_log10.is_finite() && self.surrogate.target_log10 >= 0.0) {
            return bad("surrogate.target_log10", "must be a finite value ≥ 0".into());
        }
        self.dataset
            .check()
            .map_err(|e| EngineError::Config(format!("dataset: {e}")))?;
        self.operators
            .check()
            .map_err(|e| EngineError::Config(format!("operators: {e}")))?;
        self.constraints
            .check()
            .map_err(|e| EngineError::Config(format!("constraints: {e}")))?;
        Ok(())
    }

    /// The settings that determine results: everything except `execution`.
    pub fn search_settings(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().unwrap().remove("execution");
        v
    }

    /// SHA-256 over the canonical search settings.
    pub fn config_hash(&self) -> String {
        let text = serde_json::to_string(&self.search_settings()).unwrap();
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    /// Instantiates the configured fitness source.
    pub fn build_evaluator(&self) -> Result<Box<dyn Evaluator>, EngineError> {
        Ok(match &self.evaluator {
            EvaluatorBinding::Surrogate(kind) => Box::new(SurrogateEvaluator::new(
                *kind,
                &self.surrogate,
                &self.dataset,
                &self.constraints,
            )?),
            EvaluatorBinding::External(endpoint) => {
                let mut ev = ExternalEvaluator::new(endpoint.clone(), &self.dataset, &self.constraints);
                ev.epochs = self.epochs;
                ev.timeout = self.timeout();
                Box::new(ev)
            }
        })
    }

    /// Sets a field by dotted path (`operators.crossover_prob`) from its
    /// textual value. Values are read as JSON when they parse, otherwise as
    /// strings; `dataset` also accepts `cifar10`/`cifar100`/`custom:C,H,W,K`.
    pub fn set_path(&mut self, path: &str, value: &str) -> Result<(), EngineError> {
        let parsed: serde_json::Value = if path == "dataset" && !value.trim_start().starts_with('{') {
            let d: DatasetDescriptor = value
                .parse()
                .map_err(|e| EngineError::Config(format!("dataset: {e}")))?;
            serde_json::to_value(d).unwrap()
        } else {
            serde_json::from_str(value).unwrap_or_else(|_| serde_json::Value::String(value.to_string()))
        };
        let mut root = serde_json::to_value(&*self).unwrap();
        let mut slot = &mut root;
        for key in path.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|m| m.get_mut(key))
                .ok_or_else(|| EngineError::Config(format!("unknown config key `{path}`")))?;
        }
        *slot = parsed;
        *self = serde_json::from_value(root).map_err(|e| EngineError::Config(format!("{path}: {e}")))?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, EngineError> {
        serde_json::from_str(text).map_err(|e| EngineError::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_settings() {
        let cfg = EvolutionConfig::from_json("{}").unwrap();
        assert_eq!(cfg.population, 20);
        assert_eq!(cfg.generations, 20);
        assert_eq!(cfg.operators.crossover_prob, 0.9);
        assert_eq!(cfg.operators.mutation_prob, 0.2);
        assert_eq!(cfg.constraints.max_rbu, 6);
        assert_eq!(cfg.constraints.max_dbu, 6);
        cfg.check().unwrap();
    }

    #[test]
    fn odd_population_rejected_by_name() {
        let cfg = EvolutionConfig {
            population: 3,
            ..EvolutionConfig::default()
        };
        let err = cfg.check().unwrap_err().to_string();
        assert!(err.contains("population"), "{err}");
    }

    #[test]
    fn dotted_overrides() {
        let mut cfg = EvolutionConfig::default();
        cfg.set_path("operators.crossover_prob", "0.5").unwrap();
        cfg.set_path("evaluator", "surrogate:param_budget").unwrap();
        cfg.set_path("dataset", "custom:1,28,28,10").unwrap();
        cfg.set_path("execution.parallel", "4").unwrap();
        assert_eq!(cfg.operators.crossover_prob, 0.5);
        assert_eq!(cfg.evaluator.to_string(), "surrogate:param_budget");
        assert_eq!(cfg.dataset.height, 28);
        assert_eq!(cfg.execution.parallel, 4);
        assert!(cfg.set_path("operators.nope", "1").is_err());
        assert!(cfg.set_path("population", "many").is_err());
    }

    #[test]
    fn execution_options_do_not_change_hash() {
        let a = EvolutionConfig::default();
        let mut b = a.clone();
        b.execution.parallel = 8;
        assert_eq!(a.config_hash(), b.config_hash());
        b.seed = 1;
        assert_ne!(a.config_hash(), b.config_hash());
        assert!(a.search_settings().get("execution").is_none());
    }
}
