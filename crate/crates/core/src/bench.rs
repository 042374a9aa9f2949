//! Matched-budget comparison of search strategies over many seeds.
//!
//! Three methods share one config: the full GA, the GA with crossover
//! disabled (mutation only), and pure random sampling. Every number the
//! harness reports is a function of the config alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{evolve, EngineError, EvolutionConfig};
use crate::evaluators::{EvalTask, Evaluator};
use crate::genome::random_genome;
use crate::stats::{mean_std, rank_sum_greater, RankSum};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// Number of seeds per method.
    pub seeds: usize,
    /// Seeds used are `first_seed..first_seed + seeds`.
    pub first_seed: u64,
    /// Samples for random search; defaults to `2·N·T`.
    pub random_budget: Option<usize>,
    #[serde(flatten)]
    pub search: EvolutionConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seeds: 20,
            first_seed: 0,
            random_budget: None,
            search: EvolutionConfig::default(),
        }
    }
}

impl BenchConfig {
    pub fn random_budget(&self) -> usize {
        self.random_budget
            .unwrap_or(2 * self.search.population * self.search.generations)
    }

    pub fn check(&self) -> Result<(), EngineError> {
        if self.seeds == 0 {
            return Err(EngineError::Config("seeds: at least one seed is required".into()));
        }
        if self.random_budget == Some(0) {
            return Err(EngineError::Config("random_budget: must be at least 1".into()));
        }
        self.search.check()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ga,
    MutationOnly,
    Random,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ga, Method::MutationOnly, Method::Random];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ga => "ga",
            Method::MutationOnly => "mutation_only",
            Method::Random => "random",
        }
    }
}

/// Best-so-far after each generation (or equivalent slice of the random
/// budget), with the cumulative evaluation count at that point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub generation: usize,
    pub evaluations: usize,
    pub best: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub best: f64,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub runs: Vec<SeedRun>,
    pub mean_best: f64,
    pub std_best: f64,
}

impl MethodResult {
    pub fn bests(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.best).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub u: f64,
    pub z: f64,
    /// One-sided p-value that the first method's best fitness is larger.
    pub p_value: f64,
}

impl From<RankSum> for Comparison {
    fn from(r: RankSum) -> Self {
        Self {
            u: r.u,
            z: r.z,
            p_value: r.p_greater,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub results: Vec<MethodResult>,
    pub ga_vs_random: Comparison,
    pub ga_vs_mutation_only: Comparison,
}

impl BenchReport {
    pub fn result(&self, m: Method) -> &MethodResult {
        self.results
            .iter()
            .find(|r| r.method == m)
            .expect("every method runs")
    }

    /// `method,seed,generation,evaluations,best` rows.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("method,seed,generation,evaluations,best\n");
        for r in &self.results {
            for run in &r.runs {
                for p in &run.curve {
                    out += &format!(
                        "{},{},{},{},{}\n",
                        r.method.name(),
                        run.seed,
                        p.generation,
                        p.evaluations,
                        p.best
                    );
                }
            }
        }
        out
    }

    /// `method,mean_best,std_best` rows.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("method,mean_best,std_best\n");
        for r in &self.results {
            out += &format!("{},{},{}\n", r.method.name(), r.mean_best, r.std_best);
        }
        out
    }
}

fn ga_run(cfg: &EvolutionConfig, seed: u64) -> Result<SeedRun, EngineError> {
    let cfg = EvolutionConfig { seed, ..cfg.clone() };
    let (best, report) = evolve(&cfg, None)?;
    let mut evaluations = 0;
    let curve = report
        .generations
        .iter()
        .map(|g| {
            evaluations += g.evaluations;
            CurvePoint {
                generation: g.generation,
                evaluations,
                best: g.best,
            }
        })
        .collect();
    Ok(SeedRun {
        seed,
        best: best.fitness.value().unwrap_or(0.0),
        curve,
    })
}

/// Samples `budget` random genomes and keeps the best. The curve reports
/// best-so-far after `T + 1` equal slices of the budget so it lines up with
/// GA generations.
pub fn random_search(
    cfg: &EvolutionConfig,
    evaluator: &dyn Evaluator,
    seed: u64,
    budget: usize,
) -> Result<SeedRun, EngineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let tasks = (0..budget)
        .map(|i| {
            let genome = random_genome(&mut rng, &cfg.dataset, &cfg.constraints)?;
            Ok(EvalTask {
                id: format!("r{seed}-{i}"),
                seed: seed ^ genome.digest().prefix_u64(),
                genome,
            })
        })
        .collect::<Result<Vec<_>, EngineError>>()?;
    let responses = evaluator
        .evaluate(&tasks, cfg.execution.parallel)
        .map_err(|source| EngineError::Evaluator {
            source,
            checkpoint: None,
        })?;
    let scores: Vec<f64> = responses
        .iter()
        .map(|r| r.fitness_value().unwrap_or(0.0))
        .collect();

    let slices = cfg.generations + 1;
    let mut curve = Vec::with_capacity(slices);
    let mut best = f64::NEG_INFINITY;
    let mut seen = 0;
    for g in 0..slices {
        let upto = (budget * (g + 1)).div_ceil(slices);
        for &s in &scores[seen..upto] {
            best = best.max(s);
        }
        seen = upto;
        curve.push(CurvePoint {
            generation: g,
            evaluations: upto,
            best,
        });
    }
    Ok(SeedRun { seed, best, curve })
}

fn summarize(method: Method, runs: Vec<SeedRun>) -> MethodResult {
    let bests: Vec<f64> = runs.iter().map(|r| r.best).collect();
    let (mean_best, std_best) = mean_std(&bests);
    MethodResult {
        method,
        runs,
        mean_best,
        std_best,
    }
}

/// Runs all three methods on every seed. `on_seed` is called after each
/// (method, seed) pair finishes.
pub fn compare<F: FnMut(Method, &SeedRun)>(
    cfg: &BenchConfig,
    mut on_seed: F,
) -> Result<BenchReport, EngineError> {
    cfg.check()?;
    let seeds: Vec<u64> = (0..cfg.seeds as u64).map(|i| cfg.first_seed + i).collect();
    let mut mutation_only = cfg.search.clone();
    mutation_only.operators.crossover_prob = 0.0;
    let evaluator = cfg.search.build_evaluator()?;

    let mut results = Vec::new();
    for method in Method::ALL {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in &seeds {
            let run = match method {
                Method::Ga => ga_run(&cfg.search, seed)?,
                Method::MutationOnly => ga_run(&mutation_only, seed)?,
                Method::Random => random_search(&cfg.search, evaluator.as_ref(), seed, cfg.random_budget())?,
            };
            on_seed(method, &run);
            runs.push(run);
        }
        results.push(summarize(method, runs));
    }
    let ga = results[0].bests();
    Ok(BenchReport {
        config: cfg.clone(),
        ga_vs_mutation_only: rank_sum_greater(&ga, &results[1].bests()).into(),
        ga_vs_random: rank_sum_greater(&ga, &results[2].bests()).into(),
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> BenchConfig {
        BenchConfig {
            seeds: 2,
            first_seed: 5,
            random_budget: None,
            search: EvolutionConfig {
                population: 4,
                generations: 3,
                ..EvolutionConfig::default()
            },
        }
    }

    #[test]
    fn zero_seeds_rejected() {
        let cfg = BenchConfig { seeds: 0, ..tiny() };
        assert!(compare(&cfg, |_, _| {})
            .unwrap_err()
            .to_string()
            .contains("seeds"));
    }

    #[test]
    fn random_curve_spends_whole_budget() {
        let cfg = tiny();
        let ev = cfg.search.build_evaluator().unwrap();
        let run = random_search(&cfg.search, ev.as_ref(), 1, 7).unwrap();
        assert_eq!(run.curve.len(), 4);
        assert_eq!(run.curve.last().unwrap().evaluations, 7);
        assert!(run.curve.windows(2).all(|w| w[1].best >= w[0].best));
        assert_eq!(run.best, run.curve.last().unwrap().best);
    }

    #[test]
    fn reproducible_csv() {
        let a = compare(&tiny(), |_, _| {}).unwrap();
        let b = compare(&tiny(), |_, _| {}).unwrap();
        assert_eq!(a.curves_csv(), b.curves_csv());
        assert_eq!(a.results.len(), 3);
        assert_eq!(a.result(Method::Random).runs.len(), 2);
        assert_eq!(tiny().random_budget(), 24);
    }

    #[test]
    fn flattened_config_parses() {
        let cfg: BenchConfig = serde_json::from_str(r#"{"seeds": 3, "population": 6}"#).unwrap();
        assert_eq!((cfg.seeds, cfg.search.population), (3, 6));
        assert_eq!(cfg.search.generations, 20);
    }
}
