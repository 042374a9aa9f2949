//! The generational loop: initialization, binary-tournament parent
//! selection, crossover and mutation, cached fitness evaluation behind a
//! generation barrier, and elitist environmental selection.
//!
//! Everything except fitness evaluation runs on one thread with a single
//! seeded ChaCha stream, so a run is fully determined by its seed, its
//! search settings and a deterministic evaluator, whatever the evaluation
//! parallelism.

mod checkpoint;
mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CheckpointError, RngState, CHECKPOINT_VERSION};
pub use config::{EvolutionConfig, ExecutionOptions};

use crate::evaluators::{EvalError, EvalTask, Evaluator};
use crate::genome::{random_genome, Genome, GenomeDigest, GenomeError};
use crate::operators::{crossover, mutate, OperatorConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fitness {
    Unevaluated,
    Evaluated(f64),
    /// The evaluator reported a failure; ranks as 0.
    Failed,
}

impl Fitness {
    /// Comparable value; `None` while unevaluated.
    pub fn value(&self) -> Option<f64> {
        match *self {
            Fitness::Unevaluated => None,
            Fitness::Evaluated(v) => Some(v),
            Fitness::Failed => Some(0.0),
        }
    }

    pub fn is_resolved(&self) -> bool {
        !matches!(self, Fitness::Unevaluated)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub genome: Genome,
    pub fitness: Fitness,
}

impl Individual {
    pub fn new(genome: Genome) -> Self {
        Self {
            genome,
            fitness: Fitness::Unevaluated,
        }
    }

    fn score(&self) -> f64 {
        self.fitness
            .value()
            .expect("selection requires evaluated individuals")
    }
}

/// Resolved fitness per genome digest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitnessCache {
    entries: BTreeMap<GenomeDigest, Fitness>,
}

impl FitnessCache {
    pub fn get(&self, digest: &GenomeDigest) -> Option<Fitness> {
        self.entries.get(digest).copied()
    }

    /// Stores a resolved fitness; unevaluated values are ignored.
    pub fn insert(&mut self, digest: GenomeDigest, fitness: Fitness) {
        if fitness.is_resolved() {
            self.entries.insert(digest, fitness);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&GenomeDigest, &Fitness)> {
        self.entries.iter()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    /// Distinct genomes sent to the evaluator.
    pub evaluated: usize,
    /// Individuals resolved from the cache.
    pub cache_hits: usize,
    pub failed: usize,
}

/// Resolves every unevaluated individual, evaluating each distinct digest
/// at most once. Returns only after every individual is resolved.
pub fn evaluate_population(
    population: &mut [Individual],
    cache: &mut FitnessCache,
    evaluator: &dyn Evaluator,
    parallel_limit: usize,
    task_prefix: &str,
    run_seed: u64,
) -> Result<EvalCounts, EvalError> {
    let mut counts = EvalCounts::default();
    let mut pending: Vec<(GenomeDigest, &Genome)> = Vec::new();
    let digests: Vec<Option<GenomeDigest>> = population
        .iter()
        .map(|ind| (!ind.fitness.is_resolved()).then(|| ind.genome.digest()))
        .collect();
    for (ind, digest) in population.iter().zip(&digests) {
        let Some(digest) = digest else { continue };
        if cache.get(digest).is_some() {
            counts.cache_hits += 1;
        } else if !pending.iter().any(|(d, _)| d == digest) {
            pending.push((*digest, &ind.genome));
        }
    }

    let tasks: Vec<EvalTask> = pending
        .iter()
        .enumerate()
        .map(|(i, (digest, genome))| EvalTask {
            id: format!("{task_prefix}-{i}-{}", &digest.to_hex()[..12]),
            genome: (*genome).clone(),
            seed: run_seed ^ digest.prefix_u64(),
        })
        .collect();
    if !tasks.is_empty() {
        let responses = evaluator.evaluate(&tasks, parallel_limit)?;
        for ((digest, _), resp) in pending.iter().zip(&responses) {
            let fitness = match resp.fitness_value() {
                Some(v) => Fitness::Evaluated(v),
                None => {
                    counts.failed += 1;
                    Fitness::Failed
                }
            };
            cache.insert(*digest, fitness);
        }
        counts.evaluated = tasks.len();
    }

    for (ind, digest) in population.iter_mut().zip(digests) {
        if let Some(digest) = digest {
            ind.fitness = cache.get(&digest).expect("every digest resolved");
        }
    }
    Ok(counts)
}

/// Index of the winner of a binary tournament: two distinct random
/// individuals, the fitter one wins, ties broken by a fair coin.
pub fn tournament_select<R: Rng + ?Sized>(pop: &[Individual], rng: &mut R) -> usize {
    assert!(pop.len() >= 2, "binary tournament needs at least two individuals");
    let a = rng.gen_range(0..pop.len());
    let mut b = rng.gen_range(0..pop.len() - 1);
    if b >= a {
        b += 1;
    }
    let (fa, fb) = (pop[a].score(), pop[b].score());
    if fa > fb {
        a
    } else if fb > fa {
        b
    } else if rng.gen_bool(0.5) {
        a
    } else {
        b
    }
}

/// Builds `Q_t`: pairs of tournament-selected parents recombined and
/// mutated until `|Q_t| = |P_t|`.
pub fn generate_offspring<R: Rng + ?Sized>(
    parents: &[Individual],
    rng: &mut R,
    cfg: &EvolutionConfig,
) -> Vec<Individual> {
    let n = parents.len();
    let ops: &OperatorConfig = &cfg.operators;
    let (d, c) = (&cfg.dataset, &cfg.constraints);
    let mut offspring = Vec::with_capacity(n);
    while offspring.len() < n {
        let p1 = &parents[tournament_select(parents, rng)].genome;
        let p2 = &parents[tournament_select(parents, rng)].genome;
        let (q1, q2) = crossover(p1, p2, rng, ops, d, c);
        let q1 = mutate(&q1, rng, ops, d, c);
        let q2 = mutate(&q2, rng, ops, d, c);
        offspring.push(Individual::new(q1));
        if offspring.len() < n {
            offspring.push(Individual::new(q2));
        }
    }
    offspring
}

/// `P_{t+1}`: one copy of the best of `P_t ∪ Q_t` (ties broken uniformly)
/// plus `N − 1` binary-tournament winners drawn with replacement.
pub fn environmental_select<R: Rng + ?Sized>(
    parents: &[Individual],
    offspring: &[Individual],
    rng: &mut R,
) -> Vec<Individual> {
    let n = parents.len();
    let union: Vec<Individual> = parents.iter().chain(offspring).cloned().collect();
    let top = union
        .iter()
        .map(Individual::score)
        .fold(f64::NEG_INFINITY, f64::max);
    let elites: Vec<usize> = (0..union.len()).filter(|&i| union[i].score() == top).collect();
    let elite = *elites.choose(rng).unwrap();
    let mut next = Vec::with_capacity(n);
    next.push(union[elite].clone());
    while next.len() < n {
        next.push(union[tournament_select(&union, rng)].clone());
    }
    next
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub best: f64,
    pub mean: f64,
    pub worst: f64,
    pub best_genome: Genome,
    pub evaluations: usize,
    pub cache_hits: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationTiming {
    pub generation: usize,
    pub wall_seconds: f64,
    pub evaluator_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub generations: Vec<GenerationRecord>,
    pub timings: Vec<GenerationTiming>,
    pub evaluator_seconds: f64,
    pub elapsed_seconds: f64,
    pub evaluator_workers: usize,
    /// Evaluator workers × elapsed days.
    pub gpu_days: f64,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone)]
pub struct EngineState {
    /// Completed generations.
    pub generation: usize,
    pub population: Vec<Individual>,
    pub rng: ChaCha8Rng,
    pub cache: FitnessCache,
    pub history: Vec<GenerationRecord>,
    pub timings: Vec<GenerationTiming>,
    pub best: Option<Individual>,
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Genome(#[from] GenomeError),
    #[error("{source}; resumable checkpoint at {}", checkpoint.as_ref().map_or("<none>".into(), |p| p.display().to_string()))]
    Evaluator {
        source: EvalError,
        checkpoint: Option<PathBuf>,
    },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

pub struct Engine<'e> {
    cfg: EvolutionConfig,
    evaluator: &'e dyn Evaluator,
    state: EngineState,
    checkpoint_dir: Option<PathBuf>,
}

impl<'e> Engine<'e> {
    /// Seeds the RNG and samples the initial population (not yet evaluated).
    pub fn new(cfg: EvolutionConfig, evaluator: &'e dyn Evaluator) -> Result<Self, EngineError> {
        cfg.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let population = (0..cfg.population)
            .map(|_| random_genome(&mut rng, &cfg.dataset, &cfg.constraints).map(Individual::new))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            cfg,
            evaluator,
            state: EngineState {
                generation: 0,
                population,
                rng,
                cache: FitnessCache::default(),
                history: Vec::new(),
                timings: Vec::new(),
                best: None,
            },
            checkpoint_dir: None,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint, evaluator: &'e dyn Evaluator) -> Result<Self, EngineError> {
        let (cfg, state) = ckpt.into_state()?;
        cfg.check()?;
        Ok(Self {
            cfg,
            evaluator,
            state,
            checkpoint_dir: None,
        })
    }

    pub fn with_checkpoints(mut self, dir: impl Into<PathBuf>) -> Self {
        self.checkpoint_dir = Some(dir.into());
        self
    }

    pub fn config(&self) -> &EvolutionConfig {
        &self.cfg
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn generation(&self) -> usize {
        self.state.generation
    }

    pub fn is_finished(&self) -> bool {
        self.state.generation >= self.cfg.generations && !self.state.history.is_empty()
    }

    pub fn best(&self) -> Option<&Individual> {
        self.state.best.as_ref()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.cfg, &self.state)
    }

    fn checkpoint_path(&self, generation: usize) -> Option<PathBuf> {
        self.checkpoint_dir
            .as_ref()
            .map(|d| d.join(format!("gen-{generation:04}.json")))
    }

    fn save(&self, snapshot: &Checkpoint) -> Result<Option<PathBuf>, EngineError> {
        let Some(path) = self.checkpoint_path(snapshot.generation) else {
            return Ok(None);
        };
        snapshot.save(&path)?;
        snapshot.save(&path.with_file_name("latest.json"))?;
        Ok(Some(path))
    }

    fn abort(&self, snapshot: &Checkpoint, source: EvalError) -> EngineError {
        match self.save(snapshot) {
            Ok(checkpoint) => EngineError::Evaluator { source, checkpoint },
            Err(e) => e,
        }
    }

    fn evaluate(
        &mut self,
        which: Which,
        snapshot: &Checkpoint,
        offspring: &mut [Individual],
    ) -> Result<(EvalCounts, f64), EngineError> {
        let start = Instant::now();
        let prefix = match which {
            Which::Parents => format!("g{}p", self.state.generation),
            Which::Offspring => format!("g{}q", self.state.generation),
        };
        let target: &mut [Individual] = match which {
            Which::Parents => &mut self.state.population,
            Which::Offspring => offspring,
        };
        let counts = evaluate_population(
            target,
            &mut self.state.cache,
            self.evaluator,
            self.cfg.execution.parallel,
            &prefix,
            self.cfg.seed,
        );
        match counts {
            Ok(c) => Ok((c, start.elapsed().as_secs_f64())),
            Err(e) => Err(self.abort(snapshot, e)),
        }
    }

    fn track_best(&mut self, candidates: &[Individual]) {
        for ind in candidates {
            let better = match &self.state.best {
                None => true,
                Some(b) => ind.score() > b.score(),
            };
            if better {
                self.state.best = Some(ind.clone());
            }
        }
    }

    fn record(&mut self, counts: EvalCounts, wall: f64, eval_secs: f64) {
        let pop = &self.state.population;
        let scores: Vec<f64> = pop.iter().map(Individual::score).collect();
        let best_idx = (0..scores.len()).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
        self.state.history.push(GenerationRecord {
            generation: self.state.generation,
            best: scores[best_idx],
            mean: scores.iter().sum::<f64>() / scores.len() as f64,
            worst: scores.iter().copied().fold(f64::INFINITY, f64::min),
            best_genome: pop[best_idx].genome.clone(),
            evaluations: counts.evaluated,
            cache_hits: counts.cache_hits,
            failures: counts.failed,
        });
        self.state.timings.push(GenerationTiming {
            generation: self.state.generation,
            wall_seconds: wall,
            evaluator_seconds: eval_secs,
        });
    }

    fn maybe_checkpoint(&self) -> Result<(), EngineError> {
        let g = self.state.generation;
        if g.is_multiple_of(self.cfg.execution.checkpoint_every) || g >= self.cfg.generations {
            self.save(&self.checkpoint())?;
        }
        Ok(())
    }

    /// Advances the run by one step and returns the record it produced:
    /// the first call evaluates `P_0` (generation 0), each later call runs
    /// one full generation. Returns `None` once `T` generations are done.
    pub fn step(&mut self) -> Result<Option<&GenerationRecord>, EngineError> {
        let start = Instant::now();
        if self.state.history.is_empty() {
            let snapshot = self.checkpoint();
            let (counts, secs) = self.evaluate(Which::Parents, &snapshot, &mut [])?;
            let pop = self.state.population.clone();
            self.track_best(&pop);
            self.record(counts, start.elapsed().as_secs_f64(), secs);
            self.maybe_checkpoint()?;
            return Ok(self.state.history.last());
        }
        if self.state.generation >= self.cfg.generations {
            return Ok(None);
        }

        let snapshot = self.checkpoint();
        let mut offspring = generate_offspring(&self.state.population, &mut self.state.rng, &self.cfg);
        let (counts, secs) = self.evaluate(Which::Offspring, &snapshot, &mut offspring)?;
        self.track_best(&offspring);
        self.state.population = environmental_select(&self.state.population, &offspring, &mut self.state.rng);
        self.state.generation += 1;
        self.record(counts, start.elapsed().as_secs_f64(), secs);
        self.maybe_checkpoint()?;
        Ok(self.state.history.last())
    }

    /// Runs to generation `T`, calling `on_generation` after each record.
    pub fn run_with<F: FnMut(&GenerationRecord, &GenerationTiming)>(
        &mut self,
        mut on_generation: F,
    ) -> Result<(Individual, RunReport), EngineError> {
        while let Some(rec) = self.step()? {
            let rec = rec.clone();
            on_generation(&rec, self.state.timings.last().unwrap());
        }
        Ok((
            self.state.best.clone().expect("evaluated population"),
            self.report(),
        ))
    }

    pub fn run(&mut self) -> Result<(Individual, RunReport), EngineError> {
        self.run_with(|_, _| {})
    }

    pub fn report(&self) -> RunReport {
        let evaluator_seconds = self.state.timings.iter().map(|t| t.evaluator_seconds).sum();
        let elapsed_seconds: f64 = self.state.timings.iter().map(|t| t.wall_seconds).sum();
        let workers = self.cfg.execution.parallel;
        RunReport {
            generations: self.state.history.clone(),
            timings: self.state.timings.clone(),
            evaluator_seconds,
            elapsed_seconds,
            evaluator_workers: workers,
            gpu_days: workers as f64 * elapsed_seconds / 86_400.0,
        }
    }
}

#[derive(Clone, Copy)]
enum Which {
    Parents,
    Offspring,
}

/// Runs a whole search and returns the best-ever individual and the report.
pub fn evolve(
    cfg: &EvolutionConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(Individual, RunReport), EngineError> {
    let evaluator = cfg.build_evaluator()?;
    let mut engine = Engine::new(cfg.clone(), evaluator.as_ref())?;
    if let Some(dir) = checkpoint_dir {
        engine = engine.with_checkpoints(dir);
    }
    engine.run()
}
