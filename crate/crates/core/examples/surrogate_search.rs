//! A full search against the target-distance surrogate, printing the
//! per-generation statistics and the best genome found.

use aecnn::engine::{Engine, EvolutionConfig};
use aecnn::evaluators::SurrogateEvaluator;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = EvolutionConfig {
        seed: 3,
        ..EvolutionConfig::default()
    };
    let evaluator = SurrogateEvaluator::new(
        "target_distance".parse()?,
        &cfg.surrogate,
        &cfg.dataset,
        &cfg.constraints,
    )?;
    let target = evaluator.target().unwrap().clone();

    let mut engine = Engine::new(cfg, &evaluator)?;
    let (best, report) = engine.run_with(|rec, _| {
        println!(
            "gen {:>2}  best {:.4}  mean {:.4}  new evals {:>2}  cache hits {:>2}",
            rec.generation, rec.best, rec.mean, rec.evaluations, rec.cache_hits
        );
    })?;
    println!("target ({} units): {}", target.len(), target.to_canonical_json());
    println!(
        "best   ({} units): {}",
        best.genome.len(),
        best.genome.to_canonical_json()
    );
    println!(
        "best fitness {:?}, {:.1} ms",
        best.fitness,
        report.elapsed_seconds * 1e3
    );
    Ok(())
}
