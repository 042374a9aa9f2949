//! Evolution with fitness coming from an external trainer over TCP.
//!
//! A mock trainer (parameter-budget fitness, replies shuffled, large
//! genomes reported out of memory) is served on a local port; the engine
//! talks to it exactly as it would to a real GPU worker.

use std::io::BufReader;
use std::net::TcpListener;

use aecnn::engine::{Engine, EvolutionConfig, ExecutionOptions};
use aecnn::evaluators::mock::{MockBehavior, MockFitness};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let behavior = MockBehavior {
        fitness: MockFitness::ParamBudget(6.0),
        shuffle_window: Some(4),
        oom_above_units: Some(10),
        ..MockBehavior::default()
    };
    std::thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let b = behavior.clone();
            std::thread::spawn(move || {
                let reader = BufReader::new(stream.try_clone().unwrap());
                b.serve(reader, &stream)
            });
        }
    });

    let cfg = EvolutionConfig {
        population: 8,
        generations: 5,
        evaluator: format!("tcp:{addr}").parse()?,
        timeout_secs: 10.0,
        execution: ExecutionOptions {
            parallel: 4,
            checkpoint_every: 1,
        },
        ..EvolutionConfig::default()
    };
    let evaluator = cfg.build_evaluator()?;
    println!("evaluator: {}", evaluator.describe());
    let mut engine = Engine::new(cfg, evaluator.as_ref())?;
    let (best, _) = engine.run_with(|rec, t| {
        println!(
            "gen {}  best {:.4}  failures {}  evaluator {:.3} s",
            rec.generation, rec.best, rec.failures, t.evaluator_seconds
        );
    })?;
    println!("best {:?}: {}", best.fitness, best.genome.to_canonical_json());
    Ok(())
}
