//! Stop a search after three generations, reload the checkpoint from disk
//! and finish; the result matches an uninterrupted run.

use aecnn::engine::{Checkpoint, Engine, EvolutionConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("aecnn-resume-{}", std::process::id()));
    let cfg = EvolutionConfig {
        population: 10,
        generations: 10,
        seed: 21,
        ..EvolutionConfig::default()
    };
    let evaluator = cfg.build_evaluator()?;

    let (reference, _) = Engine::new(cfg.clone(), evaluator.as_ref())?.run()?;

    let mut first = Engine::new(cfg, evaluator.as_ref())?.with_checkpoints(&dir);
    while first.generation() < 3 || first.state().history.is_empty() {
        first.step()?;
    }
    let path = dir.join("gen-0003.json");
    println!(
        "stopped at generation {}, checkpoint {}",
        first.generation(),
        path.display()
    );
    drop(first);

    let ckpt = Checkpoint::load(&path)?;
    println!("checkpoint holds {} cached fitness values", ckpt.cache.len());
    let mut resumed = Engine::from_checkpoint(ckpt, evaluator.as_ref())?;
    let (best, _) = resumed.run()?;
    println!("resumed best {:?}", best.fitness);
    println!("uninterrupted {:?}", reference.fitness);
    assert_eq!(best, reference);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
