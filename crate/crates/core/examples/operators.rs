//! Crossover and mutation on random parents, showing what each operator did.

use aecnn::operators::{crossover, mutate_traced, OperatorConfig};
use aecnn::{random_genome, validate, DatasetDescriptor, Genome, GenomeConstraints};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn show(label: &str, g: &Genome) {
    let units: Vec<String> = g.units.iter().map(|u| u.to_string()).collect();
    println!("{label:>8}: {}", units.join(" → "));
}

fn main() {
    let d = DatasetDescriptor::cifar10();
    let c = GenomeConstraints::default();
    let cfg = OperatorConfig {
        crossover_prob: 1.0,
        mutation_prob: 1.0,
        ..OperatorConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let p1 = random_genome(&mut rng, &d, &c).unwrap();
    let p2 = random_genome(&mut rng, &d, &c).unwrap();
    show("parent 1", &p1);
    show("parent 2", &p2);

    let (q1, q2) = crossover(&p1, &p2, &mut rng, &cfg, &d, &c);
    show("child 1", &q1);
    show("child 2", &q2);

    for _ in 0..3 {
        let (m, applied) = mutate_traced(&q1, &mut rng, &cfg, &d, &c);
        match applied {
            Some(a) => println!("{:?} at position {}", a.kind, a.position),
            None => println!("no mutation applied"),
        }
        show("mutant", &m);
        assert!(validate(&m, &d, &c).is_valid());
    }
}
