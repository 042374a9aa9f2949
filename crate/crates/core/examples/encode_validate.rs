//! Build a genome by hand, validate it, repair it, and round-trip it
//! through its JSON form.

use aecnn::{repair, validate, DatasetDescriptor, Genome, GenomeConstraints, GrowthRate, PoolKind, Unit};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let d = DatasetDescriptor::cifar10();
    let c = GenomeConstraints::default();

    // Channels deliberately broken: the DBU claims 100 inputs and a 2.4-layer growth.
    let g = Genome::new(vec![
        Unit::Rbu {
            amount: 2,
            in_channels: 3,
            out_channels: 64,
        },
        Unit::Pu { kind: PoolKind::Max },
        Unit::Dbu {
            amount: 3,
            in_channels: 100,
            out_channels: 160,
            k: GrowthRate::K40,
        },
    ]);
    println!("genome: {}", g.to_canonical_json());
    let report = validate(&g, &d, &c);
    println!("valid: {}", report.is_valid());
    for v in &report.violations {
        println!("  violation: {v}");
    }

    let fixed = repair(&g, &d, &c)?;
    println!("repaired: {}", fixed.to_canonical_json());
    println!("valid after repair: {}", validate(&fixed, &d, &c).is_valid());

    let back = Genome::from_json(&fixed.to_canonical_json())?;
    assert_eq!(back, fixed);
    println!("digest: {}", fixed.digest());
    Ok(())
}
