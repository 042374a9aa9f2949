//! Full GA vs mutation-only GA vs random search at a matched budget,
//! summarised with mean ± std and one-sided rank-sum p-values.
//!
//! `cargo run --release --example crossover_ablation -- 20` for 20 seeds.

use aecnn::bench::{compare, BenchConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seeds = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(8);
    let cfg = BenchConfig {
        seeds,
        ..BenchConfig::default()
    };
    let report = compare(&cfg, |_, _| {})?;
    print!("{}", report.summary_csv());
    println!(
        "GA > random         p = {:.3e}\nGA > mutation only  p = {:.3e}",
        report.ga_vs_random.p_value, report.ga_vs_mutation_only.p_value
    );
    Ok(())
}
