//! Decode a genome into its layer graph, count parameters and FLOPs, and
//! export it as architecture JSON and Graphviz DOT.
//!
//! `cargo run --example compile_export -- dot | dot -Tsvg > net.svg`

use aecnn::compiler::{count_flops, count_params, decode, export, ExportFormat};
use aecnn::{DatasetDescriptor, Genome, GenomeConstraints, GrowthRate, PoolKind, Unit};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let d = DatasetDescriptor::cifar10();
    let g = Genome::new(vec![
        Unit::Rbu {
            amount: 1,
            in_channels: 3,
            out_channels: 64,
        },
        Unit::Pu { kind: PoolKind::Mean },
        Unit::Dbu {
            amount: 2,
            in_channels: 64,
            out_channels: 88,
            k: GrowthRate::K12,
        },
    ]);
    let graph = decode(&g, &d, &GenomeConstraints::default())?;

    match std::env::args().nth(1).as_deref() {
        Some("dot") => print!("{}", export(&graph, ExportFormat::DotGraph)),
        Some("json") => println!("{}", export(&graph, ExportFormat::ArchitectureJson)),
        _ => {
            println!("nodes       {}", graph.nodes.len());
            println!("conv layers {}", graph.conv_layers());
            println!("depth       {}", graph.weighted_depth());
            println!("output      {:?}", graph.output_shape());
            println!("params      {}", count_params(&graph));
            println!("flops       {}", count_flops(&graph));
            for n in &graph.nodes {
                println!(
                    "  {:>3} {:<16} {:?} <- {:?}",
                    n.id,
                    n.layer.name(),
                    n.shape,
                    n.inputs
                );
            }
        }
    }
    Ok(())
}
