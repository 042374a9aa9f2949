//! Evolutionary search over block-based CNN architectures.
//!
//! Architectures are encoded as variable-length sequences of residual block
//! units, dense block units and pooling units ([`genome`]). A generational
//! genetic algorithm with one-point crossover, add/remove/modify mutation,
//! binary tournament parent selection and elitist environmental selection
//! ([`operators`], [`engine`]) searches that space. Genomes compile to
//! concrete layer graphs with parameter and FLOP counts ([`compiler`]).
//! Fitness comes from deterministic surrogate landscapes or from an external
//! trainer speaking newline-delimited JSON ([`evaluators`]).

pub mod bench;
pub mod cli;
pub mod compiler;
pub mod engine;
pub mod evaluators;
pub mod genome;
pub mod operators;
pub mod stats;

pub use genome::{
    random_genome, repair, validate, DatasetDescriptor, Genome, GenomeConstraints, GenomeDigest, GenomeError,
    GrowthRate, PoolKind, Unit, UnitKind, ValidationReport, Violation,
};
