//! Independent oracles shared by the integration and acceptance tests.
//!
//! Nothing here calls into the compiler or the surrogate distance; the
//! point is to recompute their answers from first principles.

#![allow(dead_code)]

use aecnn::{DatasetDescriptor, Genome, GenomeConstraints, PoolKind, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_genomes(n: usize, seed: u64) -> Vec<Genome> {
    let d = DatasetDescriptor::cifar10();
    let c = GenomeConstraints::default();
    let mut r = rng(seed);
    (0..n)
        .map(|_| aecnn::random_genome(&mut r, &d, &c).unwrap())
        .collect()
}

/// Parameter tally straight from the genome, block by block.
pub fn oracle_params(g: &Genome, d: &DatasetDescriptor) -> u64 {
    let mut total = 0u64;
    let mut ch = d.channels as u64;
    for u in &g.units {
        match *u {
            Unit::Rbu {
                amount, out_channels, ..
            } => {
                let out = out_channels as u64;
                let w = std::cmp::max(out / 4, 1);
                for _ in 0..amount {
                    total += ch * w; // 1×1 reduce
                    total += w * w * 9; // 3×3
                    total += w * out; // 1×1 expand
                    if ch != out {
                        total += ch * out; // projection shortcut
                    }
                    ch = out;
                }
            }
            Unit::Dbu { amount, k, .. } => {
                let k = k.value() as u64;
                for _ in 0..amount {
                    total += ch * k * 9;
                    ch += k;
                }
            }
            Unit::Pu { .. } => {}
        }
    }
    let classes = d.num_classes as u64;
    total + ch * classes + classes
}

/// Minimum edit cost over every monotone alignment of `a` against `b`.
/// Each alignment pairs some positions (cost 0 if equal, else 1 for a
/// substitution); every unpaired unit costs one insertion or deletion.
pub fn brute_edit_distance(a: &[Unit], b: &[Unit]) -> usize {
    fn go(a: &[Unit], b: &[Unit]) -> usize {
        let (Some((ha, ta)), true) = (a.split_first(), !b.is_empty()) else {
            return a.len() + b.len();
        };
        // Delete the head of `a` entirely.
        let mut best = 1 + go(ta, b);
        // Or pair it with some b[k], inserting b[..k] before it.
        for k in 0..b.len() {
            let cost = k + usize::from(*ha != b[k]) + go(ta, &b[k + 1..]);
            best = best.min(cost);
        }
        best
    }
    go(a, b)
}

/// A few fixed units so random short sequences share elements.
pub fn unit_alphabet() -> Vec<Unit> {
    vec![
        Unit::Rbu {
            amount: 1,
            in_channels: 3,
            out_channels: 64,
        },
        Unit::Rbu {
            amount: 2,
            in_channels: 64,
            out_channels: 128,
        },
        Unit::Dbu {
            amount: 2,
            in_channels: 64,
            out_channels: 88,
            k: aecnn::GrowthRate::K12,
        },
        Unit::Pu { kind: PoolKind::Max },
        Unit::Pu { kind: PoolKind::Mean },
    ]
}

pub fn short_sequence<R: Rng>(r: &mut R, alphabet: &[Unit]) -> Vec<Unit> {
    let len = r.gen_range(0..=4);
    (0..len)
        .map(|_| alphabet[r.gen_range(0..alphabet.len())].clone())
        .collect()
}
