//! One-point crossover for unequal-length parents and add/remove/modify
//! mutation. Every operator output is repaired and stays valid.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::genome::{
    repair, DatasetDescriptor, Genome, GenomeConstraints, GenomeError, PoolKind, Unit, UnitKind, UnitWeights,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MutationKind {
    Add,
    Remove,
    Modify,
}

impl MutationKind {
    pub const ALL: [MutationKind; 3] = [MutationKind::Add, MutationKind::Remove, MutationKind::Modify];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutationWeights {
    pub add: f64,
    pub remove: f64,
    pub modify: f64,
}

impl MutationWeights {
    fn as_array(&self) -> [f64; 3] {
        [self.add, self.remove, self.modify]
    }
}

impl Default for MutationWeights {
    fn default() -> Self {
        Self {
            add: 1.0,
            remove: 1.0,
            modify: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OperatorConfig {
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub mutation_weights: MutationWeights,
    pub add_weights: UnitWeights,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        Self {
            crossover_prob: 0.9,
            mutation_prob: 0.2,
            mutation_weights: MutationWeights::default(),
            add_weights: UnitWeights::uniform(),
        }
    }
}

impl OperatorConfig {
    pub fn check(&self) -> Result<(), OperatorError> {
        for (name, p) in [
            ("crossover_prob", self.crossover_prob),
            ("mutation_prob", self.mutation_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(OperatorError::Config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        let w = self.mutation_weights.as_array();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().all(|x| *x == 0.0) {
            return Err(OperatorError::Config(
                "mutation_weights must be non-negative and not all zero".into(),
            ));
        }
        self.add_weights
            .check("add_weights")
            .map_err(|e| OperatorError::Config(e.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OperatorError {
    #[error("infeasible: {0}")]
    Infeasible(&'static str),
    #[error("position {position} outside [1, {max}]")]
    Position { position: usize, max: usize },
    #[error("invalid operator config: {0}")]
    Config(String),
    #[error(transparent)]
    Genome(#[from] GenomeError),
}

/// Cut-point redraws before crossover gives up and returns the parents.
const CROSSOVER_ATTEMPTS: usize = 16;
/// Mutation-kind redraws before mutation becomes a no-op.
const MUTATION_ATTEMPTS: usize = 8;

/// Splices `head(p1) ‖ tail(p2)` and `head(p2) ‖ tail(p1)`, where each
/// parent's head is its first `cut` units. No repair is applied.
pub fn one_point(p1: &Genome, p2: &Genome, cut1: usize, cut2: usize) -> (Genome, Genome) {
    let (h1, t1) = p1.units.split_at(cut1);
    let (h2, t2) = p2.units.split_at(cut2);
    let q1 = h1.iter().chain(t2).cloned().collect();
    let q2 = h2.iter().chain(t1).cloned().collect();
    (Genome::new(q1), Genome::new(q2))
}

/// Drops the last unit of any kind over its cap until all caps hold.
pub fn enforce_caps(g: &mut Genome, d: &DatasetDescriptor, c: &GenomeConstraints) {
    for kind in UnitKind::ALL {
        let cap = c.cap(kind, d);
        while g.count(kind) > cap {
            let last = g.units.iter().rposition(|u| u.kind() == kind).unwrap();
            g.units.remove(last);
        }
    }
}

fn finish_child(mut g: Genome, d: &DatasetDescriptor, c: &GenomeConstraints) -> Option<Genome> {
    enforce_caps(&mut g, d, c);
    repair(&g, d, c).ok()
}

/// One-point crossover applied with probability `crossover_prob`.
///
/// Each parent gets an independent interior cut. A child left without any
/// RBU or DBU triggers a redraw of both cuts; after a bounded number of
/// redraws, or when a parent has length 1, the parents are returned as is.
pub fn crossover<R: Rng + ?Sized>(
    p1: &Genome,
    p2: &Genome,
    rng: &mut R,
    cfg: &OperatorConfig,
    d: &DatasetDescriptor,
    c: &GenomeConstraints,
) -> (Genome, Genome) {
    let r: f64 = rng.gen();
    if r >= cfg.crossover_prob || p1.len() < 2 || p2.len() < 2 {
        return (p1.clone(), p2.clone());
    }
    for _ in 0..CROSSOVER_ATTEMPTS {
        let cut1 = rng.gen_range(1..p1.len());
        let cut2 = rng.gen_range(1..p2.len());
        let (q1, q2) = one_point(p1, p2, cut1, cut2);
        if let (Some(q1), Some(q2)) = (finish_child(q1, d, c), finish_child(q2, d, c)) {
            return (q1, q2);
        }
    }
    (p1.clone(), p2.clone())
}

/// What a successful mutation did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AppliedMutation {
    pub kind: MutationKind,
    pub position: usize,
}

/// Mutation applied with probability `mutation_prob`; returns the possibly
/// mutated genome and what was applied, if anything.
///
/// The mutation kind is drawn first, then a position suited to it
/// (`[1, len+1]` for adding, `[1, len]` otherwise). Infeasible draws are
/// retried a bounded number of times before falling back to no change.
pub fn mutate_traced<R: Rng + ?Sized>(
    q: &Genome,
    rng: &mut R,
    cfg: &OperatorConfig,
    d: &DatasetDescriptor,
    c: &GenomeConstraints,
) -> (Genome, Option<AppliedMutation>) {
    let r: f64 = rng.gen();
    if r >= cfg.mutation_prob {
        return (q.clone(), None);
    }
    let picker = WeightedIndex::new(cfg.mutation_weights.as_array())
        .expect("mutation weights checked by OperatorConfig::check");
    for _ in 0..MUTATION_ATTEMPTS {
        let kind = MutationKind::ALL[picker.sample(rng)];
        let (position, result) = match kind {
            MutationKind::Add => {
                let pos = rng.gen_range(1..=q.len() + 1);
                (pos, add_unit(q, pos, rng, &cfg.add_weights, d, c))
            }
            MutationKind::Remove => {
                let pos = rng.gen_range(1..=q.len());
                (pos, remove_unit(q, pos, d, c))
            }
            MutationKind::Modify => {
                let pos = rng.gen_range(1..=q.len());
                (pos, modify_unit(q, pos, rng, d, c))
            }
        };
        if let Ok(g) = result {
            return (g, Some(AppliedMutation { kind, position }));
        }
    }
    (q.clone(), None)
}

pub fn mutate<R: Rng + ?Sized>(
    q: &Genome,
    rng: &mut R,
    cfg: &OperatorConfig,
    d: &DatasetDescriptor,
    c: &GenomeConstraints,
) -> Genome {
    mutate_traced(q, rng, cfg, d, c).0
}

/// Inserts a freshly sampled unit so that it ends up at 1-based `pos`.
/// Kinds already at their cap are excluded from the draw.
pub fn add_unit<R: Rng + ?Sized>(
    q: &Genome,
    pos: usize,
    rng: &mut R,
    weights: &UnitWeights,
    d: &DatasetDescriptor,
    c: &GenomeConstraints,
) -> Result<Genome, OperatorError> {
    if pos < 1 || pos > q.len() + 1 {
        return Err(OperatorError::Position {
            position: pos,
            max: q.len() + 1,
        });
    }
    let open: Vec<UnitKind> = UnitKind::ALL
        .into_iter()
        .filter(|&k| weights.get(k) > 0.0 && q.count(k) < c.cap(k, d))
        .collect();
    if open.is_empty() {
        return Err(OperatorError::Infeasible("every unit kind is at its cap"));
    }
    let picker =
        WeightedIndex::new(open.iter().map(|&k| weights.get(k))).expect("open kinds have positive weight");
    let kind = open[picker.sample(rng)];
    let mut g = q.clone();
    g.units.insert(pos - 1, c.sample_unit(kind, rng));
    Ok(repair(&g, d, c)?)
}

/// Removes the unit at 1-based `pos`, unless it is the last RBU/DBU.
pub fn remove_unit(
    q: &Genome,
    pos: usize,
    d: &DatasetDescriptor,
    c: &GenomeConstraints,
) -> Result<Genome, OperatorError> {
    if pos < 1 || pos > q.len() {
        return Err(OperatorError::Position {
            position: pos,
            max: q.len(),
        });
    }
    if q.units[pos - 1].is_compute() && q.compute_units() == 1 {
        return Err(OperatorError::Infeasible("cannot remove the only RBU/DBU"));
    }
    let mut g = q.clone();
    g.units.remove(pos - 1);
    Ok(repair(&g, d, c)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Amount,
    Out,
    Growth,
    Kind,
}

/// Resamples one encodable field of the unit at 1-based `pos`, uniformly
/// among the values that differ from the current one. `in` is never touched
/// directly; repair re-chains it.
pub fn modify_unit<R: Rng + ?Sized>(
    q: &Genome,
    pos: usize,
    rng: &mut R,
    d: &DatasetDescriptor,
    c: &GenomeConstraints,
) -> Result<Genome, OperatorError> {
    if pos < 1 || pos > q.len() {
        return Err(OperatorError::Position {
            position: pos,
            max: q.len(),
        });
    }
    let unit = q.units[pos - 1].clone();
    let replacement = match unit {
        Unit::Rbu {
            amount,
            in_channels,
            out_channels,
        } => {
            let amounts: Vec<u32> = (1..=c.rbu_max_amount).filter(|&a| a != amount).collect();
            let outs: Vec<u32> = c
                .rbu_channels
                .iter()
                .copied()
                .filter(|&o| o != out_channels)
                .collect();
            let fields = open_fields(&[(Field::Amount, amounts.len()), (Field::Out, outs.len())])?;
            match *fields.choose(rng).unwrap() {
                Field::Amount => Unit::Rbu {
                    amount: *amounts.choose(rng).unwrap(),
                    in_channels,
                    out_channels,
                },
                _ => Unit::Rbu {
                    amount,
                    in_channels,
                    out_channels: *outs.choose(rng).unwrap(),
                },
            }
        }
        Unit::Dbu {
            amount,
            in_channels,
            out_channels,
            k,
        } => {
            let cap = c.dbu_cap(k).unwrap_or(amount.max(1));
            let amounts: Vec<u32> = (1..=cap).filter(|&a| a != amount).collect();
            let outs: Vec<u32> = (1..=cap)
                .map(|a| in_channels + a * k.value())
                .filter(|&o| o != out_channels)
                .collect();
            let rates: Vec<_> = c.growth_options.iter().filter(|g| g.k != k).copied().collect();
            let fields = open_fields(&[
                (Field::Amount, amounts.len()),
                (Field::Out, outs.len()),
                (Field::Growth, rates.len()),
            ])?;
            match *fields.choose(rng).unwrap() {
                Field::Amount => {
                    let a = *amounts.choose(rng).unwrap();
                    Unit::Dbu {
                        amount: a,
                        in_channels,
                        out_channels: in_channels + a * k.value(),
                        k,
                    }
                }
                Field::Out => {
                    let o = *outs.choose(rng).unwrap();
                    Unit::Dbu {
                        amount: (o - in_channels) / k.value(),
                        in_channels,
                        out_channels: o,
                        k,
                    }
                }
                _ => {
                    let opt = *rates.choose(rng).unwrap();
                    let a = amount.clamp(1, opt.max_amount);
                    Unit::Dbu {
                        amount: a,
                        in_channels,
                        out_channels: in_channels + a * opt.k.value(),
                        k: opt.k,
                    }
                }
            }
        }
        Unit::Pu { kind } => {
            open_fields(&[(Field::Kind, 1)])?;
            Unit::Pu {
                kind: match kind {
                    PoolKind::Max => PoolKind::Mean,
                    PoolKind::Mean => PoolKind::Max,
                },
            }
        }
    };
    let mut g = q.clone();
    g.units[pos - 1] = replacement;
    Ok(repair(&g, d, c)?)
}

fn open_fields(candidates: &[(Field, usize)]) -> Result<Vec<Field>, OperatorError> {
    let open: Vec<Field> = candidates
        .iter()
        .filter(|(_, n)| *n > 0)
        .map(|(f, _)| *f)
        .collect();
    if open.is_empty() {
        Err(OperatorError::Infeasible(
            "unit has no field with an alternative value",
        ))
    } else {
        Ok(open)
    }
}
