//! Variable-length genome encoding of block-based CNN architectures.
//!
//! A [`Genome`] is an ordered list of [`Unit`]s. Residual units (RBU) and
//! dense units (DBU) carry channel counts, pooling units (PU) carry only
//! their pooling kind. Every `in`/`out` field is a feature-map (channel)
//! count; spatial size only changes at pooling units.
//!
//! Positions in reports and errors are 1-based.

use std::fmt;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Input shape and label count of the classification task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub name: String,
    pub height: u32,
    pub width: u32,
    pub channels: u32,
    pub num_classes: u32,
}

impl DatasetDescriptor {
    pub fn cifar10() -> Self {
        Self {
            name: "cifar10".into(),
            height: 32,
            width: 32,
            channels: 3,
            num_classes: 10,
        }
    }

    pub fn cifar100() -> Self {
        Self {
            name: "cifar100".into(),
            num_classes: 100,
            ..Self::cifar10()
        }
    }

    pub fn custom(channels: u32, height: u32, width: u32, num_classes: u32) -> Self {
        Self {
            name: format!("custom:{channels},{height},{width},{num_classes}"),
            height,
            width,
            channels,
            num_classes,
        }
    }

    pub fn check(&self) -> Result<(), GenomeError> {
        let bad = |field: &'static str, value: u32| GenomeError::Dataset { field, value };
        if self.height < 1 {
            return Err(bad("height", self.height));
        }
        if self.width < 1 {
            return Err(bad("width", self.width));
        }
        if self.channels < 1 {
            return Err(bad("channels", self.channels));
        }
        if self.num_classes < 2 {
            return Err(bad("num_classes", self.num_classes));
        }
        Ok(())
    }

    /// Largest number of stride-2 poolings that keeps both spatial dims ≥ 1.
    pub fn max_pooling_units(&self) -> usize {
        let side = self.height.min(self.width).max(1);
        (u32::BITS - 1 - side.leading_zeros()) as usize
    }
}

impl std::str::FromStr for DatasetDescriptor {
    type Err = GenomeError;

    /// Parses `cifar10`, `cifar100` or `custom:C,H,W,K`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parsed = match s {
            "cifar10" => Self::cifar10(),
            "cifar100" => Self::cifar100(),
            other => {
                let dims = other
                    .strip_prefix("custom:")
                    .ok_or_else(|| GenomeError::DatasetSpec(s.to_string()))?;
                let nums: Vec<u32> = dims
                    .split(',')
                    .map(|p| p.trim().parse::<u32>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| GenomeError::DatasetSpec(s.to_string()))?;
                match nums[..] {
                    [c, h, w, k] => Self::custom(c, h, w, k),
                    _ => return Err(GenomeError::DatasetSpec(s.to_string())),
                }
            }
        };
        parsed.check()?;
        Ok(parsed)
    }
}

/// DenseNet growth rate: channels added by each dense conv layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GrowthRate {
    K12,
    K20,
    K40,
}

impl GrowthRate {
    pub const ALL: [GrowthRate; 3] = [GrowthRate::K12, GrowthRate::K20, GrowthRate::K40];

    pub fn value(self) -> u32 {
        match self {
            GrowthRate::K12 => 12,
            GrowthRate::K20 => 20,
            GrowthRate::K40 => 40,
        }
    }

    pub fn from_value(k: u32) -> Option<Self> {
        match k {
            12 => Some(GrowthRate::K12),
            20 => Some(GrowthRate::K20),
            40 => Some(GrowthRate::K40),
            _ => None,
        }
    }
}

impl Serialize for GrowthRate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u32(self.value())
    }
}

impl<'de> Deserialize<'de> for GrowthRate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let k = u32::deserialize(d)?;
        GrowthRate::from_value(k)
            .ok_or_else(|| serde::de::Error::custom(format!("growth rate {k} not in {{12, 20, 40}}")))
    }
}

impl fmt::Display for GrowthRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Max,
    Mean,
}

impl fmt::Display for PoolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolKind::Max => "max",
            PoolKind::Mean => "mean",
        })
    }
}

/// One encoded building block.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Unit {
    /// `amount` chained bottleneck residual blocks.
    Rbu {
        amount: u32,
        #[serde(rename = "in")]
        in_channels: u32,
        #[serde(rename = "out")]
        out_channels: u32,
    },
    /// `amount` densely connected 3×3 conv layers, each adding `k` channels.
    Dbu {
        amount: u32,
        #[serde(rename = "in")]
        in_channels: u32,
        #[serde(rename = "out")]
        out_channels: u32,
        k: GrowthRate,
    },
    /// A single 2×2 stride-2 pooling layer.
    Pu { kind: PoolKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Rbu,
    Dbu,
    Pu,
}

impl UnitKind {
    pub const ALL: [UnitKind; 3] = [UnitKind::Rbu, UnitKind::Dbu, UnitKind::Pu];
}

impl fmt::Display for UnitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UnitKind::Rbu => "RBU",
            UnitKind::Dbu => "DBU",
            UnitKind::Pu => "PU",
        })
    }
}

impl Unit {
    pub fn kind(&self) -> UnitKind {
        match self {
            Unit::Rbu { .. } => UnitKind::Rbu,
            Unit::Dbu { .. } => UnitKind::Dbu,
            Unit::Pu { .. } => UnitKind::Pu,
        }
    }

    /// RBU and DBU hold convolutions; PU does not.
    pub fn is_compute(&self) -> bool {
        !matches!(self, Unit::Pu { .. })
    }

    pub fn in_channels(&self) -> Option<u32> {
        match *self {
            Unit::Rbu { in_channels, .. } | Unit::Dbu { in_channels, .. } => Some(in_channels),
            Unit::Pu { .. } => None,
        }
    }

    pub fn out_channels(&self) -> Option<u32> {
        match *self {
            Unit::Rbu { out_channels, .. } | Unit::Dbu { out_channels, .. } => Some(out_channels),
            Unit::Pu { .. } => None,
        }
    }

    fn set_in_channels(&mut self, value: u32) {
        match self {
            Unit::Rbu { in_channels, .. } | Unit::Dbu { in_channels, .. } => *in_channels = value,
            Unit::Pu { .. } => {}
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Unit::Rbu {
                amount,
                in_channels,
                out_channels,
            } => write!(f, "RBU(amount={amount}, in={in_channels}, out={out_channels})"),
            Unit::Dbu {
                amount,
                in_channels,
                out_channels,
                k,
            } => write!(
                f,
                "DBU(amount={amount}, in={in_channels}, out={out_channels}, k={k})"
            ),
            Unit::Pu { kind } => write!(f, "PU({kind})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Genome {
    pub units: Vec<Unit>,
}

impl Genome {
    pub fn new(units: Vec<Unit>) -> Self {
        Self { units }
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn count(&self, kind: UnitKind) -> usize {
        self.units.iter().filter(|u| u.kind() == kind).count()
    }

    pub fn compute_units(&self) -> usize {
        self.units.iter().filter(|u| u.is_compute()).count()
    }

    /// Channel count leaving the last compute unit.
    pub fn final_channels(&self, d: &DatasetDescriptor) -> u32 {
        self.units
            .iter()
            .rev()
            .find_map(Unit::out_channels)
            .unwrap_or(d.channels)
    }

    /// Canonical compact JSON: fixed key order, no whitespace.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("genome serialization is infallible")
    }

    /// Parses a genome document, rejecting field-domain violations.
    pub fn from_json(text: &str) -> Result<Self, GenomeError> {
        let genome: Genome = serde_json::from_str(text).map_err(|e| GenomeError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        genome.check_domains()?;
        Ok(genome)
    }

    /// Per-unit field domains: counts and channels ≥ 1. The growth-rate
    /// alphabet is enforced by [`GrowthRate`] itself.
    pub fn check_domains(&self) -> Result<(), GenomeError> {
        for (i, unit) in self.units.iter().enumerate() {
            let fields: &[(&'static str, u32)] = match *unit {
                Unit::Rbu {
                    amount,
                    in_channels,
                    out_channels,
                }
                | Unit::Dbu {
                    amount,
                    in_channels,
                    out_channels,
                    ..
                } => &[("amount", amount), ("in", in_channels), ("out", out_channels)],
                Unit::Pu { .. } => &[],
            };
            if let Some(&(field, value)) = fields.iter().find(|(_, v)| *v == 0) {
                return Err(GenomeError::Domain {
                    position: i + 1,
                    field,
                    message: format!("{value} must be at least 1"),
                });
            }
        }
        Ok(())
    }

    pub fn digest(&self) -> GenomeDigest {
        genome_digest(self)
    }
}

impl fmt::Display for Genome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, u) in self.units.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{u}")?;
        }
        f.write_str("]")
    }
}

/// SHA-256 of a genome's canonical serialization.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GenomeDigest(pub [u8; 32]);

impl GenomeDigest {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Self(out))
    }

    /// First eight bytes as an integer, handy for seeding per-genome work.
    pub fn prefix_u64(&self) -> u64 {
        u64::from_be_bytes(self.0[..8].try_into().unwrap())
    }
}

impl fmt::Debug for GenomeDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GenomeDigest({})", self.to_hex())
    }
}

impl fmt::Display for GenomeDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for GenomeDigest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for GenomeDigest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        GenomeDigest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

pub fn genome_digest(g: &Genome) -> GenomeDigest {
    let hash = Sha256::digest(g.to_canonical_json().as_bytes());
    GenomeDigest(hash.into())
}

/// Growth rate together with its largest allowed layer count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrowthOption {
    pub k: GrowthRate,
    pub max_amount: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitWeights {
    pub rbu: f64,
    pub dbu: f64,
    pub pu: f64,
}

impl UnitWeights {
    pub fn uniform() -> Self {
        Self {
            rbu: 1.0,
            dbu: 1.0,
            pu: 1.0,
        }
    }

    pub fn get(&self, kind: UnitKind) -> f64 {
        match kind {
            UnitKind::Rbu => self.rbu,
            UnitKind::Dbu => self.dbu,
            UnitKind::Pu => self.pu,
        }
    }

    pub(crate) fn check(&self, field: &'static str) -> Result<(), GenomeError> {
        let all = [self.rbu, self.dbu, self.pu];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) || all.iter().all(|w| *w == 0.0) {
            return Err(GenomeError::Constraints(format!(
                "{field} must be non-negative and not all zero"
            )));
        }
        Ok(())
    }
}

/// Inclusive range of initial genome lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthRange {
    pub min: usize,
    pub max: usize,
}

/// Search-space bounds shared by initialization, validation and the operators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenomeConstraints {
    /// Allowed `out` channel counts of an RBU.
    pub rbu_channels: Vec<u32>,
    pub rbu_max_amount: u32,
    pub growth_options: Vec<GrowthOption>,
    pub max_rbu: usize,
    pub max_dbu: usize,
    pub init_length: LengthRange,
    pub init_weights: UnitWeights,
}

impl Default for GenomeConstraints {
    fn default() -> Self {
        Self {
            rbu_channels: vec![64, 128, 256],
            rbu_max_amount: 5,
            growth_options: vec![
                GrowthOption {
                    k: GrowthRate::K12,
                    max_amount: 10,
                },
                GrowthOption {
                    k: GrowthRate::K20,
                    max_amount: 10,
                },
                GrowthOption {
                    k: GrowthRate::K40,
                    max_amount: 5,
                },
            ],
            max_rbu: 6,
            max_dbu: 6,
            init_length: LengthRange { min: 3, max: 12 },
            init_weights: UnitWeights {
                rbu: 0.4,
                dbu: 0.4,
                pu: 0.2,
            },
        }
    }
}

impl GenomeConstraints {
    pub fn check(&self) -> Result<(), GenomeError> {
        let fail = |m: &str| Err(GenomeError::Constraints(m.to_string()));
        if self.rbu_channels.is_empty() || self.rbu_channels.contains(&0) {
            return fail("rbu_channels must be non-empty with positive entries");
        }
        if self.rbu_max_amount < 1 {
            return fail("rbu_max_amount must be at least 1");
        }
        if self.growth_options.is_empty() || self.growth_options.iter().any(|g| g.max_amount < 1) {
            return fail("growth_options must be non-empty with max_amount ≥ 1");
        }
        if self.max_rbu < 1 || self.max_dbu < 1 {
            return fail("max_rbu and max_dbu must be at least 1");
        }
        if self.init_length.min < 1 || self.init_length.min > self.init_length.max {
            return fail("init_length must be a non-empty range starting at 1 or more");
        }
        self.init_weights.check("init_weights")
    }

    /// Layer cap for `k`, or `None` if `k` is not an allowed growth rate.
    pub fn dbu_cap(&self, k: GrowthRate) -> Option<u32> {
        self.growth_options
            .iter()
            .find(|g| g.k == k)
            .map(|g| g.max_amount)
    }

    pub fn cap(&self, kind: UnitKind, d: &DatasetDescriptor) -> usize {
        match kind {
            UnitKind::Rbu => self.max_rbu,
            UnitKind::Dbu => self.max_dbu,
            UnitKind::Pu => d.max_pooling_units(),
        }
    }

    /// Unit with fields drawn uniformly from the alphabets. Channel inputs are
    /// placeholders until [`repair`] chains them.
    pub fn sample_unit<R: Rng + ?Sized>(&self, kind: UnitKind, rng: &mut R) -> Unit {
        match kind {
            UnitKind::Rbu => Unit::Rbu {
                amount: rng.gen_range(1..=self.rbu_max_amount),
                in_channels: 1,
                out_channels: *self.rbu_channels.choose(rng).unwrap(),
            },
            UnitKind::Dbu => {
                let opt = *self.growth_options.choose(rng).unwrap();
                let amount = rng.gen_range(1..=opt.max_amount);
                Unit::Dbu {
                    amount,
                    in_channels: 1,
                    out_channels: 1 + amount * opt.k.value(),
                    k: opt.k,
                }
            }
            UnitKind::Pu => Unit::Pu {
                kind: if rng.gen_bool(0.5) {
                    PoolKind::Max
                } else {
                    PoolKind::Mean
                },
            },
        }
    }
}

/// A single broken invariant, positioned where applicable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Violation {
    NoComputeUnit,
    ChannelChain {
        position: usize,
        expected: u32,
        found: u32,
    },
    RbuChannels {
        position: usize,
        out: u32,
    },
    RbuAmount {
        position: usize,
        amount: u32,
        cap: u32,
    },
    GrowthRate {
        position: usize,
        k: u32,
    },
    DenseGrowth {
        position: usize,
        in_channels: u32,
        out_channels: u32,
        k: u32,
    },
    DenseAmount {
        position: usize,
        amount: u32,
        derived: u32,
    },
    DenseCap {
        position: usize,
        amount: u32,
        cap: u32,
    },
    UnitCap {
        kind: UnitKind,
        count: usize,
        cap: usize,
    },
    SpatialUnderflow {
        count: usize,
        side: u32,
    },
    ZeroField {
        position: usize,
        field: &'static str,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::NoComputeUnit => f.write_str("no RBU or DBU"),
            Violation::ChannelChain {
                position,
                expected,
                found,
            } => write!(
                f,
                "unit {position}: in={found} but preceding output has {expected} channels"
            ),
            Violation::RbuChannels { position, out } => {
                write!(f, "unit {position}: RBU out={out} not in channel alphabet")
            }
            Violation::RbuAmount {
                position,
                amount,
                cap,
            } => write!(f, "unit {position}: RBU amount {amount} outside [1, {cap}]"),
            Violation::GrowthRate { position, k } => {
                write!(f, "unit {position}: growth rate k={k} not allowed")
            }
            Violation::DenseGrowth {
                position,
                in_channels,
                out_channels,
                k,
            } => {
                let ratio = (out_channels as f64 - in_channels as f64) / k as f64;
                write!(
                    f,
                    "unit {position}: (out−in)/k = ({out_channels}−{in_channels})/{k} = {} not a positive integer",
                    (ratio * 1e4).round() / 1e4
                )
            }
            Violation::DenseAmount {
                position,
                amount,
                derived,
            } => write!(
                f,
                "unit {position}: DBU amount {amount} disagrees with (out−in)/k = {derived}"
            ),
            Violation::DenseCap {
                position,
                amount,
                cap,
            } => write!(f, "unit {position}: DBU amount {amount} exceeds cap {cap}"),
            Violation::UnitCap { kind, count, cap } => {
                write!(f, "{kind} cap {cap} exceeded ({count} units)")
            }
            Violation::SpatialUnderflow { count, side } => {
                write!(f, "spatial dims underflow: {side}/2^{count} < 1")
            }
            Violation::ZeroField { position, field } => {
                write!(f, "unit {position}: field {field} must be at least 1")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            return f.write_str("valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks every genome invariant and reports all violations found.
pub fn validate(g: &Genome, d: &DatasetDescriptor, c: &GenomeConstraints) -> ValidationReport {
    let mut violations = Vec::new();
    if g.compute_units() == 0 {
        violations.push(Violation::NoComputeUnit);
    }

    let mut prev_out = d.channels;
    for (i, unit) in g.units.iter().enumerate() {
        let position = i + 1;
        match *unit {
            Unit::Rbu {
                amount,
                in_channels,
                out_channels,
            } => {
                if amount == 0 {
                    violations.push(Violation::ZeroField {
                        position,
                        field: "amount",
                    });
                } else if amount > c.rbu_max_amount {
                    violations.push(Violation::RbuAmount {
                        position,
                        amount,
                        cap: c.rbu_max_amount,
                    });
                }
                if !c.rbu_channels.contains(&out_channels) {
                    violations.push(Violation::RbuChannels {
                        position,
                        out: out_channels,
                    });
                }
                if in_channels != prev_out {
                    violations.push(Violation::ChannelChain {
                        position,
                        expected: prev_out,
                        found: in_channels,
                    });
                }
                prev_out = out_channels;
            }
            Unit::Dbu {
                amount,
                in_channels,
                out_channels,
                k,
            } => {
                if in_channels != prev_out {
                    violations.push(Violation::ChannelChain {
                        position,
                        expected: prev_out,
                        found: in_channels,
                    });
                }
                match c.dbu_cap(k) {
                    None => violations.push(Violation::GrowthRate {
                        position,
                        k: k.value(),
                    }),
                    Some(cap) => {
                        let growth = out_channels as i64 - in_channels as i64;
                        let kv = k.value() as i64;
                        if growth <= 0 || growth % kv != 0 {
                            violations.push(Violation::DenseGrowth {
                                position,
                                in_channels,
                                out_channels,
                                k: k.value(),
                            });
                        } else {
                            let derived = (growth / kv) as u32;
                            if derived != amount {
                                violations.push(Violation::DenseAmount {
                                    position,
                                    amount,
                                    derived,
                                });
                            }
                            if amount > cap || derived > cap {
                                violations.push(Violation::DenseCap {
                                    position,
                                    amount: amount.max(derived),
                                    cap,
                                });
                            }
                        }
                    }
                }
                if amount == 0 {
                    violations.push(Violation::ZeroField {
                        position,
                        field: "amount",
                    });
                }
                prev_out = out_channels;
            }
            Unit::Pu { .. } => {}
        }
    }

    for kind in [UnitKind::Rbu, UnitKind::Dbu] {
        let count = g.count(kind);
        let cap = c.cap(kind, d);
        if count > cap {
            violations.push(Violation::UnitCap { kind, count, cap });
        }
    }
    let pools = g.count(UnitKind::Pu);
    if pools > d.max_pooling_units() {
        violations.push(Violation::SpatialUnderflow {
            count: pools,
            side: d.height.min(d.width),
        });
    }

    ValidationReport { violations }
}

/// Cascade repair: re-chains every compute unit's `in` from its
/// predecessor and restores DBU growth consistency.
///
/// A DBU whose `(out − in) / k` is a positive integer within cap takes that
/// as its `amount`; otherwise its stored `amount` (clamped to `[1, cap]`) is
/// kept and `out` is rewritten to `in + amount·k`. Unit count and tags are
/// preserved.
pub fn repair(g: &Genome, d: &DatasetDescriptor, c: &GenomeConstraints) -> Result<Genome, GenomeError> {
    if g.compute_units() == 0 {
        return Err(GenomeError::NothingToChain);
    }
    let mut out = g.clone();
    let mut prev_out = d.channels;
    for unit in out.units.iter_mut() {
        unit.set_in_channels(prev_out);
        match unit {
            Unit::Rbu { out_channels, .. } => prev_out = *out_channels,
            Unit::Dbu {
                amount,
                in_channels,
                out_channels,
                k,
            } => {
                let cap = c.dbu_cap(*k).unwrap_or(u32::MAX);
                let kv = k.value() as i64;
                let growth = *out_channels as i64 - *in_channels as i64;
                let derived = growth / kv;
                if growth > 0 && growth % kv == 0 && derived <= cap as i64 {
                    *amount = derived as u32;
                } else {
                    *amount = (*amount).clamp(1, cap);
                    *out_channels = *in_channels + *amount * k.value();
                }
                prev_out = *out_channels;
            }
            Unit::Pu { .. } => {}
        }
    }
    Ok(out)
}

const GENOME_ATTEMPTS: usize = 1000;
const UNIT_ATTEMPTS: usize = 100;

/// Samples a valid genome: length uniform over the init range, unit kinds by
/// the init weights (kinds at their cap are resampled), fields uniform.
pub fn random_genome<R: Rng + ?Sized>(
    rng: &mut R,
    d: &DatasetDescriptor,
    c: &GenomeConstraints,
) -> Result<Genome, GenomeError> {
    let weights = UnitKind::ALL.map(|k| c.init_weights.get(k));
    let picker =
        WeightedIndex::new(weights).map_err(|e| GenomeError::Constraints(format!("init_weights: {e}")))?;

    for _ in 0..GENOME_ATTEMPTS {
        let len = rng.gen_range(c.init_length.min..=c.init_length.max);
        let mut units = Vec::with_capacity(len);
        let mut counts = [0usize; 3];
        'slots: for _ in 0..len {
            for _ in 0..UNIT_ATTEMPTS {
                let idx = picker.sample(rng);
                let kind = UnitKind::ALL[idx];
                if counts[idx] < c.cap(kind, d) {
                    counts[idx] += 1;
                    units.push(c.sample_unit(kind, rng));
                    continue 'slots;
                }
            }
            break;
        }
        if units.len() != len {
            continue;
        }
        let draft = Genome::new(units);
        if let Ok(g) = repair(&draft, d, c) {
            return Ok(g);
        }
    }
    Err(GenomeError::Infeasible {
        attempts: GENOME_ATTEMPTS,
    })
}

#[derive(Debug, thiserror::Error)]
pub enum GenomeError {
    #[error("malformed genome at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unit {position}: field `{field}` {message}")]
    Domain {
        position: usize,
        field: &'static str,
        message: String,
    },
    #[error("genome has no RBU or DBU to chain")]
    NothingToChain,
    #[error("no valid genome found after {attempts} attempts; constraints look infeasible")]
    Infeasible { attempts: usize },
    #[error("invalid constraints: {0}")]
    Constraints(String),
    #[error("invalid dataset: {field} = {value}")]
    Dataset { field: &'static str, value: u32 },
    #[error("unrecognised dataset `{0}` (expected cifar10, cifar100 or custom:C,H,W,K)")]
    DatasetSpec(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rbu(amount: u32, i: u32, o: u32) -> Unit {
        Unit::Rbu {
            amount,
            in_channels: i,
            out_channels: o,
        }
    }

    fn dbu(amount: u32, i: u32, o: u32, k: u32) -> Unit {
        Unit::Dbu {
            amount,
            in_channels: i,
            out_channels: o,
            k: GrowthRate::from_value(k).unwrap(),
        }
    }

    fn pu(kind: PoolKind) -> Unit {
        Unit::Pu { kind }
    }

    fn setup() -> (DatasetDescriptor, GenomeConstraints) {
        (DatasetDescriptor::cifar10(), GenomeConstraints::default())
    }

    #[test]
    fn empty_genome_has_no_compute_unit() {
        let (d, c) = setup();
        let report = validate(&Genome::default(), &d, &c);
        assert_eq!(report.violations, vec![Violation::NoComputeUnit]);
        assert_eq!(report.to_string(), "no RBU or DBU");
    }

    #[test]
    fn dense_growth_must_divide() {
        let (d, c) = setup();
        let g = Genome::new(vec![rbu(1, 3, 64), dbu(2, 64, 160, 40)]);
        let report = validate(&g, &d, &c);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::DenseGrowth { position: 2, .. })));
        assert!(report.to_string().contains("= 2.4 not a positive integer"));
    }

    #[test]
    fn six_pools_underflow_32px() {
        let (d, c) = setup();
        assert_eq!(d.max_pooling_units(), 5);
        let mut units = vec![rbu(1, 3, 64)];
        units.extend((0..6).map(|_| pu(PoolKind::Max)));
        let report = validate(&Genome::new(units.clone()), &d, &c);
        assert_eq!(
            report.violations,
            vec![Violation::SpatialUnderflow { count: 6, side: 32 }]
        );
        assert_eq!(report.to_string(), "spatial dims underflow: 32/2^6 < 1");
        units.pop();
        assert!(validate(&Genome::new(units), &d, &c).is_valid());
    }

    #[test]
    fn seven_rbus_exceed_cap() {
        let (d, c) = setup();
        let mut units = vec![rbu(1, 3, 64)];
        units.extend((0..6).map(|_| rbu(1, 64, 64)));
        let report = validate(&Genome::new(units), &d, &c);
        assert_eq!(
            report.violations,
            vec![Violation::UnitCap {
                kind: UnitKind::Rbu,
                count: 7,
                cap: 6
            }]
        );
        assert!(report.to_string().contains("RBU cap 6 exceeded"));
    }

    #[test]
    fn validate_lists_every_violation() {
        let (d, c) = setup();
        let g = Genome::new(vec![rbu(9, 5, 65), dbu(3, 7, 43, 12)]);
        let report = validate(&g, &d, &c);
        assert_eq!(report.violations.len(), 4, "{report}");
    }

    #[test]
    fn max_pooling_units_by_side() {
        let d = |h, w| DatasetDescriptor::custom(1, h, w, 2);
        assert_eq!(d(1, 1).max_pooling_units(), 0);
        assert_eq!(d(2, 9).max_pooling_units(), 1);
        assert_eq!(d(31, 40).max_pooling_units(), 4);
        assert_eq!(d(224, 224).max_pooling_units(), 7);
    }

    #[test]
    fn repair_chains_second_rbu() {
        let (d, c) = setup();
        let g = Genome::new(vec![rbu(1, 3, 128), rbu(1, 3, 64)]);
        let r = repair(&g, &d, &c).unwrap();
        assert_eq!(r.units[1], rbu(1, 128, 64));
    }

    #[test]
    fn repair_keeps_consistent_dbu() {
        let (d, c) = setup();
        let g = Genome::new(vec![dbu(8, 3, 99, 12)]);
        assert_eq!(repair(&g, &d, &c).unwrap(), g);
    }

    #[test]
    fn repair_rederives_dbu_out_from_prior_amount() {
        let (d, c) = setup();
        let g = Genome::new(vec![rbu(1, 3, 64), dbu(5, 7, 67, 12)]);
        let r = repair(&g, &d, &c).unwrap();
        assert_eq!(r.units[1], dbu(5, 64, 124, 12));
        assert!(validate(&r, &d, &c).is_valid());
    }

    #[test]
    fn repair_clamps_amount_to_cap() {
        let (d, c) = setup();
        let g = Genome::new(vec![dbu(8, 3, 99, 40)]);
        let r = repair(&g, &d, &c).unwrap();
        assert_eq!(r.units[0], dbu(5, 3, 203, 40));
    }

    #[test]
    fn repair_skips_pooling_when_chaining() {
        let (d, c) = setup();
        let g = Genome::new(vec![
            pu(PoolKind::Mean),
            rbu(1, 9, 64),
            pu(PoolKind::Max),
            dbu(1, 1, 13, 12),
        ]);
        let r = repair(&g, &d, &c).unwrap();
        assert_eq!(r.units[1], rbu(1, 3, 64));
        assert_eq!(r.units[3], dbu(1, 64, 76, 12));
    }

    #[test]
    fn repair_rejects_pooling_only() {
        let (d, c) = setup();
        let g = Genome::new(vec![pu(PoolKind::Max)]);
        assert!(matches!(repair(&g, &d, &c), Err(GenomeError::NothingToChain)));
    }

    #[test]
    fn random_genome_is_deterministic() {
        let (d, c) = setup();
        let a = random_genome(&mut ChaCha8Rng::seed_from_u64(11), &d, &c).unwrap();
        let b = random_genome(&mut ChaCha8Rng::seed_from_u64(11), &d, &c).unwrap();
        assert_eq!(a.to_canonical_json(), b.to_canonical_json());
    }

    #[test]
    fn pooling_only_init_is_infeasible() {
        let d = DatasetDescriptor::cifar10();
        let c = GenomeConstraints {
            init_length: LengthRange { min: 1, max: 1 },
            init_weights: UnitWeights {
                rbu: 0.0,
                dbu: 0.0,
                pu: 1.0,
            },
            ..GenomeConstraints::default()
        };
        let err = random_genome(&mut ChaCha8Rng::seed_from_u64(0), &d, &c).unwrap_err();
        assert!(matches!(err, GenomeError::Infeasible { .. }));
    }

    #[test]
    fn canonical_json_layout() {
        let g = Genome::new(vec![rbu(2, 3, 64), dbu(1, 64, 76, 12), pu(PoolKind::Mean)]);
        assert_eq!(
            g.to_canonical_json(),
            r#"{"units":[{"type":"rbu","amount":2,"in":3,"out":64},{"type":"dbu","amount":1,"in":64,"out":76,"k":12},{"type":"pu","kind":"mean"}]}"#
        );
        assert_eq!(Genome::from_json(&g.to_canonical_json()).unwrap(), g);
    }

    #[test]
    fn bad_growth_rate_names_field_and_position() {
        let text = r#"{"units":[{"type":"rbu","amount":1,"in":3,"out":64},{"type":"dbu","amount":1,"in":64,"out":77,"k":13}]}"#;
        let err = Genome::from_json(text).unwrap_err().to_string();
        assert!(err.contains("growth rate 13"), "{err}");
        assert!(err.contains("column"), "{err}");
    }

    #[test]
    fn zero_amount_rejected_with_position() {
        let text = r#"{"units":[{"type":"pu","kind":"max"},{"type":"rbu","amount":0,"in":3,"out":64}]}"#;
        let err = Genome::from_json(text).unwrap_err();
        assert!(matches!(
            err,
            GenomeError::Domain {
                position: 2,
                field: "amount",
                ..
            }
        ));
    }

    #[test]
    fn malformed_json_rejected() {
        assert!(matches!(
            Genome::from_json("{\"units\":[{\"type\":\"xu\"}]}"),
            Err(GenomeError::Parse { .. })
        ));
        assert!(matches!(Genome::from_json("{"), Err(GenomeError::Parse { .. })));
    }

    #[test]
    fn digest_distinguishes_pool_kind() {
        let a = Genome::new(vec![rbu(1, 3, 64), pu(PoolKind::Max)]);
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.units[1] = pu(PoolKind::Mean);
        assert_ne!(a.digest(), b.digest());
        assert_eq!(GenomeDigest::from_hex(&a.digest().to_hex()).unwrap(), a.digest());
    }

    #[test]
    fn dataset_spec_parsing() {
        assert_eq!("cifar100".parse::<DatasetDescriptor>().unwrap().num_classes, 100);
        let c: DatasetDescriptor = "custom:1,28,28,10".parse().unwrap();
        assert_eq!((c.channels, c.height, c.width, c.num_classes), (1, 28, 28, 10));
        assert!("custom:1,28,28".parse::<DatasetDescriptor>().is_err());
        assert!("custom:1,28,28,1".parse::<DatasetDescriptor>().is_err());
        assert!("imagenet".parse::<DatasetDescriptor>().is_err());
    }
}
