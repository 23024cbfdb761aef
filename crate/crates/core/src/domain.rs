//! Shared vocabulary: bandwidth, simulated time, links, requests and decisions.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Sub, SubAssign};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::kernel::{BamModel, GbamConfig};

/// Node identifier. Nodes are dense integers `0..n`.
pub type NodeId = usize;
/// Index of a directed link inside a [`crate::topology::Topology`].
pub type LinkId = usize;
/// Traffic class index. Higher index means higher priority.
pub type TrafficClass = usize;

/// Bandwidth in Mb/s, stored as an integer count of 0.001 Mb/s units.
///
/// All reservation arithmetic happens on the integer representation, so any
/// sequence of admits followed by the matching releases returns totals to
/// exactly zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Bandwidth(u64);

impl Bandwidth {
    pub const ZERO: Bandwidth = Bandwidth(0);
    /// Units per Mb/s.
    pub const SCALE: u64 = 1000;

    pub const fn from_millis(millis: u64) -> Self {
        Bandwidth(millis)
    }

    pub const fn mbps(whole: u64) -> Self {
        Bandwidth(whole * Self::SCALE)
    }

    /// Converts a Mb/s value, rounding to the nearest 0.001 Mb/s.
    pub fn from_mbps(mbps: f64) -> Result<Self, InvalidBandwidth> {
        if !mbps.is_finite() {
            return Err(InvalidBandwidth::NotFinite);
        }
        if mbps < 0.0 {
            return Err(InvalidBandwidth::Negative(mbps));
        }
        Ok(Bandwidth((mbps * Self::SCALE as f64).round() as u64))
    }

    pub const fn millis(self) -> u64 {
        self.0
    }

    pub fn as_mbps(self) -> f64 {
        self.0 as f64 / Self::SCALE as f64
    }

    pub const fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn checked_sub(self, rhs: Bandwidth) -> Option<Bandwidth> {
        self.0.checked_sub(rhs.0).map(Bandwidth)
    }

    pub fn saturating_sub(self, rhs: Bandwidth) -> Bandwidth {
        Bandwidth(self.0.saturating_sub(rhs.0))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InvalidBandwidth {
    #[error("bandwidth must be non-negative, got {0}")]
    Negative(f64),
    #[error("bandwidth must be a finite number")]
    NotFinite,
}

impl Add for Bandwidth {
    type Output = Bandwidth;
    fn add(self, rhs: Bandwidth) -> Bandwidth {
        Bandwidth(self.0 + rhs.0)
    }
}

impl AddAssign for Bandwidth {
    fn add_assign(&mut self, rhs: Bandwidth) {
        self.0 += rhs.0;
    }
}

impl Sub for Bandwidth {
    type Output = Bandwidth;
    fn sub(self, rhs: Bandwidth) -> Bandwidth {
        Bandwidth(self.0.checked_sub(rhs.0).expect("bandwidth underflow"))
    }
}

impl SubAssign for Bandwidth {
    fn sub_assign(&mut self, rhs: Bandwidth) {
        *self = *self - rhs;
    }
}

impl Sum for Bandwidth {
    fn sum<I: Iterator<Item = Bandwidth>>(iter: I) -> Bandwidth {
        iter.fold(Bandwidth::ZERO, Add::add)
    }
}

impl<'a> Sum<&'a Bandwidth> for Bandwidth {
    fn sum<I: Iterator<Item = &'a Bandwidth>>(iter: I) -> Bandwidth {
        iter.copied().sum()
    }
}

impl fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.0 / Self::SCALE;
        let frac = self.0 % Self::SCALE;
        if frac == 0 {
            write!(f, "{whole}")
        } else {
            let s = format!("{frac:03}");
            write!(f, "{whole}.{}", s.trim_end_matches('0'))
        }
    }
}

impl Serialize for Bandwidth {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_mbps())
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(deserializer)?;
        Bandwidth::from_mbps(v).map_err(serde::de::Error::custom)
    }
}

/// Simulated time in integer microseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);
    const PER_SECOND: f64 = 1_000_000.0;

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub fn from_secs(secs: f64) -> Self {
        if secs <= 0.0 || secs.is_nan() {
            SimTime(0)
        } else if secs * Self::PER_SECOND >= u64::MAX as f64 {
            SimTime::MAX
        } else {
            SimTime((secs * Self::PER_SECOND).round() as u64)
        }
    }

    pub const fn micros(self) -> u64 {
        self.0
    }

    pub fn as_secs(self) -> f64 {
        self.0 as f64 / Self::PER_SECOND
    }

    pub fn saturating_add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}s", self.as_secs())
    }
}

impl Serialize for SimTime {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_secs())
    }
}

impl<'de> Deserialize<'de> for SimTime {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(deserializer)?;
        if !(v >= 0.0) {
            return Err(serde::de::Error::custom("time must be non-negative"));
        }
        Ok(SimTime::from_secs(v))
    }
}

/// Identifier of an LSP, equal to the request id that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LspId(pub u64);

impl fmt::Display for LspId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "lsp#{}", self.0)
    }
}

/// Per-class bandwidth constraints of one link.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BcVector(pub Vec<Bandwidth>);

impl BcVector {
    pub fn class_count(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> Bandwidth {
        self.0.iter().sum()
    }

    pub fn get(&self, tc: TrafficClass) -> Bandwidth {
        self.0[tc]
    }

    /// A valid vector for `model` when the operator gives none: an even
    /// split for partitioned models, evenly spaced dolls for RDM.
    pub fn default_for(model: BamModel, capacity: Bandwidth, class_count: usize) -> BcVector {
        let c = class_count as u64;
        let cap = capacity.millis();
        match model {
            BamModel::Rdm => BcVector(
                (0..c)
                    .map(|j| Bandwidth::from_millis(cap * (c - j) / c))
                    .collect(),
            ),
            _ => {
                let share = cap / c;
                let mut v = vec![Bandwidth::from_millis(share); class_count];
                v[0] = Bandwidth::from_millis(cap - share * (c - 1));
                BcVector(v)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub src: NodeId,
    pub dst: NodeId,
    pub capacity: Bandwidth,
    pub bc: BcVector,
}

impl LinkSpec {
    pub fn new(src: NodeId, dst: NodeId, capacity: Bandwidth, bc: BcVector) -> Result<Self, InvalidField> {
        if capacity.is_zero() {
            return Err(InvalidField::new("capacity", "must be positive"));
        }
        if src == dst {
            return Err(InvalidField::new("dst", "link endpoints must differ"));
        }
        if bc.class_count() == 0 {
            return Err(InvalidField::new("bc", "at least one class is required"));
        }
        Ok(LinkSpec { src, dst, capacity, bc })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid field `{field}`: {message}")]
pub struct InvalidField {
    pub field: &'static str,
    pub message: String,
}

impl InvalidField {
    pub fn new(field: &'static str, message: impl Into<String>) -> Self {
        InvalidField { field, message: message.into() }
    }
}

/// A demand for an LSP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LspRequest {
    pub id: LspId,
    pub tc: TrafficClass,
    pub bandwidth: Bandwidth,
    pub src: NodeId,
    pub dst: NodeId,
    pub arrival: SimTime,
    pub holding: SimTime,
}

/// Hands out strictly increasing request ids and validates request fields.
#[derive(Debug, Clone, Default)]
pub struct RequestIds {
    last: u64,
}

impl RequestIds {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn new_request(
        &mut self,
        tc: TrafficClass,
        bandwidth: Bandwidth,
        src: NodeId,
        dst: NodeId,
        arrival_s: f64,
        holding_s: f64,
    ) -> Result<LspRequest, InvalidField> {
        if bandwidth.is_zero() {
            return Err(InvalidField::new("bandwidth", "must be positive"));
        }
        if !(holding_s > 0.0) || !holding_s.is_finite() {
            return Err(InvalidField::new("holding_time", format!("must be positive, got {holding_s}")));
        }
        if !(arrival_s >= 0.0) || !arrival_s.is_finite() {
            return Err(InvalidField::new("arrival_time", format!("must be non-negative, got {arrival_s}")));
        }
        if src == dst {
            return Err(InvalidField::new("dst", "source and destination must differ"));
        }
        let holding = SimTime::from_secs(holding_s);
        if holding == SimTime::ZERO {
            return Err(InvalidField::new("holding_time", "below the 1 µs clock resolution"));
        }
        self.last += 1;
        Ok(LspRequest {
            id: LspId(self.last),
            tc,
            bandwidth,
            src,
            dst,
            arrival: SimTime::from_secs(arrival_s),
            holding,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BlockReason {
    NoRoute,
    Constraint,
    Capacity,
}

impl BlockReason {
    pub const ALL: [BlockReason; 3] = [BlockReason::NoRoute, BlockReason::Constraint, BlockReason::Capacity];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Outcome of an LSP request.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    Granted { path: Vec<NodeId> },
    GrantedWithPreemption { path: Vec<NodeId>, victims: Vec<LspId> },
    Blocked { block_reason: BlockReason },
}

impl Decision {
    pub fn is_granted(&self) -> bool {
        !matches!(self, Decision::Blocked { .. })
    }

    pub fn path(&self) -> Option<&[NodeId]> {
        match self {
            Decision::Granted { path } | Decision::GrantedWithPreemption { path, .. } => Some(path),
            Decision::Blocked { .. } => None,
        }
    }

    pub fn victims(&self) -> &[LspId] {
        match self {
            Decision::GrantedWithPreemption { victims, .. } => victims,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("class count mismatch: config has {config}, link has {link}")]
    ClassCountMismatch { config: usize, link: usize },
    #[error("negative value in `{0}`")]
    NegativeValue(String),
    #[error("bandwidth constraints violate {model:?} rules: {}", .violations.join("; "))]
    Violations { model: BamModel, violations: Vec<String> },
}

/// Checks the link's bandwidth constraints against the structural rules of
/// the configured model.
pub fn validate_constraints(cfg: &GbamConfig, link: &LinkSpec) -> Result<(), ValidationError> {
    let bc = &link.bc.0;
    if bc.len() != cfg.class_count {
        return Err(ValidationError::ClassCountMismatch { config: cfg.class_count, link: bc.len() });
    }
    let cap = link.capacity;
    let mut violations = Vec::new();
    for (c, &b) in bc.iter().enumerate() {
        if b > cap {
            violations.push(format!("bc[{c}] = {b} exceeds capacity {cap}"));
        }
    }
    let total = link.bc.total();
    match cfg.model {
        BamModel::Mam => {
            if !cfg.mam_oversubscription && total > cap {
                violations.push(format!("sum of BC exceeds capacity ({total} > {cap}) without oversubscription"));
            }
        }
        BamModel::Rdm => {
            if bc[0] != cap {
                violations.push(format!("bc[0] = {} must equal capacity {cap}", bc[0]));
            }
            for j in 1..bc.len() {
                if bc[j] > bc[j - 1] {
                    violations.push(format!("bc[{j}] = {} exceeds bc[{}] = {}", bc[j], j - 1, bc[j - 1]));
                }
            }
        }
        BamModel::Atcs | BamModel::Gbam => {
            if total > cap {
                violations.push(format!("sum of BC exceeds capacity ({total} > {cap})"));
            }
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(ValidationError::Violations { model: cfg.model, violations })
    }
}
