//! Seeded LSP request streams, phase profiles and trace import.
//!
//! Every `(class, quantity)` pair draws from its own ChaCha8 substream. The
//! substream seed is `splitmix64(splitmix64(seed ^ splitmix64(tc + 1)) ^ kind)`
//! with `kind` 1 = interarrival, 2 = holding, 3 = bandwidth, 4 = endpoints.
//! Uniform variates are `(x >> 11) * 2^-53` for a raw 64-bit output `x`;
//! exponential variates use the inverse CDF `-mean * ln(1 - u)`.

use std::io::Read;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Bandwidth, LspId, LspRequest, NodeId, SimTime, TrafficClass};

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Quantity {
    Interarrival = 1,
    Holding = 2,
    Bandwidth = 3,
    Endpoints = 4,
}

pub fn substream_seed(seed: u64, tc: TrafficClass, kind: Quantity) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(tc as u64 + 1)) ^ kind as u64)
}

/// Seed of run `run` when a scenario gives fewer seeds than runs.
pub fn run_seed(master: u64, run: usize) -> u64 {
    splitmix64(master ^ splitmix64(run as u64).rotate_left(17))
}

/// One pinned random substream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Substream(ChaCha8Rng);

impl Substream {
    pub fn new(seed: u64) -> Self {
        Substream(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in `0..n` by multiply-shift.
    pub fn index(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum TrafficError {
    #[error("invalid traffic spec: {0}")]
    InvalidSpec(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: arrival {arrival_s} s precedes the previous request")]
    UnsortedInput { line: usize, arrival_s: f64 },
}

/// A distribution over seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Distribution {
    Exponential { mean: f64 },
    Uniform { lo: f64, hi: f64 },
    Deterministic { value: f64 },
}

impl Distribution {
    /// Exponential interarrivals of a Poisson process with `rate` per second.
    pub fn poisson(rate: f64) -> Self {
        Distribution::Exponential { mean: 1.0 / rate }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Distribution::Exponential { mean } => mean,
            Distribution::Uniform { lo, hi } => (lo + hi) / 2.0,
            Distribution::Deterministic { value } => value,
        }
    }

    /// The same shape rescaled to `mean`.
    pub fn with_mean(&self, mean: f64) -> Self {
        match *self {
            Distribution::Exponential { .. } => Distribution::Exponential { mean },
            Distribution::Uniform { lo, hi } => {
                let f = mean / self.mean();
                Distribution::Uniform { lo: lo * f, hi: hi * f }
            }
            Distribution::Deterministic { .. } => Distribution::Deterministic { value: mean },
        }
    }

    pub fn validate(&self, what: &str) -> Result<(), TrafficError> {
        let bad = |m: String| Err(TrafficError::InvalidSpec(format!("{what}: {m}")));
        match *self {
            Distribution::Exponential { mean } if !(mean > 0.0 && mean.is_finite()) => bad(format!("mean must be positive, got {mean}")),
            Distribution::Uniform { lo, hi } if !(lo >= 0.0 && lo <= hi && hi.is_finite()) => bad(format!("bounds must satisfy 0 <= lo <= hi, got [{lo}, {hi}]")),
            Distribution::Uniform { hi, .. } if hi <= 0.0 => bad("upper bound must be positive".into()),
            Distribution::Deterministic { value } if !(value > 0.0 && value.is_finite()) => bad(format!("value must be positive, got {value}")),
            _ => Ok(()),
        }
    }

    pub fn sample(&self, rng: &mut Substream) -> f64 {
        match *self {
            Distribution::Exponential { mean } => -mean * (1.0 - rng.unit()).ln(),
            Distribution::Uniform { lo, hi } => lo + (hi - lo) * rng.unit(),
            Distribution::Deterministic { value } => value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BandwidthSpec {
    Deterministic { value: Bandwidth },
    UniformChoice { values: Vec<Bandwidth> },
}

impl BandwidthSpec {
    pub fn mean_mbps(&self) -> f64 {
        match self {
            BandwidthSpec::Deterministic { value } => value.as_mbps(),
            BandwidthSpec::UniformChoice { values } => values.iter().map(|v| v.as_mbps()).sum::<f64>() / values.len() as f64,
        }
    }

    fn sample(&self, rng: &mut Substream) -> Bandwidth {
        match self {
            BandwidthSpec::Deterministic { value } => *value,
            BandwidthSpec::UniformChoice { values } => values[rng.index(values.len())],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Endpoints {
    /// Source uniform over all nodes, destination uniform over the others.
    UniformPair,
    Fixed { src: NodeId, dst: NodeId },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassTrafficSpec {
    pub tc: TrafficClass,
    pub interarrival: Distribution,
    pub holding: Distribution,
    pub bandwidth: BandwidthSpec,
    pub endpoints: Endpoints,
}

impl ClassTrafficSpec {
    pub fn validate(&self, node_count: usize) -> Result<(), TrafficError> {
        self.interarrival.validate("interarrival")?;
        self.holding.validate("holding")?;
        match &self.bandwidth {
            BandwidthSpec::Deterministic { value } if value.is_zero() => return Err(TrafficError::InvalidSpec("bandwidth must be positive".into())),
            BandwidthSpec::UniformChoice { values } if values.is_empty() || values.iter().any(|v| v.is_zero()) => {
                return Err(TrafficError::InvalidSpec("bandwidth choices must be non-empty and positive".into()))
            }
            _ => {}
        }
        match self.endpoints {
            Endpoints::UniformPair if node_count < 2 => Err(TrafficError::InvalidSpec("uniform pairs need two nodes".into())),
            Endpoints::Fixed { src, dst } if src == dst || src >= node_count || dst >= node_count => {
                Err(TrafficError::InvalidSpec(format!("endpoints {src}->{dst} invalid for {node_count} nodes")))
            }
            _ => Ok(()),
        }
    }

    /// Offered load in Mb/s at `rate` arrivals per second.
    pub fn offered_load(&self, rate: f64) -> f64 {
        rate * self.holding.mean() * self.bandwidth.mean_mbps()
    }
}

/// A request before the engine assigns its id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Demand {
    pub tc: TrafficClass,
    pub bandwidth: Bandwidth,
    pub src: NodeId,
    pub dst: NodeId,
    pub arrival: SimTime,
    pub holding: SimTime,
}

impl Demand {
    pub fn into_request(self, id: LspId) -> LspRequest {
        LspRequest { id, tc: self.tc, bandwidth: self.bandwidth, src: self.src, dst: self.dst, arrival: self.arrival, holding: self.holding }
    }
}

/// Generator state of one class. A value: cloning it forks the stream.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassStream {
    tc: TrafficClass,
    interarrival: Substream,
    holding: Substream,
    bandwidth: Substream,
    endpoints: Substream,
}

impl ClassStream {
    pub fn new(seed: u64, tc: TrafficClass) -> Self {
        let sub = |k| Substream::new(substream_seed(seed, tc, k));
        ClassStream {
            tc,
            interarrival: sub(Quantity::Interarrival),
            holding: sub(Quantity::Holding),
            bandwidth: sub(Quantity::Bandwidth),
            endpoints: sub(Quantity::Endpoints),
        }
    }

    /// Samples the next demand after `now` with interarrivals drawn from
    /// `interarrival` (the spec's own, or a phase-scaled version of it).
    pub fn next_arrival_with(&mut self, spec: &ClassTrafficSpec, interarrival: &Distribution, now: SimTime, node_count: usize) -> Demand {
        let gap = SimTime::from_secs(interarrival.sample(&mut self.interarrival));
        let holding = SimTime::from_micros(SimTime::from_secs(spec.holding.sample(&mut self.holding)).micros().max(1));
        let bandwidth = spec.bandwidth.sample(&mut self.bandwidth);
        let (src, dst) = match spec.endpoints {
            Endpoints::Fixed { src, dst } => (src, dst),
            Endpoints::UniformPair => {
                let src = self.endpoints.index(node_count);
                let d = self.endpoints.index(node_count - 1);
                (src, if d >= src { d + 1 } else { d })
            }
        };
        Demand { tc: self.tc, bandwidth, src, dst, arrival: now.saturating_add(gap), holding }
    }

    pub fn next_arrival(&mut self, spec: &ClassTrafficSpec, now: SimTime, node_count: usize) -> Demand {
        self.next_arrival_with(spec, &spec.interarrival, now, node_count)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Level {
    High,
    Medium,
    Low,
}

impl Level {
    pub fn letter(self) -> char {
        match self {
            Level::High => 'H',
            Level::Medium => 'M',
            Level::Low => 'L',
        }
    }

    pub fn from_letter(s: &str) -> Option<Level> {
        match s.to_ascii_uppercase().as_str() {
            "H" | "HIGH" => Some(Level::High),
            "M" | "MEDIUM" => Some(Level::Medium),
            "L" | "LOW" => Some(Level::Low),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub start: SimTime,
    pub duration: SimTime,
    pub levels: Vec<Level>,
    /// Aggregate offered load as a fraction of the reference capacity.
    pub load_factor: f64,
}

impl Phase {
    pub fn end(&self) -> SimTime {
        self.start.saturating_add(self.duration)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelWeights {
    pub high: f64,
    pub medium: f64,
    pub low: f64,
}

impl Default for LevelWeights {
    fn default() -> Self {
        LevelWeights { high: 3.0, medium: 2.0, low: 1.0 }
    }
}

impl LevelWeights {
    pub fn get(&self, l: Level) -> f64 {
        match l {
            Level::High => self.high,
            Level::Medium => self.medium,
            Level::Low => self.low,
        }
    }
}

/// Time-phased per-class load levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSchedule {
    pub phases: Vec<Phase>,
    pub weights: LevelWeights,
    /// Capacity the load factors refer to.
    pub reference_capacity: Bandwidth,
}

pub const TABLE1_PHASE_SECS: f64 = 3600.0;

impl ProfileSchedule {
    /// Builds contiguous phases starting at zero from `(duration, levels,
    /// load factor)` triples.
    pub fn new(reference_capacity: Bandwidth, phases: impl IntoIterator<Item = (SimTime, Vec<Level>, f64)>) -> Result<Self, TrafficError> {
        let mut start = SimTime::ZERO;
        let mut out = Vec::new();
        for (duration, levels, load_factor) in phases {
            if duration == SimTime::ZERO {
                return Err(TrafficError::InvalidSpec("phase duration must be positive".into()));
            }
            if !(load_factor >= 0.0 && load_factor.is_finite()) {
                return Err(TrafficError::InvalidSpec(format!("load factor must be non-negative, got {load_factor}")));
            }
            out.push(Phase { start, duration, levels, load_factor });
            start = start.saturating_add(duration);
        }
        let s = ProfileSchedule { phases: out, weights: LevelWeights::default(), reference_capacity };
        s.validate(None)?;
        Ok(s)
    }

    pub fn validate(&self, class_count: Option<usize>) -> Result<(), TrafficError> {
        if self.phases.is_empty() {
            return Err(TrafficError::InvalidSpec("profile has no phases".into()));
        }
        let mut expected = SimTime::ZERO;
        for (i, p) in self.phases.iter().enumerate() {
            if p.start != expected {
                return Err(TrafficError::InvalidSpec(format!("phase {} is not contiguous with its predecessor", i + 1)));
            }
            let c = class_count.unwrap_or(self.phases[0].levels.len());
            if p.levels.len() != c || c == 0 {
                return Err(TrafficError::InvalidSpec(format!("phase {} assigns {} levels for {c} classes", i + 1, p.levels.len())));
            }
            expected = p.end();
        }
        Ok(())
    }

    /// The six one-hour phases of the reference pattern: low-to-moderate
    /// load (0.7 of capacity) for phases 1 to 3 and overload (1.2) with
    /// every class high for phases 4 to 6.
    pub fn table1(link_capacity: Bandwidth) -> Self {
        use Level::*;
        let rows = [
            (vec![High, Low, Low], 0.7),
            (vec![Medium, Low, High], 0.7),
            (vec![Low, Medium, High], 0.7),
            (vec![High, High, High], 1.2),
            (vec![High, High, High], 1.2),
            (vec![High, High, High], 1.2),
        ];
        let hour = SimTime::from_secs(TABLE1_PHASE_SECS);
        ProfileSchedule::new(link_capacity, rows.into_iter().map(|(l, f)| (hour, l, f))).expect("table is well formed")
    }

    pub fn end(&self) -> SimTime {
        self.phases.last().map(Phase::end).unwrap_or(SimTime::ZERO)
    }

    /// Index of the phase containing `t`, the last phase past the end.
    pub fn phase_at(&self, t: SimTime) -> usize {
        self.phases.iter().rposition(|p| p.start <= t).unwrap_or(0)
    }

    /// Offered load of class `tc` in phase `phase`, in Mb/s.
    pub fn class_load(&self, phase: usize, tc: TrafficClass) -> f64 {
        let p = &self.phases[phase];
        let total: f64 = p.levels.iter().map(|&l| self.weights.get(l)).sum();
        if total == 0.0 {
            return 0.0;
        }
        p.load_factor * self.reference_capacity.as_mbps() * self.weights.get(p.levels[tc]) / total
    }

    /// Interarrival distribution realizing the class load of `phase`, or
    /// `None` when that load is zero.
    pub fn interarrival(&self, phase: usize, spec: &ClassTrafficSpec) -> Option<Distribution> {
        let load = self.class_load(phase, spec.tc);
        let per_arrival = spec.holding.mean() * spec.bandwidth.mean_mbps();
        (load > 0.0 && per_arrival > 0.0).then(|| spec.interarrival.with_mean(per_arrival / load))
    }
}

/// Convenience alias for the reference profile.
pub fn build_table1_schedule(link_capacity: Bandwidth) -> ProfileSchedule {
    ProfileSchedule::table1(link_capacity)
}

#[derive(Debug, Deserialize, Serialize)]
struct TraceRow {
    arrival_s: f64,
    tc: TrafficClass,
    bandwidth_mbps: f64,
    src: NodeId,
    dst: NodeId,
    holding_s: f64,
}

pub const TRACE_HEADER: &str = "arrival_s,tc,bandwidth_mbps,src,dst,holding_s";

/// Reads a CSV trace with header `arrival_s,tc,bandwidth_mbps,src,dst,holding_s`.
pub fn load_trace(input: impl Read) -> Result<Vec<Demand>, TrafficError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers().map_err(|e| TrafficError::Parse { line: 1, message: e.to_string() })?.clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    let expected: Vec<&str> = TRACE_HEADER.split(',').collect();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(TrafficError::Parse { line: 1, message: format!("expected header `{TRACE_HEADER}`") });
    }
    let mut out: Vec<Demand> = Vec::new();
    for record in reader.deserialize::<TraceRow>() {
        let (line, row) = match record {
            Ok(row) => (out.len() + 2, row),
            Err(e) => {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(out.len() + 2);
                return Err(TrafficError::Parse { line, message: e.to_string() });
            }
        };
        let bad = |m: &str| TrafficError::Parse { line, message: m.to_string() };
        if !(row.arrival_s >= 0.0 && row.arrival_s.is_finite()) {
            return Err(bad("arrival_s must be non-negative"));
        }
        if !(row.holding_s > 0.0 && row.holding_s.is_finite()) {
            return Err(bad("holding_s must be positive"));
        }
        if row.src == row.dst {
            return Err(bad("src and dst must differ"));
        }
        let bandwidth = Bandwidth::from_mbps(row.bandwidth_mbps).map_err(|e| bad(&e.to_string()))?;
        if bandwidth.is_zero() {
            return Err(bad("bandwidth_mbps must be positive"));
        }
        let arrival = SimTime::from_secs(row.arrival_s);
        if out.last().is_some_and(|d| d.arrival > arrival) {
            return Err(TrafficError::UnsortedInput { line, arrival_s: row.arrival_s });
        }
        let holding = SimTime::from_micros(SimTime::from_secs(row.holding_s).micros().max(1));
        out.push(Demand { tc: row.tc, bandwidth, src: row.src, dst: row.dst, arrival, holding });
    }
    Ok(out)
}

/// Writes demands in the trace format read by [`load_trace`].
pub fn write_trace(demands: &[Demand], out: impl std::io::Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for d in demands {
        w.serialize(TraceRow {
            arrival_s: d.arrival.as_secs(),
            tc: d.tc,
            bandwidth_mbps: d.bandwidth.as_mbps(),
            src: d.src,
            dst: d.dst,
            holding_s: d.holding.as_secs(),
        })?;
    }
    if demands.is_empty() {
        w.write_record(TRACE_HEADER.split(','))?;
    }
    w.flush()?;
    Ok(())
}
