//! Counters and round-robin metric series with CSV/JSON export.
//!
//! Series ids:
//! - `link.<src>-<dst>.util` time-weighted utilization, percent (AVERAGE)
//! - `link.<src>-<dst>.util_max` peak utilization, percent (MAX)
//! - `link.<src>-<dst>.tc<c>.reserved` reserved Mb/s at slot end (LAST)
//! - `tc<c>.requests|grants|blocks|preemptions` cumulative counts (LAST)
//! - `tc<c>.blocking` cumulative blocking probability (LAST, empty until
//!   the class has a request)
//! - `active` active LSPs at slot end (LAST)

use std::collections::{BTreeMap, VecDeque};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Bandwidth, BlockReason, Decision, LinkId, LinkSpec, SimTime, TrafficClass};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("window is empty or outside the recorded horizon")]
    EmptyWindow,
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("unknown link {0}")]
    UnknownLink(LinkId),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Consolidation {
    Average,
    Max,
    Last,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsConfig {
    pub step: SimTime,
    pub slots: usize,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig { step: SimTime::from_secs(60.0), slots: 4096 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub start: SimTime,
    /// `None` when the gauge was undefined for the whole slot.
    pub value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
struct Accumulator {
    start: SimTime,
    since: SimTime,
    area: f64,
    covered: u64,
    max: Option<f64>,
}

/// A piecewise-constant gauge consolidated into fixed steps, keeping the
/// most recent `capacity` slots.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricSeries {
    id: String,
    consolidation: Consolidation,
    step: SimTime,
    capacity: usize,
    slots: VecDeque<Slot>,
    value: Option<f64>,
    acc: Accumulator,
}

/// Immutable copy of a series ring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesSnapshot {
    pub id: String,
    pub consolidation: Consolidation,
    pub step: SimTime,
    pub slots: Vec<Slot>,
}

impl MetricSeries {
    pub fn new(id: impl Into<String>, consolidation: Consolidation, step: SimTime, capacity: usize, initial: Option<f64>) -> Self {
        assert!(capacity > 0 && step > SimTime::ZERO, "series needs a positive step and capacity");
        MetricSeries {
            id: id.into(),
            consolidation,
            step,
            capacity,
            slots: VecDeque::with_capacity(capacity.min(1024)),
            value: initial,
            acc: Accumulator { start: SimTime::ZERO, since: SimTime::ZERO, area: 0.0, covered: 0, max: initial },
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    fn integrate(&mut self, t: SimTime) {
        let dt = t.micros().saturating_sub(self.acc.since.micros());
        if let Some(v) = self.value {
            self.acc.area += v * dt as f64;
            self.acc.covered += dt;
        }
        self.acc.since = self.acc.since.max(t);
    }

    /// Changes the gauge at time `t`, which must not precede earlier updates.
    pub fn set(&mut self, t: SimTime, value: Option<f64>) {
        self.integrate(t);
        self.value = value;
        if let Some(v) = value {
            self.acc.max = Some(self.acc.max.map_or(v, |m| m.max(v)));
        }
    }

    /// Closes the open slot at `end` and opens the next one there.
    pub fn close(&mut self, end: SimTime) {
        self.integrate(end);
        let value = match self.consolidation {
            Consolidation::Average => (self.acc.covered > 0).then(|| self.acc.area / self.acc.covered as f64),
            Consolidation::Max => self.acc.max,
            Consolidation::Last => self.value,
        };
        if self.slots.len() == self.capacity {
            self.slots.pop_front();
        }
        self.slots.push_back(Slot { start: self.acc.start, value });
        self.acc = Accumulator { start: end, since: end, area: 0.0, covered: 0, max: self.value };
    }

    pub fn snapshot(&self) -> SeriesSnapshot {
        SeriesSnapshot { id: self.id.clone(), consolidation: self.consolidation, step: self.step, slots: self.slots.iter().cloned().collect() }
    }

    pub fn slots(&self) -> impl Iterator<Item = &Slot> {
        self.slots.iter()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub requests: u64,
    pub grants: u64,
    pub blocks_no_route: u64,
    pub blocks_constraint: u64,
    pub blocks_capacity: u64,
    pub preemptions: u64,
    pub devolutions: u64,
}

impl Counters {
    pub fn blocks(&self) -> u64 {
        self.blocks_no_route + self.blocks_constraint + self.blocks_capacity
    }

    pub fn block(&mut self, reason: BlockReason) {
        match reason {
            BlockReason::NoRoute => self.blocks_no_route += 1,
            BlockReason::Constraint => self.blocks_constraint += 1,
            BlockReason::Capacity => self.blocks_capacity += 1,
        }
    }

    pub fn blocking_probability(&self) -> Option<f64> {
        (self.requests > 0).then(|| self.blocks() as f64 / self.requests as f64)
    }

    pub fn preemption_rate(&self) -> Option<f64> {
        (self.grants > 0).then(|| self.preemptions as f64 / self.grants as f64)
    }

    pub fn add(&mut self, o: &Counters) {
        self.requests += o.requests;
        self.grants += o.grants;
        self.blocks_no_route += o.blocks_no_route;
        self.blocks_constraint += o.blocks_constraint;
        self.blocks_capacity += o.blocks_capacity;
        self.preemptions += o.preemptions;
        self.devolutions += o.devolutions;
    }
}

/// Counters per `(link, tc)` plus per-class and total rollups.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSet {
    pub per_link: Vec<Vec<Counters>>,
    pub per_class: Vec<Counters>,
    pub total: Counters,
}

impl CounterSet {
    pub fn new(links: usize, classes: usize) -> Self {
        CounterSet { per_link: vec![vec![Counters::default(); classes]; links], per_class: vec![Counters::default(); classes], total: Counters::default() }
    }
}

/// Inputs from the engine.
#[derive(Clone, Debug)]
pub enum StatsEvent<'a> {
    /// A request decided. `links` is the attempted path (empty without a
    /// route); `rejected_at` is the link that refused a blocked request.
    Decision { tc: TrafficClass, links: &'a [LinkId], decision: &'a Decision, rejected_at: Option<LinkId> },
    /// An LSP torn down by preemption.
    Preempted { tc: TrafficClass, links: &'a [LinkId] },
    /// LSPs of other classes re-charged on `link` to admit a class-`tc` request.
    Devolved { tc: TrafficClass, link: LinkId, lsps: u64 },
    /// New reservation totals on a link.
    Reserved { link: LinkId, by_class: &'a [Bandwidth] },
    /// Active LSP count changed.
    Active { count: usize },
}

#[derive(Clone, Debug, PartialEq)]
struct Integral {
    capacity: Bandwidth,
    /// `(time, reserved millis, integral of reserved millis·µs up to time)`.
    log: Vec<(SimTime, u64, u128)>,
}

impl Integral {
    fn at(&self, t: SimTime) -> u128 {
        let i = self.log.partition_point(|&(s, _, _)| s <= t);
        if i == 0 {
            return 0;
        }
        let (s, r, acc) = self.log[i - 1];
        acc + r as u128 * (t.micros() - s.micros()) as u128
    }

    fn set(&mut self, t: SimTime, reserved: u64) {
        let last = self.log.last_mut().expect("log starts with an entry at zero");
        if last.0 == t {
            last.1 = reserved;
        } else {
            let acc = last.2 + last.1 as u128 * (t.micros() - last.0.micros()) as u128;
            self.log.push((t, reserved, acc));
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StatsStore {
    cfg: StatsConfig,
    links: Vec<(LinkSpec, Integral)>,
    classes: usize,
    counters: CounterSet,
    series: BTreeMap<String, MetricSeries>,
    now: SimTime,
    closed_until: SimTime,
}

fn link_tag(l: &LinkSpec) -> String {
    format!("link.{}-{}", l.src, l.dst)
}

impl StatsStore {
    pub fn new(cfg: StatsConfig, links: &[LinkSpec], classes: usize) -> Self {
        let mut series = BTreeMap::new();
        let mut add = |id: String, c, init| {
            series.insert(id.clone(), MetricSeries::new(id, c, cfg.step, cfg.slots, init));
        };
        for l in links {
            let tag = link_tag(l);
            add(format!("{tag}.util"), Consolidation::Average, Some(0.0));
            add(format!("{tag}.util_max"), Consolidation::Max, Some(0.0));
            for c in 0..classes {
                add(format!("{tag}.tc{c}.reserved"), Consolidation::Last, Some(0.0));
            }
        }
        for c in 0..classes {
            for k in ["requests", "grants", "blocks", "preemptions"] {
                add(format!("tc{c}.{k}"), Consolidation::Last, Some(0.0));
            }
            add(format!("tc{c}.blocking"), Consolidation::Last, None);
        }
        add("active".into(), Consolidation::Last, Some(0.0));
        StatsStore {
            links: links.iter().map(|l| (l.clone(), Integral { capacity: l.capacity, log: vec![(SimTime::ZERO, 0, 0)] })).collect(),
            classes,
            counters: CounterSet::new(links.len(), classes),
            series,
            now: SimTime::ZERO,
            closed_until: SimTime::ZERO,
            cfg,
        }
    }

    pub fn config(&self) -> &StatsConfig {
        &self.cfg
    }

    pub fn counters(&self) -> &CounterSet {
        &self.counters
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// End of the last closed slot; every slot starting before it is final.
    pub fn closed_until(&self) -> SimTime {
        self.closed_until
    }

    fn gauge(&mut self, id: &str, value: Option<f64>) {
        let now = self.now;
        self.series.get_mut(id).expect("series registered at construction").set(now, value);
    }

    fn class_gauges(&mut self, tc: TrafficClass) {
        let c = self.counters.per_class[tc].clone();
        self.gauge(&format!("tc{tc}.requests"), Some(c.requests as f64));
        self.gauge(&format!("tc{tc}.grants"), Some(c.grants as f64));
        self.gauge(&format!("tc{tc}.blocks"), Some(c.blocks() as f64));
        self.gauge(&format!("tc{tc}.preemptions"), Some(c.preemptions as f64));
        self.gauge(&format!("tc{tc}.blocking"), c.blocking_probability());
    }

    /// Records an engine event at time `t` (nondecreasing across calls).
    pub fn record(&mut self, t: SimTime, event: StatsEvent<'_>) {
        debug_assert!(t >= self.now, "stats time went backwards");
        self.now = self.now.max(t);
        match event {
            StatsEvent::Decision { tc, links, decision, rejected_at } => {
                let cs = &mut self.counters;
                for bucket in [&mut cs.per_class[tc], &mut cs.total] {
                    bucket.requests += 1;
                    match decision {
                        Decision::Blocked { block_reason } => bucket.block(*block_reason),
                        _ => bucket.grants += 1,
                    }
                }
                for &l in links {
                    let b = &mut cs.per_link[l][tc];
                    b.requests += 1;
                    match decision {
                        Decision::Blocked { block_reason } if rejected_at == Some(l) => b.block(*block_reason),
                        Decision::Blocked { .. } => {}
                        _ => b.grants += 1,
                    }
                }
                self.class_gauges(tc);
            }
            StatsEvent::Preempted { tc, links } => {
                self.counters.per_class[tc].preemptions += 1;
                self.counters.total.preemptions += 1;
                for &l in links {
                    self.counters.per_link[l][tc].preemptions += 1;
                }
                self.class_gauges(tc);
            }
            StatsEvent::Devolved { tc, link, lsps } => {
                self.counters.per_class[tc].devolutions += lsps;
                self.counters.total.devolutions += lsps;
                self.counters.per_link[link][tc].devolutions += lsps;
            }
            StatsEvent::Reserved { link, by_class } => {
                let total: Bandwidth = by_class.iter().sum();
                let now = self.now;
                let (spec, integral) = &mut self.links[link];
                integral.set(now, total.millis());
                let pct = 100.0 * total.millis() as f64 / spec.capacity.millis() as f64;
                let tag = link_tag(spec);
                self.gauge(&format!("{tag}.util"), Some(pct));
                self.gauge(&format!("{tag}.util_max"), Some(pct));
                for (c, b) in by_class.iter().enumerate().take(self.classes) {
                    self.gauge(&format!("{tag}.tc{c}.reserved"), Some(b.as_mbps()));
                }
            }
            StatsEvent::Active { count } => self.gauge("active", Some(count as f64)),
        }
    }

    /// Closes every series' open slot at `t`.
    pub fn tick(&mut self, t: SimTime) {
        if t <= self.closed_until {
            return;
        }
        self.now = self.now.max(t);
        for s in self.series.values_mut() {
            s.close(t);
        }
        self.closed_until = t;
    }

    /// Time-weighted mean utilization of `link` over `[from, to)`, percent.
    pub fn utilization(&self, link: LinkId, from: SimTime, to: SimTime) -> Result<f64, StatsError> {
        let (_, integral) = self.links.get(link).ok_or(StatsError::UnknownLink(link))?;
        if from >= to || to > self.now {
            return Err(StatsError::EmptyWindow);
        }
        let area = integral.at(to) - integral.at(from);
        let span = (to.micros() - from.micros()) as u128 * integral.capacity.millis() as u128;
        Ok(100.0 * area as f64 / span as f64)
    }

    pub fn series_ids(&self) -> impl Iterator<Item = &str> {
        self.series.keys().map(String::as_str)
    }

    pub fn series_snapshot(&self, id: &str) -> Result<SeriesSnapshot, StatsError> {
        self.series.get(id).map(MetricSeries::snapshot).ok_or_else(|| StatsError::UnknownMetric(id.to_string()))
    }

    pub fn snapshots(&self) -> Vec<SeriesSnapshot> {
        self.series.values().map(MetricSeries::snapshot).collect()
    }

    /// Slots that start at or after `since`, across all series.
    pub fn slots_since(&self, since: SimTime) -> Vec<SeriesSnapshot> {
        self.series
            .values()
            .map(|s| {
                let mut snap = s.snapshot();
                snap.slots.retain(|sl| sl.start >= since);
                snap
            })
            .collect()
    }

    pub fn link_specs(&self) -> impl Iterator<Item = &LinkSpec> {
        self.links.iter().map(|(l, _)| l)
    }
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    metric_id: String,
    slot_start_s: f64,
    value: Option<f64>,
}

/// Writes `metric_id,slot_start_s,value` rows; undefined values are empty.
pub fn write_series_csv(series: &[SeriesSnapshot], out: impl Write) -> Result<(), StatsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["metric_id", "slot_start_s", "value"])?;
    for s in series {
        for slot in &s.slots {
            w.serialize((&s.id, slot.start.as_secs(), slot.value))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Readback of [`write_series_csv`], grouped by metric id in file order.
pub fn read_series_csv(input: impl Read) -> Result<Vec<(String, Vec<Slot>)>, StatsError> {
    let mut out: Vec<(String, Vec<Slot>)> = Vec::new();
    for row in csv::Reader::from_reader(input).deserialize::<CsvRow>() {
        let row = row?;
        let slot = Slot { start: SimTime::from_secs(row.slot_start_s), value: row.value };
        match out.last_mut() {
            Some((id, slots)) if *id == row.metric_id => slots.push(slot),
            _ => out.push((row.metric_id, vec![slot])),
        }
    }
    Ok(out)
}
