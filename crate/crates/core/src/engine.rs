//! Discrete-event core: scenarios, the event queue, LSP lifecycle across
//! multi-link paths, reconfiguration events and multi-run execution.
//!
//! Events are ordered by `(time, rank, insertion)`. Ranks: control events
//! (profile, model and constraint switches) 0, statistics ticks 1,
//! departures 2, arrivals 3. So reconfiguration at `t` applies to arrivals
//! at `t`, and a departure at `t` frees bandwidth for them. The `seq` of a
//! trace record is its processing ordinal.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{validate_constraints, Bandwidth, BcVector, BlockReason, Decision, LinkId, LinkSpec, LspId, LspRequest, NodeId, SimTime, TrafficClass};
use crate::kernel::{Admission, GbamConfig, LinkState, SwitchPolicy, SwitchReport};
use crate::routing;
use crate::stats::{write_series_csv, Counters, StatsConfig, StatsError, StatsEvent, StatsStore};
use crate::topology::{RouteMatrix, Topology};
use crate::traffic::{ClassStream, ClassTrafficSpec, Demand, Distribution, ProfileSchedule};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid scenario: {0}")]
    ScenarioInvalid(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("simulation already finished")]
    Finished,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RoutingMode {
    /// Explicit topology routes, plus minimum-hop paths for the other pairs
    /// when `fill_min_hop` is set.
    Static { fill_min_hop: bool },
    Cspf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TrafficSource {
    Streams { classes: Vec<ClassTrafficSpec> },
    /// Class specs give holding and bandwidth shapes; the schedule sets
    /// each phase's arrival rate.
    Profile { classes: Vec<ClassTrafficSpec>, schedule: ProfileSchedule },
    Trace { demands: Vec<Demand> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LinkSelector {
    All,
    Link { src: NodeId, dst: NodeId },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ControlAction {
    /// New model, optionally with new constraints for every link.
    Model {
        config: GbamConfig,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bc: Option<BcVector>,
    },
    Bc { selector: LinkSelector, bc: BcVector },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledSwitch {
    pub at: SimTime,
    pub action: ControlAction,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopCondition {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_time: Option<SimTime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_lsps: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub topology: Topology,
    pub bam: GbamConfig,
    pub routing: RoutingMode,
    pub traffic: TrafficSource,
    #[serde(default)]
    pub switches: Vec<ScheduledSwitch>,
    #[serde(default)]
    pub switch_policy: SwitchPolicy,
    pub stop: StopCondition,
    /// One seed per run.
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub stats: StatsConfig,
    #[serde(default)]
    pub trace: bool,
}

impl Scenario {
    /// Gives links without constraints the model's default vector.
    pub fn with_default_constraints(mut self) -> Self {
        let c = self.bam.class_count;
        self.topology.set_class_count(c);
        for id in 0..self.topology.links().len() {
            let l = self.topology.link_mut(id);
            if l.bc.0.is_empty() {
                l.bc = BcVector::default_for(self.bam.model, l.capacity, c);
            }
        }
        self
    }

    pub fn class_specs(&self) -> &[ClassTrafficSpec] {
        match &self.traffic {
            TrafficSource::Streams { classes } | TrafficSource::Profile { classes, .. } => classes,
            TrafficSource::Trace { .. } => &[],
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::ScenarioInvalid(m));
        let c = self.bam.class_count;
        self.bam.validate().map_err(|e| EngineError::ScenarioInvalid(e.to_string()))?;
        if self.seeds.is_empty() {
            return bad("at least one seed (run) is required".into());
        }
        if self.stop.max_time.is_none() && self.stop.max_lsps.is_none() {
            return bad("a stop condition is required".into());
        }
        if self.stats.slots == 0 || self.stats.step == SimTime::ZERO {
            return bad("statistics step and slot count must be positive".into());
        }
        if let Some(tc) = self.topology.class_count().filter(|&t| t != c) {
            return bad(format!("topology declares {tc} classes, model has {c}"));
        }
        for l in self.topology.links() {
            validate_constraints(&self.bam, l).map_err(|e| EngineError::ScenarioInvalid(format!("link {}->{}: {e}", l.src, l.dst)))?;
        }
        let n = self.topology.node_count();
        let mut seen = vec![false; c];
        for s in self.class_specs() {
            if s.tc >= c {
                return bad(format!("traffic for class {} but only {c} classes", s.tc));
            }
            if std::mem::replace(&mut seen[s.tc], true) {
                return bad(format!("class {} has two traffic specs", s.tc));
            }
            s.validate(n).map_err(|e| EngineError::ScenarioInvalid(format!("class {}: {e}", s.tc)))?;
        }
        match &self.traffic {
            TrafficSource::Profile { classes, schedule } => {
                schedule.validate(Some(c)).map_err(|e| EngineError::ScenarioInvalid(e.to_string()))?;
                if classes.is_empty() {
                    return bad("profile traffic needs class specs for holding and bandwidth".into());
                }
            }
            TrafficSource::Trace { demands } => {
                for (i, d) in demands.iter().enumerate() {
                    if d.tc >= c || d.src >= n || d.dst >= n || d.src == d.dst || d.bandwidth.is_zero() {
                        return bad(format!("trace row {} is invalid for this topology", i + 1));
                    }
                    if i > 0 && demands[i - 1].arrival > d.arrival {
                        return bad(format!("trace row {} is out of order", i + 1));
                    }
                }
            }
            TrafficSource::Streams { .. } => {}
        }
        let mut cfg = self.bam;
        let mut specs: Vec<LinkSpec> = self.topology.links().to_vec();
        let mut last = SimTime::ZERO;
        for sw in &self.switches {
            if sw.at < last {
                return bad("scheduled switches must be in time order".into());
            }
            last = sw.at;
            check_action(&self.topology, &mut cfg, &mut specs, &sw.action).map_err(|e| EngineError::ScenarioInvalid(e.to_string()))?;
        }
        Ok(())
    }
}

/// Bandwidth constraints of the reference overload scenario: pools of
/// 30/30/40 percent of capacity, expressed for `model`.
pub fn table1_constraints(model: crate::kernel::BamModel, capacity: Bandwidth) -> BcVector {
    let share = |pct: u64| Bandwidth::from_millis(capacity.millis() * pct / 100);
    match model {
        crate::kernel::BamModel::Rdm => BcVector(vec![share(100), share(70), share(40)]),
        _ => BcVector(vec![share(30), share(30), share(40)]),
    }
}

impl Scenario {
    /// The six-phase reference profile on PTP-2n-1e with three classes:
    /// bandwidth of 1 or 2 Mb/s, exponential holding of mean 300 s,
    /// Poisson arrivals from 0 to 1, stopping at the end of phase 6.
    pub fn table1(bam: GbamConfig, seeds: Vec<u64>) -> Scenario {
        let topology = Topology::builtin("PTP-2n-1e").expect("builtin").with_constraints(3, |l| table1_constraints(bam.model, l.capacity));
        let capacity = topology.link(0).capacity;
        let classes = (0..3)
            .map(|tc| ClassTrafficSpec {
                tc,
                interarrival: Distribution::poisson(1.0),
                holding: Distribution::Exponential { mean: 300.0 },
                bandwidth: crate::traffic::BandwidthSpec::UniformChoice { values: (1..=2).map(Bandwidth::mbps).collect() },
                endpoints: crate::traffic::Endpoints::Fixed { src: 0, dst: 1 },
            })
            .collect();
        let schedule = ProfileSchedule::table1(capacity);
        Scenario {
            topology,
            bam,
            routing: RoutingMode::Static { fill_min_hop: true },
            stop: StopCondition { max_time: Some(schedule.end()), max_lsps: None },
            traffic: TrafficSource::Profile { classes, schedule },
            switches: vec![],
            switch_policy: SwitchPolicy::Grandfather,
            seeds,
            stats: StatsConfig::default(),
            trace: false,
        }
    }
}

/// Validates `action` against the current model and link specs and
/// advances them as if it were applied.
fn check_action(topology: &Topology, cfg: &mut GbamConfig, specs: &mut [LinkSpec], action: &ControlAction) -> Result<(), EngineError> {
    let invalid = |m: String| EngineError::InvalidConfig(m);
    match action {
        ControlAction::Model { config, bc } => {
            config.validate().map_err(|e| invalid(e.to_string()))?;
            if config.class_count != cfg.class_count {
                return Err(invalid(format!("class count cannot change during a run ({} -> {})", cfg.class_count, config.class_count)));
            }
            for s in specs.iter_mut() {
                if let Some(bc) = bc {
                    s.bc = bc.clone();
                }
                validate_constraints(config, s).map_err(|e| invalid(format!("link {}->{}: {e}", s.src, s.dst)))?;
            }
            *cfg = *config;
        }
        ControlAction::Bc { selector, bc } => {
            let ids = select_links(topology, selector)?;
            for id in ids {
                let s = &mut specs[id];
                s.bc = bc.clone();
                validate_constraints(cfg, s).map_err(|e| invalid(format!("link {}->{}: {e}", s.src, s.dst)))?;
            }
        }
    }
    Ok(())
}

fn select_links(topology: &Topology, selector: &LinkSelector) -> Result<Vec<LinkId>, EngineError> {
    match *selector {
        LinkSelector::All => Ok((0..topology.links().len()).collect()),
        LinkSelector::Link { src, dst } => topology
            .link_between(src, dst)
            .map(|l| vec![l])
            .ok_or_else(|| EngineError::InvalidConfig(format!("no link {src}->{dst}"))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Key {
    time: SimTime,
    rank: u8,
    seq: u64,
}

const RANK_CONTROL: u8 = 0;
const RANK_TICK: u8 = 1;
const RANK_DEPARTURE: u8 = 2;
const RANK_ARRIVAL: u8 = 3;

#[derive(Clone, Debug)]
enum Event {
    Arrival(Demand),
    Departure(LspId),
    Profile(usize),
    Control(ControlAction),
    Tick,
}

/// One processed event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: SimTime,
    pub seq: u64,
    #[serde(flatten)]
    pub event: TraceEvent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TraceEvent {
    Arrival {
        request: LspRequest,
        decision: Decision,
        /// LSPs re-charged to other pools to make room, per path link.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        devolved: Vec<LspId>,
    },
    Departure { lsp: LspId },
    ProfileSwitch { phase: usize },
    ModelSwitch {
        config: GbamConfig,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bc: Option<BcVector>,
        report: SwitchReport,
    },
    BcRetune { selector: LinkSelector, bc: BcVector, report: SwitchReport },
    StatsTick {},
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchRecord {
    pub time: SimTime,
    pub action: ControlAction,
    pub report: SwitchReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub index: usize,
    pub start: SimTime,
    pub end: SimTime,
    pub totals: Counters,
    pub per_class: Vec<Counters>,
    /// Offered load per class, Mb/s.
    pub offered_load: Vec<f64>,
    /// Mean utilization per link over the phase, percent.
    pub utilization: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSummary {
    pub src: NodeId,
    pub dst: NodeId,
    pub capacity: Bandwidth,
    pub mean_utilization: Option<f64>,
}

/// Outcome of one run. Serializes to the JSON summary; the statistics and
/// trace are exported separately.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub version: u32,
    pub run: usize,
    pub seed: u64,
    pub end_time: SimTime,
    pub events: u64,
    pub totals: Counters,
    pub per_class: Vec<Counters>,
    pub blocking_probability: Option<f64>,
    pub preemption_rate: Option<f64>,
    pub class_blocking_probability: Vec<Option<f64>>,
    pub switches: Vec<SwitchRecord>,
    pub links: Vec<LinkSummary>,
    pub phases: Vec<PhaseSummary>,
    #[serde(skip)]
    pub wall_time: Duration,
    #[serde(skip)]
    pub stats: Option<StatsStore>,
    #[serde(skip)]
    pub trace: Vec<TraceRecord>,
}

impl RunReport {
    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn trace_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.trace {
            s.push_str(&serde_json::to_string(r).expect("trace serializes"));
            s.push('\n');
        }
        s
    }

    pub fn series_csv(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        if let Some(stats) = &self.stats {
            write_series_csv(&stats.snapshots(), &mut buf).expect("in-memory write");
        }
        buf
    }

    /// Writes `run<r>-summary.json`, `run<r>-series.csv` and, when traced,
    /// `run<r>-trace.jsonl` into `dir`.
    pub fn export(&self, dir: &Path) -> Result<Vec<PathBuf>, StatsError> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut put = |name: String, bytes: &[u8]| -> Result<(), StatsError> {
            let path = dir.join(name);
            std::fs::File::create(&path)?.write_all(bytes)?;
            written.push(path);
            Ok(())
        };
        put(format!("run{}-summary.json", self.run), self.summary_json().as_bytes())?;
        put(format!("run{}-series.csv", self.run), &self.series_csv())?;
        if !self.trace.is_empty() {
            put(format!("run{}-trace.jsonl", self.run), self.trace_jsonl().as_bytes())?;
        }
        Ok(written)
    }
}

#[derive(Clone, Debug)]
struct ActiveLsp {
    request: LspRequest,
    links: Vec<LinkId>,
    departure: Key,
}

#[derive(Clone, Debug)]
struct PhaseCounters {
    totals: Counters,
    per_class: Vec<Counters>,
}

/// A single run, advanced event by event.
#[derive(Clone, Debug)]
pub struct Simulation {
    scenario: Arc<Scenario>,
    run: usize,
    seed: u64,
    clock: SimTime,
    queue: BTreeMap<Key, Event>,
    next_seq: u64,
    traffic_pending: usize,
    processed: u64,
    states: Vec<LinkState>,
    cfg: GbamConfig,
    routes: RouteMatrix,
    active: BTreeMap<LspId, ActiveLsp>,
    next_id: u64,
    streams: Vec<Option<(ClassStream, ClassTrafficSpec)>>,
    pending: Vec<Option<Key>>,
    phase: usize,
    trace_cursor: usize,
    totals: Counters,
    per_class: Vec<Counters>,
    phases: Vec<PhaseCounters>,
    switches: Vec<SwitchRecord>,
    stats: StatsStore,
    trace: Vec<TraceRecord>,
    keep_trace: bool,
    finished: bool,
    end_time: SimTime,
    started: Instant,
}

impl Simulation {
    pub fn new(scenario: Arc<Scenario>, run: usize) -> Result<Self, EngineError> {
        scenario.validate()?;
        let seed = *scenario.seeds.get(run).ok_or_else(|| EngineError::ScenarioInvalid(format!("no seed for run {run}")))?;
        let topo = &scenario.topology;
        let c = scenario.bam.class_count;
        let states = topo
            .links()
            .iter()
            .map(|l| LinkState::new(l.clone(), scenario.bam))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| EngineError::ScenarioInvalid(e.to_string()))?;
        let routes = match scenario.routing {
            RoutingMode::Static { fill_min_hop: false } => topo.routes().clone(),
            _ => RouteMatrix::min_hop(topo, topo.routes()),
        };
        let phase_count = match &scenario.traffic {
            TrafficSource::Profile { schedule, .. } => schedule.phases.len(),
            _ => 1,
        };
        let mut sim = Simulation {
            run,
            seed,
            clock: SimTime::ZERO,
            queue: BTreeMap::new(),
            next_seq: 0,
            traffic_pending: 0,
            processed: 0,
            states,
            cfg: scenario.bam,
            routes,
            active: BTreeMap::new(),
            next_id: 0,
            streams: vec![None; c],
            pending: vec![None; c],
            phase: 0,
            trace_cursor: 0,
            totals: Counters::default(),
            per_class: vec![Counters::default(); c],
            phases: vec![PhaseCounters { totals: Counters::default(), per_class: vec![Counters::default(); c] }; phase_count],
            switches: Vec::new(),
            stats: StatsStore::new(scenario.stats.clone(), topo.links(), c),
            trace: Vec::new(),
            keep_trace: scenario.trace,
            finished: false,
            end_time: SimTime::ZERO,
            started: Instant::now(),
            scenario: scenario.clone(),
        };
        if let TrafficSource::Profile { schedule, .. } = &scenario.traffic {
            for (k, p) in schedule.phases.iter().enumerate().skip(1) {
                sim.push(p.start, RANK_CONTROL, Event::Profile(k));
            }
        }
        for sw in &scenario.switches {
            sim.push(sw.at, RANK_CONTROL, Event::Control(sw.action.clone()));
        }
        sim.push(scenario.stats.step, RANK_TICK, Event::Tick);
        match &scenario.traffic {
            TrafficSource::Streams { classes } | TrafficSource::Profile { classes, .. } => {
                for s in classes {
                    sim.streams[s.tc] = Some((ClassStream::new(seed, s.tc), s.clone()));
                    sim.draw(s.tc, SimTime::ZERO);
                }
            }
            TrafficSource::Trace { .. } => sim.next_trace_arrival(),
        }
        Ok(sim)
    }

    /// Always records the trace, whatever the scenario says.
    pub fn with_trace(mut self) -> Self {
        self.keep_trace = true;
        self
    }

    fn push(&mut self, time: SimTime, rank: u8, event: Event) -> Key {
        let key = Key { time, rank, seq: self.next_seq };
        self.next_seq += 1;
        if !matches!(event, Event::Tick) {
            self.traffic_pending += 1;
        }
        self.queue.insert(key, event);
        key
    }

    fn unschedule(&mut self, key: Key) -> Option<Event> {
        let ev = self.queue.remove(&key)?;
        if !matches!(ev, Event::Tick) {
            self.traffic_pending -= 1;
        }
        Some(ev)
    }

    fn interarrival(&self, tc: TrafficClass) -> Option<Distribution> {
        let (_, spec) = self.streams[tc].as_ref()?;
        match &self.scenario.traffic {
            TrafficSource::Profile { schedule, .. } => schedule.interarrival(self.phase, spec),
            _ => Some(spec.interarrival.clone()),
        }
    }

    /// Schedules the next generated arrival of class `tc` after `from`.
    fn draw(&mut self, tc: TrafficClass, from: SimTime) {
        let Some(dist) = self.interarrival(tc) else {
            self.pending[tc] = None;
            return;
        };
        let n = self.scenario.topology.node_count();
        let (stream, spec) = self.streams[tc].as_mut().expect("stream exists");
        let demand = stream.next_arrival_with(spec, &dist, from, n);
        let key = self.push(demand.arrival, RANK_ARRIVAL, Event::Arrival(demand));
        self.pending[tc] = Some(key);
    }

    fn next_trace_arrival(&mut self) {
        let scenario = self.scenario.clone();
        if let TrafficSource::Trace { demands } = &scenario.traffic {
            if let Some(d) = demands.get(self.trace_cursor) {
                self.trace_cursor += 1;
                self.push(d.arrival, RANK_ARRIVAL, Event::Arrival(d.clone()));
            }
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn run_index(&self) -> usize {
        self.run
    }

    pub fn clock(&self) -> SimTime {
        self.clock
    }

    pub fn config(&self) -> &GbamConfig {
        &self.cfg
    }

    pub fn link_states(&self) -> &[LinkState] {
        &self.states
    }

    pub fn totals(&self) -> &Counters {
        &self.totals
    }

    pub fn per_class(&self) -> &[Counters] {
        &self.per_class
    }

    pub fn active_count(&self) -> usize {
        self.active.len()
    }

    pub fn events_processed(&self) -> u64 {
        self.processed
    }

    pub fn stats(&self) -> &StatsStore {
        &self.stats
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Time of the next event, if the run would process one.
    pub fn next_event_time(&self) -> Option<SimTime> {
        (!self.finished && !self.stop_reached()).then(|| self.queue.keys().next().map(|k| k.time)).flatten()
    }

    fn stop_reached(&self) -> bool {
        let stop = &self.scenario.stop;
        if stop.max_lsps.is_some_and(|n| self.totals.requests >= n) {
            return true;
        }
        let Some(next) = self.queue.keys().next() else { return true };
        if stop.max_time.is_some_and(|t| next.time > t) {
            return true;
        }
        self.traffic_pending == 0
    }

    fn finalize(&mut self) {
        if self.finished {
            return;
        }
        let stop = &self.scenario.stop;
        let end = match stop.max_time {
            Some(t) if !stop.max_lsps.is_some_and(|n| self.totals.requests >= n) => t.max(self.clock),
            _ => self.clock,
        };
        self.clock = end;
        self.end_time = end;
        self.stats.tick(end);
        self.finished = true;
    }

    /// Processes the next event. Returns `false` once the run is over.
    pub fn step(&mut self) -> bool {
        if self.finished {
            return false;
        }
        if self.stop_reached() {
            self.finalize();
            return false;
        }
        let (key, event) = self.queue.pop_first().expect("stop_reached checks for events");
        if !matches!(event, Event::Tick) {
            self.traffic_pending -= 1;
        }
        self.clock = key.time;
        let record = match event {
            Event::Arrival(d) => self.handle_arrival(d),
            Event::Departure(id) => self.handle_departure(id),
            Event::Profile(k) => self.handle_profile(k),
            Event::Control(action) => self.handle_control(action).expect("control actions are validated before scheduling"),
            Event::Tick => {
                self.stats.tick(key.time);
                self.push(key.time.saturating_add(self.scenario.stats.step), RANK_TICK, Event::Tick);
                TraceEvent::StatsTick {}
            }
        };
        if self.keep_trace {
            self.trace.push(TraceRecord { time: key.time, seq: self.processed, event: record });
        }
        self.processed += 1;
        true
    }

    /// Processes up to `n` events, returning how many ran.
    pub fn step_n(&mut self, n: u64) -> u64 {
        let mut done = 0;
        while done < n && self.step() {
            done += 1;
        }
        done
    }

    /// Processes every event strictly before `t`, then holds the clock at `t`.
    pub fn advance_to(&mut self, t: SimTime) {
        while !self.finished {
            if self.stop_reached() {
                self.finalize();
                return;
            }
            match self.queue.keys().next() {
                Some(k) if k.time < t => {
                    self.step();
                }
                _ => break,
            }
        }
        if !self.finished {
            let cap = self.scenario.stop.max_time.unwrap_or(SimTime::MAX);
            self.clock = self.clock.max(t.min(cap));
        }
    }

    pub fn run_to_end(&mut self) {
        while self.step() {}
    }

    /// Schedules a control action at the current clock, ahead of every other
    /// pending event at that time except earlier control events.
    pub fn inject(&mut self, action: ControlAction) -> Result<(), EngineError> {
        if self.finished {
            return Err(EngineError::Finished);
        }
        let mut cfg = self.cfg;
        let mut specs: Vec<LinkSpec> = self.states.iter().map(|s| s.spec().clone()).collect();
        check_action(&self.scenario.topology, &mut cfg, &mut specs, &action)?;
        let clock = self.clock;
        self.push(clock, RANK_CONTROL, Event::Control(action));
        Ok(())
    }

    /// Injects `action` and processes events until it has been applied.
    pub fn apply_now(&mut self, action: ControlAction) -> Result<SwitchReport, EngineError> {
        self.inject(action)?;
        let target = self.next_seq - 1;
        let before = self.switches.len();
        while self.queue.keys().any(|k| k.seq == target) {
            if !self.step() {
                return Err(EngineError::Finished);
            }
        }
        Ok(self.switches.get(before..).and_then(|s| s.last()).map(|s| s.report.clone()).unwrap_or_default())
    }

    /// Finishes the run, then releases every remaining LSP through its
    /// departure, in order. Afterwards all link states are empty.
    pub fn drain(&mut self) {
        self.finalize();
        let departures: Vec<(Key, LspId)> = self
            .queue
            .iter()
            .filter_map(|(k, e)| match e {
                Event::Departure(id) => Some((*k, *id)),
                _ => None,
            })
            .collect();
        for (key, id) in departures {
            self.unschedule(key);
            self.clock = self.clock.max(key.time);
            self.handle_departure(id);
        }
    }

    fn phase_index(&self) -> usize {
        match &self.scenario.traffic {
            TrafficSource::Profile { schedule, .. } => schedule.phase_at(self.clock),
            _ => 0,
        }
    }

    fn by_class(&self, link: LinkId) -> Vec<Bandwidth> {
        (0..self.cfg.class_count).map(|c| self.states[link].reserved_by_class(c)).collect()
    }

    fn publish_links(&mut self, links: &[LinkId]) {
        for &l in links {
            let by_class = self.by_class(l);
            self.stats.record(self.clock, StatsEvent::Reserved { link: l, by_class: &by_class });
        }
    }

    fn route(&self, req: &LspRequest) -> Option<Vec<NodeId>> {
        let topo = &self.scenario.topology;
        match self.scenario.routing {
            RoutingMode::Static { .. } => self.routes.static_route(req.src, req.dst).map(<[NodeId]>::to_vec),
            RoutingMode::Cspf => routing::cspf(topo, &self.states, req.src, req.dst, req.tc, req.bandwidth).or_else(|| {
                // Nothing fits without preemption: try the unconstrained
                // shortest path so admission can decide on preemption.
                self.cfg.preemption.then(|| self.routes.static_route(req.src, req.dst).map(<[NodeId]>::to_vec)).flatten()
            }),
        }
    }

    fn count_decision(&mut self, tc: TrafficClass, decision: &Decision) {
        let phase = self.phase_index();
        let buckets = [&mut self.totals, &mut self.per_class[tc]];
        let p = &mut self.phases[phase];
        for b in buckets.into_iter().chain([&mut p.totals, &mut p.per_class[tc]]) {
            b.requests += 1;
            match decision {
                Decision::Blocked { block_reason } => b.block(*block_reason),
                _ => b.grants += 1,
            }
        }
    }

    fn count_preemption(&mut self, tc: TrafficClass) {
        let phase = self.phase_index();
        let p = &mut self.phases[phase];
        for b in [&mut self.totals, &mut self.per_class[tc], &mut p.totals, &mut p.per_class[tc]] {
            b.preemptions += 1;
        }
    }

    fn count_devolutions(&mut self, tc: TrafficClass, n: u64) {
        let phase = self.phase_index();
        let p = &mut self.phases[phase];
        for b in [&mut self.totals, &mut self.per_class[tc], &mut p.totals, &mut p.per_class[tc]] {
            b.devolutions += n;
        }
    }

    fn block(&mut self, req: LspRequest, links: &[LinkId], reason: BlockReason, at: Option<LinkId>) -> TraceEvent {
        let decision = Decision::Blocked { block_reason: reason };
        self.count_decision(req.tc, &decision);
        self.stats.record(self.clock, StatsEvent::Decision { tc: req.tc, links, decision: &decision, rejected_at: at });
        TraceEvent::Arrival { request: req, decision, devolved: vec![] }
    }

    /// Tears an active LSP down on every link it crosses.
    fn tear_down(&mut self, id: LspId, preempted: bool) -> ActiveLsp {
        let lsp = self.active.remove(&id).expect("torn-down LSP is active");
        for &l in &lsp.links {
            self.states[l].release(id).expect("active LSP holds every path link");
        }
        self.unschedule(lsp.departure);
        if preempted {
            self.count_preemption(lsp.request.tc);
            self.stats.record(self.clock, StatsEvent::Preempted { tc: lsp.request.tc, links: &lsp.links });
        }
        lsp
    }

    fn handle_arrival(&mut self, demand: Demand) -> TraceEvent {
        let tc = demand.tc;
        if self.scenario.class_specs().iter().any(|s| s.tc == tc) && self.pending[tc].is_some() {
            self.draw(tc, demand.arrival);
        } else if matches!(self.scenario.traffic, TrafficSource::Trace { .. }) {
            self.next_trace_arrival();
        }
        self.next_id += 1;
        let req = demand.into_request(LspId(self.next_id));
        let bw = req.bandwidth;
        let topo = self.scenario.topology.clone();
        let Some(path) = self.route(&req) else {
            return self.block(req, &[], BlockReason::NoRoute, None);
        };
        let links = topo.path_links(&path).expect("routes follow topology links");

        // Phase 1: decide on every link against the current state.
        let mut deficits: Vec<Option<BlockReason>> = vec![None; links.len()];
        for (i, &l) in links.iter().enumerate() {
            match self.states[l].check_admission(tc, bw).expect("class validated") {
                Admission::Fit(_) => {}
                Admission::NeedsPreemption(d) => {
                    deficits[i] = Some(if d.capacity_shortfall.is_zero() { BlockReason::Constraint } else { BlockReason::Capacity });
                }
                Admission::Reject(reason) => return self.block(req, &links, reason, Some(l)),
            }
        }
        let needs_preemption = deficits.iter().any(Option::is_some);
        let mut victims: Vec<LspId> = Vec::new();
        if needs_preemption {
            let mut trial: Vec<LinkState> = links.iter().map(|&l| self.states[l].clone()).collect();
            for i in 0..links.len() {
                let Some(chosen) = trial[i].select_preemption_victims(tc, bw) else {
                    let reason = deficits[i].unwrap_or(BlockReason::Constraint);
                    return self.block(req, &links, reason, Some(links[i]));
                };
                for v in chosen {
                    for t in trial.iter_mut() {
                        if t.lsp(v).is_some() {
                            t.release(v).expect("present");
                        }
                    }
                    victims.push(v);
                }
            }
        }

        // Phase 2: preempt, then admit with devolution plans on each link.
        let mut touched: Vec<LinkId> = links.clone();
        for &v in &victims {
            let lsp = self.tear_down(v, true);
            touched.extend(lsp.links.iter().filter(|l| !links.contains(l)));
        }
        let mut devolved = Vec::new();
        for &l in &links {
            let plan = match self.states[l].check_admission(tc, bw).expect("class validated") {
                Admission::Fit(plan) => plan,
                other => unreachable!("link {l} must fit after preemption, got {other:?}"),
            };
            let mut moved: Vec<LspId> = plan.recharges.iter().map(|r| r.lsp).collect();
            moved.sort_unstable();
            moved.dedup();
            if !moved.is_empty() {
                self.count_devolutions(tc, moved.len() as u64);
                self.stats.record(self.clock, StatsEvent::Devolved { tc, link: l, lsps: moved.len() as u64 });
                devolved.extend(moved);
            }
            self.states[l].admit(req.id, tc, self.clock, &plan).expect("fresh plan applies");
        }
        let departure = self.push(self.clock.saturating_add(req.holding), RANK_DEPARTURE, Event::Departure(req.id));
        self.active.insert(req.id, ActiveLsp { request: req.clone(), links: links.clone(), departure });
        let decision = if victims.is_empty() {
            Decision::Granted { path }
        } else {
            Decision::GrantedWithPreemption { path, victims }
        };
        self.count_decision(tc, &decision);
        self.stats.record(self.clock, StatsEvent::Decision { tc, links: &links, decision: &decision, rejected_at: None });
        touched.sort_unstable();
        touched.dedup();
        self.publish_links(&touched);
        self.stats.record(self.clock, StatsEvent::Active { count: self.active.len() });
        TraceEvent::Arrival { request: req, decision, devolved }
    }

    fn handle_departure(&mut self, id: LspId) -> TraceEvent {
        let lsp = self.active.remove(&id).expect("departure of an active LSP");
        for &l in &lsp.links {
            self.states[l].release(id).expect("active LSP holds every path link");
        }
        self.publish_links(&lsp.links);
        self.stats.record(self.clock, StatsEvent::Active { count: self.active.len() });
        TraceEvent::Departure { lsp: id }
    }

    fn handle_profile(&mut self, phase: usize) -> TraceEvent {
        self.phase = phase;
        for tc in 0..self.streams.len() {
            if self.streams[tc].is_none() {
                continue;
            }
            if let Some(key) = self.pending[tc].take() {
                self.unschedule(key);
            }
            let now = self.clock;
            self.draw(tc, now);
        }
        TraceEvent::ProfileSwitch { phase }
    }

    fn handle_control(&mut self, action: ControlAction) -> Result<TraceEvent, EngineError> {
        let mut cfg = self.cfg;
        let mut specs: Vec<LinkSpec> = self.states.iter().map(|s| s.spec().clone()).collect();
        check_action(&self.scenario.topology, &mut cfg, &mut specs, &action)?;
        let policy = self.scenario.switch_policy;
        let ids = match &action {
            ControlAction::Model { .. } => (0..self.states.len()).collect(),
            ControlAction::Bc { selector, .. } => select_links(&self.scenario.topology, selector)?,
        };
        let mut report = SwitchReport::default();
        for &l in &ids {
            let r = match &action {
                ControlAction::Model { config, bc } => self.states[l].reconfigure_with(*config, bc.clone(), policy),
                ControlAction::Bc { bc, .. } => self.states[l].retune(bc.clone(), policy),
            }
            .map_err(|e| EngineError::InvalidConfig(e.to_string()))?;
            report.recharged += r.recharged;
            report.non_conformant.extend(r.non_conformant);
            report.preempted.extend(r.preempted);
        }
        self.cfg = cfg;
        report.non_conformant.sort_unstable();
        report.non_conformant.dedup();
        report.preempted.sort_unstable();
        report.preempted.dedup();
        // Switch teardowns remove the LSP from every other link it crosses.
        let mut touched = ids.clone();
        for &id in &report.preempted {
            let Some(lsp) = self.active.remove(&id) else { continue };
            for &l in &lsp.links {
                if self.states[l].lsp(id).is_some() {
                    self.states[l].release(id).expect("present");
                }
            }
            self.unschedule(lsp.departure);
            self.count_preemption(lsp.request.tc);
            self.stats.record(self.clock, StatsEvent::Preempted { tc: lsp.request.tc, links: &lsp.links });
            touched.extend(lsp.links);
        }
        touched.sort_unstable();
        touched.dedup();
        self.publish_links(&touched);
        self.stats.record(self.clock, StatsEvent::Active { count: self.active.len() });
        self.switches.push(SwitchRecord { time: self.clock, action: action.clone(), report: report.clone() });
        Ok(match action {
            ControlAction::Model { config, bc } => TraceEvent::ModelSwitch { config, bc, report },
            ControlAction::Bc { selector, bc } => TraceEvent::BcRetune { selector, bc, report },
        })
    }

    fn offered_loads(&self, phase: usize) -> Vec<f64> {
        let c = self.cfg.class_count;
        let mut out = vec![0.0; c];
        match &self.scenario.traffic {
            TrafficSource::Profile { schedule, .. } => {
                for (tc, v) in out.iter_mut().enumerate() {
                    *v = schedule.class_load(phase, tc);
                }
            }
            TrafficSource::Streams { classes } => {
                for s in classes {
                    out[s.tc] = s.offered_load(1.0 / s.interarrival.mean());
                }
            }
            TrafficSource::Trace { .. } => {}
        }
        out
    }

    /// Finishes the run if needed and produces its report.
    pub fn report(&mut self) -> RunReport {
        self.finalize();
        let end = self.end_time;
        let topo = &self.scenario.topology;
        let util = |l: LinkId, a: SimTime, b: SimTime| self.stats.utilization(l, a, b).ok();
        let links = topo
            .links()
            .iter()
            .enumerate()
            .map(|(i, l)| LinkSummary { src: l.src, dst: l.dst, capacity: l.capacity, mean_utilization: util(i, SimTime::ZERO, end) })
            .collect();
        let windows: Vec<(SimTime, SimTime)> = match &self.scenario.traffic {
            TrafficSource::Profile { schedule, .. } => schedule.phases.iter().map(|p| (p.start, p.end())).collect(),
            _ => vec![(SimTime::ZERO, end)],
        };
        let last = windows.len() - 1;
        let phases = windows
            .iter()
            .enumerate()
            .filter(|(_, (start, _))| *start < end)
            .map(|(i, &(start, stop))| {
                let stop = if i == last { end } else { stop.min(end) };
                PhaseSummary {
                    index: i,
                    start,
                    end: stop,
                    totals: self.phases[i].totals.clone(),
                    per_class: self.phases[i].per_class.clone(),
                    offered_load: self.offered_loads(i),
                    utilization: (0..topo.links().len()).map(|l| util(l, start, stop).unwrap_or(0.0)).collect(),
                }
            })
            .collect();
        RunReport {
            version: 1,
            run: self.run,
            seed: self.seed,
            end_time: end,
            events: self.processed,
            totals: self.totals.clone(),
            per_class: self.per_class.clone(),
            blocking_probability: self.totals.blocking_probability(),
            preemption_rate: self.totals.preemption_rate(),
            class_blocking_probability: self.per_class.iter().map(Counters::blocking_probability).collect(),
            switches: self.switches.clone(),
            links,
            phases,
            wall_time: self.started.elapsed(),
            stats: Some(self.stats.clone()),
            trace: self.trace.clone(),
        }
    }
}

/// Executes a single run to completion.
pub fn run_one(scenario: Arc<Scenario>, run: usize) -> Result<RunReport, EngineError> {
    let mut sim = Simulation::new(scenario, run)?;
    sim.run_to_end();
    Ok(sim.report())
}

/// Executes every run in order.
pub fn run(scenario: &Scenario) -> Result<Vec<RunReport>, EngineError> {
    scenario.validate()?;
    let shared = Arc::new(scenario.clone());
    (0..scenario.seeds.len()).map(|r| run_one(shared.clone(), r)).collect()
}

/// Executes the runs on separate threads; reports come back in run order.
pub fn run_parallel(scenario: &Scenario) -> Result<Vec<RunReport>, EngineError> {
    scenario.validate()?;
    let shared = Arc::new(scenario.clone());
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..scenario.seeds.len())
            .map(|r| {
                let sc = shared.clone();
                s.spawn(move || run_one(sc, r))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("run thread panicked")).collect()
    })
}
