//! Line-oriented scenario scripts.
//!
//! One command per line, `#` starts a comment, keywords are
//! case-insensitive. Times are seconds, bandwidths Mb/s.
//!
//! ```text
//! TOPOLOGY BUILTIN <name> | TOPOLOGY FILE <path> | TOPOLOGY BEGIN ... END
//! CLASSES <n>
//! BAM <MAM|RDM|ATCS|GBAM> [HTL] [LTH] [PREEMPT ON|OFF] [OVERSUB]
//! BC ALL <v>... | BC LINK <src> <dst> <v>...
//! TRAFFIC TC <c> <arrivals> HOLD <dist> BW <DET v | CHOICE v...> [PAIR ANY | PAIR <s> <d>]
//!   arrivals: POISSON <rate> | EXP <mean> | UNIFORM <lo> <hi> | DET <period>
//!   dist:     EXP <mean> | UNIFORM <lo> <hi> | DET <value>
//! TRAFFIC TRACE <csv path>
//! DEMAND <t> <tc> <bw> <src> <dst> <hold>
//! PROFILE TABLE1 | PROFILE PHASE <duration> LEVELS <H|M|L>... LOAD <factor>
//! PROFILE WEIGHTS <h> <m> <l> | PROFILE CAPACITY <mbps>
//! ROUTE STATIC DEFAULT | ROUTE STATIC EXPLICIT | ROUTE CSPF
//! ROUTE PATH <src> <dst> <node>...
//! STOP TIME <t> | STOP LSPS <n>
//! SEEDS <seed>... | RUNS <n>
//! STATS STEP <s> | STATS SLOTS <n>
//! SWITCH AT <t> BAM <model> [flags] [BC <v>...] | SWITCH AT <t> BC <ALL | LINK s d> <v>...
//! SWITCHPOLICY GRANDFATHER|PREEMPT
//! TRACE ON|OFF
//! RUN
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::domain::{Bandwidth, BcVector, NodeId, SimTime};
use crate::engine::{ControlAction, LinkSelector, RoutingMode, Scenario, ScheduledSwitch, StopCondition, TrafficSource};
use crate::kernel::{BamModel, GbamConfig, SwitchPolicy};
use crate::stats::StatsConfig;
use crate::topology::{Topology, TopologyError};
use crate::traffic::{run_seed, load_trace, BandwidthSpec, ClassTrafficSpec, Demand, Distribution, Endpoints, Level, LevelWeights, ProfileSchedule};

#[derive(Debug, Error, PartialEq)]
pub enum ScriptError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{}{message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Semantic { line: Option<usize>, message: String },
}

impl ScriptError {
    /// Process exit code: 2 for syntax errors, 3 for semantic errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScriptError::Parse { .. } => 2,
            ScriptError::Semantic { .. } => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct BamSpec {
    model: BamModel,
    htl: bool,
    lth: bool,
    preempt: Option<bool>,
    oversub: bool,
}

impl BamSpec {
    fn config(&self, classes: usize) -> GbamConfig {
        let base = match self.model {
            BamModel::Gbam => GbamConfig::gbam(classes, self.htl, self.lth),
            m => GbamConfig::canonical(m, classes),
        };
        GbamConfig { mam_oversubscription: self.oversub, ..base.with_preemption(self.preempt.unwrap_or(base.preemption)) }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Command {
    Topology(TopologySource),
    Classes(usize),
    Bam(BamSpec),
    Bc(LinkSelector, Vec<Bandwidth>),
    Traffic(ClassTrafficSpec),
    TrafficTrace(PathBuf),
    Demand(Demand),
    ProfileTable1,
    ProfilePhase(SimTime, Vec<Level>, f64),
    ProfileWeights(LevelWeights),
    ProfileCapacity(Bandwidth),
    Route(RoutingMode),
    RoutePath(NodeId, NodeId, Vec<NodeId>),
    StopTime(SimTime),
    StopLsps(u64),
    Seeds(Vec<u64>),
    Runs(usize),
    StatsStep(SimTime),
    StatsSlots(usize),
    SwitchBam(SimTime, BamSpec, Option<Vec<Bandwidth>>),
    SwitchBc(SimTime, LinkSelector, Vec<Bandwidth>),
    SwitchPolicy(SwitchPolicy),
    Trace(bool),
    Run,
}

#[derive(Clone, Debug, PartialEq)]
enum TopologySource {
    Builtin(String),
    File(PathBuf),
    Inline(Topology),
}

struct Tokens<'a> {
    line: usize,
    words: Vec<&'a str>,
    at: usize,
}

impl<'a> Tokens<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, ScriptError> {
        Err(ScriptError::Parse { line: self.line, message: message.into() })
    }

    fn peek(&self) -> Option<&'a str> {
        self.words.get(self.at).copied()
    }

    fn peek_kw(&self, kw: &str) -> bool {
        self.peek().is_some_and(|w| w.eq_ignore_ascii_case(kw))
    }

    fn next(&mut self, what: &str) -> Result<&'a str, ScriptError> {
        let w = self.peek().ok_or(()).or_else(|_| self.err(format!("expected {what}")))?;
        self.at += 1;
        Ok(w)
    }

    fn keyword(&mut self, options: &[&str]) -> Result<String, ScriptError> {
        let w = self.next(&options.join("|"))?.to_ascii_uppercase();
        if options.contains(&w.as_str()) {
            Ok(w)
        } else {
            self.err(format!("expected {}, found `{w}`", options.join("|")))
        }
    }

    fn expect(&mut self, kw: &str) -> Result<(), ScriptError> {
        self.keyword(&[kw]).map(|_| ())
    }

    fn eat(&mut self, kw: &str) -> bool {
        let hit = self.peek_kw(kw);
        if hit {
            self.at += 1;
        }
        hit
    }

    fn num<T: FromStr>(&mut self, what: &str) -> Result<T, ScriptError> {
        let w = self.next(what)?;
        w.parse().or_else(|_| self.err(format!("invalid {what} `{w}`")))
    }

    fn secs(&mut self, what: &str) -> Result<f64, ScriptError> {
        let v: f64 = self.num(what)?;
        if !(v.is_finite() && v >= 0.0) {
            return self.err(format!("{what} must be a non-negative number"));
        }
        Ok(v)
    }

    fn time(&mut self, what: &str) -> Result<SimTime, ScriptError> {
        self.secs(what).map(SimTime::from_secs)
    }

    fn bandwidth(&mut self) -> Result<Bandwidth, ScriptError> {
        let v: f64 = self.num("bandwidth")?;
        Bandwidth::from_mbps(v).or_else(|e| self.err(e.to_string()))
    }

    fn bandwidths(&mut self) -> Result<Vec<Bandwidth>, ScriptError> {
        let mut out = Vec::new();
        while self.peek().is_some_and(|w| w.parse::<f64>().is_ok()) {
            out.push(self.bandwidth()?);
        }
        if out.is_empty() {
            return self.err("expected at least one bandwidth value");
        }
        Ok(out)
    }

    fn rest_nodes(&mut self) -> Result<Vec<NodeId>, ScriptError> {
        let mut out = Vec::new();
        while self.peek().is_some() {
            out.push(self.num("node id")?);
        }
        Ok(out)
    }

    fn done(&self) -> Result<(), ScriptError> {
        match self.peek() {
            None => Ok(()),
            Some(w) => self.err(format!("unexpected `{w}`")),
        }
    }

    fn dist(&mut self, arrivals: bool) -> Result<Distribution, ScriptError> {
        let options: &[&str] = if arrivals { &["POISSON", "EXP", "UNIFORM", "DET"] } else { &["EXP", "UNIFORM", "DET"] };
        let d = match self.keyword(options)?.as_str() {
            "POISSON" => {
                let rate: f64 = self.num("rate")?;
                if !(rate > 0.0 && rate.is_finite()) {
                    return self.err("rate must be positive");
                }
                Distribution::poisson(rate)
            }
            "EXP" => Distribution::Exponential { mean: self.secs("mean")? },
            "UNIFORM" => Distribution::Uniform { lo: self.secs("lower bound")?, hi: self.secs("upper bound")? },
            _ => Distribution::Deterministic { value: self.secs("value")? },
        };
        d.validate(if arrivals { "interarrival" } else { "holding" }).or_else(|e| self.err(e.to_string()))?;
        Ok(d)
    }

    fn bam(&mut self) -> Result<BamSpec, ScriptError> {
        let w = self.next("BAM model")?;
        let model = BamModel::from_str(w).or_else(|e| self.err(e))?;
        let mut spec = BamSpec { model, htl: false, lth: false, preempt: None, oversub: false };
        loop {
            if self.eat("HTL") {
                spec.htl = true;
            } else if self.eat("LTH") {
                spec.lth = true;
            } else if self.eat("OVERSUB") {
                spec.oversub = true;
            } else if self.eat("PREEMPT") {
                spec.preempt = Some(self.keyword(&["ON", "OFF"])? == "ON");
            } else {
                break;
            }
        }
        if model != BamModel::Gbam && (spec.htl || spec.lth) {
            return self.err(format!("{model} has fixed loan directions; HTL/LTH apply to GBAM"));
        }
        Ok(spec)
    }

    fn selector(&mut self) -> Result<LinkSelector, ScriptError> {
        match self.keyword(&["ALL", "LINK"])?.as_str() {
            "ALL" => Ok(LinkSelector::All),
            _ => Ok(LinkSelector::Link { src: self.num("source node")?, dst: self.num("destination node")? }),
        }
    }
}

fn parse_command(tk: &mut Tokens<'_>) -> Result<Command, ScriptError> {
    let verb = tk.next("command")?.to_ascii_uppercase();
    let cmd = match verb.as_str() {
        "TOPOLOGY" => match tk.keyword(&["BUILTIN", "FILE"])?.as_str() {
            "BUILTIN" => Command::Topology(TopologySource::Builtin(tk.next("topology name")?.to_string())),
            _ => Command::Topology(TopologySource::File(PathBuf::from(tk.next("file path")?))),
        },
        "CLASSES" => {
            let n: usize = tk.num("class count")?;
            if n == 0 {
                return tk.err("class count must be at least 1");
            }
            Command::Classes(n)
        }
        "BAM" => Command::Bam(tk.bam()?),
        "BC" => {
            let sel = tk.selector()?;
            Command::Bc(sel, tk.bandwidths()?)
        }
        "TRAFFIC" => {
            if tk.eat("TRACE") {
                Command::TrafficTrace(PathBuf::from(tk.next("trace path")?))
            } else {
                tk.expect("TC")?;
                let tc = tk.num("class")?;
                let interarrival = tk.dist(true)?;
                tk.expect("HOLD")?;
                let holding = tk.dist(false)?;
                tk.expect("BW")?;
                let bandwidth = match tk.keyword(&["DET", "CHOICE"])?.as_str() {
                    "DET" => BandwidthSpec::Deterministic { value: tk.bandwidth()? },
                    _ => BandwidthSpec::UniformChoice { values: tk.bandwidths()? },
                };
                let mut endpoints = Endpoints::UniformPair;
                if tk.eat("PAIR") && !tk.eat("ANY") {
                    endpoints = Endpoints::Fixed { src: tk.num("source node")?, dst: tk.num("destination node")? };
                }
                Command::Traffic(ClassTrafficSpec { tc, interarrival, holding, bandwidth, endpoints })
            }
        }
        "DEMAND" => {
            let arrival = tk.time("arrival")?;
            let tc = tk.num("class")?;
            let bandwidth = tk.bandwidth()?;
            let src = tk.num("source node")?;
            let dst = tk.num("destination node")?;
            let holding = tk.time("holding")?;
            Command::Demand(Demand { tc, bandwidth, src, dst, arrival, holding })
        }
        "PROFILE" => match tk.keyword(&["TABLE1", "PHASE", "WEIGHTS", "CAPACITY"])?.as_str() {
            "TABLE1" => Command::ProfileTable1,
            "PHASE" => {
                let d = tk.time("duration")?;
                tk.expect("LEVELS")?;
                let mut levels = Vec::new();
                while let Some(l) = tk.peek().and_then(Level::from_letter) {
                    tk.at += 1;
                    levels.push(l);
                }
                if levels.is_empty() {
                    return tk.err("expected at least one level (H, M or L)");
                }
                tk.expect("LOAD")?;
                Command::ProfilePhase(d, levels, tk.secs("load factor")?)
            }
            "WEIGHTS" => Command::ProfileWeights(LevelWeights { high: tk.secs("weight")?, medium: tk.secs("weight")?, low: tk.secs("weight")? }),
            _ => Command::ProfileCapacity(tk.bandwidth()?),
        },
        "ROUTE" => match tk.keyword(&["STATIC", "CSPF", "PATH"])?.as_str() {
            "STATIC" => Command::Route(RoutingMode::Static { fill_min_hop: tk.keyword(&["DEFAULT", "EXPLICIT"])? == "DEFAULT" }),
            "CSPF" => Command::Route(RoutingMode::Cspf),
            _ => {
                let src = tk.num("source node")?;
                let dst = tk.num("destination node")?;
                Command::RoutePath(src, dst, tk.rest_nodes()?)
            }
        },
        "STOP" => match tk.keyword(&["TIME", "LSPS"])?.as_str() {
            "TIME" => Command::StopTime(tk.time("stop time")?),
            _ => Command::StopLsps(tk.num("LSP count")?),
        },
        "SEEDS" => {
            let mut seeds = Vec::new();
            while tk.peek().is_some() {
                seeds.push(tk.num("seed")?);
            }
            if seeds.is_empty() {
                return tk.err("expected at least one seed");
            }
            Command::Seeds(seeds)
        }
        "RUNS" => Command::Runs(tk.num("run count")?),
        "STATS" => match tk.keyword(&["STEP", "SLOTS"])?.as_str() {
            "STEP" => Command::StatsStep(tk.time("step")?),
            _ => Command::StatsSlots(tk.num("slot count")?),
        },
        "SWITCH" => {
            tk.expect("AT")?;
            let at = tk.time("switch time")?;
            match tk.keyword(&["BAM", "BC"])?.as_str() {
                "BAM" => {
                    let spec = tk.bam()?;
                    let bc = if tk.eat("BC") { Some(tk.bandwidths()?) } else { None };
                    Command::SwitchBam(at, spec, bc)
                }
                _ => {
                    let sel = tk.selector()?;
                    Command::SwitchBc(at, sel, tk.bandwidths()?)
                }
            }
        }
        "SWITCHPOLICY" => Command::SwitchPolicy(match tk.keyword(&["GRANDFATHER", "PREEMPT"])?.as_str() {
            "GRANDFATHER" => SwitchPolicy::Grandfather,
            _ => SwitchPolicy::Preempt,
        }),
        "TRACE" => Command::Trace(tk.keyword(&["ON", "OFF"])? == "ON"),
        "RUN" => Command::Run,
        other => return tk.err(format!("unknown command `{other}`")),
    };
    tk.done()?;
    Ok(cmd)
}

fn strip(line: &str) -> &str {
    line.split('#').next().unwrap_or("").trim()
}

/// Parses every line; fails on the first syntax error.
fn parse_commands(text: &str) -> Result<Vec<(usize, Command)>, ScriptError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let line = i + 1;
        let body = strip(lines[i]);
        i += 1;
        if body.is_empty() {
            continue;
        }
        let words: Vec<&str> = body.split_whitespace().collect();
        if words.len() == 2 && words[0].eq_ignore_ascii_case("TOPOLOGY") && words[1].eq_ignore_ascii_case("BEGIN") {
            let start = i;
            while i < lines.len() && !strip(lines[i]).eq_ignore_ascii_case("END") {
                i += 1;
            }
            if i == lines.len() {
                return Err(ScriptError::Parse { line, message: "TOPOLOGY BEGIN without END".into() });
            }
            let inner = lines[start..i].join("\n");
            i += 1;
            let topo = Topology::parse(&inner).map_err(|e| match e {
                TopologyError::Parse { line: l, message } => ScriptError::Parse { line: start + l, message },
                other => ScriptError::Semantic { line: Some(line), message: other.to_string() },
            })?;
            out.push((line, Command::Topology(TopologySource::Inline(topo))));
            continue;
        }
        let mut tk = Tokens { line, words, at: 0 };
        out.push((line, parse_command(&mut tk)?));
    }
    Ok(out)
}

#[derive(Default)]
struct Builder {
    topology: Option<Topology>,
    classes: Option<usize>,
    bam: Option<GbamConfig>,
    bc_set: bool,
    routing: Option<RoutingMode>,
    classes_traffic: Vec<ClassTrafficSpec>,
    demands: Vec<Demand>,
    profile_table1: bool,
    phases: Vec<(SimTime, Vec<Level>, f64)>,
    weights: Option<LevelWeights>,
    capacity: Option<Bandwidth>,
    stop: StopCondition,
    seeds: Option<Vec<u64>>,
    runs: Option<usize>,
    stats: StatsConfig,
    switches: Vec<ScheduledSwitch>,
    policy: SwitchPolicy,
    trace: bool,
    ran: bool,
}

fn semantic(line: usize, message: impl Into<String>) -> ScriptError {
    ScriptError::Semantic { line: Some(line), message: message.into() }
}

fn resolve(base: Option<&Path>, p: &Path) -> PathBuf {
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p.to_path_buf(),
    }
}

impl Builder {
    fn apply(&mut self, line: usize, cmd: Command, base: Option<&Path>) -> Result<(), ScriptError> {
        if self.ran {
            return Err(semantic(line, "commands after RUN"));
        }
        let need_classes = |b: &Builder, what: &str| b.classes.ok_or_else(|| semantic(line, format!("{what} before CLASSES")));
        match cmd {
            Command::Topology(src) => {
                if self.topology.is_some() {
                    return Err(semantic(line, "topology already defined"));
                }
                let t = match src {
                    TopologySource::Builtin(name) => Topology::builtin(&name),
                    TopologySource::File(p) => {
                        let path = resolve(base, &p);
                        let text = std::fs::read_to_string(&path).map_err(|e| semantic(line, format!("{}: {e}", path.display())))?;
                        Topology::parse(&text)
                    }
                    TopologySource::Inline(t) => Ok(t),
                }
                .map_err(|e| semantic(line, e.to_string()))?;
                if let (Some(c), Some(tc)) = (self.classes, t.class_count()) {
                    if c != tc {
                        return Err(semantic(line, format!("topology declares {tc} classes, script has {c}")));
                    }
                }
                self.bc_set = t.links().iter().any(|l| !l.bc.0.is_empty());
                self.topology = Some(t);
            }
            Command::Classes(n) => {
                if self.classes.is_some() {
                    return Err(semantic(line, "CLASSES given twice"));
                }
                if let Some(tc) = self.topology.as_ref().and_then(Topology::class_count) {
                    if tc != n {
                        return Err(semantic(line, format!("topology declares {tc} classes")));
                    }
                }
                self.classes = Some(n);
            }
            Command::Bam(spec) => {
                let c = need_classes(self, "BAM")?;
                let cfg = spec.config(c);
                cfg.validate().map_err(|e| semantic(line, e.to_string()))?;
                self.bam = Some(cfg);
            }
            Command::Bc(sel, values) => {
                let c = need_classes(self, "BC")?;
                if values.len() != c {
                    return Err(semantic(line, format!("{} constraints for {c} classes", values.len())));
                }
                let t = self.topology.as_mut().ok_or_else(|| semantic(line, "BC before TOPOLOGY"))?;
                t.set_class_count(c);
                let ids: Vec<usize> = match sel {
                    LinkSelector::All => (0..t.links().len()).collect(),
                    LinkSelector::Link { src, dst } => vec![t.link_between(src, dst).ok_or_else(|| semantic(line, format!("no link {src}->{dst}")))?],
                };
                for id in ids {
                    t.link_mut(id).bc = BcVector(values.clone());
                }
                self.bc_set = true;
            }
            Command::Traffic(spec) => {
                let c = need_classes(self, "TRAFFIC")?;
                if spec.tc >= c {
                    return Err(semantic(line, format!("class {} out of range for {c} classes", spec.tc)));
                }
                if self.classes_traffic.iter().any(|s| s.tc == spec.tc) {
                    return Err(semantic(line, format!("class {} already has traffic", spec.tc)));
                }
                self.classes_traffic.push(spec);
            }
            Command::TrafficTrace(p) => {
                let path = resolve(base, &p);
                let f = std::fs::File::open(&path).map_err(|e| semantic(line, format!("{}: {e}", path.display())))?;
                self.demands.extend(load_trace(f).map_err(|e| semantic(line, e.to_string()))?);
            }
            Command::Demand(d) => self.demands.push(d),
            Command::ProfileTable1 => self.profile_table1 = true,
            Command::ProfilePhase(d, levels, f) => self.phases.push((d, levels, f)),
            Command::ProfileWeights(w) => self.weights = Some(w),
            Command::ProfileCapacity(b) => self.capacity = Some(b),
            Command::Route(mode) => self.routing = Some(mode),
            Command::RoutePath(s, d, path) => {
                let t = self.topology.as_mut().ok_or_else(|| semantic(line, "ROUTE PATH before TOPOLOGY"))?;
                t.add_route(s, d, path).map_err(|e| semantic(line, e.to_string()))?;
            }
            Command::StopTime(t) => self.stop.max_time = Some(t),
            Command::StopLsps(n) => self.stop.max_lsps = Some(n),
            Command::Seeds(s) => self.seeds = Some(s),
            Command::Runs(n) => self.runs = Some(n),
            Command::StatsStep(s) => self.stats.step = s,
            Command::StatsSlots(n) => self.stats.slots = n,
            Command::SwitchBam(at, spec, bc) => {
                let c = need_classes(self, "SWITCH")?;
                if bc.as_ref().is_some_and(|v| v.len() != c) {
                    return Err(semantic(line, format!("switch constraints must have {c} values")));
                }
                let config = spec.config(c);
                config.validate().map_err(|e| semantic(line, e.to_string()))?;
                self.switches.push(ScheduledSwitch { at, action: ControlAction::Model { config, bc: bc.map(BcVector) } });
            }
            Command::SwitchBc(at, selector, values) => {
                let c = need_classes(self, "SWITCH")?;
                if values.len() != c {
                    return Err(semantic(line, format!("switch constraints must have {c} values")));
                }
                self.switches.push(ScheduledSwitch { at, action: ControlAction::Bc { selector, bc: BcVector(values) } });
            }
            Command::SwitchPolicy(p) => self.policy = p,
            Command::Trace(on) => self.trace = on,
            Command::Run => self.ran = true,
        }
        Ok(())
    }

    fn finish(self) -> Result<Scenario, ScriptError> {
        let err = |m: &str| ScriptError::Semantic { line: None, message: m.into() };
        if !self.ran {
            return Err(err("missing RUN"));
        }
        let mut topology = self.topology.ok_or_else(|| err("missing TOPOLOGY"))?;
        let classes = self.classes.ok_or_else(|| err("missing CLASSES"))?;
        let bam = self.bam.ok_or_else(|| err("missing BAM"))?;
        topology.set_class_count(classes);
        let seeds = self.seeds.ok_or_else(|| err("missing SEEDS"))?;
        let seeds = match self.runs {
            None => seeds,
            Some(n) if n == seeds.len() => seeds,
            Some(n) if seeds.len() == 1 && n > 1 => (0..n).map(|r| run_seed(seeds[0], r)).collect(),
            Some(n) => return Err(err(&format!("RUNS {n} does not match {} seeds", seeds.len()))),
        };
        let profiled = self.profile_table1 || !self.phases.is_empty();
        if self.profile_table1 && !self.phases.is_empty() {
            return Err(err("PROFILE TABLE1 and PROFILE PHASE are exclusive"));
        }
        if !self.demands.is_empty() && (profiled || !self.classes_traffic.is_empty()) {
            return Err(err("trace demands cannot be combined with generated traffic"));
        }
        let capacity = self.capacity.unwrap_or_else(|| topology.links().first().map(|l| l.capacity).unwrap_or(Bandwidth::ZERO));
        let traffic = if !self.demands.is_empty() {
            let mut demands = self.demands;
            demands.sort_by_key(|d| d.arrival);
            TrafficSource::Trace { demands }
        } else if profiled {
            let mut schedule = if self.profile_table1 {
                ProfileSchedule::table1(capacity)
            } else {
                ProfileSchedule::new(capacity, self.phases).map_err(|e| err(&e.to_string()))?
            };
            if let Some(w) = self.weights {
                schedule.weights = w;
            }
            TrafficSource::Profile { classes: self.classes_traffic, schedule }
        } else if self.classes_traffic.is_empty() {
            return Err(err("no traffic defined"));
        } else {
            TrafficSource::Streams { classes: self.classes_traffic }
        };
        let mut stop = self.stop;
        if let (None, None, TrafficSource::Profile { schedule, .. }) = (stop.max_time, stop.max_lsps, &traffic) {
            stop.max_time = Some(schedule.end());
        }
        let scenario = Scenario {
            topology,
            bam,
            routing: self.routing.unwrap_or(RoutingMode::Static { fill_min_hop: true }),
            traffic,
            switches: self.switches,
            switch_policy: self.policy,
            stop,
            seeds,
            stats: self.stats,
            trace: self.trace,
        };
        let scenario = if self.bc_set { scenario } else { scenario.with_default_constraints() };
        scenario.validate().map_err(|e| err(&e.to_string()))?;
        Ok(scenario)
    }
}

/// Parses and checks a script. The whole text is parsed before anything
/// is resolved, so a syntax error anywhere prevents any execution.
/// Relative file paths resolve against `base`.
pub fn parse_script(text: &str, base: Option<&Path>) -> Result<Scenario, ScriptError> {
    let commands = parse_commands(text)?;
    let mut b = Builder::default();
    for (line, cmd) in commands {
        b.apply(line, cmd, base)?;
    }
    b.finish()
}

fn write_bam(s: &mut String, cfg: &GbamConfig) {
    write!(s, "{}", cfg.model).unwrap();
    if cfg.model == BamModel::Gbam {
        if cfg.htl {
            s.push_str(" HTL");
        }
        if cfg.lth {
            s.push_str(" LTH");
        }
    }
    let canonical = match cfg.model {
        BamModel::Gbam => GbamConfig::gbam(cfg.class_count, cfg.htl, cfg.lth),
        m => GbamConfig::canonical(m, cfg.class_count),
    };
    if cfg.preemption != canonical.preemption {
        s.push_str(if cfg.preemption { " PREEMPT ON" } else { " PREEMPT OFF" });
    }
    if cfg.mam_oversubscription {
        s.push_str(" OVERSUB");
    }
}

fn write_values(s: &mut String, v: &[Bandwidth]) {
    for b in v {
        write!(s, " {b}").unwrap();
    }
}

fn write_dist(s: &mut String, d: &Distribution) {
    match d {
        Distribution::Exponential { mean } => write!(s, "EXP {mean}"),
        Distribution::Uniform { lo, hi } => write!(s, "UNIFORM {lo} {hi}"),
        Distribution::Deterministic { value } => write!(s, "DET {value}"),
    }
    .unwrap();
}

fn write_selector(s: &mut String, sel: &LinkSelector) {
    match sel {
        LinkSelector::All => s.push_str("ALL"),
        LinkSelector::Link { src, dst } => write!(s, "LINK {src} {dst}").unwrap(),
    }
}

/// Writes a script that [`parse_script`] turns back into `scenario`.
pub fn serialize_script(scenario: &Scenario) -> String {
    let mut s = String::new();
    let secs = |t: SimTime| t.as_secs();
    s.push_str("TOPOLOGY BEGIN\n");
    scenario.topology.write_lines(&mut s);
    s.push_str("END\n");
    writeln!(s, "CLASSES {}", scenario.bam.class_count).unwrap();
    s.push_str("BAM ");
    write_bam(&mut s, &scenario.bam);
    s.push('\n');
    let classes: &[ClassTrafficSpec] = scenario.class_specs();
    for c in classes {
        write!(s, "TRAFFIC TC {} ", c.tc).unwrap();
        write_dist(&mut s, &c.interarrival);
        s.push_str(" HOLD ");
        write_dist(&mut s, &c.holding);
        match &c.bandwidth {
            BandwidthSpec::Deterministic { value } => write!(s, " BW DET {value}").unwrap(),
            BandwidthSpec::UniformChoice { values } => {
                s.push_str(" BW CHOICE");
                write_values(&mut s, values);
            }
        }
        match c.endpoints {
            Endpoints::UniformPair => s.push_str(" PAIR ANY\n"),
            Endpoints::Fixed { src, dst } => writeln!(s, " PAIR {src} {dst}").unwrap(),
        }
    }
    match &scenario.traffic {
        TrafficSource::Trace { demands } => {
            for d in demands {
                writeln!(s, "DEMAND {} {} {} {} {} {}", secs(d.arrival), d.tc, d.bandwidth, d.src, d.dst, secs(d.holding)).unwrap();
            }
        }
        TrafficSource::Profile { schedule, .. } => {
            writeln!(s, "PROFILE CAPACITY {}", schedule.reference_capacity).unwrap();
            let w = &schedule.weights;
            writeln!(s, "PROFILE WEIGHTS {} {} {}", w.high, w.medium, w.low).unwrap();
            for p in &schedule.phases {
                write!(s, "PROFILE PHASE {} LEVELS", secs(p.duration)).unwrap();
                for l in &p.levels {
                    write!(s, " {}", l.letter()).unwrap();
                }
                writeln!(s, " LOAD {}", p.load_factor).unwrap();
            }
        }
        TrafficSource::Streams { .. } => {}
    }
    match scenario.routing {
        RoutingMode::Static { fill_min_hop: true } => s.push_str("ROUTE STATIC DEFAULT\n"),
        RoutingMode::Static { fill_min_hop: false } => s.push_str("ROUTE STATIC EXPLICIT\n"),
        RoutingMode::Cspf => s.push_str("ROUTE CSPF\n"),
    }
    if let Some(t) = scenario.stop.max_time {
        writeln!(s, "STOP TIME {}", secs(t)).unwrap();
    }
    if let Some(n) = scenario.stop.max_lsps {
        writeln!(s, "STOP LSPS {n}").unwrap();
    }
    s.push_str("SEEDS");
    for seed in &scenario.seeds {
        write!(s, " {seed}").unwrap();
    }
    s.push('\n');
    writeln!(s, "STATS STEP {}", secs(scenario.stats.step)).unwrap();
    writeln!(s, "STATS SLOTS {}", scenario.stats.slots).unwrap();
    for sw in &scenario.switches {
        write!(s, "SWITCH AT {} ", secs(sw.at)).unwrap();
        match &sw.action {
            ControlAction::Model { config, bc } => {
                s.push_str("BAM ");
                write_bam(&mut s, config);
                if let Some(bc) = bc {
                    s.push_str(" BC");
                    write_values(&mut s, &bc.0);
                }
            }
            ControlAction::Bc { selector, bc } => {
                s.push_str("BC ");
                write_selector(&mut s, selector);
                write_values(&mut s, &bc.0);
            }
        }
        s.push('\n');
    }
    match scenario.switch_policy {
        SwitchPolicy::Grandfather => s.push_str("SWITCHPOLICY GRANDFATHER\n"),
        SwitchPolicy::Preempt => s.push_str("SWITCHPOLICY PREEMPT\n"),
    }
    writeln!(s, "TRACE {}", if scenario.trace { "ON" } else { "OFF" }).unwrap();
    s.push_str("RUN\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "TOPOLOGY BUILTIN PTP-2n-1e\nCLASSES 3\nBAM MAM\nBC ALL 50 30 20\nTRAFFIC TC 0 POISSON 0.01 HOLD EXP 60 BW DET 10\nROUTE STATIC DEFAULT\nSTOP TIME 3600\nSEEDS 42\nRUN\n";

    #[test]
    fn minimal_script_runs() {
        let s = parse_script(MINIMAL, None).unwrap();
        assert_eq!(s.seeds, [42]);
        assert_eq!(s.topology.links()[0].bc.0, [Bandwidth::mbps(50), Bandwidth::mbps(30), Bandwidth::mbps(20)]);
        let r = crate::engine::run(&s).unwrap();
        assert_eq!(r.len(), 1);
        assert!(r[0].totals.requests > 0);
        assert_eq!(r[0].totals.requests, r[0].totals.grants + r[0].totals.blocks());
    }

    #[test]
    fn oversized_atcs_constraints_rejected() {
        let text = MINIMAL.replace("BAM MAM", "BAM ATCS").replace("50 30 20", "60 30 20");
        let e = parse_script(&text, None).unwrap_err();
        assert!(matches!(e, ScriptError::Semantic { .. }), "{e}");
        assert_eq!(e.exit_code(), 3);
    }

    #[test]
    fn unknown_verb_reports_line() {
        let text = MINIMAL.replace("ROUTE STATIC DEFAULT", "FROB 1");
        assert_eq!(parse_script(&text, None).unwrap_err(), ScriptError::Parse { line: 6, message: "unknown command `FROB`".into() });
    }

    #[test]
    fn syntax_error_anywhere_prevents_build() {
        let text = format!("{MINIMAL}STOP TIME abc\n");
        let e = parse_script(&text, None).unwrap_err();
        assert_eq!((e.exit_code(), matches!(e, ScriptError::Parse { line: 10, .. })), (2, true));
    }

    #[test]
    fn ordering_rules() {
        let e = parse_script("TOPOLOGY BUILTIN PTP-2n-1e\nBAM MAM\nCLASSES 1\n", None).unwrap_err();
        assert_eq!(e, ScriptError::Semantic { line: Some(2), message: "BAM before CLASSES".into() });
        let e = parse_script(&MINIMAL.replace("RUN\n", ""), None).unwrap_err();
        assert_eq!(e.exit_code(), 3);
    }

    #[test]
    fn inline_topology_and_defaults() {
        let text = "TOPOLOGY BEGIN\nTOPOLOGY tri\nNODE 0\nNODE 1\nNODE 2\nLINK 0 1 CAP 10\nLINK 1 2 CAP 10\nEND\nCLASSES 2\nBAM RDM\nTRAFFIC TC 1 DET 5 HOLD DET 1 BW CHOICE 1 2 PAIR 0 2\nROUTE PATH 0 2 0 1 2\nROUTE STATIC EXPLICIT\nSTOP LSPS 10\nSEEDS 1\nRUNS 3\nRUN\n";
        let s = parse_script(text, None).unwrap();
        assert_eq!(s.seeds.len(), 3);
        assert_eq!(s.topology.links()[0].bc.0, [Bandwidth::mbps(10), Bandwidth::mbps(5)]);
        let r = crate::engine::run(&s).unwrap();
        assert_eq!(r[0].totals.grants, 10);
    }

    #[test]
    fn inline_topology_errors_map_lines() {
        let text = "CLASSES 1\nTOPOLOGY BEGIN\nTOPOLOGY x\nNODE 0\nLINK 0 q CAP 1\nEND\n";
        assert!(matches!(parse_script(text, None), Err(ScriptError::Parse { line: 5, .. })));
    }

    #[test]
    fn serialize_round_trips() {
        let texts = [
            MINIMAL.to_string(),
            format!("{}SWITCH AT 100 BAM ATCS\nSWITCH AT 200 BC LINK 0 1 40 40 20\nSWITCH AT 300 BAM GBAM HTL PREEMPT OFF BC 30 30 30\nSWITCHPOLICY PREEMPT\nTRACE ON\nRUN\n", MINIMAL.replace("RUN\n", "")),
            "TOPOLOGY BUILTIN PTP-2n-1e\nCLASSES 3\nBAM RDM\nBC ALL 100 70 40\nTRAFFIC TC 0 POISSON 1 HOLD EXP 300 BW CHOICE 1 2 PAIR 0 1\nTRAFFIC TC 1 POISSON 1 HOLD EXP 300 BW CHOICE 1 2 PAIR 0 1\nTRAFFIC TC 2 POISSON 1 HOLD EXP 300 BW CHOICE 1 2 PAIR 0 1\nPROFILE TABLE1\nSEEDS 1 2 3 4 5\nRUN\n".to_string(),
            "TOPOLOGY BUILTIN NSFNET\nCLASSES 1\nBAM MAM OVERSUB\nDEMAND 0.5 0 3.25 0 13 10\nDEMAND 1.5 0 1 2 5 1.000001\nROUTE CSPF\nSTOP TIME 100\nSEEDS 9\nSTATS STEP 0.5\nSTATS SLOTS 10\nRUN\n".to_string(),
        ];
        for t in texts {
            let s = parse_script(&t, None).unwrap();
            let text = serialize_script(&s);
            assert_eq!(parse_script(&text, None).unwrap(), s, "{text}");
        }
    }

    #[test]
    fn table1_profile_matches_builder() {
        let text = "TOPOLOGY BUILTIN PTP-2n-1e\nCLASSES 3\nBAM ATCS\nBC ALL 30 30 40\nTRAFFIC TC 0 POISSON 1 HOLD EXP 300 BW CHOICE 1 2 PAIR 0 1\nTRAFFIC TC 1 POISSON 1 HOLD EXP 300 BW CHOICE 1 2 PAIR 0 1\nTRAFFIC TC 2 POISSON 1 HOLD EXP 300 BW CHOICE 1 2 PAIR 0 1\nPROFILE TABLE1\nSEEDS 1 2\nRUN\n";
        let s = parse_script(text, None).unwrap();
        assert_eq!(s, Scenario::table1(GbamConfig::atcs(3), vec![1, 2]));
    }
}
