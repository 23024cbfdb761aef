//! Acceptance suite. Each test prints one `[PASS]`/`[FAIL]` line per
//! criterion, also under the default output capture.

mod common;

use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use common::*;
use dstesim_core::prelude::*;

/// Criteria run one at a time so runtime limits are measured without contention.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(name: &str, ok: bool, detail: impl AsRef<str>) {
    // Written to the handle directly so the line survives libtest's output capture.
    let line = format!("[{}] {name}: {}\n", if ok { "PASS" } else { "FAIL" }, detail.as_ref());
    let _ = std::io::Write::write_all(&mut std::io::stdout(), line.as_bytes());
    assert!(ok, "{name} failed: {}", detail.as_ref());
}

// ---------------------------------------------------------------------------
// Kernel oracle equivalence
// ---------------------------------------------------------------------------

/// Calls `visit` for every charge matrix of `state` reachable by placing
/// integer amounts in admissible cells without overfilling any pool.
fn enumerate_states(state: &mut LinkState, cells: &[(usize, usize)], next_id: &mut u64, visit: &mut dyn FnMut(&LinkState)) {
    let Some((&(c, p), rest)) = cells.split_first() else {
        visit(state);
        return;
    };
    let room = state.pool_free(p).min(state.spec().capacity.saturating_sub(state.reserved()));
    enumerate_states(state, rest, next_id, visit);
    for units in 1..=room.millis() / 1000 {
        *next_id += 1;
        let id = LspId(*next_id);
        let plan = ChargePlan { recharges: vec![], allocations: vec![(p, Bandwidth::mbps(units))] };
        state.admit(id, c, SimTime::ZERO, &plan).expect("enumerated placement fits");
        enumerate_states(state, rest, next_id, visit);
        state.release(id).unwrap();
    }
}

fn admissible_cells(cfg: &GbamConfig) -> Vec<(usize, usize)> {
    (0..cfg.class_count)
        .flat_map(|c| cfg.admissible_pools(c).into_iter().map(move |p| (c, p)))
        .collect()
}

fn units(v: &[u64]) -> BcVector {
    BcVector(v.iter().map(|&x| Bandwidth::mbps(x)).collect())
}

fn class_reserved(state: &LinkState, c: usize) -> u64 {
    (0..state.config().class_count).map(|p| state.charge(c, p).millis()).sum::<u64>() / 1000
}

fn is_fit(a: Admission) -> bool {
    matches!(a, Admission::Fit(_))
}

#[derive(Default)]
struct Tally {
    states: u64,
    checks: u64,
    mismatches: u64,
    first: Option<String>,
}

impl Tally {
    fn record(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.mismatches += 1;
            if self.first.is_none() {
                self.first = Some(what());
            }
        }
    }
}

fn rdm_vectors(cap: u64, c: usize) -> Vec<Vec<u64>> {
    let mut out = vec![vec![cap]];
    for _ in 1..c {
        out = out
            .into_iter()
            .flat_map(|v| (0..=*v.last().unwrap()).map(move |x| [v.clone(), vec![x]].concat()))
            .collect();
    }
    out
}

fn bounded_vectors(cap: u64, c: usize, max_sum: u64) -> Vec<Vec<u64>> {
    let mut out = vec![vec![]];
    for _ in 0..c {
        out = out
            .into_iter()
            .flat_map(|v: Vec<u64>| {
                let used: u64 = v.iter().sum();
                (0..=cap.min(max_sum.saturating_sub(used))).map(move |x| [v.clone(), vec![x]].concat())
            })
            .collect();
    }
    out
}

#[test]
fn kernel_oracle_equivalence() {
    let _serial = serial();
    let started = Instant::now();
    let mut rdm = Tally::default();
    let mut mam = Tally::default();
    let mut atcs = Tally::default();
    for c in 1..=3usize {
        for cap in 1..=10u64 {
            // RDM: charging decisions against the nested constraints and the
            // transportation-feasibility oracle.
            for bc in rdm_vectors(cap, c) {
                let cfg = GbamConfig::rdm(c).with_preemption(false);
                let mut state = LinkState::new(LinkSpec::new(0, 1, Bandwidth::mbps(cap), units(&bc)).unwrap(), cfg).unwrap();
                let pools: Vec<u64> = state.pools().iter().map(|b| b.millis() / 1000).collect();
                let cells = admissible_cells(&cfg);
                let hall = HallOracle::new(&pools, cap, |k| cfg.admissible_pools(k));
                let mut id = 0;
                enumerate_states(&mut state, &cells, &mut id, &mut |s| {
                    rdm.states += 1;
                    let r: Vec<u64> = (0..c).map(|k| class_reserved(s, k)).collect();
                    for tc in 0..c {
                        for b in 1..=cap {
                            let kernel = is_fit(s.check_admission(tc, Bandwidth::mbps(b)).unwrap());
                            let nested = rdm_nested_admits(&bc, &r, tc, b);
                            let hall = hall.admits(&r, tc, b);
                            rdm.record(kernel == nested && nested == hall, || {
                                format!("RDM bc={bc:?} r={r:?} tc={tc} b={b}: kernel={kernel} nested={nested} hall={hall}")
                            });
                        }
                    }
                });
            }
            // MAM, with and without oversubscription.
            for oversub in [false, true] {
                let max_sum = if oversub { cap * c as u64 } else { cap };
                for bc in bounded_vectors(cap, c, max_sum) {
                    let mut cfg = GbamConfig::mam(c);
                    cfg.mam_oversubscription = oversub;
                    let mut state = LinkState::new(LinkSpec::new(0, 1, Bandwidth::mbps(cap), units(&bc)).unwrap(), cfg).unwrap();
                    let cells = admissible_cells(&cfg);
                    let mut id = 0;
                    enumerate_states(&mut state, &cells, &mut id, &mut |s| {
                        mam.states += 1;
                        let r: Vec<u64> = (0..c).map(|k| class_reserved(s, k)).collect();
                        for tc in 0..c {
                            for b in 1..=cap {
                                let kernel = is_fit(s.check_admission(tc, Bandwidth::mbps(b)).unwrap());
                                let direct = mam_direct_admits(&bc, cap, &r, tc, b);
                                mam.record(kernel == direct, || format!("MAM bc={bc:?} r={r:?} tc={tc} b={b}: kernel={kernel} direct={direct}"));
                            }
                        }
                    });
                }
            }
            // ATCS: the grant/deny outcome under every fill order agrees with
            // the canonical order and the feasibility oracle.
            for bc in bounded_vectors(cap, c, cap) {
                let cfg = GbamConfig::atcs(c).with_preemption(false);
                let mut state = LinkState::new(LinkSpec::new(0, 1, Bandwidth::mbps(cap), units(&bc)).unwrap(), cfg).unwrap();
                let cells = admissible_cells(&cfg);
                let hall = HallOracle::new(&bc, cap, |k| cfg.admissible_pools(k));
                let orders: Vec<Vec<Vec<usize>>> = (0..c).map(|tc| permutations(&cfg.admissible_pools(tc))).collect();
                let mut id = 0;
                enumerate_states(&mut state, &cells, &mut id, &mut |s| {
                    atcs.states += 1;
                    let r: Vec<u64> = (0..c).map(|k| class_reserved(s, k)).collect();
                    for tc in 0..c {
                        for b in 1..=cap {
                            let bw = Bandwidth::mbps(b);
                            let canonical = is_fit(s.check_admission(tc, bw).unwrap());
                            let hall = hall.admits(&r, tc, b);
                            let same = orders[tc].iter().all(|o| is_fit(s.check_admission_ordered(tc, bw, o).unwrap()) == canonical);
                            atcs.record(same && canonical == hall, || format!("ATCS bc={bc:?} r={r:?} tc={tc} b={b}: canonical={canonical} hall={hall} order-independent={same}"));
                        }
                    }
                });
            }
        }
    }
    let elapsed = started.elapsed();
    let ok = rdm.mismatches == 0 && mam.mismatches == 0 && atcs.mismatches == 0 && elapsed.as_secs_f64() < 60.0;
    let detail = format!(
        "RDM {}/{} over {} states, MAM {}/{} over {} states, ATCS {}/{} over {} states, {:.1}s (limit 60s){}",
        rdm.checks - rdm.mismatches,
        rdm.checks,
        rdm.states,
        mam.checks - mam.mismatches,
        mam.checks,
        mam.states,
        atcs.checks - atcs.mismatches,
        atcs.checks,
        atcs.states,
        elapsed.as_secs_f64(),
        rdm.first.or(mam.first).or(atcs.first).map(|m| format!("; first mismatch: {m}")).unwrap_or_default()
    );
    verdict("kernel oracle equivalence", ok, detail);
}

// ---------------------------------------------------------------------------
// CSPF against brute force
// ---------------------------------------------------------------------------

/// Builds a one-class topology over `edges` (full duplex) and link states in
/// which the links flagged infeasible carry 8 of 10 Mb/s.
fn loaded_graph(n: usize, edges: &[(usize, usize)], infeasible: impl Fn(usize) -> bool) -> (Topology, Vec<LinkState>, Vec<(usize, usize, bool)>) {
    let mut text = String::from("TOPOLOGY g\nCLASSES 1\n");
    for v in 0..n {
        text += &format!("NODE {v}\n");
    }
    for &(u, v) in edges {
        text += &format!("LINK {u} {v} CAP 10 BC 10\n");
    }
    let topo = Topology::parse(&text).unwrap();
    let mut states = Vec::new();
    let mut arcs = Vec::new();
    for (id, l) in topo.links().iter().enumerate() {
        let mut s = LinkState::new(l.clone(), GbamConfig::mam(1)).unwrap();
        let blocked = infeasible(id);
        if blocked {
            let plan = ChargePlan { recharges: vec![], allocations: vec![(0, Bandwidth::mbps(8))] };
            s.admit(LspId(1), 0, SimTime::ZERO, &plan).unwrap();
        }
        states.push(s);
        arcs.push((l.src, l.dst, !blocked));
    }
    (topo, states, arcs)
}

fn connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    while let Some(v) = stack.pop() {
        if !std::mem::replace(&mut seen[v], true) {
            stack.extend(edges.iter().filter_map(|&(a, b)| if a == v { Some(b) } else if b == v { Some(a) } else { None }));
        }
    }
    seen.into_iter().all(|x| x)
}

#[test]
fn cspf_matches_brute_force() {
    let _serial = serial();
    let mut checks = 0u64;
    let mut graphs = 0u64;
    let mut mismatch: Option<String> = None;
    let mut compare = |n: usize, edges: &[(usize, usize)], infeasible: &dyn Fn(usize) -> bool| {
        let (topo, states, arcs) = loaded_graph(n, edges, infeasible);
        for src in 0..n {
            for dst in 0..n {
                checks += 1;
                let got = cspf(&topo, &states, src, dst, 0, Bandwidth::mbps(5));
                let want = brute_force_min_hop(&arcs, src, dst);
                if got != want && mismatch.is_none() {
                    mismatch = Some(format!("n={n} edges={edges:?} {src}->{dst}: cspf={got:?} brute={want:?}"));
                }
            }
        }
    };
    // Every connected graph on up to 4 nodes under every feasibility mask.
    for n in 2..=4usize {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        for emask in 0u32..1 << pairs.len() {
            let edges: Vec<_> = pairs.iter().enumerate().filter(|(i, _)| emask & (1 << i) != 0).map(|(_, &e)| e).collect();
            if !connected(n, &edges) {
                continue;
            }
            for fmask in 0u32..1 << (2 * edges.len()) {
                graphs += 1;
                compare(n, &edges, &|id| fmask & (1 << id) != 0);
            }
        }
    }
    // Seeded corpus of connected graphs on 5 to 8 nodes.
    let mut rng = SplitMix(0x5eed);
    for _ in 0..3000 {
        let n = 5 + (rng.next() % 4) as usize;
        let density = 20 + rng.next() % 60;
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        let edges: Vec<_> = pairs.into_iter().filter(|_| rng.next() % 100 < density).collect();
        if !connected(n, &edges) {
            continue;
        }
        let blocked: Vec<bool> = (0..2 * edges.len()).map(|_| rng.next() % 100 < 30).collect();
        graphs += 1;
        compare(n, &edges, &|id| blocked[id]);
    }
    let ok = mismatch.is_none() && graphs > 0;
    verdict(
        "CSPF equals brute-force minimum-hop path",
        ok,
        format!("{checks} queries over {graphs} loaded graphs with 2-8 nodes{}", mismatch.map(|m| format!("; first mismatch: {m}")).unwrap_or_default()),
    );
}

/// Test-local generator so the corpus does not depend on the crate's RNG.
struct SplitMix(u64);

impl SplitMix {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

// ---------------------------------------------------------------------------
// Kernel invariants over random operation sequences
// ---------------------------------------------------------------------------

mod invariants {
    use super::*;
    use proptest::prelude::*;
    use proptest::test_runner::{Config, TestCaseError, TestRunner};

    #[derive(Clone, Debug)]
    pub enum Op {
        Admit { tc: usize, bw: u64 },
        Release { pick: usize },
        Switch { model: usize, preempt: bool },
    }

    #[derive(Clone, Debug)]
    pub struct Case {
        model: usize,
        classes: usize,
        cap: u64,
        raw: Vec<u64>,
        ops: Vec<Op>,
        drain_order: Vec<usize>,
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            6 => (0usize..3, 1u64..=12).prop_map(|(tc, bw)| Op::Admit { tc, bw }),
            3 => any::<usize>().prop_map(|pick| Op::Release { pick }),
            1 => (0usize..3, any::<bool>()).prop_map(|(model, preempt)| Op::Switch { model, preempt }),
        ]
    }

    pub fn case() -> impl Strategy<Value = Case> {
        (0usize..3, 1usize..=3, 1u64..=20, proptest::collection::vec(0u64..=20, 3), proptest::collection::vec(op(), 1..40), proptest::collection::vec(any::<usize>(), 40))
            .prop_map(|(model, classes, cap, raw, ops, drain_order)| Case { model, classes, cap, raw, ops, drain_order })
    }

    pub fn config(model: usize, c: usize) -> GbamConfig {
        match model {
            0 => GbamConfig::mam(c),
            1 => GbamConfig::rdm(c),
            _ => GbamConfig::atcs(c),
        }
    }

    /// A constraint vector valid for `model`, derived from the raw draws.
    pub fn constraints(model: usize, cap: u64, raw: &[u64]) -> Vec<u64> {
        let raw: Vec<u64> = raw.iter().map(|&x| x.min(cap)).collect();
        if model == 1 {
            let mut v = raw.clone();
            v[0] = cap;
            v[1..].sort_unstable_by(|a, b| b.cmp(a));
            return v;
        }
        let sum: u64 = raw.iter().sum();
        raw.iter().map(|&x| if sum > cap { x * cap / sum } else { x }).collect()
    }

    pub struct Outcome {
        pub ops: u64,
        pub fits: u64,
        pub preemptions: u64,
        pub switches: u64,
    }

    fn fail(m: String) -> TestCaseError {
        TestCaseError::fail(m)
    }

    pub fn check(case: &Case, out: &mut Outcome) -> Result<(), TestCaseError> {
        let c = case.classes;
        let cfg = config(case.model, c);
        let bc = constraints(case.model, case.cap, &case.raw[..c]);
        let mut state = LinkState::new(LinkSpec::new(0, 1, Bandwidth::mbps(case.cap), units(&bc)).unwrap(), cfg).unwrap();
        let mut live: Vec<LspId> = Vec::new();
        let mut next = 0u64;
        for (step, op) in case.ops.iter().enumerate() {
            out.ops += 1;
            let t = SimTime::from_secs(step as f64);
            match *op {
                Op::Admit { tc, bw } => {
                    let tc = tc % c;
                    let bw = Bandwidth::mbps(bw);
                    let before = state.clone();
                    let first = state.check_admission(tc, bw).unwrap();
                    prop_assert_eq!(&first, &state.check_admission(tc, bw).unwrap(), "check_admission is not repeatable");
                    prop_assert!(state == before, "check_admission mutated the state");
                    next += 1;
                    let id = LspId(next);
                    match first {
                        Admission::Fit(plan) => {
                            out.fits += 1;
                            state.admit(id, tc, t, &plan).map_err(|e| fail(format!("fresh plan rejected: {e}")))?;
                            if plan.recharges.is_empty() {
                                let mut undone = state.clone();
                                undone.release(id).unwrap();
                                prop_assert!(undone == before, "release is not the inverse of admit");
                            }
                            live.push(id);
                        }
                        Admission::NeedsPreemption(_) => {
                            prop_assert!(state.config().preemption, "preemption proposed with preemption disabled");
                            if let Some(victims) = state.select_preemption_victims(tc, bw) {
                                for v in &victims {
                                    let l = state.lsp(*v).ok_or_else(|| fail(format!("victim {v} not on link")))?;
                                    prop_assert!(l.tc < tc, "victim class {} not below requester {}", l.tc, tc);
                                    prop_assert!(l.allocations.iter().any(|&(p, _)| p > l.tc), "victim {} holds no preemptable charge", v);
                                }
                                for v in &victims {
                                    state.release(*v).unwrap();
                                    live.retain(|x| x != v);
                                    state.audit().map_err(fail)?;
                                }
                                match state.check_admission(tc, bw).unwrap() {
                                    Admission::Fit(plan) => state.admit(id, tc, t, &plan).map_err(|e| fail(e.to_string()))?,
                                    other => return Err(fail(format!("victims {victims:?} did not make room: {other:?}"))),
                                }
                                out.preemptions += victims.len() as u64;
                                live.push(id);
                            }
                        }
                        Admission::Reject(_) => {}
                    }
                }
                Op::Release { pick } => {
                    if !live.is_empty() {
                        let id = live.remove(pick % live.len());
                        state.release(id).map_err(|e| fail(e.to_string()))?;
                    }
                }
                Op::Switch { model, preempt } => {
                    out.switches += 1;
                    let policy = if preempt { SwitchPolicy::Preempt } else { SwitchPolicy::Grandfather };
                    let new_bc = constraints(model, case.cap, &case.raw[..c]);
                    let active = state.active_count();
                    let r = state.reconfigure_with(config(model, c), Some(units(&new_bc)), policy).map_err(|e| fail(e.to_string()))?;
                    prop_assert_eq!(r.recharged + r.non_conformant.len(), active, "switch report does not partition the LSPs");
                    prop_assert!(r.preempted.iter().all(|p| r.non_conformant.contains(p)));
                    if preempt {
                        prop_assert_eq!(&r.preempted, &r.non_conformant);
                    }
                    live.retain(|x| !r.preempted.contains(x));
                }
            }
            state.audit().map_err(|e| fail(format!("after {op:?}: {e}")))?;
            prop_assert_eq!(state.active_count(), live.len());
        }
        // Conservation at drain: any release order returns the zero state.
        for k in 0..live.len() {
            let id = live.remove(case.drain_order[k % case.drain_order.len()] % live.len());
            state.release(id).map_err(|e| fail(e.to_string()))?;
            state.audit().map_err(fail)?;
        }
        let zero = LinkState::new(state.spec().clone(), *state.config()).unwrap();
        prop_assert!(state == zero, "drained state differs from a fresh one");
        prop_assert_eq!(state.reserved(), Bandwidth::ZERO);
        Ok(())
    }

    pub fn run(cases: u32) -> (Result<(), String>, Outcome) {
        let mut runner = TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() });
        let out = std::cell::RefCell::new(Outcome { ops: 0, fits: 0, preemptions: 0, switches: 0 });
        let r = runner.run(&case(), |case| check(&case, &mut out.borrow_mut()));
        (r.map_err(|e| e.to_string()), out.into_inner())
    }
}

/// Engine-level conservation: after drain every link is empty and every
/// grant is accounted for by a departure, a preemption or the drain.
fn engine_drain_conservation(seed: u64) -> Result<(), String> {
    let mut rng = SplitMix(seed);
    let model = ["MAM", "RDM", "ATCS"][(rng.next() % 3) as usize];
    let bc = match model {
        "RDM" => "100 70 40",
        _ => "30 30 40",
    };
    let routing = if rng.next().is_multiple_of(2) { "ROUTE CSPF" } else { "ROUTE STATIC DEFAULT" };
    let rate = 0.05 + (rng.next() % 20) as f64 * 0.05;
    let script = format!(
        "TOPOLOGY BUILTIN NSFNET\nCLASSES 3\nBAM {model}\nBC ALL {bc}\nTRAFFIC TC 0 POISSON {rate} HOLD EXP 200 BW CHOICE 5 10\nTRAFFIC TC 1 POISSON {rate} HOLD EXP 200 BW CHOICE 5 10\nTRAFFIC TC 2 POISSON {rate} HOLD EXP 200 BW DET 10\n{routing}\nSWITCH AT 300 BAM ATCS BC 30 30 40\nSWITCH AT 600 BAM MAM BC 30 30 40\nSWITCHPOLICY {}\nSTOP LSPS 400\nSEEDS {seed}\nTRACE ON\nRUN\n",
        if rng.next().is_multiple_of(2) { "PREEMPT" } else { "GRANDFATHER" }
    );
    let sc = parse_script(&script, None).map_err(|e| e.to_string())?;
    let mut sim = Simulation::new(std::sync::Arc::new(sc), 0).map_err(|e| e.to_string())?.with_trace();
    sim.run_to_end();
    let mut tcs = std::collections::HashMap::new();
    let mut departures = 0u64;
    for r in sim.trace() {
        match &r.event {
            TraceEvent::Arrival { request, decision, .. } => {
                tcs.insert(request.id, request.tc);
                if let Decision::GrantedWithPreemption { victims, .. } = decision {
                    for v in victims {
                        if tcs[v] >= request.tc {
                            return Err(format!("{v} of class {} preempted by class {}", tcs[v], request.tc));
                        }
                    }
                }
            }
            TraceEvent::Departure { .. } => departures += 1,
            _ => {}
        }
    }
    let active = sim.active_count() as u64;
    sim.drain();
    let t = sim.totals().clone();
    if t.grants != departures + t.preemptions + active {
        return Err(format!("grants {} != departures {departures} + preemptions {} + drained {active}", t.grants, t.preemptions));
    }
    for s in sim.link_states() {
        s.audit()?;
        if !s.is_empty() || s.reserved() != Bandwidth::ZERO {
            return Err(format!("link {}->{} not empty after drain", s.spec().src, s.spec().dst));
        }
    }
    Ok(())
}

#[test]
fn kernel_invariants() {
    let _serial = serial();
    let started = Instant::now();
    let cases = 100_000;
    let (result, out) = invariants::run(cases);
    let mut engine_failures = Vec::new();
    let engine_runs = 200;
    for seed in 0..engine_runs {
        if let Err(e) = engine_drain_conservation(seed) {
            engine_failures.push(format!("seed {seed}: {e}"));
        }
    }
    let ok = result.is_ok() && engine_failures.is_empty();
    verdict(
        "invariants (pool safety, double entry, admit/release identity, preemption rule, conservation at drain)",
        ok,
        format!(
            "{cases} random sequences, {} operations ({} fits, {} preemptions, {} switches), {engine_runs} drained engine runs, {:.1}s{}{}",
            out.ops,
            out.fits,
            out.preemptions,
            out.switches,
            started.elapsed().as_secs_f64(),
            result.err().map(|e| format!("; kernel violation: {e}")).unwrap_or_default(),
            engine_failures.first().map(|e| format!("; engine violation: {e}")).unwrap_or_default(),
        ),
    );
}

// ---------------------------------------------------------------------------
// Determinism
// ---------------------------------------------------------------------------

const SMOKE: &str = include_str!("../../../scenarios/smoke.dss");
const NSFNET: &str = include_str!("../../../scenarios/nsfnet-cspf.dss");

fn fingerprint(reports: &[RunReport]) -> Vec<(String, String, Vec<u8>)> {
    reports.iter().map(|r| (r.trace_jsonl(), r.summary_json(), r.series_csv())).collect()
}

#[test]
fn determinism() {
    let _serial = serial();
    let mut sc = parse_script(&NSFNET.replace("RUN\n", "SWITCH AT 3600 BAM ATCS BC 30 30 40\nTRACE ON\nRUN\n"), None).unwrap();
    sc.seeds = vec![11, 12, 13, 14];
    let reference = fingerprint(&run(&sc).unwrap());
    let mut identical = 0;
    let mut total = 0;
    for i in 0..5 {
        for parallel in [false, true] {
            let reports = if parallel { run_parallel(&sc) } else { run(&sc) }.unwrap();
            total += 1;
            if fingerprint(&reports) == reference {
                identical += 1;
            } else {
                println!("repeat {i} (parallel={parallel}) differs");
            }
        }
    }
    let events: usize = reference.iter().map(|r| r.0.lines().count()).sum();
    let distinct_seeds = reference.windows(2).all(|w| w[0].0 != w[1].0);
    verdict(
        "determinism across repeated and parallel executions",
        identical == total && distinct_seeds && events > 0,
        format!("{identical}/{total} executions byte-identical (trace JSONL, summary JSON, series CSV; {} runs, {events} trace records); seeds yield distinct traces: {distinct_seeds}", sc.seeds.len()),
    );
}

// ---------------------------------------------------------------------------
// Reference profile scenario
// ---------------------------------------------------------------------------

struct ModelRuns {
    model: BamModel,
    reports: Vec<RunReport>,
    elapsed: f64,
}

const TABLE1_SEEDS: std::ops::RangeInclusive<u64> = 1..=10;

fn hours(range: std::ops::Range<usize>) -> (SimTime, SimTime) {
    (SimTime::from_secs(range.start as f64 * 3600.0), SimTime::from_secs(range.end as f64 * 3600.0))
}

/// Mean utilization of the loaded link over whole phases `range` (0-based).
fn window_util(r: &RunReport, range: std::ops::Range<usize>) -> f64 {
    let (a, b) = hours(range);
    r.stats.as_ref().unwrap().utilization(0, a, b).unwrap()
}

fn window_blocking(r: &RunReport, range: std::ops::Range<usize>) -> f64 {
    let mut c = Counters::default();
    for p in &r.phases[range] {
        c.add(&p.totals);
    }
    c.blocking_probability().unwrap_or(0.0)
}

fn table1_runs() -> &'static [ModelRuns] {
    static RUNS: std::sync::OnceLock<Vec<ModelRuns>> = std::sync::OnceLock::new();
    RUNS.get_or_init(|| {
        [GbamConfig::mam(3), GbamConfig::rdm(3), GbamConfig::atcs(3)]
            .into_iter()
            .map(|cfg| {
                let sc = Scenario::table1(cfg, TABLE1_SEEDS.collect());
                assert_eq!(sc.traffic, {
                    let TrafficSource::Profile { classes, .. } = &sc.traffic else { unreachable!() };
                    TrafficSource::Profile { classes: classes.clone(), schedule: build_table1_schedule(sc.topology.link(0).capacity) }
                });
                let started = Instant::now();
                let reports = run(&sc).unwrap();
                ModelRuns { model: cfg.model, reports, elapsed: started.elapsed().as_secs_f64() }
            })
            .collect()
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn table1_reproduction() {
    let _serial = serial();
    let runs = table1_runs();
    let mut ok = true;
    let mut parts = Vec::new();
    for m in runs {
        let low = mean(m.reports.iter().map(|r| window_util(r, 0..3)));
        let high = mean(m.reports.iter().map(|r| window_util(r, 3..6)));
        let low_max = m.reports.iter().map(|r| window_util(r, 0..3)).fold(f64::MIN, f64::max);
        let high_min = m.reports.iter().map(|r| window_util(r, 3..6)).fold(f64::MAX, f64::min);
        let checked = m.model != BamModel::Mam;
        ok &= low < 90.0 && m.elapsed < 30.0 && (!checked || high >= 90.0);
        parts.push(format!(
            "{}: phases 1-3 {low:.2}% (max seed {low_max:.2}%), phases 4-6 {high:.2}% (min seed {high_min:.2}%){}, {:.2}s",
            m.model,
            if checked { "" } else { " [not required]" },
            m.elapsed
        ));
    }
    verdict(
        &format!("reference profile utilization split over {} seeds (< 90% then >= 90% for ATCS and RDM, < 30 s per model)", TABLE1_SEEDS.count()),
        ok,
        parts.join("; "),
    );
}

#[test]
fn model_ordering_under_overload() {
    let _serial = serial();
    let runs = table1_runs();
    let [mam, rdm, atcs] = runs else { unreachable!() };
    let mut held_util = 0;
    let mut held_block = 0;
    let mut first = None;
    let n = TABLE1_SEEDS.count();
    for i in 0..n {
        let u = [atcs, rdm, mam].map(|m| window_util(&m.reports[i], 3..6));
        let b = [atcs, rdm, mam].map(|m| window_blocking(&m.reports[i], 3..6));
        let ou = u[0] >= u[1] && u[1] >= u[2];
        let ob = b[0] <= b[1] && b[1] <= b[2];
        held_util += ou as usize;
        held_block += ob as usize;
        if !(ou && ob) && first.is_none() {
            first = Some(format!("seed {}: util {u:?}, blocking {b:?}", atcs.reports[i].seed));
        }
    }
    let mu = [atcs, rdm, mam].map(|m| mean(m.reports.iter().map(|r| window_util(r, 3..6))));
    let mb = [atcs, rdm, mam].map(|m| mean(m.reports.iter().map(|r| window_blocking(r, 3..6))));
    verdict(
        "model ordering under overload, per seed",
        held_util == n && held_block == n,
        format!(
            "utilization ATCS >= RDM >= MAM on {held_util}/{n} seeds (means {:.2} / {:.2} / {:.2}%), blocking ATCS <= RDM <= MAM on {held_block}/{n} seeds (means {:.4} / {:.4} / {:.4}){}",
            mu[0],
            mu[1],
            mu[2],
            mb[0],
            mb[1],
            mb[2],
            first.map(|f| format!("; first violation {f}")).unwrap_or_default()
        ),
    );
}

// ---------------------------------------------------------------------------
// Traffic statistics
// ---------------------------------------------------------------------------

#[test]
fn traffic_statistics() {
    let _serial = serial();
    // Poisson: rate 0.1/s over 1000 s, so lambda*T = 100 and sigma = 10.
    let poisson = "TOPOLOGY BUILTIN PTP-2n-1e\nCLASSES 1\nBAM MAM\nBC ALL 100\nTRAFFIC TC 0 POISSON 0.1 HOLD DET 1 BW DET 1 PAIR 0 1\nSTOP TIME 1000\nSEEDS 1\nRUN\n";
    let mut sc = parse_script(poisson, None).unwrap();
    sc.seeds = (1..=100).collect();
    let counts: Vec<u64> = run(&sc).unwrap().iter().map(|r| r.totals.requests).collect();
    let outliers = counts.iter().filter(|&&n| (n as f64 - 100.0).abs() > 30.0).count();
    let mean_count = counts.iter().sum::<u64>() as f64 / counts.len() as f64;

    // Deterministic streams: exact arrival and departure instants, independent of the seed.
    let det = "TOPOLOGY BUILTIN PTP-2n-1e\nCLASSES 2\nBAM MAM\nBC ALL 50 50\nTRAFFIC TC 0 DET 10 HOLD DET 25 BW DET 1 PAIR 0 1\nTRAFFIC TC 1 DET 40 HOLD DET 5 BW DET 2 PAIR 1 0\nSTOP TIME 1000\nSEEDS 1\nTRACE ON\nRUN\n";
    let mut sc = parse_script(det, None).unwrap();
    sc.seeds = vec![1, 2, 3];
    let reports = run(&sc).unwrap();
    let mut det_ok = reports.iter().all(|r| r.trace == reports[0].trace);
    let mut arrivals = [Vec::new(), Vec::new()];
    let mut departures = std::collections::HashMap::new();
    let mut starts = std::collections::HashMap::new();
    for rec in &reports[0].trace {
        match &rec.event {
            TraceEvent::Arrival { request, .. } => {
                arrivals[request.tc].push(rec.time.micros());
                starts.insert(request.id, (request.tc, rec.time.micros(), request.bandwidth));
            }
            TraceEvent::Departure { lsp } => {
                departures.insert(*lsp, rec.time.micros());
            }
            _ => {}
        }
    }
    det_ok &= arrivals[0] == (1..=100).map(|k| k * 10_000_000).collect::<Vec<u64>>();
    det_ok &= arrivals[1] == (1..=25).map(|k| k * 40_000_000).collect::<Vec<u64>>();
    det_ok &= starts.iter().all(|(id, &(tc, t, bw))| {
        let hold = [25_000_000, 5_000_000][tc];
        bw == Bandwidth::mbps([1, 2][tc]) && departures.get(id).is_none_or(|&d| d == t + hold)
    });
    det_ok &= reports[0].totals.requests == 125;

    verdict(
        "traffic statistics (Poisson counts within 3 sigma of 100 over 100 seeds, deterministic streams exact)",
        outliers <= 1 && det_ok,
        format!(
            "{outliers} of 100 Poisson counts beyond 3 sigma (range {}..{}, mean {mean_count:.2}); deterministic streams exact: {det_ok}",
            counts.iter().min().unwrap(),
            counts.iter().max().unwrap()
        ),
    );
}

// ---------------------------------------------------------------------------
// Batch and live runs agree
// ---------------------------------------------------------------------------

fn live_with_switch(base: &Scenario, at: SimTime, action: ControlAction) -> RunReport {
    let mut s = Session::new("live", base.clone(), 0).unwrap();
    s.start().unwrap();
    s.pause().unwrap();
    s.step(None, Some(at)).unwrap();
    assert_eq!(s.state().clock, at);
    s.apply(action).unwrap();
    s.resume().unwrap();
    while s.status() != SessionStatus::Done {
        s.advance(1000);
    }
    s.report().unwrap()
}

#[test]
fn batch_live_equivalence() {
    let _serial = serial();
    let base = parse_script(SMOKE, None).unwrap();
    let plain = {
        let mut sc = base.clone();
        sc.trace = true;
        run(&sc).unwrap().remove(0)
    };
    // A tick boundary, and the instant of an arrival.
    let arrival_at = plain.trace.iter().filter(|r| matches!(r.event, TraceEvent::Arrival { .. })).nth(10).unwrap().time;
    let cases = [
        (SimTime::from_secs(1800.0), ControlAction::Model { config: GbamConfig::atcs(3), bc: None }),
        (arrival_at, ControlAction::Model { config: GbamConfig::rdm(3), bc: Some(units(&[100, 60, 30])) }),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (at, action) in cases {
        let mut batch_sc = base.clone();
        batch_sc.trace = true;
        batch_sc.switches = vec![ScheduledSwitch { at, action: action.clone() }];
        let batch = run(&batch_sc).unwrap().remove(0);
        let live = live_with_switch(&base, at, action);
        let same_trace = batch.trace_jsonl() == live.trace_jsonl();
        let same_summary = batch.summary_json() == live.summary_json();
        let switched = batch.trace.iter().any(|r| r.time == at && matches!(r.event, TraceEvent::ModelSwitch { .. }));
        ok &= same_trace && same_summary && switched;
        parts.push(format!("switch at {:.6}s: traces identical {same_trace} ({} records), summaries identical {same_summary}", at.as_secs(), batch.trace.len()));
    }
    verdict("batch/live equivalence for a model switch", ok, parts.join("; "));
}

// ---------------------------------------------------------------------------
// Statistics integrity
// ---------------------------------------------------------------------------

const INTEGRITY: &str = "TOPOLOGY BUILTIN NSFNET
CLASSES 3
BAM RDM
BC ALL 100 70 40
TRAFFIC TC 0 POISSON 0.4 HOLD EXP 150 BW CHOICE 2 5 10
TRAFFIC TC 1 POISSON 0.3 HOLD EXP 150 BW CHOICE 2 5
TRAFFIC TC 2 POISSON 0.2 HOLD EXP 150 BW DET 5
ROUTE CSPF
SWITCH AT 1800 BAM ATCS BC 30 30 40
SWITCH AT 3600 BAM MAM BC 30 30 40
SWITCHPOLICY PREEMPT
STOP TIME 5400
SEEDS 5 6
TRACE ON
RUN
";

/// Replays the trace into per-link reservation integrals; returns, per
/// link, the mean utilization of each consolidation slot and of the run.
fn reintegrate(topo: &Topology, trace: &[TraceRecord], step: SimTime, end: SimTime) -> Vec<(Vec<f64>, f64)> {
    let n = topo.links().len();
    let mut reserved = vec![0u128; n];
    let mut lsps: std::collections::HashMap<LspId, (Vec<LinkId>, u64)> = std::collections::HashMap::new();
    let slots = end.micros().div_ceil(step.micros()) as usize;
    let mut area = vec![vec![0u128; slots]; n];
    let mut now = 0u64;
    let mut advance = |to: u64, reserved: &[u128], area: &mut Vec<Vec<u128>>| {
        while now < to {
            let slot = (now / step.micros()) as usize;
            let until = to.min((slot as u64 + 1) * step.micros());
            for l in 0..n {
                area[l][slot] += reserved[l] * (until - now) as u128;
            }
            now = until;
        }
    };
    let remove = |id: &LspId, reserved: &mut [u128], lsps: &mut std::collections::HashMap<LspId, (Vec<LinkId>, u64)>| {
        if let Some((links, bw)) = lsps.remove(id) {
            for l in links {
                reserved[l] -= bw as u128;
            }
        }
    };
    for rec in trace {
        advance(rec.time.micros(), &reserved, &mut area);
        match &rec.event {
            TraceEvent::Arrival { request, decision, .. } => {
                if let Decision::GrantedWithPreemption { victims, .. } = decision {
                    for v in victims {
                        remove(v, &mut reserved, &mut lsps);
                    }
                }
                if let Some(path) = decision.path() {
                    let links = topo.path_links(path).unwrap();
                    for &l in &links {
                        reserved[l] += request.bandwidth.millis() as u128;
                    }
                    lsps.insert(request.id, (links, request.bandwidth.millis()));
                }
            }
            TraceEvent::Departure { lsp } => remove(lsp, &mut reserved, &mut lsps),
            TraceEvent::ModelSwitch { report, .. } | TraceEvent::BcRetune { report, .. } => {
                for v in &report.preempted {
                    remove(v, &mut reserved, &mut lsps);
                }
            }
            _ => {}
        }
    }
    advance(end.micros(), &reserved, &mut area);
    (0..n)
        .map(|l| {
            let cap = topo.link(l).capacity.millis() as f64;
            let per_slot = (0..slots)
                .map(|s| {
                    let width = (end.micros().min((s as u64 + 1) * step.micros()) - s as u64 * step.micros()) as f64;
                    100.0 * area[l][s] as f64 / (cap * width)
                })
                .collect();
            let total: u128 = area[l].iter().sum();
            (per_slot, 100.0 * total as f64 / (cap * end.micros() as f64))
        })
        .collect()
}

#[test]
fn stats_integrity() {
    let _serial = serial();
    let sc = parse_script(INTEGRITY, None).unwrap();
    let reports = run(&sc).unwrap();
    let topo = &sc.topology;
    let mut worst: f64 = 0.0;
    let mut compared = 0usize;
    let mut counters_ok = true;
    let mut preempted = 0u64;
    let mut detail = Vec::new();
    for r in &reports {
        let stats = r.stats.as_ref().unwrap();
        let exported = read_series_csv(r.series_csv().as_slice()).unwrap();
        let replay = reintegrate(topo, &r.trace, sc.stats.step, r.end_time);
        for (l, link) in topo.links().iter().enumerate() {
            let id = format!("link.{}-{}.util", link.src, link.dst);
            let slots = &exported.iter().find(|(k, _)| *k == id).unwrap().1;
            for (i, slot) in slots.iter().enumerate() {
                worst = worst.max((slot.value.unwrap() - replay[l].0[i]).abs());
                compared += 1;
            }
            if slots.len() != replay[l].0.len() {
                counters_ok = false;
                detail.push(format!("{id}: {} exported slots, {} replayed", slots.len(), replay[l].0.len()));
            }
            worst = worst.max((r.links[l].mean_utilization.unwrap() - replay[l].1).abs());
        }

        // Counters: trace tallies, stats store and report agree exactly.
        let mut tally = Counters::default();
        let mut per_class = vec![Counters::default(); 3];
        let mut tcs = std::collections::HashMap::new();
        for rec in &r.trace {
            match &rec.event {
                TraceEvent::Arrival { request, decision, devolved } => {
                    tcs.insert(request.id, request.tc);
                    for b in [&mut tally, &mut per_class[request.tc]] {
                        b.requests += 1;
                        b.devolutions += devolved.len() as u64;
                        match decision {
                            Decision::Blocked { block_reason } => b.block(*block_reason),
                            _ => b.grants += 1,
                        }
                    }
                    if let Decision::GrantedWithPreemption { victims, .. } = decision {
                        for v in victims {
                            tally.preemptions += 1;
                            per_class[tcs[v]].preemptions += 1;
                        }
                    }
                }
                TraceEvent::ModelSwitch { report, .. } | TraceEvent::BcRetune { report, .. } => {
                    for v in &report.preempted {
                        tally.preemptions += 1;
                        per_class[tcs[v]].preemptions += 1;
                    }
                }
                _ => {}
            }
        }
        preempted += tally.preemptions;
        let mut phase_sum = Counters::default();
        for p in &r.phases {
            phase_sum.add(&p.totals);
        }
        let c = stats.counters();
        let ok = tally == r.totals && per_class == r.per_class && c.total == r.totals && c.per_class == r.per_class && phase_sum == r.totals && r.blocking_probability == r.totals.blocking_probability();
        if !ok {
            detail.push(format!("seed {}: trace {tally:?}, report {:?}, stats {:?}", r.seed, r.totals, c.total));
        }
        counters_ok &= ok;
    }
    verdict(
        "statistics integrity (re-integrated utilization within 0.01 pp, counters exact)",
        worst <= 0.01 && counters_ok && compared > 0 && preempted > 0,
        format!(
            "{compared} slot values over {} links and {} runs, max deviation {worst:.2e} pp; counters exact: {counters_ok} ({preempted} preemptions){}",
            topo.links().len(),
            reports.len(),
            detail.first().map(|d| format!("; {d}")).unwrap_or_default()
        ),
    );
}
