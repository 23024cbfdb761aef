use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::flow::{FlowNet, INF};
use super::{GbamConfig, KernelError};
use crate::domain::{validate_constraints, Bandwidth, BcVector, BlockReason, LinkSpec, LspId, SimTime, TrafficClass};

/// Moves `amount` of an LSP's charge from one pool to another.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recharge {
    pub lsp: LspId,
    pub from: usize,
    pub to: usize,
    pub amount: Bandwidth,
}

/// How a new LSP is charged to the pools of one link.
///
/// `recharges` are applied first and return loans so that `allocations`
/// fit; they are empty when idle capacity alone suffices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChargePlan {
    pub recharges: Vec<Recharge>,
    pub allocations: Vec<(usize, Bandwidth)>,
}

impl ChargePlan {
    pub fn total(&self) -> Bandwidth {
        self.allocations.iter().map(|&(_, a)| a).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deficit {
    /// Bandwidth missing from the admissible pools after re-charging.
    pub pool_shortfall: Bandwidth,
    /// Bandwidth missing from the aggregate link capacity.
    pub capacity_shortfall: Bandwidth,
    /// Pool-level shortfall attributed to the admissible pools holding
    /// preemptable loans, in fill order.
    pub per_pool: Vec<(usize, Bandwidth)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Admission {
    Fit(ChargePlan),
    NeedsPreemption(Deficit),
    Reject(BlockReason),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SwitchPolicy {
    /// Keep LSPs that no longer fit any pool, outside the pool accounting.
    #[default]
    Grandfather,
    /// Tear down LSPs that no longer fit.
    Preempt,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchReport {
    pub non_conformant: Vec<LspId>,
    pub recharged: usize,
    /// Subset of `non_conformant` torn down under [`SwitchPolicy::Preempt`].
    pub preempted: Vec<LspId>,
}

/// Charges of one LSP on one link.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LspCharge {
    pub tc: TrafficClass,
    pub bandwidth: Bandwidth,
    pub established: SimTime,
    /// Sorted by pool, amounts non-zero. Empty for grandfathered LSPs.
    pub allocations: Vec<(usize, Bandwidth)>,
    pub grandfathered: bool,
}

impl LspCharge {
    fn in_pool(&self, pool: usize) -> Bandwidth {
        self.allocations
            .iter()
            .find(|&&(p, _)| p == pool)
            .map(|&(_, a)| a)
            .unwrap_or(Bandwidth::ZERO)
    }
}

/// Admission state of one directed link.
///
/// `charge[c][p]` is the bandwidth of class-`c` LSPs charged to pool `p`.
/// Every non-grandfathered LSP's allocations sum to its bandwidth and the
/// matrix is the sum of those allocations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinkState {
    spec: LinkSpec,
    cfg: GbamConfig,
    pools: Vec<Bandwidth>,
    charge: Vec<Vec<Bandwidth>>,
    lsps: BTreeMap<LspId, LspCharge>,
    reserved: Bandwidth,
}

/// Class counts whose fill order is built without allocating.
const INLINE_CLASSES: usize = 8;

/// Victim order: lowest priority first, newest first within a class.
fn victim_order(a: (&LspId, &LspCharge), b: (&LspId, &LspCharge)) -> std::cmp::Ordering {
    a.1.tc
        .cmp(&b.1.tc)
        .then(b.1.established.cmp(&a.1.established))
        .then(b.0.cmp(a.0))
}

impl LinkState {
    pub fn new(spec: LinkSpec, cfg: GbamConfig) -> Result<Self, KernelError> {
        cfg.validate()?;
        validate_constraints(&cfg, &spec)?;
        let c = cfg.class_count;
        let pools = cfg.pool_layout(&spec);
        Ok(LinkState {
            spec,
            cfg,
            pools,
            charge: vec![vec![Bandwidth::ZERO; c]; c],
            lsps: BTreeMap::new(),
            reserved: Bandwidth::ZERO,
        })
    }

    pub fn spec(&self) -> &LinkSpec {
        &self.spec
    }

    pub fn config(&self) -> &GbamConfig {
        &self.cfg
    }

    pub fn pools(&self) -> &[Bandwidth] {
        &self.pools
    }

    pub fn charge(&self, tc: TrafficClass, pool: usize) -> Bandwidth {
        self.charge[tc][pool]
    }

    /// Total bandwidth of every LSP on the link, grandfathered ones included.
    pub fn reserved(&self) -> Bandwidth {
        self.reserved
    }

    pub fn reserved_by_class(&self, tc: TrafficClass) -> Bandwidth {
        self.lsps.values().filter(|l| l.tc == tc).map(|l| l.bandwidth).sum()
    }

    pub fn pool_used(&self, pool: usize) -> Bandwidth {
        self.charge.iter().map(|row| row[pool]).sum()
    }

    pub fn pool_free(&self, pool: usize) -> Bandwidth {
        self.pools[pool].saturating_sub(self.pool_used(pool))
    }

    pub fn lsp(&self, id: LspId) -> Option<&LspCharge> {
        self.lsps.get(&id)
    }

    pub fn lsps(&self) -> impl Iterator<Item = (LspId, &LspCharge)> {
        self.lsps.iter().map(|(&id, l)| (id, l))
    }

    pub fn active_count(&self) -> usize {
        self.lsps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lsps.is_empty() && self.reserved.is_zero()
    }

    fn check_class(&self, tc: TrafficClass) -> Result<(), KernelError> {
        if tc >= self.cfg.class_count {
            Err(KernelError::ClassOutOfRange { tc, class_count: self.cfg.class_count })
        } else {
            Ok(())
        }
    }

    /// Decides whether `bw` of class `tc` fits on this link. Does not mutate.
    pub fn check_admission(&self, tc: TrafficClass, bw: Bandwidth) -> Result<Admission, KernelError> {
        self.check_class(tc)?;
        self.with_order(tc, |order| self.admission(tc, bw, order))
    }

    /// Calls `f` with the fill order of `tc`, on the stack for small class counts.
    fn with_order<R>(&self, tc: TrafficClass, f: impl FnOnce(&[usize]) -> R) -> R {
        if self.cfg.class_count > INLINE_CLASSES {
            return f(&self.cfg.admissible_pools(tc));
        }
        let mut buf = [0usize; INLINE_CLASSES];
        let mut n = 0;
        for p in self.cfg.admissible_iter(tc) {
            buf[n] = p;
            n += 1;
        }
        f(&buf[..n])
    }

    /// Like [`LinkState::check_admission`] but filling pools in `order`,
    /// which must be a permutation of the admissible pools of `tc`. The
    /// order changes where charges land, never whether the request fits.
    pub fn check_admission_ordered(&self, tc: TrafficClass, bw: Bandwidth, order: &[usize]) -> Result<Admission, KernelError> {
        self.check_class(tc)?;
        let permutation = order.len() == self.cfg.admissible_iter(tc).count()
            && order.iter().enumerate().all(|(i, &p)| self.cfg.is_admissible(tc, p) && !order[..i].contains(&p));
        if !permutation {
            return Err(KernelError::InvalidConfig(format!("{order:?} is not an ordering of the pools admissible to class {tc}")));
        }
        self.admission(tc, bw, order)
    }

    fn admission(&self, tc: TrafficClass, bw: Bandwidth, order: &[usize]) -> Result<Admission, KernelError> {
        if bw.is_zero() {
            return Err(KernelError::ZeroBandwidth);
        }
        let aggregate_ok = self.reserved + bw <= self.spec.capacity;
        let (plan, placed) = self.pool_plan(bw, order);
        let reason = match plan {
            Some(plan) if aggregate_ok => return Ok(Admission::Fit(plan)),
            Some(_) => BlockReason::Capacity,
            None => BlockReason::Constraint,
        };
        if !self.cfg.preemption {
            return Ok(Admission::Reject(reason));
        }
        let candidates = self.preemption_candidates(tc);
        if candidates.is_empty() {
            return Ok(Admission::Reject(reason));
        }
        let mut trial = self.clone();
        for id in &candidates {
            trial.remove(*id);
        }
        if !trial.fits(tc, bw) {
            return Ok(Admission::Reject(reason));
        }
        let pool_shortfall = bw - placed;
        let capacity_shortfall = (self.reserved + bw).saturating_sub(self.spec.capacity);
        let mut left = pool_shortfall;
        let mut per_pool = Vec::new();
        for &p in order {
            if left.is_zero() {
                break;
            }
            let loans: Bandwidth = (0..p.min(tc)).map(|c| self.charge[c][p]).sum();
            let take = loans.min(left);
            if !take.is_zero() {
                per_pool.push((p, take));
                left -= take;
            }
        }
        Ok(Admission::NeedsPreemption(Deficit { pool_shortfall, capacity_shortfall, per_pool }))
    }

    fn fits(&self, tc: TrafficClass, bw: Bandwidth) -> bool {
        self.reserved + bw <= self.spec.capacity && self.with_order(tc, |order| self.pool_plan(bw, order).0.is_some())
    }

    /// Returns a plan if the pools can absorb `bw` (ignoring the aggregate
    /// check), along with how much could be placed.
    fn pool_plan(&self, bw: Bandwidth, order: &[usize]) -> (Option<ChargePlan>, Bandwidth) {
        let free: Bandwidth = order.iter().map(|&p| self.pool_free(p)).sum();
        if free >= bw {
            let mut left = bw;
            let mut allocations = Vec::with_capacity(order.len());
            for &p in order {
                let take = self.pool_free(p).min(left);
                if !take.is_zero() {
                    allocations.push((p, take));
                    left -= take;
                }
            }
            return (Some(ChargePlan { recharges: Vec::new(), allocations }), bw);
        }
        // Re-charging cannot place more than this bound; equality with the
        // direct free space settles the shortfall without a flow.
        if self.reachable_free(order) == free {
            return (None, free);
        }
        self.flow_plan(bw, order)
    }

    /// Free space in every pool reachable from `order` by moving foreign
    /// charges, an upper bound on what re-charging can make room for.
    fn reachable_free(&self, order: &[usize]) -> Bandwidth {
        let c = self.cfg.class_count;
        if c <= 64 {
            let admissible = |k: usize| self.cfg.admissible_iter(k).fold(0u64, |m, p| m | 1 << p);
            let mut seen = order.iter().fold(0u64, |m, &p| m | 1 << p);
            let mut frontier = seen;
            while frontier != 0 {
                let p = frontier.trailing_zeros() as usize;
                frontier &= frontier - 1;
                for k in (0..c).filter(|&k| k != p && !self.charge[k][p].is_zero()) {
                    let new = admissible(k) & !seen;
                    seen |= new;
                    frontier |= new;
                }
            }
            return (0..c).filter(|&p| seen & (1 << p) != 0).map(|p| self.pool_free(p)).sum();
        }
        let mut seen = vec![false; c];
        let mut stack: Vec<usize> = order.to_vec();
        while let Some(p) = stack.pop() {
            if std::mem::replace(&mut seen[p], true) {
                continue;
            }
            for k in (0..c).filter(|&k| k != p && !self.charge[k][p].is_zero()) {
                stack.extend(self.cfg.admissible_iter(k).filter(|&b| !seen[b]));
            }
        }
        (0..c).filter(|&p| seen[p]).map(|p| self.pool_free(p)).sum()
    }

    fn pool_node(&self, p: usize) -> usize {
        2 + p
    }

    fn holder_node(&self, p: usize, k: usize) -> usize {
        2 + self.cfg.class_count + p * self.cfg.class_count + k
    }

    /// Flow network over pools. A unit of flow entering pool `p` is either
    /// absorbed by free space (`p -> sink`) or displaces a foreign charge of
    /// class `k` sitting in `p` towards another pool admissible for `k`.
    fn recharge_network(&self, with_free_at: impl Fn(usize) -> bool) -> FlowNet {
        let c = self.cfg.class_count;
        let mut net = FlowNet::new(2 + c + c * c);
        for p in 0..c {
            if with_free_at(p) {
                net.add_edge(self.pool_node(p), 1, self.pool_free(p).millis() as i64);
            }
        }
        for p in 0..c {
            for k in 0..c {
                if k == p || self.charge[k][p].is_zero() {
                    continue;
                }
                let targets: Vec<usize> = self.cfg.admissible_pools(k).into_iter().filter(|&b| b != p).collect();
                if targets.is_empty() {
                    continue;
                }
                let h = self.holder_node(p, k);
                net.add_edge(self.pool_node(p), h, self.charge[k][p].millis() as i64);
                for b in targets {
                    net.add_edge(h, self.pool_node(b), INF);
                }
            }
        }
        net
    }

    /// Turns the holder-to-pool flows into concrete per-LSP moves, taking
    /// charges in victim order.
    fn extract_moves(&self, net: &FlowNet) -> Vec<Recharge> {
        let c = self.cfg.class_count;
        let mut moves = Vec::new();
        for p in 0..c {
            for k in 0..c {
                if k == p {
                    continue;
                }
                let h = self.holder_node(p, k);
                let mut holders: Vec<(&LspId, &LspCharge)> = self
                    .lsps
                    .iter()
                    .filter(|(_, l)| l.tc == k && !l.in_pool(p).is_zero())
                    .collect();
                holders.sort_by(|a, b| victim_order(*a, *b));
                let mut cursor = holders.into_iter().map(|(id, l)| (*id, l.in_pool(p)));
                let mut carry: Option<(LspId, Bandwidth)> = None;
                for b in self.cfg.admissible_pools(k) {
                    if b == p {
                        continue;
                    }
                    let mut need = net.flow(h, self.pool_node(b)) as u64;
                    while need > 0 {
                        let (id, avail) = match carry.take() {
                            Some(x) => x,
                            None => cursor.next().expect("flow exceeds holder charges"),
                        };
                        let take = avail.millis().min(need);
                        moves.push(Recharge { lsp: id, from: p, to: b, amount: Bandwidth::from_millis(take) });
                        need -= take;
                        if avail.millis() > take {
                            carry = Some((id, Bandwidth::from_millis(avail.millis() - take)));
                        }
                    }
                }
            }
        }
        moves
    }

    fn flow_plan(&self, bw: Bandwidth, order: &[usize]) -> (Option<ChargePlan>, Bandwidth) {
        let mut net = self.recharge_network(|_| true);
        for &p in order {
            net.add_edge(0, self.pool_node(p), INF);
        }
        let sent = net.max_flow(0, 1, bw.millis() as i64) as u64;
        if sent < bw.millis() {
            return (None, Bandwidth::from_millis(sent));
        }
        let allocations = order
            .iter()
            .filter_map(|&p| {
                let f = net.flow(0, self.pool_node(p));
                (f > 0).then(|| (p, Bandwidth::from_millis(f as u64)))
            })
            .collect();
        (Some(ChargePlan { recharges: self.extract_moves(&net), allocations }), bw)
    }

    /// Re-charges foreign (loaned) charges out of `pool` into other pools
    /// admissible to their owners, freeing `deficit`. `None` means the loans
    /// cannot be returned and preemption has to be considered.
    pub fn devolve(&self, pool: usize, deficit: Bandwidth) -> Option<Vec<Recharge>> {
        if pool >= self.cfg.class_count || deficit.is_zero() {
            return None;
        }
        let mut net = self.recharge_network(|p| p != pool);
        net.add_edge(0, self.pool_node(pool), INF);
        let sent = net.max_flow(0, 1, deficit.millis() as i64) as u64;
        (sent >= deficit.millis()).then(|| self.extract_moves(&net))
    }

    /// Applies recharge moves; used by [`LinkState::admit`] and on its own.
    pub fn apply_recharges(&mut self, moves: &[Recharge]) -> Result<(), KernelError> {
        let mut next = self.clone();
        next.apply_recharges_unchecked(moves)?;
        next.check_pools()?;
        *self = next;
        Ok(())
    }

    fn apply_recharges_unchecked(&mut self, moves: &[Recharge]) -> Result<(), KernelError> {
        for m in moves {
            let lsp = self.lsps.get_mut(&m.lsp).ok_or(KernelError::StalePlan("recharge of unknown LSP"))?;
            if !self.cfg.is_admissible(lsp.tc, m.to) {
                return Err(KernelError::StalePlan("recharge into inadmissible pool"));
            }
            let tc = lsp.tc;
            let slot = lsp
                .allocations
                .iter_mut()
                .find(|(p, _)| *p == m.from)
                .ok_or(KernelError::StalePlan("recharge from pool without charge"))?;
            slot.1 = slot.1.checked_sub(m.amount).ok_or(KernelError::StalePlan("recharge exceeds charge"))?;
            match lsp.allocations.iter_mut().find(|(p, _)| *p == m.to) {
                Some(dst) => dst.1 += m.amount,
                None => lsp.allocations.push((m.to, m.amount)),
            }
            lsp.allocations.retain(|(_, a)| !a.is_zero());
            lsp.allocations.sort_by_key(|&(p, _)| p);
            self.charge[tc][m.from] -= m.amount;
            self.charge[tc][m.to] += m.amount;
        }
        Ok(())
    }

    fn check_pools(&self) -> Result<(), KernelError> {
        for p in 0..self.pools.len() {
            if self.pool_used(p) > self.pools[p] {
                return Err(KernelError::StalePlan("pool would overflow"));
            }
        }
        if self.reserved > self.spec.capacity {
            return Err(KernelError::StalePlan("link capacity would be exceeded"));
        }
        Ok(())
    }

    /// Establishes an LSP with a plan from [`LinkState::check_admission`].
    pub fn admit(
        &mut self,
        id: LspId,
        tc: TrafficClass,
        established: SimTime,
        plan: &ChargePlan,
    ) -> Result<(), KernelError> {
        self.check_class(tc)?;
        if self.lsps.contains_key(&id) {
            return Err(KernelError::DuplicateLsp(id));
        }
        let mut allocations: Vec<(usize, Bandwidth)> = Vec::with_capacity(plan.allocations.len());
        for &(p, amount) in &plan.allocations {
            if amount.is_zero() || !self.cfg.is_admissible(tc, p) || allocations.iter().any(|&(q, _)| q == p) {
                return Err(KernelError::StalePlan("malformed allocation"));
            }
            allocations.push((p, amount));
        }
        allocations.sort_by_key(|&(p, _)| p);
        let bandwidth = plan.total();
        if bandwidth.is_zero() {
            return Err(KernelError::ZeroBandwidth);
        }
        if plan.recharges.is_empty() {
            if self.reserved + bandwidth > self.spec.capacity {
                return Err(KernelError::StalePlan("link capacity would be exceeded"));
            }
            if allocations.iter().any(|&(p, a)| self.pool_used(p) + a > self.pools[p]) {
                return Err(KernelError::StalePlan("pool would overflow"));
            }
            self.commit(id, tc, established, bandwidth, allocations);
            return Ok(());
        }
        let mut next = self.clone();
        next.apply_recharges_unchecked(&plan.recharges)?;
        next.commit(id, tc, established, bandwidth, allocations);
        next.check_pools()?;
        *self = next;
        Ok(())
    }

    fn commit(&mut self, id: LspId, tc: TrafficClass, established: SimTime, bandwidth: Bandwidth, allocations: Vec<(usize, Bandwidth)>) {
        for &(p, a) in &allocations {
            self.charge[tc][p] += a;
        }
        self.reserved += bandwidth;
        self.lsps.insert(id, LspCharge { tc, bandwidth, established, allocations, grandfathered: false });
    }

    /// Tears an LSP down, the exact inverse of its admission.
    pub fn release(&mut self, id: LspId) -> Result<LspCharge, KernelError> {
        if !self.lsps.contains_key(&id) {
            return Err(KernelError::UnknownLsp(id));
        }
        Ok(self.remove(id))
    }

    fn remove(&mut self, id: LspId) -> LspCharge {
        let lsp = self.lsps.remove(&id).expect("caller checked presence");
        for &(p, a) in &lsp.allocations {
            self.charge[lsp.tc][p] -= a;
        }
        self.reserved -= lsp.bandwidth;
        lsp
    }

    /// LSPs holding at least one preemptable charge for a class-`tc`
    /// requester, in victim order. A charge of class `c` in pool `p` is
    /// preemptable iff `c < p` and `c < tc`.
    pub fn preemption_candidates(&self, tc: TrafficClass) -> Vec<LspId> {
        let mut cands: Vec<(&LspId, &LspCharge)> = self
            .lsps
            .iter()
            .filter(|(_, l)| !l.grandfathered && l.tc < tc && l.allocations.iter().any(|&(p, _)| p > l.tc))
            .collect();
        cands.sort_by(|a, b| victim_order(*a, *b));
        cands.into_iter().map(|(id, _)| *id).collect()
    }

    /// Greedy victim selection: candidates in victim order until the
    /// request fits. `None` if every candidate together is not enough.
    pub fn select_preemption_victims(&self, tc: TrafficClass, bw: Bandwidth) -> Option<Vec<LspId>> {
        if !self.cfg.preemption {
            return None;
        }
        let mut trial = self.clone();
        let mut victims = Vec::new();
        if trial.fits(tc, bw) {
            return Some(victims);
        }
        for id in self.preemption_candidates(tc) {
            trial.remove(id);
            victims.push(id);
            if trial.fits(tc, bw) {
                return Some(victims);
            }
        }
        None
    }

    pub fn switch_model(&mut self, cfg: GbamConfig, policy: SwitchPolicy) -> Result<SwitchReport, KernelError> {
        let spec = self.spec.clone();
        self.reconfigure(spec, cfg, policy)
    }

    /// Replaces the bandwidth constraints, re-charging like a model switch.
    pub fn retune(&mut self, bc: BcVector, policy: SwitchPolicy) -> Result<SwitchReport, KernelError> {
        let spec = LinkSpec { bc, ..self.spec.clone() };
        let cfg = self.cfg;
        self.reconfigure(spec, cfg, policy)
    }

    /// Switches the model and, when given, the constraints in one pass.
    pub fn reconfigure_with(&mut self, cfg: GbamConfig, bc: Option<BcVector>, policy: SwitchPolicy) -> Result<SwitchReport, KernelError> {
        let spec = match bc {
            Some(bc) => LinkSpec { bc, ..self.spec.clone() },
            None => self.spec.clone(),
        };
        self.reconfigure(spec, cfg, policy)
    }

    fn reconfigure(&mut self, spec: LinkSpec, cfg: GbamConfig, policy: SwitchPolicy) -> Result<SwitchReport, KernelError> {
        cfg.validate()?;
        validate_constraints(&cfg, &spec)?;
        let unchanged = spec == self.spec && cfg == self.cfg && self.lsps.values().all(|l| !l.grandfathered);
        if unchanged {
            return Ok(SwitchReport { non_conformant: vec![], recharged: self.lsps.len(), preempted: vec![] });
        }
        let mut order: Vec<(LspId, LspCharge)> = std::mem::take(&mut self.lsps).into_iter().collect();
        order.sort_by(|a, b| a.1.established.cmp(&b.1.established).then(a.0.cmp(&b.0)));
        let c = cfg.class_count;
        self.pools = cfg.pool_layout(&spec);
        self.spec = spec;
        self.cfg = cfg;
        self.charge = vec![vec![Bandwidth::ZERO; c]; c];
        let reserved_before = self.reserved;
        self.reserved = Bandwidth::ZERO;
        let mut report = SwitchReport::default();
        for (id, mut lsp) in order {
            let placed = if lsp.tc < c { self.greedy_place(lsp.tc, lsp.bandwidth) } else { None };
            match placed {
                Some(allocations) => {
                    for &(p, a) in &allocations {
                        self.charge[lsp.tc][p] += a;
                    }
                    lsp.allocations = allocations;
                    lsp.grandfathered = false;
                    report.recharged += 1;
                }
                None => {
                    report.non_conformant.push(id);
                    lsp.allocations.clear();
                    lsp.grandfathered = true;
                    if policy == SwitchPolicy::Preempt {
                        report.preempted.push(id);
                        continue;
                    }
                }
            }
            self.reserved += lsp.bandwidth;
            self.lsps.insert(id, lsp);
        }
        debug_assert!(self.reserved <= reserved_before);
        Ok(report)
    }

    fn greedy_place(&self, tc: TrafficClass, bw: Bandwidth) -> Option<Vec<(usize, Bandwidth)>> {
        let mut left = bw;
        let mut allocations = Vec::new();
        for p in self.cfg.admissible_pools(tc) {
            let take = self.pool_free(p).min(left);
            if !take.is_zero() {
                allocations.push((p, take));
                left -= take;
            }
        }
        if !left.is_zero() || self.reserved + bw > self.spec.capacity {
            return None;
        }
        allocations.sort_by_key(|&(p, _)| p);
        Some(allocations)
    }

    /// Checks pool safety, aggregate capacity and double-entry consistency.
    pub fn audit(&self) -> Result<(), String> {
        let c = self.cfg.class_count;
        let mut matrix = vec![vec![Bandwidth::ZERO; c]; c];
        let mut reserved = Bandwidth::ZERO;
        for (id, l) in &self.lsps {
            reserved += l.bandwidth;
            if l.grandfathered {
                if !l.allocations.is_empty() {
                    return Err(format!("{id} grandfathered but charged"));
                }
                continue;
            }
            let sum: Bandwidth = l.allocations.iter().map(|&(_, a)| a).sum();
            if sum != l.bandwidth {
                return Err(format!("{id} charges {sum} for bandwidth {}", l.bandwidth));
            }
            for &(p, a) in &l.allocations {
                if a.is_zero() || !self.cfg.is_admissible(l.tc, p) {
                    return Err(format!("{id} has invalid allocation in pool {p}"));
                }
                matrix[l.tc][p] += a;
            }
        }
        if matrix != self.charge {
            return Err("charge matrix disagrees with per-LSP charges".into());
        }
        if reserved != self.reserved {
            return Err(format!("reserved {} != sum of LSPs {reserved}", self.reserved));
        }
        for p in 0..c {
            if self.pool_used(p) > self.pools[p] {
                return Err(format!("pool {p} overfull: {} > {}", self.pool_used(p), self.pools[p]));
            }
        }
        if self.reserved > self.spec.capacity {
            return Err(format!("link overfull: {} > {}", self.reserved, self.spec.capacity));
        }
        Ok(())
    }
}
