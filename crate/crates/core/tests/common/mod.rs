//! Independent oracles shared by the integration tests. None of these call
//! into the code paths they check.
#![allow(dead_code)]

/// RDM admits `b` of class `tc` iff every doll at or below it has room:
/// for all `j <= tc`, `sum_{k >= j} r_k + b <= bc[j]`.
pub fn rdm_nested_admits(bc: &[u64], r: &[u64], tc: usize, b: u64) -> bool {
    (0..=tc).all(|j| r[j..].iter().sum::<u64>() + b <= bc[j])
}

/// MAM admits iff the class stays within its constraint and the link within
/// its capacity.
pub fn mam_direct_admits(bc: &[u64], cap: u64, r: &[u64], tc: usize, b: u64) -> bool {
    r[tc] + b <= bc[tc] && r.iter().sum::<u64>() + b <= cap
}

/// Whether per-class demands (existing reservations plus the request) can be
/// assigned to pools at all, by Hall's condition on every subset of classes.
/// The reachable supply of each subset is computed once per pool layout.
pub struct HallOracle {
    cap: u64,
    supply: Vec<u64>,
}

impl HallOracle {
    pub fn new(pools: &[u64], cap: u64, admissible: impl Fn(usize) -> Vec<usize>) -> Self {
        let c = pools.len();
        let reach: Vec<Vec<usize>> = (0..c).map(&admissible).collect();
        let supply = (0usize..1 << c)
            .map(|mask| {
                let mut hit = vec![false; c];
                for k in (0..c).filter(|k| mask & (1 << k) != 0) {
                    for &p in &reach[k] {
                        hit[p] = true;
                    }
                }
                (0..c).filter(|&p| hit[p]).map(|p| pools[p]).sum()
            })
            .collect();
        HallOracle { cap, supply }
    }

    pub fn admits(&self, r: &[u64], tc: usize, b: u64) -> bool {
        let demand = |k: usize| r[k] + if k == tc { b } else { 0 };
        if (0..r.len()).map(demand).sum::<u64>() > self.cap {
            return false;
        }
        (1..self.supply.len()).all(|mask| {
            let need: u64 = (0..r.len()).filter(|k| mask & (1 << k) != 0).map(demand).sum();
            need <= self.supply[mask]
        })
    }
}

pub fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Minimum-hop paths by exhaustive enumeration of simple paths, with the
/// lexicographically smallest node sequence on ties.
pub fn brute_force_min_hop(edges: &[(usize, usize, bool)], src: usize, dst: usize) -> Option<Vec<usize>> {
    fn walk(edges: &[(usize, usize, bool)], at: usize, dst: usize, path: &mut Vec<usize>, best: &mut Option<Vec<usize>>) {
        if at == dst {
            let better = match best {
                None => true,
                Some(b) => path.len() < b.len() || (path.len() == b.len() && path < b),
            };
            if better {
                *best = Some(path.clone());
            }
            return;
        }
        for &(u, v, feasible) in edges {
            if u == at && feasible && !path.contains(&v) {
                path.push(v);
                walk(edges, v, dst, path, best);
                path.pop();
            }
        }
    }
    if src == dst {
        return None;
    }
    let mut best = None;
    walk(edges, src, dst, &mut vec![src], &mut best);
    best
}
