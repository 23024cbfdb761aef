//! Path selection: static matrices and CSPF with unit hop cost.

use std::collections::VecDeque;

use crate::domain::{Bandwidth, LinkId, NodeId, TrafficClass};
use crate::kernel::{Admission, LinkState};
use crate::topology::Topology;

/// Minimum-hop path over the links accepted by `usable`, ties broken by the
/// lexicographically smallest node sequence. `None` when `src == dst` or
/// `dst` is unreachable.
pub fn shortest_path(topology: &Topology, src: NodeId, dst: NodeId, usable: impl Fn(LinkId) -> bool) -> Option<Vec<NodeId>> {
    let n = topology.node_count();
    if src == dst || src >= n || dst >= n {
        return None;
    }
    // Hop distance to `dst` over reversed usable links.
    let mut into: Vec<Vec<NodeId>> = vec![Vec::new(); n];
    for (id, l) in topology.links().iter().enumerate() {
        if usable(id) {
            into[l.dst].push(l.src);
        }
    }
    let mut dist = vec![usize::MAX; n];
    dist[dst] = 0;
    let mut queue = VecDeque::from([dst]);
    while let Some(v) = queue.pop_front() {
        for &u in &into[v] {
            if dist[u] == usize::MAX {
                dist[u] = dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
    if dist[src] == usize::MAX {
        return None;
    }
    // Walking forward through the smallest neighbour one hop closer yields
    // the lexicographically smallest of the shortest paths.
    let mut path = vec![src];
    let mut at = src;
    while at != dst {
        at = topology
            .out_links(at)
            .iter()
            .filter(|&&id| usable(id))
            .map(|&id| topology.link(id).dst)
            .find(|&v| dist[v].checked_add(1) == Some(dist[at]))
            .expect("distance labels are consistent");
        path.push(at);
    }
    Some(path)
}

/// CSPF: prunes every link on which the request would not FIT (preemption
/// is not considered), then takes the minimum-hop path on what remains.
/// `states` is indexed by [`LinkId`].
pub fn cspf(topology: &Topology, states: &[LinkState], src: NodeId, dst: NodeId, tc: TrafficClass, bw: Bandwidth) -> Option<Vec<NodeId>> {
    let feasible: Vec<bool> = states
        .iter()
        .map(|s| matches!(s.check_admission(tc, bw), Ok(Admission::Fit(_))))
        .collect();
    shortest_path(topology, src, dst, |id| feasible[id])
}
