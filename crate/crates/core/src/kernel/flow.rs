//! Small max-flow solver used to re-charge loaned bandwidth between pools.
//!
//! Networks here have at most `2 + C + C²` nodes, so a dense Edmonds-Karp is
//! plenty. Neighbour order is the insertion order of edges, which lets the
//! caller steer which augmenting paths are found first.

use std::collections::VecDeque;

pub(crate) const INF: i64 = i64::MAX / 4;

pub(crate) struct FlowNet {
    cap: Vec<Vec<i64>>,
    flow: Vec<Vec<i64>>,
    adj: Vec<Vec<usize>>,
}

impl FlowNet {
    pub(crate) fn new(nodes: usize) -> Self {
        FlowNet {
            cap: vec![vec![0; nodes]; nodes],
            flow: vec![vec![0; nodes]; nodes],
            adj: vec![Vec::new(); nodes],
        }
    }

    pub(crate) fn add_edge(&mut self, u: usize, v: usize, cap: i64) {
        if cap <= 0 {
            return;
        }
        self.cap[u][v] = (self.cap[u][v] + cap).min(INF);
        if !self.adj[u].contains(&v) {
            self.adj[u].push(v);
        }
        if !self.adj[v].contains(&u) {
            self.adj[v].push(u);
        }
    }

    fn residual(&self, u: usize, v: usize) -> i64 {
        self.cap[u][v] - self.flow[u][v]
    }

    /// Pushes up to `limit` units from `s` to `t`, returning the amount sent.
    pub(crate) fn max_flow(&mut self, s: usize, t: usize, limit: i64) -> i64 {
        let n = self.cap.len();
        let mut total = 0;
        while total < limit {
            let mut prev = vec![usize::MAX; n];
            prev[s] = s;
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                if u == t {
                    break;
                }
                for &v in &self.adj[u] {
                    if prev[v] == usize::MAX && self.residual(u, v) > 0 {
                        prev[v] = u;
                        queue.push_back(v);
                    }
                }
            }
            if prev[t] == usize::MAX {
                break;
            }
            let mut push = limit - total;
            let mut v = t;
            while v != s {
                let u = prev[v];
                push = push.min(self.residual(u, v));
                v = u;
            }
            let mut v = t;
            while v != s {
                let u = prev[v];
                self.flow[u][v] += push;
                self.flow[v][u] -= push;
                v = u;
            }
            total += push;
        }
        total
    }

    /// Net positive flow on the edge `u -> v`.
    pub(crate) fn flow(&self, u: usize, v: usize) -> i64 {
        self.flow[u][v].max(0)
    }
}
