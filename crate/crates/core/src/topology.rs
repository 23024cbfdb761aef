//! Topologies: text-file import, builtin presets, static route matrices.
//!
//! File grammar (UTF-8, line oriented, `#` starts a comment):
//!
//! ```text
//! TOPOLOGY <name>
//! CLASSES <C>
//! NODE <id> [<label>]
//! LINK <src> <dst> CAP <Mb/s> [BC <v0> ... <vC-1>] [COST <n>] [DIRECTED]
//! ROUTE <src> <dst> PATH <n0> <n1> ... <nk>
//! ```
//!
//! A `LINK` line describes a full-duplex link and expands to two directed
//! links with independent state, unless `DIRECTED` is given. `COST` is
//! parsed and kept but routing uses unit hop cost.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Bandwidth, BcVector, LinkId, LinkSpec, NodeId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid topology: {0}")]
    Validation(String),
    #[error("unknown topology `{0}`")]
    UnknownTopology(String),
    #[error("topology `{0}` is recognised but no verified map is bundled; import it from a file")]
    PresetUnavailable(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Explicit paths keyed by `(src, dst)`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<RouteEntry>", into = "Vec<RouteEntry>")]
pub struct RouteMatrix {
    entries: BTreeMap<(NodeId, NodeId), Vec<NodeId>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteEntry {
    pub src: NodeId,
    pub dst: NodeId,
    pub path: Vec<NodeId>,
}

impl From<Vec<RouteEntry>> for RouteMatrix {
    fn from(v: Vec<RouteEntry>) -> Self {
        RouteMatrix { entries: v.into_iter().map(|e| ((e.src, e.dst), e.path)).collect() }
    }
}

impl From<RouteMatrix> for Vec<RouteEntry> {
    fn from(m: RouteMatrix) -> Self {
        m.entries.into_iter().map(|((src, dst), path)| RouteEntry { src, dst, path }).collect()
    }
}

impl RouteMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, src: NodeId, dst: NodeId, path: Vec<NodeId>) {
        self.entries.insert((src, dst), path);
    }

    /// The configured path, or `None` when the pair is absent or `src == dst`.
    pub fn static_route(&self, src: NodeId, dst: NodeId) -> Option<&[NodeId]> {
        if src == dst {
            return None;
        }
        self.entries.get(&(src, dst)).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, NodeId, &[NodeId])> {
        self.entries.iter().map(|(&(s, d), p)| (s, d, p.as_slice()))
    }

    /// Unconstrained minimum-hop routes for every connected pair, then the
    /// explicit entries of `overrides` on top.
    pub fn min_hop(topology: &Topology, overrides: &RouteMatrix) -> RouteMatrix {
        let mut m = RouteMatrix::new();
        for src in 0..topology.node_count() {
            for dst in 0..topology.node_count() {
                if src != dst {
                    if let Some(p) = crate::routing::shortest_path(topology, src, dst, |_| true) {
                        m.insert(src, dst, p);
                    }
                }
            }
        }
        for (s, d, p) in overrides.iter() {
            m.insert(s, d, p.to_vec());
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TopologyRepr", into = "TopologyRepr")]
pub struct Topology {
    name: String,
    class_count: Option<usize>,
    nodes: Vec<Node>,
    links: Vec<LinkSpec>,
    costs: Vec<u32>,
    routes: RouteMatrix,
    index: HashMap<(NodeId, NodeId), LinkId>,
    out: Vec<Vec<LinkId>>,
}

#[derive(Serialize, Deserialize)]
struct TopologyRepr {
    name: String,
    #[serde(default)]
    class_count: Option<usize>,
    nodes: Vec<Node>,
    links: Vec<LinkSpec>,
    #[serde(default)]
    costs: Vec<u32>,
    #[serde(default)]
    routes: RouteMatrix,
}

impl TryFrom<TopologyRepr> for Topology {
    type Error = TopologyError;
    fn try_from(r: TopologyRepr) -> Result<Self, Self::Error> {
        let costs = if r.costs.is_empty() { vec![1; r.links.len()] } else { r.costs };
        Topology::build(r.name, r.class_count, r.nodes, r.links, costs, r.routes)
    }
}

impl From<Topology> for TopologyRepr {
    fn from(t: Topology) -> Self {
        TopologyRepr {
            name: t.name,
            class_count: t.class_count,
            nodes: t.nodes,
            links: t.links,
            costs: t.costs,
            routes: t.routes,
        }
    }
}

const PTP_2N_1E: &str = include_str!("../data/topologies/ptp-2n-1e.topo");
const NSFNET: &str = include_str!("../data/topologies/nsfnet.topo");

impl Topology {
    pub fn build(
        name: String,
        class_count: Option<usize>,
        nodes: Vec<Node>,
        links: Vec<LinkSpec>,
        costs: Vec<u32>,
        routes: RouteMatrix,
    ) -> Result<Self, TopologyError> {
        let n = nodes.len();
        for (i, node) in nodes.iter().enumerate() {
            if node.id != i {
                return Err(TopologyError::Validation(format!("node ids must be dense 0..{n}, found {} at position {i}", node.id)));
            }
        }
        if costs.len() != links.len() {
            return Err(TopologyError::Validation("one cost per link required".into()));
        }
        let mut index = HashMap::new();
        let mut out = vec![Vec::new(); n];
        for (id, l) in links.iter().enumerate() {
            for end in [l.src, l.dst] {
                if end >= n {
                    return Err(TopologyError::Validation(format!("link {}->{} references undeclared node {end}", l.src, l.dst)));
                }
            }
            if l.src == l.dst {
                return Err(TopologyError::Validation(format!("self-loop on node {}", l.src)));
            }
            if l.capacity.is_zero() {
                return Err(TopologyError::Validation(format!("link {}->{} has zero capacity", l.src, l.dst)));
            }
            if let Some(c) = class_count {
                if !l.bc.0.is_empty() && l.bc.class_count() != c {
                    return Err(TopologyError::Validation(format!(
                        "link {}->{} has {} constraints for {c} classes",
                        l.src,
                        l.dst,
                        l.bc.class_count()
                    )));
                }
            }
            if index.insert((l.src, l.dst), id).is_some() {
                return Err(TopologyError::Validation(format!("duplicate link {}->{}", l.src, l.dst)));
            }
            out[l.src].push(id);
        }
        for o in &mut out {
            o.sort_by_key(|&id| links[id].dst);
        }
        let topo = Topology { name, class_count, nodes, links, costs, routes: RouteMatrix::new(), index, out };
        for (s, d, path) in routes.iter() {
            topo.check_path(s, d, path)?;
        }
        Ok(Topology { routes, ..topo })
    }

    fn check_path(&self, src: NodeId, dst: NodeId, path: &[NodeId]) -> Result<(), TopologyError> {
        let bad = |m: String| Err(TopologyError::Validation(format!("route {src}->{dst}: {m}")));
        if path.first() != Some(&src) || path.last() != Some(&dst) || path.len() < 2 {
            return bad("path must start at src and end at dst".into());
        }
        let mut seen = vec![false; self.node_count()];
        for &v in path {
            if v >= self.node_count() {
                return bad(format!("unknown node {v}"));
            }
            if std::mem::replace(&mut seen[v], true) {
                return bad(format!("loop through node {v}"));
            }
        }
        for w in path.windows(2) {
            if self.link_between(w[0], w[1]).is_none() {
                return bad(format!("no link {}->{}", w[0], w[1]));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn class_count(&self) -> Option<usize> {
        self.class_count
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn links(&self) -> &[LinkSpec] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> &LinkSpec {
        &self.links[id]
    }

    pub fn link_between(&self, src: NodeId, dst: NodeId) -> Option<LinkId> {
        self.index.get(&(src, dst)).copied()
    }

    /// Outgoing links of `node`, by ascending destination.
    pub fn out_links(&self, node: NodeId) -> &[LinkId] {
        &self.out[node]
    }

    pub fn routes(&self) -> &RouteMatrix {
        &self.routes
    }

    /// Link ids along a node path, `None` if some hop has no link.
    pub fn path_links(&self, path: &[NodeId]) -> Option<Vec<LinkId>> {
        path.windows(2).map(|w| self.link_between(w[0], w[1])).collect()
    }

    /// Sets the class count and replaces every link's constraints.
    pub fn with_constraints(mut self, class_count: usize, bc: impl Fn(&LinkSpec) -> BcVector) -> Self {
        self.class_count = Some(class_count);
        for l in &mut self.links {
            l.bc = bc(l);
        }
        self
    }

    /// Adds or replaces an explicit static route after validating it.
    pub fn add_route(&mut self, src: NodeId, dst: NodeId, path: Vec<NodeId>) -> Result<(), TopologyError> {
        self.check_path(src, dst, &path)?;
        self.routes.insert(src, dst, path);
        Ok(())
    }

    pub fn set_class_count(&mut self, class_count: usize) {
        self.class_count = Some(class_count);
    }

    pub fn link_mut(&mut self, id: LinkId) -> &mut LinkSpec {
        &mut self.links[id]
    }

    pub fn parse(text: &str) -> Result<Topology, TopologyError> {
        let mut name = None;
        let mut class_count = None;
        let mut nodes = Vec::new();
        let mut links = Vec::new();
        let mut costs = Vec::new();
        let mut routes = RouteMatrix::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let toks: Vec<&str> = raw.split('#').next().unwrap_or("").split_whitespace().collect();
            let Some((&verb, args)) = toks.split_first() else { continue };
            let err = |m: &str| TopologyError::Parse { line, message: m.to_string() };
            match verb.to_ascii_uppercase().as_str() {
                "TOPOLOGY" => {
                    name = Some(args.first().ok_or_else(|| err("TOPOLOGY needs a name"))?.to_string());
                }
                "CLASSES" => {
                    let c: usize = parse_num(args.first(), line, "class count")?;
                    if c == 0 {
                        return Err(err("CLASSES must be at least 1"));
                    }
                    class_count = Some(c);
                }
                "NODE" => {
                    let id: NodeId = parse_num(args.first(), line, "node id")?;
                    let label = (args.len() > 1).then(|| args[1..].join(" "));
                    nodes.push(Node { id, label });
                }
                "LINK" => {
                    let (specs, cost) = parse_link(args, line, class_count)?;
                    for s in specs {
                        links.push(s);
                        costs.push(cost);
                    }
                }
                "ROUTE" => {
                    if args.len() < 4 || !args[2].eq_ignore_ascii_case("PATH") {
                        return Err(err("expected ROUTE <src> <dst> PATH <n0> ... <nk>"));
                    }
                    let src = parse_num(args.first(), line, "src")?;
                    let dst = parse_num(args.get(1), line, "dst")?;
                    let path = args[3..].iter().map(|t| parse_num(Some(t), line, "path node")).collect::<Result<_, _>>()?;
                    routes.insert(src, dst, path);
                }
                other => return Err(err(&format!("unknown directive `{other}`"))),
            }
        }
        nodes.sort_by_key(|n| n.id);
        let name = name.ok_or(TopologyError::Parse { line: 1, message: "missing TOPOLOGY line".into() })?;
        Topology::build(name, class_count, nodes, links, costs, routes)
    }

    /// Canonical text form; [`Topology::parse`] reads it back unchanged.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        self.write_lines(&mut s);
        s
    }

    pub(crate) fn write_lines(&self, s: &mut String) {
        writeln!(s, "TOPOLOGY {}", self.name).unwrap();
        if let Some(c) = self.class_count {
            writeln!(s, "CLASSES {c}").unwrap();
        }
        for n in &self.nodes {
            match &n.label {
                Some(l) => writeln!(s, "NODE {} {l}", n.id).unwrap(),
                None => writeln!(s, "NODE {}", n.id).unwrap(),
            }
        }
        let mut written = vec![false; self.links.len()];
        for (id, l) in self.links.iter().enumerate() {
            if written[id] {
                continue;
            }
            written[id] = true;
            let reverse = self
                .link_between(l.dst, l.src)
                .filter(|&r| !written[r] && self.links[r].capacity == l.capacity && self.links[r].bc == l.bc && self.costs[r] == self.costs[id]);
            write!(s, "LINK {} {} CAP {}", l.src, l.dst, l.capacity).unwrap();
            if !l.bc.0.is_empty() {
                s.push_str(" BC");
                for b in &l.bc.0 {
                    write!(s, " {b}").unwrap();
                }
            }
            if self.costs[id] != 1 {
                write!(s, " COST {}", self.costs[id]).unwrap();
            }
            match reverse {
                Some(r) => written[r] = true,
                None => s.push_str(" DIRECTED"),
            }
            s.push('\n');
        }
        for (src, dst, path) in self.routes.iter() {
            write!(s, "ROUTE {src} {dst} PATH").unwrap();
            for v in path {
                write!(s, " {v}").unwrap();
            }
            s.push('\n');
        }
    }

    /// Builtin presets: `PTP-2n-1e` (two routers, one link) and `NSFNET`
    /// (14 nodes, 21 links). Names are case-insensitive.
    pub fn builtin(name: &str) -> Result<Topology, TopologyError> {
        let text = match name.to_ascii_uppercase().as_str() {
            "PTP-2N-1E" => PTP_2N_1E,
            "NSFNET" => NSFNET,
            "NTT" => return Err(TopologyError::PresetUnavailable(name.to_string())),
            _ => return Err(TopologyError::UnknownTopology(name.to_string())),
        };
        Topology::parse(text)
    }
}

fn parse_num<T: std::str::FromStr>(tok: Option<&&str>, line: usize, what: &str) -> Result<T, TopologyError> {
    let t = tok.ok_or_else(|| TopologyError::Parse { line, message: format!("missing {what}") })?;
    t.parse().map_err(|_| TopologyError::Parse { line, message: format!("invalid {what} `{t}`") })
}

fn parse_mbps(tok: Option<&&str>, line: usize, what: &str) -> Result<Bandwidth, TopologyError> {
    let v: f64 = parse_num(tok, line, what)?;
    Bandwidth::from_mbps(v).map_err(|e| TopologyError::Parse { line, message: format!("{what}: {e}") })
}

fn parse_link(args: &[&str], line: usize, class_count: Option<usize>) -> Result<(Vec<LinkSpec>, u32), TopologyError> {
    let err = |m: String| TopologyError::Parse { line, message: m };
    let src: NodeId = parse_num(args.first(), line, "src")?;
    let dst: NodeId = parse_num(args.get(1), line, "dst")?;
    let mut capacity = None;
    let mut bc = Vec::new();
    let mut cost = 1;
    let mut directed = false;
    let mut i = 2;
    while i < args.len() {
        match args[i].to_ascii_uppercase().as_str() {
            "CAP" => {
                capacity = Some(parse_mbps(args.get(i + 1), line, "capacity")?);
                i += 2;
            }
            "BC" => {
                i += 1;
                while i < args.len() && args[i].parse::<f64>().is_ok() {
                    bc.push(parse_mbps(args.get(i), line, "bandwidth constraint")?);
                    i += 1;
                }
                if bc.is_empty() {
                    return Err(err("BC needs at least one value".into()));
                }
            }
            "COST" => {
                cost = parse_num(args.get(i + 1), line, "cost")?;
                i += 2;
            }
            "DIRECTED" => {
                directed = true;
                i += 1;
            }
            other => return Err(err(format!("unexpected `{other}` in LINK"))),
        }
    }
    let capacity = capacity.ok_or_else(|| err("LINK needs CAP".into()))?;
    if let Some(c) = class_count {
        if !bc.is_empty() && bc.len() != c {
            return Err(err(format!("BC has {} values, CLASSES is {c}", bc.len())));
        }
    } else if !bc.is_empty() {
        return Err(err("BC given before CLASSES".into()));
    }
    let mk = |s, d| LinkSpec { src: s, dst: d, capacity, bc: BcVector(bc.clone()) };
    let mut specs = vec![mk(src, dst)];
    if !directed {
        specs.push(mk(dst, src));
    }
    Ok((specs, cost))
}
