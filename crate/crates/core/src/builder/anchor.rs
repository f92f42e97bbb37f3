use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use super::graph::PatternGraph;
use crate::error::AnchorError;
use crate::model::{MetroMap, TunnelKey};

/// Most candidate mappings collected per component before giving up.
pub const MAX_CANDIDATES: usize = 16;

/// Node-to-station mapping for one connected component.
pub type Mapping = BTreeMap<usize, String>;

#[derive(Debug, Clone, PartialEq)]
pub enum ComponentOutcome {
    Unique(Mapping),
    /// Up to [`MAX_CANDIDATES`] valid mappings.
    Ambiguous(Vec<Mapping>),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentAnchor {
    pub nodes: Vec<usize>,
    pub edges: Vec<usize>,
    pub outcome: ComponentOutcome,
}

/// Anchored part of a graph.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Anchoring {
    pub stations: BTreeMap<usize, String>,
    pub tunnels: BTreeMap<usize, TunnelKey>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnchorReport {
    pub components: Vec<ComponentAnchor>,
    pub anchoring: Anchoring,
    /// Hint refs that match no node.
    pub unknown_hints: Vec<String>,
    /// Edges placed on a tunnel a larger component already holds; the
    /// larger component keeps it.
    pub overlaps: Vec<(usize, TunnelKey)>,
}

impl AnchorReport {
    pub fn anchored_components(&self) -> usize {
        self.components.iter().filter(|c| matches!(c.outcome, ComponentOutcome::Unique(_))).count()
    }
}

struct Topology<'a> {
    out: BTreeMap<&'a str, BTreeSet<&'a str>>,
    inc: BTreeMap<&'a str, BTreeSet<&'a str>>,
    lines: HashMap<(&'a str, &'a str), BTreeSet<&'a str>>,
    stations: Vec<&'a str>,
}

impl<'a> Topology<'a> {
    fn new(metro: &'a MetroMap) -> Self {
        let mut t = Topology {
            out: BTreeMap::new(),
            inc: BTreeMap::new(),
            lines: HashMap::new(),
            stations: metro.stations.keys().map(String::as_str).collect(),
        };
        for line in &metro.lines {
            for w in line.stations.windows(2) {
                let (a, b) = (w[0].as_str(), w[1].as_str());
                for (x, y) in [(a, b), (b, a)] {
                    t.out.entry(x).or_default().insert(y);
                    t.inc.entry(y).or_default().insert(x);
                    t.lines.entry((x, y)).or_default().insert(line.name.as_str());
                }
            }
        }
        t
    }

    fn shares_line(&self, a: &str, b: &str, c: &str) -> bool {
        match (self.lines.get(&(a, b)), self.lines.get(&(b, c))) {
            (Some(x), Some(y)) => !x.is_disjoint(y),
            _ => false,
        }
    }
}

struct Search<'g, 't> {
    topo: &'t Topology<'t>,
    ins: &'g [Vec<usize>],
    outs: &'g [Vec<usize>],
    order: Vec<usize>,
    /// For each order position after the first: an already placed neighbor and
    /// whether the edge runs from it to the new node.
    via: Vec<(usize, bool)>,
    pins: &'g BTreeMap<usize, String>,
    assigned: HashMap<usize, &'t str>,
    used: BTreeSet<&'t str>,
    found: Vec<Mapping>,
}

impl<'t> Search<'_, 't> {
    fn placed(&self, n: usize) -> Option<&'t str> {
        self.assigned.get(&n).copied()
    }

    /// Checks every edge and pass-through constraint touching `v` that is fully placed.
    fn consistent(&self, v: usize) -> bool {
        let s = self.placed(v).expect("placed");
        for &u in &self.ins[v] {
            if let Some(p) = self.placed(u) {
                if !self.topo.out.get(p).is_some_and(|o| o.contains(s)) {
                    return false;
                }
            }
        }
        for &w in &self.outs[v] {
            if let Some(p) = self.placed(w) {
                if !self.topo.out.get(s).is_some_and(|o| o.contains(p)) {
                    return false;
                }
            }
        }
        let mut check = vec![v];
        check.extend(self.ins[v].iter().chain(&self.outs[v]));
        check.iter().all(|&n| self.pass_through_ok(n))
    }

    /// A node entered once and left once must not switch lines.
    fn pass_through_ok(&self, n: usize) -> bool {
        if self.ins[n].len() != 1 || self.outs[n].len() != 1 {
            return true;
        }
        match (self.placed(self.ins[n][0]), self.placed(n), self.placed(self.outs[n][0])) {
            (Some(a), Some(b), Some(c)) => self.topo.shares_line(a, b, c),
            _ => true,
        }
    }

    fn run(&mut self, depth: usize) {
        if self.found.len() >= MAX_CANDIDATES {
            return;
        }
        if depth == self.order.len() {
            self.found.push(self.assigned.iter().map(|(&n, &s)| (n, s.to_string())).collect());
            return;
        }
        let v = self.order[depth];
        let candidates: Vec<&'t str> = if depth == 0 {
            self.topo.stations.clone()
        } else {
            let (u, forward) = self.via[depth - 1];
            let from = self.placed(u).expect("placed");
            let adj = if forward { &self.topo.out } else { &self.topo.inc };
            adj.get(from).map(|s| s.iter().copied().collect()).unwrap_or_default()
        };
        for s in candidates {
            if self.used.contains(s) || self.pins.get(&v).is_some_and(|p| p != s) {
                continue;
            }
            self.assigned.insert(v, s);
            self.used.insert(s);
            if self.consistent(v) {
                self.run(depth + 1);
            }
            self.assigned.remove(&v);
            self.used.remove(s);
            if self.found.len() >= MAX_CANDIDATES {
                return;
            }
        }
    }
}

fn components(graph: &PatternGraph) -> Vec<(Vec<usize>, Vec<usize>)> {
    let n = graph.nodes.len();
    let mut adj = vec![Vec::new(); n];
    for (i, e) in graph.edges.iter().enumerate() {
        adj[e.from].push((e.to, i));
        adj[e.to].push((e.from, i));
    }
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start] || adj[start].is_empty() {
            continue;
        }
        let mut nodes = Vec::new();
        let mut edges = BTreeSet::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(v) = queue.pop_front() {
            nodes.push(v);
            for &(w, e) in &adj[v] {
                edges.insert(e);
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        nodes.sort_unstable();
        out.push((nodes, edges.into_iter().collect()));
    }
    out
}

fn anchor_component(
    topo: &Topology<'_>,
    nodes: &[usize],
    pins: &BTreeMap<usize, String>,
    ins: &[Vec<usize>],
    outs: &[Vec<usize>],
) -> ComponentOutcome {
    let start = nodes
        .iter()
        .copied()
        .find(|n| pins.contains_key(n))
        .unwrap_or_else(|| *nodes.iter().max_by_key(|&&n| (ins[n].len() + outs[n].len(), std::cmp::Reverse(n))).expect("non-empty"));
    let mut order = vec![start];
    let mut via = Vec::new();
    let mut seen: BTreeSet<usize> = [start].into();
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        let mut next: Vec<(usize, bool)> =
            outs[v].iter().map(|&w| (w, true)).chain(ins[v].iter().map(|&w| (w, false))).collect();
        next.sort_unstable();
        for (w, forward) in next {
            if seen.insert(w) {
                order.push(w);
                via.push((v, forward));
                queue.push_back(w);
            }
        }
    }
    let mut search = Search {
        topo,
        ins,
        outs,
        order,
        via,
        pins,
        assigned: HashMap::new(),
        used: BTreeSet::new(),
        found: Vec::new(),
    };
    search.run(0);
    let mut found = search.found;
    match found.len() {
        0 => ComponentOutcome::Failed(format!("no placement of {} stop node(s) fits the metro topology and hints", nodes.len())),
        1 => ComponentOutcome::Unique(found.pop().expect("one")),
        _ => ComponentOutcome::Ambiguous(found),
    }
}

/// Places every connected component of `graph` onto `metro` independently.
///
/// A placement maps stop nodes injectively to stations so that each edge is a
/// tunnel in its direction of travel, no pass-through node switches lines, and
/// every hinted node sits at its hinted station. Components with exactly one
/// placement are anchored. Larger components claim tunnels first; a smaller
/// one placed partly onto claimed tunnels keeps only the rest.
///
/// `hints` pairs a node ref (any entry of a node's `refs`) with a station id.
pub fn anchor_components(graph: &PatternGraph, metro: &MetroMap, hints: &[(String, String)]) -> AnchorReport {
    let topo = Topology::new(metro);
    let mut ref_index: HashMap<&str, usize> = HashMap::new();
    for (i, n) in graph.nodes.iter().enumerate() {
        for r in &n.refs {
            ref_index.insert(r.as_str(), i);
        }
    }
    let mut report = AnchorReport::default();
    let mut pins: BTreeMap<usize, String> = BTreeMap::new();
    let mut clashing: BTreeSet<usize> = BTreeSet::new();
    for (r, station) in hints {
        match ref_index.get(r.as_str()) {
            Some(&n) => {
                if let Some(prev) = pins.insert(n, station.clone()) {
                    if &prev != station {
                        clashing.insert(n);
                    }
                }
            }
            None => report.unknown_hints.push(r.clone()),
        }
    }

    let n = graph.nodes.len();
    let mut ins = vec![Vec::new(); n];
    let mut outs = vec![Vec::new(); n];
    for e in &graph.edges {
        outs[e.from].push(e.to);
        ins[e.to].push(e.from);
    }
    let mut comps = components(graph);
    comps.sort_by_key(|(_, edges)| (std::cmp::Reverse(edges.len()), edges.first().copied()));

    let mut claimed: BTreeSet<TunnelKey> = BTreeSet::new();
    for (nodes, edges) in comps {
        let outcome = if let Some(&bad) = nodes.iter().find(|n| clashing.contains(n)) {
            ComponentOutcome::Failed(format!("node {bad} is hinted to two different stations"))
        } else if let Some(station) = nodes.iter().filter_map(|n| pins.get(n)).find(|s| !metro.stations.contains_key(*s)) {
            ComponentOutcome::Failed(format!("hinted station {station} is not on the map"))
        } else {
            anchor_component(&topo, &nodes, &pins, &ins, &outs)
        };
        if let ComponentOutcome::Unique(m) = &outcome {
            for &e in &edges {
                let key = TunnelKey::new(&m[&graph.edges[e].from], &m[&graph.edges[e].to]);
                if claimed.contains(&key) {
                    report.overlaps.push((e, key));
                } else {
                    report.anchoring.tunnels.insert(e, key);
                }
            }
            claimed.extend(edges.iter().filter_map(|e| report.anchoring.tunnels.get(e).cloned()));
            report.anchoring.stations.extend(m.iter().map(|(n, s)| (*n, s.clone())));
        }
        report.components.push(ComponentAnchor { nodes, edges, outcome });
    }
    report
}

/// Strict anchoring: every component must have exactly one placement and
/// every hint must name a node.
pub fn anchor_graph(graph: &PatternGraph, metro: &MetroMap, hints: &[(String, String)]) -> Result<Anchoring, AnchorError> {
    if graph.edges.is_empty() {
        return Err(AnchorError::Failed("graph has no edges".into()));
    }
    let report = anchor_components(graph, metro, hints);
    if let Some(r) = report.unknown_hints.first() {
        return Err(AnchorError::UnknownHint(r.clone()));
    }
    if let Some((_, k)) = report.overlaps.first() {
        return Err(AnchorError::Failed(format!("tunnel {k} claimed by two components")));
    }
    for c in &report.components {
        match &c.outcome {
            ComponentOutcome::Unique(_) => {}
            ComponentOutcome::Failed(msg) => return Err(AnchorError::Failed(msg.clone())),
            ComponentOutcome::Ambiguous(c) => {
                return Err(AnchorError::Ambiguous {
                    candidates: c.iter().map(|m| m.iter().map(|(n, s)| (*n, s.clone())).collect()).collect(),
                })
            }
        }
    }
    Ok(report.anchoring)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Line;
    use crate::sim::default_metro;

    fn single_line(n: usize) -> MetroMap {
        MetroMap::new(vec![Line { name: "A".into(), stations: (0..n).map(|i| format!("s{i}")).collect() }]).unwrap()
    }

    fn path(n_edges: usize) -> PatternGraph {
        let edges: Vec<(usize, usize)> = (0..n_edges).map(|i| (i, i + 1)).collect();
        PatternGraph::from_topology(n_edges + 1, &edges)
    }

    #[test]
    fn full_single_line_path_is_ambiguous_without_hints() {
        let err = anchor_graph(&path(4), &single_line(5), &[]).unwrap_err();
        match err {
            AnchorError::Ambiguous { candidates } => assert_eq!(candidates.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn one_hint_orients_the_line() {
        let a = anchor_graph(&path(4), &single_line(5), &[("0".into(), "s4".into())]).unwrap();
        assert_eq!(a.stations[&0], "s4");
        assert_eq!(a.stations[&4], "s0");
        assert_eq!(a.tunnels[&0], TunnelKey::new("s4", "s3"));
    }

    #[test]
    fn too_long_path_fails() {
        assert!(matches!(anchor_graph(&path(5), &single_line(5), &[]), Err(AnchorError::Failed(_))));
    }

    #[test]
    fn unknown_hint_is_reported() {
        assert!(matches!(
            anchor_graph(&path(4), &single_line(5), &[("x".into(), "s0".into())]),
            Err(AnchorError::UnknownHint(_))
        ));
    }

    #[test]
    fn contradictory_hints_fail() {
        let hints = [("0".to_string(), "s0".to_string()), ("1".to_string(), "s3".to_string())];
        assert!(matches!(anchor_graph(&path(4), &single_line(5), &hints), Err(AnchorError::Failed(_))));
    }

    #[test]
    fn whole_network_anchors_without_hints() {
        let metro = default_metro();
        let mut index: BTreeMap<&str, usize> = BTreeMap::new();
        for s in metro.stations.keys() {
            let k = index.len();
            index.insert(s, k);
        }
        let mut edges = Vec::new();
        for line in &metro.lines {
            for w in line.stations.windows(2) {
                edges.push((index[w[0].as_str()], index[w[1].as_str()]));
            }
        }
        let g = PatternGraph::from_topology(index.len(), &edges);
        let a = anchor_graph(&g, &metro, &[]).unwrap();
        for (s, &i) in &index {
            assert_eq!(a.stations[&i], *s);
        }
        assert_eq!(a.tunnels.len(), 55);
    }

    #[test]
    fn line_switch_is_not_a_valid_placement() {
        // Three lines meeting at one station; a two-edge path pinned to run
        // from one line's end through the hub must stay on that line.
        let metro = MetroMap::new(vec![
            Line { name: "A".into(), stations: vec!["a0".into(), "hub".into(), "a2".into()] },
            Line { name: "B".into(), stations: vec!["b0".into(), "hub".into()] },
        ])
        .unwrap();
        let a = anchor_graph(&path(2), &metro, &[("0".into(), "a0".into())]).unwrap();
        assert_eq!(a.stations[&2], "a2");
    }

    #[test]
    fn larger_component_keeps_a_shared_tunnel() {
        let edges = [(0, 1), (1, 2), (3, 4), (4, 5)];
        let g = PatternGraph::from_topology(6, &edges);
        let hints = [("0".to_string(), "s0".to_string()), ("3".to_string(), "s1".to_string())];
        let r = anchor_components(&g, &single_line(4), &hints);
        assert_eq!(r.anchored_components(), 2);
        assert_eq!(r.overlaps, vec![(2, TunnelKey::new("s1", "s2"))]);
        assert_eq!(r.anchoring.tunnels.len(), 3);
        assert_eq!(r.anchoring.tunnels[&3], TunnelKey::new("s2", "s3"));
        assert!(anchor_graph(&g, &single_line(4), &hints).is_err());
    }
}
