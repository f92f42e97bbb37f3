use std::collections::HashMap;
use std::sync::Arc;

use super::overlap::{best_alignment, AlignRules, CostSource, TraceAlignment};
use crate::matching::{feature_distance_bounded, Cost, EventFeatures, MatchConfig};
use crate::model::{RunningEvent, StopEvidence, UserTrace};
use crate::par;

/// One observed traversal of a tunnel.
#[derive(Debug, Clone)]
pub struct Member {
    pub uid: usize,
    pub trip_id: String,
    /// Position among the trip's running events.
    pub event_index: usize,
    pub event: Arc<RunningEvent>,
    /// `None` when the event had too little data to fingerprint.
    pub features: Option<Arc<EventFeatures>>,
}

/// Stop node. `refs` lists every `trip_id#stop_index` merged into it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphNode {
    pub refs: Vec<String>,
}

/// Directed edge holding all traversals judged to be the same tunnel.
#[derive(Debug, Clone)]
pub struct EdgeCluster {
    pub from: usize,
    pub to: usize,
    pub members: Vec<Member>,
    /// Index into `members` of the medoid.
    pub representative: usize,
    /// Medoid among members that carry pressure, if any do.
    pub baro_representative: Option<usize>,
}

impl EdgeCluster {
    pub fn representative(&self) -> &Member {
        &self.members[self.representative]
    }
}

/// Edges a trip walked through, in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceWalk {
    pub trip_id: String,
    pub edges: Vec<usize>,
}

/// Unanchored map of stops and tunnels assembled from user traces.
#[derive(Debug, Clone, Default)]
pub struct PatternGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<EdgeCluster>,
    /// Edge ids of each merged chain, in travel order.
    pub paths: Vec<Vec<usize>>,
    pub walks: Vec<TraceWalk>,
}

impl PatternGraph {
    /// Graph with bare topology, for anchoring hand-built structures.
    /// Node `i` gets the single ref `i.to_string()`; edges have no members.
    pub fn from_topology(n_nodes: usize, edges: &[(usize, usize)]) -> Self {
        Self {
            nodes: (0..n_nodes).map(|i| GraphNode { refs: vec![i.to_string()] }).collect(),
            edges: edges
                .iter()
                .map(|&(from, to)| EdgeCluster { from, to, members: Vec::new(), representative: 0, baro_representative: None })
                .collect(),
            paths: Vec::new(),
            walks: Vec::new(),
        }
    }

    pub fn node_of_ref(&self, r: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.refs.iter().any(|x| x == r))
    }

    pub fn member_count(&self) -> usize {
        self.edges.iter().map(|e| e.members.len()).sum()
    }
}

/// Counters describing the merging decisions taken so far.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MergeStats {
    /// Chain pairs that were merged.
    pub accepted: usize,
    /// Chain comparisons with a long enough overlap that stayed above threshold.
    pub rejected: usize,
}

#[derive(Debug, Clone)]
struct Cluster {
    members: Vec<usize>,
    rep: usize,
    baro_rep: Option<usize>,
}

#[derive(Debug, Clone)]
struct Chain {
    edges: Vec<usize>,
    nodes: Vec<usize>,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Pair costs shared across every comparison of one build, keyed by member uid.
#[derive(Debug, Default)]
struct CostCache {
    map: HashMap<(usize, usize), Cost>,
    evaluations: usize,
}

impl CostCache {
    fn lookup(&self, a: usize, b: usize, cap: f64) -> Option<Cost> {
        if a == b {
            return Some(Cost::Exact(0.0));
        }
        match self.map.get(&(a.min(b), a.max(b)))? {
            c @ Cost::Exact(_) => Some(*c),
            c @ Cost::AtLeast(lb) if *lb >= cap => Some(*c),
            _ => None,
        }
    }

    fn fill(&mut self, arena: &[Member], cfg: &MatchConfig, keys: &[(usize, usize)], cap: f64) {
        let mut missing: Vec<(usize, usize)> = keys
            .iter()
            .map(|&(a, b)| (a.min(b), a.max(b)))
            .filter(|&(a, b)| self.lookup(a, b, cap).is_none())
            .collect();
        missing.sort_unstable();
        missing.dedup();
        let costs = par::map(&missing, |&(a, b)| match (&arena[a].features, &arena[b].features) {
            (Some(x), Some(y)) => feature_distance_bounded(x, y, cfg, cap).unwrap_or(Cost::Exact(f64::INFINITY)),
            _ => Cost::Exact(f64::INFINITY),
        });
        self.evaluations += missing.len();
        self.map.extend(missing.into_iter().zip(costs));
    }
}

struct UidCosts<'a> {
    cache: &'a mut CostCache,
    arena: &'a [Member],
    cfg: &'a MatchConfig,
    a: &'a [usize],
    b: &'a [usize],
}

impl CostSource for UidCosts<'_> {
    fn costs(&mut self, pairs: &[(usize, usize)], cap: f64) -> Vec<Cost> {
        let keys: Vec<(usize, usize)> = pairs.iter().map(|&(i, j)| (self.a[i], self.b[j])).collect();
        self.cache.fill(self.arena, self.cfg, &keys, cap);
        keys.iter().map(|&(x, y)| self.cache.lookup(x, y, cap).expect("filled")).collect()
    }
}

/// Whether every stop of a trace carries a door pressure signature.
pub fn stops_confirmed(ut: &UserTrace) -> bool {
    ut.stops().all(|s| s.evidence == StopEvidence::BaroConfirmed)
}

/// Incremental pattern-graph construction.
///
/// Every trace enters as its own chain of singleton edge clusters. The chain
/// is then repeatedly merged with the existing chain it aligns best with
/// (lowest mean cost, at least `min_overlap` aligned edges, below threshold,
/// every aligned pair below `pair_limit`) until no chain accepts it. Aligned
/// edges pool their members; the rest extend the merged chain at either end.
///
/// A trace whose stops are not all pressure-confirmed may hold a spurious
/// stop that splits one tunnel in two. Such traces only join chains that
/// already span them; [`GraphBuilder::add_trace`] reports when one does not fit.
pub struct GraphBuilder {
    cfg: MatchConfig,
    min_overlap: usize,
    pair_limit: f64,
    /// Treat every trace as confirmed.
    trust_all: bool,
    arena: Vec<Member>,
    cache: CostCache,
    node_parent: Vec<usize>,
    node_refs: Vec<Vec<String>>,
    edge_parent: Vec<usize>,
    clusters: Vec<Option<Cluster>>,
    chains: Vec<Option<Chain>>,
    walks: Vec<(String, Vec<usize>)>,
    stats: MergeStats,
}

impl GraphBuilder {
    pub fn new(cfg: MatchConfig, min_overlap: usize) -> Self {
        Self {
            cfg,
            min_overlap: min_overlap.max(1),
            pair_limit: f64::INFINITY,
            trust_all: true,
            arena: Vec::new(),
            cache: CostCache::default(),
            node_parent: Vec::new(),
            node_refs: Vec::new(),
            edge_parent: Vec::new(),
            clusters: Vec::new(),
            chains: Vec::new(),
            walks: Vec::new(),
            stats: MergeStats::default(),
        }
    }

    /// Rebuilds builder state from a graph snapshot. Cached costs are lost.
    pub fn from_graph(graph: &PatternGraph, cfg: MatchConfig, min_overlap: usize) -> Self {
        let mut b = Self::new(cfg, min_overlap);
        b.node_parent = (0..graph.nodes.len()).collect();
        b.node_refs = graph.nodes.iter().map(|n| n.refs.clone()).collect();
        for e in &graph.edges {
            let base = b.arena.len();
            for (k, m) in e.members.iter().enumerate() {
                b.arena.push(Member { uid: base + k, ..m.clone() });
            }
            let members: Vec<usize> = (base..b.arena.len()).collect();
            b.edge_parent.push(b.clusters.len());
            b.clusters.push(Some(Cluster {
                rep: base + e.representative.min(members.len().saturating_sub(1)),
                baro_rep: e.baro_representative.map(|r| base + r),
                members,
            }));
        }
        for p in &graph.paths {
            let mut nodes: Vec<usize> = p.iter().map(|&e| graph.edges[e].from).collect();
            if let Some(&last) = p.last() {
                nodes.push(graph.edges[last].to);
            }
            b.chains.push(Some(Chain { edges: p.clone(), nodes }));
        }
        b.walks = graph.walks.iter().map(|w| (w.trip_id.clone(), w.edges.clone())).collect();
        b
    }

    /// Rejects alignments holding any pair at or above `limit`.
    pub fn with_pair_limit(mut self, limit: f64) -> Self {
        self.pair_limit = limit;
        self
    }

    /// Whether unconfirmed traces may start and extend chains.
    pub fn trust_unconfirmed(mut self, trust: bool) -> Self {
        self.trust_all = trust;
        self
    }

    pub fn stats(&self) -> MergeStats {
        self.stats
    }

    /// Pair-cost evaluations performed so far.
    pub fn evaluations(&self) -> usize {
        self.cache.evaluations
    }

    pub fn config(&self) -> &MatchConfig {
        &self.cfg
    }

    fn edge(&mut self, e: usize) -> usize {
        find(&mut self.edge_parent, e)
    }

    fn node(&mut self, n: usize) -> usize {
        find(&mut self.node_parent, n)
    }

    fn rep_uids(&self, chain: &Chain) -> Vec<usize> {
        chain.edges.iter().map(|&e| self.clusters[e].as_ref().expect("live cluster").rep).collect()
    }

    /// Adds one trace. Returns false, leaving the graph untouched, for a trace
    /// without running events or an unconfirmed trace no chain spans.
    pub fn add_trace(&mut self, ut: &UserTrace) -> bool {
        let events: Vec<&RunningEvent> = ut.running_events().collect();
        if events.is_empty() {
            return false;
        }
        let mut contained = !(self.trust_all || stops_confirmed(ut));
        let features: Vec<Option<Arc<EventFeatures>>> =
            par::map(&events, |re| EventFeatures::from_event(re).ok().map(Arc::new));
        let first_node = self.node_parent.len();
        for k in 0..=events.len() {
            self.node_parent.push(first_node + k);
            self.node_refs.push(vec![format!("{}#{k}", ut.trip_id)]);
        }
        let mut edges = Vec::with_capacity(events.len());
        for (k, (re, f)) in events.iter().zip(features).enumerate() {
            let uid = self.arena.len();
            self.arena.push(Member {
                uid,
                trip_id: ut.trip_id.clone(),
                event_index: k,
                event: Arc::new((*re).clone()),
                features: f,
            });
            let id = self.clusters.len();
            self.edge_parent.push(id);
            self.clusters.push(Some(Cluster { members: vec![uid], rep: uid, baro_rep: None }));
            self.refresh_baro_rep(id);
            edges.push(id);
        }
        let walk = (ut.trip_id.clone(), edges.clone());
        let nodes = (first_node..=first_node + events.len()).collect();
        let mut current = self.chains.len();
        self.chains.push(Some(Chain { edges, nodes }));

        loop {
            let x = self.chains[current].clone().expect("live chain");
            if x.edges.len() < self.min_overlap {
                if contained {
                    self.chains[current] = None;
                    return false;
                }
                break;
            }
            let rules = AlignRules { min_overlap: self.min_overlap, pair_limit: self.pair_limit, contained };
            let xu = self.rep_uids(&x);
            let mut best: Option<(usize, TraceAlignment)> = None;
            for c in 0..self.chains.len() {
                if c == current {
                    continue;
                }
                let Some(other) = &self.chains[c] else { continue };
                if other.edges.len() < self.min_overlap {
                    continue;
                }
                let cu = self.rep_uids(other);
                let mut src = UidCosts { cache: &mut self.cache, arena: &self.arena, cfg: &self.cfg, a: &cu, b: &xu };
                match best_alignment(cu.len(), xu.len(), &self.cfg, rules, &mut src) {
                    Some(a) => {
                        if best.is_none_or(|(_, b)| a.mean_cost < b.mean_cost) {
                            best = Some((c, a));
                        }
                    }
                    None => self.stats.rejected += 1,
                }
            }
            let Some((target, alignment)) = best else {
                if contained {
                    self.chains[current] = None;
                    return false;
                }
                break;
            };
            log::debug!(
                "{}: merging chain {current} into {target} at offset {} over {} edges (mean {:.3})",
                ut.trip_id,
                alignment.offset,
                alignment.overlap_len,
                alignment.mean_cost
            );
            self.merge_chains(target, current, alignment.offset);
            self.stats.accepted += 1;
            current = target;
            contained = false;
        }
        self.walks.push(walk);
        true
    }

    /// Merges chain `x` into chain `c`, with `x[j]` aligned to `c[j + offset]`.
    fn merge_chains(&mut self, c: usize, x: usize, offset: isize) {
        let cc = self.chains[c].take().expect("live chain");
        let xc = self.chains[x].take().expect("live chain");
        let lo = offset.min(0);
        let hi = (cc.edges.len() as isize).max(xc.edges.len() as isize + offset);
        let at = |v: &[usize], p: isize| (p >= 0 && (p as usize) < v.len()).then(|| v[p as usize]);
        let mut edges = Vec::new();
        let mut touched = Vec::new();
        for p in lo..hi {
            let e = match (at(&cc.edges, p), at(&xc.edges, p - offset)) {
                (Some(a), Some(b)) => {
                    self.union_edges(a, b);
                    touched.push(a);
                    a
                }
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => unreachable!("chains are contiguous"),
            };
            edges.push(e);
        }
        let mut nodes = Vec::new();
        for p in lo..=hi {
            let n = match (at(&cc.nodes, p), at(&xc.nodes, p - offset)) {
                (Some(a), Some(b)) => {
                    let (ra, rb) = (self.node(a), self.node(b));
                    if ra != rb {
                        let (keep, drop) = (ra.min(rb), ra.max(rb));
                        self.node_parent[drop] = keep;
                        let moved = std::mem::take(&mut self.node_refs[drop]);
                        self.node_refs[keep].extend(moved);
                    }
                    a
                }
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => unreachable!("chains are contiguous"),
            };
            nodes.push(n);
        }
        self.chains[c] = Some(Chain { edges, nodes });
        for e in touched {
            self.refresh_reps(e);
        }
    }

    fn union_edges(&mut self, keep: usize, other: usize) {
        let (a, b) = (self.edge(keep), self.edge(other));
        if a == b {
            return;
        }
        let moved = self.clusters[b].take().expect("live cluster");
        self.edge_parent[b] = a;
        self.clusters[a].as_mut().expect("live cluster").members.extend(moved.members);
    }

    /// Medoid by summed exact cost to every other member; ties go to the
    /// earliest traversal, then the lowest trip id.
    fn medoid(&mut self, candidates: &[usize], members: &[usize]) -> Option<usize> {
        let keys: Vec<(usize, usize)> =
            candidates.iter().flat_map(|&a| members.iter().map(move |&b| (a, b))).filter(|(a, b)| a != b).collect();
        self.cache.fill(&self.arena, &self.cfg, &keys, f64::INFINITY);
        candidates
            .iter()
            .map(|&a| {
                let sum: f64 = members
                    .iter()
                    .filter(|&&b| b != a && self.arena[b].features.is_some())
                    .map(|&b| self.cache.lookup(a, b, f64::INFINITY).expect("filled").value())
                    .sum();
                (a, sum)
            })
            .min_by(|(a, sa), (b, sb)| {
                sa.total_cmp(sb)
                    .then(self.arena[*a].event.bt.total_cmp(&self.arena[*b].event.bt))
                    .then(self.arena[*a].trip_id.cmp(&self.arena[*b].trip_id))
            })
            .map(|(a, _)| a)
    }

    fn refresh_reps(&mut self, e: usize) {
        let members = self.clusters[e].as_ref().expect("live cluster").members.clone();
        let usable: Vec<usize> = members.iter().copied().filter(|&m| self.arena[m].features.is_some()).collect();
        if let Some(rep) = self.medoid(&usable, &members) {
            self.clusters[e].as_mut().expect("live cluster").rep = rep;
        }
        self.refresh_baro_rep(e);
    }

    fn refresh_baro_rep(&mut self, e: usize) {
        let cluster = self.clusters[e].as_ref().expect("live cluster");
        let rep = cluster.rep;
        let members = cluster.members.clone();
        let has_baro = |m: usize| self.arena[m].features.as_ref().is_some_and(|f| f.baro.is_some());
        let baro_rep = if has_baro(rep) {
            Some(rep)
        } else {
            let with: Vec<usize> = members.iter().copied().filter(|&m| has_baro(m)).collect();
            self.medoid(&with, &members)
        };
        self.clusters[e].as_mut().expect("live cluster").baro_rep = baro_rep;
    }

    /// Compact snapshot with contiguous node and edge ids.
    pub fn graph(&mut self) -> PatternGraph {
        let mut node_ids: HashMap<usize, usize> = HashMap::new();
        let mut nodes = Vec::new();
        let mut edge_ids: HashMap<usize, usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut paths = Vec::new();
        let chains: Vec<Chain> = self.chains.iter().flatten().cloned().collect();
        for chain in &chains {
            let mut path = Vec::with_capacity(chain.edges.len());
            for (p, &e) in chain.edges.iter().enumerate() {
                let mut ends = [0usize; 2];
                for (k, &n) in chain.nodes[p..p + 2].iter().enumerate() {
                    let root = self.node(n);
                    ends[k] = *node_ids.entry(root).or_insert_with(|| {
                        nodes.push(GraphNode { refs: self.node_refs[root].clone() });
                        nodes.len() - 1
                    });
                }
                let root = self.edge(e);
                let cluster = self.clusters[root].as_ref().expect("live cluster");
                let id = *edge_ids.entry(root).or_insert_with(|| {
                    let members: Vec<Member> = cluster.members.iter().map(|&m| self.arena[m].clone()).collect();
                    let pos = |uid: usize| cluster.members.iter().position(|&m| m == uid);
                    edges.push(EdgeCluster {
                        from: ends[0],
                        to: ends[1],
                        representative: pos(cluster.rep).unwrap_or(0),
                        baro_representative: cluster.baro_rep.and_then(pos),
                        members,
                    });
                    edges.len() - 1
                });
                path.push(id);
            }
            paths.push(path);
        }
        let walks = self
            .walks
            .clone()
            .into_iter()
            .map(|(trip_id, es)| TraceWalk {
                trip_id,
                edges: es.into_iter().map(|e| edge_ids[&self.edge(e)]).collect(),
            })
            .collect();
        PatternGraph { nodes, edges, paths, walks }
    }
}

/// Merges one trace into a graph snapshot.
pub fn merge_into_graph(graph: &PatternGraph, ut: &UserTrace, cfg: &MatchConfig, min_overlap: usize) -> PatternGraph {
    let mut b = GraphBuilder::from_graph(graph, cfg.clone(), min_overlap);
    b.add_trace(ut);
    b.graph()
}

/// Index of the medoid member of `cluster` (see [`GraphBuilder`] for ties).
pub fn representative_pattern(cluster: &EdgeCluster, cfg: &MatchConfig) -> Option<usize> {
    let mut b = GraphBuilder::new(cfg.clone(), 1);
    b.arena = cluster.members.iter().enumerate().map(|(i, m)| Member { uid: i, ..m.clone() }).collect();
    let members: Vec<usize> = (0..b.arena.len()).collect();
    let usable: Vec<usize> = members.iter().copied().filter(|&m| b.arena[m].features.is_some()).collect();
    b.medoid(&usable, &members)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StopEvidence::BaroConfirmed;
    use crate::testutil::trace;

    fn consistent(g: &PatternGraph) {
        for p in &g.paths {
            for w in p.windows(2) {
                assert_eq!(g.edges[w[0]].to, g.edges[w[1]].from);
            }
        }
        for e in &g.edges {
            assert!(e.from < g.nodes.len() && e.to < g.nodes.len());
            assert!(e.representative < e.members.len());
        }
        let mut refs: Vec<&String> = g.nodes.iter().flat_map(|n| &n.refs).collect();
        let total = refs.len();
        refs.sort();
        refs.dedup();
        assert_eq!(refs.len(), total, "a stop ref sits in two nodes");
    }

    #[test]
    fn overlapping_traces_merge_into_one_chain() {
        let a = trace("a", &[0, 1, 2, 3, 4, 5], BaroConfirmed, 1);
        let b = trace("b", &[2, 3, 4, 5, 6, 7], BaroConfirmed, 2);
        let mut builder = GraphBuilder::new(MatchConfig::default(), 4);
        assert!(builder.add_trace(&a));
        assert!(builder.add_trace(&b));
        let g = builder.graph();
        consistent(&g);
        assert_eq!(g.paths.len(), 1);
        assert_eq!(g.edges.len(), 8);
        assert_eq!(g.nodes.len(), 9);
        let sizes: Vec<usize> = g.paths[0].iter().map(|&e| g.edges[e].members.len()).collect();
        assert_eq!(sizes, [1, 1, 2, 2, 2, 2, 1, 1]);
        assert_eq!(g.walks.len(), 2);
        assert_eq!(g.node_of_ref("a#2"), g.node_of_ref("b#0"));
    }

    #[test]
    fn short_overlap_stays_apart() {
        let a = trace("a", &[0, 1, 2, 3], BaroConfirmed, 1);
        let b = trace("b", &[1, 2, 3, 9], BaroConfirmed, 2);
        let mut builder = GraphBuilder::new(MatchConfig::default(), 4);
        builder.add_trace(&a);
        builder.add_trace(&b);
        let g = builder.graph();
        consistent(&g);
        assert_eq!(g.paths.len(), 2);
        assert_eq!(g.member_count(), 8);
    }

    #[test]
    fn snapshot_merge_matches_incremental_build() {
        let a = trace("a", &[0, 1, 2, 3, 4], BaroConfirmed, 1);
        let b = trace("b", &[1, 2, 3, 4, 5], BaroConfirmed, 2);
        let cfg = MatchConfig::default();
        let mut builder = GraphBuilder::new(cfg.clone(), 4);
        builder.add_trace(&a);
        let merged = merge_into_graph(&builder.graph(), &b, &cfg, 4);
        builder.add_trace(&b);
        let direct = builder.graph();
        consistent(&merged);
        assert_eq!(merged.nodes, direct.nodes);
        assert_eq!(merged.paths, direct.paths);
        let sizes = |g: &PatternGraph| g.edges.iter().map(|e| e.members.len()).collect::<Vec<_>>();
        assert_eq!(sizes(&merged), sizes(&direct));
    }

    #[test]
    fn medoid_avoids_the_outlier() {
        let traces = [trace("a", &[3], BaroConfirmed, 1), trace("b", &[3], BaroConfirmed, 2), trace("c", &[3], BaroConfirmed, 3)];
        let mut members: Vec<Member> = traces
            .iter()
            .enumerate()
            .map(|(i, ut)| {
                let re = ut.running_events().next().unwrap().clone();
                Member {
                    uid: i,
                    trip_id: ut.trip_id.clone(),
                    event_index: 0,
                    features: EventFeatures::from_event(&re).ok().map(Arc::new),
                    event: Arc::new(re),
                }
            })
            .collect();
        let noisy = crate::testutil::event(3, 0.0, 300, 40.0, 5);
        members[0].features = EventFeatures::from_event(&noisy).ok().map(Arc::new);
        let cluster = EdgeCluster { from: 0, to: 1, members, representative: 0, baro_representative: None };
        let rep = representative_pattern(&cluster, &MatchConfig::default()).unwrap();
        assert_ne!(rep, 0);
    }
}
