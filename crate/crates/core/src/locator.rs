//! Phase two: placing a rider's running events on the pattern map.
//!
//! Candidate paths are the single-line station sequences with one tunnel per
//! event. Costs are fetched capped at the DTW threshold and only the leading
//! candidates are made exact, which leaves the winner unchanged.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::builder::PatternMap;
use crate::error::LocateError;
use crate::matching::{feature_distance_bounded, Cost, EventFeatures, MatchConfig};
use crate::model::{RunningEvent, StopEvent, StopEvidence, TraceEvent, TunnelKey, UserTrace};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationEstimate {
    /// Station at the end of the last matched tunnel.
    pub station_id: String,
    pub tunnel_path: Vec<TunnelKey>,
    /// Mean event cost along the path.
    pub cost: f64,
    /// `1 - best / second`, where the runner-up cost saturates at the
    /// threshold; 1 means no other path comes close.
    pub confidence: f64,
    pub events_used: usize,
}

/// Read-only view of a map prepared for repeated queries.
pub struct Locator<'m> {
    map: &'m PatternMap,
    cfg: MatchConfig,
    patterns: BTreeMap<TunnelKey, EventFeatures>,
}

/// Costs between one rider's events and map tunnels, kept across queries.
#[derive(Debug, Default, Clone)]
pub struct CostTable {
    costs: HashMap<(usize, TunnelKey), Cost>,
}

impl CostTable {
    fn get(&self, k: &(usize, TunnelKey)) -> Cost {
        self.costs[k]
    }
}

impl<'m> Locator<'m> {
    pub fn new(map: &'m PatternMap, cfg: &MatchConfig) -> Result<Self, LocateError> {
        if map.tunnel_patterns.is_empty() {
            return Err(LocateError::EmptyMap);
        }
        let patterns = map.tunnel_patterns.iter().map(|(k, p)| (k.clone(), p.features())).collect();
        Ok(Self { map, cfg: cfg.clone(), patterns })
    }

    pub fn config(&self) -> &MatchConfig {
        &self.cfg
    }

    fn evaluate(&self, events: &[EventFeatures], table: &mut CostTable, keys: &[(usize, TunnelKey)], cap: f64) {
        let results = par::map(keys, |(i, t)| feature_distance_bounded(&events[*i], &self.patterns[t], &self.cfg, cap));
        for (k, r) in keys.iter().zip(results) {
            // Features were validated on extraction, so matching cannot fail.
            table.costs.insert(k.clone(), r.unwrap_or(Cost::Exact(f64::INFINITY)));
        }
    }

    /// Nearest tunnel pattern to one event, if it is below the threshold.
    /// Ties go to the smaller tunnel key.
    pub fn locate_features(&self, event: &EventFeatures) -> Option<(TunnelKey, f64)> {
        let keys: Vec<&TunnelKey> = self.patterns.keys().collect();
        let costs = par::map(&keys, |t| feature_distance_bounded(event, &self.patterns[*t], &self.cfg, self.cfg.dtw_threshold));
        let mut best: Option<(TunnelKey, f64)> = None;
        for (t, c) in keys.into_iter().zip(costs) {
            if let Ok(Cost::Exact(v)) = c {
                if v < self.cfg.dtw_threshold && best.as_ref().is_none_or(|b| v < b.1) {
                    best = Some((t.clone(), v));
                }
            }
        }
        best
    }

    /// Best single-line path for `events`, reusing and extending `table`.
    pub fn locate_path(&self, events: &[EventFeatures], table: &mut CostTable) -> Result<LocationEstimate, LocateError> {
        let obs: Vec<usize> = (0..events.len()).collect();
        self.locate_obs(events, &obs, table, self.cfg.dtw_threshold)
    }

    /// [`Locator::locate_path`] for the observations `store[obs[0]], store[obs[1]], ...`,
    /// accepting only fixes cheaper than `bound` (at most the threshold).
    /// `table` is keyed by store index.
    fn locate_obs(
        &self,
        store: &[EventFeatures],
        obs: &[usize],
        table: &mut CostTable,
        bound: f64,
    ) -> Result<LocationEstimate, LocateError> {
        if obs.is_empty() {
            return Err(LocateError::NoEvents);
        }
        let threshold = self.cfg.dtw_threshold;
        let bound = bound.min(threshold);
        let paths: Vec<Vec<TunnelKey>> = self
            .map
            .metro
            .line_paths(obs.len())
            .into_iter()
            .map(|s| s.windows(2).map(|w| TunnelKey::new(&w[0], &w[1])).collect::<Vec<_>>())
            .filter(|p| p.iter().all(|t| self.patterns.contains_key(t)))
            .collect();
        let keyed = |p: &[TunnelKey]| -> Vec<(usize, TunnelKey)> { obs.iter().copied().zip(p.iter().cloned()).collect() };
        let mut missing: Vec<(usize, TunnelKey)> =
            paths.iter().flat_map(|p| keyed(p)).filter(|k| !table.costs.contains_key(k)).collect();
        missing.sort();
        missing.dedup();
        self.evaluate(store, table, &missing, bound);

        loop {
            let mut ranked: Vec<(f64, usize)> = paths
                .iter()
                .enumerate()
                .map(|(pi, p)| {
                    let sum: f64 = keyed(p).iter().map(|k| table.get(k).value()).sum();
                    (sum / p.len() as f64, pi)
                })
                .collect();
            // Paths come sorted by station sequence, so the stable sort keeps
            // the lexicographic order among equal costs.
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
            let Some(&(best, bi)) = ranked.first().filter(|b| b.0 < bound) else {
                return Err(LocateError::NoFix);
            };
            let second = ranked.get(1).copied().filter(|s| s.0 < threshold);
            let loose: Vec<(usize, TunnelKey)> = std::iter::once(bi)
                .chain(second.map(|s| s.1))
                .flat_map(|pi| keyed(&paths[pi]))
                .filter(|k| !table.get(k).is_exact())
                .collect();
            if loose.is_empty() {
                let runner_up = second.map_or(threshold, |s| s.0);
                let confidence = if best <= 0.0 { 1.0 } else { (1.0 - best / runner_up).clamp(f64::MIN_POSITIVE, 1.0) };
                let path = paths[bi].clone();
                return Ok(LocationEstimate {
                    station_id: path[path.len() - 1].to.clone(),
                    tunnel_path: path,
                    cost: best,
                    confidence,
                    events_used: obs.len(),
                });
            }
            self.evaluate(store, table, &loose, f64::INFINITY);
        }
    }
}

/// Nearest tunnel to a running event when its cost is below the threshold.
pub fn locate_event(re: &RunningEvent, map: &PatternMap, cfg: &MatchConfig) -> Option<(TunnelKey, f64)> {
    let locator = Locator::new(map, cfg).ok()?;
    let features = EventFeatures::from_event(re).ok()?;
    locator.locate_features(&features)
}

/// Best single-line path with one tunnel per event, ending at the current station.
pub fn locate_sequence(events: &[RunningEvent], map: &PatternMap, cfg: &MatchConfig) -> Result<LocationEstimate, LocateError> {
    if events.is_empty() {
        return Err(LocateError::NoEvents);
    }
    let locator = Locator::new(map, cfg)?;
    let features = events.iter().map(EventFeatures::from_event).collect::<Result<Vec<_>, _>>()?;
    locator.locate_path(&features, &mut CostTable::default())
}

/// Most stops that lacked barometer confirmation which one hypothesis may
/// treat as spurious.
pub const MAX_JOINS: usize = 2;

/// One running event spanning `events`, as if the stops between them had
/// not been detected.
pub fn join_events(events: &[RunningEvent]) -> RunningEvent {
    RunningEvent {
        bt: events[0].bt,
        et: events[events.len() - 1].et,
        b_trace: events.iter().flat_map(|e| e.b_trace.iter().copied()).collect(),
        m_trace: events.iter().flat_map(|e| e.m_trace.iter().copied()).collect(),
        tunnel: None,
    }
}

/// Incremental localization for one rider.
///
/// A stop seen only in acceleration may be a mid-tunnel slowdown, which
/// splits one tunnel into two running events. Each query therefore also
/// tries joining events across up to [`MAX_JOINS`] such stops and keeps the
/// cheapest fix; hypotheses with fewer joins win ties. Costs of every event
/// and joined run are kept between queries.
pub struct StreamingLocator<'m> {
    locator: Locator<'m>,
    raw: Vec<RunningEvent>,
    /// `joinable[i]` when the stop between events `i` and `i + 1` is unconfirmed.
    joinable: Vec<bool>,
    store: Vec<EventFeatures>,
    ids: HashMap<(usize, usize), usize>,
    table: CostTable,
}

impl<'m> StreamingLocator<'m> {
    pub fn new(map: &'m PatternMap, cfg: &MatchConfig) -> Result<Self, LocateError> {
        Ok(Self {
            locator: Locator::new(map, cfg)?,
            raw: Vec::new(),
            joinable: Vec::new(),
            store: Vec::new(),
            ids: HashMap::new(),
            table: CostTable::default(),
        })
    }

    /// Adds the next running event; `stop_before` is the stop separating it
    /// from the previous one.
    pub fn push(&mut self, re: &RunningEvent, stop_before: Option<&StopEvent>) -> Result<LocationEstimate, LocateError> {
        self.add(re, stop_before)?;
        self.locate()
    }

    fn add(&mut self, re: &RunningEvent, stop_before: Option<&StopEvent>) -> Result<(), LocateError> {
        let features = EventFeatures::from_event(re)?;
        if !self.raw.is_empty() {
            self.joinable.push(stop_before.is_some_and(|s| s.evidence != StopEvidence::BaroConfirmed));
        }
        self.raw.push(re.clone());
        self.ids.insert((self.raw.len() - 1, self.raw.len() - 1), self.store.len());
        self.store.push(features);
        Ok(())
    }

    pub fn events(&self) -> usize {
        self.raw.len()
    }

    fn obs_id(&mut self, a: usize, b: usize) -> Option<usize> {
        if let Some(&id) = self.ids.get(&(a, b)) {
            return Some(id);
        }
        let features = EventFeatures::from_event(&join_events(&self.raw[a..=b])).ok()?;
        self.ids.insert((a, b), self.store.len());
        self.store.push(features);
        Some(self.store.len() - 1)
    }

    /// Best fix over every allowed join hypothesis. When none fixes, confirmed
    /// stops are questioned too, since a pressure signature can be mimicked
    /// by noise.
    pub fn locate(&mut self) -> Result<LocationEstimate, LocateError> {
        if self.raw.is_empty() {
            return Err(LocateError::NoEvents);
        }
        let joinable = self.joinable.clone();
        match self.locate_with(&joinable) {
            Err(LocateError::NoFix) if joinable.iter().any(|j| !j) => self.locate_with(&vec![true; joinable.len()]),
            other => other,
        }
    }

    fn locate_with(&mut self, joinable: &[bool]) -> Result<LocationEstimate, LocateError> {
        let mut best: Option<LocationEstimate> = None;
        for joins in join_sets(joinable, MAX_JOINS) {
            let mut obs = Vec::new();
            let mut start = 0;
            for end in 0..self.raw.len() {
                if joins.contains(&end) {
                    continue;
                }
                match self.obs_id(start, end) {
                    Some(id) => obs.push(id),
                    None => break,
                }
                start = end + 1;
            }
            if start < self.raw.len() {
                continue;
            }
            let bound = best.as_ref().map_or(f64::INFINITY, |b| b.cost);
            if let Ok(mut est) = self.locator.locate_obs(&self.store, &obs, &mut self.table, bound) {
                est.events_used = self.raw.len();
                best = Some(est);
            }
        }
        best.ok_or(LocateError::NoFix)
    }
}

/// Boundary sets of at most `max` joinable boundaries, smallest sets first.
fn join_sets(joinable: &[bool], max: usize) -> Vec<Vec<usize>> {
    let candidates: Vec<usize> = (0..joinable.len()).filter(|&i| joinable[i]).collect();
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max {
        let mut next = Vec::new();
        for set in &frontier {
            let from = set.last().map_or(0, |&l: &usize| candidates.iter().position(|&c| c == l).unwrap() + 1);
            for &c in &candidates[from..] {
                let mut grown = set.clone();
                grown.push(c);
                next.push(grown);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Locates a whole user trace, treating unconfirmed stops as possibly spurious.
pub fn locate_trace(ut: &UserTrace, map: &PatternMap, cfg: &MatchConfig) -> Result<LocationEstimate, LocateError> {
    let mut stream = StreamingLocator::new(map, cfg)?;
    let mut last_stop = None;
    for e in &ut.events {
        match e {
            TraceEvent::Stop(s) => last_stop = Some(s),
            TraceEvent::Running(re) => stream.add(re, last_stop)?,
        }
    }
    stream.locate()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::{BuildStats, MapConfig, TunnelPattern};
    use crate::model::{Line, MetroMap};
    use crate::testutil::event;

    /// Line x - y - z - w; the directed tunnel with index `k` in
    /// `directed_tunnels()` has profile seed `k`.
    fn map_without(skip: Option<&TunnelKey>) -> PatternMap {
        let stations = ["x", "y", "z", "w"].map(String::from).to_vec();
        let metro = MetroMap::new(vec![Line { name: "A".into(), stations }]).unwrap();
        let mut tunnel_patterns = BTreeMap::new();
        for (k, key) in metro.directed_tunnels().into_iter().enumerate() {
            if Some(&key) == skip {
                continue;
            }
            let f = EventFeatures::from_event(&event(k as u64, 0.0, 300, 0.0, 0)).unwrap();
            tunnel_patterns.insert(key, TunnelPattern { mag: f.mag, baro: None, members: 1 });
        }
        let config = MapConfig { matching: MatchConfig::default(), min_overlap: 4 };
        PatternMap { metro, tunnel_patterns, build_stats: BuildStats::default(), config }
    }

    fn seed_of(map: &PatternMap, key: &TunnelKey) -> u64 {
        map.metro.directed_tunnels().iter().position(|k| k == key).unwrap() as u64
    }

    fn ride(map: &PatternMap, stations: &[&str], bt: f64) -> Vec<RunningEvent> {
        stations
            .windows(2)
            .enumerate()
            .map(|(i, w)| event(seed_of(map, &TunnelKey::new(w[0], w[1])), bt + 100.0 * i as f64, 300, 1.0, 7 + i as u64))
            .collect()
    }

    #[test]
    fn stored_pattern_locates_to_itself_at_zero_cost() {
        let map = map_without(None);
        let cfg = MatchConfig::default();
        for key in map.metro.directed_tunnels() {
            let re = event(seed_of(&map, &key), 0.0, 300, 0.0, 0);
            assert_eq!(locate_event(&re, &map, &cfg), Some((key, 0.0)));
        }
    }

    #[test]
    fn single_event_sequence_agrees_with_locate_event() {
        let map = map_without(None);
        let cfg = MatchConfig::default();
        let events = ride(&map, &["z", "y"], 0.0);
        let (key, cost) = locate_event(&events[0], &map, &cfg).unwrap();
        let est = locate_sequence(&events, &map, &cfg).unwrap();
        assert_eq!(est.tunnel_path, vec![key.clone()]);
        assert_eq!(est.station_id, key.to);
        assert!((est.cost - cost).abs() < 1e-12);
    }

    #[test]
    fn sequence_ends_at_the_current_station() {
        let map = map_without(None);
        let cfg = MatchConfig::default();
        let est = locate_sequence(&ride(&map, &["w", "z", "y", "x"], 0.0), &map, &cfg).unwrap();
        assert_eq!(est.station_id, "x");
        assert_eq!(est.events_used, 3);
        assert!(est.confidence > 0.0 && est.confidence <= 1.0);
    }

    #[test]
    fn missing_tunnel_gives_no_fix() {
        let gap = TunnelKey::new("y", "z");
        let full = map_without(None);
        let map = map_without(Some(&gap));
        let cfg = MatchConfig::default();
        let re = event(seed_of(&full, &gap), 0.0, 300, 0.0, 0);
        assert_eq!(locate_event(&re, &map, &cfg), None);
        let events = ride(&full, &["x", "y", "z"], 0.0);
        assert_eq!(locate_sequence(&events, &map, &cfg), Err(LocateError::NoFix));
    }

    #[test]
    fn empty_inputs_are_errors() {
        let map = map_without(None);
        let cfg = MatchConfig::default();
        assert_eq!(locate_sequence(&[], &map, &cfg), Err(LocateError::NoEvents));
        let empty = PatternMap { tunnel_patterns: BTreeMap::new(), ..map };
        assert!(matches!(Locator::new(&empty, &cfg), Err(LocateError::EmptyMap)));
    }

    #[test]
    fn join_sets_grow_by_size() {
        assert_eq!(join_sets(&[true, false, true], 2), vec![vec![], vec![0], vec![2], vec![0, 2]]);
        assert_eq!(join_sets(&[true, true, true], 1), vec![vec![], vec![0], vec![1], vec![2]]);
        assert_eq!(join_sets(&[false, false], 2), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn halt_inside_a_tunnel_is_joined_away() {
        let map = map_without(None);
        let cfg = MatchConfig::default();
        let xy = event(seed_of(&map, &TunnelKey::new("x", "y")), 0.0, 300, 0.0, 0);
        let cut = xy.m_trace[150].t;
        let first = RunningEvent { et: cut, m_trace: xy.m_trace[..150].to_vec(), ..xy.clone() };
        let second = RunningEvent { bt: cut, m_trace: xy.m_trace[150..].to_vec(), ..xy.clone() };
        let yz = event(seed_of(&map, &TunnelKey::new("y", "z")), 100.0, 300, 0.0, 0);
        let halt = StopEvent::new(cut, cut);
        let confirmed = StopEvent { evidence: StopEvidence::BaroConfirmed, ..StopEvent::new(90.0, 100.0) };

        let mut stream = StreamingLocator::new(&map, &cfg).unwrap();
        stream.push(&first, None).ok();
        stream.push(&second, Some(&halt)).unwrap();
        let est = stream.push(&yz, Some(&confirmed)).unwrap();
        assert_eq!(est.tunnel_path, vec![TunnelKey::new("x", "y"), TunnelKey::new("y", "z")]);
        assert_eq!(est.events_used, 3);
        assert!(est.cost < 1e-9);
    }
}
