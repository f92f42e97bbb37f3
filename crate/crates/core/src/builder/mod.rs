//! Pattern-map construction from crowdsourced user traces.
//!
//! Traces are merged one at a time into a [`PatternGraph`] whose edges pool
//! traversals of the same tunnel. The graph is then placed onto the metro
//! topology, and each anchored edge contributes its medoid traversal as the
//! tunnel's reference pattern.

mod anchor;
mod graph;
mod overlap;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use anchor::{
    anchor_components, anchor_graph, AnchorReport, Anchoring, ComponentAnchor, ComponentOutcome, Mapping, MAX_CANDIDATES,
};
pub use graph::{
    merge_into_graph, representative_pattern, stops_confirmed, EdgeCluster, GraphBuilder, GraphNode, Member, MergeStats, PatternGraph,
    TraceWalk,
};
pub use overlap::{best_overlap, best_overlap_features, TraceAlignment};

use crate::error::BuildError;
use crate::matching::{calibrate_baro_scale, EventFeatures, MatchConfig};
use crate::model::{MetroMap, TunnelKey, UserTrace};
use crate::signal::VarianceSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub matching: MatchConfig,
    /// Aligned running events needed before two traces may merge.
    pub min_overlap: usize,
    /// Replace `matching.baro_scale` with one estimated from the input.
    pub calibrate_baro_scale: bool,
    /// Pairs sampled for that estimate.
    pub calibration_pairs: usize,
    /// Merges are refused when any aligned pair costs at least this many
    /// times the DTW threshold.
    pub pair_limit_factor: f64,
    /// Let traces with unconfirmed stops start and extend chains. When no
    /// input trace is fully confirmed, all are trusted regardless.
    pub trust_unconfirmed: bool,
    /// Re-anchor after every trace to record coverage growth.
    pub track_coverage: bool,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            matching: MatchConfig::default(),
            min_overlap: 4,
            calibrate_baro_scale: true,
            calibration_pairs: 2000,
            pair_limit_factor: 2.0,
            trust_unconfirmed: false,
            track_coverage: true,
        }
    }
}

impl BuildConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.matching.validate()?;
        if self.min_overlap == 0 {
            return Err("min_overlap must be >= 1".into());
        }
        if !(self.pair_limit_factor >= 1.0) {
            return Err(format!("pair_limit_factor must be >= 1, got {}", self.pair_limit_factor));
        }
        Ok(())
    }
}

/// Reference fingerprint of one directed tunnel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunnelPattern {
    pub mag: VarianceSeries,
    pub baro: Option<VarianceSeries>,
    /// Traversals pooled into this tunnel.
    pub members: usize,
}

impl TunnelPattern {
    pub fn features(&self) -> EventFeatures {
        EventFeatures { mag: self.mag.clone(), baro: self.baro.clone() }
    }
}

/// Settings a map was built with; the locator reuses them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    pub matching: MatchConfig,
    pub min_overlap: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildStats {
    pub traces: usize,
    pub running_events: usize,
    pub merges: MergeStats,
    pub components: usize,
    pub anchored_components: usize,
    /// Share of directed tunnels with a pattern.
    pub coverage: f64,
    /// Coverage after each merged trace, when tracked.
    pub coverage_curve: Vec<f64>,
    /// Unconfirmed traces no chain could take.
    pub unmerged_traces: usize,
    pub distance_evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternMap {
    pub metro: MetroMap,
    pub tunnel_patterns: BTreeMap<TunnelKey, TunnelPattern>,
    pub build_stats: BuildStats,
    pub config: MapConfig,
}

impl PatternMap {
    /// Patterns for every anchored edge of `graph`.
    pub fn from_anchoring(graph: &PatternGraph, anchoring: &Anchoring, metro: &MetroMap, config: MapConfig) -> Self {
        let mut tunnel_patterns = BTreeMap::new();
        for (&e, key) in &anchoring.tunnels {
            let edge = &graph.edges[e];
            let Some(mag) = edge.members.get(edge.representative).and_then(|m| m.features.as_ref()) else {
                continue;
            };
            let baro = edge
                .baro_representative
                .and_then(|b| edge.members[b].features.as_ref())
                .and_then(|f| f.baro.clone());
            tunnel_patterns.insert(
                key.clone(),
                TunnelPattern { mag: mag.mag.clone(), baro, members: edge.members.len() },
            );
        }
        let mut map = Self { metro: metro.clone(), tunnel_patterns, build_stats: BuildStats::default(), config };
        map.build_stats.coverage = map.coverage();
        map
    }

    pub fn coverage(&self) -> f64 {
        let total = self.metro.directed_tunnels().len();
        if total == 0 {
            return 0.0;
        }
        self.tunnel_patterns.len() as f64 / total as f64
    }
}

/// Everything a build produced.
#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub map: PatternMap,
    pub graph: PatternGraph,
    pub anchors: AnchorReport,
}

/// Builds a pattern map from user traces, merged in input order.
///
/// Hints naming nodes that never appear are ignored. Components that cannot
/// be placed uniquely are left out of the map; the report says why.
pub fn build_map(
    traces: &[UserTrace],
    metro: &MetroMap,
    cfg: &BuildConfig,
    hints: &[(String, String)],
) -> Result<BuildOutput, BuildError> {
    cfg.validate().map_err(BuildError::InvalidConfig)?;
    let mut matching = cfg.matching.clone();
    if cfg.calibrate_baro_scale {
        let features: Vec<EventFeatures> = traces
            .iter()
            .flat_map(|t| t.running_events())
            .filter_map(|re| EventFeatures::from_event(re).ok())
            .collect();
        if let Some(scale) = calibrate_baro_scale(&features, cfg.calibration_pairs, &matching) {
            log::info!("pressure cost scale calibrated to {scale:.4e}");
            matching.baro_scale = scale;
        }
    }
    let map_config = MapConfig { matching: matching.clone(), min_overlap: cfg.min_overlap };
    let trust = cfg.trust_unconfirmed || !traces.iter().any(stops_confirmed);
    let limit = cfg.pair_limit_factor * matching.dtw_threshold;
    let mut builder = GraphBuilder::new(matching, cfg.min_overlap).with_pair_limit(limit).trust_unconfirmed(trust);
    let mut curve = Vec::new();
    let mut deferred = Vec::new();
    for (i, ut) in traces.iter().enumerate() {
        if !builder.add_trace(ut) && ut.running_count() > 0 {
            deferred.push(ut);
        }
        if cfg.track_coverage {
            let g = builder.graph();
            let report = anchor_components(&g, metro, hints);
            curve.push(PatternMap::from_anchoring(&g, &report.anchoring, metro, map_config.clone()).coverage());
        }
        log::debug!("merged trace {}/{} ({})", i + 1, traces.len(), ut.trip_id);
    }
    // Chains keep growing, so a trace that fit nowhere may fit now.
    loop {
        let before = deferred.len();
        deferred.retain(|ut| !builder.add_trace(ut));
        if deferred.len() == before {
            break;
        }
    }
    if !deferred.is_empty() {
        log::info!("{} unconfirmed trace(s) left out of the graph", deferred.len());
    }
    let graph = builder.graph();
    let anchors = anchor_components(&graph, metro, hints);
    if !anchors.unknown_hints.is_empty() {
        log::warn!("{} hint(s) name no stop in the graph", anchors.unknown_hints.len());
    }
    let mut map = PatternMap::from_anchoring(&graph, &anchors.anchoring, metro, map_config);
    map.build_stats = BuildStats {
        traces: traces.len(),
        running_events: traces.iter().map(UserTrace::running_count).sum(),
        merges: builder.stats(),
        components: anchors.components.len(),
        anchored_components: anchors.anchored_components(),
        coverage: map.coverage(),
        coverage_curve: curve,
        unmerged_traces: deferred.len(),
        distance_evaluations: builder.evaluations(),
    };
    Ok(BuildOutput { map, graph, anchors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StopEvidence::BaroConfirmed;
    use crate::sim::default_metro;
    use crate::testutil::trace;

    #[test]
    fn no_traces_give_an_empty_map() {
        let out = build_map(&[], &default_metro(), &BuildConfig::default(), &[]).unwrap();
        assert!(out.map.tunnel_patterns.is_empty());
        assert_eq!(out.map.coverage(), 0.0);
        assert_eq!(out.map.build_stats.traces, 0);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = BuildConfig { min_overlap: 0, ..BuildConfig::default() };
        assert!(matches!(build_map(&[], &default_metro(), &cfg, &[]), Err(BuildError::InvalidConfig(_))));
    }

    #[test]
    fn hinted_single_line_is_fully_covered() {
        let stations: Vec<String> = (0..6).map(|i| format!("s{i}")).collect();
        let metro = MetroMap::new(vec![crate::model::Line { name: "A".into(), stations }]).unwrap();
        let there = trace("there", &[0, 1, 2, 3, 4], BaroConfirmed, 1);
        let back = trace("back", &[5, 6, 7, 8, 9], BaroConfirmed, 2);
        let hints = vec![("there#0".to_string(), "s0".to_string()), ("back#0".to_string(), "s5".to_string())];
        let cfg = BuildConfig { track_coverage: true, ..BuildConfig::default() };
        let out = build_map(&[there, back], &metro, &cfg, &hints).unwrap();
        assert_eq!(out.map.coverage(), 1.0);
        assert_eq!(out.map.build_stats.coverage_curve, vec![0.5, 1.0]);
        assert!(out.map.tunnel_patterns.contains_key(&TunnelKey::new("s0", "s1")));
        assert!(out.map.tunnel_patterns.contains_key(&TunnelKey::new("s5", "s4")));
    }
}
