//! Scoring against simulator ground truth.
//!
//! Detected stops are matched to true dwells by time overlap; everything
//! else (tunnel labels, hints, map purity, localization accuracy) follows
//! from that matching.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::builder::{Anchoring, PatternGraph, PatternMap};
use crate::detect::{detect_stops, segment_trace, DetectorConfig};
use crate::error::{DetectError, EvalError, LocateError, MatchError};
use crate::locator::{LocationEstimate, StreamingLocator, MAX_JOINS};
use crate::matching::{dtw, feature_distance, mse, resample_linear, EventFeatures, MatchConfig};
use crate::model::{MetroMap, SensorTrace, StopEvent, TraceEvent, TunnelKey, UserTrace};
use crate::par;
use crate::sim::{GroundTruth, SyntheticWorld};

fn overlaps(s: &StopEvent, bt: f64, et: f64) -> bool {
    s.bt < et && s.et > bt
}

/// For each detected stop, the index of the true stop it overlaps.
pub fn label_stops<'a>(stops: impl IntoIterator<Item = &'a StopEvent>, truth: &GroundTruth) -> Vec<Option<usize>> {
    stops
        .into_iter()
        .map(|s| truth.stops.iter().position(|t| overlaps(s, t.arrival, t.departure)))
        .collect()
}

/// True tunnel behind each running event; `None` when either bounding stop
/// is spurious or a true stop was missed in between.
pub fn label_tunnels(ut: &UserTrace, truth: &GroundTruth) -> Vec<Option<TunnelKey>> {
    let stops = label_stops(ut.stops(), truth);
    stops
        .windows(2)
        .map(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) if b == a + 1 => truth.tunnels.get(a).cloned(),
            _ => None,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl DetectionScore {
    pub fn precision(&self) -> f64 {
        ratio(self.true_positives, self.true_positives + self.false_positives)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.true_positives, self.true_positives + self.false_negatives)
    }

    pub fn add(&mut self, other: DetectionScore) {
        self.true_positives += other.true_positives;
        self.false_positives += other.false_positives;
        self.false_negatives += other.false_negatives;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        1.0
    } else {
        a as f64 / b as f64
    }
}

/// A detected stop is a hit when it overlaps a true dwell; each true dwell
/// is found when some detected stop overlaps it.
pub fn score_detection(detected: &[StopEvent], truth: &GroundTruth) -> DetectionScore {
    let labels = label_stops(detected, truth);
    let hits = labels.iter().filter(|l| l.is_some()).count();
    let found: BTreeSet<usize> = labels.iter().flatten().copied().collect();
    DetectionScore {
        true_positives: hits,
        false_positives: labels.len() - hits,
        false_negatives: truth.stops.len() - found.len(),
    }
}

/// Hints for every detected stop whose true station satisfies `keep`,
/// as (`trip_id#stop_index`, station).
pub fn stop_hints(ut: &UserTrace, truth: &GroundTruth, keep: impl Fn(&str) -> bool) -> Vec<(String, String)> {
    label_stops(ut.stops(), truth)
        .into_iter()
        .enumerate()
        .filter_map(|(k, l)| {
            let station = &truth.stops[l?].station_id;
            keep(station).then(|| (format!("{}#{k}", ut.trip_id), station.clone()))
        })
        .collect()
}

/// Stations at either end of some line.
pub fn termini(metro: &MetroMap) -> BTreeSet<String> {
    metro
        .lines
        .iter()
        .flat_map(|l| [l.stations[0].clone(), l.stations[l.stations.len() - 1].clone()])
        .collect()
}

/// Hints labeling each stop detected at a line terminus.
pub fn terminus_hints<'a>(
    traces: impl IntoIterator<Item = (&'a UserTrace, &'a GroundTruth)>,
    metro: &MetroMap,
) -> Vec<(String, String)> {
    let ends = termini(metro);
    traces.into_iter().flat_map(|(ut, truth)| stop_hints(ut, truth, |s| ends.contains(s))).collect()
}

/// Purity of merged edge clusters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MergeAudit {
    /// Clusters with two or more labeled members.
    pub merged_clusters: usize,
    /// Of those, clusters whose labeled members share one true tunnel.
    pub pure_clusters: usize,
    /// Labeled member pairs placed in the same cluster.
    pub member_pairs: usize,
    /// Of those, pairs that are the same true tunnel.
    pub correct_pairs: usize,
}

impl MergeAudit {
    pub fn pair_precision(&self) -> f64 {
        ratio(self.correct_pairs, self.member_pairs)
    }

    pub fn cluster_purity(&self) -> f64 {
        ratio(self.pure_clusters, self.merged_clusters)
    }
}

/// `labels` maps trip id to the per-event tunnel labels of that trip.
pub fn audit_merges(graph: &PatternGraph, labels: &BTreeMap<String, Vec<Option<TunnelKey>>>) -> MergeAudit {
    let mut audit = MergeAudit::default();
    for e in &graph.edges {
        let tags: Vec<&TunnelKey> = e
            .members
            .iter()
            .filter_map(|m| labels.get(&m.trip_id)?.get(m.event_index)?.as_ref())
            .collect();
        if tags.len() < 2 {
            continue;
        }
        audit.merged_clusters += 1;
        if tags.iter().all(|t| *t == tags[0]) {
            audit.pure_clusters += 1;
        }
        for i in 0..tags.len() {
            for j in i + 1..tags.len() {
                audit.member_pairs += 1;
                if tags[i] == tags[j] {
                    audit.correct_pairs += 1;
                }
            }
        }
    }
    audit
}

/// How many anchored edges carry the tunnel most of their labeled members
/// actually traversed, out of anchored edges with any labeled member.
pub fn audit_anchoring(
    graph: &PatternGraph,
    anchoring: &Anchoring,
    labels: &BTreeMap<String, Vec<Option<TunnelKey>>>,
) -> (usize, usize) {
    let mut correct = 0;
    let mut total = 0;
    for (&e, key) in &anchoring.tunnels {
        let mut votes: BTreeMap<&TunnelKey, usize> = BTreeMap::new();
        for m in &graph.edges[e].members {
            if let Some(Some(t)) = labels.get(&m.trip_id).and_then(|l| l.get(m.event_index)) {
                *votes.entry(t).or_default() += 1;
            }
        }
        let Some((top, _)) = votes.into_iter().max_by_key(|(_, c)| *c) else { continue };
        total += 1;
        if top == key {
            correct += 1;
        }
    }
    (correct, total)
}

/// Localization accuracy after a given number of true tunnels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthBucket {
    pub tunnels: usize,
    /// Trips at least this long.
    pub trips: usize,
    /// Of those, trips located at the right station once the rider had
    /// passed this many tunnels.
    pub correct: usize,
}

impl LengthBucket {
    pub fn accuracy(&self) -> f64 {
        ratio(self.correct, self.trips)
    }
}

/// Station estimates a streaming locator reports at each true stop, indexed
/// by true stop. A true stop gets an estimate when a detected stop overlaps
/// it; the estimate is the one made right after the running event ending
/// there.
pub fn estimates_at_stops(
    ut: &UserTrace,
    truth: &GroundTruth,
    map: &PatternMap,
    cfg: &MatchConfig,
    max_tunnels: usize,
) -> Result<Vec<Option<String>>, LocateError> {
    let mut out = vec![None; truth.stops.len()];
    let mut stream = StreamingLocator::new(map, cfg)?;
    let mut last_stop = None;
    let mut pending: Option<Result<LocationEstimate, LocateError>> = None;
    for e in &ut.events {
        match e {
            TraceEvent::Running(re) => {
                if stream.events() >= max_tunnels + MAX_JOINS {
                    break;
                }
                pending = Some(stream.push(re, last_stop));
            }
            TraceEvent::Stop(s) => {
                last_stop = Some(s);
                let Some(k) = truth.stops.iter().position(|t| overlaps(s, t.arrival, t.departure)) else { continue };
                if let Some(Ok(est)) = pending.take() {
                    if out[k].is_none() {
                        out[k] = Some(est.station_id);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Accuracy after 1..=`max_tunnels` true tunnels. Only trips of at least
/// `max_tunnels` tunnels take part, so every bucket scores the same trips.
pub fn accuracy_by_length(
    trips: &[(UserTrace, GroundTruth)],
    map: &PatternMap,
    cfg: &MatchConfig,
    max_tunnels: usize,
) -> Result<Vec<LengthBucket>, LocateError> {
    let trips: Vec<&(UserTrace, GroundTruth)> = trips.iter().filter(|(_, t)| t.tunnels.len() >= max_tunnels).collect();
    let estimates: Vec<Result<Vec<Option<String>>, LocateError>> =
        par::map(&trips, |(ut, truth)| estimates_at_stops(ut, truth, map, cfg, max_tunnels));
    let mut buckets: Vec<LengthBucket> =
        (1..=max_tunnels).map(|k| LengthBucket { tunnels: k, trips: 0, correct: 0 }).collect();
    for ((_, truth), est) in trips.iter().zip(estimates) {
        let est = est?;
        for b in buckets.iter_mut() {
            b.trips += 1;
            if est[b.tunnels].as_deref() == Some(truth.stops[b.tunnels].station_id.as_str()) {
                b.correct += 1;
            }
        }
    }
    Ok(buckets)
}

/// Trip-length ranges (in tunnels) the detection table is split into.
pub const LENGTH_BUCKETS: [(usize, usize); 5] = [(1, 4), (5, 8), (9, 12), (13, 16), (17, usize::MAX)];

/// Stop-detection outcome over trips whose length falls in one bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub barometer: bool,
    pub min_tunnels: usize,
    pub max_tunnels: usize,
    pub trips: usize,
    pub score: DetectionScore,
}

/// Detection scores per trip-length bucket. `cfg.use_barometer` picks the mode.
pub fn detection_table(corpus: &[(SensorTrace, GroundTruth)], cfg: &DetectorConfig) -> Result<Vec<DetectionRow>, DetectError> {
    let scores = par::map(corpus, |(trace, truth)| {
        detect_stops(trace, cfg).map(|d| (truth.tunnels.len(), score_detection(&d.stops, truth)))
    });
    let mut rows: Vec<DetectionRow> = LENGTH_BUCKETS
        .iter()
        .map(|&(lo, hi)| DetectionRow {
            barometer: cfg.use_barometer,
            min_tunnels: lo,
            max_tunnels: hi,
            trips: 0,
            score: DetectionScore::default(),
        })
        .collect();
    for r in scores {
        let (len, score) = r?;
        if let Some(row) = rows.iter_mut().find(|row| (row.min_tunnels..=row.max_tunnels).contains(&len)) {
            row.trips += 1;
            row.score.add(score);
        }
    }
    Ok(rows)
}

/// Running events whose true tunnel is known, with their features.
pub fn labeled_events(trips: &[(UserTrace, GroundTruth)]) -> Vec<(TunnelKey, EventFeatures)> {
    let mut out = Vec::new();
    for (ut, truth) in trips {
        for (re, label) in ut.running_events().zip(label_tunnels(ut, truth)) {
            if let (Some(key), Ok(f)) = (label, EventFeatures::from_event(re)) {
                out.push((key, f));
            }
        }
    }
    out
}

/// Fused distances between events of the same tunnel and of different ones.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Separability {
    pub same: Vec<f64>,
    pub cross: Vec<f64>,
}

impl Separability {
    /// Cross-tunnel mean over same-tunnel mean.
    pub fn mean_ratio(&self) -> f64 {
        mean(&self.cross) / mean(&self.same)
    }

    /// Share of pairs on the wrong side of `threshold`: same-tunnel pairs at
    /// or above it and cross-tunnel pairs below it.
    pub fn error_rate(&self, threshold: f64) -> f64 {
        let wrong = self.same.iter().filter(|&&d| d >= threshold).count() + self.cross.iter().filter(|&&d| d < threshold).count();
        ratio(wrong, self.same.len() + self.cross.len())
    }
}

/// Summary row of one distance distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSummary {
    pub class: String,
    pub pairs: usize,
    pub mean: f64,
    pub p05: f64,
    pub median: f64,
    pub p95: f64,
    /// Share of pairs below the threshold.
    pub below_threshold: f64,
}

/// Nearest-rank quantile of sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn summarize(class: &str, values: &[f64], threshold: f64) -> DistanceSummary {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    DistanceSummary {
        class: class.into(),
        pairs: sorted.len(),
        mean: mean(&sorted),
        p05: quantile(&sorted, 0.05),
        median: quantile(&sorted, 0.5),
        p95: quantile(&sorted, 0.95),
        below_threshold: ratio(sorted.iter().filter(|&&d| d < threshold).count(), sorted.len()),
    }
}

impl Separability {
    pub fn summary(&self, threshold: f64) -> Vec<DistanceSummary> {
        vec![summarize("same", &self.same, threshold), summarize("cross", &self.cross, threshold)]
    }
}

/// Distances for every same-tunnel pair and `cross_pairs` random
/// cross-tunnel pairs drawn with `seed`.
pub fn tunnel_separability(
    events: &[(TunnelKey, EventFeatures)],
    cfg: &MatchConfig,
    cross_pairs: usize,
    seed: u64,
) -> Result<Separability, MatchError> {
    let n = events.len();
    let mut same = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if events[i].0 == events[j].0 {
                same.push((i, j));
            }
        }
    }
    let mut cross = Vec::new();
    let distinct = events.iter().map(|e| &e.0).collect::<BTreeSet<_>>().len();
    if distinct > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        while cross.len() < cross_pairs {
            let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
            if events[i].0 != events[j].0 {
                cross.push((i, j));
            }
        }
    }
    let dist = |&(i, j): &(usize, usize)| feature_distance(&events[i].1, &events[j].1, cfg);
    Ok(Separability {
        same: par::map(&same, dist).into_iter().collect::<Result<_, _>>()?,
        cross: par::map(&cross, dist).into_iter().collect::<Result<_, _>>()?,
    })
}

/// Magnetometer distances of one event pair under both measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtwMse {
    /// Path-normalized DTW.
    pub dtw: f64,
    /// MSE after resampling both series to the longer length.
    pub mse: f64,
}

/// DTW and MSE for the first `n_pairs` same-tunnel pairs, taking partners in
/// order of index distance so pairs spread over many tunnels.
pub fn dtw_vs_mse(events: &[(TunnelKey, EventFeatures)], n_pairs: usize) -> Result<Vec<DtwMse>, MatchError> {
    let mut pairs = Vec::new();
    let mut used = vec![false; events.len()];
    for i in 0..events.len() {
        if pairs.len() == n_pairs {
            break;
        }
        if used[i] {
            continue;
        }
        if let Some(j) = (i + 1..events.len()).find(|&j| !used[j] && events[j].0 == events[i].0) {
            used[i] = true;
            used[j] = true;
            pairs.push((i, j));
        }
    }
    let eval = |&(i, j): &(usize, usize)| -> Result<DtwMse, MatchError> {
        let (a, b) = (&events[i].1.mag.v, &events[j].1.mag.v);
        let len = a.len().max(b.len());
        Ok(DtwMse { dtw: dtw(a, b, None)?.normalized(), mse: mse(&resample_linear(a, len), &resample_linear(b, len))? })
    };
    par::map(&pairs, eval).into_iter().collect()
}

/// Median of each column, `(dtw, mse)`.
pub fn dtw_mse_medians(rows: &[DtwMse]) -> (f64, f64) {
    let med = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        quantile(&v, 0.5)
    };
    (med(rows.iter().map(|r| r.dtw).collect()), med(rows.iter().map(|r| r.mse).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub detector: DetectorConfig,
    /// Localization is scored after 1..=this many tunnels.
    pub max_tunnels: usize,
    pub cross_pairs: usize,
    pub mse_pairs: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { detector: DetectorConfig::default(), max_tunnels: 5, cross_pairs: 2000, mse_pairs: 50, seed: 0 }
    }
}

/// Every table the evaluation produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub detection: Vec<DetectionRow>,
    pub localization: Vec<LengthBucket>,
    /// Coverage after each build trace, from the map's build stats.
    pub coverage: Vec<f64>,
    pub separability: Vec<DistanceSummary>,
    pub dtw_vs_mse: Vec<DtwMse>,
}

/// Scores detection, separability, and localization on a labeled corpus
/// against `map`, with both detection modes in the detection table.
pub fn run_eval(
    world: &SyntheticWorld,
    corpus: &[(SensorTrace, GroundTruth)],
    map: &PatternMap,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    check_corpus(world, corpus, map)?;
    let baro_cfg = DetectorConfig { use_barometer: true, ..cfg.detector.clone() };
    let accel_cfg = DetectorConfig { use_barometer: false, ..cfg.detector.clone() };
    let mut detection = detection_table(corpus, &baro_cfg)?;
    detection.extend(detection_table(corpus, &accel_cfg)?);

    let segmented = par::map(corpus, |(trace, truth)| segment_trace(trace, &cfg.detector).ok().map(|ut| (ut, truth.clone())));
    let trips: Vec<(UserTrace, GroundTruth)> = segmented.into_iter().flatten().collect();
    let events = labeled_events(&trips);
    let matching = &map.config.matching;
    let separability = tunnel_separability(&events, matching, cfg.cross_pairs, cfg.seed)?.summary(matching.dtw_threshold);
    let dtw_vs_mse = dtw_vs_mse(&events, cfg.mse_pairs)?;
    let localization = accuracy_by_length(&trips, map, matching, cfg.max_tunnels)?;
    Ok(EvalReport { detection, localization, coverage: map.build_stats.coverage_curve.clone(), separability, dtw_vs_mse })
}

fn check_corpus(world: &SyntheticWorld, corpus: &[(SensorTrace, GroundTruth)], map: &PatternMap) -> Result<(), EvalError> {
    if map.metro != world.metro {
        return Err(EvalError::Input("map was built for a different metro network".into()));
    }
    for (trace, truth) in corpus {
        if trace.trip_id != truth.trip_id {
            return Err(EvalError::Input(format!("trace {} paired with truth {}", trace.trip_id, truth.trip_id)));
        }
        if let Some(t) = truth.tunnels.iter().find(|t| world.profile(t).is_none()) {
            return Err(EvalError::Input(format!("{}: tunnel {t} is not in the world", truth.trip_id)));
        }
    }
    Ok(())
}
