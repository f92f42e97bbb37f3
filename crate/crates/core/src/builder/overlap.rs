use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::matching::{feature_distance_bounded, Cost, EventFeatures, MatchConfig};
use crate::model::UserTrace;
use crate::par;

/// How two event sequences line up: the second sequence's event `j` sits
/// against the first sequence's event `j + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceAlignment {
    pub offset: isize,
    pub overlap_len: usize,
    pub mean_cost: f64,
}

impl TraceAlignment {
    /// Index pairs (first, second) covered by this alignment.
    pub fn pairs(&self, n1: usize, n2: usize) -> Vec<(usize, usize)> {
        pairs_at(self.offset, n1, n2)
    }
}

fn pairs_at(offset: isize, n1: usize, n2: usize) -> Vec<(usize, usize)> {
    (0..n2)
        .filter_map(|j| {
            let i = j as isize + offset;
            (i >= 0 && (i as usize) < n1).then_some((i as usize, j))
        })
        .collect()
}

/// Supplies event-pair costs, each either exact or known to be at least `cap`.
pub(crate) trait CostSource {
    fn costs(&mut self, pairs: &[(usize, usize)], cap: f64) -> Vec<Cost>;
}

/// Which shifts [`best_alignment`] may return.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct AlignRules {
    pub min_overlap: usize,
    /// Every aligned pair must cost less than this.
    pub pair_limit: f64,
    /// Only shifts that place the whole second sequence inside the first.
    pub contained: bool,
}

impl AlignRules {
    pub fn overlap(min_overlap: usize) -> Self {
        Self { min_overlap, pair_limit: f64::INFINITY, contained: false }
    }
}

/// Minimum mean-cost alignment over every relative shift allowed by `rules`,
/// accepted only below the DTW threshold.
///
/// Costs are first fetched with the threshold as cap. The best alignment by
/// (possibly bounded) mean is then made exact, repeating until the winner
/// uses only exact costs, so the result equals the exhaustive computation.
pub(crate) fn best_alignment(
    n1: usize,
    n2: usize,
    cfg: &MatchConfig,
    rules: AlignRules,
    source: &mut dyn CostSource,
) -> Option<TraceAlignment> {
    let need = rules.min_overlap.max(1);
    if n1 < need || n2 < need {
        return None;
    }
    let mut offsets: Vec<(isize, Vec<(usize, usize)>)> = (-(n2 as isize - 1)..n1 as isize)
        .filter(|&k| !rules.contained || (k >= 0 && k as usize + n2 <= n1))
        .map(|k| (k, pairs_at(k, n1, n2)))
        .filter(|(_, p)| p.len() >= need)
        .collect();
    if offsets.is_empty() {
        return None;
    }
    let mut all: Vec<(usize, usize)> = offsets.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    all.sort_unstable();
    all.dedup();
    let mut table: HashMap<(usize, usize), Cost> =
        all.iter().copied().zip(source.costs(&all, cfg.dtw_threshold)).collect();

    loop {
        let mut best: Option<(f64, usize, isize, &Vec<(usize, usize)>)> = None;
        for (k, pairs) in &offsets {
            let mean = pairs.iter().map(|p| table[p].value()).sum::<f64>() / pairs.len() as f64;
            let better = match best {
                None => true,
                Some((bm, bl, bk, _)) => {
                    (mean, std::cmp::Reverse(pairs.len()), k.unsigned_abs(), *k)
                        .partial_cmp(&(bm, std::cmp::Reverse(bl), bk.unsigned_abs(), bk))
                        == Some(std::cmp::Ordering::Less)
                }
            };
            if better {
                best = Some((mean, pairs.len(), *k, pairs));
            }
        }
        let (mean, len, k, pairs) = best?;
        if !(mean < cfg.dtw_threshold) {
            return None;
        }
        if pairs.iter().any(|p| !(table[p].value() < rules.pair_limit)) {
            offsets.retain(|(o, _)| *o != k);
            continue;
        }
        let loose: Vec<(usize, usize)> = pairs.iter().copied().filter(|p| !table[p].is_exact()).collect();
        if loose.is_empty() {
            return Some(TraceAlignment { offset: k, overlap_len: len, mean_cost: mean });
        }
        for (p, c) in loose.iter().zip(source.costs(&loose, f64::INFINITY)) {
            table.insert(*p, c);
        }
    }
}

/// Cost source over two feature lists with no sharing beyond one call.
struct LocalCosts<'a> {
    a: &'a [Option<EventFeatures>],
    b: &'a [Option<EventFeatures>],
    cfg: &'a MatchConfig,
}

impl CostSource for LocalCosts<'_> {
    fn costs(&mut self, pairs: &[(usize, usize)], cap: f64) -> Vec<Cost> {
        par::map(pairs, |&(i, j)| match (&self.a[i], &self.b[j]) {
            (Some(x), Some(y)) => feature_distance_bounded(x, y, self.cfg, cap).unwrap_or(Cost::Exact(f64::INFINITY)),
            _ => Cost::Exact(f64::INFINITY),
        })
    }
}

pub(crate) fn trace_features(ut: &UserTrace) -> Vec<Option<EventFeatures>> {
    ut.running_events().map(|re| EventFeatures::from_event(re).ok()).collect()
}

/// Best overlap between two user traces. Events whose features cannot be
/// computed never match anything.
pub fn best_overlap(ut1: &UserTrace, ut2: &UserTrace, cfg: &MatchConfig, min_overlap: usize) -> Option<TraceAlignment> {
    let a = trace_features(ut1);
    let b = trace_features(ut2);
    best_overlap_features(&a, &b, cfg, min_overlap)
}

/// [`best_overlap`] on precomputed features.
pub fn best_overlap_features(
    a: &[Option<EventFeatures>],
    b: &[Option<EventFeatures>],
    cfg: &MatchConfig,
    min_overlap: usize,
) -> Option<TraceAlignment> {
    let mut source = LocalCosts { a, b, cfg };
    best_alignment(a.len(), b.len(), cfg, AlignRules::overlap(min_overlap), &mut source)
}
