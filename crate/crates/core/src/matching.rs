//! Elastic distances between running events.
//!
//! Running events are compared on the first differences of their cleaned
//! magnetometer magnitude (and pressure, when both sides have it). DTW
//! absorbs the time warp between two traversals of the same tunnel; its
//! cost is divided by the warping-path length so tunnels of different
//! durations share one threshold.

use serde::{Deserialize, Serialize};

use crate::error::MatchError;
use crate::model::RunningEvent;
use crate::par;
use crate::signal::{clean_series, scalar_variance, Channel, VarianceSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    /// Normalized cost at or above which two events are different tunnels.
    pub dtw_threshold: f64,
    pub mag_weight: f64,
    pub baro_weight: f64,
    /// Sakoe-Chiba radius in samples; `None` is unconstrained.
    pub band_radius: Option<usize>,
    /// Multiplier putting pressure costs (hPa²) on the magnetometer scale (µT²).
    pub baro_scale: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self { dtw_threshold: 8.0, mag_weight: 1.0, baro_weight: 1.0, band_radius: None, baro_scale: 1.0 }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.dtw_threshold.is_finite() && self.dtw_threshold > 0.0) {
            return Err(format!("dtw_threshold must be > 0, got {}", self.dtw_threshold));
        }
        if !(self.mag_weight >= 0.0 && self.baro_weight >= 0.0) {
            return Err("weights must be >= 0".into());
        }
        if self.mag_weight + self.baro_weight <= 0.0 {
            return Err("at least one modality weight must be > 0".into());
        }
        if !(self.baro_scale.is_finite() && self.baro_scale >= 0.0) {
            return Err(format!("baro_scale must be finite and >= 0, got {}", self.baro_scale));
        }
        Ok(())
    }
}

/// Alignment between two series as grid indices, from (0, 0) to (n-1, m-1).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarpingPath {
    pub pairs: Vec<(usize, usize)>,
}

impl WarpingPath {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Monotone, continuous, and anchored at both corners.
    pub fn is_valid(&self, n: usize, m: usize) -> bool {
        if self.pairs.first() != Some(&(0, 0)) || self.pairs.last() != Some(&(n - 1, m - 1)) {
            return false;
        }
        self.pairs.windows(2).all(|w| {
            let di = w[1].0 as isize - w[0].0 as isize;
            let dj = w[1].1 as isize - w[0].1 as isize;
            matches!((di, dj), (1, 0) | (0, 1) | (1, 1))
        })
    }
}

/// Cumulative squared-difference cost along the optimal path and that path's length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtwResult {
    pub cost: f64,
    pub path_len: usize,
}

impl DtwResult {
    pub fn normalized(&self) -> f64 {
        if self.path_len == 0 {
            f64::INFINITY
        } else {
            self.cost / self.path_len as f64
        }
    }
}

/// Row-wise admissible column range under a band, widened so the end corner
/// stays reachable.
fn band_range(i: usize, n: usize, m: usize, band: Option<usize>) -> (usize, usize) {
    match band {
        None => (0, m - 1),
        Some(r) => {
            let slope = if n > 1 { (m - 1) as f64 / (n - 1) as f64 } else { 0.0 };
            let r = (r as f64).max(slope.ceil());
            let center = i as f64 * slope;
            let lo = (center - r).ceil().max(0.0) as usize;
            let hi = ((center + r).floor() as usize).min(m - 1);
            (lo, hi)
        }
    }
}

#[inline]
fn better(c1: f64, l1: u32, c2: f64, l2: u32) -> bool {
    c1 < c2 || (c1 == c2 && l1 < l2)
}

#[inline(always)]
fn pick(c1: f64, l1: u32, c2: f64, l2: u32) -> (f64, u32) {
    if better(c2, l2, c1, l1) {
        (c2, l2)
    } else {
        (c1, l1)
    }
}

/// Outcome of a DTW evaluation that may stop early.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bounded {
    Exact(DtwResult),
    /// Stopped once the normalized cost provably exceeded the cap; the value
    /// is a lower bound on the normalized cost.
    Abandoned(f64),
}

impl Bounded {
    /// Normalized cost, or its lower bound when abandoned.
    pub fn value(&self) -> f64 {
        match self {
            Bounded::Exact(r) => r.normalized(),
            Bounded::Abandoned(lb) => *lb,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Bounded::Exact(_))
    }
}

/// DTW between two scalar sequences with squared pointwise cost.
pub fn dtw(a: &[f64], b: &[f64], band: Option<usize>) -> Result<DtwResult, MatchError> {
    match dtw_bounded(a, b, band, f64::INFINITY)? {
        Bounded::Exact(r) => Ok(r),
        Bounded::Abandoned(_) => unreachable!("an infinite cap never abandons"),
    }
}

#[inline(always)]
fn min2(a: f64, b: f64) -> f64 {
    if a < b {
        a
    } else {
        b
    }
}

/// `floor[i]` bounds from below what rows `i..` add to any warping path:
/// each row is visited at least once, at no less than its closest `b` value.
/// Slightly shrunk so rounding never lifts it above a true cost. All zeros
/// when nothing can be abandoned anyway.
fn rest_floor(a: &[f64], b: &[f64], limit: f64) -> Vec<f64> {
    let mut floor = vec![0.0; a.len() + 1];
    if !limit.is_finite() {
        return floor;
    }
    let mut sorted = b.to_vec();
    sorted.sort_by(f64::total_cmp);
    for i in (0..a.len()).rev() {
        let k = sorted.partition_point(|&v| v < a[i]);
        let near = [k.checked_sub(1), (k < sorted.len()).then_some(k)]
            .into_iter()
            .flatten()
            .map(|j| (a[i] - sorted[j]).powi(2))
            .fold(f64::INFINITY, min2);
        floor[i] = floor[i + 1] + near;
    }
    floor.iter_mut().for_each(|f| *f *= 1.0 - 1e-12);
    floor
}

/// Minimum over several independent lanes, which is exact for any order.
fn slice_min(xs: &[f64]) -> f64 {
    let mut lanes = [f64::INFINITY; 8];
    let chunks = xs.chunks_exact(8);
    let tail = chunks.remainder();
    for ch in chunks {
        for (l, &x) in lanes.iter_mut().zip(ch) {
            *l = min2(*l, x);
        }
    }
    tail.iter().chain(&lanes).fold(f64::INFINITY, |acc, &x| min2(acc, x))
}

const BLOCK: usize = 4;
const PAD: usize = BLOCK - 1;

/// Cumulative cost matrix, or the first lower bound on the full cost (a row
/// minimum plus the floor of the rows below it) above `limit`.
///
/// Row `i` of the matrix holds the costs of `a[i - 1]`; column `pad + j` those
/// of `b[j - 1]`, so row 0 and column `pad` are sentinels around the origin.
///
/// Rows are filled `BLOCK` at a time in skewed order (row `r` of a block at
/// column `s - r` on step `s`) so the cells of one step are independent.
/// Working rows carry `BLOCK - 1` extra columns on both sides; the leading
/// ones see an infinite `b` and stay infinite, the trailing ones are never read.
fn fill_costs(a: &[f64], b: &[f64], limit: f64) -> Result<Vec<f64>, f64> {
    let (n, m) = (a.len(), b.len());
    let floor = rest_floor(a, b, limit);
    if floor[0] > limit {
        return Err(floor[0]);
    }
    let (pad, wide) = (PAD, m + 1 + 2 * PAD);
    let bp: Vec<f64> = (0..wide)
        .map(|p| match p.checked_sub(pad) {
            Some(j) if (1..=m).contains(&j) => b[j - 1],
            Some(j) if j > m => 0.0,
            _ => f64::INFINITY,
        })
        .collect();
    let blocks = n.div_ceil(BLOCK);
    let mut work = vec![f64::INFINITY; (blocks * BLOCK + 1) * wide];
    work[pad] = 0.0;
    for blk in 0..blocks {
        let i0 = blk * BLOCK;
        let ai: [f64; BLOCK] = std::array::from_fn(|r| a.get(i0 + r).copied().unwrap_or(0.0));
        let rows = &mut work[i0 * wide..(i0 + BLOCK + 1) * wide];
        let (r0, rest) = rows.split_at_mut(wide);
        let (r1, rest) = rest.split_at_mut(wide);
        let (r2, rest) = rest.split_at_mut(wide);
        let (r3, r4) = rest.split_at_mut(wide);
        #[inline(always)]
        fn cell(up: &[f64], cur: &mut [f64], bp: &[f64], p: usize, ai: f64) {
            let d = ai - bp[p];
            cur[p] = min2(min2(up[p - 1], up[p]), cur[p - 1]) + d * d;
        }
        for s in 0..m + pad {
            let p = s + BLOCK;
            cell(r0, r1, &bp, p, ai[0]);
            cell(r1, r2, &bp, p - 1, ai[1]);
            cell(r2, r3, &bp, p - 2, ai[2]);
            cell(r3, r4, &bp, p - 3, ai[3]);
        }
        for (r, row) in [&*r1, &*r2, &*r3, &*r4].into_iter().enumerate().take(n - i0) {
            let bound = slice_min(&row[pad + 1..=pad + m]) + floor[i0 + r + 1];
            if bound > limit {
                return Err(bound);
            }
        }
    }
    Ok(work)
}

/// Unbanded kernel for [`dtw_bounded`].
///
/// Cumulative costs do not depend on the length tie-break, so they are
/// filled first. Lengths are then needed only on cells that lie on some minimum-cost path:
/// a cell's length comes from its predecessors whose cost equals their
/// minimum, and those cells are collected by walking back from the corner.
fn dtw_unbanded(a: &[f64], b: &[f64], limit: f64) -> Bounded {
    let (n, m) = (a.len(), b.len());
    let max_len = (n + m - 1) as f64;
    let w = m + 1 + 2 * PAD;
    let c = match fill_costs(a, b, limit) {
        Ok(c) => c,
        Err(lb) => return Bounded::Abandoned(lb / max_len),
    };
    let preds = |x: usize| [x - w - 1, x - w, x - 1];
    let tight = |x: usize| {
        let p = preds(x);
        let best = min2(min2(c[p[0]], c[p[1]]), c[p[2]]);
        p.map(|q| c[q] == best)
    };
    let interior = |x: usize| x >= w && x % w > PAD;
    let end = n * w + PAD + m;
    let mut seen = vec![false; c.len()];
    let mut stack = vec![end];
    let mut cells = Vec::new();
    seen[end] = true;
    while let Some(x) = stack.pop() {
        cells.push(x);
        for (q, t) in preds(x).into_iter().zip(tight(x)) {
            if t && interior(q) && !seen[q] {
                seen[q] = true;
                stack.push(q);
            }
        }
    }
    cells.sort_unstable();
    let mut len = vec![0u32; cells.len()];
    for (k, &x) in cells.iter().enumerate() {
        let mut best = u32::MAX;
        for (q, t) in preds(x).into_iter().zip(tight(x)) {
            if t {
                // Sentinel cells carry length zero.
                let l = if interior(q) { len[cells.binary_search(&q).expect("tight predecessor visited")] } else { 0 };
                best = best.min(l);
            }
        }
        len[k] = best + 1;
    }
    Bounded::Exact(DtwResult { cost: c[end], path_len: len[cells.len() - 1] as usize })
}

/// DTW that gives up as soon as the normalized cost must exceed `cap`.
///
/// Every warping path crosses every row, so the smallest cumulative cost in
/// a row plus the cheapest possible visit to each later row bounds the total
/// cost from below. No path is longer than `n + m - 1`, so that bound over
/// this length bounds the normalized cost.
pub fn dtw_bounded(a: &[f64], b: &[f64], band: Option<usize>, cap: f64) -> Result<Bounded, MatchError> {
    if a.is_empty() || b.is_empty() {
        return Err(MatchError::EmptyInput);
    }
    let (n, m) = (a.len(), b.len());
    let max_len = (n + m - 1) as f64;
    let limit = cap * max_len;
    if band.is_none() {
        return Ok(dtw_unbanded(a, b, limit));
    }
    let floor = rest_floor(a, b, limit);
    if floor[0] > limit {
        return Ok(Bounded::Abandoned(floor[0] / max_len));
    }
    // Column 0 is a sentinel; the previous row starts as the virtual origin.
    let mut prev_c = vec![f64::INFINITY; m + 1];
    let mut prev_l = vec![0u32; m + 1];
    let mut cur_c = vec![f64::INFINITY; m + 1];
    let mut cur_l = vec![0u32; m + 1];
    prev_c[0] = 0.0;
    for (i, &ai) in a.iter().enumerate() {
        let (lo, hi) = band_range(i, n, m, band);
        if band.is_some() {
            cur_c.iter_mut().for_each(|c| *c = f64::INFINITY);
        }
        cur_c[0] = f64::INFINITY;
        let mut row_min = f64::INFINITY;
        for j in lo + 1..=hi + 1 {
            let d = ai - b[j - 1];
            let (c, l) = pick(prev_c[j - 1], prev_l[j - 1], prev_c[j], prev_l[j]);
            let (c, l) = pick(c, l, cur_c[j - 1], cur_l[j - 1]);
            let c = c + d * d;
            cur_c[j] = c;
            cur_l[j] = l + 1;
            row_min = min2(row_min, c);
        }
        let bound = row_min + floor[i + 1];
        if bound > limit {
            return Ok(Bounded::Abandoned(bound / max_len));
        }
        std::mem::swap(&mut prev_c, &mut cur_c);
        std::mem::swap(&mut prev_l, &mut cur_l);
    }
    Ok(Bounded::Exact(DtwResult { cost: prev_c[m], path_len: prev_l[m] as usize }))
}

/// DTW with the full cost matrix retained so the optimal path can be traced back.
pub fn dtw_with_path(a: &[f64], b: &[f64], band: Option<usize>) -> Result<(DtwResult, WarpingPath), MatchError> {
    if a.is_empty() || b.is_empty() {
        return Err(MatchError::EmptyInput);
    }
    let (n, m) = (a.len(), b.len());
    let mut c = vec![f64::INFINITY; n * m];
    let mut l = vec![0u32; n * m];
    for i in 0..n {
        let (lo, hi) = band_range(i, n, m, band);
        for j in lo..=hi {
            let d = a[i] - b[j];
            let cell = d * d;
            if i == 0 && j == 0 {
                c[0] = cell;
                l[0] = 1;
                continue;
            }
            let (mut bc, mut bl) = (f64::INFINITY, 0u32);
            if i > 0 && j > 0 {
                bc = c[(i - 1) * m + j - 1];
                bl = l[(i - 1) * m + j - 1];
            }
            if i > 0 && better(c[(i - 1) * m + j], l[(i - 1) * m + j], bc, bl) {
                bc = c[(i - 1) * m + j];
                bl = l[(i - 1) * m + j];
            }
            if j > 0 && better(c[i * m + j - 1], l[i * m + j - 1], bc, bl) {
                bc = c[i * m + j - 1];
                bl = l[i * m + j - 1];
            }
            c[i * m + j] = bc + cell;
            l[i * m + j] = bl + 1;
        }
    }
    let result = DtwResult { cost: c[n * m - 1], path_len: l[n * m - 1] as usize };
    let mut pairs = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        let mut best: Option<(usize, usize)> = None;
        let mut consider = |pi: usize, pj: usize| {
            let (bc, bl) = match best {
                Some((bi, bj)) => (c[bi * m + bj], l[bi * m + bj]),
                None => (f64::INFINITY, u32::MAX),
            };
            if better(c[pi * m + pj], l[pi * m + pj], bc, bl) {
                best = Some((pi, pj));
            }
        };
        if i > 0 && j > 0 {
            consider(i - 1, j - 1);
        }
        if i > 0 {
            consider(i - 1, j);
        }
        if j > 0 {
            consider(i, j - 1);
        }
        let (pi, pj) = best.expect("reachable predecessor");
        i = pi;
        j = pj;
        pairs.push((i, j));
    }
    pairs.reverse();
    Ok((result, WarpingPath { pairs }))
}

/// Unnormalized DTW cost between two variance series.
pub fn dtw_distance(a: &VarianceSeries, b: &VarianceSeries, band: Option<usize>) -> Result<f64, MatchError> {
    Ok(dtw(&a.v, &b.v, band)?.cost)
}

/// Mean squared pointwise difference; the series must have equal length.
pub fn mse_distance(a: &VarianceSeries, b: &VarianceSeries) -> Result<f64, MatchError> {
    mse(&a.v, &b.v)
}

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64, MatchError> {
    if a.len() != b.len() {
        return Err(MatchError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MatchError::EmptyInput);
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// Linear resampling to `len` points spanning the same index range.
pub fn resample_linear(values: &[f64], len: usize) -> Vec<f64> {
    if values.is_empty() || len == 0 {
        return Vec::new();
    }
    if len == 1 || values.len() == 1 {
        return vec![values[0]; len];
    }
    let scale = (values.len() - 1) as f64 / (len - 1) as f64;
    (0..len)
        .map(|k| {
            let x = k as f64 * scale;
            let i = (x.floor() as usize).min(values.len() - 2);
            let w = x - i as f64;
            values[i] * (1.0 - w) + values[i + 1] * w
        })
        .collect()
}

/// Matching features of one running event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventFeatures {
    pub mag: VarianceSeries,
    pub baro: Option<VarianceSeries>,
}

impl EventFeatures {
    pub fn from_event(event: &RunningEvent) -> Result<Self, MatchError> {
        if event.m_trace.len() < 2 {
            return Err(MatchError::InsufficientData(format!(
                "running event [{:.1}, {:.1}] has {} magnetometer samples",
                event.bt,
                event.et,
                event.m_trace.len()
            )));
        }
        let times: Vec<f64> = event.m_trace.iter().map(|s| s.t).collect();
        let values: Vec<f64> = event.m_trace.iter().map(|s| s.m).collect();
        let mag = scalar_variance(&times, &clean_series(&values)?, Channel::MagMagnitude)?;
        let baro = if event.b_trace.len() >= 2 {
            let times: Vec<f64> = event.b_trace.iter().map(|s| s.t).collect();
            let values: Vec<f64> = event.b_trace.iter().map(|s| s.baro).collect();
            Some(scalar_variance(&times, &clean_series(&values)?, Channel::Pressure)?)
        } else {
            None
        };
        Ok(Self { mag, baro })
    }

    /// Same features without the pressure channel.
    pub fn mag_only(&self) -> Self {
        Self { mag: self.mag.clone(), baro: None }
    }
}

/// Per-modality normalized costs of a feature pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModalityCosts {
    pub mag: f64,
    pub baro: Option<f64>,
}

pub fn modality_costs(a: &EventFeatures, b: &EventFeatures, cfg: &MatchConfig) -> Result<ModalityCosts, MatchError> {
    let mag = dtw(&a.mag.v, &b.mag.v, cfg.band_radius)?.normalized();
    let baro = match (&a.baro, &b.baro) {
        (Some(x), Some(y)) if cfg.baro_weight > 0.0 => Some(dtw(&x.v, &y.v, cfg.band_radius)?.normalized()),
        _ => None,
    };
    Ok(ModalityCosts { mag, baro })
}

/// Fuses modality costs into one distance. A missing pressure term hands its
/// weight to the magnetometer.
pub fn fuse(costs: ModalityCosts, cfg: &MatchConfig) -> f64 {
    match costs.baro {
        Some(b) if cfg.mag_weight + cfg.baro_weight > 0.0 => {
            (cfg.mag_weight * costs.mag + cfg.baro_weight * b * cfg.baro_scale) / (cfg.mag_weight + cfg.baro_weight)
        }
        _ => costs.mag,
    }
}

pub fn feature_distance(a: &EventFeatures, b: &EventFeatures, cfg: &MatchConfig) -> Result<f64, MatchError> {
    Ok(fuse(modality_costs(a, b, cfg)?, cfg))
}

/// A fused distance, or a lower bound on it when evaluation stopped early.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cost {
    Exact(f64),
    AtLeast(f64),
}

impl Cost {
    pub fn value(&self) -> f64 {
        match self {
            Cost::Exact(v) | Cost::AtLeast(v) => *v,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Cost::Exact(_))
    }
}

/// [`feature_distance`] that may stop early once the fused cost must exceed `cap`.
/// Exact results are bit-identical to the unbounded call.
pub fn feature_distance_bounded(a: &EventFeatures, b: &EventFeatures, cfg: &MatchConfig, cap: f64) -> Result<Cost, MatchError> {
    let baro = match (&a.baro, &b.baro) {
        (Some(x), Some(y)) if cfg.baro_weight > 0.0 => Some((x, y)),
        _ => None,
    };
    let Some((xa, xb)) = baro else {
        return Ok(match dtw_bounded(&a.mag.v, &b.mag.v, cfg.band_radius, cap)? {
            Bounded::Exact(r) => Cost::Exact(r.normalized()),
            Bounded::Abandoned(lb) => Cost::AtLeast(lb),
        });
    };
    let total = cfg.mag_weight + cfg.baro_weight;
    let baro_weight = cfg.baro_weight * cfg.baro_scale;
    // The shorter pressure series goes first; it is cheaper and usually
    // settles an abandonment on its own.
    let baro_cap = if baro_weight > 0.0 { cap * total / baro_weight } else { f64::INFINITY };
    let baro = match dtw_bounded(&xa.v, &xb.v, cfg.band_radius, baro_cap)? {
        Bounded::Exact(r) => r.normalized(),
        Bounded::Abandoned(lb) => return Ok(Cost::AtLeast(baro_weight * lb / total)),
    };
    let mag_cap = if cfg.mag_weight > 0.0 { (cap * total - baro_weight * baro) / cfg.mag_weight } else { f64::INFINITY };
    Ok(match dtw_bounded(&a.mag.v, &b.mag.v, cfg.band_radius, mag_cap.max(0.0))? {
        Bounded::Exact(r) => Cost::Exact(fuse(ModalityCosts { mag: r.normalized(), baro: Some(baro) }, cfg)),
        Bounded::Abandoned(lb) => Cost::AtLeast((cfg.mag_weight * lb + baro_weight * baro) / total),
    })
}

/// Distance between two running events (normalized, fused DTW).
pub fn event_distance(r1: &RunningEvent, r2: &RunningEvent, cfg: &MatchConfig) -> Result<f64, MatchError> {
    let a = EventFeatures::from_event(r1)?;
    let b = EventFeatures::from_event(r2)?;
    feature_distance(&a, &b, cfg)
}

/// All pairwise distances between two feature lists, computed in parallel.
pub fn distance_matrix(a: &[EventFeatures], b: &[EventFeatures], cfg: &MatchConfig) -> Vec<Vec<f64>> {
    let jobs: Vec<(usize, usize)> = (0..a.len()).flat_map(|i| (0..b.len()).map(move |j| (i, j))).collect();
    let flat = par::map(&jobs, |&(i, j)| feature_distance(&a[i], &b[j], cfg).unwrap_or(f64::INFINITY));
    flat.chunks(b.len().max(1)).map(|c| c.to_vec()).take(a.len()).collect()
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    xs.retain(|x| x.is_finite());
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    Some(if n % 2 == 1 { xs[n / 2] } else { 0.5 * (xs[n / 2 - 1] + xs[n / 2]) })
}

/// Ratio of the median magnetometer cost to the median pressure cost over a
/// deterministic sample of pairs drawn from `features`. `None` when fewer
/// than two events carry pressure or the pressure median is zero.
pub fn calibrate_baro_scale(features: &[EventFeatures], max_pairs: usize, cfg: &MatchConfig) -> Option<f64> {
    let with_baro: Vec<&EventFeatures> = features.iter().filter(|f| f.baro.is_some()).collect();
    let n = with_baro.len();
    if n < 2 {
        return None;
    }
    let mut pairs = Vec::new();
    'outer: for gap in 1..n {
        for i in 0..n - gap {
            if pairs.len() >= max_pairs {
                break 'outer;
            }
            pairs.push((i, i + gap));
        }
    }
    let unscaled = MatchConfig { baro_weight: 1.0, ..cfg.clone() };
    let costs = par::map(&pairs, |&(i, j)| modality_costs(with_baro[i], with_baro[j], &unscaled).ok());
    let mags = median(costs.iter().flatten().map(|c| c.mag).collect())?;
    let baros = median(costs.iter().flatten().filter_map(|c| c.baro).collect())?;
    if baros > 0.0 {
        Some(mags / baros)
    } else {
        None
    }
}
