//! Noise cleaning and first-difference ("variance") features.
//!
//! Differencing consecutive samples removes a constant offset (uncalibrated
//! magnetometer drift, gravity on the accelerometer) and turns pressure steps
//! into impulses. Every transform here is a pure function of its input.

use serde::{Deserialize, Serialize};

use crate::error::SignalError;
use crate::model::AccelSample;

/// Half-width of the median window used by the spike rule (window of 5).
const SPIKE_HALF_WINDOW: usize = 2;
/// Deviation, in MADs, above which a point counts as a spike.
const SPIKE_MAD_FACTOR: f64 = 6.0;
/// Moving-average length applied after spike removal.
pub const SMOOTH_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    AccelCombined,
    Pressure,
    MagMagnitude,
    Other,
}

/// First-difference series; `t[i]` is the midpoint of the sample pair that
/// produced `v[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceSeries {
    pub t: Vec<f64>,
    pub v: Vec<f64>,
    pub source: Channel,
}

impl VarianceSeries {
    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// Builds a series from values alone, with uniform spacing `period`.
    pub fn uniform(values: Vec<f64>, period: f64, source: Channel) -> Self {
        let t = (0..values.len()).map(|i| (i as f64 + 0.5) * period).collect();
        Self { t, v: values, source }
    }

    /// Mean spacing between consecutive timestamps, 0 for fewer than 2 points.
    pub fn mean_period(&self) -> f64 {
        match (self.t.first(), self.t.last()) {
            (Some(a), Some(b)) if self.t.len() > 1 => (b - a) / (self.t.len() - 1) as f64,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Acceleration variation: per-axis differences, their combined norm, and
/// the sign of the dominant axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccelVariance {
    pub combined: VarianceSeries,
    pub axes: [Vec<f64>; 3],
    pub dominant_axis: Axis,
    pub direction: Vec<i8>,
}

fn median(buf: &mut [f64]) -> f64 {
    buf.sort_by(|a, b| a.total_cmp(b));
    let n = buf.len();
    if n % 2 == 1 {
        buf[n / 2]
    } else {
        0.5 * (buf[n / 2 - 1] + buf[n / 2])
    }
}

fn spike_mask(values: &[f64]) -> Vec<bool> {
    let n = values.len();
    let mut mask = vec![false; n];
    let mut win = Vec::with_capacity(2 * SPIKE_HALF_WINDOW + 1);
    let mut dev = Vec::with_capacity(2 * SPIKE_HALF_WINDOW + 1);
    for i in 0..n {
        let lo = i.saturating_sub(SPIKE_HALF_WINDOW);
        let hi = (i + SPIKE_HALF_WINDOW).min(n - 1);
        if hi - lo < 2 {
            continue;
        }
        win.clear();
        win.extend_from_slice(&values[lo..=hi]);
        let med = median(&mut win);
        dev.clear();
        dev.extend(values[lo..=hi].iter().map(|x| (x - med).abs()));
        let mad = median(&mut dev);
        let d = (values[i] - med).abs();
        // A zero MAD means most of the window agrees exactly; anything that
        // departs from that consensus is an isolated glitch.
        let floor = 1e-9 * (1.0 + med.abs());
        mask[i] = if mad > 0.0 { d > SPIKE_MAD_FACTOR * mad } else { d > floor };
    }
    mask
}

fn replace_spikes(values: &[f64], mask: &[bool]) -> Vec<f64> {
    let n = values.len();
    let mut out = values.to_vec();
    let mut prev_good: Option<usize> = None;
    let mut i = 0;
    while i < n {
        if !mask[i] {
            prev_good = Some(i);
            i += 1;
            continue;
        }
        let run_start = i;
        while i < n && mask[i] {
            i += 1;
        }
        let next_good = if i < n { Some(i) } else { None };
        for (k, slot) in out.iter_mut().enumerate().take(i).skip(run_start) {
            *slot = match (prev_good, next_good) {
                (Some(a), Some(b)) => {
                    let w = (k - a) as f64 / (b - a) as f64;
                    values[a] + w * (values[b] - values[a])
                }
                (Some(a), None) => values[a],
                (None, Some(b)) => values[b],
                (None, None) => values[k],
            };
        }
    }
    out
}

/// Centered moving average. Interior points average `window` samples; near
/// the ends the window shrinks symmetrically around the point.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let n = values.len();
    if window <= 1 || n == 0 {
        return values.to_vec();
    }
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in values {
        acc += v;
        prefix.push(acc);
    }
    let before = window / 2;
    let after = window - 1 - before;
    (0..n)
        .map(|i| {
            let (lo, hi) = if i >= before && i + after < n {
                (i - before, i + after)
            } else {
                let r = i.min(n - 1 - i).min(before);
                (i - r, i + r)
            };
            (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
        })
        .collect()
}

/// Removes isolated spikes and smooths with a 10-sample centered window.
pub fn clean_series(values: &[f64]) -> Result<Vec<f64>, SignalError> {
    if values.is_empty() {
        return Err(SignalError::EmptyInput);
    }
    let mask = spike_mask(values);
    let despiked = replace_spikes(values, &mask);
    Ok(moving_average(&despiked, SMOOTH_WINDOW))
}

/// Consecutive differences of a timestamped scalar stream.
pub fn scalar_variance(times: &[f64], values: &[f64], source: Channel) -> Result<VarianceSeries, SignalError> {
    let n = times.len().min(values.len());
    if n < 2 {
        return Err(SignalError::InsufficientData { needed: 2, got: n });
    }
    let t = times[..n].windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let v = values[..n].windows(2).map(|w| w[1] - w[0]).collect();
    Ok(VarianceSeries { t, v, source })
}

/// Per-axis differences, their Euclidean combination, and the dominant-axis
/// direction of an acceleration stream.
pub fn accel_variance(accel: &[AccelSample]) -> Result<AccelVariance, SignalError> {
    if accel.len() < 2 {
        return Err(SignalError::InsufficientData { needed: 2, got: accel.len() });
    }
    let m = accel.len() - 1;
    let mut axes = [Vec::with_capacity(m), Vec::with_capacity(m), Vec::with_capacity(m)];
    let mut t = Vec::with_capacity(m);
    let mut combined = Vec::with_capacity(m);
    for w in accel.windows(2) {
        let d = [w[1].x - w[0].x, w[1].y - w[0].y, w[1].z - w[0].z];
        for k in 0..3 {
            axes[k].push(d[k]);
        }
        t.push(0.5 * (w[0].t + w[1].t));
        combined.push((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt());
    }
    let sums: Vec<f64> = axes.iter().map(|a| a.iter().map(|x| x.abs()).sum()).collect();
    let mut dominant = 0;
    for k in 1..3 {
        if sums[k] > sums[dominant] {
            dominant = k;
        }
    }
    let direction = axes[dominant].iter().map(|&d| if d < 0.0 { -1 } else { 1 }).collect();
    let dominant_axis = [Axis::X, Axis::Y, Axis::Z][dominant];
    Ok(AccelVariance {
        combined: VarianceSeries { t, v: combined, source: Channel::AccelCombined },
        axes,
        dominant_axis,
        direction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn accel(xs: &[f64], y: f64, z: f64) -> Vec<AccelSample> {
        xs.iter().enumerate().map(|(i, &x)| AccelSample::new(i as f64 * 0.2, x, y, z)).collect()
    }

    #[test]
    fn constant_is_a_fixed_point() {
        assert_eq!(clean_series(&[5.0; 5]).unwrap(), vec![5.0; 5]);
    }

    #[test]
    fn spike_is_removed_before_smoothing() {
        let out = clean_series(&[5.0, 5.0, 500.0, 5.0, 5.0]).unwrap();
        assert_eq!(out.len(), 5);
        for v in out {
            assert!((v - 5.0).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn spike_in_noisy_data() {
        // alternating noise keeps MAD positive; the 40 is far beyond 6 MADs
        let mut xs: Vec<f64> = (0..30).map(|i| if i % 2 == 0 { 10.0 } else { 10.5 }).collect();
        xs[15] = 40.0;
        let mask = spike_mask(&xs);
        assert!(mask[15]);
        assert_eq!(mask.iter().filter(|m| **m).count(), 1);
    }

    #[test]
    fn step_is_not_a_spike() {
        let xs = [1000.0, 1000.0, 1000.0, 999.6, 999.6, 999.6];
        assert!(spike_mask(&xs).iter().all(|m| !m));
    }

    #[test]
    fn clean_rejects_empty() {
        assert_eq!(clean_series(&[]), Err(SignalError::EmptyInput));
    }

    #[test]
    fn moving_average_edges_shrink() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let out = moving_average(&xs, 10);
        // linear input: symmetric windows reproduce the point itself
        assert_eq!(out[0], 0.0);
        assert_eq!(out[19], 19.0);
        // interior window [i-5, i+4] has mean i - 0.5
        assert_eq!(out[10], 9.5);
    }

    #[test]
    fn scalar_variance_examples() {
        let s = scalar_variance(&[0.0, 1.0, 2.0], &[1000.0, 1000.4, 1000.4], Channel::Pressure).unwrap();
        assert!((s.v[0] - 0.4).abs() < 1e-9);
        assert_eq!(s.v[1], 0.0);
        assert_eq!(s.t, vec![0.5, 1.5]);
        let c = scalar_variance(&[0.0, 1.0, 2.0], &[3.0, 3.0, 3.0], Channel::Other).unwrap();
        assert_eq!(c.v, vec![0.0, 0.0]);
        assert!(scalar_variance(&[0.0], &[1.0], Channel::Other).is_err());
    }

    #[test]
    fn accel_variance_constant_gravity() {
        let a = accel(&[0.0; 6], 0.0, 9.8);
        let var = accel_variance(&a).unwrap();
        assert!(var.combined.v.iter().all(|v| *v == 0.0));
        assert!(var.direction.iter().all(|d| *d == 1));
    }

    #[test]
    fn accel_variance_hand_example() {
        let a = accel(&[0.0, 2.0, 2.0], 1.0, 9.8);
        let var = accel_variance(&a).unwrap();
        assert_eq!(var.combined.v, vec![2.0, 0.0]);
        assert_eq!(var.dominant_axis, Axis::X);
        assert_eq!(var.direction, vec![1, 1]);
        assert_eq!(var.combined.t, vec![0.1, 0.30000000000000004]);
    }

    #[test]
    fn accel_variance_needs_two_samples() {
        assert!(accel_variance(&accel(&[1.0], 0.0, 0.0)).is_err());
    }

    proptest! {
        #[test]
        fn drift_cancels_exactly(vals in prop::collection::vec(-1.0e3..1.0e3f64, 2..50), c in -1.0e3..1.0e3f64) {
            // integer-valued inputs keep the subtraction exact
            let vals: Vec<f64> = vals.iter().map(|v| v.round()).collect();
            let c = c.round();
            let t: Vec<f64> = (0..vals.len()).map(|i| i as f64).collect();
            let shifted: Vec<f64> = vals.iter().map(|v| v + c).collect();
            let a = scalar_variance(&t, &vals, Channel::Other).unwrap();
            let b = scalar_variance(&t, &shifted, Channel::Other).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn combined_dominates_each_axis(xs in prop::collection::vec((-20.0..20.0f64, -20.0..20.0f64, -20.0..20.0f64), 2..40)) {
            let a: Vec<AccelSample> = xs.iter().enumerate().map(|(i, p)| AccelSample::new(i as f64, p.0, p.1, p.2)).collect();
            let var = accel_variance(&a).unwrap();
            for i in 0..var.combined.len() {
                for axis in &var.axes {
                    prop_assert!(var.combined.v[i] + 1e-12 >= axis[i].abs());
                }
            }
        }

        #[test]
        fn clean_stays_within_input_range(xs in prop::collection::vec(-100.0..100.0f64, 1..80)) {
            let out = clean_series(&xs).unwrap();
            prop_assert_eq!(out.len(), xs.len());
            let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for v in out {
                prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
            }
        }
    }
}
