//! Train stop detection.
//!
//! A stop shows up in the combined acceleration variation as a crest (the
//! jolt when the train halts), a quiet stretch while it stands, and another
//! crest when it pulls away. Mid-tunnel slowdowns produce the same shape, so
//! each candidate is checked against the cabin pressure: opening the doors
//! releases the cabin overpressure (a drop), closing them restores it (a rise).

use serde::{Deserialize, Serialize};

use crate::error::DetectError;
use crate::model::{BaroSample, RunningEvent, SensorTrace, StopEvent, StopEvidence, TraceEvent, UserTrace};
use crate::signal::{accel_variance, moving_average, AccelVariance};

/// A crest region ends once the variation stays below the crest threshold this long.
const CREST_GAP_SECONDS: f64 = 2.0;
/// Tolerated run of non-quiet samples inside an established stable stretch.
const STABLE_GRACE_SECONDS: f64 = 2.0;
/// Pressure steps are measured over at most this span.
const BARO_STEP_WINDOW_SECONDS: f64 = 5.0;
/// Pressure is averaged over about this span before looking for steps.
const BARO_SMOOTH_SECONDS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Variation above this (m/s²) is a crest.
    pub accel_crest_threshold: f64,
    /// Variation below this (m/s²) is quiet.
    pub accel_stable_threshold: f64,
    pub stable_min_seconds: f64,
    /// Minimum pressure step (hPa) for a door event.
    pub baro_step_threshold: f64,
    /// Sample-to-sample pressure change (hPa) tolerated while the doors are open.
    pub baro_stable_threshold: f64,
    pub baro_stable_min_seconds: f64,
    /// Slack around a candidate stop when searching for the door signature.
    pub confirm_margin_seconds: f64,
    /// Running events shorter than this are folded into the surrounding stop.
    pub min_running_seconds: f64,
    /// Check candidates against the barometer when the trace has one.
    pub use_barometer: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            accel_crest_threshold: 0.4,
            accel_stable_threshold: 0.1,
            stable_min_seconds: 10.0,
            baro_step_threshold: 0.3,
            baro_stable_threshold: 0.15,
            baro_stable_min_seconds: 10.0,
            confirm_margin_seconds: 15.0,
            min_running_seconds: 30.0,
            use_barometer: true,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("accel_crest_threshold", self.accel_crest_threshold),
            ("accel_stable_threshold", self.accel_stable_threshold),
            ("stable_min_seconds", self.stable_min_seconds),
            ("baro_step_threshold", self.baro_step_threshold),
            ("baro_stable_threshold", self.baro_stable_threshold),
            ("baro_stable_min_seconds", self.baro_stable_min_seconds),
            ("confirm_margin_seconds", self.confirm_margin_seconds),
            ("min_running_seconds", self.min_running_seconds),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be > 0, got {v}"));
            }
        }
        if self.accel_stable_threshold >= self.accel_crest_threshold {
            return Err("accel_stable_threshold must be below accel_crest_threshold".into());
        }
        if self.baro_stable_threshold >= self.baro_step_threshold {
            return Err("baro_stable_threshold must be below baro_step_threshold".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum AccelState {
    Idle,
    Crest { last_above: f64 },
    AfterCrest { crest_end: f64 },
    Stable { crest_end: f64, last_quiet: f64 },
}

/// Incremental crest → stable → crest recogniser over the combined
/// acceleration variation. Feed samples in time order with [`push`].
///
/// [`push`]: AccelStopMachine::push
#[derive(Debug, Clone)]
pub struct AccelStopMachine {
    crest: f64,
    stable: f64,
    stable_min: f64,
    state: AccelState,
    quiet_since: Option<f64>,
}

impl AccelStopMachine {
    pub fn new(cfg: &DetectorConfig) -> Self {
        Self {
            crest: cfg.accel_crest_threshold,
            stable: cfg.accel_stable_threshold,
            stable_min: cfg.stable_min_seconds,
            state: AccelState::Idle,
            quiet_since: None,
        }
    }

    /// Consumes one variation sample; returns a stop when the second crest arrives.
    pub fn push(&mut self, t: f64, v: f64) -> Option<StopEvent> {
        let is_crest = v > self.crest;
        let is_quiet = v < self.stable;
        if is_quiet {
            self.quiet_since.get_or_insert(t);
        } else {
            self.quiet_since = None;
        }

        if let AccelState::Crest { last_above } = self.state {
            if is_crest {
                self.state = AccelState::Crest { last_above: t };
                return None;
            }
            if t - last_above < CREST_GAP_SECONDS {
                return None;
            }
            self.state = AccelState::AfterCrest { crest_end: last_above };
        }

        match self.state {
            AccelState::Idle => {
                if is_crest {
                    self.state = AccelState::Crest { last_above: t };
                }
                None
            }
            AccelState::Crest { .. } => unreachable!("crest handled above"),
            AccelState::AfterCrest { crest_end } => {
                if is_crest {
                    self.state = AccelState::Crest { last_above: t };
                } else if let Some(since) = self.quiet_since {
                    if t - since >= self.stable_min {
                        self.state = AccelState::Stable { crest_end, last_quiet: t };
                    }
                }
                None
            }
            AccelState::Stable { crest_end, last_quiet } => {
                if is_crest {
                    self.state = AccelState::Crest { last_above: t };
                    return Some(StopEvent::new(crest_end, t));
                }
                if is_quiet {
                    self.state = AccelState::Stable { crest_end, last_quiet: t };
                } else if t - last_quiet > STABLE_GRACE_SECONDS {
                    self.state = AccelState::Idle;
                }
                None
            }
        }
    }
}

/// Runs the acceleration state machine over a whole variation series.
pub fn detect_accel_stops(var: &AccelVariance, cfg: &DetectorConfig) -> Vec<StopEvent> {
    let mut machine = AccelStopMachine::new(cfg);
    var.combined
        .t
        .iter()
        .zip(&var.combined.v)
        .filter_map(|(&t, &v)| machine.push(t, v))
        .collect()
}

/// Outcome of checking a candidate against the barometer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaroVerdict {
    /// Door-open drop, stable pressure, door-close rise all found.
    Confirmed,
    /// Pressure data present but the door signature is missing.
    Rejected,
    /// No pressure data around the candidate; accept on acceleration alone.
    Unavailable,
}

impl BaroVerdict {
    pub fn accepts(self) -> bool {
        !matches!(self, BaroVerdict::Rejected)
    }
}

fn smoothing_len(times: &[f64]) -> usize {
    if times.len() < 2 {
        return 1;
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    if dt <= 0.0 {
        return 1;
    }
    ((BARO_SMOOTH_SECONDS / dt).round() as usize).max(1)
}

/// Looks for drop → stable → rise in the pressure around a candidate stop.
pub fn confirm_stop_baro(candidate: &StopEvent, baro: &[BaroSample], cfg: &DetectorConfig) -> BaroVerdict {
    let lo = candidate.bt - cfg.confirm_margin_seconds;
    let hi = candidate.et + cfg.confirm_margin_seconds;
    let start = baro.partition_point(|s| s.t < lo);
    let end = baro.partition_point(|s| s.t <= hi);
    let window = &baro[start..end];
    if window.len() < 3 {
        return BaroVerdict::Unavailable;
    }
    let times: Vec<f64> = window.iter().map(|s| s.t).collect();
    let raw: Vec<f64> = window.iter().map(|s| s.baro).collect();
    let p = moving_average(&raw, smoothing_len(&times));

    enum St {
        Idle,
        Dropped { since: Option<f64> },
        Stable,
    }
    let mut st = St::Idle;
    let mut back = 0;
    for i in 1..p.len() {
        while times[i] - times[back] > BARO_STEP_WINDOW_SECONDS {
            back += 1;
        }
        let recent = &p[back..i];
        st = match st {
            St::Idle => {
                let peak = recent.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if peak - p[i] > cfg.baro_step_threshold {
                    St::Dropped { since: None }
                } else {
                    St::Idle
                }
            }
            St::Dropped { since } => {
                if (p[i] - p[i - 1]).abs() < cfg.baro_stable_threshold {
                    let since = since.unwrap_or(times[i - 1]);
                    if times[i] - since >= cfg.baro_stable_min_seconds {
                        St::Stable
                    } else {
                        St::Dropped { since: Some(since) }
                    }
                } else {
                    St::Dropped { since: None }
                }
            }
            St::Stable => {
                let floor = recent.iter().cloned().fold(f64::INFINITY, f64::min);
                if p[i] - floor > cfg.baro_step_threshold {
                    return BaroVerdict::Confirmed;
                }
                St::Stable
            }
        };
    }
    BaroVerdict::Rejected
}

/// Everything the detector decided for one trace, before segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct StopDetection {
    /// Acceleration candidates in time order.
    pub candidates: Vec<StopEvent>,
    /// Barometer verdict per candidate (`Unavailable` when not checked).
    pub verdicts: Vec<BaroVerdict>,
    /// Accepted stops after folding short running gaps.
    pub stops: Vec<StopEvent>,
}

/// Detects stops in a trace: acceleration candidates, barometer filtering,
/// and merging of stops separated by less than `min_running_seconds`.
pub fn detect_stops(trace: &SensorTrace, cfg: &DetectorConfig) -> Result<StopDetection, DetectError> {
    let var = accel_variance(&trace.accel)?;
    let candidates = detect_accel_stops(&var, cfg);
    let check_baro = cfg.use_barometer && trace.has_barometer();
    let verdicts: Vec<BaroVerdict> = candidates
        .iter()
        .map(|c| {
            if check_baro {
                confirm_stop_baro(c, trace.baro_samples(), cfg)
            } else {
                BaroVerdict::Unavailable
            }
        })
        .collect();

    let mut stops: Vec<StopEvent> = Vec::new();
    for (c, v) in candidates.iter().zip(&verdicts) {
        if !v.accepts() {
            continue;
        }
        let mut stop = c.clone();
        stop.evidence = if *v == BaroVerdict::Confirmed { StopEvidence::BaroConfirmed } else { StopEvidence::AccelOnly };
        match stops.last_mut() {
            Some(prev) if stop.bt - prev.et < cfg.min_running_seconds => {
                prev.et = stop.et;
                if stop.evidence == StopEvidence::BaroConfirmed {
                    prev.evidence = StopEvidence::BaroConfirmed;
                }
            }
            _ => stops.push(stop),
        }
    }
    Ok(StopDetection { candidates, verdicts, stops })
}

/// Builds the alternating stop/running sequence from accepted stops.
pub fn build_user_trace(trace: &SensorTrace, stops: &[StopEvent]) -> Result<UserTrace, DetectError> {
    build_user_trace_without(trace, stops, &[])
}

/// [`build_user_trace`] leaving out samples taken during `halts`: intervals
/// where the train stood still between stations, so nothing was learned
/// about the tunnel.
pub fn build_user_trace_without(trace: &SensorTrace, stops: &[StopEvent], halts: &[StopEvent]) -> Result<UserTrace, DetectError> {
    if stops.len() < 2 {
        return Err(DetectError::TooShortTrip { stops: stops.len() });
    }
    let baro = trace.baro_samples();
    let mut events = Vec::with_capacity(2 * stops.len() - 1);
    for (i, stop) in stops.iter().enumerate() {
        if i > 0 {
            let (bt, et) = (stops[i - 1].et, stop.bt);
            let keep = |t: f64| t > bt && t < et && !halts.iter().any(|h| t >= h.bt && t <= h.et);
            let m_trace = trace.mag.iter().filter(|s| keep(s.t)).copied().collect();
            let b_trace = baro.iter().filter(|s| keep(s.t)).copied().collect();
            events.push(TraceEvent::Running(RunningEvent { bt, et, b_trace, m_trace, tunnel: None }));
        }
        events.push(TraceEvent::Stop(stop.clone()));
    }
    Ok(UserTrace { trip_id: trace.trip_id.clone(), events })
}

/// Segments a sensor trace into a user trace. Halts the barometer ruled
/// out as stops are cut from the running events.
pub fn segment_trace(trace: &SensorTrace, cfg: &DetectorConfig) -> Result<UserTrace, DetectError> {
    let detection = detect_stops(trace, cfg)?;
    let halts: Vec<StopEvent> = detection
        .candidates
        .iter()
        .zip(&detection.verdicts)
        .filter(|(_, v)| !v.accepts())
        .map(|(c, _)| c.clone())
        .collect();
    build_user_trace_without(trace, &detection.stops, &halts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{Channel, VarianceSeries};
    use proptest::prelude::*;

    const DT: f64 = 0.2;

    /// Variation series at 5 Hz from (start, end, value) segments over a quiet floor.
    fn series(duration: f64, segments: &[(f64, f64, f64)], floor: f64) -> AccelVariance {
        let n = (duration / DT) as usize;
        let t: Vec<f64> = (0..n).map(|i| i as f64 * DT).collect();
        let v = t
            .iter()
            .map(|&t| segments.iter().find(|s| t >= s.0 && t < s.1).map_or(floor, |s| s.2))
            .collect();
        AccelVariance {
            combined: VarianceSeries { t, v, source: Channel::AccelCombined },
            axes: [vec![], vec![], vec![]],
            dominant_axis: crate::signal::Axis::X,
            direction: vec![],
        }
    }

    #[test]
    fn crest_quiet_crest_gives_one_stop() {
        let var = series(90.0, &[(38.0, 40.0, 0.8), (65.0, 67.0, 0.8)], 0.02);
        let stops = detect_accel_stops(&var, &DetectorConfig::default());
        assert_eq!(stops.len(), 1);
        assert!((stops[0].bt - 40.0).abs() <= DT + 1e-9, "{:?}", stops[0]);
        assert!((stops[0].et - 65.0).abs() <= DT + 1e-9, "{:?}", stops[0]);
    }

    #[test]
    fn all_zero_has_no_stops() {
        let var = series(60.0, &[], 0.0);
        assert!(detect_accel_stops(&var, &DetectorConfig::default()).is_empty());
    }

    #[test]
    fn short_quiet_is_not_a_stop() {
        let var = series(60.0, &[(10.0, 12.0, 0.8), (17.0, 19.0, 0.8)], 0.02);
        assert!(detect_accel_stops(&var, &DetectorConfig::default()).is_empty());
    }

    #[test]
    fn vibration_between_crests_is_not_a_stop() {
        let var = series(90.0, &[(10.0, 12.0, 0.8), (50.0, 52.0, 0.8)], 0.2);
        assert!(detect_accel_stops(&var, &DetectorConfig::default()).is_empty());
    }

    fn baro(duration: f64, f: impl Fn(f64) -> f64) -> Vec<BaroSample> {
        let n = (duration * 3.0) as usize;
        (0..n).map(|i| i as f64 / 3.0).map(|t| BaroSample::new(t, f(t))).collect()
    }

    fn door(step: f64) -> impl Fn(f64) -> f64 {
        move |t| if (42.0..62.0).contains(&t) { 1010.0 - step } else { 1010.0 }
    }

    #[test]
    fn door_signature_confirms() {
        let cfg = DetectorConfig::default();
        let cand = StopEvent::new(40.0, 65.0);
        assert_eq!(confirm_stop_baro(&cand, &baro(100.0, door(0.4)), &cfg), BaroVerdict::Confirmed);
    }

    #[test]
    fn flat_pressure_rejects() {
        let cfg = DetectorConfig::default();
        let cand = StopEvent::new(40.0, 65.0);
        assert_eq!(confirm_stop_baro(&cand, &baro(100.0, |_| 1010.0), &cfg), BaroVerdict::Rejected);
    }

    #[test]
    fn small_steps_reject() {
        let cfg = DetectorConfig::default();
        let cand = StopEvent::new(40.0, 65.0);
        assert_eq!(confirm_stop_baro(&cand, &baro(100.0, door(0.2)), &cfg), BaroVerdict::Rejected);
    }

    #[test]
    fn no_pressure_is_unavailable() {
        let cfg = DetectorConfig::default();
        let cand = StopEvent::new(40.0, 65.0);
        let v = confirm_stop_baro(&cand, &[], &cfg);
        assert_eq!(v, BaroVerdict::Unavailable);
        assert!(v.accepts());
    }

    #[test]
    fn config_validation() {
        assert!(DetectorConfig::default().validate().is_ok());
        let cfg = DetectorConfig { accel_stable_threshold: 0.5, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = DetectorConfig { min_running_seconds: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    proptest! {
        #[test]
        fn raising_crest_threshold_never_adds_candidates(
            vals in prop::collection::vec(prop_oneof![3 => 0.0..0.09f64, 1 => 0.0..1.0f64], 50..600),
            lo in 0.15..0.6f64, extra in 0.0..0.5f64,
        ) {
            let t: Vec<f64> = (0..vals.len()).map(|i| i as f64 * DT).collect();
            let var = AccelVariance {
                combined: VarianceSeries { t, v: vals, source: Channel::AccelCombined },
                axes: [vec![], vec![], vec![]],
                dominant_axis: crate::signal::Axis::X,
                direction: vec![],
            };
            let base = DetectorConfig { accel_crest_threshold: lo, stable_min_seconds: 3.0, ..Default::default() };
            let higher = DetectorConfig { accel_crest_threshold: lo + extra, ..base.clone() };
            let a = detect_accel_stops(&var, &base).len();
            let b = detect_accel_stops(&var, &higher).len();
            prop_assert!(b <= a, "low {} high {}", a, b);
        }

        #[test]
        fn pressure_offset_does_not_change_verdict(offset in -50.0..50.0f64, step in 0.0..0.8f64) {
            let cfg = DetectorConfig::default();
            let cand = StopEvent::new(40.0, 65.0);
            let a = confirm_stop_baro(&cand, &baro(100.0, door(step)), &cfg);
            let shifted: Vec<BaroSample> = baro(100.0, door(step)).into_iter().map(|s| BaroSample::new(s.t, s.baro + offset)).collect();
            let b = confirm_stop_baro(&cand, &shifted, &cfg);
            prop_assert_eq!(a, b);
        }
    }
}
