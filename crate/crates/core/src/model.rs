//! Domain types shared by every stage of the pipeline: raw sensor samples,
//! the stop/running events segmented from them, and the metro topology the
//! pattern map is anchored onto.
//!
//! All timestamps are seconds relative to the start of a trace. Streams are
//! sampled independently; nothing here assumes the accelerometer, magnetometer
//! and barometer share timestamps.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Tolerance used when checking a stored magnetometer magnitude against its axes.
pub const MAGNITUDE_TOLERANCE: f64 = 1e-9;

/// Plausible band for barometric readings, in hPa.
pub const BARO_RANGE_HPA: (f64, f64) = (800.0, 1100.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccelSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl AccelSample {
    pub fn new(t: f64, x: f64, y: f64, z: f64) -> Self {
        Self { t, x, y, z }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaroSample {
    pub t: f64,
    /// Pressure in hPa.
    pub baro: f64,
}

impl BaroSample {
    pub fn new(t: f64, baro: f64) -> Self {
        Self { t, baro }
    }
}

/// Magnetometer reading with its precomputed magnitude `m` (µT).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub m: f64,
}

impl MagSample {
    /// Builds a sample and derives `m` from the three axes.
    pub fn from_axes(t: f64, x: f64, y: f64, z: f64) -> Result<Self, ModelError> {
        let m = mag_magnitude(x, y, z)?;
        Ok(Self { t, x, y, z, m })
    }
}

/// Euclidean norm of a magnetometer reading.
pub fn mag_magnitude(mx: f64, my: f64, mz: f64) -> Result<f64, ModelError> {
    if !(mx.is_finite() && my.is_finite() && mz.is_finite()) {
        return Err(ModelError::InvalidSample(format!(
            "non-finite magnetometer axis ({mx}, {my}, {mz})"
        )));
    }
    Ok((mx * mx + my * my + mz * mz).sqrt())
}

/// One trip's raw recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorTrace {
    pub trip_id: String,
    pub device_id: String,
    pub accel: Vec<AccelSample>,
    pub mag: Vec<MagSample>,
    /// `None` when the phone has no barometer.
    pub baro: Option<Vec<BaroSample>>,
    pub accel_rate_hz: f64,
    pub mag_rate_hz: f64,
    pub baro_rate_hz: f64,
}

impl SensorTrace {
    pub fn has_barometer(&self) -> bool {
        self.baro.as_ref().is_some_and(|b| !b.is_empty())
    }

    pub fn baro_samples(&self) -> &[BaroSample] {
        self.baro.as_deref().unwrap_or(&[])
    }

    /// Last timestamp over all streams.
    pub fn duration(&self) -> f64 {
        let a = self.accel.last().map_or(0.0, |s| s.t);
        let m = self.mag.last().map_or(0.0, |s| s.t);
        let b = self.baro_samples().last().map_or(0.0, |s| s.t);
        a.max(m).max(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stream {
    Accel,
    Mag,
    Baro,
    Metadata,
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stream::Accel => "accel",
            Stream::Mag => "mag",
            Stream::Baro => "baro",
            Stream::Metadata => "metadata",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rule {
    NegativeTime,
    NonFinite,
    NonIncreasingTime,
    MagnitudeMismatch,
    PressureOutOfRange,
    NonPositiveRate,
    EmptyMagStream,
    /// A field that must be empty for this record kind holds a value.
    UnexpectedValue,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::NegativeTime => "negative time",
            Rule::NonFinite => "non-finite value",
            Rule::NonIncreasingTime => "non-increasing time",
            Rule::MagnitudeMismatch => "magnitude mismatch",
            Rule::PressureOutOfRange => "pressure out of range",
            Rule::NonPositiveRate => "non-positive rate",
            Rule::EmptyMagStream => "empty mag stream",
            Rule::UnexpectedValue => "unexpected value",
        };
        f.write_str(s)
    }
}

/// A broken invariant found by [`validate_trace`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub stream: Stream,
    pub index: usize,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]: {}", self.stream, self.index, self.rule)
    }
}

fn check_times<I>(stream: Stream, times: I, out: &mut Vec<Violation>)
where
    I: Iterator<Item = f64>,
{
    let mut prev: Option<f64> = None;
    for (index, t) in times.enumerate() {
        if !t.is_finite() {
            out.push(Violation { stream, index, rule: Rule::NonFinite });
            continue;
        }
        if t < 0.0 {
            out.push(Violation { stream, index, rule: Rule::NegativeTime });
        }
        if let Some(p) = prev {
            if t <= p {
                out.push(Violation { stream, index, rule: Rule::NonIncreasingTime });
            }
        }
        prev = Some(t);
    }
}

/// Checks every invariant of a [`SensorTrace`]. An empty result means the
/// trace is well formed.
pub fn validate_trace(trace: &SensorTrace) -> Vec<Violation> {
    let mut out = Vec::new();

    for (index, rate) in [trace.accel_rate_hz, trace.mag_rate_hz, trace.baro_rate_hz]
        .into_iter()
        .enumerate()
    {
        // baro rate only matters when a barometer stream exists
        if index == 2 && trace.baro.is_none() {
            continue;
        }
        if !(rate.is_finite() && rate > 0.0) {
            out.push(Violation { stream: Stream::Metadata, index, rule: Rule::NonPositiveRate });
        }
    }

    check_times(Stream::Accel, trace.accel.iter().map(|s| s.t), &mut out);
    for (index, s) in trace.accel.iter().enumerate() {
        if !(s.x.is_finite() && s.y.is_finite() && s.z.is_finite()) {
            out.push(Violation { stream: Stream::Accel, index, rule: Rule::NonFinite });
        }
    }

    if trace.mag.is_empty() {
        out.push(Violation { stream: Stream::Mag, index: 0, rule: Rule::EmptyMagStream });
    }
    check_times(Stream::Mag, trace.mag.iter().map(|s| s.t), &mut out);
    for (index, s) in trace.mag.iter().enumerate() {
        match mag_magnitude(s.x, s.y, s.z) {
            Ok(m) if s.m.is_finite() => {
                if (m - s.m).abs() > MAGNITUDE_TOLERANCE * m.max(1.0) {
                    out.push(Violation { stream: Stream::Mag, index, rule: Rule::MagnitudeMismatch });
                }
            }
            _ => out.push(Violation { stream: Stream::Mag, index, rule: Rule::NonFinite }),
        }
    }

    if let Some(baro) = &trace.baro {
        check_times(Stream::Baro, baro.iter().map(|s| s.t), &mut out);
        for (index, s) in baro.iter().enumerate() {
            if !s.baro.is_finite() {
                out.push(Violation { stream: Stream::Baro, index, rule: Rule::NonFinite });
            } else if s.baro < BARO_RANGE_HPA.0 || s.baro > BARO_RANGE_HPA.1 {
                out.push(Violation { stream: Stream::Baro, index, rule: Rule::PressureOutOfRange });
            }
        }
    }

    out.sort();
    out
}

/// How a stop was established.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopEvidence {
    /// Acceleration signature confirmed by a door pressure signature.
    BaroConfirmed,
    /// Acceleration only; the trace had no barometer or confirmation was disabled.
    AccelOnly,
}

/// Interval during which the train stood at a station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopEvent {
    pub bt: f64,
    pub et: f64,
    pub station_id: Option<String>,
    pub evidence: StopEvidence,
}

impl StopEvent {
    pub fn new(bt: f64, et: f64) -> Self {
        Self { bt, et, station_id: None, evidence: StopEvidence::AccelOnly }
    }

    pub fn duration(&self) -> f64 {
        self.et - self.bt
    }
}

/// Interval between two consecutive stops, carrying the sensor traces that
/// fingerprint the tunnel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningEvent {
    pub bt: f64,
    pub et: f64,
    pub b_trace: Vec<BaroSample>,
    pub m_trace: Vec<MagSample>,
    pub tunnel: Option<(String, String)>,
}

impl RunningEvent {
    pub fn duration(&self) -> f64 {
        self.et - self.bt
    }

    pub fn has_barometer(&self) -> bool {
        !self.b_trace.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TraceEvent {
    Stop(StopEvent),
    Running(RunningEvent),
}

impl TraceEvent {
    pub fn bt(&self) -> f64 {
        match self {
            TraceEvent::Stop(s) => s.bt,
            TraceEvent::Running(r) => r.bt,
        }
    }

    pub fn et(&self) -> f64 {
        match self {
            TraceEvent::Stop(s) => s.et,
            TraceEvent::Running(r) => r.et,
        }
    }

    pub fn is_stop(&self) -> bool {
        matches!(self, TraceEvent::Stop(_))
    }
}

/// Alternating stop/running sequence extracted from one trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTrace {
    pub trip_id: String,
    pub events: Vec<TraceEvent>,
}

impl UserTrace {
    pub fn stops(&self) -> impl Iterator<Item = &StopEvent> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::Stop(s) => Some(s),
            TraceEvent::Running(_) => None,
        })
    }

    pub fn running_events(&self) -> impl Iterator<Item = &RunningEvent> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::Running(r) => Some(r),
            TraceEvent::Stop(_) => None,
        })
    }

    pub fn running_count(&self) -> usize {
        self.running_events().count()
    }

    /// Checks strict alternation and time ordering.
    pub fn validate(&self) -> Result<(), ModelError> {
        for (i, pair) in self.events.windows(2).enumerate() {
            if pair[0].is_stop() == pair[1].is_stop() {
                return Err(ModelError::InvalidTrace(format!(
                    "events {} and {} are both {}",
                    i,
                    i + 1,
                    if pair[0].is_stop() { "stops" } else { "running" }
                )));
            }
            if pair[1].bt() < pair[0].et() {
                return Err(ModelError::InvalidTrace(format!(
                    "event {} starts before event {} ends",
                    i + 1,
                    i
                )));
            }
        }
        for (i, e) in self.events.iter().enumerate() {
            if !(e.bt() < e.et()) {
                return Err(ModelError::InvalidTrace(format!("event {i} has bt >= et")));
            }
        }
        Ok(())
    }
}

/// A directed tunnel between two adjacent stations.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TunnelKey {
    pub from: String,
    pub to: String,
}

impl TunnelKey {
    pub fn new(from: impl Into<String>, to: impl Into<String>) -> Self {
        Self { from: from.into(), to: to.into() }
    }

    pub fn reversed(&self) -> Self {
        Self { from: self.to.clone(), to: self.from.clone() }
    }
}

impl fmt::Display for TunnelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.from, self.to)
    }
}

/// Serde adapter writing a tunnel-keyed map as a list of `[key, value]`
/// entries, since JSON object keys must be strings.
pub mod tunnel_entries {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::TunnelKey;

    pub fn serialize<V: Serialize, S: Serializer>(map: &BTreeMap<TunnelKey, V>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(map.iter())
    }

    pub fn deserialize<'de, V: Deserialize<'de>, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<TunnelKey, V>, D::Error> {
        Ok(Vec::<(TunnelKey, V)>::deserialize(d)?.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Line {
    pub name: String,
    pub stations: Vec<String>,
}

/// Public metro topology: stations and the lines running through them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetroMap {
    /// Station id to display name.
    pub stations: BTreeMap<String, String>,
    pub lines: Vec<Line>,
}

impl MetroMap {
    /// Builds a map from named lines; display names default to the ids.
    pub fn new(lines: Vec<Line>) -> Result<Self, ModelError> {
        let mut stations = BTreeMap::new();
        let mut names = BTreeSet::new();
        for line in &lines {
            if line.stations.len() < 2 {
                return Err(ModelError::InvalidMetro(format!(
                    "line {} has fewer than 2 stations",
                    line.name
                )));
            }
            if !names.insert(line.name.clone()) {
                return Err(ModelError::InvalidMetro(format!("duplicate line {}", line.name)));
            }
            let mut seen = BTreeSet::new();
            for s in &line.stations {
                if !seen.insert(s) {
                    return Err(ModelError::InvalidMetro(format!(
                        "station {s} appears twice on line {}",
                        line.name
                    )));
                }
                stations.entry(s.clone()).or_insert_with(|| s.clone());
            }
        }
        if lines.is_empty() {
            return Err(ModelError::InvalidMetro("no lines".into()));
        }
        Ok(Self { stations, lines })
    }

    pub fn line(&self, name: &str) -> Option<&Line> {
        self.lines.iter().find(|l| l.name == name)
    }

    /// Stations served by two or more lines.
    pub fn transfer_stations(&self) -> BTreeSet<String> {
        let mut count: BTreeMap<&str, usize> = BTreeMap::new();
        for line in &self.lines {
            for s in &line.stations {
                *count.entry(s).or_default() += 1;
            }
        }
        count.into_iter().filter(|(_, c)| *c >= 2).map(|(s, _)| s.to_string()).collect()
    }

    /// Undirected tunnels, each reported once as (earlier, later) along its line.
    pub fn tunnels(&self) -> Vec<TunnelKey> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for line in &self.lines {
            for w in line.stations.windows(2) {
                let key = TunnelKey::new(&w[0], &w[1]);
                if seen.contains(&key) || seen.contains(&key.reversed()) {
                    continue;
                }
                seen.insert(key.clone());
                out.push(key);
            }
        }
        out
    }

    /// Every tunnel in both travel directions, sorted.
    pub fn directed_tunnels(&self) -> Vec<TunnelKey> {
        let mut out: BTreeSet<TunnelKey> = BTreeSet::new();
        for t in self.tunnels() {
            out.insert(t.reversed());
            out.insert(t);
        }
        out.into_iter().collect()
    }

    pub fn has_tunnel(&self, key: &TunnelKey) -> bool {
        self.lines.iter().any(|l| {
            l.stations
                .windows(2)
                .any(|w| (w[0] == key.from && w[1] == key.to) || (w[1] == key.from && w[0] == key.to))
        })
    }

    /// Lines whose consecutive stations include this tunnel.
    pub fn lines_of(&self, key: &TunnelKey) -> Vec<&str> {
        self.lines
            .iter()
            .filter(|l| {
                l.stations.windows(2).any(|w| {
                    (w[0] == key.from && w[1] == key.to) || (w[1] == key.from && w[0] == key.to)
                })
            })
            .map(|l| l.name.as_str())
            .collect()
    }

    /// Directed station sequences of `n_tunnels` tunnels that a train can run
    /// along a single line, in either direction.
    pub fn line_paths(&self, n_tunnels: usize) -> Vec<Vec<String>> {
        let mut out = Vec::new();
        if n_tunnels == 0 {
            return out;
        }
        for line in &self.lines {
            let n = line.stations.len();
            if n_tunnels >= n {
                continue;
            }
            for start in 0..n - n_tunnels {
                let fwd: Vec<String> = line.stations[start..=start + n_tunnels].to_vec();
                let mut bwd = fwd.clone();
                bwd.reverse();
                out.push(fwd);
                out.push(bwd);
            }
        }
        out.sort();
        out.dedup();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trace() -> SensorTrace {
        let accel = (0..5).map(|i| AccelSample::new(i as f64 * 0.2, 0.0, 0.0, 9.8)).collect();
        let mag = (0..5)
            .map(|i| MagSample::from_axes(i as f64 * 0.2, 30.0, 20.0, 10.0).unwrap())
            .collect();
        let baro = (0..3).map(|i| BaroSample::new(i as f64 / 3.0, 1010.0)).collect();
        SensorTrace {
            trip_id: "t".into(),
            device_id: "d".into(),
            accel,
            mag,
            baro: Some(baro),
            accel_rate_hz: 5.0,
            mag_rate_hz: 5.0,
            baro_rate_hz: 3.0,
        }
    }

    #[test]
    fn magnitude_examples() {
        assert_eq!(mag_magnitude(0.0, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(mag_magnitude(3.0, 4.0, 0.0).unwrap(), 5.0);
        assert!((mag_magnitude(1.0, 1.0, 1.0).unwrap() - 3f64.sqrt()).abs() < 1e-12);
        assert!(mag_magnitude(f64::NAN, 0.0, 0.0).is_err());
        assert!(mag_magnitude(0.0, f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn well_formed_trace_has_no_violations() {
        assert!(validate_trace(&trace()).is_empty());
    }

    #[test]
    fn repeated_timestamp_is_reported() {
        let mut tr = trace();
        tr.accel.truncate(3);
        tr.accel[0].t = 0.0;
        tr.accel[1].t = 1.0;
        tr.accel[2].t = 1.0;
        let v = validate_trace(&tr);
        assert_eq!(v, vec![Violation { stream: Stream::Accel, index: 2, rule: Rule::NonIncreasingTime }]);
    }

    #[test]
    fn magnitude_mismatch_is_reported() {
        let mut tr = trace();
        let s = tr.mag[1];
        tr.mag[1].m = mag_magnitude(s.x, s.y, s.z).unwrap() + 0.5;
        let v = validate_trace(&tr);
        assert_eq!(v, vec![Violation { stream: Stream::Mag, index: 1, rule: Rule::MagnitudeMismatch }]);
    }

    #[test]
    fn missing_mag_and_bad_rate() {
        let mut tr = trace();
        tr.mag.clear();
        tr.accel_rate_hz = 0.0;
        let v = validate_trace(&tr);
        assert!(v.iter().any(|x| x.rule == Rule::EmptyMagStream));
        assert!(v.iter().any(|x| x.rule == Rule::NonPositiveRate));
    }

    #[test]
    fn pressure_band() {
        let mut tr = trace();
        tr.baro.as_mut().unwrap()[1].baro = 700.0;
        let v = validate_trace(&tr);
        assert_eq!(v[0].rule, Rule::PressureOutOfRange);
    }

    #[test]
    fn user_trace_alternation() {
        let stop = |a: f64, b: f64| TraceEvent::Stop(StopEvent::new(a, b));
        let run = |a: f64, b: f64| {
            TraceEvent::Running(RunningEvent { bt: a, et: b, b_trace: vec![], m_trace: vec![], tunnel: None })
        };
        let ok = UserTrace { trip_id: "x".into(), events: vec![stop(0.0, 20.0), run(20.0, 90.0), stop(90.0, 120.0)] };
        assert!(ok.validate().is_ok());
        let bad = UserTrace { trip_id: "x".into(), events: vec![stop(0.0, 20.0), stop(30.0, 50.0)] };
        assert!(bad.validate().is_err());
        let overlapping =
            UserTrace { trip_id: "x".into(), events: vec![stop(0.0, 20.0), run(10.0, 90.0)] };
        assert!(overlapping.validate().is_err());
    }

    #[test]
    fn metro_derived_sets() {
        let metro = MetroMap::new(vec![
            Line { name: "1".into(), stations: vec!["A".into(), "B".into(), "C".into()] },
            Line { name: "2".into(), stations: vec!["D".into(), "B".into(), "E".into()] },
        ])
        .unwrap();
        assert_eq!(metro.tunnels().len(), 4);
        assert_eq!(metro.directed_tunnels().len(), 8);
        assert_eq!(metro.transfer_stations().into_iter().collect::<Vec<_>>(), vec!["B".to_string()]);
        assert!(metro.has_tunnel(&TunnelKey::new("C", "B")));
        assert!(!metro.has_tunnel(&TunnelKey::new("A", "C")));
        assert_eq!(metro.line_paths(2).len(), 4);
        assert!(MetroMap::new(vec![Line { name: "x".into(), stations: vec!["A".into()] }]).is_err());
    }

    fn rotation(a: f64, b: f64, c: f64) -> [[f64; 3]; 3] {
        let (sa, ca) = a.sin_cos();
        let (sb, cb) = b.sin_cos();
        let (sc, cc) = c.sin_cos();
        let rz = [[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]];
        let ry = [[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]];
        let rx = [[1.0, 0.0, 0.0], [0.0, cc, -sc], [0.0, sc, cc]];
        crate::sim::matmul(&crate::sim::matmul(&rz, &ry), &rx)
    }

    proptest! {
        #[test]
        fn magnitude_rotation_invariant(
            x in -200.0..200.0f64, y in -200.0..200.0f64, z in -200.0..200.0f64,
            a in 0.0..6.3f64, b in 0.0..6.3f64, c in 0.0..6.3f64,
        ) {
            let r = rotation(a, b, c);
            let v = crate::sim::apply(&r, [x, y, z]);
            let m0 = mag_magnitude(x, y, z).unwrap();
            let m1 = mag_magnitude(v[0], v[1], v[2]).unwrap();
            prop_assert!((m0 - m1).abs() < 1e-9);
        }

        #[test]
        fn validation_is_idempotent(shift in 0usize..5, dt in -0.5..0.5f64) {
            let mut tr = trace();
            tr.mag[shift].t += dt;
            let a = validate_trace(&tr);
            let b = validate_trace(&tr);
            prop_assert_eq!(a, b);
        }
    }
}
