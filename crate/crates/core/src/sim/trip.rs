use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{apply, gen_bumps, mag_field, Mat3, SyntheticWorld, IDENTITY};
use crate::error::SimError;
use crate::model::{mag_magnitude, AccelSample, BaroSample, MagSample, SensorTrace, TunnelKey};

pub const ACCEL_RATE_HZ: f64 = 5.0;
pub const MAG_RATE_HZ: f64 = 5.0;
pub const BARO_RATE_HZ: f64 = 3.0;
const GRAVITY: f64 = 9.81;
const CRUISE_MPS: f64 = 16.0;
const ACCEL_MPS2: f64 = 1.0;
const BRAKE_MPS2: f64 = 1.0;
/// Below this speed wheel/track vibration fades out.
const VIBRATION_FULL_SPEED: f64 = 4.0;
const REBOUND_AMPLITUDE: f64 = 0.5;
const REBOUND_DECAY_S: f64 = 0.8;
const REBOUND_HZ: f64 = 0.9;
const CABIN_TAU_S: f64 = 0.5;

/// What one simulated rider does and what their phone is like.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripSpec {
    pub trip_id: String,
    pub device_id: String,
    pub line: String,
    pub board: String,
    pub alight: String,
    /// Magnetometer noise (µT).
    pub mag_sigma: f64,
    /// Vibration amplitude while the train runs (m/s² per axis).
    pub accel_sigma: f64,
    /// Accelerometer sensor noise, present even at rest (m/s² per axis).
    pub accel_rest_sigma: f64,
    pub baro_sigma: f64,
    /// Constant offset on the magnetic magnitude (µT).
    pub device_drift: f64,
    /// Constant offset on the pressure reading (hPa).
    pub baro_offset: f64,
    /// World-to-device rotation.
    pub device_rotation: Mat3,
    /// Expected number of mid-tunnel halts per tunnel.
    pub decoy_decel_rate: f64,
    pub has_barometer: bool,
    /// Per-tunnel traversal-time multiplier range.
    pub speed_warp: (f64, f64),
    /// Fraction of magnetometer samples hit by a spike.
    pub spike_rate: f64,
}

impl TripSpec {
    pub fn new(line: &str, board: &str, alight: &str) -> Self {
        Self {
            trip_id: format!("{line}-{board}-{alight}"),
            device_id: "sim".into(),
            line: line.into(),
            board: board.into(),
            alight: alight.into(),
            mag_sigma: 1.0,
            accel_sigma: 0.1,
            accel_rest_sigma: 0.015,
            baro_sigma: 0.01,
            device_drift: 0.0,
            baro_offset: 0.0,
            device_rotation: IDENTITY,
            decoy_decel_rate: 0.0,
            has_barometer: true,
            speed_warp: (0.85, 1.25),
            spike_rate: 0.0,
        }
    }

    /// Noise-free variant: no sensor noise, drift, decoys, or spikes.
    pub fn noiseless(mut self) -> Self {
        self.mag_sigma = 0.0;
        self.accel_sigma = 0.0;
        self.accel_rest_sigma = 0.0;
        self.baro_sigma = 0.0;
        self.device_drift = 0.0;
        self.baro_offset = 0.0;
        self.decoy_decel_rate = 0.0;
        self.spike_rate = 0.0;
        self
    }

    /// Station ids from boarding to alighting, in travel order.
    pub fn stations(&self, world: &SyntheticWorld) -> Result<Vec<String>, SimError> {
        let line = world
            .metro
            .line(&self.line)
            .ok_or_else(|| SimError::InvalidSpec(format!("unknown line {}", self.line)))?;
        let pos = |id: &str| {
            line.stations
                .iter()
                .position(|s| s == id)
                .ok_or_else(|| SimError::InvalidSpec(format!("station {id} is not on line {}", self.line)))
        };
        let (a, b) = (pos(&self.board)?, pos(&self.alight)?);
        if a == b {
            return Err(SimError::InvalidSpec("boarding and alighting stations coincide".into()));
        }
        Ok(if a < b {
            line.stations[a..=b].to_vec()
        } else {
            line.stations[b..=a].iter().rev().cloned().collect()
        })
    }

    pub fn validate(&self, world: &SyntheticWorld) -> Result<(), SimError> {
        self.stations(world)?;
        let sigmas = [self.mag_sigma, self.accel_sigma, self.accel_rest_sigma, self.baro_sigma, self.decoy_decel_rate];
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(SimError::InvalidSpec("noise levels and decoy rate must be finite and >= 0".into()));
        }
        let (lo, hi) = self.speed_warp;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(SimError::InvalidSpec(format!("bad speed warp range ({lo}, {hi})")));
        }
        if !(0.0..=1.0).contains(&self.spike_rate) {
            return Err(SimError::InvalidSpec("spike_rate must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueStop {
    pub station_id: String,
    pub arrival: f64,
    pub departure: f64,
    pub door_open: f64,
    pub door_close: f64,
}

/// A mid-tunnel halt without doors opening.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoy {
    pub tunnel_index: usize,
    pub halt_start: f64,
    pub halt_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub trip_id: String,
    pub line: String,
    pub stops: Vec<TrueStop>,
    pub tunnels: Vec<TunnelKey>,
    pub decoys: Vec<Decoy>,
    pub has_barometer: bool,
}

/// Rest-to-rest run with a trapezoidal (or triangular) speed profile.
#[derive(Debug, Clone, Copy)]
struct Run {
    dist: f64,
    peak: f64,
    t_acc: f64,
    t_cruise: f64,
    t_brake: f64,
}

impl Run {
    fn new(dist: f64, cruise: f64) -> Self {
        let (a, b) = (ACCEL_MPS2, BRAKE_MPS2);
        let needed = cruise * cruise / (2.0 * a) + cruise * cruise / (2.0 * b);
        if needed <= dist {
            Self { dist, peak: cruise, t_acc: cruise / a, t_cruise: (dist - needed) / cruise, t_brake: cruise / b }
        } else {
            let peak = (2.0 * a * b * dist / (a + b)).sqrt();
            Self { dist, peak, t_acc: peak / a, t_cruise: 0.0, t_brake: peak / b }
        }
    }

    fn duration(&self) -> f64 {
        self.t_acc + self.t_cruise + self.t_brake
    }

    /// (position, speed, longitudinal acceleration) at time `tau` into the run.
    fn state(&self, tau: f64) -> (f64, f64, f64) {
        let (a, b) = (ACCEL_MPS2, BRAKE_MPS2);
        if tau < self.t_acc {
            (0.5 * a * tau * tau, a * tau, a)
        } else if tau < self.t_acc + self.t_cruise {
            let d = tau - self.t_acc;
            (0.5 * a * self.t_acc * self.t_acc + self.peak * d, self.peak, 0.0)
        } else if tau < self.duration() {
            let d = (self.duration() - tau).max(0.0);
            (self.dist - 0.5 * b * d * d, b * d, -b)
        } else {
            (self.dist, 0.0, 0.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Place {
    Approach,
    Station(usize),
    Tunnel(usize),
    Depart,
}

#[derive(Debug, Clone, Copy)]
enum Phase {
    Move { run: Run, x0: f64 },
    Halt { x: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Span {
    t0: f64,
    place: Place,
    phase: Phase,
    /// Route distance at the start of this place, for the field direction.
    route0: f64,
}

struct Timeline {
    spans: Vec<Span>,
    halts: Vec<f64>,
    end: f64,
}

impl Timeline {
    fn at(&self, t: f64) -> (&Span, f64, f64, f64) {
        let i = self.spans.partition_point(|s| s.t0 <= t).saturating_sub(1);
        let s = &self.spans[i];
        let (x, v, a) = match s.phase {
            Phase::Move { run, x0 } => {
                let (x, v, a) = run.state(t - s.t0);
                (x0 + x, v, a)
            }
            Phase::Halt { x } => (x, 0.0, 0.0),
        };
        (s, x, v, a)
    }

    fn rebound(&self, t: f64) -> f64 {
        let i = self.halts.partition_point(|&h| h <= t);
        if i == 0 {
            return 0.0;
        }
        let tau = t - self.halts[i - 1];
        REBOUND_AMPLITUDE * (-tau / REBOUND_DECAY_S).exp() * (2.0 * std::f64::consts::PI * REBOUND_HZ * tau).sin()
    }
}

fn sample_times(rate: f64, offset: f64, end: f64) -> Vec<f64> {
    let n = ((end - offset) * rate).floor().max(0.0) as usize + 1;
    (0..n).map(|i| offset + i as f64 / rate).filter(|&t| t <= end).collect()
}

/// Generates one trip's recording and labels.
///
/// The recording opens while the train approaches the boarding station and
/// closes shortly after it leaves the alighting station, so the first and
/// last stops each show both crests and both door steps.
pub fn gen_trip(world: &SyntheticWorld, spec: &TripSpec, seed: u64) -> Result<(SensorTrace, GroundTruth), SimError> {
    spec.validate(world)?;
    let stations = spec.stations(world)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = &world.params;
    let tunnels: Vec<TunnelKey> = stations.windows(2).map(|w| TunnelKey::new(&w[0], &w[1])).collect();
    let profiles: Vec<_> = tunnels
        .iter()
        .map(|k| world.profile(k).ok_or_else(|| SimError::InvalidSpec(format!("world has no tunnel {k}"))))
        .collect::<Result<_, _>>()?;

    let approach_len = rng.gen_range(150.0..300.0);
    let depart_len = rng.gen_range(250.0..350.0);
    let approach_bumps = gen_bumps(&mut rng, params, approach_len);
    let depart_bumps = gen_bumps(&mut rng, params, depart_len);
    let dwell = Normal::new(params.dwell_mean_s, params.dwell_sd_s).expect("dwell sd is finite");

    let mut spans = Vec::new();
    let mut halts = Vec::new();
    let mut stops = Vec::new();
    let mut decoys = Vec::new();
    let mut t = 0.0;
    let mut route = 0.0;

    let run = Run::new(approach_len, rng.gen_range(10.0..14.0));
    spans.push(Span { t0: t, place: Place::Approach, phase: Phase::Move { run, x0: 0.0 }, route0: route });
    t += run.duration();
    route += approach_len;

    for (k, station) in stations.iter().enumerate() {
        let d: f64 = dwell.sample(&mut rng).max(params.dwell_min_s);
        let door_open = t + rng.gen_range(2.0..4.0);
        let door_close = t + d - rng.gen_range(3.0..5.0);
        halts.push(t);
        spans.push(Span { t0: t, place: Place::Station(k), phase: Phase::Halt { x: 0.0 }, route0: route });
        stops.push(TrueStop { station_id: station.clone(), arrival: t, departure: t + d, door_open, door_close });
        t += d;

        if k + 1 == stations.len() {
            let run = Run::new(depart_len, rng.gen_range(10.0..14.0));
            spans.push(Span { t0: t, place: Place::Depart, phase: Phase::Move { run, x0: 0.0 }, route0: route });
            t += rng.gen_range(12.0f64..18.0).min(run.duration());
            break;
        }

        let profile = profiles[k];
        let warp = rng.gen_range(spec.speed_warp.0..=spec.speed_warp.1);
        let cruise = CRUISE_MPS / warp;
        let n_decoys = if spec.decoy_decel_rate > 0.0 {
            Poisson::new(spec.decoy_decel_rate).expect("positive rate").sample(&mut rng).min(2.0) as usize
        } else {
            0
        };
        let mut cuts: Vec<f64> = match n_decoys {
            0 => vec![],
            1 => vec![rng.gen_range(0.25..0.75)],
            _ => vec![rng.gen_range(0.2..0.45), rng.gen_range(0.55..0.8)],
        };
        cuts.iter_mut().for_each(|c| *c *= profile.length_m);
        cuts.push(profile.length_m);
        let mut x0 = 0.0;
        for (c, &x1) in cuts.iter().enumerate() {
            if c > 0 {
                let hold = rng.gen_range(15.0..30.0);
                halts.push(t);
                spans.push(Span { t0: t, place: Place::Tunnel(k), phase: Phase::Halt { x: x0 }, route0: route });
                decoys.push(Decoy { tunnel_index: k, halt_start: t, halt_end: t + hold });
                t += hold;
            }
            let run = Run::new(x1 - x0, cruise);
            spans.push(Span { t0: t, place: Place::Tunnel(k), phase: Phase::Move { run, x0 }, route0: route });
            t += run.duration();
            x0 = x1;
        }
        route += profile.length_m;
    }
    let end = t;
    let timeline = Timeline { spans, halts, end };

    let station_pressure = |k: usize| world.station_pressure[&stations[k]];
    let field = |place: Place, x: f64| -> (f64, f64) {
        match place {
            Place::Approach => (mag_field(&approach_bumps, x), station_pressure(0)),
            Place::Station(k) => (super::MAG_BASELINE, station_pressure(k)),
            Place::Tunnel(k) => (profiles[k].mag_at(x), profiles[k].pressure_at(x)),
            Place::Depart => (mag_field(&depart_bumps, x), station_pressure(stations.len() - 1)),
        }
    };
    let cabin = |t: f64| -> f64 {
        let i = stops.partition_point(|s| s.door_open <= t);
        if i == 0 {
            return 1.0;
        }
        let s = &stops[i - 1];
        if t < s.door_close {
            (-(t - s.door_open) / CABIN_TAU_S).exp()
        } else {
            let low = (-(s.door_close - s.door_open) / CABIN_TAU_S).exp();
            1.0 - (1.0 - low) * (-(t - s.door_close) / CABIN_TAU_S).exp()
        }
    };

    let r = &spec.device_rotation;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let noise = |sigma: f64, rng: &mut ChaCha8Rng| if sigma > 0.0 { sigma * std_normal.sample(rng) } else { 0.0 };

    let accel: Vec<AccelSample> = sample_times(ACCEL_RATE_HZ, 0.0, timeline.end)
        .into_iter()
        .map(|t| {
            let (_, _, v, a) = timeline.at(t);
            let vib = spec.accel_sigma * (v / VIBRATION_FULL_SPEED).min(1.0);
            let world_f = [
                a + timeline.rebound(t) + noise(vib, &mut rng),
                noise(vib, &mut rng),
                GRAVITY + noise(vib, &mut rng),
            ];
            let d = apply(r, world_f);
            AccelSample::new(
                t,
                d[0] + noise(spec.accel_rest_sigma, &mut rng),
                d[1] + noise(spec.accel_rest_sigma, &mut rng),
                d[2] + noise(spec.accel_rest_sigma, &mut rng),
            )
        })
        .collect();

    let inclination: f64 = 60f64.to_radians();
    let azimuth0 = rng.gen_range(0.0..std::f64::consts::TAU);
    let mag: Vec<MagSample> = sample_times(MAG_RATE_HZ, 0.05, timeline.end)
        .into_iter()
        .map(|t| {
            let (span, x, _, _) = timeline.at(t);
            let (m_true, _) = field(span.place, x);
            let mut m = m_true + spec.device_drift + noise(spec.mag_sigma, &mut rng);
            if spec.spike_rate > 0.0 && rng.gen_bool(spec.spike_rate) {
                m += rng.gen_range(20.0..40.0);
            }
            let az = azimuth0 + (span.route0 + x) / 300.0;
            let dir = [inclination.cos() * az.cos(), inclination.cos() * az.sin(), -inclination.sin()];
            let d = apply(r, dir);
            let (x, y, z) = (m * d[0], m * d[1], m * d[2]);
            let m = mag_magnitude(x, y, z).expect("finite field");
            MagSample { t, x, y, z, m }
        })
        .collect();

    let baro = if spec.has_barometer {
        Some(
            sample_times(BARO_RATE_HZ, 0.1, timeline.end)
                .into_iter()
                .map(|t| {
                    let (span, x, _, _) = timeline.at(t);
                    let (_, p) = field(span.place, x);
                    let p = p + params.cabin_overpressure * cabin(t) + spec.baro_offset + noise(spec.baro_sigma, &mut rng);
                    BaroSample::new(t, p)
                })
                .collect(),
        )
    } else {
        None
    };

    let trace = SensorTrace {
        trip_id: spec.trip_id.clone(),
        device_id: spec.device_id.clone(),
        accel,
        mag,
        baro,
        accel_rate_hz: ACCEL_RATE_HZ,
        mag_rate_hz: MAG_RATE_HZ,
        baro_rate_hz: BARO_RATE_HZ,
    };
    let truth = GroundTruth {
        trip_id: spec.trip_id.clone(),
        line: spec.line.clone(),
        stops,
        tunnels,
        decoys,
        has_barometer: spec.has_barometer,
    };
    Ok((trace, truth))
}
