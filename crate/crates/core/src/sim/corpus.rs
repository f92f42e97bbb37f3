use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{gen_trip, random_rotation, GroundTruth, SyntheticWorld, TripSpec};
use crate::error::SimError;
use crate::model::SensorTrace;
use crate::par;

/// How trip endpoints are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LengthDistribution {
    /// Trip length in tunnels is geometric with success probability `p`,
    /// truncated to `1..=max`; the segment is placed uniformly on a line long enough.
    Geometric { p: f64, max: usize },
    /// Origin and destination are drawn independently along a line (chosen in
    /// proportion to its length), terminals weighted `terminus_weight` against 1
    /// for every other station. Short trips dominate, and the line ends, which
    /// only long trips reach otherwise, still get traffic.
    TerminusWeighted { terminus_weight: f64 },
}

impl Default for LengthDistribution {
    fn default() -> Self {
        LengthDistribution::TerminusWeighted { terminus_weight: 6.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_trips: usize,
    pub lengths: LengthDistribution,
    pub n_devices: usize,
    /// Share of devices that carry a barometer.
    pub barometer_fraction: f64,
    pub mag_sigma: f64,
    pub accel_sigma: f64,
    pub accel_rest_sigma: f64,
    pub baro_sigma: f64,
    /// Device magnetometer drift is uniform in ±this (µT).
    pub drift_range: f64,
    /// Device barometer offset is uniform in ±this (hPa).
    pub baro_offset_range: f64,
    pub decoy_decel_rate: f64,
    pub speed_warp: (f64, f64),
    pub spike_rate: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_trips: 162,
            lengths: LengthDistribution::default(),
            n_devices: 10,
            barometer_fraction: 0.7,
            mag_sigma: 1.0,
            accel_sigma: 0.1,
            accel_rest_sigma: 0.015,
            baro_sigma: 0.01,
            drift_range: 10.0,
            baro_offset_range: 1.0,
            decoy_decel_rate: 0.05,
            speed_warp: (0.85, 1.25),
            spike_rate: 0.001,
        }
    }
}

/// One generated trip with its spec and labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledTrip {
    pub spec: TripSpec,
    pub trace: SensorTrace,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone)]
struct Device {
    id: String,
    drift: f64,
    baro_offset: f64,
    has_barometer: bool,
}

fn pick_weighted<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// (line index, boarding index, alighting index) for one trip.
fn draw_endpoints<R: Rng>(rng: &mut R, world: &SyntheticWorld, lengths: &LengthDistribution) -> (usize, usize, usize) {
    let lines = &world.metro.lines;
    match lengths {
        LengthDistribution::Geometric { p, max } => {
            let longest = lines.iter().map(|l| l.stations.len() - 1).max().unwrap_or(1);
            let cap = (*max).clamp(1, longest);
            let weights: Vec<f64> = (1..=cap).map(|k| (1.0 - p).powi(k as i32 - 1)).collect();
            let len = pick_weighted(rng, &weights) + 1;
            let starts: Vec<f64> = lines.iter().map(|l| (l.stations.len() - 1).saturating_sub(len - 1) as f64).collect();
            let li = pick_weighted(rng, &starts);
            let start = rng.gen_range(0..lines[li].stations.len() - len);
            if rng.gen_bool(0.5) {
                (li, start, start + len)
            } else {
                (li, start + len, start)
            }
        }
        LengthDistribution::TerminusWeighted { terminus_weight } => {
            let sizes: Vec<f64> = lines.iter().map(|l| l.stations.len() as f64).collect();
            let li = pick_weighted(rng, &sizes);
            let n = lines[li].stations.len();
            let weights: Vec<f64> = (0..n).map(|i| if i == 0 || i == n - 1 { *terminus_weight } else { 1.0 }).collect();
            let a = pick_weighted(rng, &weights);
            loop {
                let b = pick_weighted(rng, &weights);
                if b != a {
                    return (li, a, b);
                }
            }
        }
    }
}

/// Generates `cfg.n_trips` labeled trips. Specs and per-trip seeds are drawn
/// sequentially from `seed`; the trips themselves are generated in parallel.
pub fn gen_corpus(world: &SyntheticWorld, cfg: &CorpusConfig, seed: u64) -> Result<Vec<LabeledTrip>, SimError> {
    if cfg.n_trips == 0 {
        return Err(SimError::InvalidSpec("n_trips must be >= 1".into()));
    }
    if cfg.n_devices == 0 {
        return Err(SimError::InvalidSpec("n_devices must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let with_baro = (cfg.barometer_fraction * cfg.n_devices as f64).round() as usize;
    let devices: Vec<Device> = (0..cfg.n_devices)
        .map(|i| Device {
            id: format!("dev{i:02}"),
            drift: rng.gen_range(-cfg.drift_range..=cfg.drift_range),
            baro_offset: rng.gen_range(-cfg.baro_offset_range..=cfg.baro_offset_range),
            has_barometer: i < with_baro,
        })
        .collect();

    let jobs: Vec<(TripSpec, u64)> = (0..cfg.n_trips)
        .map(|i| {
            let (li, a, b) = draw_endpoints(&mut rng, world, &cfg.lengths);
            let line = &world.metro.lines[li];
            let dev = &devices[rng.gen_range(0..devices.len())];
            let mut spec = TripSpec::new(&line.name, &line.stations[a], &line.stations[b]);
            spec.trip_id = format!("trip{i:04}");
            spec.device_id = dev.id.clone();
            spec.mag_sigma = cfg.mag_sigma;
            spec.accel_sigma = cfg.accel_sigma;
            spec.accel_rest_sigma = cfg.accel_rest_sigma;
            spec.baro_sigma = cfg.baro_sigma;
            spec.device_drift = dev.drift;
            spec.baro_offset = dev.baro_offset;
            spec.device_rotation = random_rotation(&mut rng);
            spec.decoy_decel_rate = cfg.decoy_decel_rate;
            spec.has_barometer = dev.has_barometer;
            spec.speed_warp = cfg.speed_warp;
            spec.spike_rate = cfg.spike_rate;
            (spec, rng.gen())
        })
        .collect();

    par::map(&jobs, |(spec, s)| gen_trip(world, spec, *s).map(|(trace, truth)| LabeledTrip { spec: spec.clone(), trace, truth }))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{default_metro, gen_world};

    fn histogram(trips: &[LabeledTrip]) -> [usize; 5] {
        let mut h = [0; 5];
        for t in trips {
            let len = t.truth.tunnels.len();
            h[((len - 1) / 4).min(4)] += 1;
        }
        h
    }

    #[test]
    fn corpus_size_and_determinism() {
        let w = gen_world(&default_metro(), 1);
        let cfg = CorpusConfig { n_trips: 12, ..Default::default() };
        let a = gen_corpus(&w, &cfg, 4).unwrap();
        assert_eq!(a.len(), 12);
        assert_eq!(a, gen_corpus(&w, &cfg, 4).unwrap());
    }

    #[test]
    fn endpoint_draws_are_short_skewed() {
        let w = gen_world(&default_metro(), 1);
        for lengths in [LengthDistribution::default(), LengthDistribution::Geometric { p: 0.15, max: 15 }] {
            let mut h = [0usize; 5];
            for seed in 0..10 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for _ in 0..162 {
                    let (_, a, b) = draw_endpoints(&mut rng, &w, &lengths);
                    let len = a.abs_diff(b);
                    h[((len - 1) / 4).min(4)] += 1;
                }
            }
            assert!(h.windows(2).all(|p| p[0] >= p[1]), "{lengths:?}: {h:?}");
        }
    }

    #[test]
    fn small_corpus_histogram_counts_every_trip() {
        let w = gen_world(&default_metro(), 2);
        let trips = gen_corpus(&w, &CorpusConfig { n_trips: 8, ..Default::default() }, 3).unwrap();
        assert_eq!(histogram(&trips).iter().sum::<usize>(), 8);
    }
}
