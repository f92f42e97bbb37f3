//! Deterministic synthetic metro world with labeled phone recordings.
//!
//! Every directed tunnel gets its own latent magnetic-magnitude profile (a
//! baseline plus Gaussian bumps over position) and a smooth pressure
//! profile between the two station pressures. Trips replay those profiles
//! under per-tunnel speed variation, sensor noise, device drift, and a fixed
//! device rotation.

mod corpus;
mod trip;

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::model::{Line, MetroMap, TunnelKey};

pub use corpus::{gen_corpus, CorpusConfig, LengthDistribution, LabeledTrip};
pub use trip::{gen_trip, Decoy, GroundTruth, TrueStop, TripSpec};

pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn apply(r: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
        r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
        r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
    ]
}

/// Uniformly distributed rotation from a normalized Gaussian quaternion.
pub fn random_rotation<R: Rng>(rng: &mut R) -> Mat3 {
    let mut q = [0.0f64; 4];
    for c in &mut q {
        *c = rng.sample(StandardNormal);
    }
    let n = q.iter().map(|c| c * c).sum::<f64>().sqrt().max(1e-12);
    let [w, x, y, z] = q.map(|c| c / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Geomagnetic background the tunnel anomalies ride on (µT).
pub const MAG_BASELINE: f64 = 50.0;
/// Spacing of the stored pressure profile (m).
const PRESSURE_STEP_M: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center_m: f64,
    pub width_m: f64,
    pub amplitude: f64,
}

/// Latent sensor fingerprint of one directed tunnel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunnelProfile {
    pub length_m: f64,
    pub bumps: Vec<Bump>,
    /// Ambient pressure (hPa) every 10 m from the departure station.
    pub pressure: Vec<f64>,
}

impl TunnelProfile {
    pub fn mag_at(&self, x: f64) -> f64 {
        mag_field(&self.bumps, x)
    }

    pub fn pressure_at(&self, x: f64) -> f64 {
        interp(&self.pressure, PRESSURE_STEP_M, x)
    }
}

pub(crate) fn mag_field(bumps: &[Bump], x: f64) -> f64 {
    MAG_BASELINE + bump_sum(bumps, x)
}

fn interp(values: &[f64], step: f64, x: f64) -> f64 {
    if values.len() == 1 {
        return values[0];
    }
    let pos = (x / step).clamp(0.0, (values.len() - 1) as f64);
    let i = (pos.floor() as usize).min(values.len() - 2);
    let w = pos - i as f64;
    values[i] * (1.0 - w) + values[i + 1] * w
}

/// Knobs of the latent world, separate from per-trip noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldParams {
    pub tunnel_length_m: (f64, f64),
    pub bumps_per_tunnel: (usize, usize),
    /// Magnetic bump amplitude range (µT); bumps add to the baseline.
    pub bump_amplitude: (f64, f64),
    pub bump_width_m: (f64, f64),
    pub pressure_bumps: (usize, usize),
    /// Absolute pressure bump amplitude range (hPa); the sign is random.
    pub pressure_bump_amplitude: (f64, f64),
    pub pressure_bump_width_m: (f64, f64),
    /// Station ambient pressures are drawn from this band (hPa).
    pub station_pressure: (f64, f64),
    pub dwell_mean_s: f64,
    pub dwell_sd_s: f64,
    pub dwell_min_s: f64,
    pub cabin_overpressure: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            tunnel_length_m: (700.0, 1500.0),
            bumps_per_tunnel: (5, 15),
            bump_amplitude: (150.0, 450.0),
            bump_width_m: (8.0, 25.0),
            pressure_bumps: (5, 12),
            pressure_bump_amplitude: (0.1, 0.3),
            pressure_bump_width_m: (30.0, 80.0),
            station_pressure: (1011.5, 1012.5),
            dwell_mean_s: 30.0,
            dwell_sd_s: 5.0,
            dwell_min_s: 20.0,
            cabin_overpressure: 0.4,
        }
    }
}

/// Ground-truth world: topology plus latent per-tunnel profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub metro: MetroMap,
    pub params: WorldParams,
    pub station_pressure: BTreeMap<String, f64>,
    #[serde(with = "crate::model::tunnel_entries")]
    pub tunnel_profiles: BTreeMap<TunnelKey, TunnelProfile>,
    pub seed: u64,
}

impl SyntheticWorld {
    pub fn profile(&self, key: &TunnelKey) -> Option<&TunnelProfile> {
        self.tunnel_profiles.get(key)
    }
}

pub fn gen_world(metro: &MetroMap, seed: u64) -> SyntheticWorld {
    gen_world_with(metro, seed, WorldParams::default())
}

/// Builds the world; each station and tunnel draws from its own ChaCha stream
/// so a profile depends only on the seed and its position in the sorted key list.
pub fn gen_world_with(metro: &MetroMap, seed: u64, params: WorldParams) -> SyntheticWorld {
    let mut station_pressure = BTreeMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in metro.stations.keys() {
        station_pressure.insert(id.clone(), rng.gen_range(params.station_pressure.0..=params.station_pressure.1));
    }
    let mut tunnel_profiles = BTreeMap::new();
    for (k, key) in metro.directed_tunnels().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64 + 1);
        let p_from = station_pressure[&key.from];
        let p_to = station_pressure[&key.to];
        tunnel_profiles.insert(key, gen_profile(&mut rng, &params, p_from, p_to));
    }
    SyntheticWorld { metro: metro.clone(), params, station_pressure, tunnel_profiles, seed }
}

fn gen_bumps<R: Rng>(rng: &mut R, params: &WorldParams, length: f64) -> Vec<Bump> {
    let n = rng.gen_range(params.bumps_per_tunnel.0..=params.bumps_per_tunnel.1);
    (0..n)
        .map(|_| Bump {
            center_m: rng.gen_range(0.08 * length..0.92 * length),
            width_m: rng.gen_range(params.bump_width_m.0..=params.bump_width_m.1),
            amplitude: rng.gen_range(params.bump_amplitude.0..=params.bump_amplitude.1),
        })
        .collect()
}

fn gen_profile<R: Rng>(rng: &mut R, params: &WorldParams, p_from: f64, p_to: f64) -> TunnelProfile {
    let length = rng.gen_range(params.tunnel_length_m.0..=params.tunnel_length_m.1);
    let bumps = gen_bumps(rng, params, length);
    // Linear bridge between the station pressures plus local aerodynamic bumps.
    let n_air = rng.gen_range(params.pressure_bumps.0..=params.pressure_bumps.1);
    let air: Vec<Bump> = (0..n_air)
        .map(|_| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            Bump {
                center_m: rng.gen_range(0.1 * length..0.9 * length),
                width_m: rng.gen_range(params.pressure_bump_width_m.0..=params.pressure_bump_width_m.1),
                amplitude: sign * rng.gen_range(params.pressure_bump_amplitude.0..=params.pressure_bump_amplitude.1),
            }
        })
        .collect();
    let n = (length / PRESSURE_STEP_M).ceil() as usize;
    let pressure = (0..=n)
        .map(|i| {
            let x = (i as f64 * PRESSURE_STEP_M).min(length);
            let taper = (x / 50.0).min((length - x) / 50.0).clamp(0.0, 1.0);
            p_from + (p_to - p_from) * x / length + taper * bump_sum(&air, x)
        })
        .collect();
    TunnelProfile { length_m: length, bumps, pressure }
}

fn bump_sum(bumps: &[Bump], x: f64) -> f64 {
    bumps
        .iter()
        .map(|b| {
            let z = (x - b.center_m) / b.width_m;
            b.amplitude * (-0.5 * z * z).exp()
        })
        .sum()
}

/// Station ids of the default network, `S01`..`S55`.
fn station_id(k: usize) -> String {
    format!("S{k:02}")
}

/// Three lines of 20, 19, and 19 stations crossing at three transfer
/// stations (55 stations, 55 tunnels). The crossings sit at uneven positions
/// so the network has no symmetry.
pub fn default_metro() -> MetroMap {
    let mut next = 1;
    let mut fresh = || {
        let id = station_id(next);
        next += 1;
        id
    };
    let mut l1: Vec<String> = (0..20).map(|_| fresh()).collect();
    let mut l2: Vec<String> = (0..19).map(|_| fresh()).collect();
    let mut l3: Vec<String> = (0..19).map(|_| fresh()).collect();
    // transfers: L1[5] = L2[7], L1[13] = L3[4], L2[12] = L3[10]
    l2[7] = l1[5].clone();
    l3[4] = l1[13].clone();
    l3[10] = l2[12].clone();
    // close the numbering gaps left by the shared stations
    let mut rename: BTreeMap<String, String> = BTreeMap::new();
    let mut k = 1;
    for s in l1.iter().chain(&l2).chain(&l3) {
        if !rename.contains_key(s) {
            rename.insert(s.clone(), station_id(k));
            k += 1;
        }
    }
    for line in [&mut l1, &mut l2, &mut l3] {
        for s in line.iter_mut() {
            *s = rename[s].clone();
        }
    }
    MetroMap::new(vec![
        Line { name: "L1".into(), stations: l1 },
        Line { name: "L2".into(), stations: l2 },
        Line { name: "L3".into(), stations: l3 },
    ])
    .expect("default network is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_metro_shape() {
        let m = default_metro();
        assert_eq!(m.stations.len(), 55);
        assert_eq!(m.transfer_stations().len(), 3);
        assert_eq!(m.tunnels().len(), 19 + 18 + 18);
        assert_eq!(m.directed_tunnels().len(), 2 * 55);
    }

    #[test]
    fn world_is_deterministic() {
        let m = default_metro();
        assert_eq!(gen_world(&m, 7), gen_world(&m, 7));
        assert_ne!(gen_world(&m, 7), gen_world(&m, 8));
        assert_eq!(gen_world(&m, 7).tunnel_profiles.len(), 110);
    }

    #[test]
    fn pressure_profiles_bridge_stations() {
        let w = gen_world(&default_metro(), 3);
        for (key, p) in &w.tunnel_profiles {
            assert!((p.pressure[0] - w.station_pressure[&key.from]).abs() < 1e-9);
            assert!((p.pressure.last().unwrap() - w.station_pressure[&key.to]).abs() < 1e-9);
            assert!(p.pressure.iter().all(|v| (950.0..=1050.0).contains(v)));
        }
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn distinct_tunnels_are_weakly_correlated() {
        let metro = default_metro();
        let keys = metro.directed_tunnels();
        let mut total = 0.0;
        for seed in 0..100 {
            let w = gen_world(&metro, seed);
            let sample = |p: &TunnelProfile| -> Vec<f64> {
                (0..200).map(|i| p.mag_at(p.length_m * i as f64 / 199.0)).collect()
            };
            let a = sample(w.profile(&keys[0]).unwrap());
            let b = sample(w.profile(&keys[1]).unwrap());
            total += correlation(&a, &b);
        }
        assert!(total / 100.0 < 0.5, "mean correlation {}", total / 100.0);
    }

    #[test]
    fn rotations_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let r = random_rotation(&mut rng);
            let mut rt = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    rt[i][j] = r[j][i];
                }
            }
            let p = matmul(&r, &rt);
            for i in 0..3 {
                for j in 0..3 {
                    assert!((p[i][j] - IDENTITY[i][j]).abs() < 1e-12);
                }
            }
        }
    }
}
