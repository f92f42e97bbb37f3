//! Synthetic events for unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::model::{MagSample, RunningEvent, StopEvent, StopEvidence, TraceEvent, UserTrace};

pub const PERIOD: f64 = 0.2;

/// Magnetic magnitude profile of tunnel `seed`: twelve bumps of ±150..450 µT.
pub fn profile(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bumps: Vec<(f64, f64, f64)> = (0..12)
        .map(|_| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            (rng.gen_range(0.0..len as f64), sign * rng.gen_range(150.0..450.0), rng.gen_range(4.0..10.0))
        })
        .collect();
    (0..len)
        .map(|i| 50.0 + bumps.iter().map(|(c, a, w)| a * (-((i as f64 - c) / w).powi(2)).exp()).sum::<f64>())
        .collect()
}

/// Traversal of tunnel `seed` starting at `bt`, with magnitude noise `sigma`
/// drawn from `noise_seed`.
pub fn event(seed: u64, bt: f64, len: usize, sigma: f64, noise_seed: u64) -> RunningEvent {
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let m_trace = profile(seed, len)
        .into_iter()
        .enumerate()
        .map(|(i, m)| {
            let noise: f64 = rng.sample(StandardNormal);
            MagSample::from_axes(bt + (i + 1) as f64 * PERIOD, m + sigma * noise, 0.0, 0.0).unwrap()
        })
        .collect();
    RunningEvent { bt, et: bt + (len + 1) as f64 * PERIOD, b_trace: Vec::new(), m_trace, tunnel: None }
}

/// User trace riding tunnels `seeds` in order, 30 s stops in between.
pub fn trace(trip_id: &str, seeds: &[u64], evidence: StopEvidence, noise_seed: u64) -> UserTrace {
    let mut events = Vec::new();
    let mut t = 0.0;
    let stop = |bt: f64| TraceEvent::Stop(StopEvent { bt, et: bt + 30.0, station_id: None, evidence });
    events.push(stop(t));
    t += 30.0;
    for (k, &s) in seeds.iter().enumerate() {
        let re = event(s, t, 300, 1.0, noise_seed * 1000 + k as u64);
        t = re.et;
        events.push(TraceEvent::Running(re));
        events.push(stop(t));
        t += 30.0;
    }
    UserTrace { trip_id: trip_id.into(), events }
}

#[test]
fn profiles_are_far_apart() {
    use crate::matching::{feature_distance, EventFeatures, MatchConfig};
    let f: Vec<EventFeatures> = (0..8).map(|s| EventFeatures::from_event(&event(s, 0.0, 300, 1.0, s)).unwrap()).collect();
    let mut min = f64::INFINITY;
    for i in 0..8 {
        for j in 0..8 {
            if i != j {
                min = min.min(feature_distance(&f[i], &f[j], &MatchConfig::default()).unwrap());
            }
        }
    }
    let same = feature_distance(&f[0], &EventFeatures::from_event(&event(0, 0.0, 300, 1.0, 99)).unwrap(), &MatchConfig::default()).unwrap();
    assert!(min > 16.0 && same < 2.0, "min cross {min} same {same}");
}
