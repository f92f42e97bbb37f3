//! End-to-end library run: simulate, segment, build, locate.

use mloc_core::builder::{build_map, BuildConfig};
use mloc_core::detect::{segment_trace, DetectorConfig};
use mloc_core::eval::{accuracy_by_length, terminus_hints};
use mloc_core::locator::{locate_trace, StreamingLocator};
use mloc_core::model::{TraceEvent, UserTrace};
use mloc_core::sim::{default_metro, gen_corpus, gen_world, CorpusConfig, GroundTruth};

fn segmented(n: usize, world_seed: u64, seed: u64) -> (mloc_core::sim::SyntheticWorld, Vec<(UserTrace, GroundTruth)>) {
    let world = gen_world(&default_metro(), world_seed);
    let corpus = gen_corpus(&world, &CorpusConfig { n_trips: n, ..Default::default() }, seed).unwrap();
    let trips = corpus
        .into_iter()
        .filter_map(|t| segment_trace(&t.trace, &DetectorConfig::default()).ok().map(|u| (u, t.truth)))
        .collect();
    (world, trips)
}

#[test]
fn built_map_locates_held_out_riders() {
    let (world, trips) = segmented(60, 3, 4);
    let hints = terminus_hints(trips.iter().map(|(u, t)| (u, t)), &world.metro);
    let traces: Vec<UserTrace> = trips.iter().map(|(u, _)| u.clone()).collect();
    let cfg = BuildConfig { track_coverage: false, ..Default::default() };
    let out = build_map(&traces, &world.metro, &cfg, &hints).unwrap();
    let map = &out.map;
    assert!(map.coverage() > 0.5, "coverage {}", map.coverage());
    for (key, p) in &map.tunnel_patterns {
        assert!(world.metro.has_tunnel(key));
        assert!(p.members >= 1 && !p.mag.v.is_empty());
    }

    let (_, held) = segmented(80, 3, 5);
    let long: Vec<_> = held.into_iter().filter(|(_, t)| t.tunnels.len() >= 3).collect();
    let buckets = accuracy_by_length(&long, map, &map.config.matching, 3).unwrap();
    assert!(buckets[2].trips >= 10);
    assert!(buckets[2].accuracy() >= 0.8, "{buckets:?}");
}

#[test]
fn streaming_agrees_with_batch_on_the_full_trace() {
    let (world, trips) = segmented(40, 5, 6);
    let hints = terminus_hints(trips.iter().map(|(u, t)| (u, t)), &world.metro);
    let traces: Vec<UserTrace> = trips.iter().map(|(u, _)| u.clone()).collect();
    let cfg = BuildConfig { track_coverage: false, ..Default::default() };
    let map = build_map(&traces, &world.metro, &cfg, &hints).unwrap().map;
    let mcfg = &map.config.matching;
    let mut compared = 0;
    for (ut, _) in trips.iter().filter(|(u, _)| u.running_count() >= 3).take(8) {
        let mut stream = StreamingLocator::new(&map, mcfg).unwrap();
        let mut last_stop = None;
        let mut last = None;
        for e in &ut.events {
            match e {
                TraceEvent::Stop(s) => last_stop = Some(s),
                TraceEvent::Running(re) => last = Some(stream.push(re, last_stop)),
            }
        }
        let batch = locate_trace(ut, &map, mcfg);
        match (last.unwrap(), batch) {
            (Ok(a), Ok(b)) => {
                assert_eq!(a.station_id, b.station_id);
                compared += 1;
            }
            (Err(a), Err(b)) => assert_eq!(a.to_string(), b.to_string()),
            (a, b) => panic!("stream {a:?} vs batch {b:?}"),
        }
    }
    assert!(compared > 0);
}
