use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use mloc_core::detect::{segment_trace, DetectorConfig};
use mloc_core::matching::{dtw, feature_distance, EventFeatures, MatchConfig};
use mloc_core::model::UserTrace;
use mloc_core::sim::{default_metro, gen_corpus, gen_world, CorpusConfig};

fn traces(n: usize) -> Vec<UserTrace> {
    let world = gen_world(&default_metro(), 1);
    let corpus = gen_corpus(&world, &CorpusConfig { n_trips: n, ..Default::default() }, 2).unwrap();
    corpus.iter().filter_map(|t| segment_trace(&t.trace, &DetectorConfig::default()).ok()).collect()
}

fn events(n: usize) -> Vec<EventFeatures> {
    traces(20)
        .iter()
        .flat_map(|ut| ut.running_events().filter_map(|re| EventFeatures::from_event(re).ok()).collect::<Vec<_>>())
        .take(n)
        .collect()
}

fn bench_dtw(c: &mut Criterion) {
    let ev = events(2);
    let (a, b) = (&ev[0].mag.v, &ev[1].mag.v);
    let mut g = c.benchmark_group("dtw");
    g.bench_function(BenchmarkId::new("unbanded", a.len()), |bench| bench.iter(|| dtw(black_box(a), black_box(b), None)));
    g.bench_function(BenchmarkId::new("band40", a.len()), |bench| bench.iter(|| dtw(black_box(a), black_box(b), Some(40))));
    g.finish();
}

fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

fn bench_pairwise(c: &mut Criterion) {
    let ev = events(24);
    let pairs = all_pairs(ev.len());
    let cfg = MatchConfig::default();
    let dist = |&(i, j): &(usize, usize)| feature_distance(&ev[i], &ev[j], &cfg).unwrap();
    let mut g = c.benchmark_group("pairwise_distances");
    g.sample_size(10);
    g.bench_function("sequential", |bench| bench.iter(|| pairs.iter().map(dist).collect::<Vec<f64>>()));
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        g.bench_function("parallel", |bench| bench.iter(|| pairs.par_iter().map(dist).collect::<Vec<f64>>()));
    }
    g.finish();
}

fn bench_segmentation(c: &mut Criterion) {
    let world = gen_world(&default_metro(), 1);
    let corpus = gen_corpus(&world, &CorpusConfig { n_trips: 16, ..Default::default() }, 2).unwrap();
    let cfg = DetectorConfig::default();
    let seg = |t: &mloc_core::sim::LabeledTrip| segment_trace(&t.trace, &cfg).ok();
    let mut g = c.benchmark_group("segment_corpus");
    g.sample_size(10);
    g.bench_function("sequential", |bench| bench.iter(|| corpus.iter().map(seg).collect::<Vec<_>>()));
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        g.bench_function("parallel", |bench| bench.iter(|| corpus.par_iter().map(seg).collect::<Vec<_>>()));
    }
    g.finish();
}

criterion_group!(benches, bench_dtw, bench_pairwise, bench_segmentation);
criterion_main!(benches);
