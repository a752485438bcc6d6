//! Sequential (one-thread pool) against parallel (default pool) runs of the
//! main pipeline stages. Build with `--no-default-features` to measure the
//! plain sequential fallback instead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rayon::ThreadPool;

use voxid::eval::{FeatureCorpus, GridPoint};
use voxid::synth::{self, SynthParams};
use voxid::{em_fit, kmeans_fit, EngineConfig, FeatureMatrix, MfccExtractor};

fn pools() -> Vec<(&'static str, ThreadPool)> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    vec![("sequential", one), ("parallel", all)]
}

fn bench_pipeline(c: &mut Criterion) {
    let cfg = EngineConfig::default();
    let params = SynthParams { duration: (3.0, 3.0), ..SynthParams::default() };
    let corpus = synth::generate_corpus(4, 5, 42, &params).unwrap();
    let extractor = MfccExtractor::new(&cfg.mfcc, cfg.sample_rate).unwrap();
    let audio = &corpus[0].audio;
    let features: Vec<FeatureMatrix> = corpus.iter().take(4).map(|u| extractor.extract(&u.audio).unwrap()).collect();
    let train = FeatureMatrix::concat(cfg.mfcc.n_coeffs, &features).unwrap();
    let feature_corpus = FeatureCorpus::from_synth(&corpus, &cfg).unwrap();
    let grid = [GridPoint::vq(16), GridPoint::gmm(4, 12)];

    let pools = pools();
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    for (name, pool) in &pools {
        group.bench_function(BenchmarkId::new("mfcc_3s", name), |b| {
            pool.install(|| b.iter(|| extractor.extract(audio).unwrap()))
        });
        group.bench_function(BenchmarkId::new("kmeans_k16", name), |b| {
            pool.install(|| b.iter(|| kmeans_fit(&train, 16, 42, 100).unwrap()))
        });
        group.bench_function(BenchmarkId::new("em_m4_12it", name), |b| {
            pool.install(|| b.iter(|| em_fit(&train, 4, 42, 12, 1e-5).unwrap()))
        });
        group.bench_function(BenchmarkId::new("evaluate_4spk", name), |b| {
            pool.install(|| b.iter(|| feature_corpus.evaluate(&grid).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_pipeline);
criterion_main!(benches);
