//! Throughput comparison of the sequential and rayon paths, plus
//! per-estimate costs at the large benchmark size.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ebridge::bayes::{bayes_estimate, SamplerConfig};
use ebridge::biased::biased_estimate;
use ebridge::eb::{eb_regularized_estimate, EbTunerConfig};
use ebridge::estimators::{ml_estimate, PhiSvd};
use ebridge::prior::WeightingParams;
use ebridge::simulate::{generate_collection, noisy_output, DelayConvention, InputScaling};
use ebridge::streams::{substream, Purpose};
use ebridge::study::{run_mc_study, StudyConfig};
use ebridge::xmse::{xmse_empirical, EstimatorSelect, InstanceDraw};

fn small_study() -> StudyConfig {
    StudyConfig {
        n: 5,
        n_samples: 15,
        n_collections: 8,
        n_mc: 25,
        m_s: Some(100),
        c1_c2_list: vec![(0.0, 1.0)],
        seed: 1,
        ..Default::default()
    }
}

fn bench_study(c: &mut Criterion) {
    let cfg = small_study();
    let mut group = c.benchmark_group("mc_study");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("threads", 1), |b| {
        b.iter(|| run_mc_study(&cfg, 1).unwrap())
    });
    group.bench_function(BenchmarkId::new("threads", 0), |b| {
        b.iter(|| run_mc_study(&cfg, 0).unwrap())
    });
    group.finish();
}

fn bench_xmse_empirical(c: &mut Criterion) {
    let select = EstimatorSelect::BiasedEb { c1: 0.0, c2: 1.0 };
    let mut group = c.benchmark_group("xmse_empirical_biased");
    group.sample_size(10);
    let run = || {
        xmse_empirical(
            &select,
            5,
            100,
            InputScaling::UnitVariance,
            1.0,
            5000,
            InstanceDraw::PerRep,
            2,
        )
        .unwrap()
    };
    group.bench_function("sequential_pool", |b| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        b.iter(|| pool.install(run))
    });
    group.bench_function("default_pool", |b| b.iter(run));
    group.finish();
}

fn bench_per_estimate(c: &mut Criterion) {
    // Large-study shape: n = 80, N = 360, SNR 5.
    let coll = generate_collection(
        80,
        360,
        InputScaling::Snr(5.0),
        1.0,
        DelayConvention::A,
        3,
        0,
    )
    .unwrap();
    let svd = PhiSvd::new(&coll.phi).unwrap();
    let y = noisy_output(&coll.noise_free, 1.0, 3, 0, 0);
    let cache = svd.cache_for(&y);
    let tuner = EbTunerConfig::default();
    let params = WeightingParams::new(0.0, 1.0, 80).unwrap();
    let sampler = SamplerConfig::new(5000).unwrap();

    let mut group = c.benchmark_group("estimate_n80_N360");
    group.bench_function("ml", |b| b.iter(|| ml_estimate(&cache)));
    group.bench_function("eb_regularized", |b| {
        b.iter(|| eb_regularized_estimate(&cache, 1.0, 360, &tuner))
    });
    group.bench_function("biased", |b| {
        b.iter(|| biased_estimate(&cache, 1.0, 360, &params).unwrap())
    });
    group.sample_size(10);
    group.bench_function("bayes_m5000", |b| {
        b.iter(|| {
            let mut rng = substream(3, Purpose::Sampler, 0, 0);
            bayes_estimate(&cache, 1.0, &params, &sampler, &mut rng).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, bench_study, bench_xmse_empirical, bench_per_estimate);
criterion_main!(benches);
