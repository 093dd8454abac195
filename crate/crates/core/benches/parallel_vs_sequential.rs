//! Parallel and sequential paths on the hot spots of one training epoch.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use css_core::config::RunConfig;
use css_core::data::{strong_augment, weak_augment};
use css_core::losses::{dnn_objective, SslBatch};
use css_core::metrics::test_accuracy;
use css_core::par;
use css_core::selection::compute_scores;
use css_core::training::{init_aux, init_classifier, prepare, run_epoch, TrainState};

fn paths() -> [(&'static str, bool); 2] {
    [("parallel", false), ("sequential", true)]
}

fn bench(c: &mut Criterion) {
    let cfg = RunConfig::default();
    let prepared = prepare(&cfg).expect("default config prepares");
    let classifier = init_classifier(&cfg).expect("valid dims");
    let aux = init_aux(&cfg, &prepared.aux_pretrain).expect("valid aux");
    let train = &prepared.train;

    let mut batch = SslBatch::default();
    for i in 0..cfg.batch_size {
        let x = train.x(i);
        let (w1, w2) = (
            weak_augment(x, cfg.sigma_w, 2 * i as u64),
            weak_augment(x, cfg.sigma_w, 2 * i as u64 + 1),
        );
        if i % 4 == 0 {
            batch.x_weak.push(w1);
            batch.x_weak2.push(w2);
            batch.x_labels.push(train.observed_labels[i]);
        } else {
            batch
                .u_strong
                .push(strong_augment(x, cfg.sigma_s, cfg.drop_prob, i as u64));
            batch.u_weak.push(w1);
            batch.u_weak2.push(w2);
        }
    }
    let ssl = cfg.ssl();

    let mut group = c.benchmark_group("scores");
    for (name, seq) in paths() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::force_sequential(seq);
            b.iter(|| compute_scores(black_box(train), &classifier.net, &aux).unwrap());
        });
    }
    group.finish();

    let mut group = c.benchmark_group("batch_objective");
    for (name, seq) in paths() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::force_sequential(seq);
            b.iter(|| dnn_objective(&classifier.net, black_box(&batch), &ssl).unwrap());
        });
    }
    group.finish();

    let mut group = c.benchmark_group("test_accuracy");
    for (name, seq) in paths() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::force_sequential(seq);
            b.iter(|| test_accuracy(&classifier.net, black_box(&prepared.test)).unwrap());
        });
    }
    group.finish();

    let mut group = c.benchmark_group("main_epoch");
    group.sample_size(10);
    for (name, seq) in paths() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::force_sequential(seq);
            b.iter(|| {
                let mut state = TrainState {
                    classifier: classifier.clone(),
                    aux: aux.clone(),
                };
                run_epoch(&mut state, train, &prepared.test, &cfg, 0).unwrap()
            });
        });
    }
    group.finish();
    par::force_sequential(false);
}

criterion_group!(benches, bench);
criterion_main!(benches);
