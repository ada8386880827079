//! Rayon fan-out against the sequential twin on the two hot paths:
//! trajectory integration (dataset generation) and per-sample gradient
//! evaluation (the inner training loop). Both routes must agree bit for
//! bit, so each gradient bench also folds its results through the same
//! pairwise reduction the trainer uses and the harness asserts equality
//! once before timing.

use std::collections::BTreeMap;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::Rng;

use sigdyn::autodiff::{Tape, Tensor};
use sigdyn::dde::{integrate, make_system};
use sigdyn::models::{DecoderConfig, EncoderConfig, Model};
use sigdyn::parallel::{map_indexed, map_indexed_serial, tree_reduce};
use sigdyn::rng::derive_rng;
use sigdyn::series::TimeSeries;

fn bench_trajectory_fanout(c: &mut Criterion) {
    let sys = make_system("spiral_dde", &BTreeMap::new()).unwrap();
    let mut rng = derive_rng(17, "bench-ics", 0);
    let n = 32usize;
    let ics: Vec<Vec<f64>> =
        (0..n).map(|_| (0..2).map(|_| rng.gen_range(-1.5..1.5)).collect()).collect();
    let step = (sys.t_end - sys.t_start) / 400.0;

    let solve = |i: usize| integrate(&sys, &ics[i], sys.t_start, sys.t_end, step).unwrap();
    let par: Vec<TimeSeries> = map_indexed(n, solve);
    let ser: Vec<TimeSeries> = map_indexed_serial(n, solve);
    assert_eq!(par, ser, "scheduling must not change the solution bits");

    let mut group = c.benchmark_group("trajectory_fanout_32");
    group.sample_size(20);
    group.warm_up_time(Duration::from_secs(1));
    group.measurement_time(Duration::from_secs(4));
    group.bench_function("parallel", |b| b.iter(|| map_indexed(n, solve)));
    group.bench_function("serial", |b| b.iter(|| map_indexed_serial(n, solve)));
    group.finish();
}

struct Sample {
    enc: TimeSeries,
    query: Vec<f64>,
    target: Vec<f64>,
}

fn gradient_of(model: &Model, s: &Sample) -> Vec<f64> {
    let tape = Tape::new();
    let fw = model.forward(&tape, &s.enc, &s.query, None).unwrap();
    let refs: Vec<&Tensor> = fw.preds.iter().collect();
    let flat = tape.concat(&refs).unwrap();
    let diff = tape.sub(&flat, &tape.constant(&Tensor::vector(s.target.clone()))).unwrap();
    let loss = tape.mean(&tape.square(&diff).unwrap()).unwrap();
    let grads = tape.backward(&loss).unwrap();
    model.store.flatten_grads(&fw.bound, &grads).unwrap()
}

fn sum_grads(mut a: Vec<f64>, b: Vec<f64>) -> Vec<f64> {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
    a
}

fn bench_batch_gradients(c: &mut Criterion) {
    let model =
        Model::new(EncoderConfig::signature(), DecoderConfig::flow(), 2, 11).unwrap();
    let mut rng = derive_rng(19, "bench-batch", 0);
    let batch: Vec<Sample> = (0..16)
        .map(|_| {
            let len = 60usize;
            let times: Vec<f64> = (0..len).map(|i| 0.05 * i as f64).collect();
            let values: Vec<f64> = (0..len * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Sample {
                enc: TimeSeries::new(times, values, 2).unwrap(),
                query: (1..=5).map(|i| 0.07 * i as f64).collect(),
                target: (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            }
        })
        .collect();

    let run_par = || {
        let grads = map_indexed(batch.len(), |i| gradient_of(&model, &batch[i]));
        tree_reduce(grads, sum_grads).unwrap()
    };
    let run_ser = || {
        let grads = map_indexed_serial(batch.len(), |i| gradient_of(&model, &batch[i]));
        tree_reduce(grads, sum_grads).unwrap()
    };
    assert_eq!(run_par(), run_ser(), "scheduling must not change the gradient bits");

    let mut group = c.benchmark_group("batch_gradients_16");
    group.sample_size(10);
    group.warm_up_time(Duration::from_secs(1));
    group.measurement_time(Duration::from_secs(5));
    group.bench_function("parallel", |b| b.iter(run_par));
    group.bench_function("serial", |b| b.iter(run_ser));
    group.finish();
}

criterion_group!(benches, bench_trajectory_fanout, bench_batch_gradients);
criterion_main!(benches);
