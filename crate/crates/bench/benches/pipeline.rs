use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use fim_bench::fixture;
use fim_core::fpem::{fpem_forward, BandMasks, FilterKind, FpemParams, FusionMode};
use fim_core::model::{Example, FimModel};
use fim_core::numerics::{adam_step, rfft, AdamConfig, AdamState, ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bench_fft(c: &mut Criterion) {
    let mut group = c.benchmark_group("rfft");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [26, 64, 100, 512, 2048] {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &x, |b, x| b.iter(|| rfft(black_box(x)).unwrap()));
    }
    group.finish();
}

fn bench_fpem(c: &mut Criterion) {
    const D: usize = 32;
    let mut group = c.benchmark_group("fpem_forward");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let params = FpemParams::register(&mut store, D, 8, false, &mut rng).unwrap();
    let side = Tensor::row((0..8).map(|_| rng.gen_range(-1.0..1.0)).collect());
    for n in [64, 512, 1024, 2048] {
        let masks = BandMasks::new(n, FilterKind::Trunc { p: 5 }).unwrap();
        let x = Tensor::matrix(n, D, (0..n * D).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &x, |b, x| {
            b.iter(|| {
                let mut tape = Tape::new(&store);
                let e = tape.constant(x.clone());
                let s = tape.constant(side.clone());
                black_box(fpem_forward(&mut tape, e, Some(s), &params, &masks, FusionMode::Beta).unwrap());
            })
        });
    }
    group.finish();
}

fn bench_train_step(c: &mut Criterion) {
    let (cfg, prepared) = fixture(40);
    let (model, store) = FimModel::new(&prepared.model_cfg, &prepared.encoder, cfg.seed().unwrap()).unwrap();
    let batch: Vec<&Example> = prepared.train.iter().take(32).collect();
    let adam = AdamConfig::default();
    c.bench_function("train_step_batch32", |b| {
        let mut store = store.clone();
        let mut state = AdamState::new(&store);
        b.iter(|| {
            let (_, grads) = model.batch_loss(&store, &batch).unwrap();
            adam_step(&mut store, &grads, &mut state, &adam).unwrap();
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = bench_fft, bench_fpem, bench_train_step
}
criterion_main!(benches);
