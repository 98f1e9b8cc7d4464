//! Step throughput at 1 and N workers, plus the per-unit MLP kernels.
//!
//! `cargo bench -p pvm-core` measures the rayon path;
//! `cargo bench -p pvm-core --no-default-features` runs the same phases
//! sequentially on the calling thread for comparison.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pvm_core::mlp::{Mlp, MlpShape, SgdStep};
use pvm_core::{Frame, Mode, PvmConfig, Regime, System};
use std::hint::black_box;

fn workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).clamp(2, 8)
}

fn bench_steps(c: &mut Criterion) {
    let mode_name = if cfg!(feature = "parallel") { "rayon" } else { "sequential" };
    for (name, cfg) in [("desk", PvmConfig::desk()), ("reference", PvmConfig::reference())] {
        let frame = Frame::filled(cfg.frame.w, cfg.frame.h, 0.5);
        let mut group = c.benchmark_group(format!("{name}/{mode_name}"));
        group.sample_size(20);
        for w in [1, workers()] {
            let mut eval = System::new(cfg.clone(), w).unwrap();
            group.bench_with_input(BenchmarkId::new("eval_step", w), &w, |b, _| {
                b.iter(|| eval.step(black_box(&frame), None, Mode::Eval).unwrap())
            });
            let mut train = System::new(cfg.clone(), w).unwrap();
            group.bench_with_input(BenchmarkId::new("train_step", w), &w, |b, _| {
                b.iter(|| train.step(black_box(&frame), None, Mode::Train(Regime::Unsupervised)).unwrap())
            });
        }
        group.finish();
    }
}

fn bench_mlp(c: &mut Criterion) {
    // a reference layer-0 unit
    let shape = MlpShape::new(4 * 108 + 49 * 7, 49, 108, 4);
    let mut mlp = Mlp::new(shape, 1).unwrap();
    let x: Vec<f64> = (0..shape.input).map(|i| (i % 17) as f64 / 17.0).collect();
    let tp = vec![0.3; shape.predict];
    let tr = vec![0.5; shape.readout];
    let step = SgdStep {
        lr_predict: 0.0002,
        lr_readout: 0.0002,
        joint: true,
        readout_mix: 1.0,
    };
    c.bench_function("mlp/forward", |b| b.iter(|| mlp.forward(black_box(&x)).unwrap()));
    c.bench_function("mlp/forward_backward", |b| {
        b.iter(|| {
            let act = mlp.forward(black_box(&x)).unwrap();
            mlp.backward_sgd(&act, &tp, &tr, step).unwrap();
        })
    });
}

criterion_group!(benches, bench_steps, bench_mlp);
criterion_main!(benches);
