//! Parallel-vs-sequential benchmarks for the data-parallel inner loops:
//! kernel assembly, batch teacher inference, batch GP prediction and
//! multi-start acquisition maximization.
//!
//! The "serial" arms run the dedicated sequential twin (or the same code in
//! a one-thread pool); the "parallel" arms use the default rayon pool. Both
//! paths produce bitwise-identical outputs, so the comparison is purely
//! about throughput.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;
use tsbo_core::acquisition::{maximize_acquisition, BoundBox};
use tsbo_core::gp::{kernel_matrix, kernel_matrix_serial, FittedGp, GpHyper, LabeledSet};
use tsbo_core::numerics::DenseMatrix;
use tsbo_core::teacher::{teacher_forward, TeacherNet};

fn random_inputs(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DenseMatrix {
    let data: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    DenseMatrix::new(n, d, data).unwrap()
}

fn one_thread_pool() -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("single-thread pool")
}

fn bench_kernel_matrix(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let h = GpHyper::default_init();
    let mut group = c.benchmark_group("kernel_matrix");
    for n in [128usize, 384] {
        let a = random_inputs(&mut rng, n, 16);
        group.bench_with_input(BenchmarkId::new("serial", n), &n, |b, _| {
            b.iter(|| kernel_matrix_serial(black_box(&h), black_box(&a), black_box(&a)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("parallel", n), &n, |b, _| {
            b.iter(|| kernel_matrix(black_box(&h), black_box(&a), black_box(&a)).unwrap())
        });
    }
    group.finish();
}

fn bench_teacher_forward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = TeacherNet::init(16, 64, &mut rng);
    let z = random_inputs(&mut rng, 512, 16);
    let pool1 = one_thread_pool();
    let mut group = c.benchmark_group("teacher_forward_512x16");
    group.bench_function("serial(1-thread)", |b| {
        b.iter(|| pool1.install(|| teacher_forward(black_box(&net), black_box(&z)).unwrap()))
    });
    group.bench_function("parallel", |b| {
        b.iter(|| teacher_forward(black_box(&net), black_box(&z)).unwrap())
    });
    group.finish();
}

fn bench_gp_predict(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = GpHyper {
        log_outputscale: 0.0,
        log_lengthscale: 0.0,
        log_noise: (0.01_f64).ln(),
        mean_const: 0.0,
    };
    let n = 160;
    let z = random_inputs(&mut rng, n, 10);
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let data = LabeledSet::new(z, y).unwrap();
    let gp = FittedGp::fit(&h, &data, None).unwrap();
    let query = random_inputs(&mut rng, 256, 10);
    let pool1 = one_thread_pool();
    let mut group = c.benchmark_group("gp_predict_256_queries");
    group.bench_function("serial(1-thread)", |b| {
        b.iter(|| pool1.install(|| gp.predict(black_box(&query)).unwrap()))
    });
    group.bench_function("parallel", |b| {
        b.iter(|| gp.predict(black_box(&query)).unwrap())
    });
    group.finish();
}

fn bench_acquisition(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = GpHyper {
        log_outputscale: 0.0,
        log_lengthscale: 0.0,
        log_noise: (0.01_f64).ln(),
        mean_const: 0.0,
    };
    let n = 64;
    let z = random_inputs(&mut rng, n, 8);
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let data = LabeledSet::new(z, y).unwrap();
    let bounds = BoundBox::cube(8, -3.0, 3.0).unwrap();
    let pool1 = one_thread_pool();
    let mut group = c.benchmark_group("maximize_acquisition_16_restarts");
    group.sample_size(20);
    group.bench_function("serial(1-thread)", |b| {
        b.iter(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            pool1.install(|| {
                maximize_acquisition(&h, &data, None, 1.0, &bounds, 16, 50, &mut rng).unwrap()
            })
        })
    });
    group.bench_function("parallel", |b| {
        b.iter(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            maximize_acquisition(&h, &data, None, 1.0, &bounds, 16, 50, &mut rng).unwrap()
        })
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_kernel_matrix,
    bench_teacher_forward,
    bench_gp_predict,
    bench_acquisition
);
criterion_main!(benches);
