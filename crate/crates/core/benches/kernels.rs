use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use membrane::{
    build_geometry, build_operators, decompose, decompose_batch, exec, shapes, AmbientField, DecomposeOptions, Vec3,
};

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

fn thread_counts() -> Vec<usize> {
    let max = std::thread::available_parallelism().map_or(1, |n| n.get());
    if max > 1 && exec::is_parallel() {
        vec![1, max]
    } else {
        vec![1]
    }
}

fn fields(n: usize, count: usize) -> Vec<AmbientField> {
    (0..count)
        .map(|k| {
            AmbientField::from_fn(n, |i| {
                let t = (i * 7 + k * 13) as f64;
                Vec3::new(t.sin(), (0.3 * t).cos(), (1.7 * t).sin())
            })
        })
        .collect()
}

fn operator_assembly(c: &mut Criterion) {
    let mesh = shapes::icosphere(5, 1.0).unwrap();
    let mut group = c.benchmark_group("operator_assembly");
    group.sample_size(10);
    for threads in thread_counts() {
        let pool = pool(threads);
        group.bench_with_input(BenchmarkId::new("threads", threads), &threads, |b, _| {
            b.iter(|| {
                pool.install(|| {
                    let geo = build_geometry(&mesh, mesh.reference_positions()).unwrap();
                    build_operators(&geo, &mesh).unwrap()
                })
            })
        });
    }
    group.finish();
}

fn batch_decomposition(c: &mut Criterion) {
    let mesh = shapes::icosphere(4, 1.0).unwrap();
    let geo = build_geometry(&mesh, mesh.reference_positions()).unwrap();
    let ops = build_operators(&geo, &mesh).unwrap();
    let batch = fields(mesh.n_vertices(), 16);
    let opts = DecomposeOptions::default();
    decompose(&ops, &batch[0]).unwrap();

    let mut group = c.benchmark_group("batch_decomposition");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter(|| batch.iter().map(|x| decompose(&ops, x).unwrap()).collect::<Vec<_>>())
    });
    for threads in thread_counts() {
        let pool = pool(threads);
        group.bench_with_input(BenchmarkId::new("parallel", threads), &threads, |b, _| {
            b.iter(|| pool.install(|| decompose_batch(&ops, &batch, &opts).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, operator_assembly, batch_decomposition);
criterion_main!(benches);
