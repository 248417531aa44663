use std::sync::Arc;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use halobench::harness::{self, BenchConfig, Strategy};
use halobench::meshdata::{self, PackBuffer};
use halobench::{grid, LocalMesh, ProcessGrid};

fn bench_pack(c: &mut Criterion) {
    let g = ProcessGrid::build(1, 3).unwrap();
    let extents = [32, 32, 32];
    let regions = grid::boundary_regions(extents, 1, &g, [0, 0, 0]).unwrap();
    let mut mesh = LocalMesh::new(extents, 1, 3);
    let mut x = 0.0;
    mesh.fill_with(|_, _| {
        x += 1.0;
        x
    });
    let face = regions.iter().find(|e| e.offset.order() == 1).unwrap();
    let buf = Arc::new(PackBuffer::new(face.send.cell_count() * 3, 1));
    c.bench_function("pack_face_32x32_3vars", |b| {
        b.iter(|| meshdata::pack(&mesh, &face.send, &buf).unwrap());
    });
}

fn bench_strategies(c: &mut Criterion) {
    let mut group = c.benchmark_group("single_rank_exchange");
    group.measurement_time(Duration::from_secs(5));
    for strategy in Strategy::ALL {
        group.bench_with_input(
            BenchmarkId::from_parameter(strategy),
            &strategy,
            |b, &strategy| {
                let config = BenchConfig {
                    global_extents: [16, 16, 16],
                    ranks: 1,
                    n_workers: 2,
                    strategy,
                    iterations: 50,
                    runs: 1,
                    trace: false,
                    ..BenchConfig::desk_default(strategy)
                };
                b.iter(|| harness::run_benchmark(&config).unwrap());
            },
        );
    }
    group.finish();
}

criterion_group!(benches, bench_pack, bench_strategies);
criterion_main!(benches);
