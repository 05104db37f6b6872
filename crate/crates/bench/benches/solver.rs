use criterion::{criterion_group, criterion_main, Criterion};
use hho_core::assembly::{condense_and_solve, Discretization};
use hho_core::experiments::{test_a_problem, ExperimentConfig};
use hho_core::local_ops::{build_face_data, ElementContext};

fn local_operators(c: &mut Criterion) {
    let cfg = ExperimentConfig { k: 1, ..ExperimentConfig::default() };
    let (problem, _) = test_a_problem(&cfg, 8).unwrap();
    let mesh = &problem.mesh;
    let faces = build_face_data(mesh, 1, &problem.enrichment, &[]).unwrap();
    let cut = mesh.elements.iter().find(|e| e.cut_by.is_some()).unwrap();
    c.bench_function("local operators, cut enriched element, k=1", |b| {
        b.iter(|| {
            let ctx = ElementContext::new(mesh, cut, 1, &problem.enrichment, &faces, &[]).unwrap();
            ctx.operators(&faces).unwrap()
        })
    });
}

fn full_solve(c: &mut Criterion) {
    let cfg = ExperimentConfig { k: 1, ..ExperimentConfig::default() };
    let (problem, _) = test_a_problem(&cfg, 8).unwrap();
    let mut group = c.benchmark_group("test A, n=8, k=1");
    group.sample_size(10);
    group.bench_function("discretise", |b| b.iter(|| Discretization::new(&problem).unwrap()));
    let disc = Discretization::new(&problem).unwrap();
    group.bench_function("condense and solve", |b| b.iter(|| condense_and_solve(&disc).unwrap()));
    group.finish();
}

criterion_group!(benches, local_operators, full_solve);
criterion_main!(benches);
