use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use pedarec_bench::{workload, Size};
use pedarec_core::{candidate_set, cosine, refine, similar_sessions, CfParams};

fn bench_cosine(c: &mut Criterion) {
    let mut group = c.benchmark_group("cosine");
    for dim in [8, 32, 128] {
        let a: Vec<f64> = (0..dim).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let b: Vec<f64> = (0..dim).map(|i| (i as f64 * 0.11).cos().abs()).collect();
        group.bench_with_input(BenchmarkId::from_parameter(dim), &dim, |bench, _| {
            bench.iter(|| cosine(black_box(&a), black_box(&b)))
        });
    }
    group.finish();
}

fn bench_stages(c: &mut Criterion) {
    let params = CfParams::default();
    for (name, size) in [("small", Size::SMALL), ("medium", Size::MEDIUM), ("large", Size::LARGE)] {
        let w = workload(size, 42);
        let query = &w.queries[0];
        let vector = w.schema.encode(query).unwrap();
        let peers = similar_sessions(&vector, &w.bank, params.k, params.theta, None);
        let candidates = candidate_set(&peers, &w.bank, params.rho);

        let mut group = c.benchmark_group(name);
        group.bench_function("similar_sessions", |b| {
            b.iter(|| similar_sessions(black_box(&vector), &w.bank, params.k, params.theta, None))
        });
        group.bench_function("candidate_set", |b| {
            b.iter(|| candidate_set(black_box(&peers), &w.bank, params.rho))
        });
        group.bench_function("refine", |b| {
            b.iter(|| refine(black_box(&candidates), query, &w.rules, &w.bank))
        });
        group.bench_function("pipeline", |b| {
            let mut i = 0;
            b.iter(|| {
                let q = &w.queries[i % w.queries.len()];
                i += 1;
                let v = w.schema.encode(q).unwrap();
                let peers = similar_sessions(&v, &w.bank, params.k, params.theta, None);
                let cands = candidate_set(&peers, &w.bank, params.rho);
                refine(&cands, q, &w.rules, &w.bank)
            })
        });
        group.finish();
    }
}

criterion_group!(benches, bench_cosine, bench_stages);
criterion_main!(benches);
