use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use quenched::{
    birkhoff_samples, build_ulam, center, sample_path, twisted_eigendata, BaseSystem, CircleMap, Cocycle, Complex64,
    EigenSettings, EquivariantChain, GridDensity, GridObservable, MapFamily, Observable, ObservableFn,
    PiecewiseLinearMap, SmoothCircleMap,
};

fn family() -> MapFamily {
    MapFamily::new(vec![
        CircleMap::PiecewiseLinear(PiecewiseLinearMap::multiply_mod1(3).unwrap()),
        CircleMap::PiecewiseLinear(PiecewiseLinearMap::scale(0.5).unwrap()),
    ])
    .unwrap()
}

fn cocycle(resolution: usize, n_fwd: usize) -> Cocycle {
    let base = BaseSystem::iid(vec![0.7, 0.3], 42).unwrap();
    Cocycle::new(sample_path(&base, 136, n_fwd).unwrap(), family(), resolution).unwrap()
}

fn ulam(c: &mut Criterion) {
    let mut g = c.benchmark_group("build_ulam");
    let smooth = CircleMap::SmoothCircle(SmoothCircleMap::new(3, 1.5, 0.25).unwrap());
    for n in [1024usize, 4096] {
        g.bench_with_input(BenchmarkId::new("smooth", n), &n, |b, &n| {
            b.iter(|| build_ulam(black_box(&smooth), n).unwrap())
        });
    }
    g.finish();
}

fn apply(c: &mut Criterion) {
    let mut g = c.benchmark_group("apply");
    for n in [1024usize, 4096] {
        let op = build_ulam(&CircleMap::PiecewiseLinear(PiecewiseLinearMap::multiply_mod1(3).unwrap()), n).unwrap();
        let d = GridDensity::uniform(n);
        g.bench_with_input(BenchmarkId::new("times3", n), &n, |b, _| b.iter(|| op.apply(None, black_box(&d)).unwrap()));
    }
    g.finish();
}

fn eigendata(c: &mut Criterion) {
    let co = cocycle(1024, 600);
    let obs = Observable::uniform(ObservableFn::cos(), 2).unwrap();
    let grid = GridObservable::new(&obs, co.family(), 1024);
    let settings = EigenSettings::new(64, 500);
    co.operator(0).unwrap();
    c.bench_function("twisted_eigendata/1024x500", |b| {
        b.iter(|| twisted_eigendata(&co, &grid, Complex64::new(0.3, 0.1), &settings).unwrap())
    });
}

fn sampling(c: &mut Criterion) {
    let co = cocycle(1024, 600);
    let chain = EquivariantChain::build(&co, 0, 520, 64).unwrap();
    let obs = Observable::uniform(ObservableFn::cos(), 2).unwrap();
    let centered = center(&obs, &co, &chain, 0, 520).unwrap().observable;
    let v0 = chain.density(0).unwrap();
    let mut g = c.benchmark_group("birkhoff_samples");
    g.sample_size(10);
    g.bench_function("n500_m1000", |b| {
        b.iter(|| birkhoff_samples(&co, &centered, &v0, &[500], 1000, 7).unwrap())
    });
    g.finish();
}

criterion_group!(benches, ulam, apply, eigendata, sampling);
criterion_main!(benches);
