use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use volterra_core::kernel::FbmKernel;
use volterra_core::malliavin::{variation_series, weighted_kernel_v0, DEFAULT_SERIES_TOL, DEFAULT_TERMS};
use volterra_core::simulate::sample_brownian;
use volterra_core::solver::{SdeProblem, Solver, SolverConfig};
use volterra_core::specialfn::{hyp2f1, HypergeometricParams};
use volterra_core::{Grid, KernelMatrix, KernelSpec, Mode};

fn special_functions(c: &mut Criterion) {
    let mut g = c.benchmark_group("hyp2f1");
    for z in [-0.3, -5.0, -200.0] {
        let p = HypergeometricParams::new(-0.25, 0.25, 1.25, z);
        g.bench_with_input(BenchmarkId::from_parameter(z), &p, |b, p| {
            b.iter(|| hyp2f1(black_box(*p)).unwrap())
        });
    }
    g.finish();
    let k = FbmKernel::new(0.25).unwrap();
    c.bench_function("fbm_kernel_eval", |b| b.iter(|| k.eval(black_box(0.8), black_box(0.3))));
}

fn kernel_build(c: &mut Criterion) {
    let mut g = c.benchmark_group("kernel_build");
    g.sample_size(10);
    for n in [128usize, 512] {
        let grid = Grid::unit(n).unwrap();
        let spec = KernelSpec::fbm(0.25).unwrap();
        for mode in [Mode::Deterministic, Mode::Stochastic] {
            g.bench_function(BenchmarkId::new(format!("{mode:?}"), n), |b| {
                b.iter(|| KernelMatrix::build(&spec, grid, mode).unwrap())
            });
        }
    }
    g.finish();
}

fn solver(n: usize) -> Solver {
    let spec = KernelSpec::fbm(0.75).unwrap();
    let problem = SdeProblem::new(0.5, spec.clone())
        .with_drift(|_, x| -x + 0.5 * x.sin(), |_, x| -1.0 + 0.5 * x.cos())
        .with_diffusion(
            |_, x| 0.5 / (1.0 + x * x).sqrt(),
            |_, x| -0.5 * x / (1.0 + x * x).powf(1.5),
        );
    Solver::new(problem, SolverConfig::new(Grid::unit(n).unwrap(), &spec).with_tol(1e-12)).unwrap()
}

fn picard(c: &mut Criterion) {
    let mut g = c.benchmark_group("picard_solve");
    g.sample_size(20);
    for n in [256usize, 1024] {
        let s = solver(n);
        let bm = sample_brownian(*s.grid(), 1);
        g.bench_function(BenchmarkId::from_parameter(n), |b| b.iter(|| s.picard_solve(&bm).unwrap()));
    }
    g.finish();
}

fn variation(c: &mut Criterion) {
    let mut g = c.benchmark_group("variation_series");
    g.sample_size(10);
    let s = solver(256);
    let bm = sample_brownian(*s.grid(), 1);
    let x = s.picard_solve(&bm).unwrap().path;
    let v0 = weighted_kernel_v0(&s).unwrap();
    g.bench_function("256", |b| {
        b.iter(|| variation_series(&s, &x, &bm, v0.clone(), DEFAULT_TERMS, DEFAULT_SERIES_TOL).unwrap())
    });
    g.finish();
}

criterion_group!(benches, special_functions, kernel_build, picard, variation);
criterion_main!(benches);
