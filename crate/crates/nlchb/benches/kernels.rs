//! Criterion benches for the hot kernels, comparing the rayon-parallel and
//! single-thread paths.
//!
//! With the default `parallel` feature each group measures the operation
//! inside a 1-thread pool and inside a pool sized to the machine; building
//! with `--no-default-features` benches the fully sequential fallback
//! (compare `cargo bench` against `cargo bench --no-default-features`).

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nlchb::ch::{CHScheme, CHState, CHStepperConfig, CHSolver};
use nlchb::conv::ConvolutionEngine;
use nlchb::experiments::standard_sim_config;
use nlchb::grid::{GridSpec, ScalarField};
use nlchb::kernel::KernelSpec;
use nlchb::poisson::NeumannPoissonSolver;
use nlchb::potential::{convex_split, PotentialSpec};
use nlchb::system::{System, SystemMode};
use std::hint::black_box;
use std::sync::Arc;

fn spinodal(g: GridSpec, seed: u64) -> ScalarField {
    let mut state = seed.max(1);
    ScalarField {
        grid: g,
        values: (0..g.cell_count())
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                0.05 * (2.0 * ((state >> 11) as f64 / (1u64 << 53) as f64) - 1.0)
            })
            .collect(),
    }
}

/// Run `f` once per thread configuration and register it under a labelled id.
fn bench_modes<F: Fn() + Sync>(c: &mut Criterion, group: &str, param: &str, f: F) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    #[cfg(feature = "parallel")]
    {
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        g.bench_with_input(BenchmarkId::new("threads-1", param), &(), |b, _| {
            single.install(|| b.iter(&f))
        });
        g.bench_with_input(BenchmarkId::new("threads-all", param), &(), |b, _| b.iter(&f));
    }
    #[cfg(not(feature = "parallel"))]
    g.bench_with_input(BenchmarkId::new("sequential", param), &(), |b, _| b.iter(&f));
    g.finish();
}

fn bench_convolution(c: &mut Criterion) {
    for n in [64usize, 128] {
        let g = GridSpec::new(n, n, 1.0, 1.0).unwrap();
        let engine = ConvolutionEngine::new(g, KernelSpec::gaussian(0.04, 5.0).unwrap()).unwrap();
        let phi = spinodal(g, 3);
        bench_modes(c, "convolve_fft", &format!("{n}x{n}"), || {
            black_box(engine.convolve(black_box(&phi)).unwrap());
        });
    }
}

fn bench_poisson(c: &mut Criterion) {
    for n in [64usize, 128] {
        let g = GridSpec::new(n, n, 1.0, 1.0).unwrap();
        let solver = NeumannPoissonSolver::new(g);
        let mut f = spinodal(g, 5);
        f.project_zero_mean();
        f.project_zero_mean();
        bench_modes(c, "neumann_poisson", &format!("{n}x{n}"), || {
            black_box(solver.solve(black_box(&f)).unwrap());
        });
    }
}

fn bench_ch_step(c: &mut Criterion) {
    let n = 64;
    let g = GridSpec::new(n, n, 1.0, 1.0).unwrap();
    let engine = Arc::new(ConvolutionEngine::new(g, KernelSpec::gaussian(0.04, 5.0).unwrap()).unwrap());
    let pot = PotentialSpec::quartic();
    let split = convex_split(&pot, engine.a_star());
    let poisson = Arc::new(NeumannPoissonSolver::new(g));
    for (scheme, name) in [
        (CHScheme::StabilizedSemiImplicit, "stabilized"),
        (CHScheme::ConvexSplittingNonlinear, "convex_splitting"),
    ] {
        let ch = CHSolver::new(
            Arc::clone(&engine),
            pot.clone(),
            split,
            Arc::clone(&poisson),
            CHStepperConfig::new(1e-3, scheme).unwrap(),
        )
        .unwrap();
        let phi = spinodal(g, 7);
        let state = CHState {
            mu: ch.chemical_potential(&phi).unwrap(),
            phi,
            t: 0.0,
        };
        let u = nlchb::grid::VectorField::zeros(g);
        bench_modes(c, "ch_step", &format!("{name}/{n}x{n}"), || {
            black_box(ch.step(black_box(&state), &u).unwrap());
        });
    }
}

fn bench_coupled_step(c: &mut Criterion) {
    for (mode, name) in [(SystemMode::Chb, "chb"), (SystemMode::Chhs, "chhs")] {
        let sys = System::new(standard_sim_config(64, mode, 1e-3, 1.0)).unwrap();
        let state = sys.initial_state().unwrap();
        bench_modes(c, "coupled_step", &format!("{name}/64x64"), || {
            black_box(sys.coupled_step(black_box(&state)).unwrap());
        });
    }
}

criterion_group!(
    benches,
    bench_convolution,
    bench_poisson,
    bench_ch_step,
    bench_coupled_step
);
criterion_main!(benches);
