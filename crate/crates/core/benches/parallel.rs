//! Sequential against rayon execution on the two hot loops: sparse products
//! during commutator assembly and the resolvent grid of a LAP probe.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use pflab_core::coupling::SmallSystem;
use pflab_core::fock::{ModeSet, OccBasis};
use pflab_core::hamiltonian::{assemble_h_with, ConjugateSpec, HamiltonianBundle};
use pflab_core::mourre_lap::{lap_probe, probe_grid, triple_from_model, WindowProfile};
use pflab_core::sparse::SparseOp;
use pflab_core::Exec;

fn instance(modes: usize, cap: usize) -> HamiltonianBundle {
    let small = SmallSystem::new(vec![0.0, 0.3]).unwrap();
    let ms = ModeSet::from_omegas(&(0..modes).map(|j| 0.5 + 0.15 * j as f64).collect::<Vec<_>>()).unwrap();
    let g0 = DMatrix::from_row_slice(2, 2, &[0.3, 1.0, 1.0, -0.2].map(|x| C64::new(x, 0.0)));
    let g = ms.omegas().iter().map(|w| &g0 * C64::new(0.04 * w.sqrt(), 0.0)).collect();
    let basis = OccBasis::new(modes, cap, cap).unwrap();
    assemble_h_with(&small, g, &ms, &basis).unwrap()
}

fn strategies() -> [(&'static str, Exec); 2] {
    [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)]
}

fn commutator(c: &mut Criterion) {
    let b = instance(8, 3);
    let mut group = c.benchmark_group("commutator");
    group.sample_size(10);
    for (name, exec) in strategies() {
        group.bench_with_input(BenchmarkId::new(name, b.dim()), &exec, |bench, &exec| bench.iter(|| SparseOp::commutator(&b.h, &b.n, exec)));
    }
    group.finish();
}

fn lap_grid(c: &mut Criterion) {
    let b = instance(6, 2);
    let triple = triple_from_model(&b.model(), &ConjugateSpec::translations(), -1.0, WindowProfile::around(1.2, 0.4), 2.0).unwrap();
    let u: Vec<C64> = (0..b.dim()).map(|k| C64::from_polar(1.0 / (b.dim() as f64).sqrt(), 0.9 * k as f64)).collect();
    let zs = probe_grid(&[1.05, 1.15, 1.25, 1.35], 0.1);
    let ladder = [0.1, 1e-2, 1e-3, 1e-4];
    let mut group = c.benchmark_group("lap_probe");
    group.sample_size(10);
    for (name, exec) in strategies() {
        group.bench_with_input(BenchmarkId::new(name, b.dim()), &exec, |bench, &exec| {
            bench.iter(|| lap_probe(&triple, &u, &zs, &ladder, 0.05, None, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, commutator, lap_grid);
criterion_main!(benches);
