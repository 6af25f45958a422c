use criterion::{black_box, criterion_group, criterion_main, Criterion};

use wavetomo_core::grid::{free_propagate, wiener_norm};
use wavetomo_core::models::{full_line_integral, EnvelopeSpec, DEFAULT_ORACLE_TOL};
use wavetomo_core::recover::{fbp_reconstruct, oracle_sinogram, uniform_angles, uniform_offsets, Window};
use wavetomo_core::solver::Stepper;
use wavetomo_core::wavepacket::{initial_data, WavePacketParams};
use wavetomo_core::{GridSpec, Phantom};

fn packet(n: usize) -> (WavePacketParams, GridSpec) {
    let grid = GridSpec::new(2, n, 22.0 * std::f64::consts::PI).unwrap();
    let phantom = Phantom::single([0.0; 3], 2.0, 43.366, 2);
    let params = WavePacketParams::new(0.35, 2.0, 3.0, &[1.0, 0.0], EnvelopeSpec::default(), phantom, &grid).unwrap();
    (params, grid)
}

fn split_step(c: &mut Criterion) {
    for n in [256, 512] {
        let (params, grid) = packet(n);
        let u0 = initial_data(&params, &grid).unwrap();
        let stepper = Stepper::new(grid, &params.phantom, 0.01);
        let mut u = u0.values.clone();
        c.bench_function(&format!("strang_step_{n}"), |b| b.iter(|| stepper.advance(black_box(&mut u), 1)));
    }
}

fn transforms(c: &mut Criterion) {
    let (params, grid) = packet(512);
    let u0 = initial_data(&params, &grid).unwrap();
    c.bench_function("wiener_norm_512", |b| b.iter(|| wiener_norm(black_box(&u0))));
    c.bench_function("free_propagate_512", |b| b.iter(|| free_propagate(black_box(&u0), 0.5).unwrap()));
}

fn tomography(c: &mut Criterion) {
    let phantom = Phantom::single([0.3, -0.2, 0.0], 2.0, 1.0, 2);
    c.bench_function("oracle_line", |b| {
        b.iter(|| full_line_integral(&phantom, black_box(&[0.0, 0.5, 0.0]), &[0.6, 0.8, 0.0], DEFAULT_ORACLE_TOL).unwrap())
    });
    let sino = oracle_sinogram(&phantom, &uniform_angles(90), &uniform_offsets(129, 3.0), DEFAULT_ORACLE_TOL);
    let out = GridSpec::new(2, 128, 3.0).unwrap();
    c.bench_function("fbp_90x129_to_128", |b| b.iter(|| fbp_reconstruct(black_box(&sino), &out, Window::RamLak).unwrap()));
}

criterion_group!(benches, split_step, transforms, tomography);
criterion_main!(benches);
