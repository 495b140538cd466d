use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use gradcal::geometry::{compute_displacement_map, exp_se3};
use gradcal::image_ops::{gaussian_kernel, gradient, smooth, warp_bilinear};
use gradcal::optim::{batch_loss, loss_gradient, GradientMode};
use gradcal::synth::SynthSpec;
use gradcal_bench::Fixture;

fn image_ops(c: &mut Criterion) {
    let spec = SynthSpec {
        pairs: 1,
        ..Default::default()
    };
    let pair = spec.render().unwrap().remove(0);
    let state = spec.initial_state().unwrap();
    let kernel = gaussian_kernel(3.0, 51).unwrap();
    let transform = exp_se3(&state.xi);
    let displacement = |depth| {
        compute_displacement_map(
            &spec.k_rgb,
            depth,
            &state.intrinsics,
            &state.distortion,
            &transform,
        )
        .unwrap()
    };
    let f = displacement(&pair.depth);

    c.bench_function("smooth 160x128 51 taps", |b| {
        b.iter(|| smooth(black_box(&pair.thermal), &kernel))
    });
    c.bench_function("sobel 160x128", |b| {
        b.iter(|| gradient(black_box(&pair.thermal)).unwrap())
    });
    c.bench_function("displacement map 160x128", |b| {
        b.iter(|| displacement(black_box(&pair.depth)))
    });
    c.bench_function("warp 160x128", |b| {
        b.iter(|| warp_bilinear(black_box(&pair.thermal), &f).unwrap())
    });
}

fn loss(c: &mut Criterion) {
    let fixture = Fixture::new(10);
    let batch = fixture.batch();
    c.bench_function("loss batch of 10", |b| {
        b.iter(|| batch_loss(black_box(&fixture.state), &batch).unwrap())
    });
    c.bench_function("analytic gradient batch of 10", |b| {
        b.iter(|| loss_gradient(black_box(&fixture.state), &batch, GradientMode::Analytic).unwrap())
    });
}

fn render(c: &mut Criterion) {
    let spec = SynthSpec {
        pairs: 1,
        ..Default::default()
    };
    let mut group = c.benchmark_group("synth");
    group.sample_size(20);
    group.bench_function("render one pair", |b| {
        b.iter(|| black_box(&spec).render().unwrap())
    });
    group.finish();
}

criterion_group!(benches, image_ops, loss, render);
criterion_main!(benches);
