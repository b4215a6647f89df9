use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use skinsplat::fixtures::{random_scene, stride_pose, synthetic_bundle};
use skinsplat::render::render_backward;
use skinsplat::{render, RenderConfig};

fn forward(c: &mut Criterion) {
    let config = RenderConfig::default();
    let mut group = c.benchmark_group("render");
    group.sample_size(10);
    for n in [5_000, 50_000] {
        let (scene, camera) = random_scene(n, 9, 256, 256);
        group.bench_with_input(BenchmarkId::new("random_256", n), &n, |b, _| {
            b.iter(|| render(black_box(&scene), &camera, &config).unwrap())
        });
    }
    group.finish();
}

fn fitted_scene(c: &mut Criterion) {
    let bundle = synthetic_bundle(84, 500, 7).unwrap();
    let pose = stride_pose(&bundle.mesh);
    let scene = bundle.scene_at(&pose).unwrap();
    let camera = skinsplat::session::default_camera(&bundle, 128, 128);
    let mut group = c.benchmark_group("body_scene_128");
    group.sample_size(10);
    group.bench_function("forward", |b| b.iter(|| render(black_box(&scene), &camera, &bundle.render).unwrap()));
    let image = render(&scene, &camera, &bundle.render).unwrap();
    let grad = vec![[1.0; 3]; image.pixels.len()];
    group.bench_function("backward", |b| {
        b.iter(|| render_backward(black_box(&scene), &camera, &bundle.render, &grad).unwrap())
    });
    group.finish();
}

criterion_group!(benches, forward, fitted_scene);
criterion_main!(benches);
