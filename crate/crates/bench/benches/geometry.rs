use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use streamseg::reprojection::warp_mask;
use streamseg::synthgen::render_frame;
use streamseg::SceneSpec;

fn warp(c: &mut Criterion) {
    let mut group = c.benchmark_group("warp_mask");
    for (w, h) in [(480u32, 270u32), (960, 540)] {
        let spec = SceneSpec::default().with_resolution(w, h);
        let (a, b) = (render_frame(&spec, 100), render_frame(&spec, 160));
        let cam = spec.camera();
        group.bench_with_input(BenchmarkId::from_parameter(format!("{w}x{h}")), &(), |bench, _| {
            bench.iter(|| {
                warp_mask(
                    &a.mask,
                    a.depth.as_ref().unwrap(),
                    a.pose.as_ref().unwrap(),
                    b.depth.as_ref().unwrap(),
                    b.pose.as_ref().unwrap(),
                    &cam,
                    80.0,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn render(c: &mut Criterion) {
    let spec = SceneSpec::default();
    c.bench_function("render_frame_480x270", |b| b.iter(|| render_frame(&spec, 300)));
}

criterion_group!(benches, warp, render);
criterion_main!(benches);
