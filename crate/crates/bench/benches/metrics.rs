use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use streamseg::metrics::{auprc, auroc, fpr_at_95, frame_metrics};
use streamseg_bench::frame;

fn per_frame(c: &mut Criterion) {
    let mut group = c.benchmark_group("frame_metrics");
    for (w, h) in [(480u32, 270u32), (960, 540), (1920, 1080)] {
        let (scores, mask) = frame(w, h);
        group.throughput(Throughput::Elements((w * h) as u64));
        group.bench_with_input(BenchmarkId::from_parameter(format!("{w}x{h}")), &(), |b, _| {
            b.iter(|| frame_metrics(black_box(&scores), black_box(&mask)).unwrap())
        });
    }
    group.finish();
}

fn single(c: &mut Criterion) {
    let (scores, mask) = frame(960, 540);
    c.bench_function("auroc_960x540", |b| b.iter(|| auroc(&scores, &mask).unwrap()));
    c.bench_function("auprc_960x540", |b| b.iter(|| auprc(&scores, &mask).unwrap()));
    c.bench_function("fpr95_960x540", |b| b.iter(|| fpr_at_95(&scores, &mask).unwrap()));
}

criterion_group!(benches, per_frame, single);
criterion_main!(benches);
