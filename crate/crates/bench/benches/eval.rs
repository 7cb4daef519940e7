use criterion::{criterion_group, criterion_main, Criterion};
use deepcontrast_bench::scored_labels;
use deepcontrast_core::eval::{bootstrap_ci, roc_auc, youden_cutoff, BootstrapConfig};

fn metrics(c: &mut Criterion) {
    let mut g = c.benchmark_group("eval");
    let (s, l) = scored_labels(33_264, 1);
    g.bench_function("auc_33264_slices", |b| b.iter(|| roc_auc(&s, &l).unwrap()));
    g.bench_function("youden_33264_slices", |b| b.iter(|| youden_cutoff(&s, &l).unwrap()));
    let (s, l) = scored_labels(500, 2);
    let cfg = BootstrapConfig { iterations: 10_000, seed: 3, resample: true };
    g.sample_size(10);
    g.bench_function("bootstrap_auc_10000x500", |b| {
        b.iter(|| bootstrap_ci(&s, &l, &cfg, |s, l| roc_auc(s, l).unwrap_or(f64::NAN)).unwrap())
    });
    g.finish();
}

criterion_group!(benches, metrics);
criterion_main!(benches);
