use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use deepcontrast_bench::random_batch;
use deepcontrast_core::gradcam::gradcam_batch;
use deepcontrast_core::nn::{ModelSpec, Network};
use deepcontrast_core::rng::rng_for;

fn forward_backward(c: &mut Criterion) {
    let mut g = c.benchmark_group("simple_cnn");
    g.sample_size(10);
    for size in [96, 192] {
        let net = Network::<f32>::new(ModelSpec::simple_cnn(size), 1).unwrap();
        let x = random_batch(8, size, 2);
        let labels = [1.0f32, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        g.bench_function(format!("predict_{size}px_batch8"), |b| b.iter(|| net.predict_proba(&x).unwrap()));
        g.bench_function(format!("train_step_{size}px_batch8"), |b| {
            b.iter_batched(
                || net.clone(),
                |mut n| {
                    n.train_forward(&x, &mut rng_for(3, &[])).unwrap();
                    n.backward(&labels).unwrap()
                },
                BatchSize::LargeInput,
            )
        });
    }
    let net = Network::<f32>::new(ModelSpec::simple_cnn(96), 1).unwrap();
    let x = random_batch(8, 96, 4);
    g.bench_function("gradcam_96px_batch8", |b| b.iter(|| gradcam_batch(&net, &x).unwrap()));
    g.finish();
}

criterion_group!(benches, forward_backward);
criterion_main!(benches);
