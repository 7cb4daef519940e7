//! Analytic gradients against central finite differences on micro-networks
//! covering every layer kind.

use deepcontrast_core::nn::*;
use deepcontrast_core::rng::rng_for;
use rand::Rng;

/// Base step of the central differences. A single central difference at this
/// step carries O(eps^2) truncation error near 1e-5 relative, so the oracle
/// combines steps eps and eps/2 by Richardson extrapolation.
const EPS: f64 = 1e-3;

fn micro_bn() -> ModelSpec {
    ModelSpec {
        name: "micro-bn".into(),
        input: [8, 8, 1],
        layers: vec![
            LayerSpec::Conv2d { filters: 2, kernel: 3, activation: Activation::Linear },
            LayerSpec::BatchNorm,
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { pool: 2 },
            LayerSpec::Dropout { rate: 0.3 },
            LayerSpec::Flatten,
            LayerSpec::BatchNorm,
            LayerSpec::Dense { units: 4, activation: Activation::Relu },
            LayerSpec::Dropout { rate: 0.3 },
            LayerSpec::Dense { units: 1, activation: Activation::Sigmoid },
        ],
    }
}

fn micro_plain() -> ModelSpec {
    ModelSpec {
        name: "micro-plain".into(),
        input: [8, 8, 2],
        layers: vec![
            LayerSpec::Conv2d { filters: 2, kernel: 3, activation: Activation::Relu },
            LayerSpec::MaxPool2d { pool: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 3, activation: Activation::Sigmoid },
            LayerSpec::Dense { units: 1, activation: Activation::Linear },
            LayerSpec::Sigmoid,
        ],
    }
}

struct Check {
    worst: f64,
    compared: usize,
    skipped: usize,
}

/// Loss of a train-mode pass whose dropout masks come from `mask_seed`.
fn loss_and_tape(net: &Network<f64>, x: &Tensor<f64>, y: &[f64], mask_seed: u64) -> (f64, Tape<f64>) {
    let (logits, tape) = net.forward(x, Mode::Train, &mut rng_for(mask_seed, &[])).unwrap();
    let p: Vec<f64> = logits.into_iter().map(sigmoid).collect();
    (bce_loss(&p, y), tape)
}

/// `|a - b| / max(|a|, |b|, floor)`: gradients below `floor` (exact zeros
/// such as a bias feeding batch normalization) are compared on an absolute scale.
fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

const FLOOR_F64: f64 = 1e-6;
const FLOOR_F32: f64 = 1e-4;

fn check(spec: ModelSpec, seed: u64, analytic_f32: bool) -> Check {
    let mut net = Network::<f64>::new(spec.clone(), seed).unwrap();
    let mut rng = rng_for(seed, &[1]);
    for t in net.trainable_mut() {
        for v in &mut t.values {
            *v += rng.random_range(-0.2..0.2);
        }
    }
    let [h, w, c] = spec.input;
    let n = 6;
    let x = Tensor::new(vec![n, h, w, c], (0..n * h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect());
    let y = vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
    let mask_seed = seed + 1000;

    let (_, tape) = loss_and_tape(&net, &x, &y, mask_seed);
    let (logits, _) = net.forward(&x, Mode::Train, &mut rng_for(mask_seed, &[])).unwrap();
    let dlogits: Vec<f64> = logits.iter().zip(&y).map(|(&z, &t)| (sigmoid(z) - t) / n as f64).collect();
    let grads = if analytic_f32 {
        let net32 = net.cast::<f32>();
        let x32 = x.cast::<f32>();
        let (l32, tape32) = net32.forward(&x32, Mode::Train, &mut rng_for(mask_seed, &[])).unwrap();
        let d32: Vec<f32> = l32.iter().zip(&y).map(|(&z, &t)| (sigmoid(z) - t as f32) / n as f32).collect();
        let g = net32.backward_tape(&tape32, &d32);
        Gradients { arrays: g.arrays.iter().map(|a| a.iter().map(|&v| v as f64).collect()).collect() }
    } else {
        net.backward_tape(&tape, &dlogits)
    };
    let signature = tape.kink_signature();

    let mut out = Check { worst: 0.0, compared: 0, skipped: 0 };
    let n_arrays = grads.arrays.len();
    for a in 0..n_arrays {
        for i in 0..grads.arrays[a].len() {
            let orig = net.trainable()[a].values[i];
            let mut central = |h: f64| {
                net.trainable_mut()[a].values[i] = orig + h;
                let (lp, tp) = loss_and_tape(&net, &x, &y, mask_seed);
                net.trainable_mut()[a].values[i] = orig - h;
                let (lm, tm) = loss_and_tape(&net, &x, &y, mask_seed);
                net.trainable_mut()[a].values[i] = orig;
                let smooth = tp.kink_signature() == signature && tm.kink_signature() == signature;
                ((lp - lm) / (2.0 * h), smooth)
            };
            let (d1, s1) = central(EPS);
            let (d2, s2) = central(EPS / 2.0);
            if !(s1 && s2) {
                out.skipped += 1;
                continue;
            }
            let numeric = (4.0 * d2 - d1) / 3.0;
            let err = relative_error(grads.arrays[a][i], numeric, if analytic_f32 { FLOOR_F32 } else { FLOOR_F64 });
            out.worst = out.worst.max(err);
            out.compared += 1;
        }
    }
    out
}

#[test]
fn float64_gradients_match_finite_differences() {
    for seed in 0..20 {
        for spec in [micro_bn(), micro_plain()] {
            let name = spec.name.clone();
            let r = check(spec, seed, false);
            println!("{name} seed {seed}: worst {:.3e} over {} (skipped {})", r.worst, r.compared, r.skipped);
            assert!(r.compared > 0);
            assert!(r.worst <= 1e-6, "{name} seed {seed}: relative error {:.3e}", r.worst);
        }
    }
}

#[test]
fn float32_gradients_match_finite_differences() {
    for seed in 0..20 {
        for spec in [micro_bn(), micro_plain()] {
            let name = spec.name.clone();
            let r = check(spec, seed, true);
            println!("{name} seed {seed}: worst {:.3e} over {} (skipped {})", r.worst, r.compared, r.skipped);
            assert!(r.worst <= 1e-3, "{name} seed {seed}: relative error {:.3e}", r.worst);
        }
    }
}
