#![allow(clippy::needless_range_loop)]

use deepcontrast_core::gradcam::*;
use deepcontrast_core::nn::*;
use deepcontrast_core::rng::rng_for;
use proptest::prelude::*;
use rand::Rng;

const H: usize = 9;
const W: usize = 11;
const F: usize = 3;

fn probe_spec() -> ModelSpec {
    ModelSpec {
        name: "probe".into(),
        input: [H, W, 1],
        layers: vec![
            LayerSpec::Conv2d { filters: F, kernel: 3, activation: Activation::Relu },
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 1, activation: Activation::Sigmoid },
        ],
    }
}

struct Probe {
    conv_w: Vec<f64>,
    conv_b: Vec<f64>,
    dense_w: Vec<f64>,
    net: Network<f32>,
}

fn probe(seed: u64) -> Probe {
    let mut rng = rng_for(seed, &[1]);
    let (gh, gw) = (H - 2, W - 2);
    let mut draw = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect() };
    let conv_w = draw(9 * F);
    let conv_b = draw(F);
    let dense_w = draw(gh * gw * F);
    let dense_b = draw(1);
    let net =
        Network::from_arrays(probe_spec(), vec![conv_w.clone(), conv_b.clone(), dense_w.clone(), dense_b]).unwrap();
    let up = |v: Vec<f32>| v.into_iter().map(f64::from).collect();
    Probe { conv_w: up(conv_w), conv_b: up(conv_b), dense_w: up(dense_w), net }
}

/// Closed form for conv(relu) -> flatten -> dense: the logit is linear in the
/// activations, so each channel weight is the mean of its dense weights.
fn closed_form(p: &Probe, img: &[f32]) -> Vec<f64> {
    let (gh, gw) = (H - 2, W - 2);
    let mut weights = [0.0; F];
    for (i, &w) in p.dense_w.iter().enumerate() {
        weights[i % F] += w / (gh * gw) as f64;
    }
    let mut raw = Vec::new();
    for y in 0..gh {
        for x in 0..gw {
            let mut s = 0.0;
            for f in 0..F {
                let mut a = p.conv_b[f];
                for dy in 0..3 {
                    for dx in 0..3 {
                        a += p.conv_w[(dy * 3 + dx) * F + f] * img[(y + dy) * W + x + dx] as f64;
                    }
                }
                s += weights[f] * a.max(0.0);
            }
            raw.push(s.max(0.0));
        }
    }
    raw
}

#[test]
fn raw_map_matches_closed_form() {
    for seed in 0..20 {
        let p = probe(seed);
        let mut rng = rng_for(seed, &[2]);
        let img: Vec<f32> = (0..H * W).map(|_| rng.random()).collect();
        let map = gradcam(&p.net, &img).unwrap();
        assert_eq!((map.raw_height, map.raw_width), (H - 2, W - 2));
        let want = closed_form(&p, &img);
        for (a, b) in map.raw.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-6, "seed {seed}: {a} vs {b}");
        }
        // A single 3x3 convolution centers raw cell (r, c) on pixel (r + 1, c + 1);
        // the border ring replicates the outermost cells.
        let max = map.raw.iter().copied().fold(0.0f64, f64::max);
        for y in 0..H {
            for x in 0..W {
                let r = y.saturating_sub(1).min(H - 3);
                let c = x.saturating_sub(1).min(W - 3);
                let b = if max > 0.0 { map.raw[r * (W - 2) + c] / max } else { 0.0 };
                assert!(
                    (map.upsampled[y * W + x] as f64 - b).abs() <= 1e-6,
                    "seed {seed} pixel ({y}, {x}): {} vs {b}, max {max}",
                    map.upsampled[y * W + x]
                );
            }
        }
    }
}

#[test]
fn anti_correlated_evidence_gives_zero_map_and_gray_overlay() {
    let mut p = probe(0);
    // Positive conv weights on a positive image give positive activations;
    // negative dense weights make every channel weight negative.
    let n = (H - 2) * (W - 2) * F;
    p.net =
        Network::from_arrays(probe_spec(), vec![vec![0.1; 9 * F], vec![0.1; F], vec![-0.01; n], vec![0.0]]).unwrap();
    let img: Vec<f32> = (0..H * W).map(|i| (i % 7) as f32 / 7.0).collect();
    let map = gradcam(&p.net, &img).unwrap();
    assert!(map.raw.iter().all(|&v| v == 0.0));
    assert!(map.upsampled.iter().all(|&v| v == 0.0));
    let (rgb, w, h) = decode_png(&overlay_png(&img, &map, &[]).unwrap()).unwrap();
    assert_eq!((w, h), (W, H));
    for (i, px) in rgb.chunks(3).enumerate() {
        let g = (img[i] * 255.0).round() as u8;
        assert_eq!(px, [g, g, g]);
    }
}

#[test]
fn full_size_map_dimensions_and_range() {
    let net = Network::<f32>::new(ModelSpec::simple_cnn(192), 3).unwrap();
    let mut rng = rng_for(3, &[4]);
    let img: Vec<f32> = (0..192 * 192).map(|_| rng.random()).collect();
    let before: Vec<Vec<f32>> = net.arrays().iter().map(|(_, t, _)| t.values.clone()).collect();
    let map = gradcam(&net, &img).unwrap();
    assert_eq!((map.raw_height, map.raw_width), (20, 20));
    assert_eq!((map.height, map.width), (192, 192));
    assert_eq!(map.channel_weights.len(), 128);
    assert!(map.upsampled.iter().all(|v| (0.0..=1.0).contains(v)));
    let max = map.upsampled.iter().copied().fold(0.0f32, f32::max);
    assert!(max == 1.0 || max == 0.0);
    let after: Vec<Vec<f32>> = net.arrays().iter().map(|(_, t, _)| t.values.clone()).collect();
    assert_eq!(before, after);
    let png = overlay_png(&img, &map, &[]).unwrap();
    assert_eq!(decode_png(&png).unwrap().1, 192);
}

#[test]
fn no_conv_layer_is_an_error() {
    let spec = ModelSpec {
        name: "flat".into(),
        input: [4, 4, 1],
        layers: vec![LayerSpec::Flatten, LayerSpec::Dense { units: 1, activation: Activation::Sigmoid }],
    };
    let net = Network::<f32>::new(spec, 0).unwrap();
    assert!(matches!(gradcam(&net, &[0.5; 16]), Err(GradCamError::NoConvLayer)));
}

#[test]
fn batch_maps_match_single_maps() {
    let net = Network::<f32>::new(ModelSpec::simple_cnn(48), 5).unwrap();
    let mut rng = rng_for(5, &[6]);
    let imgs: Vec<Vec<f32>> = (0..3).map(|_| (0..48 * 48).map(|_| rng.random()).collect()).collect();
    let values = imgs.iter().flat_map(|im| im.iter().flat_map(|&v| [v; 3])).collect();
    let batch = gradcam_batch(&net, &Tensor::new(vec![3, 48, 48, 3], values)).unwrap();
    for (im, m) in imgs.iter().zip(&batch) {
        let single = gradcam(&net, im).unwrap();
        for (a, b) in single.raw.iter().zip(&m.raw) {
            assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()));
        }
    }
}

fn scaled_logit(net: &Network<f32>, c: f32) -> Network<f32> {
    let mut arrays: Vec<Vec<f32>> = net.arrays().iter().map(|(_, t, _)| t.values.clone()).collect();
    let n = arrays.len();
    for a in &mut arrays[n - 2..] {
        a.iter_mut().for_each(|v| *v *= c);
    }
    Network::from_arrays(net.spec().clone(), arrays).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn maps_are_non_negative_and_normalized(seed in 0u64..1_000_000) {
        let net = Network::<f32>::new(ModelSpec::simple_cnn(48), seed % 7).unwrap();
        let mut rng = rng_for(seed, &[7]);
        let img: Vec<f32> = (0..48 * 48).map(|_| rng.random()).collect();
        let map = gradcam(&net, &img).unwrap();
        prop_assert!(map.raw.iter().all(|&v| v >= 0.0));
        prop_assert!(map.upsampled.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn positive_logit_scaling_leaves_map_unchanged(seed in 0u64..1000, c in 0.1f32..10.0) {
        let net = Network::<f32>::new(ModelSpec::simple_cnn(48), seed).unwrap();
        let mut rng = rng_for(seed, &[8]);
        let img: Vec<f32> = (0..48 * 48).map(|_| rng.random()).collect();
        let a = gradcam(&net, &img).unwrap();
        let b = gradcam(&scaled_logit(&net, c), &img).unwrap();
        for (x, y) in a.upsampled.iter().zip(&b.upsampled) {
            prop_assert!((x - y).abs() <= 1e-4, "{} vs {}", x, y);
        }
    }
}

/// Logit gradient at the last conv output of the builtin net, in eval mode,
/// against central differences through the layers that follow it.
#[test]
fn last_conv_gradient_matches_finite_differences() {
    let spec = ModelSpec::simple_cnn(48);
    let layer = spec.last_conv().unwrap();
    let mut net = Network::<f64>::new(spec.clone(), 4).unwrap();
    let mut rng = rng_for(6, &[]);
    for (name, t, _) in net.arrays_mut() {
        if name.ends_with("moving_mean") {
            t.values.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        } else if name.ends_with("moving_var") {
            t.values.iter_mut().for_each(|v| *v = rng.random_range(0.5..2.0));
        }
    }
    let x = Tensor::new(vec![1, 48, 48, 3], (0..48 * 48 * 3).map(|_| rng.random()).collect());
    let (_, tape) = net.forward_with(&x, Mode::Eval, &mut rng_for(0, &[]), true, Some(layer)).unwrap();
    let acts = tape.captured.clone().unwrap();
    let grad = net.grad_wrt_output(&tape, &[1.0], layer).unwrap();

    let prefix = |name: &str| name.split('.').nth(1).unwrap().parse::<usize>().unwrap();
    let head_arrays =
        net.arrays().into_iter().filter(|(n, _, _)| prefix(n) > layer).map(|(_, t, _)| t.values.clone()).collect();
    let d = acts.dims();
    let head_spec =
        ModelSpec { name: "head".into(), input: [d[1], d[2], d[3]], layers: spec.layers[layer + 1..].to_vec() };
    let head = Network::<f64>::from_arrays(head_spec, head_arrays).unwrap();
    let logit = |a: &Tensor<f64>| head.forward(a, Mode::Eval, &mut rng_for(0, &[])).unwrap().0[0];

    let base = logit(&acts);
    let (lo, _) = net.forward(&x, Mode::Eval, &mut rng_for(0, &[])).unwrap();
    assert!((base - lo[0]).abs() <= 1e-9, "split network reproduces the logit");
    let eps = 1e-6;
    // Post-ReLU zeros tie inside their pool window, a kink where one-sided
    // slopes differ; only strictly positive activations are probed.
    let live: Vec<usize> = (0..acts.values.len()).filter(|&i| acts.values[i] > 1e-3).collect();
    assert!(live.len() > 200);
    for _ in 0..200 {
        let i = live[rng.random_range(0..live.len())];
        let mut plus = acts.clone();
        let mut minus = acts.clone();
        plus.values[i] += eps;
        minus.values[i] -= eps;
        let numeric = (logit(&plus) - logit(&minus)) / (2.0 * eps);
        let analytic = grad.values[i];
        assert!((numeric - analytic).abs() <= 1e-6 * analytic.abs().max(1.0), "cell {i}: {analytic} vs {numeric}");
    }
}
