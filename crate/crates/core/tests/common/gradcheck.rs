//! Central finite differences (h = 1e-3) on the f64 reference versus the
//! autodiff gradients of the f32 implementation.

use adascale::tinynn::{ForwardCtx, Layer, LayerSpec, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::reference::forward_sample;

pub const STEP: f64 = 1e-3;
/// Denominator floor for the per-coordinate relative error.
pub const REL_FLOOR: f64 = 1e-2;

pub const KINDS: [&str; 8] = [
    "conv2d",
    "depthwise_separable",
    "grouped_shuffle",
    "lowrank_fc",
    "fc",
    "relu",
    "adaptive_avg_pool",
    "dropout",
];

fn random_instance(kind: &str, rng: &mut ChaCha8Rng) -> (LayerSpec, Vec<usize>) {
    let hw = |rng: &mut ChaCha8Rng| (rng.random_range(3..7), rng.random_range(3..7));
    match kind {
        "conv2d" => {
            let groups = rng.random_range(1..3);
            let cin = groups * rng.random_range(1..3);
            let cout = groups * rng.random_range(1..3);
            let kernel = [1, 3][rng.random_range(0..2)];
            let stride = rng.random_range(1..3);
            let (h, w) = hw(rng);
            (
                LayerSpec::Conv2d {
                    in_channels: cin,
                    out_channels: cout,
                    kernel,
                    stride,
                    padding: rng.random_range(0..2).min(kernel / 2 + 1),
                    groups,
                    bias: rng.random_bool(0.5),
                },
                vec![cin, h, w],
            )
        }
        "depthwise_separable" => {
            let cin = rng.random_range(1..4);
            let (h, w) = hw(rng);
            (
                LayerSpec::DepthwiseSeparable {
                    in_channels: cin,
                    out_channels: rng.random_range(1..5),
                    kernel: 3,
                    stride: rng.random_range(1..3),
                },
                vec![cin, h, w],
            )
        }
        "grouped_shuffle" => {
            let groups = 2;
            let cin = groups * rng.random_range(1..3);
            let (h, w) = hw(rng);
            (
                LayerSpec::GroupedShuffle {
                    in_channels: cin,
                    out_channels: groups * rng.random_range(1..4),
                    kernel: 3,
                    stride: rng.random_range(1..3),
                    groups,
                },
                vec![cin, h, w],
            )
        }
        "lowrank_fc" => {
            let din = rng.random_range(2..8);
            (
                LayerSpec::LowRankFc {
                    in_features: din,
                    out_features: rng.random_range(1..6),
                    rank: rng.random_range(1..4),
                },
                vec![din],
            )
        }
        "fc" => {
            let din = rng.random_range(1..8);
            (LayerSpec::fc(din, rng.random_range(1..6)), vec![din])
        }
        "relu" => (LayerSpec::Relu, vec![rng.random_range(2..5), 3, 3]),
        "adaptive_avg_pool" => {
            let (h, w) = hw(rng);
            (
                LayerSpec::AdaptiveAvgPool {
                    out_h: rng.random_range(1..h.min(4)),
                    out_w: rng.random_range(1..w.min(4)),
                },
                vec![rng.random_range(1..4), h, w],
            )
        }
        "dropout" => (LayerSpec::Dropout { p: 0.5 }, vec![rng.random_range(4..20)]),
        other => panic!("unknown kind {other}"),
    }
}

/// Value away from the relu kink by more than the FD step.
fn away_from_zero(rng: &mut ChaCha8Rng) -> f32 {
    let m: f32 = rng.random_range(0.05..1.0);
    if rng.random_bool(0.5) {
        m
    } else {
        -m
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Worst per-coordinate relative error over `instances` random instances.
pub fn max_relative_error(kind: &str, instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for inst in 0..instances {
        let (spec, sample_shape) = random_instance(kind, &mut rng);
        let batch = rng.random_range(1..3);
        let mut layer = Layer::new("g", spec.clone(), rng.random()).unwrap();
        for p in layer.params_mut() {
            for v in p.value.data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        let mut shape = vec![batch];
        shape.extend_from_slice(&sample_shape);
        let n: usize = shape.iter().product();
        let x = Tensor::new(shape.clone(), (0..n).map(|_| away_from_zero(&mut rng)).collect()).unwrap();

        let mut ctx = if kind == "dropout" {
            ForwardCtx::train(inst as u64)
        } else {
            ForwardCtx::eval_recording()
        };
        let y = layer.forward(&x, &mut ctx).unwrap();
        let proj: Vec<f32> = (0..y.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dx = layer
            .backward(&Tensor::new(y.shape().to_vec(), proj.clone()).unwrap(), true)
            .unwrap()
            .unwrap();

        let sample_in: usize = sample_shape.iter().product();
        let sample_out = y.numel() / batch;
        let xs: Vec<f64> = x.data().iter().map(|v| *v as f64).collect();
        let mask: Option<Vec<f64>> = (kind == "dropout").then(|| {
            y.data()
                .iter()
                .zip(x.data())
                .map(|(yv, xv)| (*yv / *xv) as f64)
                .collect()
        });
        let params: Vec<Vec<f64>> = layer
            .params()
            .iter()
            .map(|p| p.value.data().iter().map(|v| *v as f64).collect())
            .collect();
        let proj64: Vec<f64> = proj.iter().map(|v| *v as f64).collect();

        let loss = |params: &[Vec<f64>], xs: &[f64]| -> f64 {
            let mut total = 0.0;
            for b in 0..batch {
                let m = mask.as_ref().map(|m| &m[b * sample_in..(b + 1) * sample_in]);
                let out = forward_sample(&spec, params, &xs[b * sample_in..(b + 1) * sample_in], &sample_shape, m);
                assert_eq!(out.len(), sample_out);
                total += out
                    .iter()
                    .zip(&proj64[b * sample_out..(b + 1) * sample_out])
                    .map(|(o, r)| o * r)
                    .sum::<f64>();
            }
            total
        };

        // reference agrees with the implementation's forward
        for (b, chunk) in y.data().chunks(sample_out).enumerate() {
            let m = mask.as_ref().map(|m| &m[b * sample_in..(b + 1) * sample_in]);
            let out = forward_sample(&spec, &params, &xs[b * sample_in..(b + 1) * sample_in], &sample_shape, m);
            for (a, r) in chunk.iter().zip(&out) {
                assert!((*a as f64 - r).abs() < 1e-4, "{kind} forward mismatch {a} vs {r}");
            }
        }

        for (pi, p) in layer.params().iter().enumerate() {
            for j in 0..p.numel() {
                let mut plus = params.clone();
                plus[pi][j] += STEP;
                let mut minus = params.clone();
                minus[pi][j] -= STEP;
                let fd = (loss(&plus, &xs) - loss(&minus, &xs)) / (2.0 * STEP);
                worst = worst.max(rel_err(p.grad.data()[j] as f64, fd));
            }
        }
        for j in 0..xs.len() {
            let mut plus = xs.clone();
            plus[j] += STEP;
            let mut minus = xs.clone();
            minus[j] -= STEP;
            let fd = (loss(&params, &plus) - loss(&params, &minus)) / (2.0 * STEP);
            worst = worst.max(rel_err(dx.data()[j] as f64, fd));
        }
    }
    worst
}
