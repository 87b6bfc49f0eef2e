#![allow(dead_code)]

use std::path::PathBuf;

use emisense::io::{read_config, ScenarioConfig};
use emisense::neural::{
    batchnorm_backward, batchnorm_train, conv2d_backward, conv2d_forward, mse_loss, relu, relu_backward, BatchNorm,
    CnnConfig, CnnModel, ConvGeometry, Padding, Tensor, TrainHyper,
};
use emisense::rng::{substream, Domain};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

pub fn scenario(name: &str) -> ScenarioConfig {
    read_config(scenario_path(name)).expect("scenario file")
}

fn rng(seed: u64) -> ChaCha8Rng {
    substream(seed, Domain::WeightInit, 999)
}

fn random_tensor(r: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| r.random_range(-1.0..1.0))
}

/// Values kept away from zero so finite differences never straddle a ReLU kink.
fn off_zero_tensor(r: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| {
        let v: f64 = r.random_range(0.05..1.0);
        if r.random_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

fn random_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `|a - n| / max(|a|, |n|)` over whole gradient arrays.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = dot(analytic, analytic).sqrt().max(dot(numeric, numeric).sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of `f` with respect to every entry of `x`.
fn numeric_grad(x: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + EPS;
            let up = f(x);
            x[i] = orig - EPS;
            let down = f(x);
            x[i] = orig;
            (up - down) / (2.0 * EPS)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GradCase {
    pub name: String,
    pub rel_err: f64,
}

fn conv_cases(out: &mut Vec<GradCase>) {
    let geoms = [
        (
            [2, 2, 7, 5],
            ConvGeometry { in_channels: 2, out_channels: 3, kernel_h: 3, kernel_w: 3, padding: Padding::Same },
        ),
        (
            [1, 1, 9, 4],
            ConvGeometry { in_channels: 1, out_channels: 2, kernel_h: 5, kernel_w: 1, padding: Padding::Same },
        ),
        (
            [3, 2, 6, 3],
            ConvGeometry { in_channels: 2, out_channels: 2, kernel_h: 1, kernel_w: 1, padding: Padding::Same },
        ),
        (
            [2, 3, 11, 4],
            ConvGeometry { in_channels: 3, out_channels: 2, kernel_h: 11, kernel_w: 5, padding: Padding::Same },
        ),
        (
            [2, 2, 8, 3],
            ConvGeometry { in_channels: 2, out_channels: 2, kernel_h: 7, kernel_w: 3, padding: Padding::ValidWidth },
        ),
        (
            [1, 4, 10, 4],
            ConvGeometry { in_channels: 4, out_channels: 2, kernel_h: 9, kernel_w: 4, padding: Padding::ValidWidth },
        ),
        (
            [2, 1, 5, 2],
            ConvGeometry { in_channels: 1, out_channels: 1, kernel_h: 3, kernel_w: 1, padding: Padding::ValidWidth },
        ),
        (
            [1, 2, 4, 6],
            ConvGeometry { in_channels: 2, out_channels: 3, kernel_h: 9, kernel_w: 9, padding: Padding::Same },
        ),
    ];
    for (k, (shape, g)) in geoms.into_iter().enumerate() {
        let mut r = rng(100 + k as u64);
        let x = random_tensor(&mut r, shape);
        let w = random_vec(&mut r, g.weight_len());
        let b = random_vec(&mut r, g.out_channels);
        let out_shape = g.output_shape(shape).expect("valid geometry");
        let proj = random_tensor(&mut r, out_shape);
        let loss = |x: &Tensor, w: &[f64], b: &[f64]| dot(conv2d_forward(x, w, b, &g).unwrap().data(), proj.data());
        let grads = conv2d_backward(&proj, &x, &w, &g).unwrap();

        let mut xd = x.data().to_vec();
        let nx = numeric_grad(&mut xd, |v| loss(&Tensor::from_vec(shape, v.to_vec()).unwrap(), &w, &b));
        let mut wd = w.clone();
        let nw = numeric_grad(&mut wd, |v| loss(&x, v, &b));
        let mut bd = b.clone();
        let nb = numeric_grad(&mut bd, |v| loss(&x, &w, v));
        let err = rel_err(grads.input.data(), &nx).max(rel_err(&grads.weight, &nw)).max(rel_err(&grads.bias, &nb));
        out.push(GradCase {
            name: format!("conv2d {shape:?} k{}x{} {:?}", g.kernel_h, g.kernel_w, g.padding),
            rel_err: err,
        });
    }
}

fn batchnorm_cases(out: &mut Vec<GradCase>) {
    for (k, shape) in [[2, 1, 3, 1], [3, 2, 4, 2], [4, 3, 5, 1], [2, 4, 6, 3], [5, 2, 2, 2]].into_iter().enumerate() {
        let mut r = rng(200 + k as u64);
        let x = random_tensor(&mut r, shape);
        let mut bn = BatchNorm::new(shape[1]);
        bn.gamma = random_vec(&mut r, shape[1]);
        bn.beta = random_vec(&mut r, shape[1]);
        let proj = random_tensor(&mut r, shape);
        let loss = |x: &Tensor, bn: &BatchNorm| dot(batchnorm_train(x, bn).unwrap().0.data(), proj.data());
        let (_, _, cache) = batchnorm_train(&x, &bn).unwrap();
        let grads = batchnorm_backward(&proj, &bn, &cache).unwrap();

        let mut xd = x.data().to_vec();
        let nx = numeric_grad(&mut xd, |v| loss(&Tensor::from_vec(shape, v.to_vec()).unwrap(), &bn));
        let mut gd = bn.gamma.clone();
        let ng = numeric_grad(&mut gd, |v| loss(&x, &BatchNorm { gamma: v.to_vec(), ..bn.clone() }));
        let mut bd = bn.beta.clone();
        let nb = numeric_grad(&mut bd, |v| loss(&x, &BatchNorm { beta: v.to_vec(), ..bn.clone() }));
        let err = rel_err(grads.input.data(), &nx).max(rel_err(&grads.gamma, &ng)).max(rel_err(&grads.beta, &nb));
        out.push(GradCase { name: format!("batchnorm {shape:?}"), rel_err: err });
    }
}

fn relu_cases(out: &mut Vec<GradCase>) {
    for (k, shape) in [[1, 2, 5, 3], [3, 1, 4, 4], [2, 3, 7, 1], [1, 1, 16, 2]].into_iter().enumerate() {
        let mut r = rng(300 + k as u64);
        let x = off_zero_tensor(&mut r, shape);
        let proj = random_tensor(&mut r, shape);
        let y = relu(&x);
        let analytic = relu_backward(&proj, &y).unwrap();
        let mut xd = x.data().to_vec();
        let nx =
            numeric_grad(&mut xd, |v| dot(relu(&Tensor::from_vec(shape, v.to_vec()).unwrap()).data(), proj.data()));
        out.push(GradCase { name: format!("relu {shape:?}"), rel_err: rel_err(analytic.data(), &nx) });
    }
}

fn mse_cases(out: &mut Vec<GradCase>) {
    for (k, shape) in [[2, 2, 6, 1], [4, 2, 3, 1], [1, 3, 2, 2]].into_iter().enumerate() {
        let mut r = rng(400 + k as u64);
        let p = random_tensor(&mut r, shape);
        let t = random_tensor(&mut r, shape);
        let (_, analytic) = mse_loss(&p, &t).unwrap();
        let mut pd = p.data().to_vec();
        let np = numeric_grad(&mut pd, |v| mse_loss(&Tensor::from_vec(shape, v.to_vec()).unwrap(), &t).unwrap().0);
        out.push(GradCase { name: format!("mse {shape:?}"), rel_err: rel_err(analytic.data(), &np) });
    }
}

/// Every backward op against central differences on randomized shapes.
pub fn gradient_suite() -> Vec<GradCase> {
    let mut out = Vec::new();
    conv_cases(&mut out);
    batchnorm_cases(&mut out);
    relu_cases(&mut out);
    mse_cases(&mut out);
    out
}

/// Directional derivative of the full network's training loss along random
/// directions in parameter and input space, analytic against numeric. The
/// network is the full layout with hidden channels divided by 8, on
/// 16-sample lines from 3 sensing coils.
pub fn model_jvp_check(seed: u64) -> f64 {
    let config = CnnConfig::scaled(3, 8);
    let hyper = TrainHyper { seed, ..TrainHyper::default() };
    let base = CnnModel::new(config, hyper).unwrap();
    let mut r = rng(500 + seed);
    let x = random_tensor(&mut r, [4, 2, 16, 3]);
    let target = random_tensor(&mut r, [4, 2, 16, 1]);

    let loss = |m: &CnnModel, x: &Tensor| -> f64 {
        let mut m = m.clone();
        let (y, _) = m.forward_train(x).unwrap();
        mse_loss(&y, &target).unwrap().0
    };
    let mut m = base.clone();
    let (y, cache) = m.forward_train(&x).unwrap();
    let (_, gy) = mse_loss(&y, &target).unwrap();
    let grads = base.backward(&cache, &gy).unwrap();

    let groups: Vec<Vec<f64>> = grads.groups().iter().map(|g| g.to_vec()).collect();
    let mut dirs: Vec<Vec<f64>> = groups.iter().map(|g| random_vec(&mut r, g.len())).collect();
    let mut dx = random_tensor(&mut r, x.shape());
    // Unit direction keeps each step small enough that it rarely crosses a ReLU kink.
    let norm = (dirs.iter().map(|d| dot(d, d)).sum::<f64>() + dot(dx.data(), dx.data())).sqrt();
    dirs.iter_mut().flatten().for_each(|v| *v /= norm);
    dx.data_mut().iter_mut().for_each(|v| *v /= norm);
    let analytic: f64 =
        groups.iter().zip(&dirs).map(|(g, d)| dot(g, d)).sum::<f64>() + dot(grads.input.data(), dx.data());

    let shifted = |sign: f64| -> f64 {
        let mut m = base.clone();
        for (p, d) in m.param_groups_mut().into_iter().zip(&dirs) {
            p.iter_mut().zip(d).for_each(|(v, dv)| *v += sign * EPS * dv);
        }
        let xs = Tensor::from_vec(x.shape(), x.data().iter().zip(dx.data()).map(|(v, d)| v + sign * EPS * d).collect())
            .unwrap();
        loss(&m, &xs)
    };
    let numeric = (shifted(1.0) - shifted(-1.0)) / (2.0 * EPS);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs())
}

/// Nested-loop cross-correlation, written independently of the GEMM kernels.
pub fn brute_force_conv(input: &Tensor, weight: &[f64], bias: &[f64], g: &ConvGeometry) -> Tensor {
    let [_, ci, h, w] = input.shape();
    let out_shape = g.output_shape(input.shape()).unwrap();
    let ph = (g.kernel_h as isize - 1) / 2;
    let pw = match g.padding {
        Padding::Same => (g.kernel_w as isize - 1) / 2,
        Padding::ValidWidth => 0,
    };
    Tensor::from_fn(out_shape, |b, o, y, x| {
        let mut acc = bias[o];
        for c in 0..ci {
            for r in 0..g.kernel_h {
                for s in 0..g.kernel_w {
                    let iy = y as isize + r as isize - ph;
                    let ix = x as isize + s as isize - pw;
                    if (0..h as isize).contains(&iy) && (0..w as isize).contains(&ix) {
                        let wi = ((o * ci + c) * g.kernel_h + r) * g.kernel_w + s;
                        acc += weight[wi] * input.at(b, c, iy as usize, ix as usize);
                    }
                }
            }
        }
        acc
    })
}

/// Largest `|conv2d_forward - brute force|` over randomized geometries.
pub fn conv_oracle_error(cases: usize, seed: u64) -> f64 {
    let mut r = rng(600 + seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let ci = r.random_range(1..5);
        let co = r.random_range(1..5);
        let h = r.random_range(1..24);
        let w = r.random_range(1..7);
        let kh = 2 * r.random_range(0..6) + 1;
        let (kw, padding) = if r.random_bool(0.5) {
            (2 * r.random_range(0..5) + 1, Padding::Same)
        } else {
            (r.random_range(1..=w), Padding::ValidWidth)
        };
        let g = ConvGeometry { in_channels: ci, out_channels: co, kernel_h: kh, kernel_w: kw, padding };
        let batch = r.random_range(1..4);
        let x = random_tensor(&mut r, [batch, ci, h, w]);
        let wt = random_vec(&mut r, g.weight_len());
        let b = random_vec(&mut r, co);
        let fast = conv2d_forward(&x, &wt, &b, &g).unwrap();
        let slow = brute_force_conv(&x, &wt, &b, &g);
        for (a, s) in fast.data().iter().zip(slow.data()) {
            worst = worst.max((a - s).abs());
        }
    }
    worst
}
