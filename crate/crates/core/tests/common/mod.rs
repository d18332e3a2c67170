//! Shared oracles and finite-difference helpers for the integration tests
//! and the acceptance runner.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use transct::ct_sim::{insert_poisson_noise, DoseConfig, ScanGeometry, Sinogram};
use transct::model::{
    decoder_layer, encoder_layer, extract_hf_features, extract_lf_features, mhsa, piecewise_reconstruct,
    LfFeatures, ModelConfig, TransCt, Variant,
};
use transct::tensor::{
    add, concat_channels, concat_cols, conv2d, detokenize, leaky_relu, linear, matmul, matmul_bt, mean, mul,
    no_grad, pixel_shuffle, pixel_unshuffle, reshape, scale, slice_cols, softmax, sub, sum, tokens_of, Padding,
    ParamSet, Tensor,
};
use transct::training::mse_loss;
use transct::Result;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], seed: u64, scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let mut r = rng(seed);
    Tensor::new(shape, (0..n).map(|_| r.random_range(-scale..scale)).collect()).unwrap()
}

pub fn leaf(shape: &[usize], seed: u64, scale: f64) -> Tensor<f64> {
    uniform(shape, seed, scale).detach_with_grad(true)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `||a - b|| / max(||a||, ||b||)`, 0 when both vanish.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Central-difference check of `f` against reverse mode, using the scalar
/// loss `sum(f(inputs) * r)` for a fixed random `r`. Returns the worst
/// per-input relative error.
pub fn grad_check<F>(inputs: &[Tensor<f64>], f: F, h: f64) -> f64
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    for x in inputs {
        x.zero_grad();
    }
    let out = f(inputs).unwrap();
    let r = uniform(out.shape(), 977, 1.0);
    sum(&mul(&out, &r).unwrap()).backward().unwrap();
    let loss_at = |xs: &[Tensor<f64>]| -> f64 {
        let _g = no_grad();
        let y = f(xs).unwrap();
        y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };
    let mut worst: f64 = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = x.grad().unwrap_or_else(|| vec![0.0; x.len()]);
        let mut numeric = vec![0.0; x.len()];
        for j in 0..x.len() {
            let probe = |delta: f64| {
                let mut d = x.to_vec();
                d[j] += delta;
                let mut xs = inputs.to_vec();
                xs[i] = Tensor::new(x.shape(), d).unwrap();
                loss_at(&xs)
            };
            numeric[j] = (probe(h) - probe(-h)) / (2.0 * h);
        }
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    worst
}

/// Linear layer `name` with random `[c_in, c_out]` weight and bias.
pub fn add_linear(p: &mut ParamSet<f64>, name: &str, cin: usize, cout: usize, seed: u64) {
    p.insert(format!("{name}.w"), leaf(&[cin, cout], seed, 0.5)).unwrap();
    p.insert(format!("{name}.b"), leaf(&[cout], seed + 1, 0.1)).unwrap();
}

pub fn attention_set(p: &mut ParamSet<f64>, prefix: &str, c: usize, seed: u64) {
    for (i, k) in ["q", "k", "v", "o"].iter().enumerate() {
        add_linear(p, &format!("{prefix}.{k}"), c, c, seed + 10 * i as u64);
    }
}

pub fn mlp_set(p: &mut ParamSet<f64>, prefix: &str, c: usize, hidden: usize, seed: u64) {
    add_linear(p, &format!("{prefix}.fc1"), c, hidden, seed);
    add_linear(p, &format!("{prefix}.fc2"), hidden, c, seed + 5);
}

fn lin(x: &[Vec<f64>], w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<Vec<f64>> {
    let (cin, cout) = (w.shape()[0], w.shape()[1]);
    x.iter()
        .map(|row| {
            (0..cout)
                .map(|o| b.data()[o] + (0..cin).map(|i| row[i] * w.data()[i * cout + o]).sum::<f64>())
                .collect()
        })
        .collect()
}

pub fn rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    t.data().chunks(t.shape()[1]).map(|r| r.to_vec()).collect()
}

/// Dense multi-head attention written out with plain loops:
/// per head `softmax(Q K^T / sqrt(d)) V`, heads concatenated, projected.
pub fn dense_attention(q: &Tensor<f64>, kv: &Tensor<f64>, p: &ParamSet<f64>, prefix: &str, heads: usize) -> Vec<Vec<f64>> {
    let g = |n: &str| p.get(&format!("{prefix}.{n}")).unwrap();
    let qp = lin(&rows(q), g("q.w"), g("q.b"));
    let kp = lin(&rows(kv), g("k.w"), g("k.b"));
    let vp = lin(&rows(kv), g("v.w"), g("v.b"));
    let c = q.shape()[1];
    let d = c / heads;
    let mut joined = vec![vec![0.0; c]; qp.len()];
    for h in 0..heads {
        for (t, qrow) in qp.iter().enumerate() {
            let logits: Vec<f64> = kp
                .iter()
                .map(|krow| (0..d).map(|i| qrow[h * d + i] * krow[h * d + i]).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for i in 0..d {
                joined[t][h * d + i] = e.iter().zip(&vp).map(|(w, v)| w / z * v[h * d + i]).sum();
            }
        }
    }
    lin(&joined, g("o.w"), g("o.b"))
}

/// Worst deviation of `mhsa` from [`dense_attention`] on random tokens.
pub fn attention_oracle_error(heads: usize, tq: usize, tk: usize, c: usize, seed: u64) -> f64 {
    let mut p = ParamSet::new();
    attention_set(&mut p, "a", c, seed);
    let q = uniform(&[tq, c], seed + 100, 1.0);
    let kv = uniform(&[tk, c], seed + 200, 1.0);
    let got = mhsa(&q, &kv, &kv, &p, "a", heads).unwrap();
    let want: Vec<f64> = dense_attention(&q, &kv, &p, "a", heads).into_iter().flatten().collect();
    max_abs_diff(got.data(), &want)
}

fn zero_out(p: &mut ParamSet<f64>, name: &str) {
    let t = p.get(name).unwrap();
    let z = Tensor::zeros(t.shape());
    p.set(name, z).unwrap();
}

/// Worst `|layer(S) - S|` for an encoder and a decoder layer whose output
/// projections (`o` of every attention and `fc2` of the MLP) are zero.
pub fn residual_identity_error(seed: u64) -> (f64, f64) {
    let cfg = ModelConfig { width: 0.125, n_heads: 4, ffn_mult: 2, ..Default::default() };
    let c = cfg.token_dim();
    let mut p = ParamSet::new();
    attention_set(&mut p, "enc.attn", c, seed);
    mlp_set(&mut p, "enc.mlp", c, cfg.ffn_hidden(), seed + 50);
    attention_set(&mut p, "dec.self", c, seed + 100);
    attention_set(&mut p, "dec.cross", c, seed + 150);
    mlp_set(&mut p, "dec.mlp", c, cfg.ffn_hidden(), seed + 200);
    for n in ["enc.attn.o", "enc.mlp.fc2", "dec.self.o", "dec.cross.o", "dec.mlp.fc2"] {
        zero_out(&mut p, &format!("{n}.w"));
        zero_out(&mut p, &format!("{n}.b"));
    }
    let s = uniform(&[16, c], seed + 300, 2.0);
    let mem = uniform(&[4, c], seed + 400, 2.0);
    let enc = encoder_layer(&s, &p, "enc", &cfg).unwrap();
    let dec = decoder_layer(&s, &mem, &p, "dec", &cfg).unwrap();
    (max_abs_diff(enc.data(), s.data()), max_abs_diff(dec.data(), s.data()))
}

/// Sample variance of one ray's noisy line integral over `draws`
/// realizations, taken as a single sinogram row of identical rays.
pub fn ray_log_variance(i0: f64, fraction: f64, p: f64, draws: usize, seed: u64) -> f64 {
    let geometry = ScanGeometry { n_views: 1, n_detectors: draws, detector_spacing_mm: 1.0 };
    let sino = Sinogram { values: Tensor::full(&[1, draws], p), geometry };
    let dose = DoseConfig { i0, dose_fraction: fraction, seed };
    let noisy = insert_poisson_noise(&sino, &dose).unwrap();
    let v = noisy.values.data();
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

/// 64x64 input, token dimension 32, two heads.
pub fn tiny_config() -> ModelConfig {
    ModelConfig { width: 0.125, n_heads: 2, ffn_mult: 1, ..Default::default() }
}

/// Whole-model step. A bias entry shifts thousands of pre-activations at
/// once, and at 1e-5 a few of them straddle a leaky-ReLU kink.
const MODEL_H: f64 = 1e-6;

/// Relative error of the MSE-loss gradient over a random sample of
/// parameter entries (two per tensor) of the whole model.
pub fn end_to_end_error(variant: Variant) -> f64 {
    let mut model = TransCt::<f64>::new(tiny_config(), variant, 5).unwrap();
    let x = uniform(&[1, 1, 64, 64], 40, 1.0);
    let target = uniform(&[1, 1, 64, 64], 41, 1.0);
    mse_loss(&model.forward(&x).unwrap(), &target).unwrap().backward().unwrap();
    let mut r = rng(42);
    let picks: Vec<(String, usize)> = model
        .params
        .iter()
        .flat_map(|p| {
            let n = p.value.len();
            [r.random_range(0..n), r.random_range(0..n)].map(|i| (p.name.clone(), i))
        })
        .collect();
    let analytic: Vec<f64> = picks
        .iter()
        .map(|(name, i)| model.params.get(name).unwrap().grad().unwrap()[*i])
        .collect();
    let _g = no_grad();
    let numeric: Vec<f64> = picks
        .iter()
        .map(|(name, i)| {
            let orig = model.params.get(name).unwrap().clone();
            let mut at = |delta: f64| {
                let mut d = orig.to_vec();
                d[*i] += delta;
                model.params.set(name, Tensor::new(orig.shape(), d).unwrap()).unwrap();
                mse_loss(&model.forward(&x).unwrap(), &target).unwrap().item()
            };
            let g = (at(MODEL_H) - at(-MODEL_H)) / (2.0 * MODEL_H);
            model.params.set(name, orig).unwrap();
            g
        })
        .collect();
    rel_error(&analytic, &numeric)
}

type Op = Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>>;

fn case(name: &'static str, inputs: Vec<Tensor<f64>>, f: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>> + 'static) -> (&'static str, Vec<Tensor<f64>>, Op) {
    (name, inputs, Box::new(f))
}

/// Finite-difference step for single ops and blocks.
pub const OP_H: f64 = 1e-5;

/// Worst relative gradient error of every differentiable op.
pub fn op_audit() -> Vec<(&'static str, f64)> {
    let a = || leaf(&[3, 4], 1, 1.0);
    let b = || leaf(&[3, 4], 2, 1.0);
    let mut cases = vec![
        case("add", vec![a(), b()], |x| add(&x[0], &x[1])),
        case("sub", vec![a(), b()], |x| sub(&x[0], &x[1])),
        case("mul", vec![a(), b()], |x| mul(&x[0], &x[1])),
        case("scale", vec![a()], |x| Ok(scale(&x[0], -2.5))),
        case("leaky_relu", vec![a()], |x| Ok(leaky_relu(&x[0], 0.2))),
        case("sum", vec![a()], |x| Ok(sum(&x[0]))),
        case("mean", vec![a()], |x| Ok(mean(&x[0]))),
        case("reshape", vec![a()], |x| reshape(&mul(&x[0], &x[0])?, &[2, 6])),
        case("matmul", vec![leaf(&[4, 5], 3, 1.0), leaf(&[5, 3], 4, 1.0)], |x| matmul(&x[0], &x[1])),
        case("matmul_bt", vec![leaf(&[4, 5], 5, 1.0), leaf(&[3, 5], 6, 1.0)], |x| matmul_bt(&x[0], &x[1])),
        case("linear", vec![leaf(&[6, 4], 7, 1.0), leaf(&[4, 3], 8, 1.0), leaf(&[3], 9, 1.0)], |x| {
            linear(&x[0], &x[1], &x[2])
        }),
        case("softmax rows", vec![leaf(&[3, 5], 10, 2.0)], |x| softmax(&x[0], 1)),
        case("softmax cols", vec![leaf(&[3, 5], 10, 2.0)], |x| softmax(&x[0], 0)),
        case("slice_cols", vec![leaf(&[4, 6], 11, 1.0)], |x| slice_cols(&x[0], 2, 3)),
        case("concat_cols", vec![leaf(&[3, 2], 12, 1.0), leaf(&[3, 4], 13, 1.0)], |x| {
            concat_cols(&[x[0].clone(), x[1].clone()])
        }),
        case("concat_channels", vec![leaf(&[2, 1, 3, 3], 14, 1.0), leaf(&[2, 2, 3, 3], 15, 1.0)], |x| {
            concat_channels(&[x[0].clone(), x[1].clone()])
        }),
        case("tokens_of", vec![leaf(&[2, 3, 2, 4], 16, 1.0)], |x| tokens_of(&x[0], 1)),
        case("detokenize", vec![leaf(&[6, 3], 17, 1.0), leaf(&[6, 3], 18, 1.0)], |x| {
            detokenize(&[x[0].clone(), x[1].clone()], 2, 3)
        }),
        case("pixel_shuffle", vec![leaf(&[1, 8, 2, 3], 22, 1.0)], |x| pixel_shuffle(&mul(&x[0], &x[0])?, 2)),
        case("pixel_unshuffle", vec![leaf(&[1, 2, 4, 6], 23, 1.0)], |x| {
            pixel_unshuffle(&mul(&x[0], &x[0])?, 2)
        }),
        case("mse_loss", vec![leaf(&[2, 5], 24, 1.0), leaf(&[2, 5], 25, 1.0)], |x| mse_loss(&x[0], &x[1])),
    ];
    let convs = [
        ("conv2d 3x3", 3, 1, Padding::Same),
        ("conv2d 3x3 stride 2", 3, 2, Padding::Same),
        ("conv2d 1x1", 1, 1, Padding::Same),
        ("conv2d 3x3 valid", 3, 1, Padding::Explicit(0)),
    ];
    for (name, k, stride, pad) in convs {
        let inputs = vec![leaf(&[2, 2, 6, 6], 19, 1.0), leaf(&[3, 2, k, k], 20, 0.5), leaf(&[3], 21, 0.5)];
        cases.push(case(name, inputs, move |x| conv2d(&x[0], &x[1], &x[2], stride, pad)));
    }
    cases.into_iter().map(|(name, inputs, f)| (name, grad_check(&inputs, f, OP_H))).collect()
}

/// Worst relative gradient error of each network block of the tiny model.
pub fn block_audit() -> Vec<(&'static str, f64)> {
    let cfg = tiny_config();
    let model = TransCt::<f64>::new(cfg.clone(), Variant::Full, 5).unwrap();
    let p = &model.params;
    let c = cfg.token_dim();
    let s = leaf(&[5, c], 30, 1.0);
    let mem = leaf(&[3, c], 31, 1.0);
    let x = leaf(&[1, 1, 32, 32], 32, 1.0);
    let mut out = vec![
        ("mhsa", grad_check(&[s.clone(), mem.clone()], |x| mhsa(&x[0], &x[1], &x[1], p, "dec.0.cross", cfg.n_heads), OP_H)),
        ("encoder layer", grad_check(std::slice::from_ref(&s), |x| encoder_layer(&x[0], p, "enc.0", &cfg), OP_H)),
        ("decoder layer", grad_check(&[s, mem], |x| decoder_layer(&x[0], &x[1], p, "dec.0", &cfg), OP_H)),
        (
            "lf features",
            grad_check(
                std::slice::from_ref(&x),
                |x| {
                    let f = extract_lf_features(&x[0], p, &cfg)?;
                    concat_cols(&[reshape(&f.c1, &[1, f.c1.len()])?, reshape(&f.c2, &[1, f.c2.len()])?])
                },
                OP_H,
            ),
        ),
        ("hf features", grad_check(std::slice::from_ref(&x), |x| extract_hf_features(&x[0], p, &cfg), OP_H)),
    ];
    let lf = extract_lf_features(&x.detach(), p, &cfg).unwrap();
    let (c1, c2) = (lf.c1.detach_with_grad(true), lf.c2.detach_with_grad(true));
    let y = leaf(c2.shape(), 33, 1.0);
    let rec = grad_check(
        &[y, c1, c2],
        |x| {
            let f = LfFeatures { c1: x[1].clone(), c2: x[2].clone(), tex4: None, t: None };
            piecewise_reconstruct(&x[0], &f, p, &cfg)
        },
        OP_H,
    );
    out.push(("reconstruction", rec));
    out
}
