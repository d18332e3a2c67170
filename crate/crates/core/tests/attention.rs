//! Attention against a dense loop implementation, transformer layers
//! against compositions of primitives, and the reconstruction head against
//! a hand-written sub-pixel chain.

mod common;

use common::{attention_oracle_error, attention_set, max_abs_diff, mlp_set, residual_identity_error, uniform};
use proptest::prelude::*;
use transct::model::{
    decoder_layer, encoder_layer, mhsa, piecewise_reconstruct, tokenize, detokenize, LfFeatures, ModelConfig,
    TransCt, Variant,
};
use transct::tensor::{add, conv2d, leaky_relu, linear, ParamSet, Padding, Tensor};

#[test]
fn mhsa_matches_dense_formula() {
    assert!(attention_oracle_error(1, 3, 3, 8, 1) <= 1e-6);
    assert!(attention_oracle_error(4, 7, 7, 16, 2) <= 1e-6);
    // cross-attention: 5 queries over 2 keys
    assert!(attention_oracle_error(4, 5, 2, 16, 3) <= 1e-6);
}

#[test]
fn zeroed_output_projections_give_identity() {
    let (enc, dec) = residual_identity_error(11);
    assert!(enc <= 1e-7 && dec <= 1e-7, "{enc:e} {dec:e}");
}

fn layer_params(cfg: &ModelConfig) -> ParamSet<f64> {
    let c = cfg.token_dim();
    let mut p = ParamSet::new();
    attention_set(&mut p, "e.attn", c, 1);
    mlp_set(&mut p, "e.mlp", c, cfg.ffn_hidden(), 2);
    attention_set(&mut p, "d.self", c, 3);
    attention_set(&mut p, "d.cross", c, 4);
    mlp_set(&mut p, "d.mlp", c, cfg.ffn_hidden(), 5);
    p
}

fn mlp_ref(x: &Tensor<f64>, p: &ParamSet<f64>, prefix: &str, slope: f64) -> Tensor<f64> {
    let g = |n: &str| p.get(&format!("{prefix}.{n}")).unwrap();
    let h = leaky_relu(&linear(x, g("fc1.w"), g("fc1.b")).unwrap(), slope);
    linear(&h, g("fc2.w"), g("fc2.b")).unwrap()
}

#[test]
fn layers_match_primitive_composition() {
    let cfg = ModelConfig { width: 0.125, n_heads: 4, ffn_mult: 2, ..Default::default() };
    let p = layer_params(&cfg);
    let s = uniform(&[6, cfg.token_dim()], 7, 1.0);
    let mem = uniform(&[3, cfg.token_dim()], 8, 1.0);

    let z = add(&mhsa(&s, &s, &s, &p, "e.attn", 4).unwrap(), &s).unwrap();
    let want = add(&mlp_ref(&z, &p, "e.mlp", cfg.lrelu_slope), &z).unwrap();
    let got = encoder_layer(&s, &p, "e", &cfg).unwrap();
    assert!(max_abs_diff(got.data(), want.data()) <= 1e-6);

    let z = add(&mhsa(&s, &s, &s, &p, "d.self", 4).unwrap(), &s).unwrap();
    let z = add(&mhsa(&z, &mem, &mem, &p, "d.cross", 4).unwrap(), &z).unwrap();
    let want = add(&mlp_ref(&z, &p, "d.mlp", cfg.lrelu_slope), &z).unwrap();
    let got = decoder_layer(&s, &mem, &p, "d", &cfg).unwrap();
    assert_eq!(got.shape(), s.shape());
    assert!(max_abs_diff(got.data(), want.data()) <= 1e-6);
}

/// Depth-to-space written from the layout definition: channel `c` at
/// `(h, w)` goes to channel `c / r^2` at `(r h + (c % r^2) / r, r w + c % r)`.
fn shuffle_ref(x: &Tensor<f64>, r: usize) -> Tensor<f64> {
    let [b, c, h, w] = x.shape().try_into().unwrap();
    let co = c / (r * r);
    let mut out = vec![0.0; x.len()];
    for n in 0..b {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let (oc, sub) = (ch / (r * r), ch % (r * r));
                    let (oy, ox) = (r * y + sub / r, r * xx + sub % r);
                    out[((n * co + oc) * h * r + oy) * w * r + ox] = x.data()[((n * c + ch) * h + y) * w + xx];
                }
            }
        }
    }
    Tensor::new(&[b, co, h * r, w * r], out).unwrap()
}

#[test]
fn reconstruction_with_identity_resblocks_is_a_shuffle_chain() {
    let cfg = ModelConfig { width: 0.125, n_heads: 2, ffn_mult: 1, ..Default::default() };
    let mut model = TransCt::<f64>::new(cfg.clone(), Variant::Full, 3).unwrap();
    for name in ["rec.stage1.conv2", "rec.stage2.conv2"] {
        for s in ["w", "b"] {
            let key = format!("{name}.{s}");
            let shape = model.params.get(&key).unwrap().shape().to_vec();
            model.params.set(&key, Tensor::zeros(&shape)).unwrap();
        }
    }
    let (c1, c2) = (cfg.channels(64).unwrap(), cfg.channels(256).unwrap());
    let lf = LfFeatures {
        c1: uniform(&[1, c1, 8, 8], 1, 1.0),
        c2: uniform(&[1, c2, 4, 4], 2, 1.0),
        tex4: None,
        t: None,
    };
    let y = uniform(&[1, c2, 4, 4], 3, 1.0);
    let got = piecewise_reconstruct(&y, &lf, &model.params, &cfg).unwrap();

    let p = &model.params;
    let s1 = shuffle_ref(&add(&y, &lf.c2).unwrap(), 2);
    let head = conv2d(
        &add(&s1, &lf.c1).unwrap(),
        p.get("rec.head.w").unwrap(),
        p.get("rec.head.b").unwrap(),
        1,
        Padding::Same,
    )
    .unwrap();
    let want = shuffle_ref(&head, 8);
    assert_eq!(got.shape(), &[1, 1, 64, 64]);
    assert!(max_abs_diff(got.data(), want.data()) <= 1e-6);
}

fn permute_rows(t: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let c = t.shape()[1];
    let data = perm.iter().flat_map(|&i| t.data()[i * c..(i + 1) * c].to_vec()).collect();
    Tensor::new(t.shape(), data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn self_attention_commutes_with_token_permutation(seed in 0u64..1000, rot in 1usize..6) {
        let mut p = ParamSet::new();
        attention_set(&mut p, "a", 8, seed);
        let s = uniform(&[6, 8], seed + 1, 1.0);
        let perm: Vec<usize> = (0..6).map(|i| (i + rot) % 6).collect();
        let a = permute_rows(&mhsa(&s, &s, &s, &p, "a", 2).unwrap(), &perm);
        let ps = permute_rows(&s, &perm);
        let b = mhsa(&ps, &ps, &ps, &p, "a", 2).unwrap();
        prop_assert!(max_abs_diff(a.data(), b.data()) <= 1e-9);
    }

    #[test]
    fn tokenize_round_trips(b in 1usize..3, c in 1usize..5, h in 1usize..5, w in 1usize..5, seed in 0u64..100) {
        let x = uniform(&[b, c, h, w], seed, 3.0);
        let seqs = tokenize(&x).unwrap();
        prop_assert_eq!(seqs.len(), b);
        prop_assert_eq!(seqs[0].tokens.shape(), &[h * w, c]);
        let back = detokenize(&seqs).unwrap();
        prop_assert_eq!(back.data(), x.data());
    }
}
