//! The dual-path denoiser: low-frequency content and texture features,
//! a high-frequency embedding, an encoder/decoder transformer joining the
//! two, and staged sub-pixel reconstruction. Two ablation variants share
//! the same parameter naming.

mod attention;
mod config;
mod features;
mod layers;
mod recon;

use indexmap::IndexMap;

pub use attention::{decoder_layer, detokenize, encoder_layer, mhsa, tokenize, TokenSeq};
pub use config::{ModelConfig, Variant, DEPTH, FFN_MULTIPLIERS};
pub use features::{extract_hf_features, extract_lf_features, LfFeatures, HF_FACTOR};
pub use recon::{piecewise_reconstruct, reconstruct_stage1, reconstruct_stage2, HEAD_CHANNELS};

use crate::error::{Error, Result};
use crate::freq::decompose_batch;
use crate::tensor::{add, concat_channels, no_grad, ParamSet, Scalar, Tensor};
use layers::{Builder, Layers};

/// Instrumentation filled in by [`TransCt::forward_traced`].
#[derive(Clone, Debug, Default)]
pub struct Trace {
    /// Intermediate shapes by name (`x_lc1`, `x_lc2`, `x_lt`, `x_hf`, `s_l`,
    /// `s_h`, `stage1`, `output`, ...). Token shapes are per image.
    pub shapes: IndexMap<&'static str, Vec<usize>>,
    /// Number of cross-attention reads of encoder memory.
    pub memory_reads: usize,
    /// Tensor id of the memory each read used.
    pub memory_ids: Vec<usize>,
    /// Tensor id of each image's final encoder output.
    pub encoder_output_ids: Vec<usize>,
}

impl Trace {
    fn shape(&mut self, name: &'static str, shape: &[usize]) {
        self.shapes.insert(name, shape.to_vec());
    }
}

/// A network instance: configuration, variant and parameters.
#[derive(Clone, Debug)]
pub struct TransCt<S: Scalar = f32> {
    pub config: ModelConfig,
    pub variant: Variant,
    pub params: ParamSet<S>,
}

fn build_params<S: Scalar>(cfg: &ModelConfig, variant: Variant, seed: u64) -> Result<ParamSet<S>> {
    cfg.validate()?;
    let (c64, c128, c256) = (cfg.channels(64)?, cfg.channels(128)?, cfg.channels(256)?);
    let c = cfg.token_dim();
    let hidden = cfg.ffn_hidden();
    let mut b = Builder::new(seed);

    b.conv("lf.trunk.0", 1, c64)?;
    b.conv("lf.trunk.1", c64, c64)?;
    b.conv("lf.content.0", c64, c64)?;
    b.conv("lf.content.1", c64, c256)?;
    if variant != Variant::NoDualPath {
        b.conv("lf.texture.0", c64, c128)?;
        b.conv("lf.texture.1", c128, c128)?;
        if variant == Variant::Full {
            b.conv("lf.texture.2", c128, c256)?;
        }
        b.conv("hf.conv.0", HF_FACTOR * HF_FACTOR, c256)?;
        b.conv("hf.conv.1", c256, c256)?;
        b.conv("hf.conv.2", c256, c256)?;
    }
    match variant {
        Variant::Full | Variant::NoDualPath => {
            for i in 0..DEPTH {
                attention::attention_params(&mut b, &format!("enc.{i}.attn"), c)?;
                attention::mlp_params(&mut b, &format!("enc.{i}.mlp"), c, hidden)?;
            }
        }
        Variant::NoTransformer => {
            b.conv("nt.in", c256 + c128, c256)?;
            for i in 0..DEPTH {
                b.resblock(&format!("nt.res.{i}"), c256)?;
            }
        }
    }
    if variant == Variant::Full {
        for i in 0..DEPTH {
            attention::attention_params(&mut b, &format!("dec.{i}.self"), c)?;
            attention::attention_params(&mut b, &format!("dec.{i}.cross"), c)?;
            attention::mlp_params(&mut b, &format!("dec.{i}.mlp"), c, hidden)?;
        }
    }
    if cfg.learned_positions && variant != Variant::NoTransformer {
        let p = cfg.patch_size;
        match variant {
            Variant::Full => {
                b.embedding("pos.l", (p / 32) * (p / 32), c)?;
                b.embedding("pos.h", (p / 16) * (p / 16), c)?;
            }
            _ => b.embedding("pos.l", (p / 16) * (p / 16), c)?,
        }
    }
    b.resblock("rec.stage1", c256)?;
    b.resblock("rec.stage2", c64)?;
    b.conv("rec.head", c64, HEAD_CHANNELS)?;
    Ok(b.params)
}

fn with_position<S: Scalar>(params: &ParamSet<S>, name: &str, s: &Tensor<S>) -> Result<Tensor<S>> {
    if !params.contains(name) {
        return Ok(s.clone());
    }
    let pos = params.get(name)?;
    if pos.shape() != s.shape() {
        return Err(Error::shape(format!(
            "position table {name} {:?} does not fit tokens {:?}; the input size differs from patch_size",
            pos.shape(),
            s.shape()
        )));
    }
    add(s, pos)
}

impl<S: Scalar> TransCt<S> {
    /// Fresh network with Xavier-uniform weights and zero biases.
    pub fn new(config: ModelConfig, variant: Variant, seed: u64) -> Result<Self> {
        let params = build_params(&config, variant, seed)?;
        Ok(TransCt { config, variant, params })
    }

    /// Wraps an existing parameter set, checking names and shapes against
    /// what `config` and `variant` require.
    pub fn from_params(config: ModelConfig, variant: Variant, params: ParamSet<S>) -> Result<Self> {
        let expected = build_params::<S>(&config, variant, 0)?;
        check_layout(&expected, &params)?;
        Ok(TransCt { config, variant, params })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Same network in another precision.
    pub fn cast<T: Scalar>(&self) -> TransCt<T> {
        TransCt {
            config: self.config.clone(),
            variant: self.variant,
            params: self.params.cast(),
        }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.run(x, None)
    }

    pub fn forward_traced(&self, x: &Tensor<S>) -> Result<(Tensor<S>, Trace)> {
        let mut trace = Trace::default();
        let y = self.run(x, Some(&mut trace))?;
        Ok((y, trace))
    }

    /// Forward pass without recording a graph.
    pub fn denoise(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let _g = no_grad();
        self.forward(x)
    }

    fn run(&self, x: &Tensor<S>, mut trace: Option<&mut Trace>) -> Result<Tensor<S>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 1 {
            return Err(Error::shape(format!("model input must be [B,1,H,W], got {s:?}")));
        }
        if !s[2].is_multiple_of(32) || !s[3].is_multiple_of(32) {
            return Err(Error::shape(format!(
                "model input {}x{} must have sides divisible by 32",
                s[2], s[3]
            )));
        }
        let cfg = &self.config;
        let params = &self.params;
        let bands = decompose_batch(x, cfg.sigma)?;
        let lf = extract_lf_features(&bands.low, params, cfg)?;
        let mut rec = |name, t: &[usize]| {
            if let Some(tr) = trace.as_deref_mut() {
                tr.shape(name, t);
            }
        };
        rec("x_lc1", lf.c1.shape());
        rec("x_lc2", lf.c2.shape());
        if let Some(t) = &lf.t {
            rec("x_lt", t.shape());
        }
        if let Some(t) = &lf.tex4 {
            rec("x_tex4", t.shape());
        }

        let y = match self.variant {
            Variant::Full => {
                let t = lf.t.as_ref().ok_or_else(|| Error::invalid("missing texture features"))?;
                let hf = extract_hf_features(&bands.high, params, cfg)?;
                rec("x_hf", hf.shape());
                let s_l = tokenize(t)?;
                let s_h = tokenize(&hf)?;
                rec("s_l", s_l[0].tokens.shape());
                rec("s_h", s_h[0].tokens.shape());
                let mut out = Vec::with_capacity(s_h.len());
                for (sl, sh) in s_l.iter().zip(&s_h) {
                    let mut mem = with_position(params, "pos.l", &sl.tokens)?;
                    for i in 0..DEPTH {
                        mem = encoder_layer(&mem, params, &format!("enc.{i}"), cfg)?;
                    }
                    if let Some(tr) = trace.as_deref_mut() {
                        tr.encoder_output_ids.push(mem.id());
                    }
                    let mut z = with_position(params, "pos.h", &sh.tokens)?;
                    for i in 0..DEPTH {
                        if let Some(tr) = trace.as_deref_mut() {
                            tr.memory_reads += 1;
                            tr.memory_ids.push(mem.id());
                        }
                        z = decoder_layer(&z, &mem, params, &format!("dec.{i}"), cfg)?;
                    }
                    out.push(sh.with_tokens(z));
                }
                detokenize(&out)?
            }
            Variant::NoTransformer => {
                let tex4 = lf.tex4.as_ref().ok_or_else(|| Error::invalid("missing texture features"))?;
                let hf = extract_hf_features(&bands.high, params, cfg)?;
                if let Some(tr) = trace.as_deref_mut() {
                    tr.shape("x_hf", hf.shape());
                }
                let l = Layers { params, slope: cfg.lrelu_slope };
                let mut h = l.conv("nt.in", &concat_channels(&[hf, tex4.clone()])?, 1, true)?;
                for i in 0..DEPTH {
                    h = l.resblock(&format!("nt.res.{i}"), &h)?;
                }
                h
            }
            Variant::NoDualPath => {
                let seqs = tokenize(&lf.c2)?;
                if let Some(tr) = trace.as_deref_mut() {
                    tr.shape("s_l", seqs[0].tokens.shape());
                }
                let mut out = Vec::with_capacity(seqs.len());
                for sl in &seqs {
                    let mut z = with_position(params, "pos.l", &sl.tokens)?;
                    for i in 0..DEPTH {
                        z = encoder_layer(&z, params, &format!("enc.{i}"), cfg)?;
                    }
                    out.push(sl.with_tokens(z));
                }
                detokenize(&out)?
            }
        };
        let stage1 = reconstruct_stage1(&y, &lf, params, cfg)?;
        let out = reconstruct_stage2(&stage1, &lf, params, cfg)?;
        if let Some(tr) = trace {
            tr.shape("y", y.shape());
            tr.shape("stage1", stage1.shape());
            tr.shape("output", out.shape());
        }
        Ok(out)
    }
}

/// Errors name the first parameter whose presence or shape differs.
pub(crate) fn check_layout<S: Scalar>(expected: &ParamSet<S>, got: &ParamSet<S>) -> Result<()> {
    for p in expected.iter() {
        match got.get(&p.name) {
            Err(_) => {
                return Err(Error::CheckpointMismatch(format!("parameter {} is missing", p.name)))
            }
            Ok(v) if v.shape() != p.value.shape() => {
                return Err(Error::CheckpointMismatch(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    p.name,
                    v.shape(),
                    p.value.shape()
                )))
            }
            Ok(_) => {}
        }
    }
    if let Some(extra) = got.names().find(|n| !expected.contains(n)) {
        return Err(Error::CheckpointMismatch(format!("unexpected parameter {extra}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(n: usize, seed: u64) -> Tensor<f32> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(&[1, 1, n, n], (0..n * n).map(|_| rng.random_range(0.0..1.5)).collect()).unwrap()
    }

    #[test]
    fn every_variant_keeps_the_input_shape() {
        for v in Variant::ALL {
            let m = TransCt::<f32>::new(ModelConfig::default(), v, 1).unwrap();
            for n in [64, 128] {
                let y = m.denoise(&input(n, 2)).unwrap();
                assert_eq!(y.shape(), &[1, 1, n, n], "{v}");
                assert!(y.all_finite());
            }
        }
    }

    #[test]
    fn desk_shapes() {
        let m = TransCt::<f32>::new(ModelConfig::default(), Variant::Full, 0).unwrap();
        let (_, tr) = m.forward_traced(&input(64, 0)).unwrap();
        assert_eq!(tr.shapes["x_lc1"], [1, 16, 8, 8]);
        assert_eq!(tr.shapes["x_lc2"], [1, 64, 4, 4]);
        assert_eq!(tr.shapes["x_lt"], [1, 64, 2, 2]);
        assert_eq!(tr.shapes["x_hf"], [1, 64, 4, 4]);
        assert_eq!(tr.shapes["s_l"], [4, 64]);
        assert_eq!(tr.shapes["s_h"], [16, 64]);
        assert_eq!(tr.shapes["stage1"], [1, 16, 8, 8]);
    }

    #[test]
    fn decoders_share_one_memory() {
        let m = TransCt::<f32>::new(ModelConfig::default(), Variant::Full, 0).unwrap();
        let (_, tr) = m.forward_traced(&input(64, 0)).unwrap();
        assert_eq!(tr.memory_reads, 3);
        assert!(tr.memory_ids.iter().all(|id| *id == tr.encoder_output_ids[0]));
    }

    #[test]
    fn ablations_are_smaller_or_attention_free() {
        let cfg = ModelConfig::default();
        let full = TransCt::<f32>::new(cfg.clone(), Variant::Full, 0).unwrap();
        let ndp = TransCt::<f32>::new(cfg.clone(), Variant::NoDualPath, 0).unwrap();
        let nt = TransCt::<f32>::new(cfg, Variant::NoTransformer, 0).unwrap();
        assert!(ndp.num_parameters() < full.num_parameters());
        assert!(nt.params.names().all(|n| !n.starts_with("enc.") && !n.starts_with("dec.")));
        assert!(!nt.params.names().any(|n| n.contains(".attn.") || n.contains(".cross.")));
    }

    #[test]
    fn zero_input_gives_zero_features() {
        let m = TransCt::<f32>::new(ModelConfig::default(), Variant::Full, 3).unwrap();
        let lf = extract_lf_features(&Tensor::zeros(&[1, 1, 64, 64]), &m.params, &m.config).unwrap();
        for t in [&lf.c1, &lf.c2, lf.t.as_ref().unwrap()] {
            assert!(t.data().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let a = TransCt::<f32>::new(ModelConfig::default(), Variant::Full, 9).unwrap();
        let b = TransCt::<f32>::new(ModelConfig::default(), Variant::Full, 9).unwrap();
        let x = input(64, 5);
        assert_eq!(a.forward(&x).unwrap().data(), a.forward(&x).unwrap().data());
        assert_eq!(a.forward(&x).unwrap().data(), b.forward(&x).unwrap().data());
    }

    #[test]
    fn bad_input_sizes_fail_early() {
        let m = TransCt::<f32>::new(ModelConfig::default(), Variant::Full, 0).unwrap();
        assert!(m.forward(&Tensor::zeros(&[1, 1, 48, 64])).is_err());
        assert!(m.forward(&Tensor::zeros(&[1, 2, 64, 64])).is_err());
    }

    #[test]
    fn learned_positions_are_optional() {
        let cfg = ModelConfig { learned_positions: true, ..Default::default() };
        let m = TransCt::<f32>::new(cfg, Variant::Full, 0).unwrap();
        assert!(m.params.contains("pos.l") && m.params.contains("pos.h"));
        assert_eq!(m.forward(&input(64, 1)).unwrap().shape(), &[1, 1, 64, 64]);
        assert!(m.forward(&input(128, 1)).is_err());
    }

    #[test]
    fn layout_check_names_the_parameter() {
        let a = TransCt::<f32>::new(ModelConfig::default(), Variant::Full, 0).unwrap();
        let wide = ModelConfig { width: 0.5, ..Default::default() };
        let err = TransCt::from_params(wide, Variant::Full, a.params.clone()).unwrap_err();
        assert!(err.to_string().contains("lf.trunk.0.w"), "{err}");
        assert!(TransCt::from_params(ModelConfig::default(), Variant::Full, a.params).is_ok());
    }
}
