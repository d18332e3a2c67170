use super::layers::Layers;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{
    add, concat_cols, detokenize as stack_tokens, leaky_relu, matmul, matmul_bt, scale,
    slice_cols, softmax, tokens_of, ParamSet, Scalar, Tensor,
};

/// One image's feature map flattened to `[h*w, C]`, one token per site.
#[derive(Clone, Debug)]
pub struct TokenSeq<S: Scalar = f32> {
    pub tokens: Tensor<S>,
    pub grid: (usize, usize),
}

impl<S: Scalar> TokenSeq<S> {
    pub fn len(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.shape()[1]
    }

    /// Same grid, new token values.
    pub fn with_tokens(&self, tokens: Tensor<S>) -> Self {
        TokenSeq { tokens, grid: self.grid }
    }
}

/// Splits `[B,C,h,w]` into B token sequences.
pub fn tokenize<S: Scalar>(x: &Tensor<S>) -> Result<Vec<TokenSeq<S>>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::shape(format!("tokenize expects [B,C,h,w], got {s:?}")));
    }
    (0..s[0])
        .map(|b| {
            Ok(TokenSeq {
                tokens: tokens_of(x, b)?,
                grid: (s[2], s[3]),
            })
        })
        .collect()
}

/// Inverse of [`tokenize`].
pub fn detokenize<S: Scalar>(seqs: &[TokenSeq<S>]) -> Result<Tensor<S>> {
    let first = seqs.first().ok_or_else(|| Error::invalid("detokenize of no sequences"))?;
    if seqs.iter().any(|s| s.grid != first.grid) {
        return Err(Error::shape("detokenize: sequences come from different grids"));
    }
    let tokens: Vec<Tensor<S>> = seqs.iter().map(|s| s.tokens.clone()).collect();
    stack_tokens(&tokens, first.grid.0, first.grid.1)
}

/// Multi-head attention with projections `{prefix}.{q,k,v,o}`: per head
/// `softmax(Q K^T / sqrt(d)) V`, heads concatenated, then the output
/// projection. `q` supplies the queries, `k` and `v` the keys and values.
pub fn mhsa<S: Scalar>(
    q: &Tensor<S>,
    k: &Tensor<S>,
    v: &Tensor<S>,
    params: &ParamSet<S>,
    prefix: &str,
    n_heads: usize,
) -> Result<Tensor<S>> {
    let (qs, ks, vs) = (q.shape(), k.shape(), v.shape());
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 {
        return Err(Error::shape(format!(
            "attention inputs must be [T, c]: q {qs:?}, k {ks:?}, v {vs:?}"
        )));
    }
    let c = qs[1];
    if ks[1] != c || vs[1] != c || ks[0] != vs[0] {
        return Err(Error::shape(format!(
            "attention dims disagree: q {qs:?}, k {ks:?}, v {vs:?}"
        )));
    }
    if n_heads == 0 || c % n_heads != 0 {
        return Err(Error::shape(format!("dimension {c} does not split into {n_heads} heads")));
    }
    let l = Layers { params, slope: 0.0 };
    let qp = l.linear(&format!("{prefix}.q"), q)?;
    let kp = l.linear(&format!("{prefix}.k"), k)?;
    let vp = l.linear(&format!("{prefix}.v"), v)?;
    let d = c / n_heads;
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let heads = (0..n_heads)
        .map(|h| {
            let qh = slice_cols(&qp, h * d, d)?;
            let kh = slice_cols(&kp, h * d, d)?;
            let vh = slice_cols(&vp, h * d, d)?;
            let attn = softmax(&scale(&matmul_bt(&qh, &kh)?, inv_sqrt_d), 1)?;
            matmul(&attn, &vh)
        })
        .collect::<Result<Vec<_>>>()?;
    let joined = if n_heads == 1 { heads[0].clone() } else { concat_cols(&heads)? };
    l.linear(&format!("{prefix}.o"), &joined)
}

fn mlp<S: Scalar>(x: &Tensor<S>, params: &ParamSet<S>, prefix: &str, slope: f64) -> Result<Tensor<S>> {
    let l = Layers { params, slope };
    let h = leaky_relu(&l.linear(&format!("{prefix}.fc1"), x)?, slope);
    l.linear(&format!("{prefix}.fc2"), &h)
}

/// `Z = MHSA(S) + S`, then `MLP(Z) + Z`.
pub fn encoder_layer<S: Scalar>(
    s: &Tensor<S>,
    params: &ParamSet<S>,
    prefix: &str,
    cfg: &ModelConfig,
) -> Result<Tensor<S>> {
    let z = add(&mhsa(s, s, s, params, &format!("{prefix}.attn"), cfg.n_heads)?, s)?;
    add(&mlp(&z, params, &format!("{prefix}.mlp"), cfg.lrelu_slope)?, &z)
}

/// Self-attention on `s_h`, cross-attention from it onto `mem`, then the
/// MLP, each with a residual connection. The output has `s_h`'s length.
pub fn decoder_layer<S: Scalar>(
    s_h: &Tensor<S>,
    mem: &Tensor<S>,
    params: &ParamSet<S>,
    prefix: &str,
    cfg: &ModelConfig,
) -> Result<Tensor<S>> {
    let z = add(&mhsa(s_h, s_h, s_h, params, &format!("{prefix}.self"), cfg.n_heads)?, s_h)?;
    let z = add(&mhsa(&z, mem, mem, params, &format!("{prefix}.cross"), cfg.n_heads)?, &z)?;
    add(&mlp(&z, params, &format!("{prefix}.mlp"), cfg.lrelu_slope)?, &z)
}

pub(crate) fn attention_params<S: Scalar>(
    b: &mut super::layers::Builder<S>,
    prefix: &str,
    c: usize,
) -> Result<()> {
    for p in ["q", "k", "v", "o"] {
        b.linear(&format!("{prefix}.{p}"), c, c)?;
    }
    Ok(())
}

pub(crate) fn mlp_params<S: Scalar>(
    b: &mut super::layers::Builder<S>,
    prefix: &str,
    c: usize,
    hidden: usize,
) -> Result<()> {
    b.linear(&format!("{prefix}.fc1"), c, hidden)?;
    b.linear(&format!("{prefix}.fc2"), hidden, c)
}
