use super::layers::Layers;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{pixel_unshuffle, ParamSet, Scalar, Tensor};

/// Side length ratio between the input and the HF token grid.
pub const HF_FACTOR: usize = 16;

/// Low-frequency features. `tex4` is the mid texture map at H/16 and `t`
/// the latent texture at H/32; either is absent when the variant has no
/// use for it.
#[derive(Clone, Debug)]
pub struct LfFeatures<S: Scalar = f32> {
    /// Content features at H/8.
    pub c1: Tensor<S>,
    /// Content features at H/16.
    pub c2: Tensor<S>,
    pub tex4: Option<Tensor<S>>,
    pub t: Option<Tensor<S>>,
}

fn check_divisible<S: Scalar>(what: &str, x: &Tensor<S>, by: usize) -> Result<()> {
    let s = x.shape();
    if s.len() != 4 || s[1] != 1 {
        return Err(Error::shape(format!("{what} expects [B,1,H,W], got {s:?}")));
    }
    if !s[2].is_multiple_of(by) || !s[3].is_multiple_of(by) {
        return Err(Error::shape(format!(
            "{what}: {}x{} is not divisible by {by}",
            s[2], s[3]
        )));
    }
    Ok(())
}

/// Shared stride-2 trunk, then the content branch (c1, c2) and, when its
/// parameters exist, the texture branch (tex4, t).
pub fn extract_lf_features<S: Scalar>(
    x_l: &Tensor<S>,
    params: &ParamSet<S>,
    cfg: &ModelConfig,
) -> Result<LfFeatures<S>> {
    check_divisible("low-frequency path", x_l, 32)?;
    let l = Layers { params, slope: cfg.lrelu_slope };
    let h = l.conv("lf.trunk.0", x_l, 2, true)?;
    let h = l.conv("lf.trunk.1", &h, 2, true)?;
    let c1 = l.conv("lf.content.0", &h, 2, true)?;
    let c2 = l.conv("lf.content.1", &c1, 2, true)?;
    let (mut tex4, mut t) = (None, None);
    if l.has("lf.texture.0") {
        let m = l.conv("lf.texture.0", &h, 2, true)?;
        let m = l.conv("lf.texture.1", &m, 2, true)?;
        if l.has("lf.texture.2") {
            t = Some(l.conv("lf.texture.2", &m, 2, true)?);
        }
        tex4 = Some(m);
    }
    Ok(LfFeatures { c1, c2, tex4, t })
}

/// Space-to-depth by 16, then three stride-1 convolutions.
pub fn extract_hf_features<S: Scalar>(
    x_h: &Tensor<S>,
    params: &ParamSet<S>,
    cfg: &ModelConfig,
) -> Result<Tensor<S>> {
    check_divisible("high-frequency path", x_h, HF_FACTOR)?;
    let l = Layers { params, slope: cfg.lrelu_slope };
    let mut h = pixel_unshuffle(x_h, HF_FACTOR)?;
    for i in 0..3 {
        h = l.conv(&format!("hf.conv.{i}"), &h, 1, true)?;
    }
    Ok(h)
}
