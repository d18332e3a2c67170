use super::layers::Layers;
use super::{LfFeatures, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{add, pixel_shuffle, ParamSet, Scalar, Tensor};

/// Channels entering the final 8x sub-pixel layer (one output channel).
pub const HEAD_CHANNELS: usize = 64;

fn add_skip<S: Scalar>(stage: &str, a: &Tensor<S>, skip: &Tensor<S>) -> Result<Tensor<S>> {
    if a.shape() != skip.shape() {
        return Err(Error::shape(format!(
            "reconstruction {stage}: {:?} cannot be added to skip features {:?}",
            a.shape(),
            skip.shape()
        )));
    }
    add(a, skip)
}

/// Stage 1: `Y + c2`, residual block, 2x sub-pixel to H/8.
pub fn reconstruct_stage1<S: Scalar>(
    y: &Tensor<S>,
    lf: &LfFeatures<S>,
    params: &ParamSet<S>,
    cfg: &ModelConfig,
) -> Result<Tensor<S>> {
    let l = Layers { params, slope: cfg.lrelu_slope };
    let h = add_skip("stage 1", y, &lf.c2)?;
    pixel_shuffle(&l.resblock("rec.stage1", &h)?, 2)
}

/// Stage 2: `+ c1`, residual block, a linear conv to 64 channels, 8x
/// sub-pixel to the full-resolution image.
pub fn reconstruct_stage2<S: Scalar>(
    stage1: &Tensor<S>,
    lf: &LfFeatures<S>,
    params: &ParamSet<S>,
    cfg: &ModelConfig,
) -> Result<Tensor<S>> {
    let l = Layers { params, slope: cfg.lrelu_slope };
    let h = add_skip("stage 2", stage1, &lf.c1)?;
    let h = l.resblock("rec.stage2", &h)?;
    pixel_shuffle(&l.conv("rec.head", &h, 1, false)?, 8)
}

/// Both stages: `[B,256w,H/16,W/16]` to `[B,1,H,W]`.
pub fn piecewise_reconstruct<S: Scalar>(
    y: &Tensor<S>,
    lf: &LfFeatures<S>,
    params: &ParamSet<S>,
    cfg: &ModelConfig,
) -> Result<Tensor<S>> {
    let s1 = reconstruct_stage1(y, lf, params, cfg)?;
    reconstruct_stage2(&s1, lf, params, cfg)
}
