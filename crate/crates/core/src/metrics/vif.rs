use super::{check_pair, gaussian_window};
use crate::ct_sim::CtImage;
use crate::error::{Error, Result};
use crate::freq::separable_blur;

/// Variance of the visual noise channel in the pixel-domain model.
pub const VIF_NOISE_VAR: f64 = 2.0;

const SCALES: usize = 4;
const EPS: f64 = 1e-10;

fn downsample(src: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::with_capacity(oh * ow);
    for y in (0..h).step_by(2) {
        for x in (0..w).step_by(2) {
            out.push(src[y * w + x]);
        }
    }
    (out, oh, ow)
}

/// Information the distorted image keeps about the reference at one scale,
/// and the information the reference itself carries: `(num, den)`.
fn scale_information(x: &[f64], y: &[f64], h: usize, w: usize, taps: &[f64]) -> (f64, f64) {
    let f = |v: Vec<f64>| separable_blur(&v, h, w, taps);
    let mx = f(x.to_vec());
    let my = f(y.to_vec());
    let sxx = f(x.iter().map(|v| v * v).collect());
    let syy = f(y.iter().map(|v| v * v).collect());
    let sxy = f(x.iter().zip(y).map(|(a, b)| a * b).collect());
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..mx.len() {
        let mut s1 = (sxx[i] - mx[i] * mx[i]).max(0.0);
        let s2 = (syy[i] - my[i] * my[i]).max(0.0);
        let s12 = sxy[i] - mx[i] * my[i];
        let mut g = s12 / (s1 + EPS);
        let mut sv = s2 - g * s12;
        if s1 < EPS {
            g = 0.0;
            sv = s2;
            s1 = 0.0;
        }
        if s2 < EPS {
            g = 0.0;
            sv = 0.0;
        }
        if g < 0.0 {
            sv = s2;
            g = 0.0;
        }
        let sv = sv.max(EPS);
        num += (1.0 + g * g * s1 / (sv + VIF_NOISE_VAR)).log10();
        den += (1.0 + s1 / VIF_NOISE_VAR).log10();
    }
    (num, den)
}

/// Pixel-domain visual information fidelity over four dyadic scales with
/// Gaussian windows of 17, 9, 5 and 3 taps. Filtering reflects at the
/// borders so 32x32 inputs still reach the coarsest scale.
///
/// A reference with no local variance anywhere carries no information; the
/// score is then 1 for identical images and 0 otherwise.
pub fn vif(reference: &CtImage, distorted: &CtImage) -> Result<f64> {
    check_pair(reference, distorted)?;
    let (mut h, mut w) = (reference.height(), reference.width());
    if h < 32 || w < 32 {
        return Err(Error::invalid(format!("VIF needs at least 32x32 images, got {h}x{w}")));
    }
    let mut x = reference.data().to_vec();
    let mut y = distorted.data().to_vec();
    let (mut num, mut den) = (0.0, 0.0);
    for scale in 0..SCALES {
        let n = (1usize << (SCALES - scale)) + 1;
        let taps = gaussian_window(n, n as f64 / 5.0);
        if scale > 0 {
            let bx = separable_blur(&x, h, w, &taps);
            let by = separable_blur(&y, h, w, &taps);
            let (dx, nh, nw) = downsample(&bx, h, w);
            x = dx;
            y = downsample(&by, h, w).0;
            (h, w) = (nh, nw);
        }
        let (a, b) = scale_information(&x, &y, h, w, &taps);
        num += a;
        den += b;
    }
    if den <= 0.0 {
        return Ok(if reference.data() == distorted.data() { 1.0 } else { 0.0 });
    }
    Ok(num / den)
}
