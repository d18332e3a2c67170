use super::{check_pair, gaussian_window};
use crate::ct_sim::CtImage;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

/// Separable filtering keeping only fully-covered positions.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM with the default window and constants. `data_range` defaults to
/// the reference's max - min.
pub fn ssim(reference: &CtImage, other: &CtImage, data_range: Option<f64>) -> Result<f64> {
    ssim_with(reference, other, data_range, &SsimConfig::default())
}

pub fn ssim_with(
    reference: &CtImage,
    other: &CtImage,
    data_range: Option<f64>,
    cfg: &SsimConfig,
) -> Result<f64> {
    check_pair(reference, other)?;
    let (h, w) = (reference.height(), reference.width());
    if cfg.window.is_multiple_of(2) || h < cfg.window || w < cfg.window {
        return Err(Error::invalid(format!(
            "SSIM window {} needs an odd size no larger than the image ({h}x{w})",
            cfg.window
        )));
    }
    let (x, y) = (reference.data(), other.data());
    let range = match data_range {
        Some(r) => r,
        None => {
            let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = x.iter().cloned().fold(f64::INFINITY, f64::min);
            max - min
        }
    };
    if !(range > 0.0) {
        return Err(Error::invalid(format!(
            "SSIM data range must be positive, got {range} (constant reference?)"
        )));
    }
    let c1 = (cfg.k1 * range).powi(2);
    let c2 = (cfg.k2 * range).powi(2);
    let taps = gaussian_window(cfg.window, cfg.sigma);
    let f = |v: Vec<f64>| filter_valid(&v, h, w, &taps).0;
    let mx = f(x.to_vec());
    let my = f(y.to_vec());
    let sxx = f(x.iter().map(|v| v * v).collect());
    let syy = f(y.iter().map(|v| v * v).collect());
    let sxy = f(x.iter().zip(y).map(|(a, b)| a * b).collect());
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (a, b) = (mx[i], my[i]);
            let vx = sxx[i] - a * a;
            let vy = syy[i] - b * b;
            let cov = sxy[i] - a * b;
            ((2.0 * a * b + c1) * (2.0 * cov + c2)) / ((a * a + b * b + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}
