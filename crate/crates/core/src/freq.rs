//! Low/high frequency split of an image by Gaussian blurring.
//!
//! `low` is the blurred image and `high = x - low`, so `low + high`
//! reproduces the input up to a single rounding per pixel.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_SIGMA: f64 = 1.5;

/// The two frequency bands of one image.
#[derive(Clone, Debug)]
pub struct FreqPair<S: Scalar = f32> {
    pub low: Tensor<S>,
    pub high: Tensor<S>,
    pub sigma: f64,
}

/// Normalized 1-D Gaussian taps with radius `ceil(4 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    let radius = (4.0 * sigma).ceil() as i64;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    Ok(taps)
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`).
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

/// Separable convolution of a row-major `h x w` plane with `taps`
/// along both axes, reflecting at the borders.
pub(crate) fn separable_blur(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            tmp[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * row[reflect(x as isize + k as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * tmp[reflect(y as isize + k as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

fn split_plane<S: Scalar>(plane: &[S], h: usize, w: usize, taps: &[f64]) -> (Vec<S>, Vec<S>) {
    let src: Vec<f64> = plane.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
    let low: Vec<S> = separable_blur(&src, h, w, taps)
        .into_iter()
        .map(S::lit)
        .collect();
    let high = plane.iter().zip(&low).map(|(x, l)| *x - *l).collect();
    (low, high)
}

fn check_extent(h: usize, w: usize, taps: usize) -> Result<()> {
    if h < taps || w < taps {
        return Err(Error::shape(format!(
            "image {h}x{w} is smaller than the {taps}-tap Gaussian kernel"
        )));
    }
    Ok(())
}

/// Splits an `[H, W]` image into low and high frequency parts.
pub fn decompose<S: Scalar>(x: &Tensor<S>, sigma: f64) -> Result<FreqPair<S>> {
    let [h, w] = *x.shape() else {
        return Err(Error::shape(format!(
            "decompose expects an [H, W] image, got {:?}",
            x.shape()
        )));
    };
    let taps = gaussian_kernel(sigma)?;
    check_extent(h, w, taps.len())?;
    let (low, high) = split_plane(x.data(), h, w, &taps);
    Ok(FreqPair {
        low: Tensor::new(&[h, w], low)?,
        high: Tensor::new(&[h, w], high)?,
        sigma,
    })
}

/// Applies [`decompose`] to every plane of a `[B, C, H, W]` batch.
pub fn decompose_batch<S: Scalar>(x: &Tensor<S>, sigma: f64) -> Result<FreqPair<S>> {
    let [b, c, h, w] = *x.shape() else {
        return Err(Error::shape(format!(
            "decompose_batch expects [B, C, H, W], got {:?}",
            x.shape()
        )));
    };
    let taps = gaussian_kernel(sigma)?;
    check_extent(h, w, taps.len())?;
    let mut low = Vec::with_capacity(x.len());
    let mut high = Vec::with_capacity(x.len());
    for plane in x.data().chunks(h * w) {
        let (l, hi) = split_plane(plane, h, w, &taps);
        low.extend(l);
        high.extend(hi);
    }
    Ok(FreqPair {
        low: Tensor::new(&[b, c, h, w], low)?,
        high: Tensor::new(&[b, c, h, w], high)?,
        sigma,
    })
}

/// `low + high`.
pub fn recompose<S: Scalar>(pair: &FreqPair<S>) -> Result<Tensor<S>> {
    if pair.low.shape() != pair.high.shape() {
        return Err(Error::shape(format!(
            "recompose: low {:?} and high {:?} differ",
            pair.low.shape(),
            pair.high.shape()
        )));
    }
    let data = pair
        .low
        .data()
        .iter()
        .zip(pair.high.data())
        .map(|(l, h)| *l + *h)
        .collect();
    Tensor::new(pair.low.shape(), data)
}
