use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ct_sim::{CtImage, TrainingPair, Unit};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// HU to attenuation relative to water: `1 + HU / 1000`.
pub fn normalize_hu<S: Scalar>(img: &CtImage) -> Result<Tensor<S>> {
    if img.unit != Unit::Hu {
        return Err(Error::Unit {
            expected: Unit::Hu.name(),
            found: img.unit.name(),
        });
    }
    let data = img.data().iter().map(|v| S::lit(1.0 + v / 1000.0)).collect();
    Tensor::new(&[1, 1, img.height(), img.width()], data)
}

/// Inverse of [`normalize_hu`] for image `b` of a `[B,1,H,W]` tensor.
pub fn hu_from_normalized<S: Scalar>(x: &Tensor<S>, b: usize, pixel_spacing_mm: f64) -> Result<CtImage> {
    let s = x.shape();
    if s.len() != 4 || s[1] != 1 || b >= s[0] {
        return Err(Error::shape(format!("cannot take image {b} of {s:?}")));
    }
    let n = s[2] * s[3];
    let data = x.data()[b * n..(b + 1) * n]
        .iter()
        .map(|v| (v.to_f64().unwrap_or(f64::NAN) - 1.0) * 1000.0)
        .collect();
    CtImage::new(Tensor::new(&[s[2], s[3]], data)?, Unit::Hu, pixel_spacing_mm)
}

/// Concatenates `[1,1,H,W]` tensors along the batch axis.
pub fn stack_images<S: Scalar>(images: &[&Tensor<S>]) -> Result<Tensor<S>> {
    let first = images.first().ok_or_else(|| Error::invalid("empty batch"))?;
    let shape = first.shape().to_vec();
    let mut data = Vec::with_capacity(first.len() * images.len());
    for t in images {
        if t.shape() != shape.as_slice() {
            return Err(Error::shape(format!("batch images differ: {:?} vs {shape:?}", t.shape())));
        }
        data.extend_from_slice(t.data());
    }
    Tensor::new(&[images.len(), 1, shape[2], shape[3]], data)
}

fn crop(img: &CtImage, r: usize, c: usize, p: usize) -> Result<CtImage> {
    let w = img.width();
    let data = (0..p)
        .flat_map(|i| img.data()[(r + i) * w + c..(r + i) * w + c + p].iter().copied())
        .collect();
    CtImage::new(Tensor::new(&[p, p], data)?, img.unit, img.pixel_spacing_mm)
}

/// `per_image` aligned random `patch x patch` crops from each pair. Crops
/// are redrawn (up to 50 times) until the normal-dose patch is mostly
/// tissue rather than air.
pub fn extract_patches(
    pairs: &[TrainingPair],
    patch: usize,
    per_image: usize,
    seed: u64,
) -> Result<Vec<TrainingPair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(pairs.len() * per_image);
    for p in pairs {
        let (h, w) = (p.nd.height(), p.nd.width());
        if patch == 0 || patch > h || patch > w {
            return Err(Error::invalid(format!("patch {patch} does not fit a {h}x{w} image")));
        }
        for _ in 0..per_image {
            let mut best = (0, 0);
            for _ in 0..50 {
                best = (rng.random_range(0..=h - patch), rng.random_range(0..=w - patch));
                let nd = crop(&p.nd, best.0, best.1, patch)?;
                let tissue = nd.data().iter().filter(|v| **v > -500.0).count();
                if tissue * 10 >= patch * patch * 9 {
                    break;
                }
            }
            out.push(TrainingPair::new(
                crop(&p.ld, best.0, best.1, patch)?,
                crop(&p.nd, best.0, best.1, patch)?,
            )?);
        }
    }
    Ok(out)
}
