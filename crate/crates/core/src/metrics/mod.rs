//! Image-quality metrics: RMSE in HU, SSIM and pixel-domain VIF, plus a
//! per-image report with mean and population standard deviation.

mod ssim;
mod vif;

use std::fmt::Write as _;

pub use ssim::{ssim, ssim_with, SsimConfig};
pub use vif::{vif, VIF_NOISE_VAR};

use crate::ct_sim::{CtImage, Unit};
use crate::error::{Error, Result};

/// Normalized 1-D Gaussian of `len` taps (odd) and width `sigma`.
pub(crate) fn gaussian_window(len: usize, sigma: f64) -> Vec<f64> {
    let r = (len / 2) as f64;
    let mut w: Vec<f64> = (0..len)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

fn check_pair(a: &CtImage, b: &CtImage) -> Result<()> {
    if a.grid.shape() != b.grid.shape() {
        return Err(Error::shape(format!(
            "metric inputs differ in shape: {:?} vs {:?}",
            a.grid.shape(),
            b.grid.shape()
        )));
    }
    if a.unit != b.unit {
        return Err(Error::Unit {
            expected: a.unit.name(),
            found: b.unit.name(),
        });
    }
    Ok(())
}

/// Root mean square difference, in the images' unit (HU for the denoiser).
pub fn rmse(a: &CtImage, b: &CtImage) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.data().len() as f64;
    let ss: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((ss / n).sqrt())
}

/// One row of a [`MetricReport`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ImageMetrics {
    pub rmse_hu: f64,
    pub ssim: f64,
    pub vif: f64,
}

impl ImageMetrics {
    /// `output` is scored against `reference`; both must be HU.
    pub fn compute(output: &CtImage, reference: &CtImage) -> Result<Self> {
        for img in [output, reference] {
            if img.unit != Unit::Hu {
                return Err(Error::Unit {
                    expected: Unit::Hu.name(),
                    found: img.unit.name(),
                });
            }
        }
        Ok(ImageMetrics {
            rmse_hu: rmse(output, reference)?,
            ssim: ssim(reference, output, None)?,
            vif: vif(reference, output)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub per_image: Vec<ImageMetrics>,
    pub mean: ImageMetrics,
    /// Population standard deviation.
    pub sd: ImageMetrics,
}

impl MetricReport {
    pub fn from_per_image(per_image: Vec<ImageMetrics>) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::invalid("metric report needs at least one image"));
        }
        let n = per_image.len() as f64;
        let stat = |f: fn(&ImageMetrics) -> f64| {
            let m = per_image.iter().map(f).sum::<f64>() / n;
            let var = per_image.iter().map(|r| (f(r) - m).powi(2)).sum::<f64>() / n;
            (m, var.sqrt())
        };
        let (r, rs) = stat(|r| r.rmse_hu);
        let (s, ss) = stat(|r| r.ssim);
        let (v, vs) = stat(|r| r.vif);
        Ok(MetricReport {
            mean: ImageMetrics { rmse_hu: r, ssim: s, vif: v },
            sd: ImageMetrics { rmse_hu: rs, ssim: ss, vif: vs },
            per_image,
        })
    }

    /// `index,rmse_hu,ssim,vif` rows, full precision.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,rmse_hu,ssim,vif\n");
        for (i, r) in self.per_image.iter().enumerate() {
            let _ = writeln!(s, "{i},{:?},{:?},{:?}", r.rmse_hu, r.ssim, r.vif);
        }
        s
    }

    /// Aligned `mean ± sd` table.
    pub fn to_table(&self, label: &str) -> String {
        format!(
            "{:<16} {:>20} {:>18} {:>18}\n{:<16} {:>20} {:>18} {:>18}\n",
            "",
            "RMSE (HU)",
            "SSIM",
            "VIF",
            label,
            format!("{:.3}±{:.3}", self.mean.rmse_hu, self.sd.rmse_hu),
            format!("{:.4}±{:.4}", self.mean.ssim, self.sd.ssim),
            format!("{:.4}±{:.4}", self.mean.vif, self.sd.vif),
        )
    }
}

/// Scores each output against the reference at the same position.
pub fn evaluate_pairs(outputs: &[CtImage], references: &[CtImage]) -> Result<MetricReport> {
    if outputs.len() != references.len() {
        return Err(Error::invalid(format!(
            "{} outputs but {} references",
            outputs.len(),
            references.len()
        )));
    }
    use rayon::prelude::*;
    let rows = outputs
        .par_iter()
        .zip(references)
        .map(|(o, r)| ImageMetrics::compute(o, r))
        .collect::<Result<Vec<_>>>()?;
    MetricReport::from_per_image(rows)
}


#[cfg(test)]
mod tests {
    use super::test_util::*;
    use super::*;

    #[test]
    fn rmse_basics() {
        let a = random(1, 16);
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let b = hu(16, 16, a.data().iter().map(|v| v + 5.0).collect());
        assert!((rmse(&a, &b).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn rmse_matches_direct_recomputation() {
        let (a, b) = (random(2, 20), random(3, 20));
        let mut acc = 0.0;
        for i in 0..400 {
            acc += (a.data()[i] - b.data()[i]).powi(2);
        }
        assert!((rmse(&a, &b).unwrap() - (acc / 400.0).sqrt()).abs() <= 1e-9);
    }

    #[test]
    fn rmse_scales_linearly() {
        let (a, b) = (random(4, 12), random(5, 12));
        let b3 = hu(12, 12, a.data().iter().zip(b.data()).map(|(x, y)| x + 3.0 * (y - x)).collect());
        assert!((rmse(&a, &b3).unwrap() - 3.0 * rmse(&a, &b).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        assert!(rmse(&random(0, 12), &random(0, 16)).is_err());
    }

    #[test]
    fn identical_pair_report() {
        let x = smooth(1, 32);
        let r = evaluate_pairs(&[x.clone()], &[x]).unwrap();
        assert_eq!(r.mean.rmse_hu, 0.0);
        assert!((r.mean.ssim - 1.0).abs() < 1e-9);
        assert!((r.mean.vif - 1.0).abs() < 1e-6);
        assert_eq!(r.sd, ImageMetrics::default());
    }

    #[test]
    fn report_bookkeeping() {
        let refs: Vec<_> = (0..4).map(|s| smooth(s, 32)).collect();
        let outs: Vec<_> = refs.iter().enumerate().map(|(i, r)| add_noise(r, 5.0 * (i + 1) as f64, 9)).collect();
        let rep = evaluate_pairs(&outs, &refs).unwrap();
        let m = rep.per_image.iter().map(|r| r.ssim).sum::<f64>() / 4.0;
        assert!((rep.mean.ssim - m).abs() <= 1e-9);
        assert!(rep.sd.rmse_hu > 0.0);
        assert_eq!(rep.to_csv().lines().count(), 5);
        assert!(evaluate_pairs(&outs[..2], &refs).is_err());
    }
}
