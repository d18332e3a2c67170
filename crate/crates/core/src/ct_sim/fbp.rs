use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{pixel_center, CtImage, ScanGeometry, Sinogram, Unit};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Apodization applied to the ramp filter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Window {
    /// Plain ramp.
    #[default]
    RamLak,
    /// Ramp times a raised cosine reaching zero at Nyquist.
    Hann,
}

impl std::str::FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ramlak" => Ok(Window::RamLak),
            "hann" => Ok(Window::Hann),
            other => Err(Error::invalid(format!(
                "unknown window {other:?} (expected ramlak or hann)"
            ))),
        }
    }
}

impl std::fmt::Display for Window {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Window::RamLak => "ramlak",
            Window::Hann => "hann",
        })
    }
}

/// Frequency response (length `len`, FFT order) of the band-limited discrete
/// ramp with sample spacing `tau`, times the window.
pub fn ramp_filter(len: usize, tau: f64, window: Window) -> Vec<f64> {
    // spatial kernel: h[0] = 1/(4 tau^2), h[n odd] = -1/(pi n tau)^2
    let mut kernel = vec![Complex::new(0.0, 0.0); len];
    for (i, k) in kernel.iter_mut().enumerate() {
        let n = if i <= len / 2 { i as i64 } else { i as i64 - len as i64 };
        k.re = if n == 0 {
            1.0 / (4.0 * tau * tau)
        } else if n % 2 != 0 {
            -1.0 / (PI * n as f64 * tau).powi(2)
        } else {
            0.0
        };
    }
    FftPlanner::new().plan_fft_forward(len).process(&mut kernel);
    kernel
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let freq = if i <= len / 2 { i } else { len - i } as f64 / (len as f64 / 2.0);
            let w = match window {
                Window::RamLak => 1.0,
                Window::Hann => 0.5 * (1.0 + (PI * freq).cos()),
            };
            h.re * w
        })
        .collect()
}

fn filter_views(sino: &Sinogram, window: Window) -> Vec<Vec<f64>> {
    let geom = &sino.geometry;
    let nd = geom.n_detectors;
    let len = (2 * nd).next_power_of_two();
    let tau = geom.detector_spacing_mm;
    let response = ramp_filter(len, tau, window);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    sino.values
        .data()
        .par_chunks(nd)
        .map(|view| {
            let mut buf: Vec<Complex<f64>> = view
                .iter()
                .map(|v| Complex::new(*v, 0.0))
                .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
                .take(len)
                .collect();
            fwd.process(&mut buf);
            buf.iter_mut().zip(&response).for_each(|(b, h)| *b *= *h);
            inv.process(&mut buf);
            // inverse FFT is unnormalized; tau turns the sum into a convolution integral
            buf[..nd].iter().map(|c| c.re * tau / len as f64).collect()
        })
        .collect()
}

/// Filtered back projection onto a `size x size` grid of the given spacing.
pub fn fbp(
    sino: &Sinogram,
    geom: &ScanGeometry,
    window: Window,
    size: usize,
    pixel_spacing_mm: f64,
) -> Result<CtImage> {
    geom.validate()?;
    if sino.values.shape() != [geom.n_views, geom.n_detectors] {
        return Err(Error::shape(format!(
            "sinogram {:?} does not match geometry ({} views, {} detectors)",
            sino.values.shape(),
            geom.n_views,
            geom.n_detectors
        )));
    }
    if sino.geometry != *geom {
        return Err(Error::invalid("sinogram was acquired with a different geometry"));
    }
    let filtered = filter_views(sino, window);
    let trig: Vec<(f64, f64)> = geom.angles().iter().map(|a| a.sin_cos()).collect();
    let nd = geom.n_detectors;
    let center = (nd as f64 - 1.0) / 2.0;
    let tau = geom.detector_spacing_mm;
    let scale = PI / geom.n_views as f64;
    let mut out = vec![0.0; size * size];
    out.par_chunks_mut(size).enumerate().for_each(|(row, line)| {
        for (col, px) in line.iter_mut().enumerate() {
            let (x, y) = pixel_center(row, col, size, size, pixel_spacing_mm);
            let mut acc = 0.0;
            for (q, &(s, c)) in filtered.iter().zip(&trig) {
                let u = (x * c + y * s) / tau + center;
                let i0 = u.floor();
                let f = u - i0;
                let i0 = i0 as isize;
                if i0 >= 0 && (i0 as usize) < nd {
                    acc += (1.0 - f) * q[i0 as usize];
                }
                if i0 + 1 >= 0 && ((i0 + 1) as usize) < nd {
                    acc += f * q[(i0 + 1) as usize];
                }
            }
            *px = acc * scale;
        }
    });
    CtImage::new(Tensor::new(&[size, size], out)?, Unit::MuPerMm, pixel_spacing_mm)
}

#[cfg(test)]
mod tests {
    use super::super::{disk_phantom, forward_project, hu_to_mu, MU_WATER_60KEV};
    use super::*;

    #[test]
    fn zero_sinogram_gives_zero_image() {
        let g = ScanGeometry::for_image(32, 1.0);
        let sino = Sinogram {
            values: Tensor::zeros(&[g.n_views, g.n_detectors]),
            geometry: g.clone(),
        };
        let img = fbp(&sino, &g, Window::RamLak, 32, 1.0).unwrap();
        assert!(img.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mismatched_detectors_rejected() {
        let g = ScanGeometry::for_image(32, 1.0);
        let sino = Sinogram {
            values: Tensor::zeros(&[g.n_views, g.n_detectors - 2]),
            geometry: g.clone(),
        };
        assert!(fbp(&sino, &g, Window::Hann, 32, 1.0).is_err());
    }

    #[test]
    fn symmetric_phantom_reconstructs_symmetrically() {
        let disk = disk_phantom(64, 0.3, 0.0, 1.0).unwrap();
        let mu = hu_to_mu(&disk, MU_WATER_60KEV).unwrap();
        let g = ScanGeometry::for_image(64, 1.0);
        let rec = fbp(&forward_project(&mu, &g).unwrap(), &g, Window::RamLak, 64, 1.0).unwrap();
        let d = rec.data();
        let n = 64;
        let peak = d.iter().cloned().fold(0.0, f64::max);
        for r in 0..n {
            for c in 0..n {
                // mirror symmetries of a centered disk on a centered grid
                let lr = d[r * n + (n - 1 - c)];
                let ud = d[(n - 1 - r) * n + c];
                let tr = d[c * n + r];
                for other in [lr, ud, tr] {
                    assert!((d[r * n + c] - other).abs() <= 0.01 * peak);
                }
            }
        }
    }

    #[test]
    fn hann_is_smoother_than_ramlak() {
        let r = ramp_filter(64, 1.0, Window::RamLak);
        let h = ramp_filter(64, 1.0, Window::Hann);
        assert!(h[32].abs() < 1e-12 && r[32] > 0.0);
        assert!((r[0] - h[0]).abs() < 1e-15);
    }
}
