use rayon::prelude::*;

use super::{to_pixel, CtImage, ScanGeometry, Sinogram, Unit};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bilinear sample of a row-major image at fractional pixel coordinates,
/// zero outside.
pub(crate) fn bilinear(img: &[f64], rows: usize, cols: usize, row: f64, col: f64) -> f64 {
    let r0 = row.floor();
    let c0 = col.floor();
    let (fr, fc) = (row - r0, col - c0);
    let (r0, c0) = (r0 as isize, c0 as isize);
    let at = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= rows as isize || c >= cols as isize {
            0.0
        } else {
            img[r as usize * cols + c as usize]
        }
    };
    (1.0 - fr) * ((1.0 - fc) * at(r0, c0) + fc * at(r0, c0 + 1))
        + fr * ((1.0 - fc) * at(r0 + 1, c0) + fc * at(r0 + 1, c0 + 1))
}

/// Parallel-beam line integrals by ray marching at half-pixel steps through
/// the bilinear interpolant of the image.
pub fn forward_project(img: &CtImage, geom: &ScanGeometry) -> Result<Sinogram> {
    if img.unit != Unit::MuPerMm {
        return Err(Error::Unit {
            expected: Unit::MuPerMm.name(),
            found: img.unit.name(),
        });
    }
    geom.validate()?;
    let (rows, cols) = (img.height(), img.width());
    if rows != cols {
        return Err(Error::shape(format!(
            "forward projection needs a square image, got {rows}x{cols}"
        )));
    }
    let spacing = img.pixel_spacing_mm;
    let step = spacing / 2.0;
    let reach = (rows as f64 * spacing) * std::f64::consts::FRAC_1_SQRT_2 + 2.0 * spacing;
    let n_steps = (reach / step).ceil() as i64;
    let data = img.data();
    let angles = geom.angles();
    let mut values = vec![0.0; geom.n_views * geom.n_detectors];
    values
        .par_chunks_mut(geom.n_detectors)
        .zip(angles.par_iter())
        .for_each(|(view, &theta)| {
            let (s, c) = theta.sin_cos();
            for (d, out) in view.iter_mut().enumerate() {
                let t = geom.detector_position(d);
                let mut acc = 0.0;
                for k in -n_steps..=n_steps {
                    let u = k as f64 * step;
                    let (x, y) = (t * c - u * s, t * s + u * c);
                    let (r, cc) = to_pixel(x, y, rows, cols, spacing);
                    acc += bilinear(data, rows, cols, r, cc);
                }
                *out = acc * step;
            }
        });
    Ok(Sinogram {
        values: Tensor::new(&[geom.n_views, geom.n_detectors], values)?,
        geometry: geom.clone(),
    })
}
