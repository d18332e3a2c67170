//! Synthetic paired-dose CT data: phantoms, parallel-beam projection,
//! projection-domain Poisson noise, filtered back projection and the
//! HU / attenuation conversions.

mod dataset;
mod fbp;
mod noise;
mod phantom;
mod projector;

use std::f64::consts::PI;

pub use dataset::{
    load_dataset, make_dataset, simulate_pair, write_dataset, DatasetManifest, SimConfig,
    SimulatedPair, TrainingPair,
};
pub use fbp::{fbp, ramp_filter, Window};
pub use noise::{insert_poisson_noise, DoseConfig};
pub use phantom::{disk_phantom, make_phantom, PhantomSpec};
pub use projector::forward_project;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Linear attenuation of water at 60 keV, in mm⁻¹.
pub const MU_WATER_60KEV: f64 = 0.0206;

/// HU of air.
pub const HU_AIR: f64 = -1000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unit {
    /// Hounsfield units.
    Hu,
    /// Linear attenuation coefficient in mm⁻¹.
    MuPerMm,
}

impl Unit {
    pub fn name(self) -> &'static str {
        match self {
            Unit::Hu => "HU",
            Unit::MuPerMm => "mu/mm",
        }
    }
}

/// A square or rectangular CT slice with its unit and pixel size.
#[derive(Clone, Debug)]
pub struct CtImage {
    pub grid: Tensor<f64>,
    pub unit: Unit,
    pub pixel_spacing_mm: f64,
}

impl CtImage {
    pub fn new(grid: Tensor<f64>, unit: Unit, pixel_spacing_mm: f64) -> Result<Self> {
        if grid.rank() != 2 {
            return Err(Error::shape(format!(
                "CT image grid must be [H, W], got {:?}",
                grid.shape()
            )));
        }
        if !(pixel_spacing_mm > 0.0) {
            return Err(Error::invalid(format!(
                "pixel spacing must be positive, got {pixel_spacing_mm}"
            )));
        }
        Ok(CtImage {
            grid,
            unit,
            pixel_spacing_mm,
        })
    }

    pub fn height(&self) -> usize {
        self.grid.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.grid.shape()[1]
    }

    pub fn data(&self) -> &[f64] {
        self.grid.data()
    }

    fn expect_unit(&self, unit: Unit) -> Result<()> {
        if self.unit != unit {
            return Err(Error::Unit {
                expected: unit.name(),
                found: self.unit.name(),
            });
        }
        Ok(())
    }

    fn map(&self, unit: Unit, f: impl Fn(f64) -> f64) -> CtImage {
        let data = self.grid.data().iter().map(|v| f(*v)).collect();
        CtImage {
            grid: Tensor::new(self.grid.shape(), data).expect("same shape"),
            unit,
            pixel_spacing_mm: self.pixel_spacing_mm,
        }
    }

    /// Clamps HU values below air to air.
    pub fn clamp_to_air(&self) -> Result<CtImage> {
        self.expect_unit(Unit::Hu)?;
        Ok(self.map(Unit::Hu, |v| v.max(HU_AIR)))
    }
}

/// `mu = mu_water * (1 + HU / 1000)`.
pub fn hu_to_mu(img: &CtImage, mu_water: f64) -> Result<CtImage> {
    img.expect_unit(Unit::Hu)?;
    Ok(img.map(Unit::MuPerMm, |hu| mu_water * (1.0 + hu / 1000.0)))
}

/// Inverse of [`hu_to_mu`].
pub fn mu_to_hu(img: &CtImage, mu_water: f64) -> Result<CtImage> {
    img.expect_unit(Unit::MuPerMm)?;
    Ok(img.map(Unit::Hu, |mu| (mu / mu_water - 1.0) * 1000.0))
}

/// Parallel-beam scan: `n_views` angles uniformly covering `[0, pi)` and a
/// centered linear detector.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanGeometry {
    pub n_views: usize,
    pub n_detectors: usize,
    pub detector_spacing_mm: f64,
}

impl ScanGeometry {
    /// 360 views and an odd detector count covering the image diagonal at
    /// one detector per pixel.
    pub fn for_image(size: usize, pixel_spacing_mm: f64) -> Self {
        let mut n = (size as f64 * std::f64::consts::SQRT_2).ceil() as usize + 2;
        if n.is_multiple_of(2) {
            n += 1;
        }
        ScanGeometry {
            n_views: 360,
            n_detectors: n,
            detector_spacing_mm: pixel_spacing_mm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_views == 0 || self.n_detectors == 0 {
            return Err(Error::invalid("geometry needs at least one view and detector"));
        }
        if !(self.detector_spacing_mm > 0.0) {
            return Err(Error::invalid("detector spacing must be positive"));
        }
        Ok(())
    }

    pub fn angles(&self) -> Vec<f64> {
        (0..self.n_views)
            .map(|i| PI * i as f64 / self.n_views as f64)
            .collect()
    }

    /// Signed detector coordinate (mm) of detector `d`.
    pub fn detector_position(&self, d: usize) -> f64 {
        (d as f64 - (self.n_detectors as f64 - 1.0) / 2.0) * self.detector_spacing_mm
    }
}

/// Line integrals (mu * mm) indexed `[view, detector]`.
#[derive(Clone, Debug)]
pub struct Sinogram {
    pub values: Tensor<f64>,
    pub geometry: ScanGeometry,
}

/// Maps an `(x, y)` position in mm (origin at the image center, y up) to
/// fractional `(row, col)` pixel coordinates.
pub(crate) fn to_pixel(x: f64, y: f64, n_rows: usize, n_cols: usize, spacing: f64) -> (f64, f64) {
    let col = x / spacing + (n_cols as f64 - 1.0) / 2.0;
    let row = (n_rows as f64 - 1.0) / 2.0 - y / spacing;
    (row, col)
}

/// Center of pixel `(row, col)` in mm.
pub(crate) fn pixel_center(row: usize, col: usize, n_rows: usize, n_cols: usize, spacing: f64) -> (f64, f64) {
    let x = (col as f64 - (n_cols as f64 - 1.0) / 2.0) * spacing;
    let y = ((n_rows as f64 - 1.0) / 2.0 - row as f64) * spacing;
    (x, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hu_image(values: Vec<f64>) -> CtImage {
        let n = values.len();
        CtImage::new(Tensor::new(&[1, n], values).unwrap(), Unit::Hu, 1.0).unwrap()
    }

    #[test]
    fn water_and_air_attenuation() {
        let mu = hu_to_mu(&hu_image(vec![0.0, -1000.0]), MU_WATER_60KEV).unwrap();
        assert_eq!(mu.unit, Unit::MuPerMm);
        assert!((mu.data()[0] - 0.0206).abs() < 1e-15);
        assert_eq!(mu.data()[1], 0.0);
    }

    #[test]
    fn unit_round_trip() {
        let img = hu_image(vec![-1000.0, -512.3, 0.5, 42.0, 799.9]);
        let back = mu_to_hu(&hu_to_mu(&img, MU_WATER_60KEV).unwrap(), MU_WATER_60KEV).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-12), "{a} vs {b}");
        }
    }

    #[test]
    fn wrong_unit_is_rejected() {
        let img = hu_image(vec![0.0]);
        assert!(matches!(mu_to_hu(&img, MU_WATER_60KEV), Err(Error::Unit { .. })));
    }

    #[test]
    fn angles_increase_within_half_turn() {
        let g = ScanGeometry::for_image(64, 1.0);
        assert_eq!(g.n_detectors % 2, 1);
        assert!(g.n_detectors as f64 >= 64.0 * 2f64.sqrt());
        let a = g.angles();
        assert!(a.windows(2).all(|w| w[1] > w[0]));
        assert!(a[0] == 0.0 && *a.last().unwrap() < PI);
    }
}
