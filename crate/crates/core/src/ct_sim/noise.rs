use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::Sinogram;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Photon budget of a simulated scan.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DoseConfig {
    /// Incident photons per ray at full dose.
    pub i0: f64,
    /// Fraction of full dose used for the low-dose scan.
    pub dose_fraction: f64,
    pub seed: u64,
}

impl Default for DoseConfig {
    fn default() -> Self {
        DoseConfig {
            i0: 1e5,
            dose_fraction: 0.25,
            seed: 0,
        }
    }
}

impl DoseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dose_fraction > 0.0 && self.dose_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "dose fraction must lie in (0, 1], got {}",
                self.dose_fraction
            )));
        }
        if !(self.i0 * self.dose_fraction >= 1.0) {
            return Err(Error::invalid(format!(
                "expected photon count I0 * fraction = {} must be >= 1",
                self.i0 * self.dose_fraction
            )));
        }
        Ok(())
    }

    pub fn photons(&self) -> f64 {
        self.i0 * self.dose_fraction
    }
}

/// Replaces each line integral `p` by `-ln(max(N, 1) / I)` with
/// `N ~ Poisson(I * exp(-p))` and `I = i0 * dose_fraction`.
pub fn insert_poisson_noise(sino: &Sinogram, dose: &DoseConfig) -> Result<Sinogram> {
    dose.validate()?;
    if let Some(bad) = sino.values.data().iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::invalid(format!(
            "sinogram values must be finite and non-negative, found {bad}"
        )));
    }
    let photons = dose.photons();
    let mut rng = ChaCha8Rng::seed_from_u64(dose.seed);
    let mut noisy = Vec::with_capacity(sino.values.len());
    for &p in sino.values.data() {
        let lambda = photons * (-p).exp();
        let counts = if lambda > 0.0 {
            Poisson::new(lambda)
                .map_err(|e| Error::invalid(format!("poisson rate {lambda}: {e}")))?
                .sample(&mut rng)
        } else {
            0.0
        };
        noisy.push(-(counts.max(1.0) / photons).ln());
    }
    Ok(Sinogram {
        values: Tensor::new(sino.values.shape(), noisy)?,
        geometry: sino.geometry.clone(),
    })
}
