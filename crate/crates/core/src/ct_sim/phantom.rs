use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{pixel_center, CtImage, Unit, HU_AIR};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Inner-structure HU range.
pub const INNER_HU: (f64, f64) = (-900.0, 800.0);

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    angle: f64,
    hu: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        u * u + v * v <= 1.0
    }
}

/// Phantom parameters other than the seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhantomSpec {
    pub size: usize,
    pub n_ellipses: usize,
    pub pixel_spacing_mm: f64,
}

fn rasterize(size: usize, spacing: f64, body: Ellipse, inner: &[Ellipse]) -> Result<CtImage> {
    let mut data = vec![HU_AIR; size * size];
    for row in 0..size {
        for col in 0..size {
            // ellipse geometry is in units of the field of view
            let (x, y) = pixel_center(row, col, size, size, 1.0);
            let (x, y) = (x / size as f64, y / size as f64);
            if !body.contains(x, y) {
                continue;
            }
            let mut hu = body.hu;
            for e in inner {
                if e.contains(x, y) {
                    hu = e.hu;
                }
            }
            data[row * size + col] = hu;
        }
    }
    CtImage::new(Tensor::new(&[size, size], data)?, Unit::Hu, spacing)
}

/// Random abdomen-like phantom: an air background, one body ellipse close
/// to water and `n_ellipses` inner ellipses in `[-900, 800]` HU clipped to
/// the body. Deterministic in `seed`.
pub fn make_phantom(seed: u64, spec: &PhantomSpec) -> Result<CtImage> {
    if spec.size < 32 {
        return Err(Error::invalid(format!(
            "phantom size must be >= 32, got {}",
            spec.size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let body = Ellipse {
        cx: 0.0,
        cy: 0.0,
        a: rng.random_range(0.38..0.46),
        b: rng.random_range(0.30..0.40),
        angle: 0.0,
        hu: rng.random_range(-20.0..20.0),
    };
    let inner: Vec<Ellipse> = (0..spec.n_ellipses)
        .map(|_| {
            let r = rng.random_range(0.0..0.75f64).sqrt();
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            Ellipse {
                cx: r * body.a * phi.cos(),
                cy: r * body.b * phi.sin(),
                a: rng.random_range(0.02..0.14),
                b: rng.random_range(0.02..0.14),
                angle: rng.random_range(0.0..std::f64::consts::PI),
                hu: rng.random_range(INNER_HU.0..=INNER_HU.1),
            }
        })
        .collect();
    rasterize(spec.size, spec.pixel_spacing_mm, body, &inner)
}

/// Centered uniform disk of radius `radius_frac * size` on air.
pub fn disk_phantom(size: usize, radius_frac: f64, hu: f64, pixel_spacing_mm: f64) -> Result<CtImage> {
    let body = Ellipse {
        cx: 0.0,
        cy: 0.0,
        a: radius_frac,
        b: radius_frac,
        angle: 0.0,
        hu,
    };
    rasterize(size, pixel_spacing_mm, body, &[])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize) -> PhantomSpec {
        PhantomSpec {
            size: 64,
            n_ellipses: n,
            pixel_spacing_mm: 1.0,
        }
    }

    #[test]
    fn body_only_is_uniform() {
        let img = make_phantom(5, &spec(0)).unwrap();
        let inside: Vec<f64> = img.data().iter().copied().filter(|v| *v != HU_AIR).collect();
        assert!(!inside.is_empty());
        assert!(inside.iter().all(|v| *v == inside[0] && v.abs() <= 20.0));
        assert_eq!(img.data()[0], HU_AIR);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = make_phantom(9, &spec(6)).unwrap();
        let b = make_phantom(9, &spec(6)).unwrap();
        let c = make_phantom(10, &spec(6)).unwrap();
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn values_within_support() {
        for seed in 0..20 {
            let img = make_phantom(seed, &spec(8)).unwrap();
            assert!(img.data().iter().all(|v| (-1000.0..=800.0).contains(v)));
        }
    }

    #[test]
    fn small_sizes_are_rejected() {
        let mut s = spec(1);
        s.size = 16;
        assert!(make_phantom(0, &s).is_err());
    }
}
