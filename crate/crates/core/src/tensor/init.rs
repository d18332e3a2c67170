use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Half-width `sqrt(6 / (fan_in + fan_out))` of the Xavier uniform range.
///
/// The first two extents give the fans; trailing extents (a conv kernel's
/// receptive field) multiply both.
pub fn xavier_bound(shape: &[usize]) -> Result<f64> {
    if shape.len() < 2 {
        return Err(Error::shape(format!(
            "xavier init needs rank >= 2, got shape {shape:?}"
        )));
    }
    let receptive: usize = shape[2..].iter().product();
    let fans = (shape[0] + shape[1]) * receptive;
    Ok((6.0 / fans as f64).sqrt())
}

/// Xavier/Glorot uniform initialization, deterministic in `seed`.
pub fn xavier_init<S: Scalar>(shape: &[usize], seed: u64) -> Result<Tensor<S>> {
    let bound = xavier_bound(shape)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| S::lit(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::leaf(shape, data, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_stay_inside_bound() {
        let shape = [100, 100];
        let bound = xavier_bound(&shape).unwrap();
        let t = xavier_init::<f64>(&shape, 7).unwrap();
        assert!(t.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn variance_matches_glorot() {
        // conv-shaped: fans = (16 + 8) * 9
        let shape = [16, 8, 3, 3];
        let t = xavier_init::<f64>(&[100, 100], 11).unwrap();
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let expected = 2.0 / 200.0;
        assert!((var / expected - 1.0).abs() < 0.2, "var {var} vs {expected}");

        let c = xavier_init::<f64>(&shape, 3).unwrap();
        let bound = xavier_bound(&shape).unwrap();
        assert!((bound - (6.0f64 / 216.0).sqrt()).abs() < 1e-15);
        assert!(c.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn same_seed_same_bits() {
        let a = xavier_init::<f32>(&[8, 4, 3, 3], 42).unwrap();
        let b = xavier_init::<f32>(&[8, 4, 3, 3], 42).unwrap();
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&xavier_init::<f32>(&[8, 4, 3, 3], 43).unwrap()));
    }

    #[test]
    fn rank_one_is_rejected() {
        assert!(xavier_init::<f32>(&[5], 0).is_err());
    }
}
