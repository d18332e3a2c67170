//! Mean-squared-error training with Adam, a piecewise-constant learning
//! rate, validation in HU, CSV history and checkpoints.

mod checkpoint;
mod data;
mod schedule;
mod trainer;

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, Checkpoint};
pub use data::{extract_patches, hu_from_normalized, normalize_hu, stack_images};
pub use schedule::LrSchedule;
pub use trainer::{validate, validate_with, History, HistoryRow, Trainer};

use crate::error::{Error, Result};
use crate::kv::Kv;
use crate::tensor::{mean, mul, sub, Scalar, Tensor};

/// `mean((pred - target)^2)`.
pub fn mse_loss<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>) -> Result<Tensor<S>> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "mse: prediction {:?} and target {:?} differ",
            pred.shape(),
            target.shape()
        )));
    }
    let d = sub(pred, target)?;
    Ok(mean(&mul(&d, &d)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    /// Epochs between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Stops after this many optimizer steps, mid-epoch if needed.
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 8,
            lr_schedule: LrSchedule::default(),
            seed: 0,
            checkpoint_every: 10,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        self.lr_schedule.validate()
    }

    /// Writes every field except `seed`, which run configs keep at top level.
    pub fn write_kv(&self, prefix: &str, out: &mut String) {
        out.push_str(&format!("{prefix}.epochs = {}\n", self.epochs));
        out.push_str(&format!("{prefix}.batch_size = {}\n", self.batch_size));
        out.push_str(&format!("{prefix}.lr_schedule = {}\n", self.lr_schedule));
        out.push_str(&format!("{prefix}.checkpoint_every = {}\n", self.checkpoint_every));
        if let Some(m) = self.max_steps {
            out.push_str(&format!("{prefix}.max_steps = {m}\n"));
        }
    }

    pub fn read_kv(&mut self, kv: &mut Kv, prefix: &str) -> Result<()> {
        kv.update(&format!("{prefix}.epochs"), &mut self.epochs)?;
        kv.update(&format!("{prefix}.batch_size"), &mut self.batch_size)?;
        kv.update(&format!("{prefix}.lr_schedule"), &mut self.lr_schedule)?;
        kv.update(&format!("{prefix}.checkpoint_every"), &mut self.checkpoint_every)?;
        if let Some(m) = kv.get(&format!("{prefix}.max_steps"))? {
            self.max_steps = Some(m);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_closed_forms() {
        let a = Tensor::<f64>::new(&[2, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(mse_loss(&a, &a).unwrap().item(), 0.0);
        let b = Tensor::new(&[2, 2], a.data().iter().map(|v| v + 2.0).collect()).unwrap();
        assert!((mse_loss(&b, &a).unwrap().item() - 4.0).abs() < 1e-12);
        assert!(mse_loss(&a, &Tensor::zeros(&[4])).is_err());
    }

    #[test]
    fn mse_gradient_is_two_diff_over_n() {
        let p = Tensor::<f64>::leaf(&[3], vec![1.0, 2.0, 4.0], true).unwrap();
        let t = Tensor::new(&[3], vec![0.0, 2.0, 1.0]).unwrap();
        mse_loss(&p, &t).unwrap().backward().unwrap();
        let g = p.grad().unwrap();
        for (gi, (pi, ti)) in g.iter().zip(p.data().iter().zip(t.data())) {
            assert!((gi - 2.0 * (pi - ti) / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn config_kv_round_trip() {
        let c = TrainConfig { epochs: 3, max_steps: Some(50), ..Default::default() };
        let mut s = String::new();
        c.write_kv("train", &mut s);
        let mut back = TrainConfig::default();
        let mut kv = Kv::parse(&s).unwrap();
        back.read_kv(&mut kv, "train").unwrap();
        kv.reject_unknown().unwrap();
        assert_eq!(back, c);
    }
}
