use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::{hu_from_normalized, normalize_hu, stack_images};
use super::{mse_loss, save_checkpoint, Checkpoint, TrainConfig};
use crate::ct_sim::{CtImage, TrainingPair};
use crate::error::{Error, Result};
use crate::metrics::rmse;
use crate::model::TransCt;
use crate::seed::derive_seed;
use crate::tensor::{no_grad, AdamConfig, AdamState, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_mse: f64,
    pub val_rmse_hu: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub rows: Vec<HistoryRow>,
}

impl History {
    pub const HEADER: &'static str = "epoch,lr,train_mse,val_rmse_hu";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            let val = r.val_rmse_hu.map(|v| format!("{v:?}")).unwrap_or_default();
            let _ = writeln!(s, "{},{:?},{:?},{val}", r.epoch, r.lr, r.train_mse);
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(Self::HEADER) {
            return Err(Error::Config(format!("history must start with `{}`", Self::HEADER)));
        }
        let rows = lines
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                let bad = || Error::Config(format!("history row {}: {l:?}", i + 1));
                let f: Vec<&str> = l.split(',').collect();
                if f.len() != 4 {
                    return Err(bad());
                }
                Ok(HistoryRow {
                    epoch: f[0].parse().map_err(|_| bad())?,
                    lr: f[1].parse().map_err(|_| bad())?,
                    train_mse: f[2].parse().map_err(|_| bad())?,
                    val_rmse_hu: if f[3].is_empty() { None } else { Some(f[3].parse().map_err(|_| bad())?) },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(History { rows })
    }
}

/// Mean over pairs of RMSE(HU) between `denoise(pair)` and the normal-dose
/// image.
pub fn validate_with(
    pairs: &[TrainingPair],
    denoise: impl Fn(&TrainingPair) -> Result<CtImage>,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("validation needs at least one pair"));
    }
    let mut total = 0.0;
    for p in pairs {
        total += rmse(&denoise(p)?, &p.nd)?;
    }
    Ok(total / pairs.len() as f64)
}

/// [`validate_with`] using the model on normalized inputs.
pub fn validate(model: &TransCt<f32>, pairs: &[TrainingPair]) -> Result<f64> {
    validate_with(pairs, |p| {
        let y = model.denoise(&normalize_hu(&p.ld)?)?;
        hu_from_normalized(&y, 0, p.ld.pixel_spacing_mm)
    })
}

/// Owns a model and its optimizer state across epochs.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: TransCt<f32>,
    pub adam: AdamState<f32>,
    /// Next epoch to run.
    pub epoch: usize,
    pub steps: u64,
}

type Batch = (Tensor<f32>, Tensor<f32>);

fn prepare(pairs: &[TrainingPair]) -> Result<Vec<Batch>> {
    let shape = pairs
        .first()
        .ok_or_else(|| Error::invalid("training needs at least one pair"))?
        .ld
        .grid
        .shape()
        .to_vec();
    pairs
        .iter()
        .map(|p| {
            if p.ld.grid.shape() != shape.as_slice() {
                return Err(Error::shape(format!(
                    "training pairs differ in shape: {:?} vs {shape:?}",
                    p.ld.grid.shape()
                )));
            }
            Ok((normalize_hu(&p.ld)?, normalize_hu(&p.nd)?))
        })
        .collect()
}

impl Trainer {
    pub fn new(model: TransCt<f32>) -> Self {
        Trainer {
            model,
            adam: AdamState::new(AdamConfig::default()),
            epoch: 0,
            steps: 0,
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Self {
        Trainer {
            model: ck.model,
            adam: ck.adam,
            epoch: ck.epoch,
            steps: ck.steps,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            adam: self.adam.clone(),
            epoch: self.epoch,
            steps: self.steps,
        }
    }

    /// Mean normalized-unit MSE of the current model over `pairs`.
    pub fn dataset_mse(&self, pairs: &[TrainingPair], batch_size: usize) -> Result<f64> {
        let data = prepare(pairs)?;
        let _g = no_grad();
        let mut total = 0.0;
        for chunk in data.chunks(batch_size.max(1)) {
            let x = stack_images(&chunk.iter().map(|b| &b.0).collect::<Vec<_>>())?;
            let y = stack_images(&chunk.iter().map(|b| &b.1).collect::<Vec<_>>())?;
            total += mse_loss(&self.model.forward(&x)?, &y)?.item() as f64 * chunk.len() as f64;
        }
        Ok(total / data.len() as f64)
    }

    /// Runs epochs `self.epoch..cfg.epochs`. With `out_dir`, writes
    /// `checkpoint.tct` every `checkpoint_every` epochs and at the end, and
    /// `history.csv` (appending to `prior`).
    pub fn run(
        &mut self,
        train: &[TrainingPair],
        val: &[TrainingPair],
        cfg: &TrainConfig,
        out_dir: Option<&Path>,
        prior: History,
    ) -> Result<History> {
        cfg.validate()?;
        let data = prepare(train)?;
        let mut history = prior;
        let mut last_good: Option<PathBuf> = None;
        let ckpt_path = out_dir.map(|d| d.join("checkpoint.tct"));
        let write_history = |h: &History| -> Result<()> {
            if let Some(d) = out_dir {
                let p = d.join("history.csv");
                fs::write(&p, h.to_csv()).map_err(|e| Error::io(format!("writing {}", p.display()), e))?;
            }
            Ok(())
        };

        while self.epoch < cfg.epochs {
            if cfg.max_steps.is_some_and(|m| self.steps >= m) {
                break;
            }
            let epoch = self.epoch;
            let lr = cfg.lr_schedule.lr_at(epoch);
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64, 11)));
            let (mut sum, mut seen) = (0.0, 0usize);
            for idx in order.chunks(cfg.batch_size) {
                if cfg.max_steps.is_some_and(|m| self.steps >= m) {
                    break;
                }
                let x = stack_images(&idx.iter().map(|&i| &data[i].0).collect::<Vec<_>>())?;
                let y = stack_images(&idx.iter().map(|&i| &data[i].1).collect::<Vec<_>>())?;
                let step = self.steps + 1;
                let reason = match self.model.forward(&x).and_then(|out| mse_loss(&out, &y)) {
                    Ok(loss) if loss.item().is_finite() => {
                        let value = loss.item() as f64;
                        self.model.params.zero_grad();
                        loss.backward()?;
                        self.adam.step(&mut self.model.params, lr)?;
                        self.steps += 1;
                        sum += value * idx.len() as f64;
                        seen += idx.len();
                        continue;
                    }
                    Ok(loss) => format!("loss became {} at step {step}", loss.item()),
                    Err(Error::NonFinite(what)) => format!("{what} at step {step}"),
                    Err(e) => return Err(e),
                };
                write_history(&history)?;
                return Err(Error::TrainingAborted { epoch, reason, last_good });
            }
            let val_rmse_hu = match (!val.is_empty()).then(|| validate(&self.model, val)).transpose() {
                Ok(Some(v)) if !v.is_finite() => {
                    write_history(&history)?;
                    let reason = format!("validation RMSE became {v}");
                    return Err(Error::TrainingAborted { epoch, reason, last_good });
                }
                Ok(v) => v,
                Err(Error::NonFinite(what)) => {
                    write_history(&history)?;
                    let reason = format!("{what} during validation");
                    return Err(Error::TrainingAborted { epoch, reason, last_good });
                }
                Err(e) => return Err(e),
            };
            let row = HistoryRow {
                epoch,
                lr,
                train_mse: sum / seen.max(1) as f64,
                val_rmse_hu,
            };
            log::info!(
                "epoch {epoch} lr {lr:e} train_mse {:.6} val_rmse_hu {}",
                row.train_mse,
                val_rmse_hu.map_or("-".into(), |v| format!("{v:.3}"))
            );
            history.rows.push(row);
            self.epoch += 1;
            if let Some(p) = &ckpt_path {
                if cfg.checkpoint_every > 0 && self.epoch.is_multiple_of(cfg.checkpoint_every) {
                    save_checkpoint(&self.checkpoint(), p)?;
                    last_good = Some(p.clone());
                }
            }
        }
        if let Some(p) = &ckpt_path {
            save_checkpoint(&self.checkpoint(), p)?;
        }
        write_history(&history)?;
        Ok(history)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ct_sim::Unit;
    use crate::model::{ModelConfig, Variant};
    use crate::training::LrSchedule;

    fn pairs(n: usize) -> Vec<TrainingPair> {
        (0..n)
            .map(|k| {
                let nd: Vec<f64> = (0..64 * 64).map(|i| ((i % 64) as f64 * 3.0 + k as f64 * 10.0) - 100.0).collect();
                let ld: Vec<f64> = nd.iter().enumerate().map(|(i, v)| v + if i % 2 == 0 { 20.0 } else { -20.0 }).collect();
                let mk = |d| CtImage::new(Tensor::new(&[64, 64], d).unwrap(), Unit::Hu, 1.0).unwrap();
                TrainingPair::new(mk(ld), mk(nd)).unwrap()
            })
            .collect()
    }

    fn tiny() -> TransCt<f32> {
        TransCt::new(ModelConfig { width: 0.125, n_heads: 2, ffn_mult: 1, ..Default::default() }, Variant::Full, 0)
            .unwrap()
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let mut t = Trainer::new(tiny());
        let before = t.model.params.snapshot();
        let cfg = TrainConfig { epochs: 2, batch_size: 2, lr_schedule: LrSchedule::constant(0.0), ..Default::default() };
        t.run(&pairs(3), &[], &cfg, None, History::default()).unwrap();
        assert_eq!(t.steps, 4);
        for (a, b) in before.iter().zip(t.model.params.iter()) {
            assert_eq!(a.value.data(), b.value.data(), "{}", a.name);
        }
    }

    #[test]
    fn same_seed_same_history() {
        let cfg = TrainConfig { epochs: 2, batch_size: 2, lr_schedule: LrSchedule::constant(1e-3), seed: 4, ..Default::default() };
        let run = || Trainer::new(tiny()).run(&pairs(3), &pairs(1), &cfg, None, History::default()).unwrap();
        assert_eq!(run(), run());
    }

    #[test]
    fn max_steps_stops_mid_epoch() {
        let mut t = Trainer::new(tiny());
        let cfg = TrainConfig { epochs: 10, batch_size: 1, max_steps: Some(5), ..Default::default() };
        let h = t.run(&pairs(3), &[], &cfg, None, History::default()).unwrap();
        assert_eq!(t.steps, 5);
        assert_eq!(h.rows.len(), 2);
    }

    #[test]
    fn training_does_not_touch_the_dataset() {
        let data = pairs(2);
        let copy: Vec<Vec<f64>> = data.iter().map(|p| p.ld.data().to_vec()).collect();
        let cfg = TrainConfig { epochs: 1, batch_size: 2, lr_schedule: LrSchedule::constant(1e-3), ..Default::default() };
        Trainer::new(tiny()).run(&data, &[], &cfg, None, History::default()).unwrap();
        for (p, c) in data.iter().zip(copy) {
            assert_eq!(p.ld.data(), c.as_slice());
        }
    }

    #[test]
    fn validation_basics() {
        let data = pairs(2);
        assert_eq!(validate_with(&data, |p| Ok(p.nd.clone())).unwrap(), 0.0);
        let r = validate(&tiny(), &data).unwrap();
        assert!(r.is_finite() && r > 0.0);
        assert!(validate_with(&[], |p| Ok(p.nd.clone())).is_err());
    }

    #[test]
    fn nan_loss_aborts() {
        let mut bad = pairs(1);
        let nan = CtImage::new(Tensor::full(&[64, 64], f64::NAN), Unit::Hu, 1.0).unwrap();
        bad[0].nd = nan;
        let mut t = Trainer::new(tiny());
        let cfg = TrainConfig { epochs: 1, batch_size: 1, ..Default::default() };
        let err = t.run(&bad, &[], &cfg, None, History::default()).unwrap_err();
        assert!(matches!(err, Error::TrainingAborted { epoch: 0, .. }), "{err}");
    }

    #[test]
    fn history_csv_round_trip() {
        let h = History {
            rows: vec![
                HistoryRow { epoch: 0, lr: 1e-4, train_mse: 0.5, val_rmse_hu: Some(30.0) },
                HistoryRow { epoch: 1, lr: 1e-5, train_mse: 0.25, val_rmse_hu: None },
            ],
        };
        assert_eq!(History::parse_csv(&h.to_csv()).unwrap(), h);
    }
}
