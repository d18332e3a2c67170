//! Overfits the desk-scale network on eight 64x64 patches and reports the
//! training-MSE drop and the validation RMSE against the raw low-dose input.
//!
//! ```text
//! RUST_LOG=info cargo run --release --example overfit -- [steps] [lr]
//! ```

use std::time::Instant;

use transct::ct_sim::{make_dataset, SimConfig, TrainingPair};
use transct::metrics::rmse;
use transct::model::{ModelConfig, TransCt, Variant};
use transct::training::{extract_patches, validate, History, LrSchedule, TrainConfig, Trainer};

fn main() -> transct::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(2000);
    let lr: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1e-3);

    let slices: Vec<TrainingPair> = make_dataset(5, &SimConfig::for_size(256), 0)?
        .into_iter()
        .map(|s| s.pair)
        .collect();
    let train = extract_patches(&slices[..4], 64, 2, 1)?;
    let val = extract_patches(&slices[4..], 64, 1, 2)?;
    let raw = rmse(&val[0].ld, &val[0].nd)?;

    let model = TransCt::new(ModelConfig::default(), Variant::Full, 0)?;
    let mut trainer = Trainer::new(model);
    let cfg = TrainConfig {
        epochs: steps as usize,
        batch_size: 8,
        lr_schedule: LrSchedule::constant(lr),
        checkpoint_every: 0,
        max_steps: Some(steps),
        ..TrainConfig::default()
    };
    let before = trainer.dataset_mse(&train, 8)?;
    let val_before = validate(&trainer.model, &val)?;
    let start = Instant::now();
    let history = trainer.run(&train, &val, &cfg, None, History::default())?;
    for r in history.rows.iter().step_by(100) {
        log::info!("step {} train_mse {:.6} val_rmse_hu {:.2}", r.epoch + 1, r.train_mse, r.val_rmse_hu.unwrap_or(f64::NAN));
    }
    let after = trainer.dataset_mse(&train, 8)?;
    let val_after = validate(&trainer.model, &val)?;

    println!("{steps} steps in {:.1?}", start.elapsed());
    println!("train mse {before:.5} -> {after:.6} (x{:.1} lower)", before / after);
    println!("validation rmse {val_before:.2} -> {val_after:.2} HU, raw low-dose {raw:.2} HU");
    Ok(())
}
