//! Runs the command-line workflow in-process on a small dataset: simulate,
//! train briefly, denoise every slice and score it.
//!
//! ```text
//! RUST_LOG=info cargo run --release --example pipeline -- [workdir] [epochs]
//! ```

use std::path::PathBuf;

use transct::cli::{cmd_denoise, cmd_eval, cmd_simulate, cmd_train, RunConfig};
use transct::model::ModelConfig;

fn main() -> transct::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let root = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("transct-pipeline"));
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);

    let mut cfg = RunConfig::parse("sim.size = 64\nsim.n_pairs = 4\ndata.patches_per_image = 0")?;
    cfg.model = ModelConfig { width: 0.125, n_heads: 2, ffn_mult: 1, ..ModelConfig::default() };
    cfg.train.epochs = epochs;

    let (data, run, den) = (root.join("data"), root.join("run"), root.join("denoised"));
    cmd_simulate(&cfg, &data, true)?;
    let history = cmd_train(&cfg, &data, &run, false, true)?;
    for row in &history.rows {
        println!("epoch {}  train mse {:.5}  val rmse {:?}", row.epoch, row.train_mse, row.val_rmse_hu);
    }
    let n = cmd_denoise(&cfg, &run.join("checkpoint.tct"), &data, &den)?;
    let report = cmd_eval(&den, &data, None)?;
    println!("denoised {n} slices");
    print!("{}", report.to_table("model"));
    println!("outputs under {}", root.display());
    Ok(())
}
