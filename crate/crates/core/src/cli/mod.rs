//! The six pipeline commands behind the `transct` binary. Each writes a
//! `run_manifest.cfg` into its output location holding the full resolved
//! configuration.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use walkdir::WalkDir;

pub use config::{DataSettings, Paths, RunConfig};

use crate::ct_sim::{load_dataset, make_dataset, write_dataset, CtImage, DatasetManifest, TrainingPair, Unit};
use crate::error::{Error, Result};
use crate::freq::{decompose, decompose_batch, reflect};
use crate::metrics::{evaluate_pairs, MetricReport};
use crate::model::{TransCt, Variant, FFN_MULTIPLIERS};
use crate::seed::derive_seed;
use crate::tensor::{io, Tensor};
use crate::training::{
    extract_patches, hu_from_normalized, load_checkpoint_expecting, normalize_hu, History, Trainer,
};

pub const RUN_MANIFEST: &str = "run_manifest.cfg";
pub const DATASET_MANIFEST: &str = "manifest";

/// Reads `--config` (or defaults) and applies the `--seed` / `--variant`
/// flags on top.
pub fn resolve_config(path: Option<&Path>, seed: Option<u64>, variant: Option<Variant>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(v) = variant {
        cfg.variant = v;
    }
    Ok(cfg)
}

/// Builds the global rayon pool from `TRANSCT_THREADS` when it is set.
pub fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var("TRANSCT_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Config(format!("TRANSCT_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    write_text(&dir.join(RUN_MANIFEST), &format!("# transct {command}\n{}", cfg.to_text()))
}

fn is_dataset(dir: &Path) -> bool {
    dir.join(DATASET_MANIFEST).is_file() && dir.join("pairs").is_dir()
}

fn dir_is_empty(dir: &Path) -> Result<bool> {
    match fs::read_dir(dir) {
        Ok(mut it) => Ok(it.next().is_none()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(true),
        Err(e) => Err(Error::io(format!("listing {}", dir.display()), e)),
    }
}

/// Simulates `sim.n_pairs` pairs into `out` (dataset layout plus manifests).
pub fn cmd_simulate(cfg: &RunConfig, out: &Path, force: bool) -> Result<DatasetManifest> {
    let size = cfg.sim.size;
    if !size.is_multiple_of(32) {
        let lo = (size / 32).max(1) * 32;
        return Err(Error::Config(format!(
            "sim.size = {size} is not a multiple of 32 (the network downsamples by 32); try {lo} or {}",
            lo + 32
        )));
    }
    cfg.validate()?;
    if !dir_is_empty(out)? {
        if !force {
            return Err(Error::invalid(format!(
                "output directory {} is not empty; pass --force to overwrite it",
                out.display()
            )));
        }
        let pairs = out.join("pairs");
        if pairs.exists() {
            fs::remove_dir_all(&pairs).map_err(|e| Error::io(format!("removing {}", pairs.display()), e))?;
        }
    }
    create_dir(out)?;
    let started = Instant::now();
    let pairs: Vec<TrainingPair> = make_dataset(cfg.n_pairs, &cfg.sim, cfg.seed)?
        .into_iter()
        .map(|s| s.pair)
        .collect();
    let manifest = DatasetManifest {
        seed: cfg.seed,
        n_pairs: cfg.n_pairs,
        config: cfg.sim.clone(),
    };
    write_dataset(out, &pairs, &manifest)?;
    let mut echo = cfg.clone();
    echo.paths.out = Some(out.to_path_buf());
    write_manifest(out, "simulate", &echo)?;
    log::info!("simulated {} pairs in {:.1?}", pairs.len(), started.elapsed());
    Ok(manifest)
}

/// Splits an `[H,W]` or `[B,C,H,W]` tensor file into `low.tct` and
/// `high.tct` under `out`.
pub fn cmd_decompose(cfg: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let x: Tensor<f64> = io::load(input)?;
    let pair = match x.shape().len() {
        2 => decompose(&x, cfg.model.sigma)?,
        4 => decompose_batch(&x, cfg.model.sigma)?,
        _ => {
            return Err(Error::shape(format!(
                "{}: expected an [H,W] or [B,C,H,W] tensor, got {:?}",
                input.display(),
                x.shape()
            )))
        }
    };
    create_dir(out)?;
    io::save(out.join("low.tct"), &pair.low)?;
    io::save(out.join("high.tct"), &pair.high)?;
    let mut echo = cfg.clone();
    echo.paths.input = Some(input.to_path_buf());
    echo.paths.out = Some(out.to_path_buf());
    write_manifest(out, "decompose", &echo)
}

/// Training patches and whole-image validation pairs cut from a dataset.
pub struct PreparedData {
    pub manifest: DatasetManifest,
    pub train: Vec<TrainingPair>,
    pub val: Vec<TrainingPair>,
}

pub fn prepare_data(cfg: &RunConfig, data: &Path) -> Result<PreparedData> {
    if !data.join(DATASET_MANIFEST).is_file() {
        return Err(Error::invalid(format!(
            "no dataset at {} (expected a `{DATASET_MANIFEST}` file written by `simulate`)",
            data.display()
        )));
    }
    let (manifest, mut pairs) = load_dataset(data)?;
    let n_val = cfg.data.val_pairs.min(pairs.len() - 1);
    let val = pairs.split_off(pairs.len() - n_val);
    let train = if cfg.data.patches_per_image == 0 {
        pairs
    } else {
        extract_patches(
            &pairs,
            cfg.model.patch_size,
            cfg.data.patches_per_image,
            derive_seed(cfg.seed, 0, 21),
        )?
    };
    Ok(PreparedData { manifest, train, val })
}

/// Trains on the dataset at `data`, writing `checkpoint.tct`,
/// `history.csv` and the run manifest to `out`. With `resume`, continues
/// from the checkpoint and history already in `out`.
pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path, resume: bool, force: bool) -> Result<History> {
    cfg.validate()?;
    let prepared = prepare_data(cfg, data)?;
    let ckpt = out.join("checkpoint.tct");
    let (mut trainer, prior) = if resume {
        let ck = load_checkpoint_expecting(&ckpt, &cfg.model, cfg.variant)?;
        let hist_path = out.join("history.csv");
        let text = fs::read_to_string(&hist_path)
            .map_err(|e| Error::io(format!("reading {}", hist_path.display()), e))?;
        let mut prior = History::parse_csv(&text)?;
        prior.rows.retain(|r| r.epoch < ck.epoch);
        log::info!("resuming at epoch {} (step {})", ck.epoch, ck.steps);
        (Trainer::from_checkpoint(ck), prior)
    } else {
        if ckpt.exists() && !force {
            return Err(Error::invalid(format!(
                "{} already exists; pass --force to start over or --resume to continue",
                ckpt.display()
            )));
        }
        let model = TransCt::new(cfg.model.clone(), cfg.variant, cfg.seed)?;
        (Trainer::new(model), History::default())
    };
    create_dir(out)?;
    let mut echo = cfg.clone();
    echo.paths.data = Some(data.to_path_buf());
    echo.paths.out = Some(out.to_path_buf());
    write_manifest(out, "train", &echo)?;
    log::info!(
        "training {} ({} parameters) on {} samples, validating on {}",
        cfg.variant,
        trainer.model.num_parameters(),
        prepared.train.len(),
        prepared.val.len()
    );
    trainer.run(&prepared.train, &prepared.val, &cfg.train_config(), Some(out), prior)
}

fn round_up_32(n: usize) -> usize {
    n.div_ceil(32) * 32
}

/// Denoises one HU image of any size: symmetric reflect-pad to a multiple
/// of 32, run the network, crop back to the input window.
pub fn denoise_image(model: &TransCt<f32>, img: &CtImage) -> Result<CtImage> {
    if img.unit != Unit::Hu {
        return Err(Error::Unit { expected: Unit::Hu.name(), found: img.unit.name() });
    }
    let (h, w) = (img.height(), img.width());
    let (ph, pw) = (round_up_32(h), round_up_32(w));
    let (top, left) = ((ph - h) / 2, (pw - w) / 2);
    let src = img.data();
    let padded: Vec<f64> = (0..ph)
        .flat_map(|y| {
            let sy = reflect(y as isize - top as isize, h);
            (0..pw).map(move |x| src[sy * w + reflect(x as isize - left as isize, w)])
        })
        .collect();
    let padded = CtImage::new(Tensor::new(&[ph, pw], padded)?, Unit::Hu, img.pixel_spacing_mm)?;
    let y = model.denoise(&normalize_hu::<f32>(&padded)?)?;
    let full = hu_from_normalized(&y, 0, img.pixel_spacing_mm)?;
    let out: Vec<f64> = (0..h)
        .flat_map(|r| full.data()[(r + top) * pw + left..(r + top) * pw + left + w].iter().copied())
        .collect();
    CtImage::new(Tensor::new(&[h, w], out)?, Unit::Hu, img.pixel_spacing_mm)
}

/// `(name, image)` pairs from a tensor file, a dataset (its `kind`
/// images, `ld` or `nd`) or a directory of tensor files.
fn collect_images(path: &Path, kind: &str) -> Result<Vec<(String, CtImage)>> {
    let load = |p: &Path, spacing: f64| -> Result<CtImage> {
        let t: Tensor<f64> = io::load(p)?;
        if t.shape().len() != 2 {
            return Err(Error::shape(format!("{}: expected an [H,W] image, got {:?}", p.display(), t.shape())));
        }
        CtImage::new(t, Unit::Hu, spacing)
    };
    if path.is_file() {
        let name = path.file_name().map_or("image.tct".into(), |n| n.to_string_lossy().into_owned());
        return Ok(vec![(name, load(path, 1.0)?)]);
    }
    if is_dataset(path) {
        let (_, pairs) = load_dataset(path)?;
        return Ok(pairs
            .into_iter()
            .enumerate()
            .map(|(i, p)| (format!("{i:04}.tct"), if kind == "nd" { p.nd } else { p.ld }))
            .collect());
    }
    if !path.is_dir() {
        return Err(Error::invalid(format!("{} is neither a tensor file nor a directory", path.display())));
    }
    let mut files: Vec<PathBuf> = WalkDir::new(path)
        .sort_by_file_name()
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file() && e.path().extension().is_some_and(|x| x == "tct"))
        .map(|e| e.into_path())
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| {
            let rel = p.strip_prefix(path).unwrap_or(p);
            Ok((rel.to_string_lossy().replace(std::path::MAIN_SEPARATOR, "_"), load(p, 1.0)?))
        })
        .collect()
}

/// Denoises `input` (a tensor file, a dataset's low-dose images or a
/// directory of tensor files) with the checkpoint. A file input writes the
/// file `output`; otherwise `output` is a directory of `.tct` files.
/// Returns the number of images written.
pub fn cmd_denoise(cfg: &RunConfig, checkpoint: &Path, input: &Path, output: &Path) -> Result<usize> {
    let ck = load_checkpoint_expecting(checkpoint, &cfg.model, cfg.variant)?;
    let images = collect_images(input, "ld")?;
    if images.is_empty() {
        return Err(Error::invalid(format!("no images found under {}", input.display())));
    }
    let single = input.is_file();
    let out_dir = if single { output.parent().map(Path::to_path_buf).unwrap_or_default() } else { output.to_path_buf() };
    if !out_dir.as_os_str().is_empty() {
        create_dir(&out_dir)?;
    }
    for (name, img) in &images {
        let started = Instant::now();
        let den = denoise_image(&ck.model, img)?;
        let dest = if single { output.to_path_buf() } else { output.join(name) };
        io::save(&dest, &den.grid)?;
        log::info!("{name}: {}x{} denoised in {:.3?}", img.height(), img.width(), started.elapsed());
    }
    let mut echo = cfg.clone();
    echo.paths.checkpoint = Some(checkpoint.to_path_buf());
    echo.paths.input = Some(input.to_path_buf());
    echo.paths.out = Some(output.to_path_buf());
    let manifest_dir = if out_dir.as_os_str().is_empty() { PathBuf::from(".") } else { out_dir };
    write_manifest(&manifest_dir, "denoise", &echo)?;
    Ok(images.len())
}

/// Scores `outputs` against `references` image by image. A dataset
/// directory contributes its low-dose images as outputs and its
/// normal-dose images as references. With `out`, writes `metrics.csv` and
/// `metrics.txt` there.
pub fn cmd_eval(outputs: &Path, references: &Path, out: Option<&Path>) -> Result<MetricReport> {
    let outs = collect_images(outputs, "ld")?;
    let refs = collect_images(references, "nd")?;
    if outs.len() != refs.len() {
        return Err(Error::invalid(format!(
            "{} has {} images but {} has {}",
            outputs.display(),
            outs.len(),
            references.display(),
            refs.len()
        )));
    }
    let a: Vec<CtImage> = outs.into_iter().map(|(_, i)| i).collect();
    let b: Vec<CtImage> = refs.into_iter().map(|(_, i)| i).collect();
    let report = evaluate_pairs(&a, &b)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        write_text(&dir.join("metrics.csv"), &report.to_csv())?;
        write_text(&dir.join("metrics.txt"), &report.to_table("output"))?;
    }
    Ok(report)
}

/// One row of the ablation summary.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub name: String,
    pub variant: Variant,
    pub ffn_mult: usize,
    pub parameters: usize,
    pub final_train_mse: f64,
    pub report: MetricReport,
}

/// Trains each architecture variant and each feed-forward multiplier for
/// `ablate.steps` steps on the same data and seed, then scores them on the
/// validation images. Writes one directory per run plus `summary.csv` and
/// `summary.txt`.
pub fn cmd_ablate(cfg: &RunConfig, data: &Path, out: &Path) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let prepared = prepare_data(cfg, data)?;
    let eval_set: &[TrainingPair] = if prepared.val.is_empty() {
        log::warn!("no validation pairs; scoring on the training samples");
        &prepared.train
    } else {
        &prepared.val
    };
    let refs: Vec<CtImage> = eval_set.iter().map(|p| p.nd.clone()).collect();
    let raw = evaluate_pairs(&eval_set.iter().map(|p| p.ld.clone()).collect::<Vec<_>>(), &refs)?;

    let mut runs: Vec<(String, Variant, usize)> = Variant::ALL
        .iter()
        .map(|v| (v.name().to_string(), *v, cfg.model.ffn_mult))
        .collect();
    runs.extend(FFN_MULTIPLIERS.iter().map(|&m| (format!("ffn{m}"), Variant::Full, m)));

    create_dir(out)?;
    let mut rows = Vec::new();
    for (name, variant, ffn_mult) in runs {
        let mut run_cfg = cfg.clone();
        run_cfg.variant = variant;
        run_cfg.model.ffn_mult = ffn_mult;
        run_cfg.train.max_steps = Some(cfg.ablate_steps);
        run_cfg.train.epochs = cfg.ablate_steps.max(1) as usize;
        run_cfg.train.checkpoint_every = 0;
        run_cfg.paths.data = Some(data.to_path_buf());
        let dir = out.join(&name);
        create_dir(&dir)?;
        run_cfg.paths.out = Some(dir.clone());
        write_manifest(&dir, "ablate", &run_cfg)?;

        let started = Instant::now();
        let mut trainer = Trainer::new(TransCt::new(run_cfg.model.clone(), variant, cfg.seed)?);
        let history = trainer.run(&prepared.train, &[], &run_cfg.train_config(), Some(&dir), History::default())?;
        let outputs = eval_set
            .iter()
            .map(|p| denoise_image(&trainer.model, &p.ld))
            .collect::<Result<Vec<_>>>()?;
        let report = evaluate_pairs(&outputs, &refs)?;
        write_text(&dir.join("metrics.csv"), &report.to_csv())?;
        log::info!("{name}: {} steps in {:.1?}, rmse {:.2} HU", trainer.steps, started.elapsed(), report.mean.rmse_hu);
        rows.push(AblationRow {
            name,
            variant,
            ffn_mult,
            parameters: trainer.model.num_parameters(),
            final_train_mse: history.rows.last().map_or(f64::NAN, |r| r.train_mse),
            report,
        });
    }
    write_text(&out.join("summary.csv"), &ablation_csv(&rows))?;
    write_text(&out.join("summary.txt"), &ablation_table(&raw, &rows))?;
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("run,variant,ffn_mult,parameters,train_mse,rmse_hu,rmse_sd,ssim,ssim_sd,vif,vif_sd\n");
    for r in rows {
        let (m, d) = (&r.report.mean, &r.report.sd);
        let _ = writeln!(
            s,
            "{},{},{},{},{:e},{},{},{},{},{},{}",
            r.name, r.variant, r.ffn_mult, r.parameters, r.final_train_mse, m.rmse_hu, d.rmse_hu, m.ssim, d.ssim, m.vif, d.vif
        );
    }
    s
}

/// Aligned table with one row per run and a raw low-dose reference row.
pub fn ablation_table(raw: &MetricReport, rows: &[AblationRow]) -> String {
    let cell = |m: f64, sd: f64, prec: usize| format!("{m:.prec$}±{sd:.prec$}");
    let mut s = format!(
        "{:<16} {:>10} {:>18} {:>16} {:>16}\n",
        "run", "params", "RMSE (HU)", "SSIM", "VIF"
    );
    let mut line = |name: &str, params: String, r: &MetricReport| {
        let _ = writeln!(
            s,
            "{:<16} {:>10} {:>18} {:>16} {:>16}",
            name,
            params,
            cell(r.mean.rmse_hu, r.sd.rmse_hu, 3),
            cell(r.mean.ssim, r.sd.ssim, 4),
            cell(r.mean.vif, r.sd.vif, 4)
        );
    };
    line("ldct", "-".into(), raw);
    for r in rows {
        line(&r.name, r.parameters.to_string(), &r.report);
    }
    s
}
