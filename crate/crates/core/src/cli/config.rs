use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::ct_sim::SimConfig;
use crate::error::{Error, Result};
use crate::kv::Kv;
use crate::model::{ModelConfig, Variant};
use crate::training::TrainConfig;

/// How training data is cut from a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSettings {
    /// Pairs held out from the end of the dataset for validation.
    pub val_pairs: usize,
    /// Random `model.patch_size` crops per training image; 0 trains on
    /// whole images.
    pub patches_per_image: usize,
}

impl Default for DataSettings {
    fn default() -> Self {
        DataSettings { val_pairs: 1, patches_per_image: 4 }
    }
}

/// Optional locations; command-line arguments take precedence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub references: Option<PathBuf>,
}

/// Everything a command needs, as flat `section.key = value` text.
///
/// `seed` drives phantom generation, weight init and batch order. Unknown
/// keys are an error, and [`RunConfig::to_text`] writes every field, so an
/// emitted manifest can be fed back through `--config`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub variant: Variant,
    pub n_pairs: usize,
    pub sim: SimConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataSettings,
    /// Optimizer steps per ablation run.
    pub ablate_steps: u64,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            variant: Variant::Full,
            n_pairs: 8,
            sim: SimConfig::for_size(256),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataSettings::default(),
            ablate_steps: 50,
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = Kv::parse(text)?;
        let mut c = RunConfig::default();
        kv.update("seed", &mut c.seed)?;
        kv.update("variant", &mut c.variant)?;

        kv.update("sim.n_pairs", &mut c.n_pairs)?;
        let size: usize = kv.get("sim.size")?.unwrap_or(c.sim.size);
        if size == 0 {
            return Err(Error::Config("sim.size must be positive".into()));
        }
        c.sim = match kv.get("sim.pixel_spacing_mm")? {
            Some(mm) => SimConfig::with_spacing(size, mm),
            None => SimConfig::for_size(size),
        };
        kv.update("sim.n_ellipses", &mut c.sim.n_ellipses)?;
        kv.update("sim.mu_water", &mut c.sim.mu_water)?;
        kv.update("sim.window", &mut c.sim.window)?;
        kv.update("dose.i0", &mut c.sim.dose.i0)?;
        kv.update("dose.fraction", &mut c.sim.dose.dose_fraction)?;
        kv.update("dose.seed", &mut c.sim.dose.seed)?;
        kv.update("geometry.n_views", &mut c.sim.geometry.n_views)?;
        kv.update("geometry.n_detectors", &mut c.sim.geometry.n_detectors)?;
        kv.update("geometry.detector_spacing_mm", &mut c.sim.geometry.detector_spacing_mm)?;

        c.model.read_kv(&mut kv, "model")?;
        c.train.read_kv(&mut kv, "train")?;
        kv.update("data.val_pairs", &mut c.data.val_pairs)?;
        kv.update("data.patches_per_image", &mut c.data.patches_per_image)?;
        kv.update("ablate.steps", &mut c.ablate_steps)?;

        for (key, slot) in [
            ("paths.data", &mut c.paths.data),
            ("paths.out", &mut c.paths.out),
            ("paths.checkpoint", &mut c.paths.checkpoint),
            ("paths.input", &mut c.paths.input),
            ("paths.references", &mut c.paths.references),
        ] {
            if let Some(p) = kv.get::<PathBuf>(key)? {
                *slot = Some(p);
            }
        }
        kv.reject_unknown()?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 {
            return Err(Error::Config("sim.n_pairs must be >= 1".into()));
        }
        self.sim.validate()?;
        self.model.validate()?;
        self.train.validate()
    }

    /// The training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let s_ = &mut s;
        let _ = writeln!(s_, "seed = {}", self.seed);
        let _ = writeln!(s_, "variant = {}", self.variant);
        let c = &self.sim;
        let _ = writeln!(s_, "sim.n_pairs = {}", self.n_pairs);
        let _ = writeln!(s_, "sim.size = {}", c.size);
        let _ = writeln!(s_, "sim.pixel_spacing_mm = {:?}", c.pixel_spacing_mm);
        let _ = writeln!(s_, "sim.n_ellipses = {}", c.n_ellipses);
        let _ = writeln!(s_, "sim.mu_water = {:?}", c.mu_water);
        let _ = writeln!(s_, "sim.window = {}", c.window);
        let _ = writeln!(s_, "dose.i0 = {:?}", c.dose.i0);
        let _ = writeln!(s_, "dose.fraction = {:?}", c.dose.dose_fraction);
        let _ = writeln!(s_, "dose.seed = {}", c.dose.seed);
        let _ = writeln!(s_, "geometry.n_views = {}", c.geometry.n_views);
        let _ = writeln!(s_, "geometry.n_detectors = {}", c.geometry.n_detectors);
        let _ = writeln!(s_, "geometry.detector_spacing_mm = {:?}", c.geometry.detector_spacing_mm);
        self.model.write_kv("model", s_);
        self.train.write_kv("train", s_);
        let _ = writeln!(s_, "data.val_pairs = {}", self.data.val_pairs);
        let _ = writeln!(s_, "data.patches_per_image = {}", self.data.patches_per_image);
        let _ = writeln!(s_, "ablate.steps = {}", self.ablate_steps);
        for (key, p) in [
            ("paths.data", &self.paths.data),
            ("paths.out", &self.paths.out),
            ("paths.checkpoint", &self.paths.checkpoint),
            ("paths.input", &self.paths.input),
            ("paths.references", &self.paths.references),
        ] {
            if let Some(p) = p {
                let _ = writeln!(s_, "{key} = {}", p.display());
            }
        }
        s
    }
}
