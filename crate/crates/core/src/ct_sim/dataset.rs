use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{
    fbp, forward_project, hu_to_mu, insert_poisson_noise, make_phantom, mu_to_hu, CtImage,
    DoseConfig, PhantomSpec, ScanGeometry, Unit, Window, MU_WATER_60KEV,
};
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::tensor::io;

/// Aligned low-dose / normal-dose pair, both in HU.
#[derive(Clone, Debug)]
pub struct TrainingPair {
    pub ld: CtImage,
    pub nd: CtImage,
}

impl TrainingPair {
    pub fn new(ld: CtImage, nd: CtImage) -> Result<Self> {
        if ld.grid.shape() != nd.grid.shape() {
            return Err(Error::shape(format!(
                "pair images differ in shape: {:?} vs {:?}",
                ld.grid.shape(),
                nd.grid.shape()
            )));
        }
        if ld.unit != Unit::Hu || nd.unit != Unit::Hu {
            return Err(Error::Unit {
                expected: Unit::Hu.name(),
                found: Unit::MuPerMm.name(),
            });
        }
        if !ld.grid.all_finite() || !nd.grid.all_finite() {
            return Err(Error::NonFinite("training pair contains non-finite pixels".into()));
        }
        Ok(TrainingPair { ld, nd })
    }
}

/// A pair together with the noiseless phantom it was simulated from.
#[derive(Clone, Debug)]
pub struct SimulatedPair {
    pub phantom: CtImage,
    pub pair: TrainingPair,
}

/// Everything needed to regenerate a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub size: usize,
    pub n_ellipses: usize,
    pub pixel_spacing_mm: f64,
    pub geometry: ScanGeometry,
    pub dose: DoseConfig,
    pub mu_water: f64,
    pub window: Window,
}

impl SimConfig {
    /// Defaults for a `size x size` slice covering a 320 mm field of view.
    pub fn for_size(size: usize) -> Self {
        Self::with_spacing(size, 320.0 / size as f64)
    }

    pub fn with_spacing(size: usize, pixel_spacing_mm: f64) -> Self {
        SimConfig {
            size,
            n_ellipses: 8,
            pixel_spacing_mm,
            geometry: ScanGeometry::for_image(size, pixel_spacing_mm),
            dose: DoseConfig::default(),
            mu_water: MU_WATER_60KEV,
            window: Window::Hann,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 32 {
            return Err(Error::invalid(format!("image size must be >= 32, got {}", self.size)));
        }
        self.geometry.validate()?;
        self.dose.validate()?;
        if !(self.mu_water > 0.0) {
            return Err(Error::invalid("mu_water must be positive"));
        }
        Ok(())
    }
}

/// Simulates pair `index`: phantom, projection, two noise realizations
/// (full dose and `dose_fraction`), FBP, HU clamped at air.
///
/// Both noise draws use the same stream, so a dose fraction of 1 makes the
/// low-dose image identical to the normal-dose one.
pub fn simulate_pair(cfg: &SimConfig, seed: u64, index: u64) -> Result<SimulatedPair> {
    cfg.validate()?;
    let phantom = make_phantom(
        derive_seed(seed, index, 0),
        &PhantomSpec {
            size: cfg.size,
            n_ellipses: cfg.n_ellipses,
            pixel_spacing_mm: cfg.pixel_spacing_mm,
        },
    )?;
    let mu = hu_to_mu(&phantom, cfg.mu_water)?;
    let sino = forward_project(&mu, &cfg.geometry)?;
    let noise_seed = derive_seed(cfg.dose.seed ^ seed, index, 1);
    let reconstruct = |fraction: f64| -> Result<CtImage> {
        let dose = DoseConfig {
            i0: cfg.dose.i0,
            dose_fraction: fraction,
            seed: noise_seed,
        };
        let noisy = insert_poisson_noise(&sino, &dose)?;
        let rec = fbp(&noisy, &cfg.geometry, cfg.window, cfg.size, cfg.pixel_spacing_mm)?;
        mu_to_hu(&rec, cfg.mu_water)?.clamp_to_air()
    };
    let nd = reconstruct(1.0)?;
    let ld = reconstruct(cfg.dose.dose_fraction)?;
    Ok(SimulatedPair {
        phantom,
        pair: TrainingPair::new(ld, nd)?,
    })
}

/// `n_pairs` simulated pairs. Pairs are generated in parallel; each uses
/// seeds derived from `(seed, index)` so the result does not depend on
/// scheduling.
pub fn make_dataset(n_pairs: usize, cfg: &SimConfig, seed: u64) -> Result<Vec<SimulatedPair>> {
    if n_pairs == 0 {
        return Err(Error::invalid("dataset needs at least one pair"));
    }
    (0..n_pairs as u64)
        .into_par_iter()
        .map(|i| simulate_pair(cfg, seed, i))
        .collect()
}

/// Provenance written next to the pair files.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub n_pairs: usize,
    pub config: SimConfig,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(s, "# transct simulated dataset");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "n_pairs = {}", self.n_pairs);
        let _ = writeln!(s, "size = {}", c.size);
        let _ = writeln!(s, "n_ellipses = {}", c.n_ellipses);
        let _ = writeln!(s, "pixel_spacing_mm = {:?}", c.pixel_spacing_mm);
        let _ = writeln!(s, "mu_water = {:?}", c.mu_water);
        let _ = writeln!(s, "window = {}", c.window);
        let _ = writeln!(s, "dose.i0 = {:?}", c.dose.i0);
        let _ = writeln!(s, "dose.fraction = {:?}", c.dose.dose_fraction);
        let _ = writeln!(s, "dose.seed = {}", c.dose.seed);
        let _ = writeln!(s, "geometry.n_views = {}", c.geometry.n_views);
        let _ = writeln!(s, "geometry.n_detectors = {}", c.geometry.n_detectors);
        let _ = writeln!(s, "geometry.detector_spacing_mm = {:?}", c.geometry.detector_spacing_mm);
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = std::collections::HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("manifest line {}: expected key = value", n + 1)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        fn get<T: std::str::FromStr>(map: &std::collections::HashMap<String, String>, k: &str) -> Result<T> {
            map.get(k)
                .ok_or_else(|| Error::Config(format!("manifest is missing {k}")))?
                .parse()
                .map_err(|_| Error::Config(format!("manifest value for {k} is malformed")))
        }
        Ok(DatasetManifest {
            seed: get(&map, "seed")?,
            n_pairs: get(&map, "n_pairs")?,
            config: SimConfig {
                size: get(&map, "size")?,
                n_ellipses: get(&map, "n_ellipses")?,
                pixel_spacing_mm: get(&map, "pixel_spacing_mm")?,
                geometry: ScanGeometry {
                    n_views: get(&map, "geometry.n_views")?,
                    n_detectors: get(&map, "geometry.n_detectors")?,
                    detector_spacing_mm: get(&map, "geometry.detector_spacing_mm")?,
                },
                dose: DoseConfig {
                    i0: get(&map, "dose.i0")?,
                    dose_fraction: get(&map, "dose.fraction")?,
                    seed: get(&map, "dose.seed")?,
                },
                mu_water: get(&map, "mu_water")?,
                window: get::<String>(&map, "window")?.parse()?,
            },
        })
    }
}

pub(crate) fn pair_dir(root: &Path, index: usize) -> PathBuf {
    root.join("pairs").join(format!("{index:04}"))
}

/// Writes `pairs/<idx>/ld.tct`, `pairs/<idx>/nd.tct` and `manifest`.
pub fn write_dataset(root: &Path, pairs: &[TrainingPair], manifest: &DatasetManifest) -> Result<()> {
    for (i, p) in pairs.iter().enumerate() {
        let dir = pair_dir(root, i);
        fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        io::save(dir.join("ld.tct"), &p.ld.grid)?;
        io::save(dir.join("nd.tct"), &p.nd.grid)?;
    }
    let path = root.join("manifest");
    fs::write(&path, manifest.to_text()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Reads a dataset written by [`write_dataset`].
pub fn load_dataset(root: &Path) -> Result<(DatasetManifest, Vec<TrainingPair>)> {
    let path = root.join("manifest");
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::io(format!("reading dataset manifest {}", path.display()), e))?;
    let manifest = DatasetManifest::parse(&text)?;
    let spacing = manifest.config.pixel_spacing_mm;
    let pairs = (0..manifest.n_pairs)
        .map(|i| {
            let dir = pair_dir(root, i);
            let ld = CtImage::new(io::load(dir.join("ld.tct"))?, Unit::Hu, spacing)?;
            let nd = CtImage::new(io::load(dir.join("nd.tct"))?, Unit::Hu, spacing)?;
            TrainingPair::new(ld, nd)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, pairs))
}
