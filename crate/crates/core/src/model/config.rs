use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::Kv;
use crate::freq::DEFAULT_SIGMA;
use crate::tensor::DEFAULT_LRELU_SLOPE;

/// Number of encoder layers and of decoder layers.
pub const DEPTH: usize = 3;

/// Allowed MLP hidden-width multipliers.
pub const FFN_MULTIPLIERS: [usize; 4] = [1, 2, 4, 8];

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Channel multiplier in (0, 1]; 1.0 gives 64/128/256 channels.
    pub width: f64,
    pub n_heads: usize,
    /// MLP hidden width as a multiple of the token dimension.
    pub ffn_mult: usize,
    pub lrelu_slope: f64,
    /// Gaussian sigma of the low/high frequency split.
    pub sigma: f64,
    /// Adds learned position embeddings to both token sequences.
    pub learned_positions: bool,
    /// Input side length the position embeddings are sized for.
    pub patch_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            width: 0.25,
            n_heads: 4,
            ffn_mult: 8,
            lrelu_slope: DEFAULT_LRELU_SLOPE,
            sigma: DEFAULT_SIGMA,
            learned_positions: false,
            patch_size: 64,
        }
    }
}

impl ModelConfig {
    /// Full-width network.
    pub fn full_scale() -> Self {
        ModelConfig {
            width: 1.0,
            ..Self::default()
        }
    }

    /// `base * width`, which must be a positive integer.
    pub fn channels(&self, base: usize) -> Result<usize> {
        let c = base as f64 * self.width;
        if c < 1.0 || (c - c.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "width {} gives a non-integral channel count {c} for base {base}",
                self.width
            )));
        }
        Ok(c.round() as usize)
    }

    /// Token dimension `c = 256 * width`.
    pub fn token_dim(&self) -> usize {
        (256.0 * self.width).round() as usize
    }

    pub fn ffn_hidden(&self) -> usize {
        self.ffn_mult * self.token_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.width <= 1.0) {
            return Err(Error::Config(format!("width must lie in (0, 1], got {}", self.width)));
        }
        for base in [64, 128, 256] {
            self.channels(base)?;
        }
        let c = self.token_dim();
        if self.n_heads == 0 || !c.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "token dimension {c} is not divisible by {} heads",
                self.n_heads
            )));
        }
        if !FFN_MULTIPLIERS.contains(&self.ffn_mult) {
            return Err(Error::Config(format!(
                "ffn multiplier must be one of {FFN_MULTIPLIERS:?}, got {}",
                self.ffn_mult
            )));
        }
        if !(self.lrelu_slope > 0.0 && self.lrelu_slope < 1.0) {
            return Err(Error::Config(format!(
                "leaky relu slope must lie in (0, 1), got {}",
                self.lrelu_slope
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.learned_positions && (self.patch_size == 0 || !self.patch_size.is_multiple_of(32)) {
            return Err(Error::Config(format!(
                "learned positions need a patch size divisible by 32, got {}",
                self.patch_size
            )));
        }
        Ok(())
    }

    fn fields(&self) -> [(&'static str, String); 7] {
        [
            ("width", format!("{:?}", self.width)),
            ("n_heads", self.n_heads.to_string()),
            ("ffn_mult", self.ffn_mult.to_string()),
            ("lrelu_slope", format!("{:?}", self.lrelu_slope)),
            ("sigma", format!("{:?}", self.sigma)),
            ("learned_positions", self.learned_positions.to_string()),
            ("patch_size", self.patch_size.to_string()),
        ]
    }

    /// Appends `{prefix}.{field} = value` lines.
    pub fn write_kv(&self, prefix: &str, out: &mut String) {
        for (k, v) in self.fields() {
            out.push_str(&format!("{prefix}.{k} = {v}\n"));
        }
    }

    /// Overwrites fields present under `prefix`.
    pub fn read_kv(&mut self, kv: &mut Kv, prefix: &str) -> Result<()> {
        kv.update(&format!("{prefix}.width"), &mut self.width)?;
        kv.update(&format!("{prefix}.n_heads"), &mut self.n_heads)?;
        kv.update(&format!("{prefix}.ffn_mult"), &mut self.ffn_mult)?;
        kv.update(&format!("{prefix}.lrelu_slope"), &mut self.lrelu_slope)?;
        kv.update(&format!("{prefix}.sigma"), &mut self.sigma)?;
        kv.update(&format!("{prefix}.learned_positions"), &mut self.learned_positions)?;
        kv.update(&format!("{prefix}.patch_size"), &mut self.patch_size)
    }

    /// `field (self vs other)` for every field that differs.
    pub fn diff(&self, other: &ModelConfig) -> Vec<String> {
        self.fields()
            .into_iter()
            .zip(other.fields())
            .filter(|(a, b)| a.1 != b.1)
            .map(|((k, a), (_, b))| format!("{k} ({a} vs {b})"))
            .collect()
    }
}

/// Which network to build: the full model or one of the two ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Variant {
    #[default]
    Full,
    /// Transformer replaced by a conv and three residual blocks on the
    /// concatenated HF and mid-texture features.
    NoTransformer,
    /// HF path and decoders dropped; the encoders run on the content tokens.
    NoDualPath,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoTransformer, Variant::NoDualPath];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoTransformer => "no_transformer",
            Variant::NoDualPath => "no_dual_path",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant {s:?} (expected full, no_transformer or no_dual_path)"
                ))
            })
    }
}
