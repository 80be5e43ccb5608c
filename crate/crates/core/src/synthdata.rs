//! Synthetic stationary textures used as clean targets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::RealField;
use crate::noise::colored_gaussian;
use crate::seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureKind {
    GaussianRandomField,
    /// `exp(s * g)` of a Gaussian field `g`: skewed, filamentary structure.
    #[default]
    LognormalField,
}

impl std::str::FromStr for TextureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_random_field" | "grf" | "gaussian" => Ok(TextureKind::GaussianRandomField),
            "lognormal_field" | "lognormal" => Ok(TextureKind::LognormalField),
            other => Err(Error::InvalidConfig(format!("unknown texture kind '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextureSpec {
    #[serde(default)]
    pub kind: TextureKind,
    /// Amplitude spectrum exponent: power goes as `|k|^(2 * slope)`.
    #[serde(default = "default_slope")]
    pub spectral_slope: f64,
    pub height: usize,
    pub width: usize,
    #[serde(default)]
    pub seed: u64,
    /// Std of the Gaussian field before exponentiation (lognormal only).
    #[serde(default = "default_log_std")]
    pub log_std: f64,
}

fn default_slope() -> f64 {
    -1.5
}

fn default_log_std() -> f64 {
    1.0
}

impl TextureSpec {
    pub fn new(kind: TextureKind, shape: (usize, usize), seed: u64) -> Self {
        Self {
            kind,
            spectral_slope: default_slope(),
            height: shape.0,
            width: shape.1,
            seed,
            log_std: default_log_std(),
        }
    }

    pub fn with_slope(mut self, slope: f64) -> Self {
        self.spectral_slope = slope;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 2 || self.width < 2 {
            return Err(Error::InvalidConfig("texture must be at least 2x2".into()));
        }
        if !(self.spectral_slope < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "spectral slope must be negative (got {})",
                self.spectral_slope
            )));
        }
        if !(self.log_std > 0.0) {
            return Err(Error::InvalidConfig("log_std must be positive".into()));
        }
        Ok(())
    }
}

/// Zero-mean, unit-variance texture; deterministic given the spec.
pub fn generate(spec: &TextureSpec) -> Result<RealField> {
    spec.validate()?;
    let mut rng = seed::rng(seed::derive(spec.seed, &[0x7e47]));
    let g = colored_gaussian((spec.height, spec.width), spec.spectral_slope, &mut rng);
    let f = match spec.kind {
        TextureKind::GaussianRandomField => g,
        TextureKind::LognormalField => {
            let s = spec.log_std / g.std();
            g.map(|v| (s * v).exp())
        }
    };
    Ok(standardize(&f))
}

pub fn standardize(f: &RealField) -> RealField {
    let m = f.mean();
    let s = f.std();
    let inv = if s > 0.0 { 1.0 / s } else { 1.0 };
    let mut out = f.map(|v| (v - m) * inv);
    // one more pass removes the rounding left by the first
    let m2 = out.mean();
    let s2 = out.std();
    out.as_mut_slice().iter_mut().for_each(|v| *v = (*v - m2) / s2);
    out
}
