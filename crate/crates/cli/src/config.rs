//! Run configuration: one TOML file, command-line overrides on top.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use statsep::noise::{NoiseKind, DEFAULT_CROSS_DENSITY};
use statsep::separation::LbfgsConfig;
use statsep::synthdata::{TextureKind, TextureSpec};
use statsep::wph::{ClassMask, WphClass};

use crate::ConfigError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Vanilla,
    Diffusive,
    Perturbative,
    Delouis,
    AnalyticOracle,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Vanilla => "vanilla",
            Algorithm::Diffusive => "diffusive",
            Algorithm::Perturbative => "perturbative",
            Algorithm::Delouis => "delouis",
            Algorithm::AnalyticOracle => "analytic-oracle",
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub realizations: usize,
    #[serde(default = "one")]
    pub jobs: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub input: InputConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub representation: RepresentationConfig,
    #[serde(default)]
    pub separation: SeparationSection,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_algorithm() -> Algorithm {
    Algorithm::Vanilla
}

fn one() -> usize {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Clean field from a file, or a synthetic texture when `path` is absent.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub path: Option<PathBuf>,
    /// The file is already noisy: no noise is added and no scores are computed.
    #[serde(default)]
    pub observed: bool,
    #[serde(default)]
    pub texture: TextureConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextureConfig {
    #[serde(default)]
    pub kind: TextureKind,
    #[serde(default = "default_size")]
    pub height: usize,
    #[serde(default = "default_size")]
    pub width: usize,
    #[serde(default = "default_slope")]
    pub spectral_slope: f64,
    #[serde(default = "default_log_std")]
    pub log_std: f64,
}

fn default_size() -> usize {
    64
}

fn default_slope() -> f64 {
    -1.5
}

fn default_log_std() -> f64 {
    1.0
}

impl Default for TextureConfig {
    fn default() -> Self {
        Self {
            kind: TextureKind::default(),
            height: default_size(),
            width: default_size(),
            spectral_slope: default_slope(),
            log_std: default_log_std(),
        }
    }
}

impl TextureConfig {
    pub fn spec(&self, seed: u64) -> TextureSpec {
        TextureSpec {
            kind: self.kind,
            spectral_slope: self.spectral_slope,
            height: self.height,
            width: self.width,
            seed,
            log_std: self.log_std,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default = "default_kind")]
    pub kind: NoiseKind,
    /// In units of the clean field's standard deviation; absolute for
    /// observed inputs.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_density")]
    pub cross_density: f64,
}

fn default_kind() -> NoiseKind {
    NoiseKind::White
}

fn default_sigma() -> f64 {
    1.0
}

fn default_density() -> f64 {
    DEFAULT_CROSS_DENSITY
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            kind: default_kind(),
            sigma: default_sigma(),
            cross_density: default_density(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepresentationKind {
    #[default]
    Wph,
    /// Band powers `||psi_i * x||^2`.
    PowerSpectrum,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepresentationConfig {
    #[serde(default)]
    pub kind: RepresentationKind,
    /// Defaults to `floor(log2(min(h, w))) - 1`.
    pub scales: Option<usize>,
    #[serde(default = "default_orientations")]
    pub orientations: usize,
    /// Defaults to all four classes, or S11 and S01 for the perturbative
    /// algorithm.
    pub classes: Option<Vec<String>>,
    /// Divide coefficients by the S11 statistics of the observation.
    #[serde(default = "yes")]
    pub normalize: bool,
}

fn default_orientations() -> usize {
    4
}

impl Default for RepresentationConfig {
    fn default() -> Self {
        Self {
            kind: RepresentationKind::default(),
            scales: None,
            orientations: default_orientations(),
            classes: None,
            normalize: true,
        }
    }
}

fn yes() -> bool {
    true
}

impl RepresentationConfig {
    pub fn mask(&self, algorithm: Algorithm) -> Result<ClassMask, ConfigError> {
        match &self.classes {
            Some(names) => {
                let classes = names
                    .iter()
                    .map(|n| n.parse::<WphClass>().map_err(|e| ConfigError(e.to_string())))
                    .collect::<Result<Vec<_>, _>>()?;
                let mask = ClassMask::from_classes(&classes);
                if mask.is_empty() {
                    return Err(ConfigError("representation.classes is empty".into()));
                }
                Ok(mask)
            }
            None if algorithm == Algorithm::Perturbative => {
                Ok(ClassMask::from_classes(&[WphClass::S11, WphClass::S01]))
            }
            None => Ok(ClassMask::ALL),
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparationSection {
    pub q: Option<usize>,
    /// Per stage. Defaults to 30, or 10 for the perturbative algorithm.
    pub iterations: Option<usize>,
    /// Stage count for the stepwise algorithms; defaults to `max(1, floor(10 sigma))`.
    pub stages: Option<usize>,
    #[serde(default)]
    pub antithetic: bool,
    #[serde(default)]
    pub optimizer: LbfgsConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Defaults to 10 log-spaced values from 0.1 to 2.14.
    pub sigmas: Option<Vec<f64>>,
    /// Defaults to the top-level algorithm.
    pub algorithms: Option<Vec<Algorithm>>,
    #[serde(default = "yes")]
    pub plots: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sigmas: None,
            algorithms: None,
            plots: true,
        }
    }
}

/// `n` log-spaced values from `lo` to `hi`, endpoints exact.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| match i {
            0 => lo,
            i if i == n - 1 => hi,
            i => (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp(),
        })
        .collect()
}

pub const SWEEP_LOW: f64 = 0.1;
pub const SWEEP_HIGH: f64 = 2.14;
pub const SWEEP_POINTS: usize = 10;

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config is valid")
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.sweep
            .sigmas
            .clone()
            .unwrap_or_else(|| log_grid(SWEEP_LOW, SWEEP_HIGH, SWEEP_POINTS))
    }

    pub fn algorithms(&self) -> Vec<Algorithm> {
        self.sweep.algorithms.clone().unwrap_or_else(|| vec![self.algorithm])
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.realizations == 0 {
            return Err(ConfigError("realizations must be >= 1".into()));
        }
        if self.jobs == 0 {
            return Err(ConfigError("jobs must be >= 1".into()));
        }
        if let Some(p) = &self.input.path {
            if !p.exists() {
                return Err(ConfigError(format!("input file {} does not exist", p.display())));
            }
        } else if self.input.observed {
            return Err(ConfigError("input.observed requires input.path".into()));
        }
        if !(self.noise.sigma >= 0.0) || !self.noise.sigma.is_finite() {
            return Err(ConfigError("noise.sigma must be finite and >= 0".into()));
        }
        if self.sigmas().iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(ConfigError("sweep.sigmas must be finite and positive".into()));
        }
        if self.representation.orientations == 0 {
            return Err(ConfigError("representation.orientations must be >= 1".into()));
        }
        for a in self.algorithms() {
            self.representation.mask(a)?;
        }
        if matches!(self.separation.q, Some(0)) || matches!(self.separation.iterations, Some(0)) {
            return Err(ConfigError("separation.q and separation.iterations must be >= 1".into()));
        }
        if matches!(self.separation.stages, Some(0)) {
            return Err(ConfigError("separation.stages must be >= 1".into()));
        }
        if self.input.path.is_none() {
            self.input.texture.spec(0).validate().map_err(|e| ConfigError(e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_grid_endpoints() {
        let g = log_grid(SWEEP_LOW, SWEEP_HIGH, SWEEP_POINTS);
        assert_eq!(g.len(), 10);
        assert_eq!(g[0], 0.1);
        assert_eq!(g[9], 2.14);
        let r = g[1] / g[0];
        assert!(g.windows(2).all(|w| (w[1] / w[0] - r).abs() < 1e-12));
    }

    #[test]
    fn defaults_and_parsing() {
        let c = RunConfig::default();
        assert_eq!(c.algorithm, Algorithm::Vanilla);
        assert_eq!(c.realizations, 1);
        assert_eq!(c.representation.orientations, 4);
        assert!(c.representation.normalize && c.sweep.plots);
        assert_eq!(c.representation.mask(Algorithm::Vanilla).unwrap(), ClassMask::ALL);
        assert_eq!(
            c.representation.mask(Algorithm::Perturbative).unwrap(),
            ClassMask::from_classes(&[WphClass::S11, WphClass::S01])
        );
        let c: RunConfig = toml::from_str(
            r#"
            algorithm = "analytic-oracle"
            [noise]
            kind = "pink"
            sigma = 0.5
            [representation]
            classes = ["s11", "C01"]
            [separation.optimizer]
            history = 5
            "#,
        )
        .unwrap();
        assert_eq!(c.algorithm, Algorithm::AnalyticOracle);
        assert_eq!(c.noise.kind, NoiseKind::Pink);
        assert_eq!(c.separation.optimizer.history, 5);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
        assert!(toml::from_str::<RunConfig>("algorithm = \"magic\"").is_err());
        let c: RunConfig = toml::from_str("realizations = 0").unwrap();
        assert!(c.validate().is_err());
        let c: RunConfig = toml::from_str("[input]\npath = \"/nonexistent/x.ssf\"").unwrap();
        assert!(c.validate().is_err());
        let c: RunConfig = toml::from_str("[representation]\nclasses = [\"S22\"]").unwrap();
        assert!(c.validate().is_err());
    }
}
