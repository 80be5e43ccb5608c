//! Noise processes, their samplers, and diffusion schedules.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{plan, signed_freq, RealField};
use crate::seed;

/// Default glyph density of the crosses noise, per pixel.
pub const DEFAULT_CROSS_DENSITY: f64 = 2e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    White,
    Pink,
    Blue,
    Crosses,
}

impl NoiseKind {
    /// Exponent of the amplitude spectrum `|k|^gamma` for Gaussian kinds.
    pub fn spectral_exponent(self) -> Option<f64> {
        match self {
            NoiseKind::White => Some(0.0),
            NoiseKind::Pink => Some(-1.0),
            NoiseKind::Blue => Some(1.0),
            NoiseKind::Crosses => None,
        }
    }

    pub fn is_gaussian(self) -> bool {
        self != NoiseKind::Crosses
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
            NoiseKind::Blue => "blue",
            NoiseKind::Crosses => "crosses",
        }
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "white" => Ok(NoiseKind::White),
            "pink" => Ok(NoiseKind::Pink),
            "blue" => Ok(NoiseKind::Blue),
            "crosses" => Ok(NoiseKind::Crosses),
            other => Err(Error::InvalidConfig(format!("unknown noise kind '{other}'"))),
        }
    }
}

/// A sampleable stationary noise process.
///
/// `sigma` is expressed in units of `reference_std` (typically the standard
/// deviation of the clean signal), so the per-pixel standard deviation of a
/// draw is `sigma * reference_std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub sigma: f64,
    #[serde(default = "one")]
    pub reference_std: f64,
    pub height: usize,
    pub width: usize,
    #[serde(default = "default_density")]
    pub cross_density: f64,
}

fn one() -> f64 {
    1.0
}

fn default_density() -> f64 {
    DEFAULT_CROSS_DENSITY
}

impl NoiseModel {
    pub fn new(kind: NoiseKind, sigma: f64, shape: (usize, usize)) -> Result<Self> {
        let m = Self {
            kind,
            sigma,
            reference_std: 1.0,
            height: shape.0,
            width: shape.1,
            cross_density: DEFAULT_CROSS_DENSITY,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn white(sigma: f64, shape: (usize, usize)) -> Result<Self> {
        Self::new(NoiseKind::White, sigma, shape)
    }

    pub fn with_reference_std(mut self, reference_std: f64) -> Self {
        self.reference_std = reference_std;
        self
    }

    pub fn with_cross_density(mut self, density: f64) -> Self {
        self.cross_density = density;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.reference_std > 0.0) {
            return Err(Error::InvalidConfig("reference std must be positive".into()));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidConfig("noise shape must be non-empty".into()));
        }
        if self.cross_density < 0.0 {
            return Err(Error::InvalidConfig("cross density must be >= 0".into()));
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Per-pixel standard deviation of a draw.
    pub fn pixel_std(&self) -> f64 {
        self.sigma * self.reference_std
    }

    /// Diagonal of the noise covariance.
    pub fn pixelwise_variance(&self) -> RealField {
        RealField::filled(self.height, self.width, self.pixel_std().powi(2))
    }

    /// `q` draws with seeds derived from `seed`. With `antithetic`, draws come
    /// in pairs `(e, -e)`.
    pub fn batch(&self, seed: u64, q: usize, antithetic: bool) -> Vec<RealField> {
        (0..q)
            .into_par_iter()
            .map(|k| {
                if antithetic {
                    let e = sample(self, seed::derive(seed, &[(k / 2) as u64]));
                    if k % 2 == 1 {
                        e.scaled(-1.0)
                    } else {
                        e
                    }
                } else {
                    sample(self, seed::derive(seed, &[k as u64]))
                }
            })
            .collect()
    }
}

/// One draw of the noise process; deterministic given `seed`.
pub fn sample(model: &NoiseModel, seed: u64) -> RealField {
    match model.kind {
        NoiseKind::Crosses => sample_crosses(model, seed),
        kind => {
            let gamma = kind.spectral_exponent().expect("gaussian kind");
            let mut rng = seed::rng(seed);
            let mut f = colored_gaussian(model.shape(), gamma, &mut rng);
            let s = model.pixel_std();
            f.as_mut_slice().iter_mut().for_each(|v| *v *= s);
            f
        }
    }
}

/// Unit-variance stationary Gaussian field with amplitude spectrum
/// `|k|^gamma` (DC removed). `gamma = 0` yields i.i.d. N(0, 1) pixels.
pub fn colored_gaussian(shape: (usize, usize), gamma: f64, rng: &mut impl Rng) -> RealField {
    let (h, w) = shape;
    let m = h * w;
    if gamma == 0.0 {
        let values = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        return RealField::new(h, w, values).expect("shape");
    }
    let gain = spectral_gain(h, w, gamma);
    let mut buf: Vec<Complex64> = (0..m)
        .map(|_| Complex64::new(rng.sample(StandardNormal), 0.0))
        .collect();
    let p = plan(h, w);
    p.forward(&mut buf);
    for (v, g) in buf.iter_mut().zip(&gain) {
        *v *= *g;
    }
    p.inverse(&mut buf);
    RealField::new(h, w, buf.into_iter().map(|z| z.re).collect()).expect("shape")
}

/// Real, `k -> -k` symmetric gain with `mean(|g|^2) = 1` so that filtering
/// unit white noise yields unit pixel variance.
fn spectral_gain(h: usize, w: usize, gamma: f64) -> Vec<f64> {
    let mut gain = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let ky = signed_freq(r, h) as f64 / h as f64;
            let kx = signed_freq(c, w) as f64 / w as f64;
            let k = (ky * ky + kx * kx).sqrt();
            gain.push(if k == 0.0 { 0.0 } else { k.powf(gamma) });
        }
    }
    let mean_sq = gain.iter().map(|g| g * g).sum::<f64>() / (h * w) as f64;
    if mean_sq > 0.0 {
        let s = mean_sq.sqrt();
        gain.iter_mut().for_each(|g| *g /= s);
    }
    gain
}

/// A crosses draw along with the glyph centers that produced it.
#[derive(Clone, Debug)]
pub struct CrossesDraw {
    pub field: RealField,
    pub centers: Vec<(usize, usize)>,
}

/// Offsets of the plus-shaped glyph: center plus four unit arms.
pub const CROSS_STENCIL: [(isize, isize); 5] = [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)];

pub fn sample_crosses(model: &NoiseModel, seed: u64) -> RealField {
    draw_crosses(model, seed).field
}

/// Plus-sign glyphs at uniform positions with Poisson count and random sign.
/// The glyph amplitude is set so the expected pixel std is `pixel_std()`.
pub fn draw_crosses(model: &NoiseModel, seed: u64) -> CrossesDraw {
    let (h, w) = model.shape();
    let mut field = RealField::zeros(h, w);
    let lambda = model.cross_density * (h * w) as f64;
    if lambda <= 0.0 {
        return CrossesDraw {
            field,
            centers: Vec::new(),
        };
    }
    let mut rng = seed::rng(seed);
    let count = Poisson::new(lambda).expect("positive rate").sample(&mut rng) as usize;
    let amplitude = model.pixel_std() / (CROSS_STENCIL.len() as f64 * model.cross_density).sqrt();
    let mut centers = Vec::with_capacity(count);
    for _ in 0..count {
        let cy = rng.random_range(0..h);
        let cx = rng.random_range(0..w);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        for (dy, dx) in CROSS_STENCIL {
            let r = (cy as isize + dy).rem_euclid(h as isize) as usize;
            let c = (cx as isize + dx).rem_euclid(w as isize) as usize;
            field.as_mut_slice()[r * w + c] += sign * amplitude;
        }
        centers.push((cy, cx));
    }
    CrossesDraw { field, centers }
}

/// Positive weights with unit squared norm splitting one noise draw into
/// `P` smaller independent ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    weights: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidConfig("schedule must have at least one stage".into()));
        }
        if weights.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::InvalidConfig("schedule weights must be positive".into()));
        }
        let norm: f64 = weights.iter().map(|a| a * a).sum();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "schedule weights must have unit squared norm, got {norm}"
            )));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// All weights equal to `1/sqrt(P)`.
pub fn uniform_schedule(p: usize) -> Result<DiffusionSchedule> {
    if p == 0 {
        return Err(Error::InvalidConfig("schedule length must be >= 1".into()));
    }
    let a = 1.0 / (p as f64).sqrt();
    // Fold the rounding residue into a common rescale so the norm is exact.
    let weights = vec![a; p];
    let norm: f64 = weights.iter().map(|a| a * a).sum::<f64>().sqrt();
    DiffusionSchedule::new(weights.into_iter().map(|a| a / norm).collect())
}

/// Stage count for a noise level: `max(1, floor(10 sigma))`.
pub fn stages_for_sigma(sigma: f64) -> usize {
    ((10.0 * sigma).floor() as usize).max(1)
}

pub fn schedule_for_sigma(sigma: f64) -> Result<DiffusionSchedule> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidConfig("sigma must be positive".into()));
    }
    uniform_schedule(stages_for_sigma(sigma))
}
