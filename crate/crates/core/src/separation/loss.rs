//! Monte Carlo and perturbative losses.

use std::borrow::Cow;

use num_complex::Complex64;
use rayon::prelude::*;

use super::representation::{check_len, Representation};
use crate::error::Result;
use crate::fields::RealField;
use crate::noise::{self, NoiseModel};
use crate::seed;

type C64 = Complex64;

/// Samples reduced sequentially inside a chunk; chunks are then summed
/// pairwise. Chunk boundaries do not depend on the thread count.
const CHUNK: usize = 32;

/// Noise draws for one loss evaluation: either generated on demand from a
/// model and a seed, matching [`NoiseModel::batch`] draw for draw, or
/// borrowed from memory.
#[derive(Clone, Copy, Debug)]
pub enum Draws<'a> {
    Seeded {
        noise: &'a NoiseModel,
        seed: u64,
        count: usize,
        /// Draws come in pairs `(e, -e)`.
        antithetic: bool,
    },
    Fixed(&'a [RealField]),
}

impl<'a> Draws<'a> {
    pub fn seeded(noise: &'a NoiseModel, seed: u64, count: usize) -> Self {
        Draws::Seeded {
            noise,
            seed,
            count,
            antithetic: false,
        }
    }

    pub fn antithetic(noise: &'a NoiseModel, seed: u64, count: usize) -> Self {
        Draws::Seeded {
            noise,
            seed,
            count,
            antithetic: true,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Draws::Seeded { count, .. } => *count,
            Draws::Fixed(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, k: usize) -> Cow<'a, RealField> {
        match *self {
            Draws::Seeded {
                noise,
                seed,
                antithetic: false,
                ..
            } => Cow::Owned(noise::sample(noise, seed::derive(seed, &[k as u64]))),
            Draws::Seeded { noise, seed, .. } => {
                let e = noise::sample(noise, seed::derive(seed, &[(k / 2) as u64]));
                Cow::Owned(if k % 2 == 1 { e.scaled(-1.0) } else { e })
            }
            Draws::Fixed(v) => Cow::Borrowed(&v[k]),
        }
    }
}

/// One Monte Carlo loss evaluation.
#[derive(Clone, Debug)]
pub struct McEval {
    pub value: f64,
    pub gradient: Option<RealField>,
    /// `||phi(x + alpha e_k) - phi_y||^2` per draw, in draw order.
    pub sample_values: Vec<f64>,
}

impl McEval {
    /// Standard error of `value` from the spread of the per-draw values.
    pub fn standard_error(&self) -> f64 {
        standard_error(&self.sample_values)
    }
}

pub(crate) fn standard_error(v: &[f64]) -> f64 {
    let q = v.len();
    if q < 2 {
        return f64::NAN;
    }
    let mean = v.iter().sum::<f64>() / q as f64;
    let var = v.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (q - 1) as f64;
    (var / q as f64).sqrt()
}

struct Partial {
    value: f64,
    grad: Option<Vec<f64>>,
    samples: Vec<f64>,
}

fn pairwise<T: Send>(mut items: Vec<T>, merge: impl Fn(T, T) -> T) -> Option<T> {
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(merge(a, b)),
                None => next.push(a),
            }
        }
        items = next;
    }
    items.pop()
}

/// `(1/Q) sum_k ||phi(x + alpha e_k) - phi_y||^2` and, when requested, its
/// gradient.
pub fn mc_loss_eval(
    x: &RealField,
    phi_y: &[C64],
    rep: &dyn Representation,
    draws: Draws<'_>,
    alpha: f64,
    with_gradient: bool,
) -> Result<McEval> {
    x.check_shape(rep.shape())?;
    check_len(phi_y, rep.len())?;
    let q = draws.len();
    if q == 0 {
        return Err(crate::Error::InvalidConfig("Monte Carlo batch size must be >= 1".into()));
    }
    let n_chunks = q.div_ceil(CHUNK);
    let partials: Vec<Partial> = (0..n_chunks)
        .into_par_iter()
        .map(|c| -> Result<Partial> {
            let mut p = Partial {
                value: 0.0,
                grad: with_gradient.then(|| vec![0.0; x.len()]),
                samples: Vec::with_capacity(CHUNK),
            };
            for k in c * CHUNK..((c + 1) * CHUNK).min(q) {
                let e = draws.get(k);
                let xe = RealField::new(
                    x.height(),
                    x.width(),
                    x.as_slice().iter().zip(e.as_slice()).map(|(a, b)| a + alpha * b).collect(),
                )?;
                let v = if let Some(g) = p.grad.as_mut() {
                    let (v, gk, _) = rep.residual(&xe, phi_y)?;
                    g.iter_mut().zip(gk.as_slice()).for_each(|(a, b)| *a += b);
                    v
                } else {
                    let phi = rep.eval(&xe)?;
                    phi.iter().zip(phi_y).map(|(a, b)| (a - b).norm_sqr()).sum()
                };
                p.value += v;
                p.samples.push(v);
            }
            Ok(p)
        })
        .collect::<Result<_>>()?;
    let total = pairwise(partials, |mut a, b| {
        a.value += b.value;
        if let (Some(ga), Some(gb)) = (a.grad.as_mut(), b.grad.as_ref()) {
            ga.iter_mut().zip(gb).for_each(|(u, v)| *u += v);
        }
        a.samples.extend(b.samples);
        a
    })
    .expect("at least one chunk");
    let inv = 1.0 / q as f64;
    let gradient = match total.grad {
        Some(g) => Some(RealField::new(x.height(), x.width(), g.into_iter().map(|v| v * inv).collect())?),
        None => None,
    };
    Ok(McEval {
        value: total.value * inv,
        gradient,
        sample_values: total.samples,
    })
}

/// Monte Carlo loss over `q` draws seeded from `seed`, with gradient.
pub fn mc_loss(
    x: &RealField,
    phi_y: &[C64],
    rep: &dyn Representation,
    noise: &NoiseModel,
    alpha: f64,
    q: usize,
    seed: u64,
) -> Result<(f64, RealField)> {
    let e = mc_loss_eval(x, phi_y, rep, Draws::seeded(noise, seed, q), alpha, true)?;
    Ok((e.value, e.gradient.expect("gradient requested")))
}

/// Sample mean and per-coefficient variance `E|phi|^2 - |E phi|^2` of
/// `phi(x + alpha e_k)`.
#[derive(Clone, Debug)]
pub struct CorruptedStatistics {
    pub mean: Vec<C64>,
    pub variance: Vec<f64>,
    pub count: usize,
}

pub fn corrupted_statistics(
    x: &RealField,
    rep: &dyn Representation,
    draws: Draws<'_>,
    alpha: f64,
) -> Result<CorruptedStatistics> {
    x.check_shape(rep.shape())?;
    let q = draws.len();
    if q == 0 {
        return Err(crate::Error::InvalidConfig("Monte Carlo batch size must be >= 1".into()));
    }
    let k_len = rep.len();
    let n_chunks = q.div_ceil(CHUNK);
    let partials: Vec<(Vec<C64>, Vec<f64>)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| -> Result<(Vec<C64>, Vec<f64>)> {
            let mut s1 = vec![C64::new(0.0, 0.0); k_len];
            let mut s2 = vec![0.0; k_len];
            for k in c * CHUNK..((c + 1) * CHUNK).min(q) {
                let e = draws.get(k);
                let xe = x.zip_map(&e, |a, b| a + alpha * b)?;
                for (i, p) in rep.eval(&xe)?.into_iter().enumerate() {
                    s1[i] += p;
                    s2[i] += p.norm_sqr();
                }
            }
            Ok((s1, s2))
        })
        .collect::<Result<_>>()?;
    let (s1, s2) = pairwise(partials, |mut a, b| {
        a.0.iter_mut().zip(&b.0).for_each(|(u, v)| *u += v);
        a.1.iter_mut().zip(&b.1).for_each(|(u, v)| *u += v);
        a
    })
    .expect("at least one chunk");
    let inv = 1.0 / q as f64;
    let mean: Vec<C64> = s1.iter().map(|z| z * inv).collect();
    let variance = s2
        .iter()
        .zip(&mean)
        .map(|(s, m)| (s * inv - m.norm_sqr()).max(0.0))
        .collect();
    Ok(CorruptedStatistics {
        mean,
        variance,
        count: q,
    })
}

/// Second-order expansion of the loss in `alpha` for a diagonal noise
/// covariance `pixel_variance`, with gradient.
pub fn perturbative_loss(
    x: &RealField,
    phi_y: &[C64],
    rep: &dyn Representation,
    pixel_variance: &RealField,
    alpha: f64,
) -> Result<(f64, RealField)> {
    let model = rep.perturbative(pixel_variance)?;
    let (v, g) = model.evaluate(x, phi_y, alpha, true)?;
    Ok((v, g.expect("gradient requested")))
}
