//! Denoising runs and sigma sweeps.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::{Context, Result};
use log::{info, warn};
use rayon::prelude::*;

use statsep::analytic::sqrt_denoise;
use statsep::io::{load_field, save_png, save_real};
use statsep::metrics::{evaluate, write_eval_csv, EvalContext, EvalReport};
use statsep::noise::{sample, stages_for_sigma, uniform_schedule, NoiseModel};
use statsep::separation::{
    delouis_separate, diffusive_separate, vanilla_separate, LossKind, Representation, SeparationConfig,
    SeparationTrace, WphRepresentation,
};
use statsep::synthdata::generate;
use statsep::wavelets::{build_bank, default_scales, FilterBank};
use statsep::wph::{ClassMask, NormalizationRef};
use statsep::{seed, RealField};

use crate::config::{Algorithm, RepresentationKind, RunConfig};
use crate::{plot, ConfigError, NumericalAbort};

const STREAM_TEXTURE: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_SEPARATION: u64 = 2;

/// Clean field for scoring, or `None` for an observed input.
pub fn clean_field(cfg: &RunConfig) -> Result<Option<RealField>> {
    match &cfg.input.path {
        Some(_) if cfg.input.observed => Ok(None),
        Some(p) => Ok(Some(load_field(p).with_context(|| format!("loading {}", p.display()))?)),
        None => {
            let spec = cfg.input.texture.spec(seed::derive(cfg.seed, &[STREAM_TEXTURE]));
            Ok(Some(generate(&spec).map_err(|e| ConfigError(e.to_string()))?))
        }
    }
}

fn noise_model(cfg: &RunConfig, sigma: f64, shape: (usize, usize), reference_std: f64) -> Result<NoiseModel> {
    let m = NoiseModel::new(cfg.noise.kind, sigma, shape)
        .map_err(|e| ConfigError(e.to_string()))?
        .with_reference_std(reference_std)
        .with_cross_density(cfg.noise.cross_density);
    m.validate().map_err(|e| ConfigError(e.to_string()))?;
    Ok(m)
}

pub fn cell_seed(cfg: &RunConfig, stream: u64, sigma: f64, realization: usize) -> u64 {
    seed::derive(cfg.seed, &[stream, sigma.to_bits(), realization as u64])
}

/// Noisy observation of `clean` and the noise model behind it.
pub fn observe(cfg: &RunConfig, clean: &RealField, sigma: f64, realization: usize) -> Result<(RealField, NoiseModel)> {
    let noise = noise_model(cfg, sigma, clean.shape(), clean.std())?;
    let eps = sample(&noise, cell_seed(cfg, STREAM_NOISE, sigma, realization));
    Ok((clean + &eps, noise))
}

pub fn filter_bank(cfg: &RunConfig, shape: (usize, usize)) -> Result<FilterBank> {
    let j = cfg.representation.scales.unwrap_or_else(|| default_scales(shape.0, shape.1));
    build_bank(shape.0, shape.1, j, cfg.representation.orientations).map_err(|e| ConfigError(e.to_string()).into())
}

pub fn representation(cfg: &RunConfig, algorithm: Algorithm, y: &RealField) -> Result<WphRepresentation> {
    let bank = filter_bank(cfg, y.shape())?;
    let r = &cfg.representation;
    Ok(match r.kind {
        RepresentationKind::PowerSpectrum => WphRepresentation::band_power(bank),
        RepresentationKind::Wph => {
            let mask = r.mask(algorithm)?;
            if r.normalize {
                let nref = NormalizationRef::from_field(y, &bank)?;
                WphRepresentation::normalized(bank, mask, &nref)?
            } else {
                WphRepresentation::new(bank, mask)
            }
        }
    })
}

pub fn separation_config(cfg: &RunConfig, algorithm: Algorithm, sigma: f64, seed_value: u64) -> Result<SeparationConfig> {
    let s = &cfg.separation;
    let stages = match algorithm {
        Algorithm::Vanilla | Algorithm::AnalyticOracle => 1,
        _ => s.stages.unwrap_or_else(|| stages_for_sigma(sigma)),
    };
    let default_t = if algorithm == Algorithm::Perturbative { 10 } else { 30 };
    let sc = SeparationConfig {
        q: s.q.unwrap_or(100),
        iterations: s.iterations.unwrap_or(default_t),
        schedule: uniform_schedule(stages)?,
        optimizer: s.optimizer.clone(),
        loss_kind: if algorithm == Algorithm::Perturbative {
            LossKind::Perturbative
        } else {
            LossKind::MonteCarlo
        },
        seed: seed_value,
        antithetic: s.antithetic,
    };
    sc.validate().map_err(|e| ConfigError(e.to_string()))?;
    Ok(sc)
}

/// Run one algorithm; the analytic oracle has no trace.
pub fn run_algorithm(
    cfg: &RunConfig,
    algorithm: Algorithm,
    y: &RealField,
    noise: &NoiseModel,
    seed_value: u64,
) -> Result<(RealField, Option<SeparationTrace>)> {
    if algorithm == Algorithm::AnalyticOracle {
        let var = noise.pixelwise_variance();
        let x = y.zip_map(&var, |v, s2| sqrt_denoise(v, s2.sqrt()));
        return Ok((x?, None));
    }
    let rep = representation(cfg, algorithm, y)?;
    let sc = separation_config(cfg, algorithm, noise.sigma, seed_value)?;
    info!(
        "{}: K={}, Q={}, T={}, stages={}",
        algorithm.name(),
        rep.len(),
        sc.q,
        sc.iterations,
        sc.stages()
    );
    let (x, trace) = match algorithm {
        Algorithm::Vanilla => vanilla_separate(y, noise, &rep, &sc)?,
        Algorithm::Diffusive | Algorithm::Perturbative => diffusive_separate(y, noise, &rep, &sc)?,
        Algorithm::Delouis => delouis_separate(y, noise, &rep, &sc)?,
        Algorithm::AnalyticOracle => unreachable!(),
    };
    Ok((x, Some(trace)))
}

fn score(bank: &FilterBank, field: &RealField, clean: &RealField, ctx: &EvalContext<'_>) -> Result<EvalReport> {
    Ok(evaluate(field, clean, bank, ClassMask::ALL, true, ctx)?)
}

fn save_pair(out: &Path, stem: &str, f: &RealField) -> Result<()> {
    save_real(out.join(format!("{stem}.ssf")), f)?;
    save_png(out.join(format!("{stem}.png")), f)?;
    Ok(())
}

pub fn denoise(cfg: &RunConfig) -> Result<()> {
    let out = &cfg.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let sigma = cfg.noise.sigma;
    let clean = clean_field(cfg)?;
    let (y, noise) = match (&clean, &cfg.input.path) {
        (Some(c), _) => observe(cfg, c, sigma, 0)?,
        (None, Some(p)) => {
            let y = load_field(p).with_context(|| format!("loading {}", p.display()))?;
            let noise = noise_model(cfg, sigma, y.shape(), 1.0)?;
            (y, noise)
        }
        (None, None) => unreachable!("validated"),
    };
    let run_seed = cell_seed(cfg, STREAM_SEPARATION, sigma, 0);
    let (x, trace) = run_algorithm(cfg, cfg.algorithm, &y, &noise, run_seed)?;

    save_pair(out, "noisy", &y)?;
    save_pair(out, "denoised", &x)?;
    if let Some(t) = &trace {
        t.write_csv(BufWriter::new(File::create(out.join("trace.csv"))?))?;
        if t.fallback_steps > 0 {
            warn!("{} line searches fell back to a gradient step", t.fallback_steps);
        }
    }
    if let Some(c) = &clean {
        save_pair(out, "clean", c)?;
        let bank = filter_bank(cfg, c.shape())?;
        let ctx = |algorithm| EvalContext {
            algorithm,
            noise_kind: cfg.noise.kind,
            sigma,
            realization: 0,
            seed: run_seed,
        };
        let rows = vec![
            score(&bank, &y, c, &ctx("noisy"))?,
            score(&bank, &x, c, &ctx(cfg.algorithm.name()))?,
        ];
        write_eval_csv(File::create(out.join("eval.csv"))?, &rows, true)?;
        println!(
            "PSNR noisy {:.2} dB -> {} {:.2} dB",
            rows[0].psnr_db,
            cfg.algorithm.name(),
            rows[1].psnr_db
        );
    }
    if let Some(a) = trace.and_then(|t| t.abort) {
        return Err(NumericalAbort {
            stage: a.stage,
            iteration: a.iteration,
        }
        .into());
    }
    Ok(())
}

/// Evaluation rows of one `(sigma, realization)` cell: the noisy input,
/// then each algorithm. Failures become NaN rows.
fn sweep_cell(cfg: &RunConfig, clean: &RealField, bank: &FilterBank, sigma: f64, r: usize) -> Result<Vec<EvalReport>> {
    let (y, noise) = observe(cfg, clean, sigma, r)?;
    let run_seed = cell_seed(cfg, STREAM_SEPARATION, sigma, r);
    let ctx = |algorithm| EvalContext {
        algorithm,
        noise_kind: cfg.noise.kind,
        sigma,
        realization: r,
        seed: run_seed,
    };
    let mut rows = vec![score(bank, &y, clean, &ctx("noisy"))?];
    for a in cfg.algorithms() {
        let row = run_algorithm(cfg, a, &y, &noise, run_seed).and_then(|(x, trace)| {
            if let Some(ab) = trace.and_then(|t| t.abort) {
                return Err(NumericalAbort {
                    stage: ab.stage,
                    iteration: ab.iteration,
                }
                .into());
            }
            score(bank, &x, clean, &ctx(a.name()))
        });
        rows.push(row.unwrap_or_else(|e| {
            warn!("{} failed at sigma={sigma}, realization {r}: {e:#}", a.name());
            EvalReport::failed(&ctx(a.name()), true)
        }));
    }
    Ok(rows)
}

pub fn sweep(cfg: &RunConfig, jobs: usize) -> Result<()> {
    let clean = clean_field(cfg)?
        .ok_or_else(|| ConfigError("sweep needs a clean input (input.observed = false)".into()))?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    // configuration errors surface before any work starts
    for a in cfg.algorithms() {
        if a != Algorithm::AnalyticOracle {
            separation_config(cfg, a, 1.0, 0)?;
        }
    }
    let bank = filter_bank(cfg, clean.shape())?;
    let sigmas = cfg.sigmas();
    let cells: Vec<(f64, usize)> = sigmas
        .iter()
        .flat_map(|&s| (0..cfg.realizations).map(move |r| (s, r)))
        .collect();
    info!("sweep: {} cells on {jobs} threads", cells.len());
    let results: Vec<Result<Vec<EvalReport>>> =
        cells.par_iter().map(|&(s, r)| sweep_cell(cfg, &clean, &bank, s, r)).collect();
    let mut rows = Vec::new();
    for res in results {
        rows.extend(res?);
    }
    write_eval_csv(File::create(cfg.out.join("sweep.csv"))?, &rows, true)?;
    if cfg.sweep.plots {
        plot::sweep_plots(&rows, &cfg.out)?;
    }
    println!("wrote {} rows to {}", rows.len(), cfg.out.join("sweep.csv").display());
    Ok(())
}
