//! Vanilla, diffusive and bias-corrected stepwise separation drivers.

use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::lbfgs::{Lbfgs, LbfgsConfig, StepOutcome};
use super::loss::{corrupted_statistics, mc_loss_eval, Draws};
use super::representation::Representation;
use super::trace::{Abort, SeparationTrace, TraceRecord};
use crate::error::{Error, Result};
use crate::fields::RealField;
use crate::noise::{DiffusionSchedule, NoiseModel};
use crate::seed;

type C64 = Complex64;

/// Floor applied to the per-coefficient spread in the bias-corrected loss.
pub const SIGMA_FLOOR: f64 = 1e-12;

/// Seed stream tag for the statistics draws of the bias-corrected algorithm,
/// kept apart from the optimizer streams `[stage, iteration]`.
const STATS_STREAM: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    MonteCarlo,
    Perturbative,
}

#[derive(Clone, Debug)]
pub struct SeparationConfig {
    /// Monte Carlo batch size.
    pub q: usize,
    /// Optimizer iterations per stage.
    pub iterations: usize,
    /// Noise amplitudes per stage; its length is the stage count.
    pub schedule: DiffusionSchedule,
    pub optimizer: LbfgsConfig,
    pub loss_kind: LossKind,
    pub seed: u64,
    /// Monte Carlo batches made of pairs `(e, -e)`.
    pub antithetic: bool,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        Self {
            q: 100,
            iterations: 30,
            schedule: DiffusionSchedule::new(vec![1.0]).expect("unit schedule"),
            optimizer: LbfgsConfig::default(),
            loss_kind: LossKind::MonteCarlo,
            seed: 0,
            antithetic: false,
        }
    }
}

impl SeparationConfig {
    pub fn stages(&self) -> usize {
        self.schedule.len()
    }

    fn draws<'a>(&self, noise: &'a NoiseModel, seed: u64) -> Draws<'a> {
        if self.antithetic {
            Draws::antithetic(noise, seed, self.q)
        } else {
            Draws::seeded(noise, seed, self.q)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return Err(Error::InvalidConfig("Q must be >= 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("T must be >= 1".into()));
        }
        if self.schedule.is_empty() {
            return Err(Error::InvalidConfig("schedule must have at least one stage".into()));
        }
        Ok(())
    }
}

/// Optimizer seed for one iteration of one stage.
pub fn iteration_seed(root: u64, stage: usize, iteration: usize) -> u64 {
    seed::derive(root, &[stage as u64, iteration as u64])
}

type Objective<'a> = dyn Fn(&RealField, usize) -> Result<(f64, RealField)> + Sync + 'a;

/// `T` optimizer iterations on `objective(x, iteration)`. Returns `false` if
/// a non-finite loss stopped the stage.
fn run_stage(
    x: &mut RealField,
    stage: usize,
    cfg: &SeparationConfig,
    trace: &mut SeparationTrace,
    objective: &Objective<'_>,
) -> Result<bool> {
    let stage_start = Instant::now();
    let mut opt = Lbfgs::new(cfg.optimizer.clone());
    let (h, w) = x.shape();
    for t in 0..cfg.iterations {
        let start = Instant::now();
        let (value, grad) = objective(x, t)?;
        if !value.is_finite() || !grad.is_finite() {
            log::warn!("non-finite loss at stage {stage}, iteration {t}; keeping last finite iterate");
            trace.abort = Some(Abort { stage, iteration: t });
            return Ok(false);
        }
        let grad_norm = grad.norm_sq().sqrt();
        let outcome = opt.step(x.as_mut_slice(), value, grad.as_slice(), |p| {
            let trial = RealField::new(h, w, p.to_vec())?;
            match objective(&trial, t) {
                Ok((v, g)) => Ok((v, g.into_vec())),
                // a trial point on a singularity is just a rejected step
                Err(Error::NearZeroModulus { .. }) => Ok((f64::INFINITY, vec![0.0; h * w])),
                Err(e) => Err(e),
            }
        })?;
        if outcome == StepOutcome::LineSearchFailed {
            log::debug!("line search failed at stage {stage}, iteration {t}; gradient fallback");
            opt.fallback_step(x.as_mut_slice(), grad.as_slice());
            trace.fallback_steps += 1;
        }
        trace.records.push(TraceRecord {
            iteration: t,
            stage,
            loss: value,
            grad_norm,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    trace.stage_outputs.push(x.clone());
    trace.stage_wall_ms.push(stage_start.elapsed().as_secs_f64() * 1e3);
    Ok(true)
}

fn check_inputs(y: &RealField, noise: &NoiseModel, rep: &dyn Representation, cfg: &SeparationConfig) -> Result<()> {
    cfg.validate()?;
    noise.validate()?;
    y.check_shape(rep.shape())?;
    y.check_shape(noise.shape())?;
    if !y.is_finite() {
        return Err(Error::InvalidField("observation contains non-finite values".into()));
    }
    Ok(())
}

/// Minimize the Monte Carlo loss against `phi(y)` from `x = y`, resampling
/// the noise batch at every iteration.
pub fn vanilla_separate(
    y: &RealField,
    noise: &NoiseModel,
    rep: &dyn Representation,
    cfg: &SeparationConfig,
) -> Result<(RealField, SeparationTrace)> {
    vanilla_separate_from(y, y, noise, rep, cfg)
}

/// [`vanilla_separate`] started from `start` instead of `y`.
pub fn vanilla_separate_from(
    y: &RealField,
    start: &RealField,
    noise: &NoiseModel,
    rep: &dyn Representation,
    cfg: &SeparationConfig,
) -> Result<(RealField, SeparationTrace)> {
    check_inputs(y, noise, rep, cfg)?;
    start.check_shape(y.shape())?;
    if cfg.loss_kind != LossKind::MonteCarlo {
        return Err(Error::InvalidConfig(
            "the vanilla algorithm uses the Monte Carlo loss".into(),
        ));
    }
    let mut x = start.clone();
    let mut trace = SeparationTrace::default();
    let phi_y = rep.eval(y)?;
    mc_stage(&mut x, &phi_y, 0, 1.0, noise, rep, cfg, &mut trace)?;
    Ok((x, trace))
}

#[allow(clippy::too_many_arguments)]
fn mc_stage(
    x: &mut RealField,
    target: &[C64],
    stage: usize,
    alpha: f64,
    noise: &NoiseModel,
    rep: &dyn Representation,
    cfg: &SeparationConfig,
    trace: &mut SeparationTrace,
) -> Result<bool> {
    let objective = |p: &RealField, t: usize| -> Result<(f64, RealField)> {
        let draws = cfg.draws(noise, iteration_seed(cfg.seed, stage, t));
        let e = mc_loss_eval(p, target, rep, draws, alpha, true)?;
        Ok((e.value, e.gradient.expect("gradient requested")))
    };
    run_stage(x, stage, cfg, trace, &objective)
}

/// Stepwise minimization against a moving target: stage `i` uses noise
/// scaled by `alpha_i` and the previous stage's output as observation. With
/// [`LossKind::Perturbative`] each stage minimizes the second-order expansion
/// instead of the Monte Carlo loss.
pub fn diffusive_separate(
    y: &RealField,
    noise: &NoiseModel,
    rep: &dyn Representation,
    cfg: &SeparationConfig,
) -> Result<(RealField, SeparationTrace)> {
    check_inputs(y, noise, rep, cfg)?;
    let mut x = y.clone();
    let mut trace = SeparationTrace::default();
    let model = match cfg.loss_kind {
        LossKind::Perturbative => {
            if !noise.kind.is_gaussian() {
                log::warn!("perturbative loss only uses the noise covariance; {} noise is not Gaussian", noise.kind.name());
            }
            Some(rep.perturbative(&noise.pixelwise_variance())?)
        }
        LossKind::MonteCarlo => None,
    };
    for (stage, &alpha) in cfg.schedule.weights().iter().enumerate() {
        let target = rep.eval(&x)?;
        let finished = match &model {
            None => mc_stage(&mut x, &target, stage, alpha, noise, rep, cfg, &mut trace)?,
            Some(m) => {
                let objective = |p: &RealField, _t: usize| -> Result<(f64, RealField)> {
                    let (v, g) = m.evaluate(p, &target, alpha, true)?;
                    Ok((v, g.expect("gradient requested")))
                };
                run_stage(&mut x, stage, cfg, &mut trace, &objective)?
            }
        };
        if !finished {
            break;
        }
    }
    Ok((x, trace))
}

/// Frozen-bias loss `||(phi(x) + b - phi_y) / s||^2` and its gradient.
pub fn bias_corrected_loss(
    x: &RealField,
    phi_y: &[C64],
    bias: &[C64],
    spread: &[f64],
    rep: &dyn Representation,
) -> Result<(f64, RealField)> {
    let phi = rep.eval(x)?;
    let n = rep.len();
    for v in [phi_y.len(), bias.len(), spread.len()] {
        if v != n {
            return Err(Error::LengthMismatch { expected: n, actual: v });
        }
    }
    let mut value = 0.0;
    let cot: Vec<C64> = (0..n)
        .map(|k| {
            let r = phi[k] + bias[k] - phi_y[k];
            let s2 = spread[k] * spread[k];
            value += r.norm_sqr() / s2;
            r / s2
        })
        .collect();
    Ok((value, rep.gradient_adjoint(x, &cot)?))
}

/// Stepwise algorithm with a bias and spread re-estimated at each stage from
/// `Q` noisy copies of the current iterate, then `T` deterministic steps on
/// the frozen loss. The noise amplitude is not scaled; only the schedule
/// length (stage count) is used.
pub fn delouis_separate(
    y: &RealField,
    noise: &NoiseModel,
    rep: &dyn Representation,
    cfg: &SeparationConfig,
) -> Result<(RealField, SeparationTrace)> {
    check_inputs(y, noise, rep, cfg)?;
    if cfg.q < 2 {
        return Err(Error::InvalidConfig("the bias-corrected algorithm needs Q >= 2".into()));
    }
    let phi_y = rep.eval(y)?;
    let mut x = y.clone();
    let mut trace = SeparationTrace::default();
    for stage in 0..cfg.stages() {
        let draws = cfg.draws(noise, seed::derive(cfg.seed, &[STATS_STREAM, stage as u64]));
        let stats = corrupted_statistics(&x, rep, draws, 1.0)?;
        let phi_x = rep.eval(&x)?;
        let bias: Vec<C64> = stats.mean.iter().zip(&phi_x).map(|(m, p)| m - p).collect();
        let mut clamped = 0;
        let spread: Vec<f64> = stats
            .variance
            .iter()
            .map(|v| {
                let s = v.sqrt();
                if s < SIGMA_FLOOR {
                    clamped += 1;
                    SIGMA_FLOOR
                } else {
                    s
                }
            })
            .collect();
        if clamped > 0 {
            log::warn!("stage {stage}: {clamped} coefficient spreads clamped to {SIGMA_FLOOR:e}");
        }
        let objective =
            |p: &RealField, _t: usize| bias_corrected_loss(p, &phi_y, &bias, &spread, rep);
        if !run_stage(&mut x, stage, cfg, &mut trace, &objective)? {
            break;
        }
    }
    Ok((x, trace))
}
