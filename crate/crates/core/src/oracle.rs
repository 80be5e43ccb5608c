//! Analytic-versus-numerical checks: the Monte Carlo loss, minimized
//! numerically, against the closed-form minima.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::analytic::{
    brute_force_minimize, spectral_minimum_spec, sqrt_threshold_with_factor, GridSpec, ScalarQuadraticLoss,
};
use crate::error::Result;
use crate::fields::RealField;
use crate::noise::NoiseModel;
use crate::seed;
use crate::separation::{vanilla_separate_from, DiagonalLinear, Lbfgs, LbfgsConfig, SeparationConfig, StepOutcome};

/// Location tolerance for the scalar quadratic minima.
pub const QUADRATIC_TOL: f64 = 0.02;
/// Draws for the scalar quadratic loss.
pub const QUADRATIC_Q: usize = 1_000_000;
/// RMS tolerance for the linear case.
pub const LINEAR_TOL: f64 = 1e-3;
/// Relative tolerance on `||A x||^2` for the spectral case.
pub const SPECTRAL_REL_TOL: f64 = 0.02;
/// `||x|| / ||y||` bound when the minimum is 0.
pub const SPECTRAL_ZERO_TOL: f64 = 0.05;
/// Draws for the spectral loss.
pub const SPECTRAL_Q: usize = 100_000;

#[derive(Clone, Debug, Default)]
pub struct OracleOptions {
    pub seed: u64,
    /// Negative control: expect the threshold `y^2 > 2 sigma^2` instead of
    /// `3 sigma^2`, so the quadratic check must fail.
    pub forced_bug: bool,
}

#[derive(Clone, Debug)]
pub struct OracleCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

pub fn run_oracle_suite(opts: &OracleOptions) -> Vec<OracleCheck> {
    vec![check_quadratic(opts), check_linear(opts), check_spectral(opts)]
}

fn finish(name: &'static str, start: Instant, r: Result<(bool, String)>) -> OracleCheck {
    let (passed, detail) = r.unwrap_or_else(|e| (false, format!("error: {e}")));
    OracleCheck {
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// `(y, sigma)` pairs on both sides of `y^2 = 3 sigma^2`.
pub const THRESHOLD_PAIRS: [(f64, f64); 9] = [
    (1.0, 1.0),
    (1.5, 1.0),
    (2.0, 1.0),
    (3.0, 1.0),
    (0.5, 0.5),
    (1.1, 0.5),
    (0.4, 0.3),
    (3.0, 2.0),
    (4.0, 2.0),
];

/// Minima of the scalar quadratic MC loss, sorted ascending.
pub fn quadratic_mc_minima(y: f64, sigma: f64, unit_draws: &[f64]) -> Result<Vec<f64>> {
    let draws: Vec<f64> = unit_draws.iter().map(|z| sigma * z).collect();
    let loss = ScalarQuadraticLoss::new(&draws, y);
    let half = y.abs() + 2.0 * sigma + 1.0;
    let grid = GridSpec::line(-half, half, 4001);
    let l0 = loss.value(0.0);
    let best = brute_force_minimize(|x| loss.value(x[0]), &grid, 0.0)?[0].value;
    // the two wells differ only by Monte Carlo asymmetry, far less than depth
    let tol = 0.1 * (l0 - best).max(0.0);
    let mut m: Vec<f64> = brute_force_minimize(|x| loss.value(x[0]), &grid, tol)?
        .into_iter()
        .map(|g| g.point[0])
        .collect();
    m.sort_by(f64::total_cmp);
    Ok(m)
}

pub fn standard_normal_draws(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = seed::rng(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn matches_solution(found: &[f64], expected: &[f64], tol: f64) -> bool {
    let mut e = expected.to_vec();
    e.sort_by(f64::total_cmp);
    found.len() == e.len() && found.iter().zip(&e).all(|(a, b)| (a - b).abs() <= tol)
}

pub fn check_quadratic(opts: &OracleOptions) -> OracleCheck {
    let start = Instant::now();
    let factor = if opts.forced_bug { 2.0 } else { 3.0 };
    let run = || -> Result<(bool, String)> {
        let z = standard_normal_draws(seed::derive(opts.seed, &[1]), QUADRATIC_Q);
        let mut ok = true;
        let mut worst: f64 = 0.0;
        let mut notes = Vec::new();
        for &(y, s) in &THRESHOLD_PAIRS {
            let found = quadratic_mc_minima(y, s, &z)?;
            let expected = sqrt_threshold_with_factor(y, s, factor).values();
            let good = matches_solution(&found, &expected, QUADRATIC_TOL);
            if good {
                let mut e = expected.clone();
                e.sort_by(f64::total_cmp);
                worst = found.iter().zip(&e).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
            } else {
                ok = false;
                notes.push(format!("y={y} sigma={s}: found {found:.4?}, expected {expected:.4?}"));
            }
        }
        let detail = if ok {
            format!("9 pairs, max |error| {worst:.2e} (tol {QUADRATIC_TOL})")
        } else {
            notes.join("; ")
        };
        Ok((ok, detail))
    };
    finish("quadratic", start, run())
}

pub fn check_linear(opts: &OracleOptions) -> OracleCheck {
    let start = Instant::now();
    let run = || -> Result<(bool, String)> {
        let (h, w) = (32, 32);
        let mut rng = seed::rng(seed::derive(opts.seed, &[2]));
        let y = RealField::from_fn(h, w, |_, _| rng.sample(StandardNormal));
        let weights = RealField::from_fn(h, w, |_, _| rng.random_range(0.5..2.0));
        let x0 = RealField::from_fn(h, w, |r, c| y.as_slice()[r * w + c] + 0.5 * rng.sample::<f64, _>(StandardNormal));
        let rep = DiagonalLinear::new(weights);
        let noise = NoiseModel::white(1.0, (h, w))?;
        let cfg = SeparationConfig {
            q: 20,
            iterations: 30,
            antithetic: true,
            seed: seed::derive(opts.seed, &[3]),
            ..Default::default()
        };
        let (x, _) = vanilla_separate_from(&y, &x0, &noise, &rep, &cfg)?;
        let rms = ((&x - &y).norm_sq() / (h * w) as f64).sqrt();
        Ok((rms < LINEAR_TOL, format!("RMS(x - y) = {rms:.2e} (tol {LINEAR_TOL:e})")))
    };
    finish("linear", start, run())
}

/// Frozen-batch MC loss `(1/Q) sum_k (||A(x + e_k)||^2 - ||Ay||^2)^2`.
pub struct SpectralMcLoss {
    gram: DMatrix<f64>,
    ge: Vec<DVector<f64>>,
    offset: Vec<f64>,
}

impl SpectralMcLoss {
    pub fn new(a: &DMatrix<f64>, y: &[f64], sigma: f64, draws: usize, seed: u64) -> Self {
        let m = a.ncols();
        let gram = a.transpose() * a;
        let ay = (a * DVector::from_column_slice(y)).norm_squared();
        let mut rng = seed::rng(seed);
        let mut ge = Vec::with_capacity(draws);
        let mut offset = Vec::with_capacity(draws);
        for _ in 0..draws {
            let e = DVector::from_fn(m, |_, _| sigma * rng.sample::<f64, _>(StandardNormal));
            let g = &gram * &e;
            offset.push(e.dot(&g) - ay);
            ge.push(g);
        }
        Self { gram, ge, offset }
    }

    pub fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let xv = DVector::from_column_slice(x);
        let gx = &self.gram * &xv;
        let xgx = xv.dot(&gx);
        let q = self.ge.len() as f64;
        let mut v = 0.0;
        let mut g = DVector::zeros(x.len());
        for (a, b) in self.ge.iter().zip(&self.offset) {
            let f = xgx + 2.0 * xv.dot(a) + b;
            v += f * f;
            g += (&gx + a) * (4.0 * f);
        }
        (v / q, (g / q).as_slice().to_vec())
    }
}

/// Minimize [`SpectralMcLoss`] from `start` with deterministic L-BFGS.
pub fn minimize_spectral(loss: &SpectralMcLoss, start: &[f64]) -> Result<Vec<f64>> {
    let mut x = start.to_vec();
    let mut opt = Lbfgs::new(LbfgsConfig::default());
    for _ in 0..300 {
        let (v, g) = loss.value_grad(&x);
        let gn = g.iter().map(|t| t * t).sum::<f64>().sqrt();
        if gn < 1e-10 * (1.0 + v.abs()) {
            break;
        }
        match opt.step(&mut x, v, &g, |p| Ok(loss.value_grad(p)))? {
            StepOutcome::Accepted { .. } => {}
            StepOutcome::Stationary => break,
            StepOutcome::LineSearchFailed => {
                opt.fallback_step(&mut x, &g);
            }
        }
    }
    Ok(x)
}

/// One random spectral case: `(A, y, sigma, expect_nonempty)`.
pub fn spectral_case(seed_value: u64, index: usize) -> (DMatrix<f64>, Vec<f64>, f64, bool) {
    let mut rng = seed::rng(seed::derive(seed_value, &[4, index as u64]));
    let m = 1 + index % 3;
    let k = m + (index / 3) % (5 - m);
    let k = k.clamp(m, 4);
    let a = loop {
        let a = DMatrix::from_fn(k, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let eig = (a.transpose() * &a).symmetric_eigenvalues();
        let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(l, h), v| (l.min(*v), h.max(*v)));
        if lo > 0.05 * hi {
            break a;
        }
    };
    let sigma: f64 = rng.random_range(0.3..1.0);
    let gram = a.transpose() * &a;
    let lmin = gram.symmetric_eigenvalues().min();
    let threshold = sigma * sigma * (gram.trace() + 2.0 * lmin);
    let nonempty = index % 10 < 7;
    let energy = if nonempty {
        threshold * (1.0 + rng.random_range(0.5..2.0))
    } else {
        threshold * rng.random_range(0.3..0.8)
    };
    let dir: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
    let ad = (&a * DVector::from_column_slice(&dir)).norm_squared();
    let s = (energy / ad).sqrt();
    (a, dir.iter().map(|v| v * s).collect(), sigma, nonempty)
}

pub fn check_spectral(opts: &OracleOptions) -> OracleCheck {
    let start = Instant::now();
    let run = || -> Result<(bool, String)> {
        let mut ok = true;
        let mut worst_rel: f64 = 0.0;
        let mut worst_zero: f64 = 0.0;
        let mut notes = Vec::new();
        for i in 0..10 {
            let (a, y, sigma, _) = spectral_case(opts.seed, i);
            let spec = spectral_minimum_spec(&a, &y, sigma)?;
            let loss = SpectralMcLoss::new(&a, &y, sigma, SPECTRAL_Q, seed::derive(opts.seed, &[5, i as u64]));
            let x = minimize_spectral(&loss, &y)?;
            let ax = (&a * DVector::from_column_slice(&x)).norm_squared();
            let yn = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if spec.chosen_lambda.is_some() {
                let rel = (ax - spec.target_norm).abs() / spec.target_norm;
                worst_rel = worst_rel.max(rel);
                if rel > SPECTRAL_REL_TOL {
                    ok = false;
                    notes.push(format!("case {i}: ||Ax||^2 = {ax:.4}, expected {:.4}", spec.target_norm));
                }
            } else {
                let r = xn / yn;
                worst_zero = worst_zero.max(r);
                if r > SPECTRAL_ZERO_TOL {
                    ok = false;
                    notes.push(format!("case {i}: ||x||/||y|| = {r:.3}, expected 0"));
                }
            }
        }
        let detail = if ok {
            format!(
                "10 cases, max rel error {worst_rel:.2e} (tol {SPECTRAL_REL_TOL}), max ||x||/||y|| on empty set {worst_zero:.2e} (tol {SPECTRAL_ZERO_TOL})"
            )
        } else {
            notes.join("; ")
        };
        Ok((ok, detail))
    };
    finish("spectral", start, run())
}

/// Fixed-width table of check results.
pub fn format_table(checks: &[OracleCheck]) -> String {
    let mut s = format!("{:<10} {:<6} {:>8}  {}\n", "check", "result", "seconds", "detail");
    for c in checks {
        s.push_str(&format!(
            "{:<10} {:<6} {:>8.2}  {}\n",
            c.name,
            if c.passed { "PASS" } else { "FAIL" },
            c.seconds,
            c.detail
        ));
    }
    s
}
