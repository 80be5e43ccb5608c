//! Limited-memory BFGS with an Armijo backtracking line search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsConfig {
    /// Number of curvature pairs kept.
    pub history: usize,
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
    /// Step shrink factor per backtrack.
    pub backtrack: f64,
    pub max_backtracks: usize,
    /// Upper bound on the Euclidean norm of a single step.
    pub max_step: f64,
    /// Length of the plain gradient step taken when the line search fails,
    /// relative to the shortest trial step of that search.
    pub fallback_scale: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            history: 10,
            c1: 1e-4,
            backtrack: 0.5,
            max_backtracks: 20,
            max_step: f64::INFINITY,
            fallback_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    /// Iterate moved; `value` is the loss at the new point.
    Accepted { value: f64, step_norm: f64 },
    /// Zero gradient: iterate left unchanged.
    Stationary,
    /// No step satisfied the Armijo condition; iterate left unchanged and the
    /// history cleared. Callers may take [`Lbfgs::fallback_step`].
    LineSearchFailed,
}

#[derive(Clone, Debug)]
pub struct Lbfgs {
    cfg: LbfgsConfig,
    s: VecDeque<Vec<f64>>,
    y: VecDeque<Vec<f64>>,
    shortest_trial: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Lbfgs {
    pub fn new(cfg: LbfgsConfig) -> Self {
        Self {
            cfg,
            s: VecDeque::new(),
            y: VecDeque::new(),
            shortest_trial: 0.0,
        }
    }

    pub fn config(&self) -> &LbfgsConfig {
        &self.cfg
    }

    pub fn reset(&mut self) {
        self.s.clear();
        self.y.clear();
    }

    pub fn history_len(&self) -> usize {
        self.s.len()
    }

    /// Stored `(s, y)` pairs, oldest first.
    pub fn pairs(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.s.iter().map(|v| v.as_slice()).zip(self.y.iter().map(|v| v.as_slice()))
    }

    /// Two-loop recursion: `-H g`. With empty history, `-g / ||g||`.
    pub fn direction(&self, g: &[f64]) -> Vec<f64> {
        if self.s.is_empty() {
            let n = dot(g, g).sqrt();
            return g.iter().map(|v| -v / n).collect();
        }
        let mut q = g.to_vec();
        let k = self.s.len();
        let mut a = vec![0.0; k];
        for i in (0..k).rev() {
            let rho = 1.0 / dot(&self.y[i], &self.s[i]);
            a[i] = rho * dot(&self.s[i], &q);
            q.iter_mut().zip(&self.y[i]).for_each(|(u, v)| *u -= a[i] * v);
        }
        let (sl, yl) = (&self.s[k - 1], &self.y[k - 1]);
        let gamma = dot(sl, yl) / dot(yl, yl);
        q.iter_mut().for_each(|v| *v *= gamma);
        for i in 0..k {
            let rho = 1.0 / dot(&self.y[i], &self.s[i]);
            let b = rho * dot(&self.y[i], &q);
            q.iter_mut().zip(&self.s[i]).for_each(|(u, v)| *u += (a[i] - b) * v);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        if !(sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt()) {
            return;
        }
        if self.cfg.history == 0 {
            return;
        }
        if self.s.len() == self.cfg.history {
            self.s.pop_front();
            self.y.pop_front();
        }
        self.s.push_back(s);
        self.y.push_back(y);
    }

    /// One iteration from `x` with loss `value` and gradient `grad`.
    /// `eval` returns loss and gradient at a trial point. On acceptance `x`
    /// is overwritten with the new iterate.
    pub fn step(
        &mut self,
        x: &mut [f64],
        value: f64,
        grad: &[f64],
        mut eval: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    ) -> Result<StepOutcome> {
        let gnorm = dot(grad, grad).sqrt();
        if gnorm == 0.0 {
            return Ok(StepOutcome::Stationary);
        }
        let mut d = self.direction(grad);
        let mut slope = dot(grad, &d);
        if !(slope < 0.0) {
            self.reset();
            d = self.direction(grad);
            slope = dot(grad, &d);
        }
        let dnorm = dot(&d, &d).sqrt();
        let mut t = if dnorm > self.cfg.max_step { self.cfg.max_step / dnorm } else { 1.0 };
        let mut trial = vec![0.0; x.len()];
        for _ in 0..=self.cfg.max_backtracks {
            trial.iter_mut().zip(x.iter()).zip(&d).for_each(|((p, a), b)| *p = a + t * b);
            let (v, g) = eval(&trial)?;
            if v.is_finite() && v <= value + self.cfg.c1 * t * slope {
                let s: Vec<f64> = d.iter().map(|v| t * v).collect();
                let y: Vec<f64> = g.iter().zip(grad).map(|(a, b)| a - b).collect();
                self.push(s, y);
                x.copy_from_slice(&trial);
                let step_norm = t * dnorm;
                return Ok(StepOutcome::Accepted { value: v, step_norm });
            }
            self.shortest_trial = t * dnorm;
            t *= self.cfg.backtrack;
        }
        self.reset();
        Ok(StepOutcome::LineSearchFailed)
    }

    /// Plain steepest-descent step of length `fallback_scale` times the
    /// shortest trial of the last failed search.
    pub fn fallback_step(&self, x: &mut [f64], grad: &[f64]) {
        let gnorm = dot(grad, grad).sqrt();
        if gnorm == 0.0 {
            return;
        }
        let len = self.cfg.fallback_scale * self.shortest_trial;
        x.iter_mut().zip(grad).for_each(|(a, g)| *a -= len * g / gnorm);
    }
}
