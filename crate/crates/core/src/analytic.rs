//! Closed-form global minima of the Monte Carlo loss for simple
//! representations under Gaussian noise, plus a small grid minimizer used to
//! cross-check them numerically.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::fields::RealField;

/// With an injective linear representation and zero-mean noise, the loss has
/// a unique minimum at the observation itself.
pub fn linear_minimum(y: &RealField) -> RealField {
    y.clone()
}

/// Minimizer set of the loss for `phi(x) = x^2` in one dimension.
#[derive(Clone, Debug, PartialEq)]
pub enum QuadraticSolution {
    Zero,
    /// `{+r, -r}` with `r > 0`.
    Pair(f64),
}

impl QuadraticSolution {
    pub fn values(&self) -> Vec<f64> {
        match *self {
            QuadraticSolution::Zero => vec![0.0],
            QuadraticSolution::Pair(r) => vec![r, -r],
        }
    }

    pub fn radius(&self) -> f64 {
        match *self {
            QuadraticSolution::Zero => 0.0,
            QuadraticSolution::Pair(r) => r,
        }
    }
}

pub fn sqrt_threshold(y: f64, sigma: f64) -> QuadraticSolution {
    sqrt_threshold_with_factor(y, sigma, 3.0)
}

/// Same rule with the `3` in `y^2 > 3 sigma^2` replaced by `factor`. Only the
/// oracle's negative control should pass anything other than 3.
pub fn sqrt_threshold_with_factor(y: f64, sigma: f64, factor: f64) -> QuadraticSolution {
    let d = y * y - factor * sigma * sigma;
    if d > 0.0 {
        QuadraticSolution::Pair(d.sqrt())
    } else {
        QuadraticSolution::Zero
    }
}

/// Single-valued denoiser `sgn(y) sqrt(max(0, y^2 - 3 sigma^2))`.
pub fn sqrt_denoise(y: f64, sigma: f64) -> f64 {
    y.signum() * sqrt_threshold(y, sigma).radius()
}

/// Minimizer description for `phi(x) = ||A x||^2` with white noise of std `sigma`.
#[derive(Clone, Debug)]
pub struct SpectralSolutionSpec {
    /// Distinct eigenvalues of `A^T A`, ascending.
    pub spectrum: Vec<f64>,
    /// Eigenvalues passing the threshold test.
    pub lambda_set: Vec<f64>,
    pub chosen_lambda: Option<f64>,
    /// Required `||A x||^2` at a minimizer (0 when `lambda_set` is empty).
    pub target_norm: f64,
    /// `E ||A eps||^2 = sigma^2 tr(A^T A)`.
    pub noise_energy: f64,
    /// `||A y||^2`.
    pub observed_energy: f64,
    /// A minimizer: first eigenvector of the chosen eigenspace, scaled so that
    /// `||x||^2 = target_norm / lambda`. Zero vector if `lambda_set` is empty.
    pub representative: Vec<f64>,
}

impl SpectralSolutionSpec {
    /// Required `||x||^2` at a minimizer.
    pub fn minimizer_norm_sq(&self) -> f64 {
        match self.chosen_lambda {
            Some(l) => self.target_norm / l,
            None => 0.0,
        }
    }
}

pub fn spectral_minimum_spec(a: &DMatrix<f64>, y: &[f64], sigma: f64) -> Result<SpectralSolutionSpec> {
    if y.len() != a.ncols() {
        return Err(Error::LengthMismatch {
            expected: a.ncols(),
            actual: y.len(),
        });
    }
    let ata = a.transpose() * a;
    let eig = SymmetricEigen::new(ata.clone());
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let smallest = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if a.ncols() == 0 || smallest <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::SingularMatrix(if smallest.is_finite() { smallest } else { 0.0 }));
    }

    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let tol = 1e-9 * scale;
    let mut spectrum: Vec<f64> = Vec::new();
    for &i in &order {
        let v = eig.eigenvalues[i];
        if spectrum.last().is_none_or(|&p| v - p > tol) {
            spectrum.push(v);
        }
    }

    let yv = DVector::from_column_slice(y);
    let observed_energy = (a * &yv).norm_squared();
    let noise_energy = sigma * sigma * ata.trace();
    let s2 = sigma * sigma;
    let lambda_set: Vec<f64> = spectrum
        .iter()
        .cloned()
        .filter(|&l| observed_energy - noise_energy - 2.0 * s2 * l >= 0.0)
        .collect();
    let chosen_lambda = lambda_set.first().cloned();
    let (target_norm, representative) = match chosen_lambda {
        None => (0.0, vec![0.0; y.len()]),
        Some(l) => {
            let t = (observed_energy - noise_energy - 2.0 * s2 * l).max(0.0);
            let idx = order
                .iter()
                .cloned()
                .find(|&i| (eig.eigenvalues[i] - l).abs() <= tol)
                .unwrap_or(order[0]);
            let v = eig.eigenvectors.column(idx);
            let r = (t / l).sqrt() / v.norm();
            (t, v.iter().map(|c| c * r).collect())
        }
    };
    Ok(SpectralSolutionSpec {
        spectrum,
        lambda_set,
        chosen_lambda,
        target_norm,
        noise_energy,
        observed_energy,
        representative,
    })
}

/// Exact loss `E ||A(x+eps)||^4 ...` minus its value at 0, for white noise:
/// `||Ax||^4 + 4 sigma^2 ||A^T A x||^2 + 2 ||Ax||^2 (sigma^2 tr(A^T A) - ||Ay||^2)`.
pub fn spectral_loss_excess(a: &DMatrix<f64>, y: &[f64], sigma: f64, x: &[f64]) -> f64 {
    let xv = DVector::from_column_slice(x);
    let yv = DVector::from_column_slice(y);
    let ax = a * &xv;
    let nx = ax.norm_squared();
    let ata_x = a.transpose() * &ax;
    let s2 = sigma * sigma;
    let tr: f64 = a.iter().map(|v| v * v).sum();
    nx * nx + 4.0 * s2 * ata_x.norm_squared() + 2.0 * nx * (s2 * tr - (a * &yv).norm_squared())
}

/// Noise-debiased power-spectrum estimate `phi(y) - E[phi(eps)]`.
pub fn unbiased_ps_estimate(phi_y: &[f64], phi_eps_mean: &[f64]) -> Result<Vec<f64>> {
    if phi_y.len() != phi_eps_mean.len() {
        return Err(Error::LengthMismatch {
            expected: phi_y.len(),
            actual: phi_eps_mean.len(),
        });
    }
    Ok(phi_y.iter().zip(phi_eps_mean).map(|(a, b)| a - b).collect())
}

/// Axis-aligned box sampled on a regular grid, one or two dimensions.
#[derive(Clone, Debug)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub points: Vec<usize>,
}

impl GridSpec {
    pub fn line(lower: f64, upper: f64, points: usize) -> Self {
        GridSpec {
            lower: vec![lower],
            upper: vec![upper],
            points: vec![points],
        }
    }

    pub fn square(lower: f64, upper: f64, points: usize) -> Self {
        GridSpec {
            lower: vec![lower; 2],
            upper: vec![upper; 2],
            points: vec![points; 2],
        }
    }

    fn step(&self, d: usize) -> f64 {
        (self.upper[d] - self.lower[d]) / (self.points[d] - 1) as f64
    }

    fn coord(&self, d: usize, i: usize) -> f64 {
        self.lower[d] + i as f64 * self.step(d)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridMinimum {
    pub point: Vec<f64>,
    pub value: f64,
}

/// Evaluate `loss` on every grid node, keep the discrete local minima whose
/// value is within `tol` of the best, and refine each inside its cell
/// neighbourhood. Results are sorted by value.
pub fn brute_force_minimize(
    loss: impl Fn(&[f64]) -> f64,
    domain: &GridSpec,
    tol: f64,
) -> Result<Vec<GridMinimum>> {
    let dim = domain.points.len();
    if dim == 0 || dim > 2 {
        return Err(Error::DomainTooLarge(format!("{dim} dimensions (at most 2 supported)")));
    }
    if domain.lower.len() != dim || domain.upper.len() != dim {
        return Err(Error::InvalidConfig("grid bounds and point counts disagree".into()));
    }
    for d in 0..dim {
        if domain.points[d] < 3 || !(domain.upper[d] > domain.lower[d]) {
            return Err(Error::InvalidConfig(format!("degenerate grid axis {d}")));
        }
    }
    let n0 = domain.points[0];
    let n1 = if dim == 2 { domain.points[1] } else { 1 };
    if n0.saturating_mul(n1) > 50_000_000 {
        return Err(Error::DomainTooLarge(format!("{n0} x {n1} nodes")));
    }

    let node = |i: usize, j: usize| -> Vec<f64> {
        if dim == 1 {
            vec![domain.coord(0, i)]
        } else {
            vec![domain.coord(0, i), domain.coord(1, j)]
        }
    };
    let mut values = vec![f64::INFINITY; n0 * n1];
    for i in 0..n0 {
        for j in 0..n1 {
            let v = loss(&node(i, j));
            values[i * n1 + j] = if v.is_nan() { f64::INFINITY } else { v };
        }
    }
    let best = values.iter().cloned().fold(f64::INFINITY, f64::min);

    let mut candidates = Vec::new();
    for i in 0..n0 {
        for j in 0..n1 {
            let v = values[i * n1 + j];
            if v > best + tol {
                continue;
            }
            let mut is_min = true;
            for di in -1isize..=1 {
                for dj in -1isize..=1 {
                    let (a, b) = (i as isize + di, j as isize + dj);
                    if (di, dj) == (0, 0) || a < 0 || b < 0 || a >= n0 as isize || b >= n1 as isize {
                        continue;
                    }
                    if values[a as usize * n1 + b as usize] < v {
                        is_min = false;
                    }
                }
            }
            if is_min {
                candidates.push(node(i, j));
            }
        }
    }

    let steps: Vec<f64> = (0..dim).map(|d| domain.step(d)).collect();
    let mut out: Vec<GridMinimum> = Vec::new();
    for start in candidates {
        let (point, value) = refine(&loss, start, &steps, domain);
        // plateaus give several adjacent grid minima converging together
        if out
            .iter()
            .any(|m| m.point.iter().zip(&point).zip(&steps).all(|((a, b), h)| (a - b).abs() <= *h))
        {
            continue;
        }
        out.push(GridMinimum { point, value });
    }
    let best_refined = out.iter().map(|m| m.value).fold(f64::INFINITY, f64::min);
    out.retain(|m| m.value <= best_refined + tol);
    out.sort_by(|a, b| a.value.total_cmp(&b.value));
    Ok(out)
}

/// Cyclic golden-section search along each axis within one grid step of the
/// start.
fn refine(loss: &impl Fn(&[f64]) -> f64, start: Vec<f64>, steps: &[f64], domain: &GridSpec) -> (Vec<f64>, f64) {
    let mut x = start;
    let sweeps = if x.len() == 1 { 1 } else { 6 };
    for _ in 0..sweeps {
        for d in 0..x.len() {
            let lo = (x[d] - steps[d]).max(domain.lower[d]);
            let hi = (x[d] + steps[d]).min(domain.upper[d]);
            let mut probe = x.clone();
            let mut f = |t: f64| {
                probe[d] = t;
                loss(&probe)
            };
            x[d] = golden_section(&mut f, lo, hi, 60);
        }
    }
    let v = loss(&x);
    (x, v)
}

fn golden_section(f: &mut impl FnMut(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// `(1/Q) sum_k ((x + e_k)^2 - y^2)^2` for a scalar `x`, via the first four
/// sample moments of the draws so that each evaluation is O(1).
#[derive(Clone, Debug)]
pub struct ScalarQuadraticLoss {
    moments: [f64; 4],
    y2: f64,
}

impl ScalarQuadraticLoss {
    pub fn new(draws: &[f64], y: f64) -> Self {
        let q = draws.len().max(1) as f64;
        let mut m = [0.0; 4];
        for &e in draws {
            let e2 = e * e;
            m[0] += e;
            m[1] += e2;
            m[2] += e2 * e;
            m[3] += e2 * e2;
        }
        m.iter_mut().for_each(|v| *v /= q);
        ScalarQuadraticLoss { moments: m, y2: y * y }
    }

    pub fn value(&self, x: f64) -> f64 {
        // ((x^2 - y^2) + 2 x e + e^2)^2 expanded and averaged
        let [m1, m2, m3, m4] = self.moments;
        let c = x * x - self.y2;
        c * c + 4.0 * x * x * m2 + m4 + 4.0 * c * x * m1 + 2.0 * c * m2 + 4.0 * x * m3
    }
}
