//! Statistics maps `x -> phi(x)` with their Jacobian adjoints.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fields::RealField;
use crate::wavelets::FilterBank;
use crate::wph::{
    normalized_residual_gradient, wph_jacobian_adjoint, ClassMask, Filtered, NormalizationRef,
    PerturbativeContext, WphLayout,
};

type C64 = Complex64;

/// A map from a field to `len()` complex statistics.
///
/// `gradient_adjoint(x, c)` returns `2 Re sum_k conj(c_k) d phi_k / dx`, so the
/// gradient of `||phi(x) - t||^2` is `gradient_adjoint(x, phi(x) - t)`.
pub trait Representation: Send + Sync {
    fn shape(&self) -> (usize, usize);

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn eval(&self, x: &RealField) -> Result<Vec<C64>>;

    fn gradient_adjoint(&self, x: &RealField, cotangent: &[C64]) -> Result<RealField>;

    /// `(||phi(x) - target||^2, gradient, phi(x))`.
    fn residual(&self, x: &RealField, target: &[C64]) -> Result<(f64, RealField, Vec<C64>)> {
        check_len(target, self.len())?;
        let phi = self.eval(x)?;
        let r: Vec<C64> = phi.iter().zip(target).map(|(p, t)| p - t).collect();
        let value = r.iter().map(|z| z.norm_sqr()).sum();
        Ok((value, self.gradient_adjoint(x, &r)?, phi))
    }

    /// Second-order noise expansion for a fixed diagonal noise covariance.
    fn perturbative(&self, _variance: &RealField) -> Result<Box<dyn PerturbativeModel + '_>> {
        Err(Error::Unsupported("perturbative terms"))
    }
}

/// Second-order expansion of the loss in the noise amplitude, for one
/// representation and one pixel variance map.
pub trait PerturbativeModel: Send + Sync {
    /// Per-coefficient `(||J_k||^2_Sigma, <H_k, Sigma>)`.
    fn terms(&self, x: &RealField) -> Result<(Vec<f64>, Vec<C64>)>;

    /// `||phi(x) - t||^2 + alpha^2 (sum jnorm + Re sum conj(phi - t) htrace)`
    /// and optionally its gradient.
    fn evaluate(
        &self,
        x: &RealField,
        target: &[C64],
        alpha: f64,
        with_gradient: bool,
    ) -> Result<(f64, Option<RealField>)>;
}

pub(crate) fn check_len<T>(v: &[T], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: v.len(),
        });
    }
    Ok(())
}

/// Wavelet phase harmonic statistics, each coefficient divided by a fixed
/// complex divisor (all ones for raw coefficients).
#[derive(Clone, Debug)]
pub struct WphRepresentation {
    bank: FilterBank,
    layout: WphLayout,
    divisors: Vec<C64>,
}

impl WphRepresentation {
    pub fn new(bank: FilterBank, mask: ClassMask) -> Self {
        let layout = WphLayout::for_bank(&bank, mask);
        let divisors = vec![C64::new(1.0, 0.0); layout.len()];
        Self {
            bank,
            layout,
            divisors,
        }
    }

    /// Coefficients normalized by the S11 statistics of a reference field.
    pub fn normalized(bank: FilterBank, mask: ClassMask, reference: &NormalizationRef) -> Result<Self> {
        let layout = WphLayout::for_bank(&bank, mask);
        let divisors = reference.divisors(&layout)?;
        Ok(Self {
            bank,
            layout,
            divisors,
        })
    }

    /// Band powers `||psi_i * x||^2`, i.e. `M` times the S11 coefficients.
    pub fn band_power(bank: FilterBank) -> Self {
        let (h, w) = bank.shape();
        let mut rep = Self::new(bank, ClassMask::from_classes(&[crate::wph::WphClass::S11]));
        let d = 1.0 / (h * w) as f64;
        rep.divisors.iter_mut().for_each(|z| *z = C64::new(d, 0.0));
        rep
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    pub fn layout(&self) -> &WphLayout {
        &self.layout
    }

    pub fn divisors(&self) -> &[C64] {
        &self.divisors
    }
}

impl Representation for WphRepresentation {
    fn shape(&self) -> (usize, usize) {
        self.bank.shape()
    }

    fn len(&self) -> usize {
        self.layout.len()
    }

    fn eval(&self, x: &RealField) -> Result<Vec<C64>> {
        let f = Filtered::new(x, &self.bank)?;
        Ok(f.coefficients(&self.layout)
            .iter()
            .zip(&self.divisors)
            .map(|(v, d)| v / d)
            .collect())
    }

    fn gradient_adjoint(&self, x: &RealField, cotangent: &[C64]) -> Result<RealField> {
        check_len(cotangent, self.len())?;
        let raw: Vec<C64> = cotangent
            .iter()
            .zip(&self.divisors)
            .map(|(c, d)| c / d.conj())
            .collect();
        wph_jacobian_adjoint(x, &self.bank, self.layout.mask(), &raw)
    }

    fn residual(&self, x: &RealField, target: &[C64]) -> Result<(f64, RealField, Vec<C64>)> {
        check_len(target, self.len())?;
        normalized_residual_gradient(x, &self.bank, &self.layout, &self.divisors, target)
    }

    fn perturbative(&self, variance: &RealField) -> Result<Box<dyn PerturbativeModel + '_>> {
        let ctx = PerturbativeContext::new(
            &self.bank,
            self.layout.mask(),
            variance,
            Some(self.divisors.clone()),
        )?;
        Ok(Box::new(ctx))
    }
}

impl PerturbativeModel for PerturbativeContext {
    fn terms(&self, x: &RealField) -> Result<(Vec<f64>, Vec<C64>)> {
        let e = PerturbativeContext::evaluate(self, x, None, 0.0, false)?;
        Ok((e.jnorm, e.htrace))
    }

    fn evaluate(
        &self,
        x: &RealField,
        target: &[C64],
        alpha: f64,
        with_gradient: bool,
    ) -> Result<(f64, Option<RealField>)> {
        let e = PerturbativeContext::evaluate(self, x, Some(target), alpha, with_gradient)?;
        Ok((e.value, e.gradient))
    }
}

/// `phi(x)_k = w_k x_k`: injective and linear when no weight is zero.
#[derive(Clone, Debug)]
pub struct DiagonalLinear {
    weights: RealField,
}

impl DiagonalLinear {
    pub fn new(weights: RealField) -> Self {
        Self { weights }
    }

    pub fn identity(height: usize, width: usize) -> Self {
        Self::new(RealField::filled(height, width, 1.0))
    }
}

impl Representation for DiagonalLinear {
    fn shape(&self) -> (usize, usize) {
        self.weights.shape()
    }

    fn len(&self) -> usize {
        self.weights.len()
    }

    fn eval(&self, x: &RealField) -> Result<Vec<C64>> {
        x.check_shape(self.shape())?;
        Ok(x.as_slice()
            .iter()
            .zip(self.weights.as_slice())
            .map(|(v, w)| C64::new(v * w, 0.0))
            .collect())
    }

    fn gradient_adjoint(&self, x: &RealField, cotangent: &[C64]) -> Result<RealField> {
        x.check_shape(self.shape())?;
        check_len(cotangent, self.len())?;
        let (h, w) = self.shape();
        let g = cotangent
            .iter()
            .zip(self.weights.as_slice())
            .map(|(c, w)| 2.0 * c.re * w)
            .collect();
        RealField::new(h, w, g)
    }

    fn perturbative(&self, variance: &RealField) -> Result<Box<dyn PerturbativeModel + '_>> {
        variance.check_shape(self.shape())?;
        Ok(Box::new(DiagonalLinearPerturbative {
            rep: self,
            variance: variance.clone(),
        }))
    }
}

struct DiagonalLinearPerturbative<'a> {
    rep: &'a DiagonalLinear,
    variance: RealField,
}

impl PerturbativeModel for DiagonalLinearPerturbative<'_> {
    fn terms(&self, x: &RealField) -> Result<(Vec<f64>, Vec<C64>)> {
        x.check_shape(self.rep.shape())?;
        let jn = self
            .rep
            .weights
            .as_slice()
            .iter()
            .zip(self.variance.as_slice())
            .map(|(w, v)| w * w * v)
            .collect();
        Ok((jn, vec![C64::new(0.0, 0.0); self.rep.len()]))
    }

    fn evaluate(
        &self,
        x: &RealField,
        target: &[C64],
        alpha: f64,
        with_gradient: bool,
    ) -> Result<(f64, Option<RealField>)> {
        let (jn, _) = self.terms(x)?;
        let (value, grad, _) = self.rep.residual(x, target)?;
        let value = value + alpha * alpha * jn.iter().sum::<f64>();
        Ok((value, with_gradient.then_some(grad)))
    }
}

/// `phi(x)_k = x_k^2`. On a 1x1 field this is the scalar quadratic
/// representation.
#[derive(Clone, Debug)]
pub struct PointwiseSquare {
    height: usize,
    width: usize,
}

impl PointwiseSquare {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }
}

impl Representation for PointwiseSquare {
    fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn len(&self) -> usize {
        self.height * self.width
    }

    fn eval(&self, x: &RealField) -> Result<Vec<C64>> {
        x.check_shape(self.shape())?;
        Ok(x.as_slice().iter().map(|v| C64::new(v * v, 0.0)).collect())
    }

    fn gradient_adjoint(&self, x: &RealField, cotangent: &[C64]) -> Result<RealField> {
        x.check_shape(self.shape())?;
        check_len(cotangent, self.len())?;
        let g = cotangent
            .iter()
            .zip(x.as_slice())
            .map(|(c, v)| 4.0 * c.re * v)
            .collect();
        RealField::new(self.height, self.width, g)
    }

    fn perturbative(&self, variance: &RealField) -> Result<Box<dyn PerturbativeModel + '_>> {
        variance.check_shape(self.shape())?;
        Ok(Box::new(SquarePerturbative {
            rep: self,
            variance: variance.clone(),
        }))
    }
}

struct SquarePerturbative<'a> {
    rep: &'a PointwiseSquare,
    variance: RealField,
}

impl PerturbativeModel for SquarePerturbative<'_> {
    fn terms(&self, x: &RealField) -> Result<(Vec<f64>, Vec<C64>)> {
        x.check_shape(self.rep.shape())?;
        let v = self.variance.as_slice();
        let jn = x.as_slice().iter().zip(v).map(|(x, s)| 4.0 * x * x * s).collect();
        let h = v.iter().map(|s| C64::new(2.0 * s, 0.0)).collect();
        Ok((jn, h))
    }

    fn evaluate(
        &self,
        x: &RealField,
        target: &[C64],
        alpha: f64,
        with_gradient: bool,
    ) -> Result<(f64, Option<RealField>)> {
        let (r2, grad, phi) = self.rep.residual(x, target)?;
        let a2 = alpha * alpha;
        let v = self.variance.as_slice();
        let mut value = r2;
        let mut g = grad.into_vec();
        for k in 0..v.len() {
            let xk = x.as_slice()[k];
            let rk = (phi[k] - target[k]).re;
            value += a2 * (4.0 * xk * xk * v[k] + 2.0 * v[k] * rk);
            g[k] += a2 * (8.0 * xk * v[k] + 4.0 * v[k] * xk);
        }
        let g = RealField::new(self.rep.height, self.rep.width, g)?;
        Ok((value, with_gradient.then_some(g)))
    }
}

/// Single statistic `||A x||^2` of a field flattened in row-major order.
#[derive(Clone, Debug)]
pub struct QuadraticForm {
    a: DMatrix<f64>,
    gram: DMatrix<f64>,
    shape: (usize, usize),
}

impl QuadraticForm {
    /// `a` must have `h * w` columns.
    pub fn new(a: DMatrix<f64>, shape: (usize, usize)) -> Result<Self> {
        if a.ncols() != shape.0 * shape.1 {
            return Err(Error::LengthMismatch {
                expected: shape.0 * shape.1,
                actual: a.ncols(),
            });
        }
        let gram = a.transpose() * &a;
        Ok(Self { a, gram, shape })
    }

    /// Treat a vector of length `a.ncols()` as a `1 x n` field.
    pub fn on_vector(a: DMatrix<f64>) -> Self {
        let n = a.ncols();
        Self::new(a, (1, n)).expect("column count matches")
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    fn gram_x(&self, x: &RealField) -> DVector<f64> {
        &self.gram * DVector::from_column_slice(x.as_slice())
    }
}

impl Representation for QuadraticForm {
    fn shape(&self) -> (usize, usize) {
        self.shape
    }

    fn len(&self) -> usize {
        1
    }

    fn eval(&self, x: &RealField) -> Result<Vec<C64>> {
        x.check_shape(self.shape)?;
        let ax = &self.a * DVector::from_column_slice(x.as_slice());
        Ok(vec![C64::new(ax.norm_squared(), 0.0)])
    }

    fn gradient_adjoint(&self, x: &RealField, cotangent: &[C64]) -> Result<RealField> {
        x.check_shape(self.shape)?;
        check_len(cotangent, 1)?;
        let g = self.gram_x(x) * (4.0 * cotangent[0].re);
        RealField::new(self.shape.0, self.shape.1, g.as_slice().to_vec())
    }

    fn perturbative(&self, variance: &RealField) -> Result<Box<dyn PerturbativeModel + '_>> {
        variance.check_shape(self.shape)?;
        Ok(Box::new(QuadraticPerturbative {
            rep: self,
            variance: variance.clone(),
        }))
    }
}

struct QuadraticPerturbative<'a> {
    rep: &'a QuadraticForm,
    variance: RealField,
}

impl QuadraticPerturbative<'_> {
    fn htrace(&self) -> f64 {
        let v = self.variance.as_slice();
        (0..v.len()).map(|j| 2.0 * v[j] * self.rep.gram[(j, j)]).sum()
    }
}

impl PerturbativeModel for QuadraticPerturbative<'_> {
    fn terms(&self, x: &RealField) -> Result<(Vec<f64>, Vec<C64>)> {
        x.check_shape(self.rep.shape)?;
        let d = self.rep.gram_x(x) * 2.0;
        let jn = d.iter().zip(self.variance.as_slice()).map(|(d, v)| v * d * d).sum();
        Ok((vec![jn], vec![C64::new(self.htrace(), 0.0)]))
    }

    fn evaluate(
        &self,
        x: &RealField,
        target: &[C64],
        alpha: f64,
        with_gradient: bool,
    ) -> Result<(f64, Option<RealField>)> {
        let (r2, grad, phi) = self.rep.residual(x, target)?;
        let (jn, h) = self.terms(x)?;
        let a2 = alpha * alpha;
        let r = (phi[0] - target[0]).re;
        let value = r2 + a2 * (jn[0] + r * h[0].re);
        if !with_gradient {
            return Ok((value, None));
        }
        // d/dx [4 sum_j v_j (Gx)_j^2] = 8 G V G x ; d/dx [r h] = 2 h G x
        let gx = self.rep.gram_x(x);
        let vgx = DVector::from_iterator(
            gx.len(),
            gx.iter().zip(self.variance.as_slice()).map(|(g, v)| g * v),
        );
        let extra = (&self.rep.gram * vgx) * 8.0 + gx * (2.0 * h[0].re);
        let g: Vec<f64> = grad.as_slice().iter().zip(extra.iter()).map(|(a, b)| a + a2 * b).collect();
        Ok((value, Some(RealField::new(self.rep.shape.0, self.rep.shape.1, g)?)))
    }
}
