//! Periodic 2-D signal containers and spectral utilities.
//!
//! All transforms use the unitary convention (`1/sqrt(HW)` in both
//! directions), so Parseval holds without extra bookkeeping. A filter is
//! described by its transfer function `H(k)`; filtering is
//! `ifft(fft(f) * H)`, which equals the circular convolution of `f` with
//! the spatial kernel `psi[n] = (1/M) sum_k H(k) exp(+2 pi i k.n)`.

use std::collections::HashMap;
use std::ops::{Add, Mul, Sub};
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Scalars a field can hold.
pub trait Scalar: Copy + Send + Sync + Default + std::fmt::Debug + 'static {
    fn to_complex(self) -> Complex64;
}

impl Scalar for f64 {
    #[inline]
    fn to_complex(self) -> Complex64 {
        Complex64::new(self, 0.0)
    }
}

impl Scalar for Complex64 {
    #[inline]
    fn to_complex(self) -> Complex64 {
        self
    }
}

/// A periodic row-major grid of scalars.
#[derive(Clone, Debug, PartialEq)]
pub struct Field2D<T = f64> {
    height: usize,
    width: usize,
    values: Vec<T>,
}

pub type RealField = Field2D<f64>;
pub type ComplexField = Field2D<Complex64>;

impl<T: Scalar> Field2D<T> {
    pub fn new(height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidField(format!(
                "dimensions must be positive, got {height}x{width}"
            )));
        }
        if values.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                actual: values.len(),
            });
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, T::default())
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        assert!(height > 0 && width > 0, "empty field");
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(height > 0 && width > 0, "empty field");
        let mut values = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                values.push(f(i, j));
            }
        }
        Self {
            height,
            width,
            values,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Number of pixels `M = height * width`.
    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    /// Periodic indexing: indices are taken modulo the grid size.
    #[inline]
    pub fn at(&self, row: isize, col: isize) -> T {
        let r = row.rem_euclid(self.height as isize) as usize;
        let c = col.rem_euclid(self.width as isize) as usize;
        self.values[r * self.width + c]
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Field2D<U> {
        Field2D {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map<U: Scalar, V: Scalar>(
        &self,
        other: &Field2D<U>,
        f: impl Fn(T, U) -> V,
    ) -> Result<Field2D<V>> {
        self.check_shape(other.shape())?;
        Ok(Field2D {
            height: self.height,
            width: self.width,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn check_shape(&self, shape: (usize, usize)) -> Result<()> {
        if self.shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                actual: shape,
            });
        }
        Ok(())
    }

    /// Circular shift: `out[i, j] = self[i - dy, j - dx]`.
    pub fn shifted(&self, dy: isize, dx: isize) -> Self {
        Self::from_fn(self.height, self.width, |i, j| {
            self.at(i as isize - dy, j as isize - dx)
        })
    }

    pub fn to_complex(&self) -> ComplexField {
        self.map(Scalar::to_complex)
    }
}

impl RealField {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    /// Population standard deviation over pixels.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        let var = self.values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / self.len() as f64;
        var.sqrt()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl ComplexField {
    pub fn re(&self) -> RealField {
        self.map(|z| z.re)
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum()
    }
}

impl<'a, T> Add<&'a Field2D<T>> for &'a Field2D<T>
where
    T: Scalar + Add<Output = T>,
{
    type Output = Field2D<T>;

    fn add(self, rhs: &'a Field2D<T>) -> Field2D<T> {
        assert_eq!(self.shape(), rhs.shape(), "shape mismatch in field addition");
        self.zip_map(rhs, |a, b| a + b).expect("shapes checked")
    }
}

impl<'a, T> Sub<&'a Field2D<T>> for &'a Field2D<T>
where
    T: Scalar + Sub<Output = T>,
{
    type Output = Field2D<T>;

    fn sub(self, rhs: &'a Field2D<T>) -> Field2D<T> {
        assert_eq!(self.shape(), rhs.shape(), "shape mismatch in field subtraction");
        self.zip_map(rhs, |a, b| a - b).expect("shapes checked")
    }
}

impl<T> Mul<T> for &Field2D<T>
where
    T: Scalar + Mul<Output = T>,
{
    type Output = Field2D<T>;

    fn mul(self, rhs: T) -> Field2D<T> {
        self.map(|a| a * rhs)
    }
}

/// Fourier coefficients of a field, indexed by integer wavevector.
///
/// Storage follows the FFT layout: index `(r, c)` holds the wavevector
/// `(r, c)` reduced to the signed range `[-n/2, n/2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum2D {
    coeffs: ComplexField,
}

impl Spectrum2D {
    pub fn from_field(coeffs: ComplexField) -> Self {
        Self { coeffs }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(isize, isize) -> Complex64) -> Self {
        Self {
            coeffs: ComplexField::from_fn(height, width, |r, c| {
                f(signed_freq(r, height), signed_freq(c, width))
            }),
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            coeffs: ComplexField::filled(height, width, Complex64::new(1.0, 0.0)),
        }
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        self.coeffs.shape()
    }

    #[inline]
    pub fn as_slice(&self) -> &[Complex64] {
        self.coeffs.as_slice()
    }

    pub fn as_field(&self) -> &ComplexField {
        &self.coeffs
    }

    pub fn into_field(self) -> ComplexField {
        self.coeffs
    }

    /// Coefficient at signed wavevector `(ky, kx)` (periodic).
    pub fn at(&self, ky: isize, kx: isize) -> Complex64 {
        self.coeffs.at(ky, kx)
    }

    /// The spatial kernel whose circular convolution this transfer function
    /// implements.
    pub fn spatial_kernel(&self) -> ComplexField {
        let m = self.coeffs.len() as f64;
        let mut buf = self.coeffs.as_slice().to_vec();
        let (h, w) = self.shape();
        plan(h, w).inverse(&mut buf);
        let scale = 1.0 / m.sqrt();
        for v in &mut buf {
            *v *= scale;
        }
        ComplexField::new(h, w, buf).expect("shape preserved")
    }

    /// Transfer function of a spatial kernel (inverse of [`spatial_kernel`]).
    ///
    /// [`spatial_kernel`]: Spectrum2D::spatial_kernel
    pub fn from_kernel<T: Scalar>(kernel: &Field2D<T>) -> Self {
        let m = kernel.len() as f64;
        let mut s = fft_forward(kernel);
        for v in s.coeffs.as_mut_slice() {
            *v *= m.sqrt();
        }
        s
    }

    pub fn norm_sq(&self) -> f64 {
        self.coeffs.norm_sq()
    }
}

/// Signed frequency for storage index `i` on an axis of length `n`.
#[inline]
pub fn signed_freq(i: usize, n: usize) -> isize {
    if i < n.div_ceil(2) {
        i as isize
    } else {
        i as isize - n as isize
    }
}

/// A reusable, thread-safe 2-D FFT plan (unitary normalization).
pub struct Fft2d {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl std::fmt::Debug for Fft2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2d")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish()
    }
}

impl Fft2d {
    fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
            scale: 1.0 / ((height * width) as f64).sqrt(),
        }
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.row_fwd, &self.col_fwd);
    }

    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.row_inv, &self.col_inv);
    }

    fn run(&self, buf: &mut [Complex64], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        let (h, w) = (self.height, self.width);
        assert_eq!(buf.len(), h * w, "buffer does not match plan shape");
        let scratch_len = row
            .get_inplace_scratch_len()
            .max(col.get_inplace_scratch_len());
        let mut scratch = vec![Complex64::default(); scratch_len];
        if w > 1 {
            row.process_with_scratch(buf, &mut scratch[..row.get_inplace_scratch_len()]);
        }
        if h > 1 {
            let mut t = vec![Complex64::default(); h * w];
            transpose(buf, &mut t, h, w);
            col.process_with_scratch(&mut t, &mut scratch[..col.get_inplace_scratch_len()]);
            transpose(&t, buf, w, h);
        }
        for v in buf.iter_mut() {
            *v *= self.scale;
        }
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    const B: usize = 16;
    for rb in (0..rows).step_by(B) {
        for cb in (0..cols).step_by(B) {
            for r in rb..(rb + B).min(rows) {
                for c in cb..(cb + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Shared plan for the given shape; plans are cached process-wide.
pub fn plan(height: usize, width: usize) -> Arc<Fft2d> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Fft2d>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry((height, width))
        .or_insert_with(|| Arc::new(Fft2d::new(height, width)))
        .clone()
}

/// Unitary forward transform.
pub fn fft_forward<T: Scalar>(f: &Field2D<T>) -> Spectrum2D {
    let (h, w) = f.shape();
    let mut buf: Vec<Complex64> = f.as_slice().iter().map(|v| v.to_complex()).collect();
    plan(h, w).forward(&mut buf);
    Spectrum2D {
        coeffs: ComplexField::new(h, w, buf).expect("shape preserved"),
    }
}

/// Unitary inverse transform.
pub fn fft_inverse(s: &Spectrum2D) -> ComplexField {
    let (h, w) = s.shape();
    let mut buf = s.as_slice().to_vec();
    plan(h, w).inverse(&mut buf);
    ComplexField::new(h, w, buf).expect("shape preserved")
}

/// Circular convolution `f * psi` where `psi` is given by its transfer function.
pub fn convolve_periodic<T: Scalar>(f: &Field2D<T>, psi: &Spectrum2D) -> Result<ComplexField> {
    if f.shape() != psi.shape() {
        return Err(Error::ShapeMismatch {
            expected: psi.shape(),
            actual: f.shape(),
        });
    }
    let (h, w) = f.shape();
    let p = plan(h, w);
    let mut buf: Vec<Complex64> = f.as_slice().iter().map(|v| v.to_complex()).collect();
    p.forward(&mut buf);
    for (v, g) in buf.iter_mut().zip(psi.as_slice()) {
        *v *= g;
    }
    p.inverse(&mut buf);
    Ok(ComplexField::new(h, w, buf).expect("shape preserved"))
}

/// Adjoint filter `psi_dagger[i] = conj(psi[-i])`; in Fourier, `conj(H(k))`.
pub fn adjoint_filter(psi: &Spectrum2D) -> Spectrum2D {
    Spectrum2D {
        coeffs: psi.coeffs.map(|z| z.conj()),
    }
}

/// Transfer function of the flipped kernel `psi[-i]`, i.e. `H(-k)`.
pub(crate) fn flipped_filter(psi: &Spectrum2D) -> Spectrum2D {
    let (h, w) = psi.shape();
    Spectrum2D {
        coeffs: ComplexField::from_fn(h, w, |r, c| psi.coeffs.at(-(r as isize), -(c as isize))),
    }
}

/// Radially binned power spectrum `(|k|, mean |f(k)|^2)` over integer-radius
/// annuli, excluding the DC mode and anything beyond the inscribed circle.
pub fn radial_power_spectrum(f: &RealField) -> Vec<(f64, f64)> {
    let (h, w) = f.shape();
    let s = fft_forward(f);
    let rmax = h.min(w) / 2;
    let mut sums = vec![0.0; rmax + 1];
    let mut counts = vec![0usize; rmax + 1];
    for r in 0..h {
        for c in 0..w {
            let ky = signed_freq(r, h) as f64;
            let kx = signed_freq(c, w) as f64;
            let k = (ky * ky + kx * kx).sqrt();
            let bin = k.round() as usize;
            if bin == 0 || bin > rmax {
                continue;
            }
            sums[bin] += s.as_slice()[r * w + c].norm_sqr();
            counts[bin] += 1;
        }
    }
    (1..=rmax)
        .filter(|&b| counts[b] > 0)
        .map(|b| (b as f64, sums[b] / counts[b] as f64))
        .collect()
}

/// Least-squares slope of `log(power)` against `log(|k|)` over bins in
/// `[kmin, kmax]`.
pub fn fit_spectral_slope(spectrum: &[(f64, f64)], kmin: f64, kmax: f64) -> f64 {
    let pts: Vec<(f64, f64)> = spectrum
        .iter()
        .filter(|(k, p)| *k >= kmin && *k <= kmax && *p > 0.0)
        .map(|(k, p)| (k.ln(), p.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}
