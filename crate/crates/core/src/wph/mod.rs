//! Wavelet phase harmonic statistics: estimators, normalization, gradients
//! and second-order noise terms.
//!
//! With `u_i = x * psi_i`, `rho_i = |u_i|` and `<.>` the spatial mean:
//!
//! * `S11_i = <rho_i^2>`
//! * `S00_i = <rho_i^2> - <rho_i>^2`
//! * `S01_i = <rho_i conj(u_i)>`
//! * `C01_ik = <rho_i conj(u_k)>` for filters `i` at a finer scale than `k`.

mod perturbative;

pub use perturbative::{wph_perturbative_terms, PerturbativeContext, PerturbativeEval};

use std::io::Write;
use std::ops::Range;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{plan, RealField};
use crate::wavelets::FilterBank;

/// Modulus floor used inside derivative kernels.
pub const MODULUS_FLOOR: f64 = 1e-12;

/// Normalization references below this magnitude are rejected.
pub const DEGENERATE_REFERENCE: f64 = 1e-14;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WphClass {
    S11,
    S00,
    S01,
    C01,
}

impl WphClass {
    pub const ALL: [WphClass; 4] = [WphClass::S11, WphClass::S00, WphClass::S01, WphClass::C01];

    pub fn name(self) -> &'static str {
        match self {
            WphClass::S11 => "S11",
            WphClass::S00 => "S00",
            WphClass::S01 => "S01",
            WphClass::C01 => "C01",
        }
    }
}

impl std::fmt::Display for WphClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for WphClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S11" => Ok(WphClass::S11),
            "S00" => Ok(WphClass::S00),
            "S01" => Ok(WphClass::S01),
            "C01" => Ok(WphClass::C01),
            other => Err(Error::InvalidConfig(format!("unknown WPH class '{other}'"))),
        }
    }
}

/// Which coefficient classes are computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassMask {
    pub s11: bool,
    pub s00: bool,
    pub s01: bool,
    pub c01: bool,
}

impl Default for ClassMask {
    fn default() -> Self {
        Self::ALL
    }
}

impl ClassMask {
    pub const ALL: ClassMask = ClassMask {
        s11: true,
        s00: true,
        s01: true,
        c01: true,
    };

    pub fn from_classes(classes: &[WphClass]) -> Self {
        let mut m = ClassMask {
            s11: false,
            s00: false,
            s01: false,
            c01: false,
        };
        for c in classes {
            match c {
                WphClass::S11 => m.s11 = true,
                WphClass::S00 => m.s00 = true,
                WphClass::S01 => m.s01 = true,
                WphClass::C01 => m.c01 = true,
            }
        }
        m
    }

    pub fn contains(self, class: WphClass) -> bool {
        match class {
            WphClass::S11 => self.s11,
            WphClass::S00 => self.s00,
            WphClass::S01 => self.s01,
            WphClass::C01 => self.c01,
        }
    }

    pub fn classes(self) -> Vec<WphClass> {
        WphClass::ALL.into_iter().filter(|&c| self.contains(c)).collect()
    }

    pub fn is_empty(self) -> bool {
        self.classes().is_empty()
    }
}

/// Index bookkeeping for a flattened coefficient vector: active classes in
/// the order S11, S00, S01, C01; filters `i = j * L + l` within a class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WphLayout {
    scales: usize,
    orientations: usize,
    mask: ClassMask,
}

/// Identifies one coefficient. `second` is set for C01 only.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CoeffLabel {
    pub class: WphClass,
    pub first: (usize, usize),
    pub second: Option<(usize, usize)>,
}

impl WphLayout {
    pub fn new(scales: usize, orientations: usize, mask: ClassMask) -> Self {
        Self {
            scales,
            orientations,
            mask,
        }
    }

    pub fn for_bank(bank: &FilterBank, mask: ClassMask) -> Self {
        Self::new(bank.scales(), bank.orientations(), mask)
    }

    pub fn mask(&self) -> ClassMask {
        self.mask
    }

    pub fn n_filters(&self) -> usize {
        self.scales * self.orientations
    }

    /// `(fine, coarse)` filter pairs in C01 order: `j1 < j2`, then `l1`, `l2`.
    pub fn c01_pairs(&self) -> Vec<(usize, usize)> {
        let l = self.orientations;
        let mut pairs = Vec::new();
        for j1 in 0..self.scales {
            for j2 in j1 + 1..self.scales {
                for l1 in 0..l {
                    for l2 in 0..l {
                        pairs.push((j1 * l + l1, j2 * l + l2));
                    }
                }
            }
        }
        pairs
    }

    fn full_class_len(&self, class: WphClass) -> usize {
        match class {
            WphClass::C01 => {
                self.scales * self.scales.saturating_sub(1) / 2 * self.orientations.pow(2)
            }
            _ => self.n_filters(),
        }
    }

    /// Number of active coefficients of `class` (0 when masked out).
    pub fn class_len(&self, class: WphClass) -> usize {
        if self.mask.contains(class) {
            self.full_class_len(class)
        } else {
            0
        }
    }

    pub fn len(&self) -> usize {
        WphClass::ALL.iter().map(|&c| self.class_len(c)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_range(&self, class: WphClass) -> Range<usize> {
        let start: usize = WphClass::ALL
            .iter()
            .take_while(|&&c| c != class)
            .map(|&c| self.class_len(c))
            .sum();
        start..start + self.class_len(class)
    }

    pub fn labels(&self) -> Vec<CoeffLabel> {
        let l = self.orientations;
        let split = |i: usize| (i / l, i % l);
        let mut out = Vec::with_capacity(self.len());
        for class in self.mask.classes() {
            if class == WphClass::C01 {
                for (a, b) in self.c01_pairs() {
                    out.push(CoeffLabel {
                        class,
                        first: split(a),
                        second: Some(split(b)),
                    });
                }
            } else {
                for i in 0..self.n_filters() {
                    out.push(CoeffLabel {
                        class,
                        first: split(i),
                        second: None,
                    });
                }
            }
        }
        out
    }
}

/// Coefficient count with every class active: `3 N + C(J, 2) L^2`.
pub fn full_coefficient_count(scales: usize, orientations: usize) -> usize {
    WphLayout::new(scales, orientations, ClassMask::ALL).len()
}

#[derive(Clone, Debug, PartialEq)]
pub struct WphCoefficients {
    layout: WphLayout,
    values: Vec<Complex64>,
}

impl WphCoefficients {
    pub fn from_vec(layout: WphLayout, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::LengthMismatch {
                expected: layout.len(),
                actual: values.len(),
            });
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> &WphLayout {
        &self.layout
    }

    /// Active coefficients of one class (empty if masked out).
    pub fn class(&self, class: WphClass) -> &[Complex64] {
        &self.values[self.layout.class_range(class)]
    }

    pub fn s11(&self) -> &[Complex64] {
        self.class(WphClass::S11)
    }

    pub fn s00(&self) -> &[Complex64] {
        self.class(WphClass::S00)
    }

    pub fn s01(&self) -> &[Complex64] {
        self.class(WphClass::S01)
    }

    pub fn c01(&self) -> &[Complex64] {
        self.class(WphClass::C01)
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.values
    }

    pub fn to_vec(&self) -> Vec<Complex64> {
        self.values.clone()
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Writes `class,j1,l1,j2,l2,re,im` rows; `j2`/`l2` are blank outside C01.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["class", "j1", "l1", "j2", "l2", "re", "im"])?;
        for (label, z) in self.layout.labels().iter().zip(&self.values) {
            let (j2, l2) = match label.second {
                Some((j, l)) => (j.to_string(), l.to_string()),
                None => (String::new(), String::new()),
            };
            wtr.write_record([
                label.class.name().to_string(),
                label.first.0.to_string(),
                label.first.1.to_string(),
                j2,
                l2,
                format!("{:e}", z.re),
                format!("{:e}", z.im),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// S11 coefficients of the observation, used to precondition all classes.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationRef {
    s11_of_y: Vec<Complex64>,
}

impl NormalizationRef {
    pub fn new(s11_of_y: Vec<Complex64>) -> Result<Self> {
        for (index, z) in s11_of_y.iter().enumerate() {
            if !(z.norm() >= DEGENERATE_REFERENCE) {
                return Err(Error::DegenerateReference {
                    index,
                    value: z.norm(),
                });
            }
        }
        Ok(Self { s11_of_y })
    }

    /// Unit reference of size `n`: normalization becomes the identity.
    pub fn ones(n: usize) -> Self {
        Self {
            s11_of_y: vec![Complex64::new(1.0, 0.0); n],
        }
    }

    pub fn from_field(y: &RealField, bank: &FilterBank) -> Result<Self> {
        let mask = ClassMask::from_classes(&[WphClass::S11]);
        let c = wph_compute(y, bank, mask)?;
        Self::new(c.s11().to_vec())
    }

    pub fn s11(&self) -> &[Complex64] {
        &self.s11_of_y
    }

    /// Per-coefficient divisors in flattened layout order.
    pub fn divisors(&self, layout: &WphLayout) -> Result<Vec<Complex64>> {
        if self.s11_of_y.len() != layout.n_filters() {
            return Err(Error::LengthMismatch {
                expected: layout.n_filters(),
                actual: self.s11_of_y.len(),
            });
        }
        let r = &self.s11_of_y;
        let mut out = Vec::with_capacity(layout.len());
        for class in layout.mask().classes() {
            match class {
                WphClass::C01 => {
                    out.extend(layout.c01_pairs().iter().map(|&(a, b)| (r[a] * r[b]).sqrt()))
                }
                _ => out.extend_from_slice(r),
            }
        }
        Ok(out)
    }
}

pub fn normalize(coeffs: &WphCoefficients, r: &NormalizationRef) -> Result<WphCoefficients> {
    let d = r.divisors(coeffs.layout())?;
    let values = coeffs.values.iter().zip(&d).map(|(v, d)| v / d).collect();
    WphCoefficients::from_vec(coeffs.layout, values)
}

pub fn denormalize(coeffs: &WphCoefficients, r: &NormalizationRef) -> Result<WphCoefficients> {
    let d = r.divisors(coeffs.layout())?;
    let values = coeffs.values.iter().zip(&d).map(|(v, d)| v * d).collect();
    WphCoefficients::from_vec(coeffs.layout, values)
}

/// Wavelet transforms `u_i = x * psi_i` of one field, in pixel space.
pub(crate) struct Filtered {
    pub m: usize,
    pub u: Vec<Vec<Complex64>>,
    /// `|u_i|` per pixel.
    pub r: Vec<Vec<f64>>,
}

impl Filtered {
    pub fn new(x: &RealField, bank: &FilterBank) -> Result<Self> {
        x.check_shape(bank.shape())?;
        let (h, w) = bank.shape();
        let p = plan(h, w);
        let mut xh: Vec<Complex64> = x.as_slice().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        p.forward(&mut xh);
        let u = bank
            .filters()
            .iter()
            .map(|f| {
                let mut buf: Vec<Complex64> =
                    xh.iter().zip(f.as_slice()).map(|(a, b)| a * b).collect();
                p.inverse(&mut buf);
                buf
            })
            .collect::<Vec<Vec<Complex64>>>();
        let r = u.iter().map(|ui| ui.iter().map(|z| z.norm_sqr().sqrt()).collect()).collect();
        Ok(Self { m: h * w, u, r })
    }

    fn mean_modulus(&self, i: usize) -> f64 {
        self.r[i].iter().sum::<f64>() / self.m as f64
    }

    /// `u_i / max(|u_i|, floor)` per pixel.
    fn phases(&self, i: usize) -> Vec<Complex64> {
        self.u[i]
            .iter()
            .zip(&self.r[i])
            .map(|(z, r)| z / r.max(MODULUS_FLOOR))
            .collect()
    }

    pub fn coefficients(&self, layout: &WphLayout) -> Vec<Complex64> {
        let m = self.m as f64;
        let n = layout.n_filters();
        let mut out = Vec::with_capacity(layout.len());
        let energy: Vec<f64> = if layout.mask().s11 || layout.mask().s00 {
            (0..n)
                .map(|i| self.u[i].iter().map(|z| z.norm_sqr()).sum::<f64>() / m)
                .collect()
        } else {
            Vec::new()
        };
        let mask = layout.mask();
        if mask.s11 {
            out.extend(energy.iter().map(|&e| Complex64::new(e, 0.0)));
        }
        if mask.s00 {
            for (i, &e) in energy.iter().enumerate() {
                let mu = self.mean_modulus(i);
                out.push(Complex64::new(e - mu * mu, 0.0));
            }
        }
        if mask.s01 {
            for (ui, ri) in self.u[..n].iter().zip(&self.r) {
                let s: Complex64 = ui.iter().zip(ri).map(|(z, &r)| z.conj() * r).sum();
                out.push(s / m);
            }
        }
        if mask.c01 {
            for (a, b) in layout.c01_pairs() {
                let s: Complex64 = self.r[a]
                    .iter()
                    .zip(&self.u[b])
                    .map(|(&r, v)| v.conj() * r)
                    .sum();
                out.push(s / m);
            }
        }
        out
    }

    /// Adds the pixel-space weights `w_i` such that
    /// `(2/M) Re sum_i conj(psi_i) * w_i` is `2 Re sum_k conj(c_k) dphi_k/dx`.
    pub fn accumulate_adjoint(&self, layout: &WphLayout, cot: &[Complex64], w: &mut [Vec<Complex64>]) {
        let n = layout.n_filters();
        let mask = layout.mask();
        let mut k = 0;
        if mask.s11 {
            for i in 0..n {
                let c = 2.0 * cot[k + i].re;
                if c != 0.0 {
                    w[i].iter_mut().zip(&self.u[i]).for_each(|(wv, u)| *wv += u * c);
                }
            }
            k += n;
        }
        if mask.s00 {
            for i in 0..n {
                let c = 2.0 * cot[k + i].re;
                if c != 0.0 {
                    let mu = self.mean_modulus(i);
                    w[i].iter_mut().zip(&self.u[i]).zip(self.phases(i)).for_each(|((wv, &u), s)| {
                        *wv += (u - s * mu) * c;
                    });
                }
            }
            k += n;
        }
        if mask.s01 {
            for i in 0..n {
                let c = cot[k + i];
                if c != ZERO {
                    w[i].iter_mut().zip(&self.r[i]).zip(self.phases(i)).for_each(|((wv, &r), s)| {
                        *wv += c * s * s * (0.5 * r) + c.conj() * (1.5 * r);
                    });
                }
            }
            k += n;
        }
        if mask.c01 {
            let mut ph: Vec<Option<Vec<Complex64>>> = vec![None; n];
            for (p, (a, b)) in layout.c01_pairs().into_iter().enumerate() {
                let c = cot[k + p];
                if c == ZERO {
                    continue;
                }
                let pa = ph[a].get_or_insert_with(|| self.phases(a));
                let (wa, wb) = two_mut(w, a, b);
                let (ub, ra) = (&self.u[b], &self.r[a]);
                let cc = c.conj();
                for px in 0..self.m {
                    wa[px] += pa[px] * (c * ub[px]).re;
                    wb[px] += cc * ra[px];
                }
            }
        }
    }
}

pub(crate) fn two_mut<T>(v: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    assert_ne!(a, b);
    if a < b {
        let (lo, hi) = v.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = v.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}

/// `(2/M) Re IFFT(sum_i conj(H_i) FFT(w_i))`.
pub(crate) fn synthesize(bank: &FilterBank, w: Vec<Vec<Complex64>>) -> RealField {
    let (h, wd) = bank.shape();
    let m = h * wd;
    let p = plan(h, wd);
    let mut acc = vec![ZERO; m];
    for (mut wi, f) in w.into_iter().zip(bank.filters()) {
        if wi.iter().all(|z| *z == ZERO) {
            continue;
        }
        p.forward(&mut wi);
        for ((a, z), hk) in acc.iter_mut().zip(&wi).zip(f.as_slice()) {
            *a += hk.conj() * z;
        }
    }
    p.inverse(&mut acc);
    let scale = 2.0 / m as f64;
    RealField::new(h, wd, acc.into_iter().map(|z| z.re * scale).collect()).expect("shape")
}

pub(crate) fn zero_weights(n: usize, m: usize) -> Vec<Vec<Complex64>> {
    vec![vec![ZERO; m]; n]
}

pub fn wph_compute(x: &RealField, bank: &FilterBank, mask: ClassMask) -> Result<WphCoefficients> {
    let layout = WphLayout::for_bank(bank, mask);
    let f = Filtered::new(x, bank)?;
    WphCoefficients::from_vec(layout, f.coefficients(&layout))
}

/// `2 Re[J(x)^H c]`: the real gradient of `sum_k 2 Re(conj(c_k) phi_k(x))`.
pub fn wph_jacobian_adjoint(
    x: &RealField,
    bank: &FilterBank,
    mask: ClassMask,
    cotangent: &[Complex64],
) -> Result<RealField> {
    let layout = WphLayout::for_bank(bank, mask);
    if cotangent.len() != layout.len() {
        return Err(Error::LengthMismatch {
            expected: layout.len(),
            actual: cotangent.len(),
        });
    }
    let f = Filtered::new(x, bank)?;
    let mut w = zero_weights(bank.len(), f.m);
    f.accumulate_adjoint(&layout, cotangent, &mut w);
    Ok(synthesize(bank, w))
}

/// `||phi(x)/d - target||^2`, its gradient, and `phi(x)/d`.
pub(crate) fn normalized_residual_gradient(
    x: &RealField,
    bank: &FilterBank,
    layout: &WphLayout,
    divisors: &[Complex64],
    target: &[Complex64],
) -> Result<(f64, RealField, Vec<Complex64>)> {
    let f = Filtered::new(x, bank)?;
    let phi: Vec<Complex64> = f
        .coefficients(layout)
        .iter()
        .zip(divisors)
        .map(|(v, d)| v / d)
        .collect();
    let mut value = 0.0;
    let cot: Vec<Complex64> = phi
        .iter()
        .zip(target)
        .zip(divisors)
        .map(|((p, t), d)| {
            let r = p - t;
            value += r.norm_sqr();
            r / d.conj()
        })
        .collect();
    let mut w = zero_weights(bank.len(), f.m);
    f.accumulate_adjoint(layout, &cot, &mut w);
    Ok((value, synthesize(bank, w), phi))
}
