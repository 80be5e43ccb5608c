//! Second-order noise terms of the WPH statistics under diagonal Gaussian
//! noise: `sum_j s2_j |dphi/dx_j|^2` and `sum_j s2_j d2phi/dx_j^2`, plus the
//! gradient of the resulting quadratic penalty.
//!
//! Every coefficient is a spatial mean of a pointwise function
//! `f(u, conj u, conj v)` of one or two wavelet transforms. All kernels are
//! monomials `u^a conj(u)^b conj(v)^e`, so their Wirtinger derivatives of any
//! order follow from one formula.

use num_complex::Complex64;

use super::{
    synthesize, zero_weights, ClassMask, Filtered, WphClass, WphLayout, MODULUS_FLOOR, ZERO,
};
use crate::error::{Error, Result};
use crate::fields::{flipped_filter, plan, RealField};
use crate::wavelets::FilterBank;

#[derive(Clone, Copy, Debug)]
struct Mono {
    a: f64,
    b: f64,
    e: i32,
}

const ENERGY: Mono = Mono { a: 1.0, b: 1.0, e: 0 };
const MODULUS: Mono = Mono { a: 0.5, b: 0.5, e: 0 };
const MOD_PHASE: Mono = Mono { a: 0.5, b: 1.5, e: 0 };
const CROSS: Mono = Mono { a: 0.5, b: 0.5, e: 1 };

fn falling(a: f64, n: u32) -> f64 {
    (0..n).fold(1.0, |acc, k| acc * (a - k as f64))
}

fn unit_pow(s: Complex64, q: i32) -> Complex64 {
    if q >= 0 {
        s.powi(q)
    } else {
        s.conj().powi(-q)
    }
}

impl Mono {
    /// `d^(pu+pb+pv) f / du^pu dconj(u)^pb dconj(v)^pv` at one pixel.
    fn d(self, pu: u32, pb: u32, pv: u32, u: Complex64, vbar: Complex64) -> Complex64 {
        let c = falling(self.a, pu) * falling(self.b, pb) * falling(self.e as f64, pv);
        if c == 0.0 {
            return ZERO;
        }
        let a = self.a - pu as f64;
        let b = self.b - pb as f64;
        let core = if a >= 0.0 && b >= 0.0 && a.fract() == 0.0 && b.fract() == 0.0 {
            u.powi(a as i32) * u.conj().powi(b as i32)
        } else {
            let r = u.norm();
            let s = if r > 0.0 { u / r } else { Complex64::new(1.0, 0.0) };
            unit_pow(s, (a - b).round() as i32) * r.max(MODULUS_FLOOR).powf(a + b)
        };
        core * vbar.powi(self.e - pv as i32) * c
    }
}

#[derive(Clone, Copy, Debug)]
enum Term {
    Energy(usize),
    Centered(usize),
    ModPhase(usize),
    Cross(usize, usize),
}

fn terms(layout: &WphLayout) -> Vec<Term> {
    let n = layout.n_filters();
    let mut out = Vec::with_capacity(layout.len());
    for class in layout.mask().classes() {
        match class {
            WphClass::S11 => out.extend((0..n).map(Term::Energy)),
            WphClass::S00 => out.extend((0..n).map(Term::Centered)),
            WphClass::S01 => out.extend((0..n).map(Term::ModPhase)),
            WphClass::C01 => out.extend(layout.c01_pairs().into_iter().map(|(a, b)| Term::Cross(a, b))),
        }
    }
    out
}

/// Pointwise second derivatives `f_uu, f_uū, f_ūū, f_uv̄, f_ūv̄`.
struct Second {
    uu: Vec<Complex64>,
    ub: Vec<Complex64>,
    bb: Vec<Complex64>,
    uv: Vec<Complex64>,
    bv: Vec<Complex64>,
}

/// Result of one perturbative evaluation (normalized coordinates).
#[derive(Clone, Debug)]
pub struct PerturbativeEval {
    /// `||r||^2 + alpha^2 * penalty`.
    pub value: f64,
    /// `||phi(x) - target||^2`.
    pub residual_sq: f64,
    /// `sum_k jnorm_k + Re(conj(r_k) htrace_k)`.
    pub penalty: f64,
    pub jnorm: Vec<f64>,
    pub htrace: Vec<Complex64>,
    pub phi: Vec<Complex64>,
    pub gradient: Option<RealField>,
}

/// Fixed data for repeated perturbative evaluations with one bank,
/// one class mask and one pixel variance map.
#[derive(Clone, Debug)]
pub struct PerturbativeContext {
    bank: FilterBank,
    layout: WphLayout,
    variance: Vec<f64>,
    divisors: Vec<Complex64>,
    kernels: Vec<Vec<Complex64>>,
    flipped: Vec<Vec<Complex64>>,
    var_hat: Option<Vec<Complex64>>,
    uniform: f64,
    // psi^2 * s2 and |psi|^2 * s2 per filter
    a: Vec<Vec<Complex64>>,
    b: Vec<Vec<Complex64>>,
}

impl PerturbativeContext {
    /// `divisors` normalizes coefficient `k` as `phi_k / divisors[k]`;
    /// `None` means raw coefficients.
    pub fn new(
        bank: &FilterBank,
        mask: ClassMask,
        variance: &RealField,
        divisors: Option<Vec<Complex64>>,
    ) -> Result<Self> {
        variance.check_shape(bank.shape())?;
        if variance.as_slice().iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidField("pixel variance must be >= 0".into()));
        }
        let layout = WphLayout::for_bank(bank, mask);
        let divisors = match divisors {
            Some(d) if d.len() != layout.len() => {
                return Err(Error::LengthMismatch {
                    expected: layout.len(),
                    actual: d.len(),
                })
            }
            Some(d) => d,
            None => vec![Complex64::new(1.0, 0.0); layout.len()],
        };
        let (h, w) = bank.shape();
        let vs = variance.as_slice();
        let uniform_value = vs[0];
        let var_hat = if vs.iter().all(|&v| v == uniform_value) {
            None
        } else {
            let mut buf: Vec<Complex64> = vs.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            plan(h, w).forward(&mut buf);
            Some(buf)
        };
        let kernels: Vec<Vec<Complex64>> = bank
            .filters()
            .iter()
            .map(|f| f.spatial_kernel().into_vec())
            .collect();
        let flipped = bank
            .filters()
            .iter()
            .map(|f| flipped_filter(f).into_field().into_vec())
            .collect();
        let mut ctx = Self {
            bank: bank.clone(),
            layout,
            variance: vs.to_vec(),
            divisors,
            kernels,
            flipped,
            var_hat,
            uniform: uniform_value,
            a: Vec::new(),
            b: Vec::new(),
        };
        let n = bank.len();
        ctx.a = (0..n)
            .map(|i| ctx.smooth(|p| ctx.kernels[i][p] * ctx.kernels[i][p]))
            .collect();
        ctx.b = (0..n)
            .map(|i| ctx.smooth(|p| Complex64::new(ctx.kernels[i][p].norm_sqr(), 0.0)))
            .collect();
        Ok(ctx)
    }

    pub fn layout(&self) -> &WphLayout {
        &self.layout
    }

    pub fn divisors(&self) -> &[Complex64] {
        &self.divisors
    }

    fn m(&self) -> usize {
        self.variance.len()
    }

    /// Circular convolution of a pointwise kernel product with the variance.
    fn smooth(&self, prod: impl Fn(usize) -> Complex64) -> Vec<Complex64> {
        let m = self.m();
        match &self.var_hat {
            None => {
                let total: Complex64 = (0..m).map(&prod).sum();
                vec![total * self.uniform; m]
            }
            Some(vh) => {
                let (h, w) = self.bank.shape();
                let p = plan(h, w);
                let mut buf: Vec<Complex64> = (0..m).map(prod).collect();
                p.forward(&mut buf);
                for (z, v) in buf.iter_mut().zip(vh) {
                    *z *= v;
                }
                p.inverse(&mut buf);
                let s = (m as f64).sqrt();
                buf.iter_mut().for_each(|z| *z *= s);
                buf
            }
        }
    }

    /// `(1/M)(C1^T f_u + C1^H f_ū + C2^H f_v̄)`: the pixel-space derivative of
    /// a coefficient.
    fn d_field(
        &self,
        i1: usize,
        i2: Option<usize>,
        fu: &[Complex64],
        fb: &[Complex64],
        fv: Option<&[Complex64]>,
    ) -> Vec<Complex64> {
        let (h, w) = self.bank.shape();
        let p = plan(h, w);
        let m = self.m();
        let h1 = self.bank.filter(i1).as_slice();
        let mut a = fu.to_vec();
        let mut b = fb.to_vec();
        p.forward(&mut a);
        p.forward(&mut b);
        let mut acc: Vec<Complex64> = (0..m)
            .map(|k| a[k] * self.flipped[i1][k] + b[k] * h1[k].conj())
            .collect();
        if let (Some(i2), Some(fv)) = (i2, fv) {
            let h2 = self.bank.filter(i2).as_slice();
            let mut c = fv.to_vec();
            p.forward(&mut c);
            acc.iter_mut()
                .zip(&c)
                .zip(h2)
                .for_each(|((z, c), hk)| *z += c * hk.conj());
        }
        p.inverse(&mut acc);
        let s = 1.0 / m as f64;
        acc.iter_mut().for_each(|z| *z *= s);
        acc
    }

    /// Adds `scale * Re(H e)` for the coefficient with second derivatives
    /// `sec`, in adjoint-weight form.
    #[allow(clippy::too_many_arguments)]
    fn hess_apply(
        &self,
        i1: usize,
        i2: Option<usize>,
        sec: &Second,
        e: &[Complex64],
        scale: f64,
        w: &mut [Vec<Complex64>],
    ) {
        let (h, wd) = self.bank.shape();
        let p = plan(h, wd);
        let m = self.m();
        let mut eh = e.to_vec();
        p.forward(&mut eh);
        let h1 = self.bank.filter(i1).as_slice();
        let conv = |mult: &dyn Fn(usize) -> Complex64| {
            let mut buf: Vec<Complex64> = (0..m).map(|k| eh[k] * mult(k)).collect();
            p.inverse(&mut buf);
            buf
        };
        let c1e = conv(&|k| h1[k]);
        let c1be = conv(&|k| self.flipped[i1][k].conj());
        let c2be = i2.map(|i2| conv(&|k| self.flipped[i2][k].conj()));
        let half = 0.5 * scale;
        for px in 0..m {
            let c2 = c2be.as_ref().map_or(ZERO, |v| v[px]);
            let pp = sec.uu[px] * c1e[px] + sec.ub[px] * c1be[px] + sec.uv[px] * c2;
            let rr = sec.ub[px] * c1e[px] + sec.bb[px] * c1be[px] + sec.bv[px] * c2;
            w[i1][px] += (pp.conj() + rr) * half;
        }
        if let Some(i2) = i2 {
            for px in 0..m {
                let z = sec.uv[px] * c1e[px] + sec.bv[px] * c1be[px];
                w[i2][px] += z * half;
            }
        }
    }

    fn check_modulus(&self, f: &Filtered, i: usize) -> Result<()> {
        for (pixel, z) in f.u[i].iter().enumerate() {
            let r = z.norm();
            if r < MODULUS_FLOOR {
                return Err(Error::NearZeroModulus {
                    filter: i,
                    pixel,
                    modulus: r,
                });
            }
        }
        Ok(())
    }

    /// Raw `jnorm` and `htrace` of the unnormalized coefficients.
    pub fn terms(&self, x: &RealField) -> Result<(Vec<f64>, Vec<Complex64>)> {
        let ev = self.evaluate(x, None, 0.0, false)?;
        let jn = ev.jnorm.iter().zip(&self.divisors).map(|(j, d)| j * d.norm_sqr()).collect();
        let ht = ev.htrace.iter().zip(&self.divisors).map(|(h, d)| h * d).collect();
        Ok((jn, ht))
    }

    /// Second-order expansion of `E ||phi(x + alpha eps) - target||^2` in
    /// normalized coordinates. `target = None` uses `phi(x)` itself.
    pub fn evaluate(
        &self,
        x: &RealField,
        target: Option<&[Complex64]>,
        alpha: f64,
        with_gradient: bool,
    ) -> Result<PerturbativeEval> {
        let layout = &self.layout;
        let k_total = layout.len();
        if let Some(t) = target {
            if t.len() != k_total {
                return Err(Error::LengthMismatch {
                    expected: k_total,
                    actual: t.len(),
                });
            }
        }
        let f = Filtered::new(x, &self.bank)?;
        let m = f.m;
        let mf = m as f64;
        let phi: Vec<Complex64> = f
            .coefficients(layout)
            .iter()
            .zip(&self.divisors)
            .map(|(v, d)| v / d)
            .collect();
        let r: Vec<Complex64> = match target {
            Some(t) => phi.iter().zip(t).map(|(p, t)| p - t).collect(),
            None => vec![ZERO; k_total],
        };
        let a2 = alpha * alpha;
        let n = self.bank.len();
        let mut w = zero_weights(n, m);
        let mut gx = vec![0.0; m];
        let mut jnorm = vec![0.0; k_total];
        let mut htrace = vec![ZERO; k_total];
        let mut checked = vec![false; n];
        let var = &self.variance;
        let one = Complex64::new(1.0, 0.0);

        for (k, term) in terms(layout).into_iter().enumerate() {
            let nu = self.divisors[k];
            let c = r[k] / nu.conj();
            let modulus_filter = match term {
                Term::Energy(_) => None,
                Term::Centered(i) | Term::ModPhase(i) | Term::Cross(i, _) => Some(i),
            };
            if let Some(i) = modulus_filter {
                if !checked[i] {
                    self.check_modulus(&f, i)?;
                    checked[i] = true;
                }
            }
            let (jn_raw, h_raw) = match term {
                Term::Energy(i) | Term::ModPhase(i) => {
                    let mono = if matches!(term, Term::Energy(_)) { ENERGY } else { MOD_PHASE };
                    self.general(&f, mono, i, None, nu, c, a2, with_gradient, &mut w)
                }
                Term::Cross(i, j) => self.general(&f, CROSS, i, Some(j), nu, c, a2, with_gradient, &mut w),
                Term::Centered(i) => {
                    let u = &f.u[i];
                    let mean_mod = u.iter().map(|z| z.norm()).sum::<f64>() / mf;
                    let fu_e: Vec<Complex64> = u.iter().map(|z| z.conj()).collect();
                    let d11 = self.d_field(i, None, &fu_e, u, None);
                    let fu_m: Vec<Complex64> = u.iter().map(|&z| MODULUS.d(1, 0, 0, z, one)).collect();
                    let fb_m: Vec<Complex64> = u.iter().map(|&z| MODULUS.d(0, 1, 0, z, one)).collect();
                    let dm: Vec<f64> = self.d_field(i, None, &fu_m, &fb_m, None).iter().map(|z| z.re).collect();
                    let d00: Vec<f64> = d11.iter().zip(&dm).map(|(a, b)| a.re - 2.0 * mean_mod * b).collect();
                    let jn: f64 = d00.iter().zip(var).map(|(d, v)| v * d * d).sum();
                    let sec_m = self.second(MODULUS, u, None);
                    let (ai, bi) = (&self.a[i], &self.b[i]);
                    let h11: f64 = bi.iter().map(|z| 2.0 * z.re).sum::<f64>() / mf;
                    let hm: f64 = (0..m)
                        .map(|p| (sec_m.uu[p] * ai[p] + sec_m.ub[p] * bi[p] * 2.0 + sec_m.bb[p] * ai[p].conj()).re)
                        .sum::<f64>()
                        / mf;
                    let sdm: f64 = dm.iter().zip(var).map(|(d, v)| v * d * d).sum();
                    let h00 = h11 - 2.0 * sdm - 2.0 * mean_mod * hm;
                    if with_gradient && a2 != 0.0 {
                        let cr = c.re;
                        let inv = 1.0 / nu.norm_sqr();
                        let e: Vec<f64> = d00.iter().zip(var).map(|(d, v)| v * d * inv).collect();
                        let dm_e: f64 = dm.iter().zip(&e).map(|(a, b)| a * b).sum();
                        let sec_e = self.second(ENERGY, u, None);
                        let ec: Vec<Complex64> = e.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                        self.hess_apply(i, None, &sec_e, &ec, 2.0 * a2, &mut w);
                        let e_mod: Vec<Complex64> = (0..m)
                            .map(|p| Complex64::new(-4.0 * mean_mod * e[p] - 4.0 * cr * var[p] * dm[p], 0.0))
                            .collect();
                        self.hess_apply(i, None, &sec_m, &e_mod, a2, &mut w);
                        for p in 0..m {
                            gx[p] += a2 * (-4.0 * dm_e - 2.0 * cr * hm) * dm[p];
                        }
                        let (gu, gb, _) = self.third(MODULUS, i, None, u, None);
                        let s = a2 * cr * (-2.0 * mean_mod) * 0.5;
                        for p in 0..m {
                            w[i][p] += (gu[p].conj() + gb[p]) * s;
                        }
                    }
                    (jn, Complex64::new(h00, 0.0))
                }
            };
            jnorm[k] = jn_raw / nu.norm_sqr();
            htrace[k] = h_raw / nu;
        }

        let residual_sq: f64 = r.iter().map(|z| z.norm_sqr()).sum();
        let penalty: f64 = jnorm.iter().sum::<f64>()
            + r.iter().zip(&htrace).map(|(r, h)| (r.conj() * h).re).sum::<f64>();
        let gradient = if with_gradient {
            let cot: Vec<Complex64> = (0..k_total)
                .map(|k| (r[k] + htrace[k] * (0.5 * a2)) / self.divisors[k].conj())
                .collect();
            f.accumulate_adjoint(layout, &cot, &mut w);
            let mut g = synthesize(&self.bank, w);
            g.as_mut_slice().iter_mut().zip(&gx).for_each(|(a, b)| *a += b);
            Some(g)
        } else {
            None
        };
        Ok(PerturbativeEval {
            value: residual_sq + a2 * penalty,
            residual_sq,
            penalty,
            jnorm,
            htrace,
            phi,
            gradient,
        })
    }

    fn second(&self, mono: Mono, u: &[Complex64], v: Option<&[Complex64]>) -> Second {
        let vb = |p: usize| v.map_or(Complex64::new(1.0, 0.0), |v| v[p].conj());
        let m = u.len();
        let f = |pu, pb, pv| (0..m).map(|p| mono.d(pu, pb, pv, u[p], vb(p))).collect::<Vec<_>>();
        Second {
            uu: f(2, 0, 0),
            ub: f(1, 1, 0),
            bb: f(0, 2, 0),
            uv: f(1, 0, 1),
            bv: f(0, 1, 1),
        }
    }

    /// Derivatives of the Hessian-trace integrand `G` with respect to
    /// `u`, `conj(u)` and `conj(v)`.
    #[allow(clippy::type_complexity)]
    fn third(
        &self,
        mono: Mono,
        i1: usize,
        i2: Option<usize>,
        u: &[Complex64],
        v: Option<&[Complex64]>,
    ) -> (Vec<Complex64>, Vec<Complex64>, Vec<Complex64>) {
        let m = u.len();
        let (ai, bi) = (&self.a[i1], &self.b[i1]);
        let xy = i2.map(|i2| self.cross_fields(i1, i2));
        let mut gu = vec![ZERO; m];
        let mut gb = vec![ZERO; m];
        let mut gv = vec![ZERO; m];
        for p in 0..m {
            let vb = v.map_or(Complex64::new(1.0, 0.0), |v| v[p].conj());
            let d = |pu, pb, pv| mono.d(pu, pb, pv, u[p], vb);
            let (a, b) = (ai[p], bi[p]);
            let (x, y) = xy.as_ref().map_or((ZERO, ZERO), |(x, y)| (x[p], y[p]));
            gu[p] = d(3, 0, 0) * a + d(2, 1, 0) * b * 2.0 + d(1, 2, 0) * a.conj()
                + d(2, 0, 1) * x * 2.0
                + d(1, 1, 1) * y * 2.0;
            gb[p] = d(2, 1, 0) * a + d(1, 2, 0) * b * 2.0 + d(0, 3, 0) * a.conj()
                + d(1, 1, 1) * x * 2.0
                + d(0, 2, 1) * y * 2.0;
            if v.is_some() {
                gv[p] = d(2, 0, 1) * a + d(1, 1, 1) * b * 2.0 + d(0, 2, 1) * a.conj();
            }
        }
        (gu, gb, gv)
    }

    /// `(psi1 conj(psi2)) * s2` and `(conj(psi1) conj(psi2)) * s2`.
    fn cross_fields(&self, i1: usize, i2: usize) -> (Vec<Complex64>, Vec<Complex64>) {
        let (k1, k2) = (&self.kernels[i1], &self.kernels[i2]);
        (
            self.smooth(|p| k1[p] * k2[p].conj()),
            self.smooth(|p| (k1[p] * k2[p]).conj()),
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn general(
        &self,
        f: &Filtered,
        mono: Mono,
        i1: usize,
        i2: Option<usize>,
        nu: Complex64,
        c: Complex64,
        a2: f64,
        with_gradient: bool,
        w: &mut [Vec<Complex64>],
    ) -> (f64, Complex64) {
        let m = f.m;
        let u = &f.u[i1];
        let v = i2.map(|j| f.u[j].as_slice());
        let vb = |p: usize| v.map_or(Complex64::new(1.0, 0.0), |v| v[p].conj());
        let fu: Vec<Complex64> = (0..m).map(|p| mono.d(1, 0, 0, u[p], vb(p))).collect();
        let fb: Vec<Complex64> = (0..m).map(|p| mono.d(0, 1, 0, u[p], vb(p))).collect();
        let fv: Option<Vec<Complex64>> =
            v.map(|_| (0..m).map(|p| mono.d(0, 0, 1, u[p], vb(p))).collect());
        let d = self.d_field(i1, i2, &fu, &fb, fv.as_deref());
        let jn: f64 = d.iter().zip(&self.variance).map(|(d, v)| v * d.norm_sqr()).sum();
        let sec = self.second(mono, u, v);
        let (ai, bi) = (&self.a[i1], &self.b[i1]);
        let xy = i2.map(|i2| self.cross_fields(i1, i2));
        let mut g_sum = ZERO;
        for p in 0..m {
            let mut g = sec.uu[p] * ai[p] + sec.ub[p] * bi[p] * 2.0 + sec.bb[p] * ai[p].conj();
            if let Some((x, y)) = &xy {
                g += sec.uv[p] * x[p] * 2.0 + sec.bv[p] * y[p] * 2.0;
            }
            g_sum += g;
        }
        let h = g_sum / m as f64;
        if with_gradient && a2 != 0.0 {
            let inv = 1.0 / nu.norm_sqr();
            let e: Vec<Complex64> = d
                .iter()
                .zip(&self.variance)
                .map(|(d, v)| d.conj() * (v * inv))
                .collect();
            self.hess_apply(i1, i2, &sec, &e, 2.0 * a2, w);
            // the energy integrand is constant in u
            if !(mono.a == 1.0 && mono.b == 1.0 && mono.e == 0) {
                let (gu, gb, gv) = self.third(mono, i1, i2, u, v);
                let half = 0.5 * a2;
                for p in 0..m {
                    w[i1][p] += (c * gu[p].conj() + c.conj() * gb[p]) * half;
                }
                if let Some(i2) = i2 {
                    for p in 0..m {
                        w[i2][p] += c.conj() * gv[p] * half;
                    }
                }
            }
        }
        (jn, h)
    }
}

/// Raw `(jnorm, htrace)` per active coefficient for pixel variance `s2`.
pub fn wph_perturbative_terms(
    x: &RealField,
    bank: &FilterBank,
    pixel_variance: &RealField,
    mask: ClassMask,
) -> Result<(Vec<f64>, Vec<Complex64>)> {
    PerturbativeContext::new(bank, mask, pixel_variance, None)?.terms(x)
}
