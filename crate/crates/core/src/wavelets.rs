//! Bump-steerable wavelet filter banks defined in Fourier space.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fields::{signed_freq, RealField, Spectrum2D};

/// `J * L` bandpass filters indexed by `i = j * L + l`, from fine (`j = 0`)
/// to coarse scales.
#[derive(Clone, Debug)]
pub struct FilterBank {
    height: usize,
    width: usize,
    j: usize,
    l: usize,
    filters: Vec<Spectrum2D>,
    center_freqs: Vec<f64>,
}

/// Largest usable scale count minus one: `log2(min(h, w)) - 1`, at least 1.
pub fn default_scales(height: usize, width: usize) -> usize {
    let n = height.min(width).max(1);
    ((usize::BITS - 1 - n.leading_zeros()) as usize)
        .saturating_sub(1)
        .max(1)
}

pub fn build_bank(height: usize, width: usize, j: usize, l: usize) -> Result<FilterBank> {
    if j == 0 || l == 0 {
        return Err(Error::InvalidGeometry(format!(
            "J and L must be >= 1 (got J={j}, L={l})"
        )));
    }
    if height == 0 || width == 0 {
        return Err(Error::InvalidGeometry("empty grid".into()));
    }
    if j >= usize::BITS as usize || (1usize << j) > height.min(width) {
        return Err(Error::InvalidGeometry(format!(
            "2^J = 2^{j} exceeds min dimension {}",
            height.min(width)
        )));
    }
    let center_freqs: Vec<f64> = (0..j).map(|s| PI * 0.5f64.powi(s as i32)).collect();
    let mut filters = Vec::with_capacity(j * l);
    for &xi in &center_freqs {
        for o in 0..l {
            let theta = o as f64 * PI / l as f64;
            let mut f = Spectrum2D::from_fn(height, width, |ky, kx| {
                let wy = 2.0 * PI * nyquist_positive(ky, height) as f64 / height as f64;
                let wx = 2.0 * PI * nyquist_positive(kx, width) as f64 / width as f64;
                Complex64::new(bump(wy, wx, xi, theta, l), 0.0)
            })
            .into_field();
            let peak = f.as_slice().iter().map(|z| z.re).fold(0.0, f64::max);
            if peak > 0.0 {
                f.as_mut_slice().iter_mut().for_each(|z| *z /= peak);
            }
            filters.push(Spectrum2D::from_field(f));
        }
    }
    Ok(FilterBank {
        height,
        width,
        j,
        l,
        filters,
        center_freqs,
    })
}

/// The Nyquist row/column is its own mirror image; place it at `+n/2` so
/// its angle lands inside the upper half-plane the lobes cover.
fn nyquist_positive(k: isize, n: usize) -> isize {
    if 2 * k == -(n as isize) {
        -k
    } else {
        k
    }
}

/// Radial bump around `xi` times an angular lobe `cos^(L-1)` around `theta`.
fn bump(wy: f64, wx: f64, xi: f64, theta: f64, l: usize) -> f64 {
    let r = (wy * wy + wx * wx).sqrt();
    let d = r - xi;
    if r == 0.0 || d.abs() >= xi {
        return 0.0;
    }
    let radial = (-(d * d) / (xi * xi - d * d)).exp();
    let mut delta = wy.atan2(wx) - theta;
    delta = (delta + PI).rem_euclid(2.0 * PI) - PI;
    if delta.abs() > PI / 2.0 {
        return 0.0;
    }
    radial * delta.cos().max(0.0).powi(l as i32 - 1)
}

impl FilterBank {
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn scales(&self) -> usize {
        self.j
    }

    pub fn orientations(&self) -> usize {
        self.l
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn filters(&self) -> &[Spectrum2D] {
        &self.filters
    }

    pub fn filter(&self, i: usize) -> &Spectrum2D {
        &self.filters[i]
    }

    pub fn center_freqs(&self) -> &[f64] {
        &self.center_freqs
    }

    pub fn index(&self, j: usize, l: usize) -> usize {
        j * self.l + l
    }

    /// `(scale, orientation)` of filter `i`.
    pub fn scale_orientation(&self, i: usize) -> (usize, usize) {
        (i / self.l, i % self.l)
    }
}

/// `k -> sum_i |psi_i(k)|^2`, symmetrized over `k` and `-k`: a real signal's
/// modes at `k` and `-k` carry the same information.
pub fn littlewood_paley(bank: &FilterBank) -> RealField {
    let (h, w) = bank.shape();
    let mut acc = RealField::zeros(h, w);
    for f in bank.filters() {
        for (a, z) in acc.as_mut_slice().iter_mut().zip(f.as_slice()) {
            *a += z.norm_sqr();
        }
    }
    RealField::from_fn(h, w, |r, c| {
        0.5 * (acc.at(r as isize, c as isize) + acc.at(-(r as isize), -(c as isize)))
    })
}

/// Angle-averaged `|psi(k)|` on integer-radius annuli of the frequency grid.
pub fn radial_profile(filter: &Spectrum2D) -> Vec<f64> {
    let (h, w) = filter.shape();
    let rmax = h.min(w) / 2;
    let mut sums = vec![0.0; rmax + 1];
    let mut counts = vec![0usize; rmax + 1];
    for r in 0..h {
        for c in 0..w {
            let ky = signed_freq(r, h) as f64 * rmax as f64 * 2.0 / h as f64;
            let kx = signed_freq(c, w) as f64 * rmax as f64 * 2.0 / w as f64;
            let bin = (ky * ky + kx * kx).sqrt().round() as usize;
            if bin > rmax {
                continue;
            }
            sums[bin] += filter.as_slice()[r * w + c].norm();
            counts[bin] += 1;
        }
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &n)| if n > 0 { s / n as f64 } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn j7_l4_bank_has_28_filters() {
        let b = build_bank(256, 256, 7, 4).unwrap();
        assert_eq!(b.len(), 28);
        assert_eq!(b.center_freqs().len(), 7);
        assert_eq!(b.scale_orientation(b.index(3, 2)), (3, 2));
    }

    #[test]
    fn filters_are_bandpass_and_unit_peak() {
        let b = build_bank(64, 64, 5, 4).unwrap();
        for f in b.filters() {
            assert_eq!(f.at(0, 0), Complex64::new(0.0, 0.0));
            let peak = f.as_slice().iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!((peak - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn coverage_scan() {
        for (h, w, j, l) in [(64, 64, 5, 4), (64, 64, 6, 4), (64, 64, 5, 1), (32, 48, 4, 3)] {
            let b = build_bank(h, w, j, l).unwrap();
            for r in 0..h {
                for c in 0..w {
                    if r == 0 && c == 0 {
                        continue;
                    }
                    let best = b
                        .filters()
                        .iter()
                        .flat_map(|f| {
                            [
                                f.at(r as isize, c as isize).norm(),
                                f.at(-(r as isize), -(c as isize)).norm(),
                            ]
                        })
                        .fold(0.0, f64::max);
                    assert!(best > 1e-6, "uncovered mode ({r},{c}) for J={j} L={l}");
                }
            }
        }
    }

    #[test]
    fn littlewood_paley_properties() {
        let b = build_bank(64, 64, 5, 4).unwrap();
        let lp = littlewood_paley(&b);
        assert_eq!(lp.at(0, 0), 0.0);
        for r in 0..64isize {
            for c in 0..64isize {
                assert_eq!(lp.at(r, c), lp.at(-r, -c));
                if r != 0 || c != 0 {
                    assert!(lp.at(r, c) > 0.0);
                }
            }
        }
    }

    #[test]
    fn orientations_share_radial_profile() {
        let b = build_bank(128, 128, 5, 4).unwrap();
        for j in 0..5 {
            let base = radial_profile(b.filter(b.index(j, 0)));
            for l in 1..4 {
                let p = radial_profile(b.filter(b.index(j, l)));
                let rms = (base.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
                    / base.len() as f64)
                    .sqrt();
                // profiles are in units of the unit filter peak
                assert!(rms < 0.01, "j={j} l={l}: rms {rms}");
            }
        }
    }

    #[test]
    fn scales_two_apart_barely_overlap() {
        // The finest scale is excluded: its passband extends past the Nyquist
        // frequency, so the grid clips its own energy and the ratio
        // is inflated (about 6%).
        let b = build_bank(128, 128, 6, 4).unwrap();
        let ip = |a: &Spectrum2D, c: &Spectrum2D| -> f64 {
            a.as_slice().iter().zip(c.as_slice()).map(|(x, y)| x.norm() * y.norm()).sum()
        };
        for j in 1..4 {
            for l in 0..4 {
                let fine = b.filter(b.index(j, l));
                let coarse = b.filter(b.index(j + 2, l));
                assert!(ip(fine, coarse) < 0.05 * ip(fine, fine), "j={j} l={l}");
            }
        }
    }

    #[test]
    fn geometry_errors() {
        assert!(matches!(build_bank(64, 64, 7, 4), Err(Error::InvalidGeometry(_))));
        assert!(build_bank(64, 64, 6, 4).is_ok());
        assert!(build_bank(64, 64, 0, 4).is_err());
        assert!(build_bank(64, 64, 3, 0).is_err());
    }

    #[test]
    fn default_scale_count() {
        assert_eq!(default_scales(256, 256), 7);
        assert_eq!(default_scales(64, 64), 5);
        assert_eq!(default_scales(64, 128), 5);
    }
}
