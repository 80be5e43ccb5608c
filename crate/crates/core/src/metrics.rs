//! PSNR and per-class relative errors of WPH statistics.

use std::io::Write;

use crate::error::{Error, Result};
use crate::fields::RealField;
use crate::noise::NoiseKind;
use crate::wavelets::FilterBank;
use crate::wph::{normalize, wph_compute, ClassMask, NormalizationRef, WphClass, WphCoefficients};

/// `10 log10(peak^2 / MSE)` with `peak = max(reference) - min(reference)`.
/// Identical fields give `+inf`.
pub fn psnr(candidate: &RealField, reference: &RealField) -> Result<f64> {
    candidate.check_shape(reference.shape())?;
    let peak = reference.max() - reference.min();
    if !(peak > 0.0) {
        return Err(Error::ConstantReference);
    }
    let mse = (candidate - reference).norm_sq() / reference.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// `||c_k - r_k|| / ||r_k||` over the coefficients of one class.
pub fn class_relative_error(
    candidate: &WphCoefficients,
    reference: &WphCoefficients,
    class: WphClass,
) -> Result<f64> {
    if candidate.layout() != reference.layout() {
        return Err(Error::InvalidConfig("coefficient layouts differ".into()));
    }
    if !reference.layout().mask().contains(class) {
        return Err(Error::InvalidConfig(format!("class {class} is not computed")));
    }
    let r = reference.class(class);
    let den: f64 = r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::ZeroReferenceNorm(class.name()));
    }
    let num: f64 = candidate
        .class(class)
        .iter()
        .zip(r)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt();
    Ok(num / den)
}

/// Quality of one field against the clean reference.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Which field was scored: an algorithm name, or `noisy` for the input.
    pub algorithm: String,
    pub noise_kind: NoiseKind,
    pub sigma: f64,
    pub realization: usize,
    pub seed: u64,
    pub psnr_db: f64,
    /// One entry per class of the mask, in class order.
    pub rel_err_by_class: Vec<(WphClass, f64)>,
    /// RMS over all coefficients of the difference with the reference.
    pub rmse_repr: f64,
    /// Whether coefficients were normalized before comparison.
    pub normalized: bool,
}

/// Run metadata attached to a report.
#[derive(Clone, Debug)]
pub struct EvalContext<'a> {
    pub algorithm: &'a str,
    pub noise_kind: NoiseKind,
    pub sigma: f64,
    pub realization: usize,
    pub seed: u64,
}

/// Score `candidate` against `reference`. With `normalized`, both sets of
/// coefficients are divided by the S11 statistics of the reference.
pub fn evaluate(
    candidate: &RealField,
    reference: &RealField,
    bank: &FilterBank,
    mask: ClassMask,
    normalized: bool,
    ctx: &EvalContext<'_>,
) -> Result<EvalReport> {
    let psnr_db = psnr(candidate, reference)?;
    let mut c = wph_compute(candidate, bank, mask)?;
    let mut r = wph_compute(reference, bank, mask)?;
    if normalized {
        let nref = NormalizationRef::from_field(reference, bank)?;
        c = normalize(&c, &nref)?;
        r = normalize(&r, &nref)?;
    }
    let rel_err_by_class = mask
        .classes()
        .into_iter()
        .map(|k| Ok((k, class_relative_error(&c, &r, k)?)))
        .collect::<Result<Vec<_>>>()?;
    let rmse_repr = (c
        .as_slice()
        .iter()
        .zip(r.as_slice())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        / c.len().max(1) as f64)
        .sqrt();
    Ok(EvalReport {
        algorithm: ctx.algorithm.to_string(),
        noise_kind: ctx.noise_kind,
        sigma: ctx.sigma,
        realization: ctx.realization,
        seed: ctx.seed,
        psnr_db,
        rel_err_by_class,
        rmse_repr,
        normalized,
    })
}

/// Column order of evaluation CSV files.
pub const EVAL_HEADER: [&str; 13] = [
    "algorithm",
    "noise",
    "sigma",
    "realization",
    "seed",
    "psnr_db",
    "rel_err_s11",
    "rel_err_s00",
    "rel_err_s01",
    "rel_err_c01",
    "rmse_repr",
    "normalized",
    "psnr_peak",
];

impl EvalReport {
    pub fn rel_err(&self, class: WphClass) -> Option<f64> {
        self.rel_err_by_class.iter().find(|(k, _)| *k == class).map(|(_, v)| *v)
    }

    /// Row for a failed run: metadata filled, every metric NaN.
    pub fn failed(ctx: &EvalContext<'_>, normalized: bool) -> Self {
        EvalReport {
            algorithm: ctx.algorithm.to_string(),
            noise_kind: ctx.noise_kind,
            sigma: ctx.sigma,
            realization: ctx.realization,
            seed: ctx.seed,
            psnr_db: f64::NAN,
            rel_err_by_class: WphClass::ALL.iter().map(|&k| (k, f64::NAN)).collect(),
            rmse_repr: f64::NAN,
            normalized,
        }
    }

    pub fn csv_record(&self) -> Vec<String> {
        let cls = |k| self.rel_err(k).unwrap_or(f64::NAN).to_string();
        vec![
            self.algorithm.clone(),
            self.noise_kind.name().to_string(),
            self.sigma.to_string(),
            self.realization.to_string(),
            self.seed.to_string(),
            self.psnr_db.to_string(),
            cls(WphClass::S11),
            cls(WphClass::S00),
            cls(WphClass::S01),
            cls(WphClass::C01),
            self.rmse_repr.to_string(),
            self.normalized.to_string(),
            "range".to_string(),
        ]
    }
}

/// Write reports under [`EVAL_HEADER`]; with `header = false` rows are
/// appended without it.
pub fn write_eval_csv<W: Write>(out: W, reports: &[EvalReport], header: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if header {
        w.write_record(EVAL_HEADER)?;
    }
    for r in reports {
        w.write_record(r.csv_record())?;
    }
    w.flush()?;
    Ok(())
}
