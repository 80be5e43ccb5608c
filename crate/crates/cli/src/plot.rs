//! Sweep figures: PSNR and per-class relative error against sigma on a log
//! axis. Text needs a TrueType font; without one the axes are drawn unlabeled.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use anyhow::{anyhow, Result};
use plotters::coord::Shift;
use plotters::prelude::*;
use plotters::style::{register_font, FontStyle};

use statsep::metrics::EvalReport;
use statsep::wph::WphClass;

const FONT_CANDIDATES: [&str; 4] = [
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/TTF/DejaVuSans.ttf",
    "/usr/share/fonts/dejavu/DejaVuSans.ttf",
    "/Library/Fonts/Arial.ttf",
];

/// Registers a font once. `STATSEP_FONT` names the file; otherwise a few
/// common system locations are tried.
fn font_available() -> bool {
    static FONT: OnceLock<bool> = OnceLock::new();
    *FONT.get_or_init(|| {
        let paths: Vec<PathBuf> = match std::env::var_os("STATSEP_FONT") {
            Some(p) => vec![PathBuf::from(p)],
            None => FONT_CANDIDATES.iter().map(PathBuf::from).collect(),
        };
        for p in paths {
            if let Ok(bytes) = std::fs::read(&p) {
                let bytes: &'static [u8] = Box::leak(bytes.into_boxed_slice());
                if register_font("sans-serif", FontStyle::Normal, bytes).is_ok() {
                    return true;
                }
            }
        }
        log::warn!("no usable font found; plots are drawn without text");
        false
    })
}

/// One curve: label and `(sigma, mean value)` points.
pub type Curve = (String, Vec<(f64, f64)>);

/// Mean of `metric` over realizations, per algorithm and sigma. NaN cells
/// are skipped; a sigma with no finite value is left out.
pub fn curves(rows: &[EvalReport], metric: impl Fn(&EvalReport) -> f64) -> Vec<Curve> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.algorithm.as_str()) {
            names.push(&r.algorithm);
        }
    }
    let mut sigmas: Vec<f64> = rows.iter().map(|r| r.sigma).collect();
    sigmas.sort_by(f64::total_cmp);
    sigmas.dedup();
    names
        .into_iter()
        .map(|name| {
            let pts = sigmas
                .iter()
                .filter_map(|&s| {
                    let v: Vec<f64> = rows
                        .iter()
                        .filter(|r| r.algorithm == name && r.sigma == s)
                        .map(&metric)
                        .filter(|v| v.is_finite())
                        .collect();
                    (!v.is_empty()).then(|| (s, v.iter().sum::<f64>() / v.len() as f64))
                })
                .collect();
            (name.to_string(), pts)
        })
        .collect()
}

fn span(curves: &[Curve], f: impl Fn(&(f64, f64)) -> f64) -> Option<(f64, f64)> {
    let vals: Vec<f64> = curves.iter().flat_map(|c| c.1.iter().map(&f)).collect();
    if vals.is_empty() {
        return None;
    }
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some((lo, hi))
}

fn padded_log(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo / 1.15, hi * 1.15)
    } else {
        (lo / 2.0, hi * 2.0)
    }
}

fn draw_panel(
    area: &DrawingArea<BitMapBackend<'_>, Shift>,
    curves: &[Curve],
    title: &str,
    y_desc: &str,
    log_y: bool,
) -> Result<()> {
    let text = font_available();
    let Some((xlo, xhi)) = span(curves, |p| p.0) else {
        return Ok(());
    };
    let Some((ylo, yhi)) = span(curves, |p| p.1) else {
        return Ok(());
    };
    let (xlo, xhi) = padded_log(xlo, xhi);
    let mut builder = ChartBuilder::on(area);
    builder.margin(12);
    if text {
        builder
            .caption(title, ("sans-serif", 20))
            .x_label_area_size(40)
            .y_label_area_size(60);
    }
    let palette = |i: usize| Palette99::pick(i).to_rgba();
    macro_rules! body {
        ($chart:expr) => {{
            let mut chart = $chart;
            let mut mesh = chart.configure_mesh();
            if text {
                mesh.x_desc("sigma").y_desc(y_desc);
            } else {
                mesh.disable_x_mesh().disable_y_mesh().x_labels(0).y_labels(0);
            }
            mesh.draw().map_err(|e| anyhow!("{e}"))?;
            for (i, (name, pts)) in curves.iter().enumerate() {
                let color = palette(i);
                let series = chart
                    .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
                    .map_err(|e| anyhow!("{e}"))?;
                if text {
                    series.label(name.as_str()).legend(move |(x, y)| {
                        PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2))
                    });
                }
                chart
                    .draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled())))
                    .map_err(|e| anyhow!("{e}"))?;
            }
            if text {
                chart
                    .configure_series_labels()
                    .background_style(WHITE.mix(0.85))
                    .border_style(BLACK)
                    .draw()
                    .map_err(|e| anyhow!("{e}"))?;
            }
        }};
    }
    if log_y {
        let (ylo, yhi) = padded_log(ylo.max(1e-12), yhi.max(1e-12));
        body!(builder
            .build_cartesian_2d((xlo..xhi).log_scale(), (ylo..yhi).log_scale())
            .map_err(|e| anyhow!("{e}"))?);
    } else {
        let pad = ((yhi - ylo) * 0.08).max(0.5);
        body!(builder
            .build_cartesian_2d((xlo..xhi).log_scale(), (ylo - pad)..(yhi + pad))
            .map_err(|e| anyhow!("{e}"))?);
    }
    Ok(())
}

pub fn psnr_plot(rows: &[EvalReport], path: &Path) -> Result<()> {
    let root = BitMapBackend::new(path, (800, 560)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
    draw_panel(&root, &curves(rows, |r| r.psnr_db), "PSNR", "PSNR [dB]", false)?;
    root.present().map_err(|e| anyhow!("{e}"))?;
    Ok(())
}

/// 2x2 panels, one per class.
pub fn rel_err_plot(rows: &[EvalReport], path: &Path) -> Result<()> {
    let root = BitMapBackend::new(path, (1200, 900)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
    for (area, class) in root.split_evenly((2, 2)).iter().zip(WphClass::ALL) {
        let c = curves(rows, |r| r.rel_err(class).unwrap_or(f64::NAN));
        draw_panel(area, &c, &format!("{class} relative error"), "relative error", true)?;
    }
    root.present().map_err(|e| anyhow!("{e}"))?;
    Ok(())
}

pub fn sweep_plots(rows: &[EvalReport], out: &Path) -> Result<()> {
    psnr_plot(rows, &out.join("psnr_vs_sigma.png"))?;
    rel_err_plot(rows, &out.join("rel_err_vs_sigma.png"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use statsep::noise::NoiseKind;

    fn row(alg: &str, sigma: f64, psnr: f64) -> EvalReport {
        EvalReport {
            algorithm: alg.into(),
            noise_kind: NoiseKind::White,
            sigma,
            realization: 0,
            seed: 0,
            psnr_db: psnr,
            rel_err_by_class: WphClass::ALL.iter().map(|&k| (k, psnr / 100.0)).collect(),
            rmse_repr: 0.0,
            normalized: true,
        }
    }

    #[test]
    fn curves_average_and_skip_nan() {
        let rows = vec![
            row("noisy", 0.1, 20.0),
            row("noisy", 0.1, 22.0),
            row("vanilla", 0.1, f64::NAN),
            row("vanilla", 1.0, 30.0),
            row("noisy", 1.0, 10.0),
        ];
        let c = curves(&rows, |r| r.psnr_db);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0], ("noisy".to_string(), vec![(0.1, 21.0), (1.0, 10.0)]));
        assert_eq!(c[1], ("vanilla".to_string(), vec![(1.0, 30.0)]));
    }

    #[test]
    fn plots_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<_> = [0.1, 0.3, 1.0]
            .iter()
            .flat_map(|&s| [row("noisy", s, 20.0 - 10.0 * s), row("vanilla", s, 25.0 - 8.0 * s)])
            .collect();
        sweep_plots(&rows, dir.path()).unwrap();
        for f in ["psnr_vs_sigma.png", "rel_err_vs_sigma.png"] {
            let img = image::open(dir.path().join(f)).unwrap();
            assert!(img.width() >= 800);
        }
    }
}
