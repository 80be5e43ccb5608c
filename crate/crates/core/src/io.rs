//! Binary grid files and grayscale PNG import/export.
//!
//! Grid layout, all little-endian: magic `SSF1`, `u32` height, `u32` width,
//! `u8` dtype (0 = real f64, 1 = complex f64 pairs `re, im`), then the values
//! in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fields::{ComplexField, RealField};

pub const MAGIC: &[u8; 4] = b"SSF1";
pub const DTYPE_REAL: u8 = 0;
pub const DTYPE_COMPLEX: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Grid {
    Real(RealField),
    Complex(ComplexField),
}

fn header<W: Write>(out: &mut W, shape: (usize, usize), dtype: u8) -> Result<()> {
    let dim = |n: usize| {
        u32::try_from(n).map_err(|_| Error::Format(format!("dimension {n} exceeds u32")))
    };
    out.write_all(MAGIC)?;
    out.write_all(&dim(shape.0)?.to_le_bytes())?;
    out.write_all(&dim(shape.1)?.to_le_bytes())?;
    out.write_all(&[dtype])?;
    Ok(())
}

pub fn write_real<W: Write>(mut out: W, f: &RealField) -> Result<()> {
    header(&mut out, f.shape(), DTYPE_REAL)?;
    for v in f.as_slice() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_complex<W: Write>(mut out: W, f: &ComplexField) -> Result<()> {
    header(&mut out, f.shape(), DTYPE_COMPLEX)?;
    for z in f.as_slice() {
        out.write_all(&z.re.to_le_bytes())?;
        out.write_all(&z.im.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_grid<R: Read>(mut input: R) -> Result<Grid> {
    let mut head = [0u8; 13];
    input
        .read_exact(&mut head)
        .map_err(|_| Error::Format("truncated header".into()))?;
    if &head[..4] != MAGIC {
        return Err(Error::Format("bad magic (expected SSF1)".into()));
    }
    let h = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes")) as usize;
    let w = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes")) as usize;
    let per = match head[12] {
        DTYPE_REAL => 1,
        DTYPE_COMPLEX => 2,
        d => return Err(Error::Format(format!("unknown dtype {d}"))),
    };
    let n = h
        .checked_mul(w)
        .and_then(|m| m.checked_mul(per))
        .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() != n * 8 {
        return Err(Error::Format(format!(
            "expected {} payload bytes, found {}",
            n * 8,
            bytes.len()
        )));
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(if per == 1 {
        Grid::Real(RealField::new(h, w, vals)?)
    } else {
        let z = vals.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
        Grid::Complex(ComplexField::new(h, w, z)?)
    })
}

pub fn save_real(path: impl AsRef<Path>, f: &RealField) -> Result<()> {
    write_real(BufWriter::new(File::create(path)?), f)
}

pub fn save_complex(path: impl AsRef<Path>, f: &ComplexField) -> Result<()> {
    write_complex(BufWriter::new(File::create(path)?), f)
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<Grid> {
    read_grid(BufReader::new(File::open(path)?))
}

/// Load a real grid; complex files are rejected.
pub fn load_real(path: impl AsRef<Path>) -> Result<RealField> {
    match load_grid(path)? {
        Grid::Real(f) => Ok(f),
        Grid::Complex(_) => Err(Error::Format("expected a real grid, found complex".into())),
    }
}

/// 8-bit grayscale with `min -> 0` and `max -> 255`. Constant fields map
/// to mid-gray.
pub fn to_gray(f: &RealField) -> GrayImage {
    let (lo, hi) = (f.min(), f.max());
    let span = hi - lo;
    let (h, w) = f.shape();
    ImageBuffer::from_fn(w as u32, h as u32, |c, r| {
        let v = f.as_slice()[r as usize * w + c as usize];
        let t = if span > 0.0 { (v - lo) / span } else { 0.5 };
        Luma([(t * 255.0).round().clamp(0.0, 255.0) as u8])
    })
}

pub fn save_png(path: impl AsRef<Path>, f: &RealField) -> Result<()> {
    to_gray(f).save(path)?;
    Ok(())
}

/// Grayscale values in `[0, 1]`; color images are converted to luma.
pub fn load_png(path: impl AsRef<Path>) -> Result<RealField> {
    let img = image::open(path)?.into_luma16();
    let (w, h) = img.dimensions();
    let vals = img.pixels().map(|p| p.0[0] as f64 / 65535.0).collect();
    RealField::new(h as usize, w as usize, vals)
}

/// Load a field from a grid file or, by extension, a PNG image.
pub fn load_field(path: impl AsRef<Path>) -> Result<RealField> {
    let p = path.as_ref();
    match p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
        Some(e) if e == "png" => load_png(p),
        _ => load_real(p),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_and_complex_round_trip() {
        let f = RealField::from_fn(3, 5, |r, c| (r as f64 - 1.5) * 1e-3 + c as f64 * 7.25);
        let mut buf = Vec::new();
        write_real(&mut buf, &f).unwrap();
        assert_eq!(buf.len(), 13 + 15 * 8);
        assert_eq!(&buf[..4], b"SSF1");
        assert_eq!(read_grid(&buf[..]).unwrap(), Grid::Real(f));

        let z = ComplexField::from_fn(2, 2, |r, c| Complex64::new(r as f64, -(c as f64)));
        let mut buf = Vec::new();
        write_complex(&mut buf, &z).unwrap();
        assert_eq!(buf[12], DTYPE_COMPLEX);
        assert_eq!(read_grid(&buf[..]).unwrap(), Grid::Complex(z));
    }

    #[test]
    fn malformed_files_rejected() {
        assert!(matches!(read_grid(&b"SSF"[..]), Err(Error::Format(_))));
        let mut buf = Vec::new();
        write_real(&mut buf, &RealField::zeros(2, 2)).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_grid(&bad[..]), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[12] = 9;
        assert!(matches!(read_grid(&bad[..]), Err(Error::Format(_))));
        buf.pop();
        assert!(matches!(read_grid(&buf[..]), Err(Error::Format(_))));
    }

    #[test]
    fn png_round_trip_is_rescaled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.png");
        let f = RealField::from_fn(4, 6, |r, c| (r * 6 + c) as f64 * 2.0 - 10.0);
        save_png(&p, &f).unwrap();
        let g = load_field(&p).unwrap();
        assert_eq!(g.shape(), (4, 6));
        assert_eq!(g.min(), 0.0);
        assert_eq!(g.max(), 1.0);
        let grid = dir.path().join("f.ssf");
        save_real(&grid, &f).unwrap();
        assert_eq!(load_field(&grid).unwrap(), f);
    }
}
