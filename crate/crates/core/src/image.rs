//! Real-valued images on a pixel lattice, row-major.

use std::io::{Read, Write};

use crate::binio;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    n1: usize,
    n2: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(n1: usize, n2: usize, data: Vec<f64>) -> Result<Self> {
        if n1 == 0 || n2 == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if data.len() != n1 * n2 {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {n1}x{n2} image",
                data.len()
            )));
        }
        Ok(Self { n1, n2, data })
    }

    pub fn zeros(n1: usize, n2: usize) -> Self {
        Self {
            n1,
            n2,
            data: vec![0.0; n1 * n2],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n2 + j]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Self {
            data: self.data.iter().map(|&x| f(x)).collect(),
            ..*self
        }
    }

    pub(crate) fn ensure_same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{} images",
                self.n1, self.n2, other.n1, other.n2
            )));
        }
        Ok(())
    }

    /// SPC1 with zero imaginary parts.
    pub fn write_spc1<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_magic(w, b"SPC1")?;
        binio::write_u32(w, binio::dim_to_u32(self.n1, "n1")?)?;
        binio::write_u32(w, binio::dim_to_u32(self.n2, "n2")?)?;
        let mut buf = Vec::with_capacity(16 * self.data.len());
        for x in &self.data {
            buf.extend_from_slice(&x.to_le_bytes());
            buf.extend_from_slice(&0f64.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Reads SPC1 and keeps the real parts.
    pub fn read_spc1<R: Read>(r: &mut R) -> Result<Self> {
        const F: &str = "SPC1";
        binio::read_magic(r, b"SPC1", F)?;
        let n1 = binio::read_u32(r, F)? as usize;
        let n2 = binio::read_u32(r, F)? as usize;
        let count = n1
            .checked_mul(n2)
            .ok_or_else(|| Error::format(F, format!("{n1}x{n2} overflows")))?;
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            data.push(binio::read_f64(r, F)?);
            binio::read_f64(r, F)?;
        }
        Self::new(n1, n2, data).map_err(|e| Error::format(F, e.to_string()))
    }

    /// 8-bit grayscale PNG after min-max normalization. A constant image is black.
    pub fn write_png<W: Write>(&self, w: W) -> Result<()> {
        let (lo, hi) = self
            .data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let span = hi - lo;
        let pixels: Vec<u8> = self
            .data
            .iter()
            .map(|&x| {
                if span > 0.0 && span.is_finite() {
                    ((x - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
                } else {
                    0
                }
            })
            .collect();
        let width = binio::dim_to_u32(self.n2, "width")?;
        let height = binio::dim_to_u32(self.n1, "height")?;
        let mut enc = png::Encoder::new(w, width, height);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Io(std::io::Error::other(e)))?;
        writer
            .write_image_data(&pixels)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        writer.finish().map_err(|e| Error::Io(std::io::Error::other(e)))?;
        Ok(())
    }
}
