//! RGB image planes in [0,1] and binary PPM/PGM I/O.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An H×W×3 image, row-major HWC, with every value in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl ImagePlane {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self, ImageError> {
        if pixels.len() != height * width * 3 {
            return Err(ImageError::Format(format!(
                "pixel buffer length {} does not match {height}x{width}x3",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ImageError::Format(format!(
                "pixel value {bad} outside [0,1]"
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self::new(height, width, vec![value; height * width * 3]).expect("constant in range")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.pixels[(y * self.width + x) * 3 + c] = v.clamp(0.0, 1.0);
    }

    /// Raw mutable access; the caller keeps values in range.
    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }
}

/// Writes binary P6 with maxval 255; values quantize as round(v * 255).
pub fn write_ppm(path: &Path, img: &ImagePlane) -> Result<(), ImageError> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P6\n{} {}\n255\n", img.width(), img.height())?;
    let bytes: Vec<u8> = img
        .pixels()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Reads binary P6 with maxval 255; conversion to f64 divides by 255.
pub fn read_ppm(path: &Path) -> Result<ImagePlane, ImageError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let (magic, rest) = next_token(&buf, 0)?;
    if magic != b"P6" {
        return Err(ImageError::Format(format!(
            "expected P6 magic, got {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let (w_tok, rest) = next_token(&buf, rest)?;
    let (h_tok, rest) = next_token(&buf, rest)?;
    let (max_tok, mut pos) = next_token(&buf, rest)?;
    let width: usize = parse_dim(w_tok)?;
    let height: usize = parse_dim(h_tok)?;
    if max_tok != b"255" {
        return Err(ImageError::Format(format!(
            "only maxval 255 is supported, got {:?}",
            String::from_utf8_lossy(max_tok)
        )));
    }
    // single whitespace byte after maxval
    pos += 1;
    let need = width * height * 3;
    if buf.len() < pos + need {
        return Err(ImageError::Format(format!(
            "truncated pixel data: need {need} bytes, have {}",
            buf.len().saturating_sub(pos)
        )));
    }
    let pixels = buf[pos..pos + need]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    ImagePlane::new(height, width, pixels)
}

/// Writes an 8-bit binary P5 heatmap with linear scaling (max maps to 255).
pub fn write_pgm_heatmap(
    path: &Path,
    values: &[f64],
    width: usize,
    height: usize,
) -> Result<(), ImageError> {
    if values.len() != width * height {
        return Err(ImageError::Format(format!(
            "heatmap length {} does not match {width}x{height}",
            values.len()
        )));
    }
    let max = values.iter().cloned().fold(0.0f64, f64::max);
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = values
        .iter()
        .map(|&v| {
            if max > 0.0 {
                ((v / max) * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

fn next_token(buf: &[u8], mut pos: usize) -> Result<(&[u8], usize), ImageError> {
    while pos < buf.len() && buf[pos].is_ascii_whitespace() {
        pos += 1;
    }
    let start = pos;
    while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
        pos += 1;
    }
    if start == pos {
        return Err(ImageError::Format("unexpected end of header".into()));
    }
    Ok((&buf[start..pos], pos))
}

fn parse_dim(tok: &[u8]) -> Result<usize, ImageError> {
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| {
            ImageError::Format(format!(
                "bad dimension token {:?}",
                String::from_utf8_lossy(tok)
            ))
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_quantization_roundtrips_exactly() {
        // every byte value survives byte -> f64 -> byte
        for b in 0..=255u16 {
            let v = f64::from(b) / 255.0;
            let back = (v * 255.0).round() as u16;
            assert_eq!(b, back);
        }
    }

    #[test]
    fn ppm_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let mut img = ImagePlane::filled(4, 6, 0.0);
        for y in 0..4 {
            for x in 0..6 {
                for c in 0..3 {
                    img.set(y, x, c, ((y * 6 + x) * 3 + c) as f64 / 255.0);
                }
            }
        }
        write_ppm(&path, &img).unwrap();
        let back = read_ppm(&path).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(ImagePlane::new(1, 1, vec![0.0, 0.5, 1.1]).is_err());
        assert!(ImagePlane::new(1, 1, vec![0.0, 0.5]).is_err());
    }

    #[test]
    fn pgm_scales_max_to_255() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.pgm");
        write_pgm_heatmap(&path, &[0.0, 0.25, 0.5], 3, 1).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let tail = &bytes[bytes.len() - 3..];
        assert_eq!(tail, &[0u8, 128, 255]);
    }
}
