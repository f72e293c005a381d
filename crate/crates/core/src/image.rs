//! Grayscale slices and the binary PGM (P5) raster format.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// One grayscale slice, row-major, intensities on the 0..=255 scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

/// Round half-up to the nearest integer level and clamp to 0..=255.
pub fn quantize(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid("image", format!("{}x{} needs {} pixels, got {}", width, height, width * height, data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_u8(width: usize, height: usize, pixels: &[u8]) -> Result<Self> {
        Self::from_vec(width, height, pixels.iter().map(|&p| p as f32).collect())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Half-up rounded 8-bit pixels.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v as f64)).collect()
    }

    pub fn quantized(&self) -> Image {
        Image { width: self.width, height: self.height, data: self.to_u8().into_iter().map(f32::from).collect() }
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        let raster = read_pgm(path)?;
        Ok(Self { width: raster.width, height: raster.height, data: raster.samples.iter().map(|&v| v as f32).collect() })
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        write_pgm8(path, self.width, self.height, &self.to_u8())
    }

    /// Horizontal concatenation, used for sample grids.
    pub fn hstack(images: &[&Image]) -> Result<Image> {
        let height = images.first().ok_or(Error::Empty("image list"))?.height;
        if images.iter().any(|i| i.height != height) {
            return Err(Error::invalid("image list", "heights differ"));
        }
        let width = images.iter().map(|i| i.width).sum();
        let mut out = Image::new(width, height);
        for y in 0..height {
            let mut x0 = 0;
            for img in images {
                out.data[y * width + x0..y * width + x0 + img.width].copy_from_slice(&img.data[y * img.width..(y + 1) * img.width]);
                x0 += img.width;
            }
        }
        Ok(out)
    }
}

/// Decoded PGM samples (8- or 16-bit).
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

fn header_tokens(bytes: &[u8], count: usize) -> Option<(Vec<usize>, usize)> {
    let mut pos = 2;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return None;
        }
        out.push(std::str::from_utf8(&bytes[start..pos]).ok()?.parse().ok()?);
    }
    // exactly one whitespace byte separates the header from the samples
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return None;
    }
    Some((out, pos + 1))
}

pub fn read_pgm(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::Pgm { path: path.to_path_buf(), reason: reason.to_string() };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(bad("missing P5 magic"));
    }
    let (tokens, offset) = header_tokens(&bytes, 3).ok_or_else(|| bad("bad header"))?;
    let (width, height, maxval) = (tokens[0], tokens[1], tokens[2]);
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(bad("bad dimensions or maxval"));
    }
    let wide = maxval > 255;
    let need = width * height * if wide { 2 } else { 1 };
    let body = &bytes[offset..];
    if body.len() < need {
        return Err(bad("truncated pixel data"));
    }
    let samples = if wide {
        body[..need].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        body[..need].iter().map(|&b| b as u16).collect()
    };
    Ok(Raster { width, height, maxval: maxval as u16, samples })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_pgm8(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    assert_eq!(pixels.len(), width * height);
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    write_file(path, &bytes)
}

pub fn write_pgm16(path: &Path, width: usize, height: usize, samples: &[u16]) -> Result<()> {
    assert_eq!(samples.len(), width * height);
    let mut bytes = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for s in samples {
        bytes.extend_from_slice(&s.to_be_bytes());
    }
    write_file(path, &bytes)
}
