//! Binary PGM (P5) and PPM (P6) images, 8-bit samples only.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::InvalidConfig(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(GrayImage { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage { width, height, pixels: vec![value; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved R, G, B.
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Luma `0.299 R + 0.587 G + 0.114 B`, rounded.
    pub fn to_gray(&self) -> GrayImage {
        let pixels = self.pixels.chunks_exact(3).map(|p| luma(p[0], p[1], p[2])).collect();
        GrayImage { width: self.width, height: self.height, pixels }
    }
}

pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64).round().clamp(0.0, 255.0) as u8
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Image {
    Gray(GrayImage),
    Rgb(RgbImage),
}

impl Image {
    pub fn to_gray(&self) -> GrayImage {
        match self {
            Image::Gray(g) => g.clone(),
            Image::Rgb(c) => c.to_gray(),
        }
    }

    pub fn width(&self) -> usize {
        match self {
            Image::Gray(g) => g.width,
            Image::Rgb(c) => c.width,
        }
    }

    pub fn height(&self) -> usize {
        match self {
            Image::Gray(g) => g.height,
            Image::Rgb(c) => c.height,
        }
    }
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::ImageFormat { offset, msg: msg.into() }
}

fn skip_space_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    while pos < bytes.len() {
        if bytes[pos].is_ascii_whitespace() {
            pos += 1;
        } else if bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' && bytes[pos] != b'\r' {
                pos += 1;
            }
        } else {
            break;
        }
    }
    pos
}

fn header_int(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    *pos = skip_space_and_comments(bytes, *pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(format_err(start, format!("expected {what}")));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&v| v <= u32::MAX as usize)
        .ok_or_else(|| format_err(start, format!("{what} out of range")))
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 || bytes[0] != b'P' || !(bytes[1] == b'5' || bytes[1] == b'6') {
        return Err(format_err(0, "expected magic P5 or P6"));
    }
    let mut pos = 2;
    let width = header_int(bytes, &mut pos, "width")?;
    let height = header_int(bytes, &mut pos, "height")?;
    let maxval_at = skip_space_and_comments(bytes, pos);
    let maxval = header_int(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(format_err(2, "zero image dimension"));
    }
    if !(1..=255).contains(&maxval) {
        return Err(format_err(maxval_at, format!("maxval {maxval} not in 1..=255")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(format_err(pos, "expected single whitespace before raster")),
    }
    Ok(Header { magic: [bytes[0], bytes[1]], width, height, maxval, data_start: pos })
}

fn raster(bytes: &[u8], h: &Header, channels: usize) -> Result<Vec<u8>> {
    let need = h
        .width
        .checked_mul(h.height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| format_err(2, "image dimensions overflow"))?;
    let have = bytes.len() - h.data_start;
    if have < need {
        return Err(format_err(bytes.len(), format!("raster truncated: {have} of {need} bytes")));
    }
    let data = &bytes[h.data_start..h.data_start + need];
    if h.maxval == 255 {
        return Ok(data.to_vec());
    }
    data.iter()
        .enumerate()
        .map(|(i, &v)| {
            if v as usize > h.maxval {
                Err(format_err(h.data_start + i, format!("sample {v} exceeds maxval {}", h.maxval)))
            } else {
                Ok(((v as usize * 255 + h.maxval / 2) / h.maxval) as u8)
            }
        })
        .collect()
}

/// Parse a P5 or P6 image. Samples below maxval 255 are rescaled to 0..=255.
pub fn parse(bytes: &[u8]) -> Result<Image> {
    let h = parse_header(bytes)?;
    if h.magic[1] == b'5' {
        let pixels = raster(bytes, &h, 1)?;
        Ok(Image::Gray(GrayImage { width: h.width, height: h.height, pixels }))
    } else {
        let pixels = raster(bytes, &h, 3)?;
        Ok(Image::Rgb(RgbImage { width: h.width, height: h.height, pixels }))
    }
}

pub fn read(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse(&bytes)
}

pub fn write_pgm(img: &GrayImage, mut out: impl Write) -> std::io::Result<()> {
    write!(out, "P5\n{} {}\n255\n", img.width, img.height)?;
    out.write_all(&img.pixels)
}

pub fn write_ppm(img: &RgbImage, mut out: impl Write) -> std::io::Result<()> {
    write!(out, "P6\n{} {}\n255\n", img.width, img.height)?;
    out.write_all(&img.pixels)
}
