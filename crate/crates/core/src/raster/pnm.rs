//! Binary netpbm: P5 (grayscale) and P6 (RGB), maxval 255.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::RasterImage;

#[derive(Debug, Error)]
pub enum PnmError {
    #[error("i/o failure: {0}")]
    IoFailure(#[from] io::Error),
    #[error("unexpected magic {0:?}")]
    BadMagic(String),
    #[error("bad header: {0}")]
    BadHeader(&'static str),
}

/// Row-major interleaved RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn from_gray(img: &RasterImage) -> Self {
        Self { width: img.width, height: img.height, pixels: img.pixels.iter().flat_map(|&v| [v, v, v]).collect() }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

fn encode(magic: &str, width: usize, height: usize, data: &[u8]) -> Vec<u8> {
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    out
}

pub fn write_pgm(image: &RasterImage, path: impl AsRef<Path>) -> Result<(), PnmError> {
    fs::write(path, encode("P5", image.width, image.height, &image.pixels))?;
    Ok(())
}

pub fn write_ppm(image: &RgbImage, path: impl AsRef<Path>) -> Result<(), PnmError> {
    fs::write(path, encode("P6", image.width, image.height, &image.pixels))?;
    Ok(())
}

struct Header {
    width: usize,
    height: usize,
    data_start: usize,
}

/// Parses magic, width, height and maxval, honoring `#` comments.
fn parse_header(bytes: &[u8], magic: &str) -> Result<Header, PnmError> {
    if bytes.len() < 2 {
        return Err(PnmError::BadMagic(String::from_utf8_lossy(bytes).into_owned()));
    }
    if &bytes[..2] != magic.as_bytes() {
        return Err(PnmError::BadMagic(String::from_utf8_lossy(&bytes[..2]).into_owned()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(PnmError::BadHeader("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(PnmError::BadHeader("expected a decimal number"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(PnmError::BadHeader("number out of range"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(PnmError::BadHeader("missing whitespace after maxval"));
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(PnmError::BadHeader("only maxval 255 is supported"));
    }
    if width == 0 || height == 0 {
        return Err(PnmError::BadHeader("zero image dimension"));
    }
    Ok(Header { width, height, data_start: pos + 1 })
}

pub fn decode_pgm(bytes: &[u8]) -> Result<RasterImage, PnmError> {
    let h = parse_header(bytes, "P5")?;
    let n = h.width * h.height;
    let data = bytes.get(h.data_start..h.data_start + n).ok_or(PnmError::BadHeader("pixel data truncated"))?;
    Ok(RasterImage { width: h.width, height: h.height, pixels: data.to_vec() })
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<RasterImage, PnmError> {
    decode_pgm(&fs::read(path)?)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<RgbImage, PnmError> {
    let bytes = fs::read(path)?;
    let h = parse_header(&bytes, "P6")?;
    let n = 3 * h.width * h.height;
    let data = bytes.get(h.data_start..h.data_start + n).ok_or(PnmError::BadHeader("pixel data truncated"))?;
    Ok(RgbImage { width: h.width, height: h.height, pixels: data.to_vec() })
}
