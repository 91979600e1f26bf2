//! Binary PPM (P6) images with 8- or 16-bit samples. Sixteen-bit samples are
//! big-endian as the Netpbm format requires.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Real;
use crate::scene::Image;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PpmDepth {
    #[default]
    Eight,
    Sixteen,
}

impl PpmDepth {
    fn maxval(self) -> u32 {
        match self {
            PpmDepth::Eight => 255,
            PpmDepth::Sixteen => 65535,
        }
    }
}

/// Encodes an image; values are clamped to `[0, 1]` and rounded to the
/// nearest level.
pub fn encode_ppm<T: Real>(image: &Image<T>, depth: PpmDepth) -> Vec<u8> {
    let maxval = depth.maxval();
    let mut out = format!("P6\n{} {}\n{}\n", image.width(), image.height(), maxval).into_bytes();
    let m = maxval as f64;
    for v in image.data() {
        let q = (v.as_f64().clamp(0.0, 1.0) * m).round() as u32;
        match depth {
            PpmDepth::Eight => out.push(q as u8),
            PpmDepth::Sixteen => out.extend_from_slice(&(q as u16).to_be_bytes()),
        }
    }
    out
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(start as u64, format!("expected {what}")))
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image<f64>> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::format(0, "missing PPM magic"));
    }
    match bytes[1] {
        b'6' => {}
        b'3' => return Err(Error::UnsupportedVariant("ASCII PPM (P3); only binary P6 is supported".into())),
        other => {
            return Err(Error::UnsupportedVariant(format!("Netpbm variant P{}", other as char)));
        }
    }
    let mut r = HeaderReader { bytes, pos: 2 };
    let width = r.number("width")? as usize;
    let height = r.number("height")? as usize;
    let maxval_at = r.pos;
    let maxval = r.number("maxval")?;
    let depth = match maxval {
        255 => PpmDepth::Eight,
        65535 => PpmDepth::Sixteen,
        _ => return Err(Error::UnsupportedVariant(format!("maxval {maxval} (expected 255 or 65535)"))),
    };
    if width == 0 || height == 0 {
        return Err(Error::format(2, "image dimensions must be positive"));
    }
    if r.pos >= bytes.len() || !bytes[r.pos].is_ascii_whitespace() {
        return Err(Error::format(r.pos as u64, "expected whitespace after maxval"));
    }
    let start = r.pos + 1;
    let sample = if depth == PpmDepth::Eight { 1 } else { 2 };
    let expected = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(3 * sample))
        .ok_or_else(|| Error::format(maxval_at as u64, "image too large"))?;
    let body = &bytes[start..];
    if body.len() != expected {
        return Err(Error::format(
            start as u64,
            format!("pixel data: expected {expected} bytes, found {}", body.len()),
        ));
    }
    let m = maxval as f64;
    let data = match depth {
        PpmDepth::Eight => body.iter().map(|b| *b as f64 / m).collect(),
        PpmDepth::Sixteen => body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / m).collect(),
    };
    Image::new(width, height, data)
}

pub fn write_image<T: Real>(path: impl AsRef<Path>, image: &Image<T>, depth: PpmDepth) -> Result<()> {
    std::fs::write(path, encode_ppm(image, depth))?;
    Ok(())
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image<f64>> {
    decode_ppm(&std::fs::read(path)?)
}
