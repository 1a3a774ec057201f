use std::fs;
use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

pub type Rgb = [u8; 3];

/// Row-major 8-bit RGB image.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    pub w: usize,
    pub h: usize,
    pub pixels: Vec<u8>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Image({}x{})", self.w, self.h)
    }
}

pub fn luminance([r, g, b]: Rgb) -> f64 {
    0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64
}

impl Image {
    pub fn new(w: usize, h: usize) -> Self {
        Self::filled(w, h, [0, 0, 0])
    }

    pub fn filled(w: usize, h: usize, c: Rgb) -> Self {
        let mut pixels = Vec::with_capacity(3 * w * h);
        for _ in 0..w * h {
            pixels.extend_from_slice(&c);
        }
        Self { w, h, pixels }
    }

    pub fn from_raw(w: usize, h: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != 3 * w * h {
            return Err(Error::Image(format!("{} bytes for a {w}x{h} RGB image", pixels.len())));
        }
        Ok(Self { w, h, pixels })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        let i = 3 * (y * self.w + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, c: Rgb) {
        let i = 3 * (y * self.w + x);
        self.pixels[i..i + 3].copy_from_slice(&c);
    }

    pub fn row(&self, y: usize) -> &[u8] {
        &self.pixels[3 * y * self.w..3 * (y + 1) * self.w]
    }

    pub fn mean_luminance(&self) -> f64 {
        if self.w * self.h == 0 {
            return 0.0;
        }
        let sum: f64 = self.pixels.chunks_exact(3).map(|p| luminance([p[0], p[1], p[2]])).sum();
        sum / (self.w * self.h) as f64
    }

    /// Applies `f` to every channel value.
    pub fn map_channels(&self, f: impl Fn(u8) -> u8) -> Image {
        Image {
            w: self.w,
            h: self.h,
            pixels: self.pixels.iter().map(|&c| f(c)).collect(),
        }
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.w, self.h).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut fields = [0usize; 3];
        let magic = next_token(bytes, &mut pos).ok_or_else(|| Error::Image("empty PPM".into()))?;
        if magic != b"P6" {
            return Err(Error::Image("not a binary PPM (P6)".into()));
        }
        for f in fields.iter_mut() {
            let tok = next_token(bytes, &mut pos).ok_or_else(|| Error::Image("truncated PPM header".into()))?;
            *f = std::str::from_utf8(tok)
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Image("malformed PPM header".into()))?;
        }
        let [w, h, maxval] = fields;
        if maxval != 255 {
            return Err(Error::Image(format!("unsupported PPM maxval {maxval}")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let need = 3 * w * h;
        if bytes.len() < pos + need {
            return Err(Error::Image(format!("PPM raster truncated: {} of {need} bytes", bytes.len().saturating_sub(pos))));
        }
        Self::from_raw(w, h, bytes[pos..pos + need].to_vec())
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_ppm()).map_err(|e| Error::io(path, e))
    }

    pub fn read_ppm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_ppm(&bytes)
    }
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_is_bit_exact() {
        let mut img = Image::new(7, 3);
        for (i, p) in img.pixels.iter_mut().enumerate() {
            *p = (i * 37 % 256) as u8;
        }
        let bytes = img.to_ppm();
        assert!(bytes.starts_with(b"P6\n7 3\n255\n"));
        assert_eq!(Image::from_ppm(&bytes).unwrap(), img);
    }

    #[test]
    fn ppm_with_comment_header() {
        let mut bytes = b"P6 # c\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let img = Image::from_ppm(&bytes).unwrap();
        assert_eq!(img.get(1, 0), [4, 5, 6]);
    }

    #[test]
    fn truncated_ppm_is_an_error() {
        let mut bytes = Image::new(4, 4).to_ppm();
        bytes.truncate(bytes.len() - 1);
        assert!(Image::from_ppm(&bytes).is_err());
        assert!(Image::from_ppm(b"P3\n1 1\n255\n000").is_err());
    }
}
