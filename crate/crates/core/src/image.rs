//! RGB images in `[0, 1]` and binary PPM (P6) I/O.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{Real, Shape, Tensor};

/// Interleaved RGB image, row-major, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions {height}x{width} must be at least 1x1"
            )));
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::InvalidArgument(format!(
                "{height}x{width} RGB image needs {} values, got {}",
                height * width * 3,
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(Image {
            height,
            width,
            pixels,
        })
    }

    /// Image filled with one colour.
    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(height * width * 3)
            .collect();
        Image::new(height, width, pixels)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend(f(y, x).iter().map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Image::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Mean of each channel.
    pub fn channel_means(&self) -> [f64; 3] {
        let mut sums = [0.0f64; 3];
        for px in self.pixels.chunks_exact(3) {
            for c in 0..3 {
                sums[c] += px[c] as f64;
            }
        }
        let n = (self.height * self.width) as f64;
        sums.map(|s| s / n)
    }

    /// Applies `f(channel, value)` to every sample.
    pub fn map_channels(&self, f: impl Fn(usize, f32) -> f32) -> Image {
        let pixels = self
            .pixels
            .iter()
            .enumerate()
            .map(|(i, &v)| f(i % 3, v))
            .collect();
        Image {
            height: self.height,
            width: self.width,
            pixels,
        }
    }

    /// `(1, 3, H, W)` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_fn(Shape::new(1, 3, self.height, self.width), |_, c, y, x| {
            T::lit(self.pixels[(y * self.width + x) * 3 + c] as f64)
        })
    }

    /// Inverse of [`Image::to_tensor`]; values are clamped into `[0, 1]`.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Image> {
        let s = t.shape();
        if s.n() != 1 || s.c() != 3 {
            return Err(Error::InvalidArgument(format!(
                "expected a (1,3,H,W) tensor, got {s}"
            )));
        }
        let mut pixels = Vec::with_capacity(s.numel());
        for y in 0..s.h() {
            for x in 0..s.w() {
                for c in 0..3 {
                    let v = t.at(0, c, y, x).as_f64() as f32;
                    if !v.is_finite() {
                        return Err(Error::NonFinite("image tensor".into()));
                    }
                    pixels.push(v.clamp(0.0, 1.0));
                }
            }
        }
        Image::new(s.h(), s.w(), pixels)
    }

    /// Records the image on a graph as a constant.
    pub fn constant<T: Real>(&self, g: &mut Graph<T>) -> Var {
        g.constant(self.to_tensor())
    }

    /// 8-bit quantization used by PPM: `round(v · 255) / 255`.
    pub fn quantized(&self) -> Image {
        self.map_channels(|_, v| quantize(v) as f32 / 255.0)
    }

    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().map(|&v| quantize(v)));
        out
    }

    pub fn from_ppm_bytes(bytes: &[u8], path: &Path) -> Result<Image> {
        let mut cursor = PpmCursor {
            bytes,
            pos: 0,
            path,
        };
        let magic = cursor.token()?;
        if magic != "P6" {
            return Err(Error::UnsupportedFormat {
                path: path.into(),
                magic,
            });
        }
        let width = cursor.number("width")?;
        let height = cursor.number("height")?;
        let maxval = cursor.number("maxval")?;
        if maxval != 255 {
            return Err(Error::UnsupportedMaxval {
                path: path.into(),
                maxval,
            });
        }
        if width == 0 || height == 0 {
            return Err(cursor.malformed("zero image dimension"));
        }
        // Exactly one whitespace byte separates the header from the raster.
        if !cursor.peek().is_some_and(|b| b.is_ascii_whitespace()) {
            return Err(cursor.malformed("missing whitespace after maxval"));
        }
        cursor.pos += 1;
        let expected = (width as usize)
            .checked_mul(height as usize)
            .and_then(|n| n.checked_mul(3))
            .ok_or_else(|| cursor.malformed("dimensions overflow"))?;
        let raster = &bytes[cursor.pos..];
        if raster.len() < expected {
            return Err(Error::Truncated {
                path: path.into(),
                expected,
                found: raster.len(),
            });
        }
        let pixels = raster[..expected]
            .iter()
            .map(|&b| b as f32 / 255.0)
            .collect();
        Image::new(height as usize, width as usize, pixels)
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

struct PpmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl PpmCursor<'_> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn malformed(&self, reason: &str) -> Error {
        Error::MalformedHeader {
            path: self.path.into(),
            reason: reason.into(),
        }
    }

    /// Next whitespace-delimited header token, skipping `#` comments.
    fn token(&mut self) -> Result<String> {
        loop {
            match self.peek() {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while self.peek().is_some_and(|b| b != b'\n') {
                        self.pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(self.malformed("unexpected end of header")),
            }
        }
        let start = self.pos;
        while self.peek().is_some_and(|b| !b.is_ascii_whitespace()) && self.pos - start < 16 {
            self.pos += 1;
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| self.malformed(&format!("invalid {what} {tok:?}")))
    }
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Image::from_ppm_bytes(&bytes, path)
}

pub fn write_ppm(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, image.to_ppm_bytes()).map_err(|e| Error::io(path, e))
}
