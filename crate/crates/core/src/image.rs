//! Dense `H×W×C` images and portable-pixmap I/O.
//!
//! Pixels are stored row-major with interleaved channels. Intensities of
//! source images lie in `[0, 1]`; diffusion arithmetic may push values
//! outside that range and nothing here clamps except [`Image::to_pnm_bytes`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn pixels(&self) -> usize {
        self.height * self.width
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    shape: Shape,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(shape: Shape, pixels: Vec<f64>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::InvalidRange(format!("image shape {shape} is empty")));
        }
        if pixels.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values for {shape}", shape.len()),
                found: format!("{} values", pixels.len()),
            });
        }
        Ok(Self { shape, pixels })
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            pixels: vec![value; shape.len()],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.shape.width + x) * self.shape.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = self.index(y, x, c);
        self.pixels[i] = v;
    }

    pub fn ensure_same_shape(&self, other: &Image) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.to_string(),
                found: other.shape.to_string(),
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.pixels.iter().all(|v| v.is_finite())
    }

    /// Euclidean distance over all pixels.
    pub fn l2_distance(&self, other: &Image) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    pub fn rmse(&self, other: &Image) -> Result<f64> {
        Ok(self.l2_distance(other)? / (self.len() as f64).sqrt())
    }

    pub fn mean_abs_diff(&self, other: &Image) -> Result<f64> {
        self.ensure_same_shape(other)?;
        let sum: f64 = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(sum / self.len() as f64)
    }

    pub fn clamped(&self) -> Image {
        Image {
            shape: self.shape,
            pixels: self.pixels.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    /// Encodes as binary P5 (one channel) or P6 (three channels), maxval 255.
    /// Values are clamped to `[0, 1]` and rounded to the nearest level.
    pub fn to_pnm_bytes(&self) -> Result<Vec<u8>> {
        let magic = match self.shape.channels {
            1 => "P5",
            3 => "P6",
            c => {
                return Err(Error::Validation(format!(
                    "portable pixmap export supports 1 or 3 channels, got {c}"
                )))
            }
        };
        let mut out = format!("{magic}\n{} {}\n255\n", self.shape.width, self.shape.height)
            .into_bytes();
        out.extend(
            self.pixels
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
        Ok(out)
    }

    pub fn save_pnm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_pnm_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load_pnm(path: &Path) -> Result<Image> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Image::from_pnm_bytes(&bytes).map_err(|msg| Error::parse(path, msg))
    }

    /// Decodes binary P5/P6 data (8- or 16-bit) into `[0, 1]` intensities.
    pub fn from_pnm_bytes(bytes: &[u8]) -> std::result::Result<Image, String> {
        let mut cursor = 0usize;
        let magic = next_token(bytes, &mut cursor).ok_or("missing magic number")?;
        let channels = match magic.as_str() {
            "P5" => 1,
            "P6" => 3,
            other => return Err(format!("unsupported magic `{other}`, expected P5 or P6")),
        };
        let mut header = [0usize; 3];
        for (slot, name) in header.iter_mut().zip(["width", "height", "maxval"]) {
            let tok = next_token(bytes, &mut cursor).ok_or(format!("missing {name}"))?;
            *slot = tok.parse().map_err(|_| format!("bad {name} `{tok}`"))?;
        }
        let [width, height, maxval] = header;
        if width == 0 || height == 0 {
            return Err("zero-sized image".into());
        }
        if maxval == 0 || maxval > 65535 {
            return Err(format!("maxval {maxval} out of range"));
        }
        // Exactly one whitespace byte separates the header from the raster.
        cursor += 1;
        let shape = Shape::new(height, width, channels);
        let sample_bytes = if maxval < 256 { 1 } else { 2 };
        let need = shape.len() * sample_bytes;
        let raster = bytes
            .get(cursor..cursor + need)
            .ok_or(format!("raster truncated: need {need} bytes"))?;
        let scale = maxval as f64;
        let pixels = if sample_bytes == 1 {
            raster.iter().map(|&b| b as f64 / scale).collect()
        } else {
            raster
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale)
                .collect()
        };
        Ok(Image { shape, pixels })
    }
}

fn next_token(bytes: &[u8], cursor: &mut usize) -> Option<String> {
    loop {
        while *cursor < bytes.len() && bytes[*cursor].is_ascii_whitespace() {
            *cursor += 1;
        }
        if *cursor < bytes.len() && bytes[*cursor] == b'#' {
            while *cursor < bytes.len() && bytes[*cursor] != b'\n' {
                *cursor += 1;
            }
            continue;
        }
        break;
    }
    let start = *cursor;
    while *cursor < bytes.len() && !bytes[*cursor].is_ascii_whitespace() {
        *cursor += 1;
    }
    (start < *cursor).then(|| String::from_utf8_lossy(&bytes[start..*cursor]).into_owned())
}
