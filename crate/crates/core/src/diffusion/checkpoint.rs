//! Little-endian checkpoint format.
//!
//! ```text
//! offset  type      field
//! 0       [u8; 4]   magic "DFA1"
//! 4       u32       format version (1)
//! 8       u32       T (timestep count)
//! 12      f64       beta_min
//! 20      f64       beta_max
//! 28      u32 × 5   height, width, channels, embed_dim, hidden
//! 48      f64 × P   w1, b1, w2, b2, w3, b3, each row-major
//! ```
//!
//! `w1` is `(H·W·C + embed_dim) × hidden`, `w2` is `hidden × hidden`, `w3`
//! is `hidden × H·W·C`. The file must end exactly after the last parameter.

use std::path::Path;

use super::denoiser::{Denoiser, DenoiserDims, Layers};
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::image::Shape;

pub const MAGIC: &[u8; 4] = b"DFA1";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 48;

pub fn encode(model: &Denoiser, sched: &NoiseSchedule) -> Vec<u8> {
    let dims = model.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * dims.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(sched.timesteps() as u32).to_le_bytes());
    out.extend_from_slice(&sched.beta_min().to_le_bytes());
    out.extend_from_slice(&sched.beta_max().to_le_bytes());
    for v in [
        dims.image.height,
        dims.image.width,
        dims.image.channels,
        dims.embed_dim,
        dims.hidden,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for tensor in model.layers().tensors() {
        for v in tensor {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> std::result::Result<(Denoiser, NoiseSchedule), String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!("file is {} bytes, shorter than the header", bytes.len()));
    }
    if &bytes[..4] != MAGIC {
        return Err("bad magic, expected DFA1".into());
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != FORMAT_VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    let sched = NoiseSchedule::linear(u32_at(8) as usize, f64_at(12), f64_at(20))
        .map_err(|e| e.to_string())?;
    let dim = |i: usize| u32_at(28 + 4 * i) as usize;
    let dims = DenoiserDims::new(Shape::new(dim(0), dim(1), dim(2)), dim(3), dim(4))
        .map_err(|e| e.to_string())?;
    let expected = HEADER_LEN + 8 * dims.param_count();
    if bytes.len() != expected {
        return Err(format!(
            "file is {} bytes, expected {expected} for {dims:?}",
            bytes.len()
        ));
    }
    let mut layers = Layers::zeros(&dims);
    let mut offset = HEADER_LEN;
    for tensor in layers.tensors_mut() {
        for v in tensor.iter_mut() {
            *v = f64_at(offset);
            offset += 8;
        }
    }
    if !layers.is_finite() {
        return Err("checkpoint contains non-finite parameters".into());
    }
    let model = Denoiser::from_layers(dims, &sched, layers).map_err(|e| e.to_string())?;
    Ok((model, sched))
}

pub fn save(path: &Path, model: &Denoiser, sched: &NoiseSchedule) -> Result<()> {
    std::fs::write(path, encode(model, sched)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(Denoiser, NoiseSchedule)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|msg| Error::parse(path, msg))
}
