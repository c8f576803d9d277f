//! Portable float map (PFM) reading and writing.
//!
//! Layout: an ASCII header of three whitespace-separated fields, then raw
//! 32-bit floats.
//!
//! ```text
//! Pf            grayscale ("PF" for three channels)
//! <w> <h>
//! <scale>       negative: little-endian samples, positive: big-endian;
//!               the magnitude is an unused scale factor
//! <w*h*c float32 samples, rows stored bottom-to-top>
//! ```
//!
//! A single whitespace byte separates the scale field from the samples.

use std::path::Path;

use crate::depth_eval::DepthFrame;
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Decoded float map. `data` is row-major from the top row, channels
/// interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

pub fn encode(width: usize, height: usize, channels: usize, data: &[f32]) -> Result<Vec<u8>> {
    if channels != 1 && channels != 3 {
        return Err(Error::invalid("PFM supports 1 or 3 channels"));
    }
    if data.len() != width * height * channels {
        return Err(Error::invalid("PFM data length does not match dimensions"));
    }
    let tag = if channels == 1 { "Pf" } else { "PF" };
    let mut out = format!("{tag}\n{width} {height}\n-1.0\n").into_bytes();
    out.reserve(data.len() * 4);
    let row_len = width * channels;
    for row in (0..height).rev() {
        for x in &data[row * row_len..(row + 1) * row_len] {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses a PFM byte buffer; `path` is only used in error messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Pfm> {
    let mut pos = 0usize;
    let mut field = |what: &str| -> Result<(String, usize)> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, start as u64, format!("missing {what}")));
        }
        Ok((String::from_utf8_lossy(&bytes[start..pos]).into_owned(), start))
    };
    let (tag, at) = field("PFM tag")?;
    let channels = match tag.as_str() {
        "Pf" => 1,
        "PF" => 3,
        _ => return Err(Error::format(path, at as u64, format!("unknown tag {tag:?}"))),
    };
    let mut dim = |what: &str| -> Result<usize> {
        let (s, at) = field(what)?;
        s.parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::format(path, at as u64, format!("bad {what} {s:?}")))
    };
    let width = dim("width")?;
    let height = dim("height")?;
    let (scale_text, at) = field("scale")?;
    let scale: f64 = scale_text
        .parse()
        .ok()
        .filter(|s: &f64| s.is_finite() && *s != 0.0)
        .ok_or_else(|| Error::format(path, at as u64, format!("bad scale {scale_text:?}")))?;
    let little = scale < 0.0;
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(path, pos as u64, "missing separator after scale"));
    }
    pos += 1;

    let n = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::format(path, 0, "dimensions overflow"))?;
    let needed = n * 4;
    let body = &bytes[pos..];
    if body.len() < needed {
        return Err(Error::format(
            path,
            bytes.len() as u64,
            format!("truncated: expected {needed} bytes of samples after byte {pos}, found {}", body.len()),
        ));
    }
    if body.len() > needed {
        return Err(Error::format(
            path,
            (pos + needed) as u64,
            format!("{} trailing bytes after samples", body.len() - needed),
        ));
    }
    let mut data = vec![0f32; n];
    let row_len = width * channels;
    for (k, chunk) in body.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let x = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let stored_row = k / row_len;
        let row = height - 1 - stored_row;
        data[row * row_len + k % row_len] = x;
    }
    Ok(Pfm {
        width,
        height,
        channels,
        data,
    })
}

pub fn read(path: &Path) -> Result<Pfm> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn write(path: &Path, width: usize, height: usize, channels: usize, data: &[f32]) -> Result<()> {
    let bytes = encode(width, height, channels, data)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes a depth frame; masked-out pixels are stored as 0.
pub fn write_depth(path: &Path, frame: &DepthFrame<f32>) -> Result<()> {
    let data: Vec<f32> = frame
        .values()
        .as_slice()
        .iter()
        .zip(frame.mask().as_slice())
        .map(|(&d, &m)| if m { d } else { 0.0 })
        .collect();
    write(path, frame.width(), frame.height(), 1, &data)
}

/// Reads a single-channel depth map. Pixels that are non-finite or not
/// positive are masked out.
pub fn read_depth(path: &Path) -> Result<DepthFrame<f32>> {
    let pfm = read(path)?;
    if pfm.channels != 1 {
        return Err(Error::format(path, 0, "depth maps must be single-channel (Pf)"));
    }
    let grid = Grid::from_vec(pfm.width, pfm.height, pfm.data).expect("length checked by decode");
    Ok(DepthFrame::from_values(grid))
}
