//! PNG images: 8-bit intensity/label/mask frames, color frames, and 16-bit
//! depth maps with a JSON sidecar giving the depth unit.
//!
//! A 16-bit depth map `name.png` is accompanied by `name.json` holding
//! `{"mm_per_unit": <float>}`; depth in mm is `value * mm_per_unit` and a
//! stored 0 marks an invalid pixel.

use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::depth_eval::DepthFrame;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::preprocess::ImageFrame;

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, 0, other.to_string()),
    })
}

fn save(path: &Path, img: &DynamicImage) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, 0, other.to_string()),
    })
}

pub fn write_gray8(path: &Path, grid: &Grid<u8>) -> Result<()> {
    let img = GrayImage::from_raw(grid.width() as u32, grid.height() as u32, grid.as_slice().to_vec())
        .ok_or_else(|| Error::invalid("image buffer size mismatch"))?;
    save(path, &DynamicImage::ImageLuma8(img))
}

pub fn read_gray8(path: &Path) -> Result<Grid<u8>> {
    let img = open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Ok(Grid::from_vec(w as usize, h as usize, img.into_raw()).expect("buffer matches dimensions"))
}

pub fn read_rgb8(path: &Path) -> Result<Grid<[u8; 3]>> {
    let img = open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| p.0).collect();
    Ok(Grid::from_vec(w as usize, h as usize, data).expect("buffer matches dimensions"))
}

/// 255 for `true`, 0 for `false`.
pub fn write_mask(path: &Path, mask: &Grid<bool>) -> Result<()> {
    write_gray8(path, &mask.map(|&m| if m { 255 } else { 0 }))
}

fn to_u8(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Unit-range intensities quantized to 8 bits.
pub fn write_unit_gray(path: &Path, grid: &Grid<f64>) -> Result<()> {
    write_gray8(path, &grid.map(|&x| to_u8(x)))
}

/// Loads an 8- or 16-bit grayscale or color PNG as a unit-range image
/// (alpha is dropped).
pub fn read_image(path: &Path) -> Result<ImageFrame> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = !img.color().has_color();
    let (channels, data) = if gray {
        let buf = img.to_luma16();
        (1, buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect::<Vec<_>>())
    } else {
        let buf = img.to_rgb16();
        let n = w * h;
        let mut data = vec![0.0; 3 * n];
        for (i, p) in buf.pixels().enumerate() {
            for c in 0..3 {
                data[c * n + i] = p.0[c] as f64 / 65535.0;
            }
        }
        (3, data)
    };
    ImageFrame::new(channels, w, h, data)
}

/// Writes a 1- or 3-channel image as 8-bit PNG.
pub fn write_image(path: &Path, img: &ImageFrame) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    match img.channels() {
        1 => {
            let raw = img.channel(0).iter().map(|&x| to_u8(x)).collect();
            let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(w, h, raw).expect("sized");
            save(path, &DynamicImage::ImageLuma8(buf))
        }
        3 => {
            let n = img.plane_len();
            let mut raw = Vec::with_capacity(3 * n);
            for i in 0..n {
                for c in 0..3 {
                    raw.push(to_u8(img.channel(c)[i]));
                }
            }
            let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = RgbImage::from_raw(w, h, raw).expect("sized");
            save(path, &DynamicImage::ImageRgb8(buf))
        }
        c => Err(Error::invalid(format!("cannot write a {c}-channel image as PNG"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthSidecar {
    pub mm_per_unit: f64,
}

pub fn sidecar_path(png: &Path) -> PathBuf {
    png.with_extension("json")
}

/// True when the file decodes as a 16-bit single-channel PNG.
pub fn is_gray16(path: &Path) -> Result<bool> {
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoder = reader.into_decoder().map_err(|e| Error::format(path, 0, e.to_string()))?;
    use image::ImageDecoder;
    Ok(decoder.color_type() == image::ColorType::L16)
}

pub fn read_sidecar(png: &Path) -> Result<DepthSidecar> {
    let path = sidecar_path(png);
    let side: DepthSidecar = super::json::read_json(&path)?;
    if !(side.mm_per_unit > 0.0 && side.mm_per_unit.is_finite()) {
        return Err(Error::Json {
            path,
            message: "mm_per_unit must be positive".into(),
        });
    }
    Ok(side)
}

pub fn read_depth16(path: &Path) -> Result<DepthFrame<f32>> {
    let side = read_sidecar(path)?;
    let img = open(path)?;
    if img.color() != image::ColorType::L16 {
        return Err(Error::format(path, 0, "depth PNG must be 16-bit grayscale"));
    }
    let buf = img.to_luma16();
    let (w, h) = buf.dimensions();
    let values: Vec<f32> = buf
        .into_raw()
        .into_iter()
        .map(|v| if v == 0 { 0.0 } else { (v as f64 * side.mm_per_unit) as f32 })
        .collect();
    Ok(DepthFrame::from_values(Grid::from_vec(w as usize, h as usize, values).expect("sized")))
}

/// Quantizes depth to `round(d / mm_per_unit)`, saturating at 65535;
/// masked-out pixels become 0.
pub fn write_depth16(path: &Path, frame: &DepthFrame<f32>, mm_per_unit: f64) -> Result<()> {
    if !(mm_per_unit > 0.0) {
        return Err(Error::invalid("mm_per_unit must be positive"));
    }
    let raw: Vec<u16> = frame
        .values()
        .as_slice()
        .iter()
        .zip(frame.mask().as_slice())
        .map(|(&d, &m)| {
            if m {
                (d as f64 / mm_per_unit).round().clamp(1.0, 65535.0) as u16
            } else {
                0
            }
        })
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(frame.width() as u32, frame.height() as u32, raw).expect("sized");
    save(path, &DynamicImage::ImageLuma16(buf))?;
    super::json::write_json(&sidecar_path(path), &DepthSidecar { mm_per_unit })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_and_mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::from_fn(5, 3, |c, r| (c * 40 + r) as u8);
        let p = dir.path().join("g.png");
        write_gray8(&p, &g).unwrap();
        assert_eq!(read_gray8(&p).unwrap(), g);
        assert!(!is_gray16(&p).unwrap());

        let img = read_image(&p).unwrap();
        assert_eq!(img.channels(), 1);
        assert!((img.get(0, 4, 2) - 162.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn color_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f64> = (0..3 * 6).map(|i| (i % 7) as f64 / 6.0).collect();
        let img = ImageFrame::new(3, 3, 2, data).unwrap();
        let p = dir.path().join("c.png");
        write_image(&p, &img).unwrap();
        let back = read_image(&p).unwrap();
        assert_eq!(back.channels(), 3);
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        let rgb = read_rgb8(&p).unwrap();
        assert_eq!(rgb.at(0, 0), [0, 255, 213]);
    }

    #[test]
    fn depth16_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let frame = DepthFrame::from_values(Grid::from_fn(4, 2, |c, r| if c == 0 { 0.0 } else { 10.0 + c as f32 + r as f32 * 0.5 }));
        let p = dir.path().join("d.png");
        write_depth16(&p, &frame, 0.01).unwrap();
        assert!(is_gray16(&p).unwrap());
        let back = read_depth16(&p).unwrap();
        assert_eq!(back.mask(), frame.mask());
        for (a, b) in back.values().as_slice().iter().zip(frame.values().as_slice()) {
            assert!((a - b).abs() < 1e-4);
        }
        std::fs::remove_file(sidecar_path(&p)).unwrap();
        assert!(read_depth16(&p).is_err());
    }
}
