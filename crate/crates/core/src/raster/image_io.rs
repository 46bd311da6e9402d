//! Image containers and their on-disk formats.
//!
//! * color: 8-bit RGB PNG
//! * masks: 1-bit grayscale PNG (white = valid)
//! * depth: raw little-endian raster, `u32 width`, `u32 height`, then
//!   `width * height` row-major `f32` values

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::FrameBuffer;

#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB in `[0, 1]`.
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0.0; 3 * (width * height) as usize],
        }
    }

    pub fn filled(width: u32, height: u32, rgb: [f64; 3]) -> Self {
        RgbImage {
            width,
            height,
            data: rgb.iter().copied().cycle().take(3 * (width * height) as usize).collect(),
        }
    }

    pub fn get(&self, x: u32, y: u32) -> [f64; 3] {
        let i = 3 * (y * self.width + x) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, rgb: [f64; 3]) {
        let i = 3 * (y * self.width + x) as usize;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn from_frame(fb: &FrameBuffer) -> Self {
        RgbImage {
            width: fb.width,
            height: fb.height,
            data: fb.color.clone(),
        }
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn from_rgb8(width: u32, height: u32, bytes: &[u8]) -> Self {
        RgbImage {
            width,
            height,
            data: bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn all_valid(width: u32, height: u32) -> Self {
        Mask {
            width,
            height,
            data: vec![true; (width * height) as usize],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    /// Meters; `0` marks a missing measurement.
    pub data: Vec<f64>,
}

pub fn write_png(path: &Path, image: &RgbImage) -> Result<()> {
    image::save_buffer(path, &image.to_rgb8(), image.width, image.height, image::ExtendedColorType::Rgb8)?;
    Ok(())
}

/// Encodes to PNG bytes in memory (deterministic for identical input).
pub fn encode_png(image: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let encoder = image::codecs::png::PngEncoder::new(&mut out);
    image::ImageEncoder::write_image(encoder, &image.to_rgb8(), image.width, image.height, image::ExtendedColorType::Rgb8)?;
    Ok(out)
}

pub fn read_png(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)?.to_rgb8();
    Ok(RgbImage::from_rgb8(img.width(), img.height(), img.as_raw()))
}

pub fn encode_mask_png(mask: &Mask) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, mask.width, mask.height);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::One);
        let mut writer = encoder.write_header().map_err(|e| Error::Io(std::io::Error::other(e)))?;
        let stride = (mask.width as usize).div_ceil(8);
        let mut packed = vec![0u8; stride * mask.height as usize];
        for y in 0..mask.height as usize {
            for x in 0..mask.width as usize {
                if mask.data[y * mask.width as usize + x] {
                    packed[y * stride + x / 8] |= 0x80 >> (x % 8);
                }
            }
        }
        writer.write_image_data(&packed).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    Ok(out)
}

pub fn write_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    std::fs::write(path, encode_mask_png(mask)?)?;
    Ok(())
}

pub fn read_mask_png(path: &Path) -> Result<Mask> {
    let img = image::open(path)?.to_luma8();
    Ok(Mask {
        width: img.width(),
        height: img.height(),
        data: img.as_raw().iter().map(|&v| v >= 128).collect(),
    })
}

pub fn encode_depth_raw(width: u32, height: u32, depth: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * depth.len());
    out.extend_from_slice(&width.to_le_bytes());
    out.extend_from_slice(&height.to_le_bytes());
    for d in depth {
        out.extend_from_slice(&(*d as f32).to_le_bytes());
    }
    out
}

pub fn write_depth_raw(path: &Path, width: u32, height: u32, depth: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_depth_raw(width, height, depth))?;
    w.flush()?;
    Ok(())
}

pub fn decode_depth_raw(bytes: &[u8]) -> Result<DepthMap> {
    if bytes.len() < 8 {
        return Err(Error::format(bytes.len() as u64, "depth raster shorter than its header"));
    }
    let width = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let n = width as u64 * height as u64;
    let expected = 8 + 4 * n;
    if bytes.len() as u64 != expected {
        return Err(Error::format(
            bytes.len().min(expected as usize) as u64,
            format!("depth raster of {width}x{height} needs {expected} bytes, found {}", bytes.len()),
        ));
    }
    let data = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(DepthMap { width, height, data })
}

pub fn read_depth_raw(path: &Path) -> Result<DepthMap> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_depth_raw(&bytes)
}
