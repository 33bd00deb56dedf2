//! Image file boundary: PNG (8-bit, gamma 2.2) and raw float dumps.
//!
//! Internal buffers are linear RGB. PNG encode applies x^(1/2.2) and decode
//! applies x^2.2; alpha channels are composited over a caller-chosen
//! background at load time, in linear space. Raw dumps are lossless
//! little-endian f32 and bypass gamma entirely.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::image_buf::ImageF;

const GAMMA: f64 = 2.2;

/// Linear [0,1] (clamped) to an 8-bit gamma-encoded value.
pub fn linear_to_srgb8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0).powf(1.0 / GAMMA) * 255.0).round() as u8
}

/// 8-bit gamma-encoded value to linear.
pub fn srgb8_to_linear(v: u8) -> f64 {
    (v as f64 / 255.0).powf(GAMMA)
}

pub fn save_png(img: &ImageF, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = img.data().iter().map(|&v| linear_to_srgb8(v)).collect();
    let buffer = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, bytes)
        .expect("buffer length matches dimensions by construction");
    buffer
        .save(path)
        .map_err(|e| Error::Image { path: path.to_path_buf(), msg: e.to_string() })
}

/// Loads a PNG (RGB or RGBA); alpha is composited over `background` in
/// linear space.
pub fn load_png(path: &Path, background: Vec3) -> Result<ImageF> {
    let decoded = image::open(path)
        .map_err(|e| Error::Image { path: path.to_path_buf(), msg: e.to_string() })?
        .to_rgba8();
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let mut img = ImageF::new(w, h);
    for (y, row) in decoded.rows().enumerate() {
        for (x, px) in row.enumerate() {
            let alpha = px.0[3] as f64 / 255.0;
            let fg = Vec3::new(
                srgb8_to_linear(px.0[0]),
                srgb8_to_linear(px.0[1]),
                srgb8_to_linear(px.0[2]),
            );
            img.set(x, y, fg * alpha + background * (1.0 - alpha));
        }
    }
    Ok(img)
}

/// Lossless dump: u32 width, u32 height, then width·height·3 f32 samples,
/// all little-endian.
pub fn save_raw(img: &ImageF, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(8 + img.data().len() * 4);
    out.extend_from_slice(&(img.width() as u32).to_le_bytes());
    out.extend_from_slice(&(img.height() as u32).to_le_bytes());
    for &v in img.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn load_raw(path: &Path) -> Result<ImageF> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let fail = |msg: &str| Error::Image { path: path.to_path_buf(), msg: msg.to_string() };
    if bytes.len() < 8 {
        return Err(fail("truncated header"));
    }
    let w = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let expect = 8 + w * h * 3 * 4;
    if bytes.len() != expect {
        return Err(fail(&format!("expected {expect} bytes, found {}", bytes.len())));
    }
    let data = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    ImageF::from_data(w, h, data)
}

/// Integer-factor downscale by averaging k×k blocks in linear space. Excess
/// rows/columns beyond the last full block are dropped.
pub fn downscale(img: &ImageF, k: usize) -> ImageF {
    assert!(k >= 1, "downscale factor must be positive");
    if k == 1 {
        return img.clone();
    }
    let (w, h) = (img.width() / k, img.height() / k);
    let mut out = ImageF::new(w, h);
    let norm = 1.0 / (k * k) as f64;
    for y in 0..h {
        for x in 0..w {
            let mut acc = Vec3::zeros();
            for dy in 0..k {
                for dx in 0..k {
                    acc += img.get(x * k + dx, y * k + dy);
                }
            }
            out.set(x, y, acc * norm);
        }
    }
    out
}
