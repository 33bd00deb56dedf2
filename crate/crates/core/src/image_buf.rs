//! Linear-light RGB float image buffer shared by the renderer, losses and
//! dataset loaders. Gamma conversion happens only at the PNG boundary.

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Row-major interleaved RGB image with f64 samples in linear light.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageF {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageF {
    pub fn new(width: usize, height: usize) -> Self {
        ImageF { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn filled(width: usize, height: usize, color: Vec3) -> Self {
        let mut img = ImageF::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px[0] = color.x;
            px[1] = color.y;
            px[2] = color.z;
        }
        img
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::ShapeMismatch(width, height, data.len() / 3, 1));
        }
        Ok(ImageF { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> Vec3 {
        let i = 3 * (y * self.width + x);
        Vec3::new(self.data[i], self.data[i + 1], self.data[i + 2])
    }

    pub fn set(&mut self, x: usize, y: usize, c: Vec3) {
        let i = 3 * (y * self.width + x);
        self.data[i] = c.x;
        self.data[i + 1] = c.y;
        self.data[i + 2] = c.z;
    }

    pub fn same_shape(&self, other: &ImageF) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::ShapeMismatch(self.width, self.height, other.width, other.height));
        }
        Ok(())
    }

    /// Largest absolute per-sample difference.
    pub fn max_abs_diff(&self, other: &ImageF) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Mutable row slices for parallel pixel fills.
    pub fn rows_mut(&mut self) -> std::slice::ChunksExactMut<'_, f64> {
        self.data.chunks_exact_mut(self.width * 3)
    }

    /// All samples clamped into [0,1] (applied before writing images out).
    pub fn clamped(&self) -> ImageF {
        ImageF {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
