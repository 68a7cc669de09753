use std::path::Path;

use image::{ImageBuffer, Rgb};

use crate::colormap;
use crate::error::{Error, Result};

/// Three-channel image in model space `[-1, 1]`.
///
/// Storage is planar (`[channel][row][col]`), the layout the network emits.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl RgbImage {
    pub fn from_planar(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} RGB image needs {} values, got {}",
                3 * height * width,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Shape(format!("pixel value {bad} outside [-1, 1]")));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::from_planar(height, width, vec![value; 3 * height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f32 {
        self.data[(c * self.height + row) * self.width + col]
    }

    pub fn same_shape(&self, other: &RgbImage) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// 8-bit display colours, `[-1, 1] → [0, 255]`, interleaved RGB.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let n = self.pixels();
        let mut out = Vec::with_capacity(3 * n);
        for p in 0..n {
            for c in 0..3 {
                let v = (self.data[c * n + p] + 1.0) * 0.5;
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        out
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        write_png(path, self.width, self.height, self.to_rgb8())
    }
}

pub(crate) fn write_png(path: &Path, width: usize, height: usize, rgb: Vec<u8>) -> Result<()> {
    let buf: ImageBuffer<Rgb<u8>, _> =
        ImageBuffer::from_raw(width as u32, height as u32, rgb).ok_or_else(|| Error::Shape("png buffer".into()))?;
    buf.save(path)?;
    Ok(())
}

/// Writes a scalar map as a viridis PNG, normalizing over `[min, max]`.
pub fn save_map_png(path: &Path, map: &[f32], height: usize, width: usize, min: f32, max: f32) -> Result<()> {
    if map.len() != height * width {
        return Err(Error::Shape(format!("map of {} values is not {height}x{width}", map.len())));
    }
    let rgb = map
        .iter()
        .flat_map(|&v| colormap::viridis(colormap::normalize(v, min, max)))
        .collect();
    write_png(path, width, height, rgb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_range_and_length() {
        assert!(RgbImage::from_planar(2, 2, vec![0.0; 12]).is_ok());
        assert!(RgbImage::from_planar(2, 2, vec![0.0; 11]).is_err());
        assert!(RgbImage::from_planar(1, 1, vec![0.0, 1.5, 0.0]).is_err());
        assert!(RgbImage::from_planar(1, 1, vec![0.0, f32::NAN, 0.0]).is_err());
    }

    #[test]
    fn planar_indexing_and_display_mapping() {
        let img = RgbImage::from_planar(1, 2, vec![-1.0, 1.0, 0.0, 0.0, 1.0, -1.0]).unwrap();
        assert_eq!(img.get(0, 0, 1), 1.0);
        assert_eq!(img.channel(2), &[1.0, -1.0]);
        assert_eq!(img.to_rgb8(), vec![0, 128, 255, 255, 128, 0]);
    }
}
