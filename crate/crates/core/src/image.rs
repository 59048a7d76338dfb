//! Channel-last image tensors with values in `[0, 1]`.

use std::path::Path;

use image::imageops::{self, FilterType};
use image::{DynamicImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{BslError, Result};

/// An `H x W x C` image stored channel-last, row-major, as `f32` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(BslError::InvalidInput(format!(
                "images must have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(BslError::Structural(format!(
                "{}x{}x{} image needs {} values, got {}",
                height,
                width,
                channels,
                height * width * channels,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(BslError::InvalidInput(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c).clamp(0.0, 1.0));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    /// One pixel (all channels).
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = self.index(y, x, 0);
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f32] {
        let i = self.index(y, x, 0);
        &mut self.data[i..i + self.channels]
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.pixel_mut(y, self.width - 1 - x)
                    .copy_from_slice(self.pixel(y, x));
            }
        }
        out
    }

    /// Replicates a single channel into three; three-channel images are returned unchanged.
    pub fn to_rgb(&self) -> Self {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Self {
            height: self.height,
            width: self.width,
            channels: 3,
            data,
        }
    }

    pub fn from_dynamic(img: &DynamicImage) -> Self {
        let rgb = img.to_rgb32f();
        let (w, h) = rgb.dimensions();
        let data = rgb.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Self {
            height: h as usize,
            width: w as usize,
            channels: 3,
            data,
        }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let rgb = self.to_rgb();
        let raw = rgb
            .data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        ImageBuffer::<Rgb<u8>, _>::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer size matches dimensions")
    }

    pub fn to_rgb32f(&self) -> ImageBuffer<Rgb<f32>, Vec<f32>> {
        let rgb = self.to_rgb();
        ImageBuffer::from_raw(self.width as u32, self.height as u32, rgb.data)
            .expect("buffer size matches dimensions")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| BslError::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_dynamic(&img))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| BslError::Image {
                path: path.to_path_buf(),
                source,
            })
    }

    /// Quantizes to 8 bits per channel, matching what a PNG round trip produces.
    pub fn quantize_u8(&self) -> Self {
        let data = self
            .data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) / 255.0)
            .collect();
        Self { data, ..*self }
    }
}

impl ImageTensor {
    /// Resamples to `height x width` with a triangle (bilinear) filter, which
    /// is area-averaging when shrinking. Same-size calls return a copy.
    pub fn resize(&self, height: usize, width: usize) -> Self {
        if (height, width) == (self.height, self.width) {
            return self.clone();
        }
        let (w, h) = (width as u32, height as u32);
        let data = if self.channels == 1 {
            let buf: ImageBuffer<Luma<f32>, Vec<f32>> =
                ImageBuffer::from_raw(self.width as u32, self.height as u32, self.data.clone())
                    .expect("buffer size matches dimensions");
            imageops::resize(&buf, w, h, FilterType::Triangle).into_raw()
        } else {
            imageops::resize(&self.to_rgb32f(), w, h, FilterType::Triangle).into_raw()
        };
        Self {
            height,
            width,
            channels: self.channels,
            data: data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }
}

/// Height, width and channel count of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageTensorShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageTensor {
    pub fn shape(&self) -> ImageTensorShape {
        ImageTensorShape {
            height: self.height,
            width: self.width,
            channels: self.channels,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_values() {
        assert!(ImageTensor::new(1, 1, 1, vec![1.5]).is_err());
        assert!(ImageTensor::new(1, 1, 2, vec![0.5, 0.5]).is_err());
        assert!(ImageTensor::new(1, 2, 1, vec![0.5]).is_err());
    }

    #[test]
    fn flip_is_an_involution() {
        let img = ImageTensor::from_fn(3, 5, 3, |y, x, c| (y * 15 + x * 3 + c) as f32 / 64.0);
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
        assert_eq!(img.flip_horizontal().pixel(0, 0), img.pixel(0, 4));
    }

    #[test]
    fn gray_replicates_to_three_channels() {
        let img = ImageTensor::new(1, 2, 1, vec![0.25, 0.75]).unwrap();
        assert_eq!(img.to_rgb().data(), &[0.25, 0.25, 0.25, 0.75, 0.75, 0.75]);
    }
}
