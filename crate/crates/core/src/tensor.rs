use crate::image::ImageTensor;

/// A `C x H x W` feature map in `f64`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), channels * height * width, "feature map size");
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    /// Converts a channel-last image to channel-major layout.
    pub fn from_image(img: &ImageTensor) -> Self {
        let (h, w, c) = (img.height(), img.width(), img.channels());
        let mut data = vec![0.0; c * h * w];
        for (i, px) in img.data().chunks_exact(c).enumerate() {
            for (k, &v) in px.iter().enumerate() {
                data[k * h * w + i] = v as f64;
            }
        }
        Self::from_vec(c, h, w, data)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn add_assign(&mut self, other: &FeatureMap) {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }
}
