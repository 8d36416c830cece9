//! Plain value types for images, binary masks and attribution maps.

use crate::error::{ensure, Result};
use crate::tensor::Tensor;

/// Channel-major `[C, H, W]` image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            data.len() == channels * height * width,
            Dimension,
            "image {channels}x{height}x{width} given {} values",
            data.len()
        );
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Image whose every pixel equals the per-channel `fill`.
    pub fn constant(height: usize, width: usize, fill: &[f64]) -> Self {
        let mut data = Vec::with_capacity(fill.len() * height * width);
        for &v in fill {
            data.extend(std::iter::repeat_n(v, height * width));
        }
        Self {
            channels: fill.len(),
            height,
            width,
            data,
        }
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set_pixel(&mut self, pos: usize, rgb: &[f64]) {
        let plane = self.plane();
        for (c, v) in rgb.iter().enumerate() {
            self.data[c * plane + pos] = *v;
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }
}

/// Stacks images into an `[N, C, H, W]` tensor.
pub fn batch_tensor(images: &[&Image]) -> Result<Tensor> {
    ensure!(!images.is_empty(), Contract, "empty image batch");
    let shape = images[0].shape();
    let mut data = Vec::with_capacity(images.len() * images[0].data.len());
    for img in images {
        ensure!(
            img.shape() == shape,
            Dimension,
            "batch mixes {:?} and {:?}",
            shape,
            img.shape()
        );
        data.extend_from_slice(&img.data);
    }
    Tensor::new(vec![images.len(), shape[0], shape[1], shape[2]], data)
}

/// Binary `H x W` mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        ensure!(
            bits.len() == height * width,
            Dimension,
            "mask {height}x{width} given {} bits",
            bits.len()
        );
        Ok(Self { height, width, bits })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.bits.len() as f64
    }

    pub fn complement(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !a || *b)
    }

    pub fn iou(&self, other: &Mask) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (a, b) in self.bits.iter().zip(&other.bits) {
            inter += (*a && *b) as usize;
            union += (*a || *b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Per-pixel importance in `[0, 1]`, `H x W` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributionMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl AttributionMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        ensure!(
            values.len() == height * width,
            Dimension,
            "map {height}x{width} given {} values",
            values.len()
        );
        ensure!(
            values.iter().all(|v| (0.0..=1.0).contains(v)),
            Contract,
            "attribution values must lie in [0, 1]"
        );
        Ok(Self { height, width, values })
    }

    pub fn uniform(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    pub fn from_mask(mask: &Mask) -> Self {
        Self {
            height: mask.height,
            width: mask.width,
            values: mask.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}
