use serde::{Deserialize, Serialize};

/// Row-major grayscale frame with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl Observation {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![0.0; height * width],
        }
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            pixels: vec![value; height * width],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// Places `right` next to `self`, producing a `height × (w₁ + w₂)` frame.
    pub fn hconcat(&self, right: &Observation) -> Observation {
        assert_eq!(self.height, right.height, "frames must share a height");
        let width = self.width + right.width;
        let mut pixels = Vec::with_capacity(self.height * width);
        for r in 0..self.height {
            pixels.extend_from_slice(&self.pixels[r * self.width..(r + 1) * self.width]);
            pixels.extend_from_slice(&right.pixels[r * right.width..(r + 1) * right.width]);
        }
        Observation {
            height: self.height,
            width,
            pixels,
        }
    }
}
