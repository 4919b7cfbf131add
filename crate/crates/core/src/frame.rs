//! Raw image observations.

use ndarray::{Array3, Array4};
use serde::{Deserialize, Serialize};

/// An H×W×3 RGB observation with 8-bit channels. The universal perceptual
/// input of the pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageFrame {
    pub height: usize,
    pub width: usize,
    /// Row-major H×W×3 interleaved RGB.
    pub data: Vec<u8>,
}

impl ImageFrame {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0; height * width * 3] }
    }

    pub fn from_data(height: usize, width: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), height * width * 3);
        Self { height, width, data }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn fill(&mut self, rgb: [u8; 3]) {
        for p in self.data.chunks_exact_mut(3) {
            p.copy_from_slice(&rgb);
        }
    }

    /// CHW float image with channels scaled to [0, 1].
    pub fn to_chw(&self) -> Array3<f32> {
        let (h, w) = (self.height, self.width);
        let mut out = Array3::zeros((3, h, w));
        for y in 0..h {
            for x in 0..w {
                let p = self.get(y, x);
                for c in 0..3 {
                    out[[c, y, x]] = p[c] as f32 / 255.0;
                }
            }
        }
        out
    }

    /// Quantizes a CHW float image (values clamped to [0, 1]) back to 8-bit.
    pub fn from_chw(img: &Array3<f32>) -> Self {
        let (c, h, w) = img.dim();
        assert_eq!(c, 3);
        let mut f = ImageFrame::new(h, w);
        for y in 0..h {
            for x in 0..w {
                let mut rgb = [0u8; 3];
                for ch in 0..3 {
                    rgb[ch] = (img[[ch, y, x]].clamp(0.0, 1.0) * 255.0).round() as u8;
                }
                f.set(y, x, rgb);
            }
        }
        f
    }
}

/// Stacks frames into an (N, 3, H, W) batch scaled to [0, 1].
pub fn frames_to_batch(frames: &[&ImageFrame]) -> Array4<f32> {
    assert!(!frames.is_empty());
    let (h, w) = (frames[0].height, frames[0].width);
    let mut out = Array4::zeros((frames.len(), 3, h, w));
    for (n, f) in frames.iter().enumerate() {
        assert_eq!((f.height, f.width), (h, w));
        for y in 0..h {
            for x in 0..w {
                let p = f.get(y, x);
                for c in 0..3 {
                    out[[n, c, y, x]] = p[c] as f32 / 255.0;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chw_round_trip() {
        let mut f = ImageFrame::new(4, 4);
        f.set(1, 2, [10, 128, 255]);
        let g = ImageFrame::from_chw(&f.to_chw());
        assert_eq!(f, g);
    }

    #[test]
    fn batch_layout() {
        let mut f = ImageFrame::new(2, 2);
        f.set(0, 1, [255, 0, 0]);
        let b = frames_to_batch(&[&f]);
        assert_eq!(b[[0, 0, 0, 1]], 1.0);
        assert_eq!(b[[0, 1, 0, 1]], 0.0);
    }
}
