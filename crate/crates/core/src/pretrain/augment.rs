//! Stochastic image augmentations for contrastive view synthesis.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::frame::ImageFrame;

/// Which augmentations are enabled when synthesizing views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationPolicy {
    /// Random resized crop only.
    CropOnly,
    /// Color jitter only; flip disabled.
    ColorOnly,
    /// Crop, color jitter, horizontal flip, grayscale, blur.
    AugPlus,
    /// Identity.
    None,
}

impl AugmentationPolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            AugmentationPolicy::CropOnly => "crop_only",
            AugmentationPolicy::ColorOnly => "color_only",
            AugmentationPolicy::AugPlus => "aug_plus",
            AugmentationPolicy::None => "none",
        }
    }
}

impl std::fmt::Display for AugmentationPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AugmentationPolicy {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "crop_only" => Ok(Self::CropOnly),
            "color_only" => Ok(Self::ColorOnly),
            "aug_plus" => Ok(Self::AugPlus),
            "none" => Ok(Self::None),
            other => Err(crate::Error::InvalidInput(format!("unknown augmentation policy: {other}"))),
        }
    }
}

const CROP_SCALE: (f32, f32) = (0.5, 1.0);
const JITTER_BRIGHTNESS: f32 = 0.3;
const JITTER_CONTRAST: f32 = 0.3;
const JITTER_SATURATION: f32 = 0.3;
const JITTER_HUE: f32 = 0.05;
const FLIP_PROB: f64 = 0.5;
const GRAYSCALE_PROB: f64 = 0.2;
const BLUR_PROB: f64 = 0.5;

/// Two independently augmented views of one frame.
pub fn augment_pair(
    frame: &ImageFrame,
    policy: AugmentationPolicy,
    rng: &mut ChaCha8Rng,
) -> (ImageFrame, ImageFrame) {
    (augment_one(frame, policy, rng), augment_one(frame, policy, rng))
}

pub fn augment_one(
    frame: &ImageFrame,
    policy: AugmentationPolicy,
    rng: &mut ChaCha8Rng,
) -> ImageFrame {
    match policy {
        AugmentationPolicy::None => frame.clone(),
        AugmentationPolicy::CropOnly => random_crop_resize(frame, rng),
        AugmentationPolicy::ColorOnly => color_jitter(frame, rng),
        AugmentationPolicy::AugPlus => {
            let mut f = random_crop_resize(frame, rng);
            if rng.gen_bool(FLIP_PROB) {
                f = hflip(&f);
            }
            f = color_jitter(&f, rng);
            if rng.gen_bool(GRAYSCALE_PROB) {
                f = grayscale(&f);
            }
            if rng.gen_bool(BLUR_PROB) {
                f = gaussian_blur(&f, rng.gen_range(0.1..2.0));
            }
            f
        }
    }
}

/// Random square crop covering an area fraction in `CROP_SCALE`, resized back
/// to the original resolution with bilinear sampling.
pub fn random_crop_resize(frame: &ImageFrame, rng: &mut ChaCha8Rng) -> ImageFrame {
    let size = frame.height;
    let scale = rng.gen_range(CROP_SCALE.0..=CROP_SCALE.1);
    let side = ((size as f32 * scale.sqrt()).round() as usize).clamp(1, size);
    let y0 = rng.gen_range(0..=size - side);
    let x0 = rng.gen_range(0..=size - side);
    resize_bilinear(frame, x0, y0, side, size)
}

fn resize_bilinear(frame: &ImageFrame, x0: usize, y0: usize, side: usize, out: usize) -> ImageFrame {
    let mut dst = ImageFrame::new(out, out);
    let step = side as f32 / out as f32;
    for oy in 0..out {
        let sy = (oy as f32 + 0.5) * step - 0.5;
        let sy0 = sy.floor().clamp(0.0, (side - 1) as f32) as usize;
        let sy1 = (sy0 + 1).min(side - 1);
        let fy = (sy - sy0 as f32).clamp(0.0, 1.0);
        for ox in 0..out {
            let sx = (ox as f32 + 0.5) * step - 0.5;
            let sx0 = sx.floor().clamp(0.0, (side - 1) as f32) as usize;
            let sx1 = (sx0 + 1).min(side - 1);
            let fx = (sx - sx0 as f32).clamp(0.0, 1.0);
            let mut rgb = [0u8; 3];
            for c in 0..3 {
                let p00 = frame.get(y0 + sy0, x0 + sx0)[c] as f32;
                let p01 = frame.get(y0 + sy0, x0 + sx1)[c] as f32;
                let p10 = frame.get(y0 + sy1, x0 + sx0)[c] as f32;
                let p11 = frame.get(y0 + sy1, x0 + sx1)[c] as f32;
                let v = p00 * (1.0 - fy) * (1.0 - fx)
                    + p01 * (1.0 - fy) * fx
                    + p10 * fy * (1.0 - fx)
                    + p11 * fy * fx;
                rgb[c] = v.round().clamp(0.0, 255.0) as u8;
            }
            dst.set(oy, ox, rgb);
        }
    }
    dst
}

pub fn hflip(frame: &ImageFrame) -> ImageFrame {
    let mut out = ImageFrame::new(frame.height, frame.width);
    for y in 0..frame.height {
        for x in 0..frame.width {
            out.set(y, frame.width - 1 - x, frame.get(y, x));
        }
    }
    out
}

/// Brightness, contrast, saturation, and hue jitter with uniform strengths.
pub fn color_jitter(frame: &ImageFrame, rng: &mut ChaCha8Rng) -> ImageFrame {
    let b = 1.0 + rng.gen_range(-JITTER_BRIGHTNESS..=JITTER_BRIGHTNESS);
    let c = 1.0 + rng.gen_range(-JITTER_CONTRAST..=JITTER_CONTRAST);
    let s = 1.0 + rng.gen_range(-JITTER_SATURATION..=JITTER_SATURATION);
    let h = rng.gen_range(-JITTER_HUE..=JITTER_HUE) * std::f32::consts::TAU;
    let mut out = ImageFrame::new(frame.height, frame.width);
    // mean luma for the contrast pivot
    let mut mean = 0.0f32;
    for p in frame.data.chunks_exact(3) {
        mean += 0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32;
    }
    mean /= (frame.height * frame.width) as f32;
    let (ch, sh) = (h.cos(), h.sin());
    for y in 0..frame.height {
        for x in 0..frame.width {
            let p = frame.get(y, x);
            let mut v = [p[0] as f32, p[1] as f32, p[2] as f32];
            for vv in v.iter_mut() {
                *vv *= b;
            }
            for vv in v.iter_mut() {
                *vv = mean + (*vv - mean) * c;
            }
            let luma = 0.299 * v[0] + 0.587 * v[1] + 0.114 * v[2];
            for vv in v.iter_mut() {
                *vv = luma + (*vv - luma) * s;
            }
            // hue rotation in YIQ space
            let i = 0.596 * v[0] - 0.274 * v[1] - 0.322 * v[2];
            let q = 0.211 * v[0] - 0.523 * v[1] + 0.312 * v[2];
            let luma = 0.299 * v[0] + 0.587 * v[1] + 0.114 * v[2];
            let i2 = i * ch - q * sh;
            let q2 = i * sh + q * ch;
            v[0] = luma + 0.956 * i2 + 0.621 * q2;
            v[1] = luma - 0.272 * i2 - 0.647 * q2;
            v[2] = luma - 1.106 * i2 + 1.703 * q2;
            out.set(y, x, [
                v[0].round().clamp(0.0, 255.0) as u8,
                v[1].round().clamp(0.0, 255.0) as u8,
                v[2].round().clamp(0.0, 255.0) as u8,
            ]);
        }
    }
    out
}

pub fn grayscale(frame: &ImageFrame) -> ImageFrame {
    let mut out = ImageFrame::new(frame.height, frame.width);
    for y in 0..frame.height {
        for x in 0..frame.width {
            let p = frame.get(y, x);
            let l = (0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32)
                .round()
                .clamp(0.0, 255.0) as u8;
            out.set(y, x, [l, l, l]);
        }
    }
    out
}

/// Separable 5-tap gaussian blur.
pub fn gaussian_blur(frame: &ImageFrame, sigma: f32) -> ImageFrame {
    let mut kernel = [0.0f32; 5];
    let mut sum = 0.0;
    for (i, k) in kernel.iter_mut().enumerate() {
        let d = i as f32 - 2.0;
        *k = (-d * d / (2.0 * sigma * sigma)).exp();
        sum += *k;
    }
    for k in kernel.iter_mut() {
        *k /= sum;
    }
    let (h, w) = (frame.height, frame.width);
    let mut tmp = vec![0.0f32; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut v = 0.0;
                for (i, &k) in kernel.iter().enumerate() {
                    let sx = (x as isize + i as isize - 2).clamp(0, w as isize - 1) as usize;
                    v += k * frame.get(y, sx)[c] as f32;
                }
                tmp[(y * w + x) * 3 + c] = v;
            }
        }
    }
    let mut out = ImageFrame::new(h, w);
    for y in 0..h {
        for x in 0..w {
            let mut rgb = [0u8; 3];
            for c in 0..3 {
                let mut v = 0.0;
                for (i, &k) in kernel.iter().enumerate() {
                    let sy = (y as isize + i as isize - 2).clamp(0, h as isize - 1) as usize;
                    v += k * tmp[(sy * w + x) * 3 + c];
                }
                rgb[c] = v.round().clamp(0.0, 255.0) as u8;
            }
            out.set(y, x, rgb);
        }
    }
    out
}
