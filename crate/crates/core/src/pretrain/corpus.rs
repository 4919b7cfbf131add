//! Pretraining image corpora: a procedurally generated out-of-domain shape
//! dataset and in-domain environment frame collections.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::armreach::{arm_expert, ArmReach};
use crate::env::gridnav::{gridnav_expert, GridNav};
use crate::env::{EnvId, FRAME_SIZE};
use crate::frame::ImageFrame;
use crate::{derive_seed, Error, Result};

pub const MAX_SHAPE_CLASSES: usize = 8;
/// In-domain frame subsampling default: keep one frame in three.
pub const DEFAULT_STRIDE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusSource {
    SyntheticOod,
    EnvFrames,
}

impl CorpusSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            CorpusSource::SyntheticOod => "synthetic_ood",
            CorpusSource::EnvFrames => "env_frames",
        }
    }
}

impl std::str::FromStr for CorpusSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic_ood" => Ok(Self::SyntheticOod),
            "env_frames" => Ok(Self::EnvFrames),
            other => Err(Error::InvalidInput(format!("unknown corpus source: {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageCorpus {
    pub source: CorpusSource,
    pub frames: Vec<ImageFrame>,
    /// Shape class ids; present only for the synthetic corpus.
    pub labels: Option<Vec<u32>>,
    pub subsample_stride: usize,
    pub seed: u64,
}

impl ImageCorpus {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.labels.as_ref().map(|l| l.iter().map(|&c| c as usize + 1).max().unwrap_or(0))
    }

    pub fn checksum(&self) -> String {
        let mut bytes = Vec::new();
        for f in &self.frames {
            bytes.extend_from_slice(&f.data);
        }
        if let Some(labels) = &self.labels {
            for &l in labels {
                bytes.extend_from_slice(&l.to_le_bytes());
            }
        }
        crate::sha256_hex(&bytes)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = CorpusManifest {
            source: self.source,
            seed: self.seed,
            subsample_stride: self.subsample_stride,
            n_frames: self.frames.len(),
            frame_size: FRAME_SIZE,
            labels: self.labels.clone(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string(&manifest)?)?;
        let mut blob = Vec::with_capacity(self.frames.len() * FRAME_SIZE * FRAME_SIZE * 3);
        for f in &self.frames {
            blob.extend_from_slice(&f.data);
        }
        fs::write(dir.join("frames.bin"), &blob)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<ImageCorpus> {
        let manifest: CorpusManifest =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let blob = fs::read(dir.join("frames.bin"))?;
        let rec = manifest.frame_size * manifest.frame_size * 3;
        if blob.len() != rec * manifest.n_frames {
            return Err(Error::InvalidInput("corpus frame blob size mismatch".into()));
        }
        let frames = blob
            .chunks_exact(rec)
            .map(|c| ImageFrame::from_data(manifest.frame_size, manifest.frame_size, c.to_vec()))
            .collect();
        Ok(ImageCorpus {
            source: manifest.source,
            frames,
            labels: manifest.labels,
            subsample_stride: manifest.subsample_stride,
            seed: manifest.seed,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusManifest {
    source: CorpusSource,
    seed: u64,
    subsample_stride: usize,
    n_frames: usize,
    frame_size: usize,
    labels: Option<Vec<u32>>,
}

/// Procedurally rendered shape images: one of `classes` shape kinds drawn
/// with random color, scale, and position over a textured background.
pub fn generate_synthetic_corpus(n: usize, classes: usize, seed: u64) -> Result<ImageCorpus> {
    if classes < 2 || classes > MAX_SHAPE_CLASSES {
        return Err(Error::InvalidSpec(format!(
            "classes must be in 2..={MAX_SHAPE_CLASSES}, got {classes}"
        )));
    }
    if n < classes {
        return Err(Error::InvalidSpec("need at least one image per class".into()));
    }
    let mut frames = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = (i % classes) as u32;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("synthetic-{i}")));
        frames.push(render_shape(class as usize, &mut rng));
        labels.push(class);
    }
    Ok(ImageCorpus {
        source: CorpusSource::SyntheticOod,
        frames,
        labels: Some(labels),
        subsample_stride: 1,
        seed,
    })
}

fn render_shape(class: usize, rng: &mut ChaCha8Rng) -> ImageFrame {
    let s = FRAME_SIZE;
    let mut img = ImageFrame::new(s, s);
    // textured background: base color plus low-amplitude per-pixel noise
    let base = [rng.gen_range(20..120u8), rng.gen_range(20..120u8), rng.gen_range(20..120u8)];
    for y in 0..s {
        for x in 0..s {
            let n = rng.gen_range(0..24u8);
            img.set(y, x, [
                base[0].saturating_add(n),
                base[1].saturating_add(n),
                base[2].saturating_add(n),
            ]);
        }
    }
    let color = [
        rng.gen_range(140..=255u8),
        rng.gen_range(140..=255u8),
        rng.gen_range(140..=255u8),
    ];
    let radius = rng.gen_range(8.0..20.0f32);
    let cx = rng.gen_range(radius..s as f32 - radius);
    let cy = rng.gen_range(radius..s as f32 - radius);
    for y in 0..s {
        for x in 0..s {
            let dx = x as f32 - cx;
            let dy = y as f32 - cy;
            let inside = match class {
                // circle
                0 => dx * dx + dy * dy <= radius * radius,
                // square
                1 => dx.abs() <= radius && dy.abs() <= radius,
                // triangle (upward)
                2 => dy <= radius && dy >= -radius && dx.abs() <= (dy + radius) / 2.0,
                // ring
                3 => {
                    let d2 = dx * dx + dy * dy;
                    d2 <= radius * radius && d2 >= (radius * 0.55).powi(2)
                }
                // cross
                4 => (dx.abs() <= radius * 0.3 && dy.abs() <= radius)
                    || (dy.abs() <= radius * 0.3 && dx.abs() <= radius),
                // diamond
                5 => dx.abs() + dy.abs() <= radius,
                // horizontal bars
                6 => dx.abs() <= radius && dy.abs() <= radius && ((dy / 4.0).floor() as i32) % 2 == 0,
                // X
                _ => (dx - dy).abs() <= radius * 0.35 && dx.abs() <= radius
                    || (dx + dy).abs() <= radius * 0.35 && dx.abs() <= radius,
            };
            if inside {
                img.set(y, x, color);
            }
        }
    }
    img
}

/// Rolls the scripted expert and keeps every `stride`-th frame, unlabeled.
pub fn collect_env_frames(env_id: EnvId, n_traj: usize, stride: usize, seed: u64) -> Result<ImageCorpus> {
    if stride < 1 {
        return Err(Error::InvalidInput("stride must be at least 1".into()));
    }
    let mut frames = Vec::new();
    for i in 0..n_traj {
        let ep_seed = derive_seed(seed, &format!("corpus-{i}"));
        match env_id {
            EnvId::Gridnav => {
                let env = GridNav;
                let (mut state, mut cur, _) = env.reset(ep_seed);
                let mut t = 0usize;
                loop {
                    if t % stride == 0 {
                        frames.push(cur.clone());
                    }
                    let action = gridnav_expert(&state)?;
                    let (next, done, _) = env.step(&mut state, action)?;
                    cur = next;
                    t += 1;
                    if done {
                        break;
                    }
                }
            }
            EnvId::Armreach => {
                let env = ArmReach;
                let (mut state, mut cur) = env.reset(ep_seed);
                let mut t = 0usize;
                loop {
                    if t % stride == 0 {
                        frames.push(cur.clone());
                    }
                    let action = arm_expert(&state);
                    let (next, _, done) = env.step(&mut state, action)?;
                    cur = next;
                    t += 1;
                    if done {
                        break;
                    }
                }
            }
        }
    }
    Ok(ImageCorpus {
        source: CorpusSource::EnvFrames,
        frames,
        labels: None,
        subsample_stride: stride,
        seed,
    })
}
