//! Supervised classification pretraining on the labeled synthetic corpus.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, PretrainObjective};
use crate::frame::frames_to_batch;
use crate::nn::{clip_grad_norm, Linear, Optimizer, Sgd};
use crate::pretrain::corpus::ImageCorpus;
use crate::{derive_seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f32,
    /// Fraction of the corpus held out for the accuracy report.
    pub holdout_frac: f32,
    pub seed: u64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self { batch_size: 32, epochs: 10, learning_rate: 0.05, holdout_frac: 0.1, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupervisedReport {
    pub epoch_losses: Vec<f64>,
    pub holdout_accuracy: f64,
    pub num_classes: usize,
}

/// Softmax cross-entropy mean loss and d(logits) for integer labels.
pub fn softmax_xent(logits: &Array2<f32>, labels: &[u32]) -> (f64, Array2<f32>) {
    let (n, c) = logits.dim();
    assert_eq!(n, labels.len());
    let mut dl = Array2::zeros((n, c));
    let mut loss = 0.0f64;
    for i in 0..n {
        let row = logits.row(i);
        let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let z: f64 = row.iter().map(|&v| (v as f64 - m).exp()).sum();
        let y = labels[i] as usize;
        loss += m + z.ln() - logits[[i, y]] as f64;
        for j in 0..c {
            let p = ((logits[[i, j]] as f64 - m).exp() / z) as f32;
            dl[[i, j]] = (p - if j == y { 1.0 } else { 0.0 }) / n as f32;
        }
    }
    (loss / n as f64, dl)
}

/// Trains backbone stages plus a linear head on pooled L5 features with
/// cross-entropy; the head is discarded and the backbone returned in place.
pub fn train_supervised(
    backbone: &mut Backbone,
    corpus: &ImageCorpus,
    cfg: &SupervisedConfig,
) -> Result<SupervisedReport> {
    let labels = corpus
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("supervised pretraining needs a labeled corpus".into()))?;
    if backbone.frozen {
        return Err(Error::FrozenViolation("train_supervised requires an unfrozen backbone".into()));
    }
    if corpus.len() < cfg.batch_size {
        return Err(Error::InvalidConfig("corpus smaller than batch size".into()));
    }
    let num_classes = corpus.num_classes().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "supervised"));
    let dim = backbone.embed_dim(crate::backbone::Layer::L5);
    let mut head = Linear::new(&mut rng, dim, num_classes);
    let mut opt = Sgd::new(cfg.learning_rate, 0.9);

    let mut indices: Vec<usize> = (0..corpus.len()).collect();
    indices.shuffle(&mut rng);
    let holdout = ((corpus.len() as f32 * cfg.holdout_frac) as usize).max(1);
    let (held, train_idx) = indices.split_at(holdout);
    let held = held.to_vec();
    let mut train_idx = train_idx.to_vec();

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in train_idx.chunks_exact(cfg.batch_size) {
            let frames: Vec<&crate::ImageFrame> = chunk.iter().map(|&i| &corpus.frames[i]).collect();
            let batch_labels: Vec<u32> = chunk.iter().map(|&i| labels[i]).collect();
            let x = frames_to_batch(&frames);
            let z = backbone.pooled_l5_forward_train(&x)?;
            let logits = head.forward(&z, true);
            let (loss, dl) = softmax_xent(&logits, &batch_labels);
            for p in backbone.stage_params_mut() {
                p.zero_grad();
            }
            for p in head.params_mut() {
                p.zero_grad();
            }
            let dz = head.backward(&dl);
            backbone.pooled_l5_backward(&dz);
            let mut params = backbone.stage_params_mut();
            params.extend(head.params_mut());
            clip_grad_norm(&mut params, 10.0);
            opt.step(&mut params);
            total += loss;
            batches += 1;
        }
        epoch_losses.push(total / batches.max(1) as f64);
    }

    // held-out accuracy with the (discarded) head
    let mut correct = 0usize;
    for chunk in held.chunks(cfg.batch_size.max(1)) {
        let frames: Vec<&crate::ImageFrame> = chunk.iter().map(|&i| &corpus.frames[i]).collect();
        let x = frames_to_batch(&frames);
        let z = backbone.embed_batch(&x, crate::backbone::Layer::L5)?;
        let logits = head.forward_no_cache(&z);
        for (r, &i) in chunk.iter().enumerate() {
            let row = logits.row(r);
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if pred as u32 == labels[i] {
                correct += 1;
            }
        }
    }
    backbone.objective = Some(PretrainObjective::Supervised);
    Ok(SupervisedReport {
        epoch_losses,
        holdout_accuracy: correct as f64 / held.len() as f64,
        num_classes,
    })
}
