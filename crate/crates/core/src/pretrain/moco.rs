//! Momentum-contrast pretraining of the staged encoder.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, PretrainObjective};
use crate::frame::frames_to_batch;
use crate::nn::{clip_grad_norm, Optimizer, Sgd};
use crate::pretrain::augment::{augment_one, AugmentationPolicy};
use crate::pretrain::contrastive::{
    contrastive_loss_batch, normalize_rows, normalize_rows_backward, EmbeddingQueue,
};
use crate::pretrain::corpus::ImageCorpus;
use crate::{derive_seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub queue_size: usize,
    pub momentum: f32,
    pub temperature: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f32,
    pub seed: u64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            queue_size: 4096,
            momentum: 0.999,
            temperature: 0.07,
            batch_size: 32,
            epochs: 10,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.momentum && self.momentum < 1.0) {
            return Err(Error::InvalidConfig("momentum must be in (0, 1)".into()));
        }
        if self.temperature <= 0.0 {
            return Err(Error::InvalidConfig("temperature must be positive".into()));
        }
        if self.batch_size == 0 || self.queue_size % self.batch_size != 0 {
            return Err(Error::InvalidConfig(
                "queue size must be a positive multiple of batch size".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MocoReport {
    pub epoch_losses: Vec<f64>,
}

/// Trains the backbone's stage path as a MoCo query encoder. The key encoder
/// is a momentum copy; keys are pushed into a FIFO queue of negatives. The
/// key batch is forwarded in shuffled order so its batch statistics do not
/// mirror the query batch.
pub fn train_moco(
    backbone: &mut Backbone,
    corpus: &ImageCorpus,
    aug: AugmentationPolicy,
    cfg: &ContrastiveConfig,
) -> Result<MocoReport> {
    cfg.validate()?;
    if backbone.frozen {
        return Err(Error::FrozenViolation("train_moco requires an unfrozen backbone".into()));
    }
    if corpus.len() < cfg.batch_size {
        return Err(Error::InvalidConfig(format!(
            "corpus of {} images is smaller than batch size {}",
            corpus.len(),
            cfg.batch_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "moco"));
    let mut key_encoder = backbone.clone();
    let dim = backbone.embed_dim(crate::backbone::Layer::L5);
    let mut queue = EmbeddingQueue::new(&mut rng, cfg.queue_size, dim);
    let mut opt = Sgd::new(cfg.learning_rate, 0.9);

    let mut indices: Vec<usize> = (0..corpus.len()).collect();

    // warm-fill: replace the random queue content with real key embeddings so
    // the first training epoch already sees representative negatives
    let mut pushed = 0usize;
    'fill: loop {
        indices.shuffle(&mut rng);
        for chunk in indices.chunks_exact(cfg.batch_size) {
            let views: Vec<crate::ImageFrame> = chunk
                .iter()
                .map(|&i| augment_one(&corpus.frames[i], aug, &mut rng))
                .collect();
            let x = frames_to_batch(&views.iter().collect::<Vec<_>>());
            let k_raw = key_encoder.pooled_l5_forward_train(&x)?;
            let (k, _) = normalize_rows(&k_raw);
            queue.push_batch(&k);
            pushed += chunk.len();
            if pushed >= cfg.queue_size {
                break 'fill;
            }
        }
    }

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _epoch in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for chunk in indices.chunks_exact(cfg.batch_size) {
            let mut views_q = Vec::with_capacity(chunk.len());
            let mut views_k = Vec::with_capacity(chunk.len());
            for &i in chunk {
                views_q.push(augment_one(&corpus.frames[i], aug, &mut rng));
                views_k.push(augment_one(&corpus.frames[i], aug, &mut rng));
            }
            let xq = frames_to_batch(&views_q.iter().collect::<Vec<_>>());

            // keys: shuffled forward through the momentum encoder, no gradient
            let mut order: Vec<usize> = (0..chunk.len()).collect();
            order.shuffle(&mut rng);
            let shuffled: Vec<&crate::ImageFrame> = order.iter().map(|&j| &views_k[j]).collect();
            let xk = frames_to_batch(&shuffled);
            let k_shuffled = key_encoder.pooled_l5_forward_train(&xk)?;
            let mut k_raw = Array2::zeros(k_shuffled.raw_dim());
            for (pos, &j) in order.iter().enumerate() {
                k_raw.row_mut(j).assign(&k_shuffled.row(pos));
            }
            let (k, _) = normalize_rows(&k_raw);

            let q_raw = backbone.pooled_l5_forward_train(&xq)?;
            let (q, q_norms) = normalize_rows(&q_raw);
            let (loss, dq) = contrastive_loss_batch(&q, &k, queue.as_matrix(), cfg.temperature)?;
            let dq_raw = normalize_rows_backward(&q, &q_norms, &dq);

            for p in backbone.stage_params_mut() {
                p.zero_grad();
            }
            backbone.pooled_l5_backward(&dq_raw);
            clip_grad_norm(&mut backbone.stage_params_mut(), 10.0);
            opt.step(&mut backbone.stage_params_mut());

            key_encoder.momentum_merge(backbone, cfg.momentum);
            queue.push_batch(&k);
            epoch_loss += loss;
            batches += 1;
        }
        epoch_losses.push(epoch_loss / batches.max(1) as f64);
    }
    backbone.objective = Some(PretrainObjective::Contrastive);
    Ok(MocoReport { epoch_losses })
}

/// Mean InfoNCE loss of a backbone's pooled L5 embeddings on augmented pairs,
/// without training. Used by calibration checks.
pub fn eval_contrastive_loss(
    backbone: &Backbone,
    corpus: &ImageCorpus,
    aug: AugmentationPolicy,
    cfg: &ContrastiveConfig,
    batches: usize,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "moco-eval"));
    let mut queue = EmbeddingQueue::new(
        &mut rng,
        cfg.queue_size,
        backbone.embed_dim(crate::backbone::Layer::L5),
    );
    let mut indices: Vec<usize> = (0..corpus.len()).collect();
    indices.shuffle(&mut rng);
    let mut total = 0.0;
    let mut n = 0usize;
    for chunk in indices.chunks_exact(cfg.batch_size).take(batches) {
        let mut vq = Vec::new();
        let mut vk = Vec::new();
        for &i in chunk {
            vq.push(augment_one(&corpus.frames[i], aug, &mut rng));
            vk.push(augment_one(&corpus.frames[i], aug, &mut rng));
        }
        let q_raw = backbone.embed_batch(
            &frames_to_batch(&vq.iter().collect::<Vec<_>>()),
            crate::backbone::Layer::L5,
        )?;
        let k_raw = backbone.embed_batch(
            &frames_to_batch(&vk.iter().collect::<Vec<_>>()),
            crate::backbone::Layer::L5,
        )?;
        let (q, _) = normalize_rows(&q_raw);
        let (k, _) = normalize_rows(&k_raw);
        let (loss, _) = contrastive_loss_batch(&q, &k, queue.as_matrix(), cfg.temperature)?;
        queue.push_batch(&k);
        total += loss;
        n += 1;
    }
    Ok(total / n.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{build_backbone, BackboneSpec};
    use crate::pretrain::corpus::generate_synthetic_corpus;

    fn tiny_cfg() -> ContrastiveConfig {
        ContrastiveConfig {
            queue_size: 64,
            batch_size: 8,
            epochs: 2,
            learning_rate: 0.05,
            seed: 1,
            ..Default::default()
        }
    }

    #[test]
    fn validates_config() {
        let mut cfg = tiny_cfg();
        cfg.momentum = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_cfg();
        cfg.queue_size = 60;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_small_corpus_and_frozen() {
        let corpus = generate_synthetic_corpus(4, 2, 0).unwrap();
        let mut bb = build_backbone(&BackboneSpec::default()).unwrap();
        assert!(train_moco(&mut bb, &corpus, AugmentationPolicy::CropOnly, &tiny_cfg()).is_err());
        let corpus = generate_synthetic_corpus(16, 2, 0).unwrap();
        bb.freeze();
        assert!(train_moco(&mut bb, &corpus, AugmentationPolicy::CropOnly, &tiny_cfg()).is_err());
    }

    #[test]
    fn momentum_law_exact() {
        // the merge law on a toy pair of backbones, checked on one tensor
        let spec = BackboneSpec { stage_channels: vec![4, 4, 4, 4, 4], ..Default::default() };
        let q = build_backbone(&BackboneSpec { seed: 1, ..spec.clone() }).unwrap();
        let mut k = build_backbone(&BackboneSpec { seed: 2, ..spec }).unwrap();
        let kt = k.export_tensors();
        let qt = q.export_tensors();
        k.momentum_merge(&q, 0.999);
        let merged = k.export_tensors();
        for ((a, b), c) in kt.iter().zip(&qt).zip(&merged) {
            for ((&x, &y), &z) in a.data.iter().zip(&b.data).zip(&c.data) {
                let expect = 0.999 * x + 0.001 * y;
                assert!((z - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn loss_decreases_on_tiny_run() {
        let corpus = generate_synthetic_corpus(64, 4, 3).unwrap();
        let spec = BackboneSpec { stage_channels: vec![8, 8, 8, 16, 16], seed: 5, ..Default::default() };
        let mut bb = build_backbone(&spec).unwrap();
        let cfg = ContrastiveConfig { epochs: 4, ..tiny_cfg() };
        let report = train_moco(&mut bb, &corpus, AugmentationPolicy::CropOnly, &cfg).unwrap();
        assert_eq!(report.epoch_losses.len(), 4);
        assert!(
            report.epoch_losses.last().unwrap() < report.epoch_losses.first().unwrap(),
            "losses: {:?}",
            report.epoch_losses
        );
        assert_eq!(bb.objective, Some(PretrainObjective::Contrastive));
    }
}
