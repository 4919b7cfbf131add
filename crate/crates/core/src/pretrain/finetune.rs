//! Compression-block fine-tuning on the original pretraining objective.
//!
//! Only the attached compress/expand residual blocks train; the pretrained
//! stages are forwarded in eval mode and never receive gradients. Besides the
//! original objective on the pooled compressed features, the expand block
//! carries an auxiliary reconstruction loss toward the raw tap map, so the
//! routed downstream path stays close to the pretrained features.

use std::collections::BTreeMap;

use ndarray::Array4;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, Layer, PretrainObjective};
use crate::frame::frames_to_batch;
use crate::nn::{clip_grad_norm, Linear, Optimizer, Sgd};
use crate::pretrain::augment::{augment_one, AugmentationPolicy};
use crate::pretrain::contrastive::{
    contrastive_loss_batch, normalize_rows, normalize_rows_backward, EmbeddingQueue,
};
use crate::pretrain::corpus::ImageCorpus;
use crate::pretrain::supervised::softmax_xent;
use crate::{derive_seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f32,
    pub queue_size: usize,
    pub momentum: f32,
    pub temperature: f32,
    /// Weight of the auxiliary reconstruction term.
    pub recon_weight: f32,
    pub aug: AugmentationPolicy,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            epochs: 4,
            learning_rate: 0.01,
            queue_size: 512,
            momentum: 0.99,
            temperature: 0.07,
            recon_weight: 1.0,
            aug: AugmentationPolicy::CropOnly,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinetuneReport {
    /// Mean objective loss per epoch (InfoNCE or cross-entropy), averaged
    /// over attached layers.
    pub objective_epoch_losses: Vec<f64>,
    pub recon_epoch_losses: Vec<f64>,
}

/// Fine-tunes the attached compression blocks on `objective`, which must
/// match the backbone's original pretraining objective.
pub fn finetune_compression(
    backbone: &mut Backbone,
    corpus: &ImageCorpus,
    objective: PretrainObjective,
    cfg: &FinetuneConfig,
) -> Result<FinetuneReport> {
    if backbone.frozen {
        return Err(Error::FrozenViolation("fine-tuning a frozen backbone".into()));
    }
    if backbone.objective != Some(objective) {
        return Err(Error::InvalidConfig(format!(
            "objective {objective:?} does not match the backbone's pretraining ({:?})",
            backbone.objective
        )));
    }
    let layers: Vec<Layer> = Layer::ALL.into_iter().filter(|&l| backbone.has_compression(l)).collect();
    if layers.is_empty() {
        return Err(Error::InvalidConfig("no compression blocks attached".into()));
    }
    if corpus.len() < cfg.batch_size {
        return Err(Error::InvalidConfig("corpus smaller than batch size".into()));
    }
    if objective == PretrainObjective::Supervised && corpus.labels.is_none() {
        return Err(Error::InvalidInput("supervised fine-tuning needs a labeled corpus".into()));
    }
    let stage_checksum_before = backbone.stage_checksum();

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "finetune"));
    let dim = backbone.spec.stage_channels[4];
    let mut key_encoder = backbone.clone();
    let mut queues: BTreeMap<Layer, EmbeddingQueue> = layers
        .iter()
        .map(|&l| (l, EmbeddingQueue::new(&mut rng, cfg.queue_size, dim)))
        .collect();
    let mut heads: BTreeMap<Layer, Linear> = match objective {
        PretrainObjective::Supervised => {
            let classes = corpus.num_classes().unwrap();
            layers.iter().map(|&l| (l, Linear::new(&mut rng, dim, classes))).collect()
        }
        PretrainObjective::Contrastive => BTreeMap::new(),
    };
    let mut opt = Sgd::new(cfg.learning_rate, 0.9);

    let mut indices: Vec<usize> = (0..corpus.len()).collect();

    // warm-fill each queue with real key embeddings (contrastive only)
    if objective == PretrainObjective::Contrastive {
        let mut pushed = 0usize;
        'fill: loop {
            indices.shuffle(&mut rng);
            for chunk in indices.chunks_exact(cfg.batch_size) {
                let views: Vec<crate::ImageFrame> = chunk
                    .iter()
                    .map(|&i| augment_one(&corpus.frames[i], cfg.aug, &mut rng))
                    .collect();
                let x = frames_to_batch(&views.iter().collect::<Vec<_>>());
                for &layer in &layers {
                    let (k, _) = normalize_rows(&key_encoder.embed_batch(&x, layer)?);
                    queues.get_mut(&layer).unwrap().push_batch(&k);
                }
                pushed += chunk.len();
                if pushed >= cfg.queue_size {
                    break 'fill;
                }
            }
        }
    }

    let mut objective_epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut recon_epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        let mut obj_total = 0.0f64;
        let mut rec_total = 0.0f64;
        let mut batches = 0usize;
        for chunk in indices.chunks_exact(cfg.batch_size) {
            let mut va = Vec::with_capacity(chunk.len());
            let mut vb = Vec::with_capacity(chunk.len());
            for &i in chunk {
                va.push(augment_one(&corpus.frames[i], cfg.aug, &mut rng));
                vb.push(augment_one(&corpus.frames[i], cfg.aug, &mut rng));
            }
            let xa = frames_to_batch(&va.iter().collect::<Vec<_>>());
            let xb = frames_to_batch(&vb.iter().collect::<Vec<_>>());
            let taps = backbone.compression_forward_train(&xa)?;

            for p in backbone.compression_params_mut() {
                p.zero_grad();
            }
            for h in heads.values_mut() {
                for p in h.params_mut() {
                    p.zero_grad();
                }
            }

            let mut grads: Vec<(Layer, ndarray::Array2<f32>, Array4<f32>)> = Vec::new();
            let mut key_pushes: Vec<(Layer, ndarray::Array2<f32>)> = Vec::new();
            for tap in &taps {
                // reconstruction toward the raw tap, gradient on the expand path
                let numel = tap.expanded.len() as f32;
                let diff = &tap.expanded - &tap.tap;
                let recon = diff.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / numel as f64;
                let d_expanded = diff.mapv(|v| 2.0 * v / numel * cfg.recon_weight);
                rec_total += recon;

                let d_pooled = match objective {
                    PretrainObjective::Contrastive => {
                        let k_raw = key_encoder.embed_batch(&xb, tap.layer)?;
                        let (k, _) = normalize_rows(&k_raw);
                        let (q, q_norms) = normalize_rows(&tap.compressed_pooled);
                        let queue = queues.get(&tap.layer).unwrap();
                        let (loss, dq) =
                            contrastive_loss_batch(&q, &k, queue.as_matrix(), cfg.temperature)?;
                        obj_total += loss;
                        key_pushes.push((tap.layer, k));
                        normalize_rows_backward(&q, &q_norms, &dq)
                    }
                    PretrainObjective::Supervised => {
                        let labels: Vec<u32> = chunk
                            .iter()
                            .map(|&i| corpus.labels.as_ref().unwrap()[i])
                            .collect();
                        let head = heads.get_mut(&tap.layer).unwrap();
                        let logits = head.forward(&tap.compressed_pooled, true);
                        let (loss, dl) = softmax_xent(&logits, &labels);
                        obj_total += loss;
                        head.backward(&dl)
                    }
                };
                grads.push((tap.layer, d_pooled, d_expanded));
            }
            backbone.compression_backward(&grads)?;

            let mut params = backbone.compression_params_mut();
            for h in heads.values_mut() {
                params.extend(h.params_mut());
            }
            clip_grad_norm(&mut params, 10.0);
            opt.step(&mut params);

            key_encoder.momentum_merge(backbone, cfg.momentum);
            for (layer, k) in key_pushes {
                queues.get_mut(&layer).unwrap().push_batch(&k);
            }
            batches += 1;
        }
        let denom = (batches * layers.len()).max(1) as f64;
        objective_epoch_losses.push(obj_total / denom);
        recon_epoch_losses.push(rec_total / denom);
    }

    debug_assert_eq!(backbone.stage_checksum(), stage_checksum_before);
    Ok(FinetuneReport { objective_epoch_losses, recon_epoch_losses })
}
